use crate::error::{Error, Result};
use crate::types::{ActionChunk, DatasetStatistics, DimStats};

/// Percentile with linear interpolation between closest ranks
/// (position `p·(n−1)` in the sorted sample).
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Per-dimension quantiles and moments over every row of every chunk.
pub fn compute_statistics<'a, I>(chunks: I, dims: usize) -> Result<DatasetStatistics>
where
    I: IntoIterator<Item = &'a ActionChunk>,
{
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); dims];
    for chunk in chunks {
        if chunk.normalized {
            return Err(Error::shape("statistics need unnormalized chunks"));
        }
        if chunk.dims != dims {
            return Err(Error::shape(format!(
                "chunk has {} dims, expected {dims}",
                chunk.dims
            )));
        }
        for row in chunk.rows() {
            for (col, v) in columns.iter_mut().zip(row) {
                col.push(*v);
            }
        }
    }
    let n = columns.first().map_or(0, Vec::len);
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let per_dim = columns
        .into_iter()
        .map(|mut col| {
            col.sort_by(|a, b| a.total_cmp(b));
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            DimStats {
                q01: percentile(&col, 0.01),
                q99: percentile(&col, 0.99),
                mean,
                std: var.sqrt(),
                min: col[0],
                max: col[n - 1],
            }
        })
        .collect();
    Ok(DatasetStatistics {
        dims,
        sample_count: n as u64,
        per_dim,
    })
}

fn check_dims(chunk: &ActionChunk, stats: &DatasetStatistics) -> Result<()> {
    if chunk.dims != stats.dims || stats.per_dim.len() != stats.dims {
        return Err(Error::shape(format!(
            "chunk has {} dims but statistics cover {}",
            chunk.dims, stats.dims
        )));
    }
    Ok(())
}

/// Quantile min-max scaling of live dimensions to `[−1, 1]` with clipping.
/// A dimension with zero spread maps to 0.
pub fn normalize(chunk: &ActionChunk, stats: &DatasetStatistics) -> Result<ActionChunk> {
    check_dims(chunk, stats)?;
    let mut out = chunk.clone();
    for r in 0..chunk.horizon {
        for (c, s) in stats.per_dim.iter().enumerate() {
            let v = if !chunk.dof_mask[c] {
                0.0
            } else if s.q99 == s.q01 {
                0.0
            } else {
                (2.0 * (chunk.get(r, c) - s.q01) / (s.q99 - s.q01) - 1.0).clamp(-1.0, 1.0)
            };
            out.set(r, c, v);
        }
    }
    out.normalized = true;
    Ok(out)
}

/// Inverse of [`normalize`] on the unclipped range.
pub fn unnormalize(chunk: &ActionChunk, stats: &DatasetStatistics) -> Result<ActionChunk> {
    check_dims(chunk, stats)?;
    let mut out = chunk.clone();
    for r in 0..chunk.horizon {
        for (c, s) in stats.per_dim.iter().enumerate() {
            let v = if !chunk.dof_mask[c] {
                0.0
            } else {
                (chunk.get(r, c) + 1.0) * 0.5 * (s.q99 - s.q01) + s.q01
            };
            out.set(r, c, v);
        }
    }
    out.normalized = false;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn column(values: &[f64]) -> ActionChunk {
        ActionChunk::from_rows(&values.iter().map(|v| vec![*v]).collect::<Vec<_>>()).unwrap()
    }

    fn stats(q01: f64, q99: f64) -> DatasetStatistics {
        DatasetStatistics {
            dims: 1,
            sample_count: 2,
            per_dim: vec![DimStats {
                q01,
                q99,
                mean: 0.5 * (q01 + q99),
                std: 0.0,
                min: q01,
                max: q99,
            }],
        }
    }

    #[test]
    fn constant_column() {
        let s = compute_statistics([&column(&[3.0; 10])], 1).unwrap();
        let d = s.per_dim[0];
        for v in [d.q01, d.q99, d.mean, d.min, d.max] {
            assert_eq!(v, 3.0);
        }
        assert_eq!(d.std, 0.0);
        assert_eq!(s.sample_count, 10);
    }

    /// Brute force: build the order statistics explicitly and interpolate
    /// between the two ranks bracketing p·(n−1).
    fn oracle_percentile(values: &[f64], p: f64) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let rank = p * (v.len() as f64 - 1.0);
        let below = (0..v.len()).filter(|i| (*i as f64) <= rank).max().unwrap();
        let above = (0..v.len()).filter(|i| (*i as f64) >= rank).min().unwrap();
        if below == above {
            v[below]
        } else {
            v[below] + (rank - below as f64) * (v[above] - v[below])
        }
    }

    #[test]
    fn one_to_hundred_percentiles() {
        let vals: Vec<f64> = (1..=100).rev().map(f64::from).collect();
        let s = compute_statistics([&column(&vals)], 1).unwrap();
        let d = s.per_dim[0];
        assert!((d.q01 - oracle_percentile(&vals, 0.01)).abs() < 1e-12);
        assert!((d.q99 - oracle_percentile(&vals, 0.99)).abs() < 1e-12);
        assert!((d.q01 - 1.99).abs() < 1e-9);
        assert!((d.q99 - 99.01).abs() < 1e-9);
        assert_eq!(d.min, 1.0);
        assert_eq!(d.max, 100.0);
        assert!((d.mean - 50.5).abs() < 1e-12);
    }

    #[test]
    fn zero_second_dimension() {
        let c = ActionChunk::from_rows(&[vec![1.0, 0.0], vec![2.0, 0.0], vec![5.0, 0.0]]).unwrap();
        let s = compute_statistics([&c], 2).unwrap();
        let d = s.per_dim[1];
        assert_eq!([d.q01, d.q99, d.mean, d.std, d.min, d.max], [0.0; 6]);
    }

    #[test]
    fn empty_stream_and_mismatch() {
        let none: Vec<&ActionChunk> = vec![];
        assert!(matches!(compute_statistics(none, 2), Err(Error::EmptyDataset)));
        let c = column(&[1.0]);
        assert!(matches!(compute_statistics([&c], 2), Err(Error::Shape(_))));
    }

    #[test]
    fn endpoints_and_midpoint() {
        let s = stats(-2.0, 6.0);
        let c = column(&[6.0, -2.0, 2.0]);
        let n = normalize(&c, &s).unwrap();
        assert_eq!(n.values, vec![1.0, -1.0, 0.0]);
        assert!(n.normalized);
    }

    #[test]
    fn degenerate_spread_maps_to_zero() {
        let n = normalize(&column(&[5.0]), &stats(5.0, 5.0)).unwrap();
        assert_eq!(n.values, vec![0.0]);
        let back = unnormalize(&n, &stats(5.0, 5.0)).unwrap();
        assert_eq!(back.values, vec![5.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let c = ActionChunk::from_rows(&[vec![0.0, 0.0]]).unwrap();
        assert!(matches!(normalize(&c, &stats(0.0, 1.0)), Err(Error::Shape(_))));
    }

    #[test]
    fn round_trip_within_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = stats(-3.5, 11.25);
        for _ in 0..10_000 {
            let v = rng.gen_range(-3.5..=11.25);
            let n = normalize(&column(&[v]), &s).unwrap();
            let back = unnormalize(&n, &s).unwrap();
            assert!((back.values[0] - v).abs() <= 1e-9);
        }
    }
}
