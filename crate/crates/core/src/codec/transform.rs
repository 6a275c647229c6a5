use crate::error::{Error, Result};
use crate::types::{ActionChunk, EmbodimentTag, UNIFIED_ACTION_DIM};

/// Zero-extends a native-width chunk to the shared 32-dim action vector and
/// marks the copied columns live.
pub fn pad_to_unified(chunk: &ActionChunk, tag: &EmbodimentTag) -> Result<ActionChunk> {
    if chunk.dims > UNIFIED_ACTION_DIM {
        return Err(Error::shape(format!(
            "chunk has {} dims, more than {UNIFIED_ACTION_DIM}",
            chunk.dims
        )));
    }
    if chunk.dims != tag.native_dof {
        return Err(Error::shape(format!(
            "chunk has {} dims but embodiment `{}` has {}",
            chunk.dims, tag.name, tag.native_dof
        )));
    }
    let mut out = ActionChunk::zeros(chunk.horizon, UNIFIED_ACTION_DIM, chunk.normalized);
    for r in 0..chunk.horizon {
        out.values[r * UNIFIED_ACTION_DIM..r * UNIFIED_ACTION_DIM + chunk.dims]
            .copy_from_slice(chunk.row(r));
    }
    out.dof_mask = (0..UNIFIED_ACTION_DIM)
        .map(|i| i < chunk.dims && chunk.dof_mask[i])
        .collect();
    Ok(out)
}

/// Keeps the first `native_dof` columns of a unified chunk.
pub fn unpad_from_unified(chunk: &ActionChunk, native_dof: usize) -> Result<ActionChunk> {
    if native_dof == 0 || native_dof > chunk.dims {
        return Err(Error::shape(format!(
            "cannot unpad {} dims to {native_dof}",
            chunk.dims
        )));
    }
    let mut values = Vec::with_capacity(chunk.horizon * native_dof);
    for row in chunk.rows() {
        values.extend_from_slice(&row[..native_dof]);
    }
    Ok(ActionChunk {
        horizon: chunk.horizon,
        dims: native_dof,
        values,
        normalized: chunk.normalized,
        dof_mask: chunk.dof_mask[..native_dof].to_vec(),
    })
}

/// Running sum of deltas seeded at `initial_state`; gripper columns are
/// passed through unchanged.
pub fn delta_to_absolute(
    initial_state: &[f64],
    chunk: &ActionChunk,
    gripper_dims: &[usize],
) -> Result<ActionChunk> {
    if chunk.normalized {
        return Err(Error::shape("delta conversion needs an unnormalized chunk"));
    }
    if initial_state.len() != chunk.dims {
        return Err(Error::shape(format!(
            "state has {} values, chunk has {} dims",
            initial_state.len(),
            chunk.dims
        )));
    }
    if let Some(bad) = gripper_dims.iter().find(|&&g| g >= chunk.dims) {
        return Err(Error::shape(format!(
            "gripper index {bad} out of range for {} dims",
            chunk.dims
        )));
    }
    let mut out = chunk.clone();
    let mut acc = initial_state.to_vec();
    for r in 0..chunk.horizon {
        for c in 0..chunk.dims {
            if gripper_dims.contains(&c) {
                continue;
            }
            acc[c] += chunk.get(r, c);
            out.set(r, c, acc[c]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ControlMode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_chunk(rng: &mut ChaCha8Rng, k: usize, d: usize) -> ActionChunk {
        let rows: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        ActionChunk::from_rows(&rows).unwrap()
    }

    #[test]
    fn seven_dim_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = random_chunk(&mut rng, 8, 7);
        let tag = EmbodimentTag::new("arm", 7, ControlMode::Delta).unwrap();
        let p = pad_to_unified(&c, &tag).unwrap();
        assert_eq!(p.dims, 32);
        for r in 0..8 {
            assert_eq!(&p.row(r)[..7], c.row(r));
            assert!(p.row(r)[7..].iter().all(|v| *v == 0.0));
        }
        let mut mask = vec![true; 7];
        mask.extend(vec![false; 25]);
        assert_eq!(p.dof_mask, mask);
        assert_eq!(unpad_from_unified(&p, 7).unwrap(), c);
    }

    #[test]
    fn full_width_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = random_chunk(&mut rng, 3, 32);
        let tag = EmbodimentTag::new("wide", 32, ControlMode::Delta).unwrap();
        assert_eq!(pad_to_unified(&c, &tag).unwrap(), c);
    }

    #[test]
    fn pad_rejects_mismatch() {
        let c = ActionChunk::zeros(2, 5, false);
        let tag = EmbodimentTag::new("arm", 7, ControlMode::Delta).unwrap();
        assert!(pad_to_unified(&c, &tag).is_err());
    }

    #[test]
    fn zero_deltas_hold_state() {
        let c = ActionChunk::zeros(4, 3, false);
        let out = delta_to_absolute(&[1.0, -2.0, 0.5], &c, &[2]).unwrap();
        for r in 0..4 {
            assert_eq!(&out.row(r)[..2], &[1.0, -2.0]);
            assert_eq!(out.get(r, 2), 0.0);
        }
    }

    #[test]
    fn unit_deltas_accumulate() {
        let c = ActionChunk::from_rows(&[vec![1.0], vec![1.0], vec![1.0]]).unwrap();
        let out = delta_to_absolute(&[0.0], &c, &[]).unwrap();
        assert_eq!(out.values, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn random_deltas_match_prefix_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let c = random_chunk(&mut rng, 8, 7);
            let init: Vec<f64> = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let out = delta_to_absolute(&init, &c, &[6]).unwrap();
            for d in 0..7 {
                for r in 0..8 {
                    let expected = if d == 6 {
                        c.get(r, d)
                    } else {
                        init[d] + (0..=r).map(|s| c.get(s, d)).sum::<f64>()
                    };
                    assert!((out.get(r, d) - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gripper_index_out_of_range() {
        let c = ActionChunk::zeros(1, 3, false);
        assert!(matches!(
            delta_to_absolute(&[0.0; 3], &c, &[3]),
            Err(Error::Shape(_))
        ));
    }
}
