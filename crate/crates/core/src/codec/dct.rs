//! Orthonormal DCT-II and its inverse (DCT-III) by direct summation.
//! Horizons are short (a handful of steps), so the O(n²) form is fine.

use std::f64::consts::PI;

/// Basis matrix `B[f][n] = s(f)·cos(π(n+½)f/N)` with `s(0)=√(1/N)`,
/// `s(f)=√(2/N)` otherwise. Rows are orthonormal.
pub fn basis(n: usize) -> Vec<Vec<f64>> {
    let nf = n as f64;
    (0..n)
        .map(|f| {
            let s = if f == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
            (0..n)
                .map(|t| s * (PI * (t as f64 + 0.5) * f as f64 / nf).cos())
                .collect()
        })
        .collect()
}

pub fn forward(signal: &[f64], basis: &[Vec<f64>]) -> Vec<f64> {
    basis
        .iter()
        .map(|row| row.iter().zip(signal).map(|(b, x)| b * x).sum())
        .collect()
}

pub fn inverse(coeffs: &[f64], basis: &[Vec<f64>]) -> Vec<f64> {
    let n = coeffs.len();
    (0..n)
        .map(|t| (0..n).map(|f| basis[f][t] * coeffs[f]).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_is_orthonormal() {
        for n in [1, 2, 5, 8] {
            let b = basis(n);
            for i in 0..n {
                for j in 0..n {
                    let dot: f64 = (0..n).map(|t| b[i][t] * b[j][t]).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-12, "n={n} i={i} j={j}");
                }
            }
        }
    }

    #[test]
    fn constant_signal_has_only_dc() {
        let b = basis(8);
        let c = forward(&[0.3; 8], &b);
        assert!((c[0] - 0.3 * 8f64.sqrt()).abs() < 1e-12);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn inverse_recovers_signal() {
        let b = basis(8);
        let x: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin()).collect();
        let y = inverse(&forward(&x, &b), &b);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
