use crate::error::{Error, Result};

/// Target side of a loss evaluation.
#[derive(Debug, Clone, Copy)]
pub enum LossTarget<'a> {
    /// Mean absolute error against a target vector.
    L1(&'a [f64]),
    /// Mean squared error against a target vector.
    Mse(&'a [f64]),
    /// Softmax cross-entropy of logits against a class index.
    CrossEntropy(usize),
    /// Mean squared error between a predicted velocity and `x1 − x0`.
    FlowMatching {
        x0: &'a [f64],
        x1: &'a [f64],
        tau: f64,
    },
}

/// Linear interpolant `x_τ = (1−τ)·x0 + τ·x1`.
pub fn flow_interpolant(x0: &[f64], x1: &[f64], tau: f64) -> Result<Vec<f64>> {
    check_tau(tau)?;
    Ok(x0
        .iter()
        .zip(x1)
        .map(|(a, b)| (1.0 - tau) * a + tau * b)
        .collect())
}

fn check_tau(tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Domain(format!("flow time {tau} outside [0, 1]")));
    }
    Ok(())
}

fn check_len(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::shape(format!(
            "prediction has {} values, target {}",
            pred.len(),
            target.len()
        )));
    }
    Ok(())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Scalar loss and its gradient with respect to `pred`.
pub fn loss_and_grad(pred: &[f64], target: LossTarget<'_>) -> Result<(f64, Vec<f64>)> {
    match target {
        LossTarget::L1(t) => {
            check_len(pred, t)?;
            let n = pred.len() as f64;
            let mut loss = 0.0;
            let grad = pred
                .iter()
                .zip(t)
                .map(|(p, t)| {
                    let d = p - t;
                    loss += d.abs();
                    if d > 0.0 {
                        1.0 / n
                    } else if d < 0.0 {
                        -1.0 / n
                    } else {
                        0.0
                    }
                })
                .collect();
            Ok((loss / n, grad))
        }
        LossTarget::Mse(t) => mse(pred, t),
        LossTarget::CrossEntropy(class) => {
            if class >= pred.len() {
                return Err(Error::shape(format!(
                    "class {class} outside {} logits",
                    pred.len()
                )));
            }
            let mut p = softmax(pred);
            let loss = -p[class].max(f64::MIN_POSITIVE).ln();
            p[class] -= 1.0;
            Ok((loss, p))
        }
        LossTarget::FlowMatching { x0, x1, tau } => {
            check_tau(tau)?;
            check_len(x0, x1)?;
            let v: Vec<f64> = x1.iter().zip(x0).map(|(b, a)| b - a).collect();
            mse(pred, &v)
        }
    }
}

fn mse(pred: &[f64], t: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_len(pred, t)?;
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(t)
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l1_at_target_is_zero() {
        let t = [0.5, -1.0, 2.0];
        let (l, g) = loss_and_grad(&t, LossTarget::L1(&t)).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn degenerate_flow_path() {
        let x = [0.3, -0.2];
        let pred = [0.1, 0.4];
        let (l, _) = loss_and_grad(
            &pred,
            LossTarget::FlowMatching {
                x0: &x,
                x1: &x,
                tau: 0.4,
            },
        )
        .unwrap();
        assert!((l - (0.01 + 0.16) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_logits_give_ln_v() {
        for v in [2usize, 7, 64] {
            let (l, g) = loss_and_grad(&vec![0.3; v], LossTarget::CrossEntropy(1)).unwrap();
            assert!((l - (v as f64).ln()).abs() < 1e-12);
            assert!((g.iter().sum::<f64>()).abs() < 1e-12);
        }
    }

    #[test]
    fn single_class_has_zero_loss() {
        let (l, g) = loss_and_grad(&[4.2], LossTarget::CrossEntropy(0)).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g, vec![0.0]);
    }

    #[test]
    fn tau_outside_unit_interval() {
        let x = [0.0];
        for tau in [-0.1, 1.5] {
            assert!(matches!(
                loss_and_grad(&x, LossTarget::FlowMatching { x0: &x, x1: &x, tau }),
                Err(Error::Domain(_))
            ));
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        let eps = 1e-6;
        let pred = [0.3, -1.2, 0.7, 2.0];
        let t = [0.1, 0.5, -0.4, 1.0];
        let x0 = [0.2, 0.2, -0.9, 0.0];
        let cases: Vec<LossTarget> = vec![
            LossTarget::L1(&t),
            LossTarget::Mse(&t),
            LossTarget::CrossEntropy(2),
            LossTarget::FlowMatching {
                x0: &x0,
                x1: &t,
                tau: 0.3,
            },
        ];
        for case in cases {
            let (_, g) = loss_and_grad(&pred, case).unwrap();
            for i in 0..pred.len() {
                let mut p = pred;
                p[i] += eps;
                let mut m = pred;
                m[i] -= eps;
                let fd = (loss_and_grad(&p, case).unwrap().0 - loss_and_grad(&m, case).unwrap().0)
                    / (2.0 * eps);
                let rel = (fd - g[i]).abs() / (fd.abs() + g[i].abs()).max(1e-6);
                assert!(rel < 1e-4, "{case:?} index {i}: {fd} vs {}", g[i]);
            }
        }
    }
}
