//! Training objectives. Regression tasks use MAE, classification uses BCE.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("loss over an empty batch")]
    Empty,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    /// Mean absolute error on scaled targets.
    Mae,
    /// Binary cross-entropy, evaluated from logits.
    Bce,
}

impl Loss {
    /// Per-example loss and its derivative with respect to the head output
    /// (the raw prediction for MAE, the logit for BCE).
    pub fn value_and_grad(self, output: f64, target: f64) -> (f64, f64) {
        match self {
            Loss::Mae => {
                let diff = output - target;
                let g = if diff > 0.0 {
                    1.0
                } else if diff < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                (diff.abs(), g)
            }
            Loss::Bce => {
                // softplus(z) - t*z == -[t log σ(z) + (1-t) log(1-σ(z))]
                let softplus = if output > 0.0 {
                    output + (-output).exp().ln_1p()
                } else {
                    output.exp().ln_1p()
                };
                (softplus - target * output, sigmoid(output) - target)
            }
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check(a: usize, b: usize) -> Result<(), LossError> {
    if a != b {
        return Err(LossError::LengthMismatch(a, b));
    }
    if a == 0 {
        return Err(LossError::Empty);
    }
    Ok(())
}

/// mean |pred - target|
pub fn mae_loss(pred: &[f64], target: &[f64]) -> Result<f64, LossError> {
    check(pred.len(), target.len())?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// -mean[t log p + (1-t) log(1-p)] over probabilities.
pub fn bce_loss(prob: &[f64], target: &[f64]) -> Result<f64, LossError> {
    check(prob.len(), target.len())?;
    let s: f64 = prob
        .iter()
        .zip(target)
        .map(|(&p, &t)| -(t * p.ln() + (1.0 - t) * (1.0 - p).ln()))
        .sum();
    Ok(s / prob.len() as f64)
}

/// BCE computed from logits; stable for large |z|.
pub fn bce_with_logits(logits: &[f64], target: &[f64]) -> Result<f64, LossError> {
    check(logits.len(), target.len())?;
    let s: f64 = logits.iter().zip(target).map(|(&z, &t)| Loss::Bce.value_and_grad(z, t).0).sum();
    Ok(s / logits.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mae_examples() {
        assert_eq!(mae_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae_loss(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(mae_loss(&[], &[]), Err(LossError::Empty));
    }

    #[test]
    fn mae_matches_elementwise_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p: Vec<f64> = (0..100).map(|_| rng.random_range(-5.0..5.0)).collect();
        let t: Vec<f64> = (0..100).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut acc = 0.0;
        for i in 0..100 {
            acc += if p[i] > t[i] { p[i] - t[i] } else { t[i] - p[i] };
        }
        assert!((mae_loss(&p, &t).unwrap() - acc / 100.0).abs() <= 1e-12);
    }

    #[test]
    fn bce_examples() {
        let l = bce_loss(&[0.5, 0.5, 0.5], &[1.0, 0.0, 1.0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let near = bce_loss(&[1.0 - 1e-9, 1e-9], &[1.0, 0.0]).unwrap();
        assert!(near <= 1e-8 + 1e-15);
        assert_eq!(bce_loss(&[], &[]), Err(LossError::Empty));
    }

    #[test]
    fn bce_matches_bruteforce_and_logit_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z: Vec<f64> = (0..50).map(|_| rng.random_range(-6.0..6.0)).collect();
        let t: Vec<f64> = (0..50).map(|_| rng.random_range(0..2) as f64).collect();
        let p: Vec<f64> = z.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
        let mut acc = 0.0;
        for i in 0..50 {
            acc -= if t[i] == 1.0 { p[i].ln() } else { (1.0 - p[i]).ln() };
        }
        let brute = acc / 50.0;
        assert!((bce_loss(&p, &t).unwrap() - brute).abs() <= 1e-10);
        assert!((bce_with_logits(&z, &t).unwrap() - brute).abs() <= 1e-10);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for loss in [Loss::Mae, Loss::Bce] {
            for (z, t) in [(0.7, 0.0), (-1.3, 1.0), (2.5, 1.0)] {
                let h = 1e-6;
                let num = (loss.value_and_grad(z + h, t).0 - loss.value_and_grad(z - h, t).0) / (2.0 * h);
                assert!((num - loss.value_and_grad(z, t).1).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn sigmoid_stays_in_open_interval() {
        for z in [-700.0, -30.0, 0.0, 30.0] {
            let s = sigmoid(z);
            assert!(s > 0.0 && s < 1.0, "{z} -> {s}");
        }
        assert_eq!(sigmoid(0.0), 0.5);
    }
}
