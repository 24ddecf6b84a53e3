//! Central finite-difference gradient checking.

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(1, |analytic|)` over all checked entries.
    pub max_rel_error: f64,
    pub entries: usize,
}

impl GradCheckReport {
    pub fn merge(&mut self, other: &GradCheckReport) {
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.entries += other.entries;
    }
}

impl Default for GradCheckReport {
    fn default() -> Self {
        GradCheckReport { max_rel_error: 0.0, entries: 0 }
    }
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` against central
/// differences with the given `step`, for every element of every input.
pub fn check_gradients<F>(inputs: &[Tensor], step: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let leaves: Vec<Tensor> = inputs.iter().map(|t| t.requires_grad_leaf()).collect();
    let loss = f(&leaves)?;
    if loss.numel() != 1 {
        return Err(Error::Numeric("gradient check needs a scalar function".into()));
    }
    loss.backward()?;

    let mut report = GradCheckReport::default();
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        for j in 0..leaf.numel() {
            let eval = |delta: f64| -> Result<f64> {
                let perturbed: Vec<Tensor> = inputs
                    .iter()
                    .enumerate()
                    .map(|(k, t)| {
                        if k == i {
                            let mut v = t.to_vec();
                            v[j] += delta;
                            Tensor::from_vec(t.shape(), v)
                        } else {
                            Ok(t.detach())
                        }
                    })
                    .collect::<Result<_>>()?;
                Ok(f(&perturbed)?.item())
            };
            let numeric = (eval(step)? - eval(-step)?) / (2.0 * step);
            let err = (analytic[j] - numeric).abs() / analytic[j].abs().max(1.0);
            if !err.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient at input {i}, entry {j}")));
            }
            report.max_rel_error = report.max_rel_error.max(err);
            report.entries += 1;
        }
    }
    Ok(report)
}

/// `Σ t ⊙ weights`, a scalar probe for checking non-scalar ops.
pub fn project(t: &Tensor, weights: &Tensor) -> Result<Tensor> {
    Ok(t.mul(weights)?.sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catches_correct_and_wrong_gradients() {
        let x = Tensor::from_vec(&[3], vec![0.3, -0.7, 1.2]).unwrap();
        let ok = check_gradients(&[x.clone()], 1e-5, |v| Ok(v[0].mul(&v[0])?.sum())).unwrap();
        assert!(ok.max_rel_error < 1e-8);
        assert_eq!(ok.entries, 3);
        // detach hides half of the true derivative, so the check must flag it
        let bad = check_gradients(&[x], 1e-5, |v| Ok(v[0].mul(&v[0].detach())?.sum())).unwrap();
        assert!(bad.max_rel_error > 0.1);
    }
}
