//! Spectral normalization by power iteration.

use std::rc::Rc;

use super::Tensor;
use crate::error::{Error, Result};

/// Smallest singular-value estimate used as a divisor.
pub const SIGMA_EPS: f64 = 1e-12;

pub struct SpectralNormOutput {
    /// `weight / σ̂`, differentiable in `weight`.
    pub weight: Tensor,
    /// Advanced left singular vector estimate (unit norm).
    pub u: Vec<f64>,
    pub sigma: f64,
}

fn matrix_dims(weight: &Tensor) -> (usize, usize) {
    let rows = weight.shape()[0];
    (rows, weight.numel() / rows)
}

fn normalized(v: Vec<f64>) -> Option<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > SIGMA_EPS).then(|| v.into_iter().map(|x| x / n).collect())
}

/// `Wᵀu` for a row-major `rows × cols` matrix.
fn mat_t_vec(w: &[f64], rows: usize, cols: usize, u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (r, &ur) in u.iter().enumerate().take(rows) {
        for (o, &x) in out.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
            *o += ur * x;
        }
    }
    out
}

fn mat_vec(w: &[f64], cols: usize, v: &[f64]) -> Vec<f64> {
    w.chunks(cols).map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

/// Divides `weight` (viewed as `[shape[0], rest]`) by its largest singular
/// value, estimated with one power-iteration step starting from `u`.
///
/// The singular vectors are treated as constants for differentiation, so
/// `d(W/σ)/dW` uses `dσ/dW = u vᵀ`. A zero matrix clamps σ̂ to
/// [`SIGMA_EPS`] and logs a warning.
pub fn spectral_normalize(weight: &Tensor, u: &[f64]) -> Result<SpectralNormOutput> {
    let (rows, cols) = matrix_dims(weight);
    if u.len() != rows {
        return Err(Error::shape(
            "spectral_normalize",
            format!("state vector has length {}, weight has {rows} rows", u.len()),
        ));
    }
    let w = weight.data();
    let v = normalized(mat_t_vec(w, rows, cols, u));
    let u_next = v.as_ref().and_then(|v| normalized(mat_vec(w, cols, v)));
    match (u_next, v) {
        (Some(u_next), Some(v)) => {
            let (weight, sigma) = spectral_normalize_fixed(weight, &u_next, &v)?;
            Ok(SpectralNormOutput { weight, u: u_next, sigma })
        }
        _ => {
            log::warn!("spectral_normalize: weight matrix is numerically zero; clamping sigma to {SIGMA_EPS}");
            let weight = weight.mul_scalar(1.0 / SIGMA_EPS);
            Ok(SpectralNormOutput { weight, u: u.to_vec(), sigma: SIGMA_EPS })
        }
    }
}

fn sigma_of(w: &[f64], cols: usize, u: &[f64], v: &[f64]) -> f64 {
    mat_vec(w, cols, v).iter().zip(u).map(|(a, b)| a * b).sum()
}

/// `W / (uᵀ W v)` with fixed vectors `u`, `v`. Returns the normalized weight
/// and the divisor actually used.
pub fn spectral_normalize_fixed(weight: &Tensor, u: &[f64], v: &[f64]) -> Result<(Tensor, f64)> {
    let (rows, cols) = matrix_dims(weight);
    if u.len() != rows || v.len() != cols {
        return Err(Error::shape(
            "spectral_normalize",
            format!("vectors of length {}/{} for a {rows}x{cols} matrix", u.len(), v.len()),
        ));
    }
    let w = weight.data_rc();
    let raw = sigma_of(&w, cols, u, v);
    let clamped = raw.abs() < SIGMA_EPS;
    if clamped {
        log::warn!("spectral_normalize: sigma estimate {raw:e} clamped to {SIGMA_EPS}");
    }
    let sigma = if clamped { SIGMA_EPS } else { raw };
    let out = w.iter().map(|x| x / sigma).collect();
    let uv: Rc<(Vec<f64>, Vec<f64>)> = Rc::new((u.to_vec(), v.to_vec()));
    let t = Tensor::from_op(weight.shape().to_vec(), out, vec![weight.clone()], move |g| {
        let mut dw: Vec<f64> = g.iter().map(|g| g / sigma).collect();
        if !clamped {
            let gw: f64 = g.iter().zip(w.iter()).map(|(a, b)| a * b).sum();
            let coeff = gw / (sigma * sigma);
            let (u, v) = &*uv;
            for (r, &ur) in u.iter().enumerate() {
                for (d, &vc) in dw[r * cols..(r + 1) * cols].iter_mut().zip(v) {
                    *d -= coeff * ur * vc;
                }
            }
        }
        vec![Some(dw)]
    });
    Ok((t, sigma))
}

/// Power-iteration estimate of the largest singular value after `iters`
/// steps from `u`. Returns the estimate and the final left vector.
pub fn largest_singular_value(weight: &Tensor, u: &[f64], iters: usize) -> Result<(f64, Vec<f64>)> {
    let mut u = u.to_vec();
    let mut sigma = 0.0;
    for _ in 0..iters.max(1) {
        let out = spectral_normalize(weight, &u)?;
        u = out.u;
        sigma = out.sigma;
    }
    Ok((sigma, u))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(n: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
        normalized(v).unwrap()
    }

    #[test]
    fn diagonal_converges_to_largest_entry() {
        let w = Tensor::from_vec(&[2, 2], vec![3.0, 0.0, 0.0, 1.0]).unwrap();
        let (sigma, _) = largest_singular_value(&w, &unit(2), 20).unwrap();
        assert!((sigma - 3.0).abs() < 1e-4, "sigma {sigma}");
    }

    #[test]
    fn identity_is_unchanged() {
        let eye = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let w = Tensor::from_vec(&[3, 3], eye.clone()).unwrap();
        let out = spectral_normalize(&w, &unit(3)).unwrap();
        for (a, b) in out.weight.data().iter().zip(&eye) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((out.u.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_matrix_clamps() {
        let w = Tensor::zeros(&[2, 3]);
        let out = spectral_normalize(&w, &unit(2)).unwrap();
        assert_eq!(out.sigma, SIGMA_EPS);
        assert!(out.weight.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_state_length_is_error() {
        let w = Tensor::zeros(&[2, 3]);
        assert!(spectral_normalize(&w, &unit(3)).is_err());
    }
}
