//! Circular convolution through the FFT.

use std::rc::Rc;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::Tensor;
use crate::error::{Error, Result};

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    len: usize,
}

impl Plans {
    fn new(len: usize) -> Plans {
        let mut planner = FftPlanner::new();
        Plans {
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
            len,
        }
    }

    fn spectrum(&self, x: &[f64]) -> Vec<Complex<f64>> {
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        buf
    }

    /// Real part of the normalised inverse transform of `a · b` (or `a · conj(b)`).
    fn product_inverse(&self, a: &[Complex<f64>], b: &[Complex<f64>], conjugate_b: bool) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = a
            .iter()
            .zip(b)
            .map(|(x, y)| if conjugate_b { x * y.conj() } else { x * y })
            .collect();
        self.inverse.process(&mut buf);
        let scale = 1.0 / self.len as f64;
        buf.iter().map(|c| c.re * scale).collect()
    }
}

fn rows_of(t: &Tensor, op: &str) -> Result<(usize, usize)> {
    match *t.shape() {
        [d] => Ok((1, d)),
        [r, d] => Ok((r, d)),
        ref s => Err(Error::shape(op, format!("expected [d] or [rows, d], got {s:?}"))),
    }
}

/// Circular convolution `out[k] = Σ_i a[i]·b[(k − i) mod d]` computed as
/// `IFFT(FFT(a)·FFT(b))`, row by row.
///
/// `a` is `[d]` or `[rows, d]`; `b` is either the same shape or a single row
/// broadcast against every row of `a`. Differentiable in both arguments.
pub fn rfft_circular_conv(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ra, da) = rows_of(a, "rfft_circular_conv")?;
    let (rb, db) = rows_of(b, "rfft_circular_conv")?;
    if da != db || !(rb == ra || rb == 1) {
        return Err(Error::shape(
            "rfft_circular_conv",
            format!("operands {:?} and {:?} have mismatched lengths", a.shape(), b.shape()),
        ));
    }
    let d = da;
    let plans = Rc::new(Plans::new(d));
    let fa: Rc<Vec<Vec<Complex<f64>>>> =
        Rc::new(a.data().chunks(d).map(|r| plans.spectrum(r)).collect());
    let fb: Rc<Vec<Vec<Complex<f64>>>> =
        Rc::new(b.data().chunks(d).map(|r| plans.spectrum(r)).collect());
    let mut out = Vec::with_capacity(ra * d);
    for (i, sa) in fa.iter().enumerate() {
        let sb = &fb[if rb == 1 { 0 } else { i }];
        out.extend(plans.product_inverse(sa, sb, false));
    }
    let need_a = a.requires_grad();
    let need_b = b.requires_grad();
    Ok(Tensor::from_op(a.shape().to_vec(), out, vec![a.clone(), b.clone()], move |g| {
        let fg: Vec<Vec<Complex<f64>>> = g.chunks(d).map(|r| plans.spectrum(r)).collect();
        // d/da is the circular cross-correlation of g with b, and vice versa.
        let ga = need_a.then(|| {
            let mut ga = Vec::with_capacity(ra * d);
            for (i, sg) in fg.iter().enumerate() {
                let sb = &fb[if rb == 1 { 0 } else { i }];
                ga.extend(plans.product_inverse(sg, sb, true));
            }
            ga
        });
        let gb = need_b.then(|| {
            let mut gb = vec![0.0; rb * d];
            for (i, sg) in fg.iter().enumerate() {
                let row = plans.product_inverse(sg, &fa[i], true);
                let dst = if rb == 1 { &mut gb[..] } else { &mut gb[i * d..(i + 1) * d] };
                for (x, y) in dst.iter_mut().zip(row) {
                    *x += y;
                }
            }
            gb
        });
        vec![ga, gb]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn direct(a: &[f64], b: &[f64]) -> Vec<f64> {
        let d = a.len();
        (0..d)
            .map(|k| (0..d).map(|i| a[i] * b[(k + d - i) % d]).sum())
            .collect()
    }

    #[test]
    fn delta_is_identity() {
        let mut delta = vec![0.0; 7];
        delta[0] = 1.0;
        let b: Vec<f64> = (0..7).map(|i| i as f64 * 0.3 - 1.0).collect();
        let out = rfft_circular_conv(
            &Tensor::from_vec(&[7], delta).unwrap(),
            &Tensor::from_vec(&[7], b.clone()).unwrap(),
        )
        .unwrap();
        for (x, y) in out.data().iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let a: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let out = rfft_circular_conv(
                &Tensor::from_vec(&[16], a.clone()).unwrap(),
                &Tensor::from_vec(&[16], b.clone()).unwrap(),
            )
            .unwrap();
            for (x, y) in out.data().iter().zip(direct(&a, &b)) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn linear_in_first_argument() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..12).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let (a1, a2, b) = (v(&mut rng), v(&mut rng), v(&mut rng));
        let t = |x: &Vec<f64>| Tensor::from_vec(&[12], x.clone()).unwrap();
        let sum: Vec<f64> = a1.iter().zip(&a2).map(|(x, y)| x + y).collect();
        let lhs = rfft_circular_conv(&t(&sum), &t(&b)).unwrap();
        let r1 = rfft_circular_conv(&t(&a1), &t(&b)).unwrap();
        let r2 = rfft_circular_conv(&t(&a2), &t(&b)).unwrap();
        for i in 0..12 {
            assert!((lhs.data()[i] - r1.data()[i] - r2.data()[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn broadcast_row_and_length_mismatch() {
        let a = Tensor::from_vec(&[2, 4], vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let b = Tensor::from_vec(&[1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = rfft_circular_conv(&a, &b).unwrap();
        let want = [1.0, 2.0, 3.0, 4.0, 4.0, 1.0, 2.0, 3.0];
        for (x, y) in out.data().iter().zip(want) {
            assert!((x - y).abs() < 1e-12);
        }
        let c = Tensor::zeros(&[5]);
        assert!(rfft_circular_conv(&Tensor::zeros(&[4]), &c).is_err());
    }
}
