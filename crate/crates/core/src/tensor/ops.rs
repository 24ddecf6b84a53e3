//! Elementwise, reduction and layout operations.

use std::fmt;
use std::rc::Rc;

use super::Tensor;
use crate::error::{Error, Result};

/// Pointwise nonlinearities used by every network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Relu,
    Tanh,
    Sigmoid,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::LeakyRelu(s) => write!(f, "leaky_relu({s})"),
            Activation::Relu => f.write_str("relu"),
            Activation::Tanh => f.write_str("tanh"),
            Activation::Sigmoid => f.write_str("sigmoid"),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("operands have shapes {:?} and {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

impl Tensor {
    fn unary(&self, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64 + 'static) -> Tensor {
        let x = self.data_rc();
        let out = x.iter().map(|&v| f(v)).collect();
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], move |g| {
            vec![Some(g.iter().zip(x.iter()).map(|(g, &v)| g * df(v)).collect())]
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("add", self, other)?;
        let out = self.data().iter().zip(other.data()).map(|(a, b)| a + b).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), other.clone()],
            |g| vec![Some(g.to_vec()), Some(g.to_vec())],
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("sub", self, other)?;
        let out = self.data().iter().zip(other.data()).map(|(a, b)| a - b).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), other.clone()],
            |g| vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())],
        ))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("mul", self, other)?;
        let a = self.data_rc();
        let b = other.data_rc();
        let out = a.iter().zip(b.iter()).map(|(x, y)| x * y).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), other.clone()],
            move |g| {
                vec![
                    Some(g.iter().zip(b.iter()).map(|(g, y)| g * y).collect()),
                    Some(g.iter().zip(a.iter()).map(|(g, x)| g * x).collect()),
                ]
            },
        ))
    }

    /// Scales every element by a one-element tensor.
    pub fn mul_scalar_tensor(&self, s: &Tensor) -> Result<Tensor> {
        if s.numel() != 1 {
            return Err(Error::shape("mul_scalar_tensor", "scale must have one element"));
        }
        let x = self.data_rc();
        let sv = s.item();
        let out = x.iter().map(|v| v * sv).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), s.clone()],
            move |g| {
                let dx = g.iter().map(|g| g * sv).collect();
                let ds = g.iter().zip(x.iter()).map(|(g, v)| g * v).sum();
                vec![Some(dx), Some(vec![ds])]
            },
        ))
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary(|v| v + c, |_| 1.0)
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        self.unary(|v| v * c, move |_| c)
    }

    pub fn neg(&self) -> Tensor {
        self.mul_scalar(-1.0)
    }

    pub fn abs(&self) -> Tensor {
        self.unary(f64::abs, |v| {
            if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    /// Natural log of `max(x, eps)`; the clamped region has zero gradient.
    pub fn log_clamped(&self, eps: f64) -> Tensor {
        self.unary(
            move |v| v.max(eps).ln(),
            move |v| if v > eps { 1.0 / v } else { 0.0 },
        )
    }

    /// `sign(x) * (sqrt(|x| + eps) - sqrt(eps))`, a signed square root that
    /// stays differentiable at zero.
    pub fn signed_sqrt(&self, eps: f64) -> Tensor {
        let root_eps = eps.sqrt();
        self.unary(
            move |v| v.signum() * ((v.abs() + eps).sqrt() - root_eps),
            move |v| 0.5 / (v.abs() + eps).sqrt(),
        )
    }

    pub fn activation(&self, kind: Activation) -> Tensor {
        match kind {
            Activation::LeakyRelu(slope) => self.unary(
                move |v| if v > 0.0 { v } else { slope * v },
                move |v| if v > 0.0 { 1.0 } else { slope },
            ),
            Activation::Relu => {
                self.unary(|v| v.max(0.0), |v| if v > 0.0 { 1.0 } else { 0.0 })
            }
            Activation::Tanh => self.unary(f64::tanh, |v| {
                let t = v.tanh();
                1.0 - t * t
            }),
            Activation::Sigmoid => self.unary(sigmoid, |v| {
                let s = sigmoid(v);
                s * (1.0 - s)
            }),
        }
    }

    pub fn sum(&self) -> Tensor {
        let n = self.numel();
        let total = self.data().iter().sum();
        Tensor::from_op(vec![1], vec![total], vec![self.clone()], move |g| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        let total: f64 = self.data().iter().sum();
        Tensor::from_op(vec![1], vec![total / n as f64], vec![self.clone()], move |g| {
            vec![Some(vec![g[0] / n as f64; n])]
        })
    }

    /// Mean absolute difference, the L1 distance used by every reconstruction loss.
    pub fn mean_abs_diff(&self, other: &Tensor) -> Result<Tensor> {
        Ok(self.sub(other)?.abs().mean())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.numel() || shape.contains(&0) {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape()),
            ));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            |g| vec![Some(g.to_vec())],
        ))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(tensors: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = tensors
            .first()
            .ok_or_else(|| Error::shape("concat", "no tensors to concatenate"))?;
        let rank = first.ndim();
        if axis >= rank {
            return Err(Error::shape("concat", format!("axis {axis} out of range for rank {rank}")));
        }
        for t in tensors {
            let ok = t.ndim() == rank
                && (0..rank).all(|d| d == axis || t.shape()[d] == first.shape()[d]);
            if !ok {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} incompatible with {:?} along axis {axis}", t.shape(), first.shape()),
                ));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let widths: Vec<usize> = tensors.iter().map(|t| t.shape()[axis] * inner).collect();
        let total_width: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * total_width);
        for o in 0..outer {
            for (t, &w) in tensors.iter().zip(&widths) {
                out.extend_from_slice(&t.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = tensors.iter().map(|t| t.shape()[axis]).sum();
        Ok(Tensor::from_op(shape, out, tensors.to_vec(), move |g| {
            let mut grads: Vec<Vec<f64>> = widths.iter().map(|w| Vec::with_capacity(outer * w)).collect();
            let mut offset = 0;
            for _ in 0..outer {
                for (gi, &w) in grads.iter_mut().zip(&widths) {
                    gi.extend_from_slice(&g[offset..offset + w]);
                    offset += w;
                }
            }
            grads.into_iter().map(Some).collect()
        }))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(tensors: &[Tensor]) -> Result<Tensor> {
        let expanded = tensors
            .iter()
            .map(|t| {
                let mut shape = vec![1];
                shape.extend_from_slice(t.shape());
                t.reshape(&shape)
            })
            .collect::<Result<Vec<_>>>()?;
        Tensor::concat(&expanded, 0)
    }

    /// Rows `start..end` of the leading axis.
    pub fn slice_batch(&self, start: usize, end: usize) -> Result<Tensor> {
        let n = self.shape()[0];
        if start >= end || end > n {
            return Err(Error::shape("slice_batch", format!("range {start}..{end} outside 0..{n}")));
        }
        let stride = self.numel() / n;
        let out = self.data()[start * stride..end * stride].to_vec();
        let mut shape = self.shape().to_vec();
        shape[0] = end - start;
        let total = self.numel();
        Ok(Tensor::from_op(shape, out, vec![self.clone()], move |g| {
            let mut full = vec![0.0; total];
            full[start * stride..end * stride].copy_from_slice(g);
            vec![Some(full)]
        }))
    }

    /// `[a, b, c] -> [a, c, b]`.
    pub fn swap_last_two(&self) -> Result<Tensor> {
        if self.ndim() != 3 {
            return Err(Error::shape("swap_last_two", format!("expected rank 3, got {:?}", self.shape())));
        }
        let (a, b, c) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let out = transpose_batched(self.data(), a, b, c);
        Ok(Tensor::from_op(vec![a, c, b], out, vec![self.clone()], move |g| {
            vec![Some(transpose_batched(g, a, c, b))]
        }))
    }

    /// Broadcasts `[n, a]` vectors over an `h × w` grid, giving `[n, a, h, w]`.
    pub fn tile_spatial(&self, h: usize, w: usize) -> Result<Tensor> {
        if self.ndim() != 2 {
            return Err(Error::shape("tile_spatial", format!("expected [n, a], got {:?}", self.shape())));
        }
        let (n, a) = (self.shape()[0], self.shape()[1]);
        let hw = h * w;
        let mut out = Vec::with_capacity(n * a * hw);
        for &v in self.data() {
            out.extend(std::iter::repeat_n(v, hw));
        }
        Ok(Tensor::from_op(vec![n, a, h, w], out, vec![self.clone()], move |g| {
            vec![Some(g.chunks(hw).map(|c| c.iter().sum()).collect())]
        }))
    }

    /// 2×2 area average over `[n, c, h, w]` with even `h` and `w`.
    pub fn avg_pool2(&self) -> Result<Tensor> {
        let (n, c, h, w) = dims4("avg_pool2", self)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape("avg_pool2", format!("odd spatial size {h}x{w}")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let x = self.data();
        let mut out = vec![0.0; n * c * oh * ow];
        for plane in 0..n * c {
            let src = &x[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
            for i in 0..oh {
                for j in 0..ow {
                    let r0 = 2 * i * w + 2 * j;
                    let r1 = r0 + w;
                    dst[i * ow + j] = 0.25 * (src[r0] + src[r0 + 1] + src[r1] + src[r1 + 1]);
                }
            }
        }
        Ok(Tensor::from_op(vec![n, c, oh, ow], out, vec![self.clone()], move |g| {
            let mut dx = vec![0.0; n * c * h * w];
            for plane in 0..n * c {
                let gs = &g[plane * oh * ow..(plane + 1) * oh * ow];
                let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
                for i in 0..oh {
                    for j in 0..ow {
                        let v = 0.25 * gs[i * ow + j];
                        let r0 = 2 * i * w + 2 * j;
                        dst[r0] = v;
                        dst[r0 + 1] = v;
                        dst[r0 + w] = v;
                        dst[r0 + w + 1] = v;
                    }
                }
            }
            vec![Some(dx)]
        }))
    }

    /// Bilinear resampling of `[n, c, h, w]` using half-pixel centres
    /// (the `align_corners = false` convention).
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Result<Tensor> {
        let (n, c, h, w) = dims4("resize_bilinear", self)?;
        if out_h == 0 || out_w == 0 {
            return Err(Error::shape("resize_bilinear", "output size must be positive"));
        }
        let rows = Rc::new(interp_weights(h, out_h));
        let cols = Rc::new(interp_weights(w, out_w));
        let x = self.data();
        let mut out = vec![0.0; n * c * out_h * out_w];
        for plane in 0..n * c {
            let src = &x[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * out_h * out_w..(plane + 1) * out_h * out_w];
            for (i, &(r0, r1, fr)) in rows.iter().enumerate() {
                for (j, &(c0, c1, fc)) in cols.iter().enumerate() {
                    let top = src[r0 * w + c0] * (1.0 - fc) + src[r0 * w + c1] * fc;
                    let bot = src[r1 * w + c0] * (1.0 - fc) + src[r1 * w + c1] * fc;
                    dst[i * out_w + j] = top * (1.0 - fr) + bot * fr;
                }
            }
        }
        Ok(Tensor::from_op(vec![n, c, out_h, out_w], out, vec![self.clone()], move |g| {
            let mut dx = vec![0.0; n * c * h * w];
            for plane in 0..n * c {
                let gs = &g[plane * out_h * out_w..(plane + 1) * out_h * out_w];
                let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
                for (i, &(r0, r1, fr)) in rows.iter().enumerate() {
                    for (j, &(c0, c1, fc)) in cols.iter().enumerate() {
                        let v = gs[i * out_w + j];
                        dst[r0 * w + c0] += v * (1.0 - fr) * (1.0 - fc);
                        dst[r0 * w + c1] += v * (1.0 - fr) * fc;
                        dst[r1 * w + c0] += v * fr * (1.0 - fc);
                        dst[r1 * w + c1] += v * fr * fc;
                    }
                }
            }
            vec![Some(dx)]
        }))
    }

    /// `[n, c, h, w] -> [n, c, 1, 1]` spatial mean.
    pub fn global_avg_pool(&self) -> Result<Tensor> {
        let (n, c, h, w) = dims4("global_avg_pool", self)?;
        let hw = h * w;
        let out = self
            .data()
            .chunks(hw)
            .map(|p| p.iter().sum::<f64>() / hw as f64)
            .collect();
        Ok(Tensor::from_op(vec![n, c, 1, 1], out, vec![self.clone()], move |g| {
            let mut dx = Vec::with_capacity(n * c * hw);
            for &v in g {
                dx.extend(std::iter::repeat_n(v / hw as f64, hw));
            }
            vec![Some(dx)]
        }))
    }

    /// Scales each row of `[rows, d]` to unit L2 norm. Rows whose norm is
    /// below `1e-12` pass through unchanged.
    pub fn l2_normalize_rows(&self) -> Result<Tensor> {
        if self.ndim() != 2 {
            return Err(Error::shape("l2_normalize_rows", format!("expected rank 2, got {:?}", self.shape())));
        }
        let d = self.shape()[1];
        let x = self.data_rc();
        let norms: Rc<Vec<f64>> = Rc::new(
            x.chunks(d)
                .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
                .collect(),
        );
        let mut out = Vec::with_capacity(x.len());
        for (row, &nrm) in x.chunks(d).zip(norms.iter()) {
            if nrm < 1e-12 {
                out.extend_from_slice(row);
            } else {
                out.extend(row.iter().map(|v| v / nrm));
            }
        }
        Ok(Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], move |g| {
            let mut dx = Vec::with_capacity(g.len());
            for ((row, gr), &nrm) in x.chunks(d).zip(g.chunks(d)).zip(norms.iter()) {
                if nrm < 1e-12 {
                    dx.extend_from_slice(gr);
                } else {
                    let dot: f64 = row.iter().zip(gr).map(|(a, b)| a * b).sum();
                    let n3 = nrm * nrm * nrm;
                    dx.extend(row.iter().zip(gr).map(|(x, g)| g / nrm - x * dot / n3));
                }
            }
            vec![Some(dx)]
        }))
    }

    /// Mean binary cross-entropy of probabilities against `{0,1}` targets,
    /// with predictions clamped to `[eps, 1 - eps]`.
    pub fn binary_cross_entropy(&self, target: &Tensor, eps: f64) -> Result<Tensor> {
        same_shape("binary_cross_entropy", self, target)?;
        let p = self.data_rc();
        let t = target.data_rc();
        let n = p.len() as f64;
        let total: f64 = p
            .iter()
            .zip(t.iter())
            .map(|(&p, &t)| bce_term(p, t, eps))
            .sum();
        Ok(Tensor::from_op(vec![1], vec![total / n], vec![self.clone()], move |g| {
            let dp = p
                .iter()
                .zip(t.iter())
                .map(|(&p, &t)| {
                    if p <= eps || p >= 1.0 - eps {
                        0.0
                    } else {
                        g[0] * (-t / p + (1.0 - t) / (1.0 - p)) / n
                    }
                })
                .collect();
            vec![Some(dp)]
        }))
    }

    /// Mean softmax cross-entropy of `[n, k]` logits against class indices.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Tensor> {
        if self.ndim() != 2 || self.shape()[0] != labels.len() {
            return Err(Error::shape(
                "cross_entropy",
                format!("logits {:?} vs {} labels", self.shape(), labels.len()),
            ));
        }
        let k = self.shape()[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::shape("cross_entropy", format!("label {bad} outside {k} classes")));
        }
        let n = labels.len();
        let mut probs = Vec::with_capacity(n * k);
        let mut total = 0.0;
        for (row, &label) in self.data().chunks(k).zip(labels) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            total += z.ln() + m - row[label];
            probs.extend(row.iter().map(|v| (v - m).exp() / z));
        }
        let labels = labels.to_vec();
        Ok(Tensor::from_op(vec![1], vec![total / n as f64], vec![self.clone()], move |g| {
            let mut d = probs.clone();
            for (i, &l) in labels.iter().enumerate() {
                d[i * k + l] -= 1.0;
            }
            let scale = g[0] / n as f64;
            d.iter_mut().for_each(|v| *v *= scale);
            vec![Some(d)]
        }))
    }
}

/// One BCE term with the prediction clamped to `[eps, 1 - eps]`.
pub(crate) fn bce_term(p: f64, t: f64, eps: f64) -> f64 {
    let p = p.clamp(eps, 1.0 - eps);
    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
}

pub(crate) fn dims4(op: &str, t: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match t.shape() {
        &[n, c, h, w] => Ok((n, c, h, w)),
        s => Err(Error::shape(op, format!("expected NCHW tensor, got {s:?}"))),
    }
}

fn transpose_batched(x: &[f64], a: usize, b: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 0..a {
        let src = &x[i * b * c..(i + 1) * b * c];
        let dst = &mut out[i * b * c..(i + 1) * b * c];
        for j in 0..b {
            for k in 0..c {
                dst[k * b + j] = src[j * c + k];
            }
        }
    }
    out
}

/// Source index pairs and blend fractions for half-pixel bilinear sampling.
fn interp_weights(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let frac = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            (i0, i1, frac)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: Vec<f64>) -> Tensor {
        Tensor::from_vec(shape, v).unwrap()
    }

    #[test]
    fn leaky_relu_uses_configured_slope() {
        let x = t(&[3], vec![-1.0, 0.0, 2.0]);
        let y = x.activation(Activation::LeakyRelu(0.02));
        assert_eq!(y.data(), &[-0.02, 0.0, 2.0]);
        let r = t(&[1], vec![-5.0]).activation(Activation::Relu);
        assert_eq!(r.data(), &[0.0]);
    }

    #[test]
    fn tanh_gradient_at_zero_is_one() {
        let x = Tensor::parameter(&[1], vec![0.0]).unwrap();
        x.activation(Activation::Tanh).sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0]);
    }

    #[test]
    fn squashing_ranges() {
        let x = t(&[5], vec![-50.0, -1.0, 0.0, 1.0, 50.0]);
        assert!(x.activation(Activation::Tanh).data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let s = x.activation(Activation::Sigmoid);
        assert!(s.data()[1..4].iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(s.data()[2], 0.5);
    }

    #[test]
    fn concat_splits_gradient_back() {
        let a = Tensor::parameter(&[1, 1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::parameter(&[1, 2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let c = Tensor::concat(&[a.clone(), b.clone()], 1).unwrap();
        assert_eq!(c.shape(), &[1, 3, 2]);
        assert_eq!(c.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let w = t(&[1, 3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        c.mul(&w).unwrap().sum().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0, 2.0]);
        assert_eq!(b.grad().unwrap(), vec![3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn avg_pool_preserves_mean() {
        let data: Vec<f64> = (0..64).map(|i| ((i * 37) % 11) as f64 * 0.1 - 0.4).collect();
        let x = t(&[1, 1, 8, 8], data);
        let y = x.avg_pool2().unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        assert!((x.mean().item() - y.mean().item()).abs() < 1e-12);
    }

    #[test]
    fn bilinear_identity_and_constant() {
        let data: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let x = t(&[1, 1, 4, 4], data.clone());
        assert_eq!(x.resize_bilinear(4, 4).unwrap().data(), &data[..]);
        let c = Tensor::full(&[1, 2, 3, 5], 0.25);
        assert!(c.resize_bilinear(7, 4).unwrap().data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn bce_matches_scalar_formula() {
        let p = t(&[4], vec![0.1, 0.9, 0.5, 0.3]);
        let y = t(&[4], vec![0.0, 1.0, 1.0, 0.0]);
        let got = p.binary_cross_entropy(&y, 1e-7).unwrap().item();
        let want = (-(0.9f64.ln()) - 0.9f64.ln() - 0.5f64.ln() - 0.7f64.ln()) / 4.0;
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn l2_rows_skip_zero_rows() {
        let x = t(&[2, 2], vec![3.0, 4.0, 0.0, 0.0]);
        let y = x.l2_normalize_rows().unwrap();
        assert_eq!(y.data(), &[0.6, 0.8, 0.0, 0.0]);
    }

    #[test]
    fn mismatched_shapes_error() {
        let a = Tensor::zeros(&[2]);
        let b = Tensor::zeros(&[3]);
        assert!(a.add(&b).is_err());
        assert!(a.mean_abs_diff(&b).is_err());
    }
}
