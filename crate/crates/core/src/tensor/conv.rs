//! 2-D cross-correlation and its transpose via im2col + GEMM.

use super::ops::dims4;
use super::{gemm, Tensor};
use crate::error::{Error, Result};

/// `floor((size + 2·padding − kernel) / stride) + 1`, or `None` when the
/// kernel does not fit.
pub fn conv_output_size(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if kernel == 0 || stride == 0 || size + 2 * padding < kernel {
        return None;
    }
    Some((size + 2 * padding - kernel) / stride + 1)
}

/// `(size − 1)·stride − 2·padding + kernel + output_padding`, or `None` when
/// the geometry is degenerate.
pub fn conv_transpose_output_size(
    size: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Option<usize> {
    if kernel == 0 || stride == 0 || output_padding >= stride {
        return None;
    }
    ((size - 1) * stride + kernel + output_padding).checked_sub(2 * padding).filter(|&s| s > 0)
}

#[derive(Clone, Copy)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Unfolds one `[c, h, w]` image into `[c·k·k, out_h·out_w]` patches.
    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let Geometry { channels, height, width, kernel, stride, padding, out_h, out_w } = *self;
        let hw = out_h * out_w;
        for c in 0..channels {
            let plane = &x[c * height * width..(c + 1) * height * width];
            for ki in 0..kernel {
                for kj in 0..kernel {
                    let row = (c * kernel + ki) * kernel + kj;
                    let dst = &mut cols[row * hw..(row + 1) * hw];
                    for oi in 0..out_h {
                        let ii = (oi * stride + ki) as isize - padding as isize;
                        let line = &mut dst[oi * out_w..(oi + 1) * out_w];
                        if ii < 0 || ii >= height as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &plane[ii as usize * width..(ii as usize + 1) * width];
                        for (oj, v) in line.iter_mut().enumerate() {
                            let jj = (oj * stride + kj) as isize - padding as isize;
                            *v = if jj < 0 || jj >= width as isize { 0.0 } else { src[jj as usize] };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of `im2col`: scatters patches back, accumulating overlaps.
    fn col2im(&self, cols: &[f64], x: &mut [f64]) {
        let Geometry { channels, height, width, kernel, stride, padding, out_h, out_w } = *self;
        let hw = out_h * out_w;
        for c in 0..channels {
            let plane = &mut x[c * height * width..(c + 1) * height * width];
            for ki in 0..kernel {
                for kj in 0..kernel {
                    let row = (c * kernel + ki) * kernel + kj;
                    let src = &cols[row * hw..(row + 1) * hw];
                    for oi in 0..out_h {
                        let ii = (oi * stride + ki) as isize - padding as isize;
                        if ii < 0 || ii >= height as isize {
                            continue;
                        }
                        let dst = &mut plane[ii as usize * width..(ii as usize + 1) * width];
                        for oj in 0..out_w {
                            let jj = (oj * stride + kj) as isize - padding as isize;
                            if jj >= 0 && jj < width as isize {
                                dst[jj as usize] += src[oi * out_w + oj];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_bias(op: &str, bias: &Tensor, channels: usize) -> Result<()> {
    if bias.shape() != [channels] {
        return Err(Error::shape(op, format!("bias shape {:?}, expected [{channels}]", bias.shape())));
    }
    Ok(())
}

fn add_bias(out: &mut [f64], bias: &[f64], plane: usize) {
    for (chunk, b) in out.chunks_mut(plane).zip(bias.iter().cycle()) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn bias_grad(g: &[f64], channels: usize, plane: usize) -> Vec<f64> {
    let mut db = vec![0.0; channels];
    for (i, chunk) in g.chunks(plane).enumerate() {
        db[i % channels] += chunk.iter().sum::<f64>();
    }
    db
}

/// Zero-padded 2-D cross-correlation (no kernel flip).
///
/// `input` is `[n, c, h, w]`, `weight` is `[out_c, c, k, k]`, `bias` is `[out_c]`.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (n, c, h, w) = dims4("conv2d", input)?;
    let (out_c, wc, k, k2) = dims4("conv2d", weight)?;
    if wc != c || k != k2 {
        return Err(Error::shape(
            "conv2d",
            format!("weight {:?} incompatible with input {:?}", weight.shape(), input.shape()),
        ));
    }
    check_bias("conv2d", bias, out_c)?;
    let (out_h, out_w) = match (conv_output_size(h, k, stride, padding), conv_output_size(w, k, stride, padding)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {k} stride {stride} padding {padding} does not fit {h}x{w}"),
            ))
        }
    };
    let geo = Geometry { channels: c, height: h, width: w, kernel: k, stride, padding, out_h, out_w };
    let (rows, hw) = (geo.col_rows(), geo.col_cols());
    let x = input.data_rc();
    let wt = weight.data_rc();
    let mut out = vec![0.0; n * out_c * hw];
    let mut cols = vec![0.0; rows * hw];
    for b in 0..n {
        geo.im2col(&x[b * c * h * w..(b + 1) * c * h * w], &mut cols);
        gemm(out_c, rows, hw, &wt, false, &cols, false, &mut out[b * out_c * hw..(b + 1) * out_c * hw], 0.0);
    }
    add_bias(&mut out, bias.data(), hw);

    let needs_input_grad = input.requires_grad();
    let needs_weight_grad = weight.requires_grad();
    let needs_bias_grad = bias.requires_grad();
    Ok(Tensor::from_op(
        vec![n, out_c, out_h, out_w],
        out,
        vec![input.clone(), weight.clone(), bias.clone()],
        move |g| {
            let mut dw = needs_weight_grad.then(|| vec![0.0; out_c * rows]);
            let mut dx = needs_input_grad.then(|| vec![0.0; n * c * h * w]);
            let mut cols = vec![0.0; rows * hw];
            let mut dcols = vec![0.0; rows * hw];
            for b in 0..n {
                let gb = &g[b * out_c * hw..(b + 1) * out_c * hw];
                if let Some(dw) = dw.as_mut() {
                    geo.im2col(&x[b * c * h * w..(b + 1) * c * h * w], &mut cols);
                    gemm(out_c, hw, rows, gb, false, &cols, true, dw, 1.0);
                }
                if let Some(dx) = dx.as_mut() {
                    gemm(rows, out_c, hw, &wt, true, gb, false, &mut dcols, 0.0);
                    geo.col2im(&dcols, &mut dx[b * c * h * w..(b + 1) * c * h * w]);
                }
            }
            let db = needs_bias_grad.then(|| bias_grad(g, out_c, hw));
            vec![dx, dw, db]
        },
    ))
}

/// Transposed convolution, the adjoint of [`conv2d`] with the same geometry.
///
/// `input` is `[n, in_c, h, w]`, `weight` is `[in_c, out_c, k, k]`, `bias` is
/// `[out_c]`. `output_padding` (< stride) extends the bottom/right edge so an
/// exact doubling is representable with `k = 3, stride = 2, padding = 1`.
pub fn conv_transpose2d(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<Tensor> {
    let (n, in_c, h, w) = dims4("conv_transpose2d", input)?;
    let (wc, out_c, k, k2) = dims4("conv_transpose2d", weight)?;
    if wc != in_c || k != k2 {
        return Err(Error::shape(
            "conv_transpose2d",
            format!("weight {:?} incompatible with input {:?}", weight.shape(), input.shape()),
        ));
    }
    check_bias("conv_transpose2d", bias, out_c)?;
    let sizes = (
        conv_transpose_output_size(h, k, stride, padding, output_padding),
        conv_transpose_output_size(w, k, stride, padding, output_padding),
    );
    let (big_h, big_w) = match sizes {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::shape(
                "conv_transpose2d",
                format!(
                    "kernel {k} stride {stride} padding {padding} output_padding {output_padding} invalid for {h}x{w}"
                ),
            ))
        }
    };
    // The matching forward convolution maps the big map back onto h×w.
    let geo = Geometry {
        channels: out_c,
        height: big_h,
        width: big_w,
        kernel: k,
        stride,
        padding,
        out_h: h,
        out_w: w,
    };
    debug_assert_eq!(conv_output_size(big_h, k, stride, padding), Some(h));
    let (rows, hw) = (geo.col_rows(), geo.col_cols());
    let big = big_h * big_w;
    let x = input.data_rc();
    let wt = weight.data_rc();
    let mut out = vec![0.0; n * out_c * big];
    let mut cols = vec![0.0; rows * hw];
    for b in 0..n {
        gemm(rows, in_c, hw, &wt, true, &x[b * in_c * hw..(b + 1) * in_c * hw], false, &mut cols, 0.0);
        geo.col2im(&cols, &mut out[b * out_c * big..(b + 1) * out_c * big]);
    }
    add_bias(&mut out, bias.data(), big);

    let needs_input_grad = input.requires_grad();
    let needs_weight_grad = weight.requires_grad();
    let needs_bias_grad = bias.requires_grad();
    Ok(Tensor::from_op(
        vec![n, out_c, big_h, big_w],
        out,
        vec![input.clone(), weight.clone(), bias.clone()],
        move |g| {
            let mut dw = needs_weight_grad.then(|| vec![0.0; in_c * rows]);
            let mut dx = needs_input_grad.then(|| vec![0.0; n * in_c * hw]);
            let mut gcols = vec![0.0; rows * hw];
            for b in 0..n {
                geo.im2col(&g[b * out_c * big..(b + 1) * out_c * big], &mut gcols);
                if let Some(dw) = dw.as_mut() {
                    let xb = &x[b * in_c * hw..(b + 1) * in_c * hw];
                    gemm(in_c, hw, rows, xb, false, &gcols, true, dw, 1.0);
                }
                if let Some(dx) = dx.as_mut() {
                    gemm(in_c, rows, hw, &wt, false, &gcols, false, &mut dx[b * in_c * hw..(b + 1) * in_c * hw], 0.0);
                }
            }
            let db = needs_bias_grad.then(|| bias_grad(g, out_c, big));
            vec![dx, dw, db]
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct sliding-window correlation, independent of im2col.
    fn naive_conv(x: &[f64], c: usize, h: usize, w: usize, wt: &[f64], oc: usize, k: usize, s: usize, p: usize) -> Vec<f64> {
        let oh = (h + 2 * p - k) / s + 1;
        let ow = (w + 2 * p - k) / s + 1;
        let mut out = vec![0.0; oc * oh * ow];
        for o in 0..oc {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for a in 0..k {
                            for b in 0..k {
                                let y = (i * s + a) as isize - p as isize;
                                let xx = (j * s + b) as isize - p as isize;
                                if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w {
                                    acc += x[(ci * h + y as usize) * w + xx as usize]
                                        * wt[((o * c + ci) * k + a) * k + b];
                                }
                            }
                        }
                    }
                    out[(o * oh + i) * ow + j] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn ramp_matches_sliding_window() {
        let x: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let k = vec![1.0, 0.0, -1.0, 2.0, 0.5, -2.0, 1.0, 0.25, -1.0];
        let input = Tensor::from_vec(&[1, 1, 4, 4], x.clone()).unwrap();
        let weight = Tensor::from_vec(&[1, 1, 3, 3], k.clone()).unwrap();
        let out = conv2d(&input, &weight, &Tensor::zeros(&[1]), 2, 1).unwrap();
        assert_eq!(out.shape(), &[1, 1, 2, 2]);
        // Frozen from the sliding-window oracle.
        let expected = [-6.0, -3.5, -29.0, 0.5];
        assert_eq!(naive_conv(&x, 1, 4, 4, &k, 1, 3, 2, 1), expected);
        for (a, b) in out.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_kernel_is_identity() {
        let data: Vec<f64> = (0..2 * 9).map(|i| (i as f64).sin()).collect();
        let x = Tensor::from_vec(&[1, 2, 3, 3], data.clone()).unwrap();
        let w = Tensor::from_vec(&[2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let y = conv2d(&x, &w, &Tensor::zeros(&[2]), 1, 0).unwrap();
        assert_eq!(y.data(), &data[..]);
    }

    #[test]
    fn table_one_first_layer_shape() {
        let x = Tensor::zeros(&[1, 3, 256, 256]);
        let w = Tensor::zeros(&[64, 3, 3, 3]);
        let y = conv2d(&x, &w, &Tensor::zeros(&[64]), 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 64, 128, 128]);
    }

    #[test]
    fn transpose_doubles_with_output_padding() {
        let x = Tensor::zeros(&[1, 4, 2, 2]);
        let w = Tensor::zeros(&[4, 4, 3, 3]);
        let b = Tensor::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = conv_transpose2d(&x, &w, &b, 2, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 4, 4, 4]);
        for (c, plane) in y.data().chunks(16).enumerate() {
            assert!(plane.iter().all(|&v| v == (c + 1) as f64));
        }
        assert_eq!(conv_transpose_output_size(2, 3, 2, 1, 1), Some(4));
        assert_eq!(conv_transpose_output_size(2, 3, 2, 1, 2), None);
    }

    #[test]
    fn transpose_matches_naive_scatter() {
        // Scatter definition: out[o, i*s+a-p, j*s+b-p] += x[c, i, j] * w[c, o, a, b].
        let (c, o, h, w, k, s, p, op) = (2, 3, 3, 2, 3, 2, 1, 1);
        let x: Vec<f64> = (0..c * h * w).map(|i| ((i * 7 % 5) as f64) - 2.0).collect();
        let wt: Vec<f64> = (0..c * o * k * k).map(|i| ((i * 3 % 7) as f64) * 0.5 - 1.0).collect();
        let big_h = (h - 1) * s + k + op - 2 * p;
        let big_w = (w - 1) * s + k + op - 2 * p;
        let mut want = vec![0.0; o * big_h * big_w];
        for ci in 0..c {
            for i in 0..h {
                for j in 0..w {
                    for oc in 0..o {
                        for a in 0..k {
                            for b in 0..k {
                                let y = (i * s + a) as isize - p as isize;
                                let xx = (j * s + b) as isize - p as isize;
                                if y >= 0 && xx >= 0 && (y as usize) < big_h && (xx as usize) < big_w {
                                    want[(oc * big_h + y as usize) * big_w + xx as usize] +=
                                        x[(ci * h + i) * w + j] * wt[((ci * o + oc) * k + a) * k + b];
                                }
                            }
                        }
                    }
                }
            }
        }
        let xt = Tensor::from_vec(&[1, c, h, w], x).unwrap();
        let wt = Tensor::from_vec(&[c, o, k, k], wt).unwrap();
        let got = conv_transpose2d(&xt, &wt, &Tensor::zeros(&[o]), s, p, op).unwrap();
        assert_eq!(got.shape(), &[1, o, big_h, big_w]);
        for (a, b) in got.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_weight_is_shape_error() {
        let x = Tensor::zeros(&[1, 3, 8, 8]);
        let w = Tensor::zeros(&[4, 2, 3, 3]);
        let err = conv2d(&x, &w, &Tensor::zeros(&[4]), 1, 1).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
        let err = err.in_layer("enc1");
        assert!(err.to_string().contains("enc1"));
    }
}
