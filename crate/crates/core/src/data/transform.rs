use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Centred square crop of side `min(h, w)`, then bilinear resize to
/// `out_side × out_side`. Accepts `[c, h, w]`.
pub fn central_crop_resize(img: &Tensor, out_side: usize) -> Result<Tensor> {
    let [c, h, w] = *img.shape() else {
        return Err(Error::shape("central_crop_resize", format!("expected [c, h, w], got {:?}", img.shape())));
    };
    if out_side == 0 {
        return Err(Error::shape("central_crop_resize", "output side must be positive"));
    }
    let side = h.min(w);
    let (top, left) = ((h - side) / 2, (w - side) / 2);
    let data = img.data();
    let mut crop = Vec::with_capacity(c * side * side);
    for ch in 0..c {
        for i in top..top + side {
            let row = ch * h * w + i * w;
            crop.extend_from_slice(&data[row + left..row + left + side]);
        }
    }
    let crop = Tensor::from_vec(&[1, c, side, side], crop)?;
    let out = if side == out_side { crop } else { crop.resize_bilinear(out_side, out_side)? };
    Ok(out.detach().reshape(&[c, out_side, out_side])?.detach())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_input_at_target_is_unchanged() {
        let data: Vec<f64> = (0..2 * 6 * 6).map(|i| i as f64).collect();
        let img = Tensor::from_vec(&[2, 6, 6], data.clone()).unwrap();
        assert_eq!(central_crop_resize(&img, 6).unwrap().to_vec(), data);
    }

    #[test]
    fn crop_box_is_centred() {
        // 3 rows by 5 columns: the crop keeps columns 1..4.
        let data: Vec<f64> = (0..15).map(|i| (i % 5) as f64).collect();
        let img = Tensor::from_vec(&[1, 3, 5], data).unwrap();
        let out = central_crop_resize(&img, 3).unwrap();
        assert_eq!(out.to_vec(), vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let wide = Tensor::zeros(&[3, 200, 300]);
        assert_eq!(central_crop_resize(&wide, 256).unwrap().shape(), &[3, 256, 256]);
    }
}
