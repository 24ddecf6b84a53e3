use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Images `[n, 3, r, r]` ordered from coarsest to finest, each twice the
/// side length of the one before.
#[derive(Clone, Debug)]
pub struct ScalePyramid {
    images: Vec<Tensor>,
}

impl ScalePyramid {
    pub fn new(images: Vec<Tensor>) -> Result<ScalePyramid> {
        if images.is_empty() {
            return Err(Error::shape("pyramid", "no scales"));
        }
        let lead = images[0].shape().first().copied().unwrap_or(0);
        for (i, t) in images.iter().enumerate() {
            let [n, c, h, w] = *t.shape() else {
                return Err(Error::shape("pyramid", format!("scale {i} has shape {:?}", t.shape())));
            };
            if n != lead || c != 3 || h != w {
                return Err(Error::shape("pyramid", format!("scale {i} has shape {:?}", t.shape())));
            }
            if i > 0 && h != 2 * images[i - 1].shape()[2] {
                return Err(Error::shape("pyramid", format!("scale {i} does not double scale {}", i - 1)));
            }
        }
        Ok(ScalePyramid { images })
    }

    /// Targets by repeated 2×2 area averaging of the finest image.
    pub fn from_finest(finest: &Tensor, num_scales: usize) -> Result<ScalePyramid> {
        let mut images = vec![finest.clone()];
        for _ in 1..num_scales {
            let next = images.last().expect("non-empty").avg_pool2()?;
            images.push(next);
        }
        images.reverse();
        ScalePyramid::new(images)
    }

    pub fn images(&self) -> &[Tensor] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn finest(&self) -> &Tensor {
        self.images.last().expect("pyramid is never empty")
    }

    pub fn resolutions(&self) -> Vec<usize> {
        self.images.iter().map(|t| t.shape()[2]).collect()
    }

    pub fn detach(&self) -> ScalePyramid {
        ScalePyramid { images: self.images.iter().map(Tensor::detach).collect() }
    }

    /// Keeps only the `count` finest scales.
    pub fn finest_scales(&self, count: usize) -> ScalePyramid {
        let skip = self.images.len().saturating_sub(count.max(1));
        ScalePyramid { images: self.images[skip..].to_vec() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn area_pyramid_preserves_mean() {
        let data: Vec<f64> = (0..3 * 16 * 16).map(|i| ((i * 37) % 101) as f64 / 50.0 - 1.0).collect();
        let y = Tensor::from_vec(&[1, 3, 16, 16], data).unwrap();
        let p = ScalePyramid::from_finest(&y, 3).unwrap();
        assert_eq!(p.resolutions(), vec![4, 8, 16]);
        let mean = |t: &Tensor| t.data().iter().sum::<f64>() / t.numel() as f64;
        for t in p.images() {
            assert!((mean(t) - mean(&y)).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_doubling() {
        let a = Tensor::zeros(&[1, 3, 4, 4]);
        let b = Tensor::zeros(&[1, 3, 12, 12]);
        assert!(ScalePyramid::new(vec![a, b]).is_err());
    }
}
