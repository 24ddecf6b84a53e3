//! Multi-scale conditional generator and the per-scale discriminators.

mod discriminator;
mod generator;
mod pyramid;

pub use discriminator::{Discriminator, DiscriminatorConfig, DiscriminatorScores};
pub use generator::{Generator, GeneratorConfig};
pub use pyramid::ScalePyramid;

use crate::error::Result;
use crate::tensor::Tensor;

/// Real, fake and wrong image/attribute pairs for one discriminator.
#[derive(Clone, Debug)]
pub struct Triplet {
    pub real: (Tensor, Tensor),
    pub fake: (Tensor, Tensor),
    pub wrong: (Tensor, Tensor),
}

impl Triplet {
    /// Stacks the three pairs along the batch axis in the order real, fake,
    /// wrong.
    pub fn stacked(&self) -> Result<(Tensor, Tensor)> {
        let imgs = Tensor::concat(&[self.real.0.clone(), self.fake.0.clone(), self.wrong.0.clone()], 0)?;
        let attrs = Tensor::concat(&[self.real.1.clone(), self.fake.1.clone(), self.wrong.1.clone()], 0)?;
        Ok((imgs, attrs))
    }
}

/// Returns `None` when `z_wrong` equals `z` everywhere; the caller should
/// draw another wrong attribute vector.
pub fn build_triplet_batch(y: &Tensor, y_hat: &Tensor, z: &Tensor, z_wrong: &Tensor) -> Option<Triplet> {
    if z.data() == z_wrong.data() {
        return None;
    }
    Some(Triplet {
        real: (y.clone(), z.clone()),
        fake: (y_hat.clone(), z.clone()),
        wrong: (y.clone(), z_wrong.clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_attributes_rejected() {
        let y = Tensor::zeros(&[1, 3, 4, 4]);
        let z = Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap();
        assert!(build_triplet_batch(&y, &y, &z, &z).is_none());
        let w = Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap();
        let t = build_triplet_batch(&y, &y, &z, &w).unwrap();
        let (imgs, attrs) = t.stacked().unwrap();
        assert_eq!(imgs.shape(), &[3, 3, 4, 4]);
        assert_eq!(attrs.to_vec(), vec![1.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
    }
}
