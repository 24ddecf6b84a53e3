use crate::error::{Error, Result};
use crate::nn::{ConvBlock, LayerSpec, ParamStore, Pass};
use crate::seed::rng_for;
use crate::tensor::{Activation, Tensor};

use super::{fit, FitConfig, FitHistory};

pub const ATTRIBUTE_NAMES: [&str; 10] = [
    "Arched_Eyebrows",
    "Big_Lips",
    "Big_Nose",
    "Bushy_Eyebrows",
    "Male",
    "Mustache",
    "Narrow_Eyes",
    "No_Beard",
    "Mouth_Slightly_Open",
    "Young",
];

/// Score above which an attribute counts as present.
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct AttributeConfig {
    /// Native input side length.
    pub resolution: usize,
    pub in_channels: usize,
    pub channels: Vec<usize>,
    pub attribute_dim: usize,
}

impl Default for AttributeConfig {
    fn default() -> Self {
        AttributeConfig { resolution: 32, in_channels: 3, channels: vec![16, 32, 32], attribute_dim: 10 }
    }
}

/// Strided conv trunk whose last layer covers the whole remaining map and
/// emits one sigmoid score per attribute.
#[derive(Clone)]
pub struct AttributePredictor {
    pub config: AttributeConfig,
    trunk: Vec<ConvBlock>,
    head: ConvBlock,
}

impl AttributePredictor {
    pub fn new(config: AttributeConfig) -> Result<AttributePredictor> {
        let side = config.resolution >> config.channels.len();
        if config.channels.is_empty() || side == 0 || !config.resolution.is_multiple_of(1 << config.channels.len()) {
            return Err(Error::Config(format!(
                "attribute predictor: {} stride-2 layers do not fit a {} input",
                config.channels.len(),
                config.resolution
            )));
        }
        let mut trunk = Vec::new();
        let mut in_c = config.in_channels;
        for (k, &c) in config.channels.iter().enumerate() {
            trunk.push(ConvBlock::conv(format!("q.conv{k}"), in_c, c, 3, 2).with_activation(Activation::LeakyRelu(0.02)));
            in_c = c;
        }
        let head = ConvBlock {
            padding: 0,
            ..ConvBlock::conv("q.head", in_c, config.attribute_dim, side, 1)
        }
        .with_activation(Activation::Sigmoid);
        Ok(AttributePredictor { config, trunk, head })
    }

    pub fn names(&self) -> &'static [&'static str] {
        &ATTRIBUTE_NAMES[..self.config.attribute_dim.min(ATTRIBUTE_NAMES.len())]
    }

    pub fn init(&self, seed: u64) -> Result<ParamStore> {
        let mut rng = rng_for(seed, "attributes.init");
        let mut store = ParamStore::new();
        for b in self.trunk.iter().chain([&self.head]) {
            b.init(&mut store, &mut rng)?;
        }
        Ok(store)
    }

    /// Bilinearly resizes images of another side length to the native input.
    pub fn prepare(&self, img: &Tensor) -> Result<Tensor> {
        let r = self.config.resolution;
        match *img.shape() {
            [_, _, h, w] if h == r && w == r => Ok(img.clone()),
            [_, _, _, _] => img.resize_bilinear(r, r),
            _ => Err(Error::shape("attributes", format!("expected [n, c, h, w], got {:?}", img.shape()))),
        }
    }

    /// Scores `[n, attribute_dim]` in `[0, 1]`.
    pub fn forward(&self, img: &Tensor, store: &ParamStore, pass: &mut Pass) -> Result<Tensor> {
        let mut h = self.prepare(img)?;
        for b in &self.trunk {
            h = b.forward(&h, store, pass)?;
        }
        let n = h.shape()[0];
        self.head.forward(&h, store, pass)?.reshape(&[n, self.config.attribute_dim])
    }

    /// Scores with parameters held constant.
    pub fn predict(&self, img: &Tensor, store: &ParamStore) -> Result<Tensor> {
        self.forward(img, store, &mut Pass::frozen())
    }

    pub fn layers(&self) -> Result<Vec<LayerSpec>> {
        let r = self.config.resolution;
        let mut shape = [self.config.in_channels, r, r];
        let mut out = Vec::new();
        for b in self.trunk.iter().chain([&self.head]) {
            out.extend(b.specs(shape)?);
            shape = b.output_shape(shape)?;
        }
        Ok(out)
    }

    fn mean_bce(&self, store: &ParamStore, images: &[Tensor], labels: &[Vec<f64>], idx: &[usize], pass: &mut Pass) -> Result<Tensor> {
        let batch = Tensor::stack(&idx.iter().map(|&i| images[i].clone()).collect::<Vec<_>>())?;
        let target: Vec<f64> = idx.iter().flat_map(|&i| labels[i].iter().copied()).collect();
        let target = Tensor::from_vec(&[idx.len(), self.config.attribute_dim], target)?;
        self.forward(&batch, store, pass)?.binary_cross_entropy(&target, crate::losses::LOG_EPS)
    }
}

fn check_labels(labels: &[Vec<f64>], images: usize, dim: usize) -> Result<()> {
    if images == 0 {
        return Err(Error::Data("attribute dataset is empty".into()));
    }
    if labels.len() != images {
        return Err(Error::Data(format!("{images} images but {} label rows", labels.len())));
    }
    for row in labels {
        if row.len() != dim || row.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Data(format!("attribute labels must be {dim} values in {{0, 1}}")));
        }
    }
    Ok(())
}

/// Mean BCE training with per-epoch validation; keeps the parameters of the
/// epoch with the lowest validation loss.
pub fn finetune_predictor(
    q: &AttributePredictor,
    store: &mut ParamStore,
    train: (&[Tensor], &[Vec<f64>]),
    val: (&[Tensor], &[Vec<f64>]),
    cfg: &FitConfig,
) -> Result<FitHistory> {
    let dim = q.config.attribute_dim;
    check_labels(train.1, train.0.len(), dim)?;
    check_labels(val.1, val.0.len(), dim)?;
    let all: Vec<usize> = (0..val.0.len()).collect();
    let validate = |s: &ParamStore| -> Result<f64> {
        let mut total = 0.0;
        for idx in all.chunks(64) {
            total += q.mean_bce(s, val.0, val.1, idx, &mut Pass::frozen())?.item() * idx.len() as f64;
        }
        Ok(total / all.len() as f64)
    };
    fit(store, train.0.len(), Some(&validate), cfg, |s, idx, pass| {
        q.mean_bce(s, train.0, train.1, idx, pass)
    })
}

/// Fraction of attribute decisions (score > 0.5) that match the labels.
pub fn binary_accuracy(q: &AttributePredictor, store: &ParamStore, images: &[Tensor], labels: &[Vec<f64>]) -> Result<f64> {
    check_labels(labels, images.len(), q.config.attribute_dim)?;
    let mut correct = 0usize;
    let mut total = 0usize;
    for (imgs, rows) in images.chunks(64).zip(labels.chunks(64)) {
        let scores = q.predict(&Tensor::stack(imgs)?, store)?;
        for (s, t) in scores.data().iter().zip(rows.iter().flatten()) {
            correct += usize::from((*s > DECISION_THRESHOLD) == (*t == 1.0));
            total += 1;
        }
    }
    Ok(correct as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outputs_are_named_probabilities() {
        let q = AttributePredictor::new(AttributeConfig::default()).unwrap();
        let store = q.init(0).unwrap();
        let out = q.predict(&Tensor::full(&[2, 3, 16, 16], 0.4), &store).unwrap();
        assert_eq!(out.shape(), &[2, 10]);
        assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(q.names()[8], "Mouth_Slightly_Open");
        assert_eq!(q.names()[9], "Young");
    }

    #[test]
    fn constant_labels_converge_to_constant_output() {
        let cfg = AttributeConfig { resolution: 8, channels: vec![4], attribute_dim: 2, ..Default::default() };
        let q = AttributePredictor::new(cfg).unwrap();
        let mut store = q.init(0).unwrap();
        let images: Vec<Tensor> = (0..6).map(|i| Tensor::full(&[3, 8, 8], i as f64 / 6.0 - 0.5)).collect();
        let labels = vec![vec![1.0, 0.0]; 6];
        let fit_cfg = FitConfig { epochs: 60, batch_size: 6, lr: 5e-2, seed: 0 };
        let h = finetune_predictor(&q, &mut store, (&images, &labels), (&images, &labels), &fit_cfg).unwrap();
        assert!(h.val[h.best_epoch] <= h.val.iter().cloned().fold(f64::INFINITY, f64::min));
        assert!(h.val[h.best_epoch] < 0.05, "{:?}", h.val);
        assert_eq!(binary_accuracy(&q, &store, &images, &labels).unwrap(), 1.0);
    }

    #[test]
    fn empty_dataset_is_error() {
        let q = AttributePredictor::new(AttributeConfig::default()).unwrap();
        let mut store = q.init(0).unwrap();
        let err = finetune_predictor(&q, &mut store, (&[], &[]), (&[], &[]), &FitConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }
}
