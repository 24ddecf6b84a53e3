use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{ConvBlock, LayerSpec, ParamStore, Pass};
use crate::seed::rng_for;
use crate::tensor::{Activation, Tensor};

use super::{fit, FitConfig, FitHistory};

/// Named feature taps of [`FeatureNetwork`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tap {
    /// Full-resolution first-layer activations (perceptual term).
    Shallow,
    /// Half-resolution second-stage activations (identity term).
    Deep,
}

impl FromStr for Tap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Tap> {
        match s {
            "shallow" => Ok(Tap::Shallow),
            "deep" => Ok(Tap::Deep),
            other => Err(Error::Config(format!("unknown feature tap {other:?}; expected shallow or deep"))),
        }
    }
}

impl fmt::Display for Tap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tap::Shallow => "shallow",
            Tap::Deep => "deep",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureConfig {
    pub in_channels: usize,
    pub shallow_channels: usize,
    pub deep_channels: usize,
    /// Identity classes of the pretraining head.
    pub num_classes: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { in_channels: 3, shallow_channels: 16, deep_channels: 32, num_classes: 2 }
    }
}

/// Small fully convolutional feature extractor with a classification head
/// used only for pretraining.
#[derive(Clone)]
pub struct FeatureNetwork {
    pub config: FeatureConfig,
    shallow: ConvBlock,
    down: ConvBlock,
    deep: ConvBlock,
    head: ConvBlock,
}

pub struct TapFeatures {
    pub shallow: Tensor,
    pub deep: Tensor,
}

impl FeatureNetwork {
    pub fn new(config: FeatureConfig) -> Result<FeatureNetwork> {
        let FeatureConfig { in_channels, shallow_channels: s, deep_channels: d, num_classes } = config;
        if in_channels == 0 || s == 0 || d == 0 || num_classes < 2 {
            return Err(Error::Config("feature network needs positive widths and >= 2 classes".into()));
        }
        Ok(FeatureNetwork {
            shallow: ConvBlock::conv("f.conv1", in_channels, s, 3, 1).with_activation(Activation::Relu),
            down: ConvBlock::conv("f.conv2", s, d, 3, 2).with_activation(Activation::Relu),
            deep: ConvBlock::conv("f.conv3", d, d, 3, 1).with_activation(Activation::Relu),
            head: ConvBlock::conv("f.classifier", d, num_classes, 1, 1),
            config,
        })
    }

    pub fn init(&self, seed: u64) -> Result<ParamStore> {
        let mut rng = rng_for(seed, "features.init");
        let mut store = ParamStore::new();
        for b in [&self.shallow, &self.down, &self.deep, &self.head] {
            b.init(&mut store, &mut rng)?;
        }
        Ok(store)
    }

    fn check(&self, img: &Tensor) -> Result<()> {
        match *img.shape() {
            [_, c, h, w] if c == self.config.in_channels && h >= 2 && h % 2 == 0 && w % 2 == 0 => Ok(()),
            _ => Err(Error::shape(
                "features",
                format!(
                    "expected [n, {}, h, w] with even h, w >= 2, got {:?}",
                    self.config.in_channels,
                    img.shape()
                ),
            )),
        }
    }

    pub fn taps(&self, img: &Tensor, store: &ParamStore, pass: &mut Pass) -> Result<TapFeatures> {
        self.check(img)?;
        let shallow = self.shallow.forward(img, store, pass)?;
        let d = self.down.forward(&shallow, store, pass)?;
        let deep = self.deep.forward(&d, store, pass)?;
        Ok(TapFeatures { shallow, deep })
    }

    /// Features at `tap` with parameters held constant.
    pub fn extract(&self, img: &Tensor, tap: Tap, store: &ParamStore) -> Result<Tensor> {
        let mut pass = Pass::frozen();
        self.check(img)?;
        let shallow = self.shallow.forward(img, store, &mut pass)?;
        if tap == Tap::Shallow {
            return Ok(shallow);
        }
        let d = self.down.forward(&shallow, store, &mut pass)?;
        self.deep.forward(&d, store, &mut pass)
    }

    /// Per-tap `[c, h, w]` for a square input of side `side`.
    pub fn tap_shapes(&self, side: usize) -> Result<([usize; 3], [usize; 3])> {
        let s = self.shallow.output_shape([self.config.in_channels, side, side])?;
        let d = self.deep.output_shape(self.down.output_shape(s)?)?;
        Ok((s, d))
    }

    pub fn layers(&self, side: usize) -> Result<Vec<LayerSpec>> {
        let mut shape = [self.config.in_channels, side, side];
        let mut out = Vec::new();
        for b in [&self.shallow, &self.down, &self.deep] {
            out.extend(b.specs(shape)?);
            shape = b.output_shape(shape)?;
        }
        Ok(out)
    }

    fn logits(&self, img: &Tensor, store: &ParamStore, pass: &mut Pass) -> Result<Tensor> {
        let deep = self.taps(img, store, pass)?.deep;
        let pooled = deep.global_avg_pool()?;
        let n = pooled.shape()[0];
        let pooled = pooled.reshape(&[n, self.config.deep_channels, 1, 1])?;
        self.head.forward(&pooled, store, pass)?.reshape(&[n, self.config.num_classes])
    }

    /// Trains trunk and head as an identity classifier with cross-entropy.
    pub fn pretrain(
        &self,
        store: &mut ParamStore,
        images: &[Tensor],
        labels: &[usize],
        cfg: &FitConfig,
    ) -> Result<FitHistory> {
        if images.is_empty() || images.len() != labels.len() {
            return Err(Error::Data("feature pretraining needs one label per image".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.config.num_classes) {
            return Err(Error::Data(format!("class label {bad} outside 0..{}", self.config.num_classes)));
        }
        fit(store, images.len(), None, cfg, |store, idx, pass| {
            let batch = Tensor::stack(&idx.iter().map(|&i| images[i].clone()).collect::<Vec<_>>())?;
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            self.logits(&batch, store, pass)?.cross_entropy(&y)
        })
    }
}
