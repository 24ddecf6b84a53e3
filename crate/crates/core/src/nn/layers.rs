//! Declarative layer descriptions and the convolution block shared by
//! every network.

use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::params::{ParamStore, Pass};
use crate::error::{Error, Result};
use crate::tensor::{
    conv2d, conv_output_size, conv_transpose2d, conv_transpose_output_size, spectral_normalize,
    Activation, Tensor,
};

/// Standard deviation of the normal initializer for convolution weights.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    ConvTranspose,
    SpectralNormConv,
    SpectralNormConvTranspose,
    LeakyRelu,
    Relu,
    Tanh,
    Sigmoid,
    Concat,
    ToRgb,
    Mcb,
}

impl LayerKind {
    pub fn is_conv(self) -> bool {
        matches!(
            self,
            LayerKind::Conv
                | LayerKind::ConvTranspose
                | LayerKind::SpectralNormConv
                | LayerKind::SpectralNormConvTranspose
                | LayerKind::ToRgb
        )
    }
}

/// One row of an architecture table.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
    pub negative_slope: Option<f64>,
    /// Output `[c, h, w]` for the configured input resolution.
    pub output_shape: [usize; 3],
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kind.is_conv() && self.kernel == 0 {
            return Err(Error::Config(format!("{}: convolution kernel must be >= 1", self.name)));
        }
        if (self.kind == LayerKind::LeakyRelu) != self.negative_slope.is_some() {
            return Err(Error::Config(format!(
                "{}: negative_slope must be set exactly for LeakyReLU layers",
                self.name
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config(format!("{}: channel counts must be positive", self.name)));
        }
        Ok(())
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [c, h, w] = self.output_shape;
        write!(f, "{} kind={:?} in={} out={}", self.name, self.kind, self.in_channels, self.out_channels)?;
        if self.kind.is_conv() {
            write!(f, " k={} s={} p={}", self.kernel, self.stride, self.padding)?;
            if self.output_padding > 0 {
                write!(f, " op={}", self.output_padding)?;
            }
        }
        if let Some(s) = self.negative_slope {
            write!(f, " slope={s}")?;
        }
        write!(f, " -> {c}x{h}x{w}")
    }
}

/// Renders a layer table as diffable text, one layer per line.
pub fn describe(layers: &[LayerSpec]) -> String {
    layers.iter().map(|l| format!("{l}\n")).collect()
}

/// Convolution (or transposed convolution) with optional spectral
/// normalization, followed by an optional activation.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock {
    pub name: String,
    pub transpose: bool,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
    pub spectral_norm: bool,
    pub activation: Option<Activation>,
}

impl ConvBlock {
    pub fn conv(name: impl Into<String>, in_c: usize, out_c: usize, kernel: usize, stride: usize) -> ConvBlock {
        ConvBlock {
            name: name.into(),
            transpose: false,
            in_channels: in_c,
            out_channels: out_c,
            kernel,
            stride,
            padding: kernel / 2,
            output_padding: 0,
            spectral_norm: false,
            activation: None,
        }
    }

    /// `k=3, stride=2, padding=1, output_padding=1`: exactly doubles H and W.
    pub fn upsample(name: impl Into<String>, in_c: usize, out_c: usize) -> ConvBlock {
        ConvBlock {
            transpose: true,
            output_padding: 1,
            ..ConvBlock::conv(name, in_c, out_c, 3, 2)
        }
    }

    pub fn with_spectral_norm(mut self, on: bool) -> Self {
        self.spectral_norm = on;
        self
    }

    pub fn with_activation(mut self, a: Activation) -> Self {
        self.activation = Some(a);
        self
    }

    fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    fn sn_name(&self) -> String {
        format!("{}.sn_u", self.name)
    }

    fn weight_shape(&self) -> [usize; 4] {
        if self.transpose {
            [self.in_channels, self.out_channels, self.kernel, self.kernel]
        } else {
            [self.out_channels, self.in_channels, self.kernel, self.kernel]
        }
    }

    /// Normal(0, 0.02) weights, zero bias, random unit power-iteration vector.
    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        let shape = self.weight_shape();
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let n: usize = shape.iter().product();
        let w: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
        store.insert(self.weight_name(), &shape, w)?;
        store.insert(self.bias_name(), &[self.out_channels], vec![0.0; self.out_channels])?;
        if self.spectral_norm {
            let rows = shape[0];
            let mut u: Vec<f64> = (0..rows).map(|_| rng.random::<f64>() - 0.5).collect();
            let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            u.iter_mut().for_each(|x| *x /= norm);
            store.set_buffer(self.sn_name(), u);
        }
        Ok(())
    }

    pub fn output_shape(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let [c, h, w] = input;
        if c != self.in_channels {
            return Err(Error::shape(
                &self.name,
                format!("expects {} input channels, got {c}", self.in_channels),
            ));
        }
        let size = |s| {
            if self.transpose {
                conv_transpose_output_size(s, self.kernel, self.stride, self.padding, self.output_padding)
            } else {
                conv_output_size(s, self.kernel, self.stride, self.padding)
            }
        };
        match (size(h), size(w)) {
            (Some(oh), Some(ow)) => Ok([self.out_channels, oh, ow]),
            _ => Err(Error::shape(&self.name, format!("geometry does not fit a {h}x{w} input"))),
        }
    }

    /// Table rows for this block (convolution, then activation if any).
    pub fn specs(&self, input: [usize; 3]) -> Result<Vec<LayerSpec>> {
        let out = self.output_shape(input)?;
        let kind = match (self.transpose, self.spectral_norm) {
            (false, false) => LayerKind::Conv,
            (true, false) => LayerKind::ConvTranspose,
            (false, true) => LayerKind::SpectralNormConv,
            (true, true) => LayerKind::SpectralNormConvTranspose,
        };
        let mut v = vec![LayerSpec {
            name: self.name.clone(),
            kind,
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
            output_padding: self.output_padding,
            negative_slope: None,
            output_shape: out,
        }];
        if let Some(a) = self.activation {
            let (kind, slope) = match a {
                Activation::LeakyRelu(s) => (LayerKind::LeakyRelu, Some(s)),
                Activation::Relu => (LayerKind::Relu, None),
                Activation::Tanh => (LayerKind::Tanh, None),
                Activation::Sigmoid => (LayerKind::Sigmoid, None),
            };
            v.push(LayerSpec {
                name: format!("{}.act", self.name),
                kind,
                in_channels: self.out_channels,
                out_channels: self.out_channels,
                kernel: 0,
                stride: 0,
                padding: 0,
                output_padding: 0,
                negative_slope: slope,
                output_shape: out,
            });
        }
        Ok(v)
    }

    pub fn forward(&self, x: &Tensor, store: &ParamStore, pass: &mut Pass) -> Result<Tensor> {
        let mut weight = store.fetch(&self.weight_name(), pass.trainable())?;
        let bias = store.fetch(&self.bias_name(), pass.trainable())?;
        if self.spectral_norm {
            let sn = spectral_normalize(&weight, store.buffer(&self.sn_name())?)
                .map_err(|e| e.in_layer(&self.name))?;
            pass.record(&self.sn_name(), sn.u);
            weight = sn.weight;
        }
        let y = if self.transpose {
            conv_transpose2d(x, &weight, &bias, self.stride, self.padding, self.output_padding)
        } else {
            conv2d(x, &weight, &bias, self.stride, self.padding)
        }
        .map_err(|e| e.in_layer(&self.name))?;
        Ok(match self.activation {
            Some(a) => y.activation(a),
            None => y,
        })
    }
}
