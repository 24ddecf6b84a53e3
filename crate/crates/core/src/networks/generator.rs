use std::fmt;

use crate::error::{Error, Result};
use crate::mcb::{Mcb, McbConfig};
use crate::nn::{ConvBlock, LayerKind, LayerSpec, ParamStore, Pass};
use crate::seed::{derive_seed, rng_for};
use crate::tensor::{Activation, Tensor};

use super::pyramid::ScalePyramid;

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    /// Side length of the finest output.
    pub resolution: usize,
    pub num_scales: usize,
    /// 1 for intensity-only probes, 3 for stacked Stokes images.
    pub input_channels: usize,
    pub attribute_dim: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub skip_connections: bool,
    /// Fuse the attribute vector at the bottleneck. When off the bottleneck
    /// map passes straight to the decoder.
    pub fuse_attributes: bool,
    pub mcb_normalize: bool,
    pub negative_slope: f64,
}

impl GeneratorConfig {
    /// 256² input, seven encoder blocks, three output scales.
    pub fn full() -> GeneratorConfig {
        GeneratorConfig {
            resolution: 256,
            num_scales: 3,
            input_channels: 3,
            attribute_dim: 10,
            base_channels: 64,
            max_channels: 512,
            skip_connections: true,
            fuse_attributes: true,
            mcb_normalize: true,
            negative_slope: 0.02,
        }
    }

    /// 32² input with channels capped at 64.
    pub fn desk() -> GeneratorConfig {
        GeneratorConfig {
            resolution: 32,
            base_channels: 16,
            max_channels: 64,
            ..GeneratorConfig::full()
        }
    }

    /// Number of stride-2 encoder blocks; the bottleneck is 2×2.
    pub fn depth(&self) -> usize {
        self.resolution.trailing_zeros() as usize - 1
    }

    pub fn encoder_channels(&self) -> Vec<usize> {
        (0..self.depth())
            .map(|k| (self.base_channels << k).min(self.max_channels))
            .collect()
    }

    /// Mirrors the encoder (each block matches the skip it is joined with)
    /// and halves the first encoder width for the last block.
    pub fn decoder_channels(&self) -> Vec<usize> {
        let enc = self.encoder_channels();
        let depth = enc.len();
        let mut dec: Vec<usize> = (0..depth - 1).map(|k| enc[depth - 2 - k]).collect();
        dec.push((enc[0] / 2).max(1));
        dec
    }

    pub fn scale_resolutions(&self) -> Vec<usize> {
        (0..self.num_scales)
            .map(|i| self.resolution >> (self.num_scales - 1 - i))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.resolution.is_power_of_two() || self.resolution < 8 {
            return Err(Error::Config(format!(
                "generator resolution {} must be a power of two >= 8",
                self.resolution
            )));
        }
        if self.num_scales == 0 || self.num_scales > self.depth() {
            return Err(Error::Config(format!(
                "num_scales {} must be between 1 and {}",
                self.num_scales,
                self.depth()
            )));
        }
        if self.input_channels == 0 || self.attribute_dim == 0 || self.base_channels < 2 {
            return Err(Error::Config("generator channel counts must be positive".into()));
        }
        if self.max_channels < self.base_channels {
            return Err(Error::Config("max_channels must be >= base_channels".into()));
        }
        Ok(())
    }
}

pub struct Generator {
    pub config: GeneratorConfig,
    encoder: Vec<ConvBlock>,
    decoder: Vec<ConvBlock>,
    heads: Vec<ConvBlock>,
    mcb: Option<Mcb>,
}

impl Generator {
    /// Builds the layer plan. `seed` fixes the count-sketch projections.
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Generator> {
        config.validate()?;
        let enc = config.encoder_channels();
        let dec = config.decoder_channels();
        let depth = enc.len();
        let leaky = Activation::LeakyRelu(config.negative_slope);
        let mut encoder = Vec::with_capacity(depth);
        let mut in_c = config.input_channels;
        for (k, &c) in enc.iter().enumerate() {
            let block = ConvBlock::conv(format!("enc{k}"), in_c, c, 3, 2)
                .with_spectral_norm(k > 0)
                .with_activation(leaky);
            encoder.push(block);
            in_c = c;
        }
        let bottleneck = enc[depth - 1];
        let mcb = if config.fuse_attributes {
            let mut mc = McbConfig::new(bottleneck, config.attribute_dim, bottleneck);
            mc.normalize = config.mcb_normalize;
            Some(Mcb::new(mc, derive_seed(seed, "generator.mcb"))?)
        } else {
            None
        };
        let mut decoder = Vec::with_capacity(depth);
        let mut prev = bottleneck;
        for (k, &c) in dec.iter().enumerate() {
            let skip = if config.skip_connections { enc[depth - 1 - k] } else { 0 };
            decoder.push(
                ConvBlock::upsample(format!("dec{k}"), prev + skip, c)
                    .with_spectral_norm(true)
                    .with_activation(Activation::Relu),
            );
            prev = c;
        }
        let heads = (0..config.num_scales)
            .map(|i| {
                let k = depth - config.num_scales + i;
                ConvBlock::conv(format!("to_rgb{i}"), dec[k], 3, 3, 1).with_activation(Activation::Tanh)
            })
            .collect();
        Ok(Generator { config, encoder, decoder, heads, mcb })
    }

    pub fn mcb(&self) -> Option<&Mcb> {
        self.mcb.as_ref()
    }

    pub fn mcb_mut(&mut self) -> Option<&mut Mcb> {
        self.mcb.as_mut()
    }

    pub fn init(&self, seed: u64) -> Result<ParamStore> {
        let mut rng = rng_for(seed, "generator.init");
        let mut store = ParamStore::new();
        for b in self.encoder.iter().chain(&self.decoder).chain(&self.heads) {
            b.init(&mut store, &mut rng)?;
        }
        Ok(store)
    }

    fn check_inputs(&self, x: &Tensor, z: &Tensor) -> Result<usize> {
        let c = &self.config;
        let r = c.resolution;
        let [n, ch, h, w] = *x.shape() else {
            return Err(Error::shape("generator", format!("input must be [n, c, h, w], got {:?}", x.shape())));
        };
        if ch != c.input_channels || h != r || w != r {
            return Err(Error::shape(
                "generator",
                format!("expected input [n, {}, {r}, {r}], got {:?}", c.input_channels, x.shape()),
            ));
        }
        if z.shape() != [n, c.attribute_dim] {
            return Err(Error::shape(
                "generator",
                format!("expected attributes [{n}, {}], got {:?}", c.attribute_dim, z.shape()),
            ));
        }
        Ok(n)
    }

    pub fn forward(&self, x: &Tensor, z: &Tensor, store: &ParamStore, pass: &mut Pass) -> Result<ScalePyramid> {
        self.check_inputs(x, z)?;
        let depth = self.encoder.len();
        let mut skips = Vec::with_capacity(depth);
        let mut h = x.clone();
        for block in &self.encoder {
            h = block.forward(&h, store, pass)?;
            skips.push(h.clone());
        }
        if let Some(mcb) = &self.mcb {
            h = mcb.fuse_spatial(&h, z).map_err(|e| e.in_layer("mcb"))?;
        }
        let first_head = depth - self.config.num_scales;
        let mut images = Vec::with_capacity(self.config.num_scales);
        for (k, block) in self.decoder.iter().enumerate() {
            let input = if self.config.skip_connections {
                Tensor::concat(&[h, skips[depth - 1 - k].clone()], 1)?
            } else {
                h
            };
            h = block.forward(&input, store, pass)?;
            if k >= first_head {
                images.push(self.heads[k - first_head].forward(&h, store, pass)?);
            }
        }
        ScalePyramid::new(images)
    }

    /// Output `[c, h, w]` of every scale, by shape propagation only.
    pub fn output_shapes(&self) -> Result<Vec<[usize; 3]>> {
        let layers = self.layers()?;
        Ok(layers
            .iter()
            .filter(|l| l.kind == LayerKind::Tanh)
            .map(|l| l.output_shape)
            .collect())
    }

    /// Full layer table, including concatenation and fusion rows.
    pub fn layers(&self) -> Result<Vec<LayerSpec>> {
        let c = &self.config;
        let depth = self.encoder.len();
        let mut out = Vec::new();
        let mut shape = [c.input_channels, c.resolution, c.resolution];
        let mut skips = Vec::with_capacity(depth);
        for block in &self.encoder {
            out.extend(block.specs(shape)?);
            shape = block.output_shape(shape)?;
            skips.push(shape);
        }
        if let Some(mcb) = &self.mcb {
            let fused = [mcb.config.output_dim, shape[1], shape[2]];
            out.push(LayerSpec {
                name: "mcb".into(),
                kind: LayerKind::Mcb,
                in_channels: shape[0] + c.attribute_dim,
                out_channels: fused[0],
                kernel: 0,
                stride: 0,
                padding: 0,
                output_padding: 0,
                negative_slope: None,
                output_shape: fused,
            });
            shape = fused;
        }
        let first_head = depth - c.num_scales;
        for (k, block) in self.decoder.iter().enumerate() {
            if c.skip_connections {
                let skip = skips[depth - 1 - k];
                if skip[1..] != shape[1..] {
                    return Err(Error::shape(format!("dec{k}.concat"), "skip resolution mismatch"));
                }
                let joined = [shape[0] + skip[0], shape[1], shape[2]];
                out.push(concat_spec(format!("dec{k}.concat"), shape[0], joined));
                shape = joined;
            }
            out.extend(block.specs(shape)?);
            shape = block.output_shape(shape)?;
            if k >= first_head {
                let head = &self.heads[k - first_head];
                let mut specs = head.specs(shape)?;
                specs[0].kind = LayerKind::ToRgb;
                out.extend(specs);
            }
        }
        Ok(out)
    }
}

fn concat_spec(name: String, in_channels: usize, out: [usize; 3]) -> LayerSpec {
    LayerSpec {
        name,
        kind: LayerKind::Concat,
        in_channels,
        out_channels: out[0],
        kernel: 0,
        stride: 0,
        padding: 0,
        output_padding: 0,
        negative_slope: None,
        output_shape: out,
    }
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.config;
        writeln!(
            f,
            "generator resolution={} scales={} input_channels={} attributes={} skips={} fusion={}",
            c.resolution, c.num_scales, c.input_channels, c.attribute_dim, c.skip_connections, c.fuse_attributes
        )?;
        match self.layers() {
            Ok(layers) => f.write_str(&crate::nn::describe(&layers)),
            Err(e) => writeln!(f, "invalid plan: {e}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_channel_schedule() {
        let c = GeneratorConfig::full();
        assert_eq!(c.encoder_channels(), vec![64, 128, 256, 512, 512, 512, 512]);
        assert_eq!(c.decoder_channels(), vec![512, 512, 512, 256, 128, 64, 32]);
        assert_eq!(c.scale_resolutions(), vec![64, 128, 256]);
    }

    #[test]
    fn desk_forward_matches_declared_shapes() {
        let g = Generator::new(GeneratorConfig::desk(), 0).unwrap();
        let store = g.init(1).unwrap();
        let x = Tensor::full(&[1, 3, 32, 32], 0.1);
        let z = Tensor::full(&[1, 10], 1.0);
        let pyr = g.forward(&x, &z, &store, &mut Pass::frozen()).unwrap();
        let shapes: Vec<Vec<usize>> = pyr.images().iter().map(|t| t.shape()[1..].to_vec()).collect();
        let declared: Vec<Vec<usize>> = g.output_shapes().unwrap().iter().map(|s| s.to_vec()).collect();
        assert_eq!(shapes, declared);
        assert_eq!(pyr.resolutions(), vec![8, 16, 32]);
        assert!(pyr.images().iter().all(|t| t.data().iter().all(|v| v.abs() <= 1.0)));
    }

    #[test]
    fn wrong_resolution_rejected_before_compute() {
        let g = Generator::new(GeneratorConfig::desk(), 0).unwrap();
        let store = g.init(1).unwrap();
        let err = g
            .forward(&Tensor::zeros(&[1, 3, 16, 16]), &Tensor::zeros(&[1, 10]), &store, &mut Pass::frozen())
            .unwrap_err();
        assert!(err.to_string().contains("32"), "{err}");
    }

    #[test]
    fn description_lists_every_block() {
        let g = Generator::new(GeneratorConfig::desk(), 0).unwrap();
        let text = g.to_string();
        for name in ["enc0", "enc3", "mcb", "dec0.concat", "dec3", "to_rgb2"] {
            assert!(text.contains(name), "{name} missing from\n{text}");
        }
    }
}
