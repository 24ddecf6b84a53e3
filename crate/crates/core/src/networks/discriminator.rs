use std::fmt;

use crate::error::{Error, Result};
use crate::nn::{describe, ConvBlock, LayerKind, LayerSpec, ParamStore, Pass};
use crate::seed::rng_for;
use crate::tensor::{Activation, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorConfig {
    /// Side length of the scored image.
    pub resolution: usize,
    /// Side length of the map the attribute vector is joined with.
    pub bottleneck: usize,
    pub in_channels: usize,
    pub attribute_dim: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    /// Build the attribute-conditioned stream next to the unconditional one.
    pub conditional: bool,
    pub negative_slope: f64,
}

impl DiscriminatorConfig {
    pub fn full(resolution: usize) -> DiscriminatorConfig {
        DiscriminatorConfig {
            resolution,
            bottleneck: 8,
            in_channels: 3,
            attribute_dim: 10,
            base_channels: 64,
            max_channels: 512,
            conditional: true,
            negative_slope: 0.02,
        }
    }

    pub fn desk(resolution: usize) -> DiscriminatorConfig {
        DiscriminatorConfig {
            bottleneck: 4,
            base_channels: 16,
            max_channels: 64,
            ..DiscriminatorConfig::full(resolution)
        }
    }

    /// Number of stride-2 blocks between the input and the bottleneck.
    pub fn num_blocks(&self) -> usize {
        (self.resolution / self.bottleneck).trailing_zeros() as usize
    }

    pub fn channels(&self) -> Vec<usize> {
        (0..self.num_blocks())
            .map(|k| (self.base_channels << k).min(self.max_channels))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.resolution.is_power_of_two()
            && self.bottleneck.is_power_of_two()
            && self.resolution > self.bottleneck;
        if !ok {
            return Err(Error::Config(format!(
                "discriminator resolution {} must be a power of two above the bottleneck {}",
                self.resolution, self.bottleneck
            )));
        }
        if self.in_channels == 0 || self.attribute_dim == 0 || self.base_channels == 0 {
            return Err(Error::Config("discriminator channel counts must be positive".into()));
        }
        Ok(())
    }
}

/// Patch score maps `[n, 1, b, b]` in `(0, 1)`.
#[derive(Clone, Debug)]
pub struct DiscriminatorScores {
    pub unconditional: Tensor,
    pub conditional: Option<Tensor>,
}

struct Stream {
    down: ConvBlock,
    score: ConvBlock,
}

/// Shared trunk followed by an unconditional stream and, optionally, a
/// conditional stream that sees the tiled attribute vector at the bottleneck.
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    trunk: Vec<ConvBlock>,
    unconditional: Stream,
    conditional: Option<Stream>,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig) -> Result<Discriminator> {
        config.validate()?;
        let ch = config.channels();
        let leaky = Activation::LeakyRelu(config.negative_slope);
        let block = |name: String, k: usize, in_c: usize| {
            ConvBlock::conv(name, in_c, ch[k], 3, 2)
                .with_spectral_norm(k > 0)
                .with_activation(leaky)
        };
        let last = ch.len() - 1;
        let mut trunk = Vec::with_capacity(last);
        let mut in_c = config.in_channels;
        for k in 0..last {
            trunk.push(block(format!("trunk{k}"), k, in_c));
            in_c = ch[k];
        }
        let stream = |prefix: &str, extra: usize| Stream {
            down: block(format!("{prefix}.down"), last, in_c),
            score: ConvBlock::conv(format!("{prefix}.score"), ch[last] + extra, 1, 3, 1)
                .with_activation(Activation::Sigmoid),
        };
        let unconditional = stream("uncond", 0);
        let conditional = config.conditional.then(|| stream("cond", config.attribute_dim));
        Ok(Discriminator { config, trunk, unconditional, conditional })
    }

    fn blocks(&self) -> impl Iterator<Item = &ConvBlock> {
        let streams = std::iter::once(&self.unconditional).chain(self.conditional.as_ref());
        self.trunk
            .iter()
            .chain(streams.flat_map(|s| [&s.down, &s.score]))
    }

    pub fn init(&self, seed: u64) -> Result<ParamStore> {
        let mut rng = rng_for(seed, &format!("discriminator{}.init", self.config.resolution));
        let mut store = ParamStore::new();
        for b in self.blocks() {
            b.init(&mut store, &mut rng)?;
        }
        Ok(store)
    }

    /// Scores `img`; the conditional stream runs when it exists and `z` is given.
    pub fn forward(
        &self,
        img: &Tensor,
        z: Option<&Tensor>,
        store: &ParamStore,
        pass: &mut Pass,
    ) -> Result<DiscriminatorScores> {
        let c = &self.config;
        let r = c.resolution;
        let n = match *img.shape() {
            [n, ch, h, w] if ch == c.in_channels && h == r && w == r => n,
            _ => {
                return Err(Error::shape(
                    format!("discriminator{r}"),
                    format!("expected [n, {}, {r}, {r}] for scale {r}, got {:?}", c.in_channels, img.shape()),
                ))
            }
        };
        let mut h = img.clone();
        for b in &self.trunk {
            h = b.forward(&h, store, pass)?;
        }
        let uncond = {
            let s = &self.unconditional;
            let d = s.down.forward(&h, store, pass)?;
            s.score.forward(&d, store, pass)?
        };
        let cond = match (&self.conditional, z) {
            (Some(s), Some(z)) => {
                if z.shape() != [n, c.attribute_dim] {
                    return Err(Error::shape(
                        format!("discriminator{r}"),
                        format!("expected attributes [{n}, {}], got {:?}", c.attribute_dim, z.shape()),
                    ));
                }
                let d = s.down.forward(&h, store, pass)?;
                let b = d.shape()[2];
                let joined = Tensor::concat(&[d, z.tile_spatial(b, b)?], 1)?;
                Some(s.score.forward(&joined, store, pass)?)
            }
            _ => None,
        };
        Ok(DiscriminatorScores { unconditional: uncond, conditional: cond })
    }

    /// Shape `[c + a, b, b]` of the map the conditional stream scores,
    /// by shape propagation only.
    pub fn conditional_concat_shape(&self) -> Result<Option<[usize; 3]>> {
        let Some(s) = &self.conditional else { return Ok(None) };
        let mut shape = [self.config.in_channels, self.config.resolution, self.config.resolution];
        for b in &self.trunk {
            shape = b.output_shape(shape)?;
        }
        let [c, h, w] = s.down.output_shape(shape)?;
        Ok(Some([c + self.config.attribute_dim, h, w]))
    }

    pub fn layers(&self) -> Result<Vec<LayerSpec>> {
        let c = &self.config;
        let mut out = Vec::new();
        let mut shape = [c.in_channels, c.resolution, c.resolution];
        for b in &self.trunk {
            out.extend(b.specs(shape)?);
            shape = b.output_shape(shape)?;
        }
        let streams = std::iter::once((&self.unconditional, 0)).chain(self.conditional.as_ref().map(|s| (s, c.attribute_dim)));
        for (s, extra) in streams {
            out.extend(s.down.specs(shape)?);
            let [ch, h, w] = s.down.output_shape(shape)?;
            if extra > 0 {
                out.push(LayerSpec {
                    name: format!("{}.concat", s.score.name.trim_end_matches(".score")),
                    kind: LayerKind::Concat,
                    in_channels: ch,
                    out_channels: ch + extra,
                    kernel: 0,
                    stride: 0,
                    padding: 0,
                    output_padding: 0,
                    negative_slope: None,
                    output_shape: [ch + extra, h, w],
                });
            }
            out.extend(s.score.specs([ch + extra, h, w])?);
        }
        Ok(out)
    }
}

impl fmt::Display for Discriminator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.config;
        writeln!(
            f,
            "discriminator resolution={} bottleneck={} conditional={}",
            c.resolution, c.bottleneck, c.conditional
        )?;
        match self.layers() {
            Ok(l) => f.write_str(&describe(&l)),
            Err(e) => writeln!(f, "invalid plan: {e}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_block_counts() {
        for (r, blocks) in [(64, 3), (128, 4), (256, 5)] {
            let d = Discriminator::new(DiscriminatorConfig::full(r)).unwrap();
            assert_eq!(d.config.num_blocks(), blocks);
            assert_eq!(d.conditional_concat_shape().unwrap(), Some([d.config.channels()[blocks - 1] + 10, 8, 8]));
        }
    }

    #[test]
    fn zero_score_layer_gives_half() {
        let d = Discriminator::new(DiscriminatorConfig::desk(16)).unwrap();
        let mut store = d.init(0).unwrap();
        for name in ["uncond.score.weight", "cond.score.weight"] {
            let shape = store.get(name).unwrap().shape().to_vec();
            let n = shape.iter().product();
            store.insert(name, &shape, vec![0.0; n]).unwrap();
        }
        let img = Tensor::full(&[2, 3, 16, 16], 0.3);
        let z = Tensor::full(&[2, 10], 1.0);
        let s = d.forward(&img, Some(&z), &store, &mut Pass::frozen()).unwrap();
        assert_eq!(s.unconditional.shape(), &[2, 1, 4, 4]);
        let cond = s.conditional.unwrap();
        assert!(cond.data().iter().chain(s.unconditional.data()).all(|&v| v == 0.5));
    }

    #[test]
    fn wrong_scale_names_expected_resolution() {
        let d = Discriminator::new(DiscriminatorConfig::desk(16)).unwrap();
        let store = d.init(0).unwrap();
        let err = d.forward(&Tensor::zeros(&[1, 3, 8, 8]), None, &store, &mut Pass::frozen()).unwrap_err();
        assert!(err.to_string().contains("16"), "{err}");
    }

    #[test]
    fn unconditional_only_has_no_conditional_params() {
        let cfg = DiscriminatorConfig { conditional: false, ..DiscriminatorConfig::desk(32) };
        let d = Discriminator::new(cfg).unwrap();
        let store = d.init(0).unwrap();
        assert!(store.names().all(|n| !n.starts_with("cond")));
        assert_eq!(d.conditional_concat_shape().unwrap(), None);
    }
}
