//! Multimodal compact bilinear pooling: the count sketch of an outer product,
//! computed as a circular convolution of the two factor sketches.

use std::rc::Rc;

use rand::Rng;

use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::tensor::{rfft_circular_conv, Tensor};

/// Offset inside the signed square root; keeps the map differentiable at 0.
pub const SIGNED_SQRT_EPS: f64 = 1e-8;

/// Frozen hash and sign arrays for one count-sketch projection.
#[derive(Clone, Debug, PartialEq)]
pub struct SketchParams {
    pub input_dim: usize,
    pub sketch_dim: usize,
    pub hash: Vec<usize>,
    pub sign: Vec<f64>,
    pub seed: u64,
}

impl SketchParams {
    pub fn new(input_dim: usize, sketch_dim: usize, seed: u64) -> Result<SketchParams> {
        if input_dim == 0 || sketch_dim == 0 {
            return Err(Error::Config("sketch dimensions must be positive".into()));
        }
        let mut rng = rng_for(seed, "count_sketch");
        let hash = (0..input_dim).map(|_| rng.random_range(0..sketch_dim)).collect();
        let sign = (0..input_dim)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        Ok(SketchParams { input_dim, sketch_dim, hash, sign, seed })
    }

    pub fn save(&self, c: &mut Container, prefix: &str) {
        let hash: Vec<i64> = self.hash.iter().map(|&h| h as i64).collect();
        let sign: Vec<i64> = self.sign.iter().map(|&s| s as i64).collect();
        c.put_index(format!("{prefix}hash"), &hash);
        c.put_index(format!("{prefix}sign"), &sign);
        c.put_index(
            format!("{prefix}dims"),
            &[self.input_dim as i64, self.sketch_dim as i64, self.seed as i64],
        );
    }

    pub fn load(c: &Container, prefix: &str) -> Result<SketchParams> {
        let dims = c.index(&format!("{prefix}dims"))?;
        let hash = c.index(&format!("{prefix}hash"))?;
        let sign = c.index(&format!("{prefix}sign"))?;
        let [input_dim, sketch_dim, seed] = dims else {
            return Err(Error::Checkpoint(format!("{prefix}dims malformed")));
        };
        let (input_dim, sketch_dim) = (*input_dim as usize, *sketch_dim as usize);
        if hash.len() != input_dim
            || sign.len() != input_dim
            || hash.iter().any(|&h| h < 0 || h as usize >= sketch_dim)
            || sign.iter().any(|&s| s != 1 && s != -1)
        {
            return Err(Error::Checkpoint(format!("sketch {prefix} is inconsistent")));
        }
        Ok(SketchParams {
            input_dim,
            sketch_dim,
            hash: hash.iter().map(|&h| h as usize).collect(),
            sign: sign.iter().map(|&s| s as f64).collect(),
            seed: *seed as u64,
        })
    }
}

/// `out[j] = Σ_{i : h(i) = j} s(i) v(i)` row by row. `v` is `[n]` or
/// `[rows, n]`; the output keeps the leading dimension.
pub fn count_sketch(v: &Tensor, p: &SketchParams) -> Result<Tensor> {
    let (rows, n) = match *v.shape() {
        [n] => (1, n),
        [r, n] => (r, n),
        ref s => return Err(Error::shape("count_sketch", format!("expected rank 1 or 2, got {s:?}"))),
    };
    if n != p.input_dim {
        return Err(Error::shape(
            "count_sketch",
            format!("input has length {n}, sketch expects {}", p.input_dim),
        ));
    }
    let d = p.sketch_dim;
    let mut out = vec![0.0; rows * d];
    for (src, dst) in v.data().chunks(n).zip(out.chunks_mut(d)) {
        for i in 0..n {
            dst[p.hash[i]] += p.sign[i] * src[i];
        }
    }
    let shape = if v.ndim() == 1 { vec![d] } else { vec![rows, d] };
    let (hash, sign) = (Rc::new(p.hash.clone()), Rc::new(p.sign.clone()));
    Ok(Tensor::from_op(shape, out, vec![v.clone()], move |g| {
        let mut dv = Vec::with_capacity(rows * n);
        for gr in g.chunks(d) {
            dv.extend((0..n).map(|i| sign[i] * gr[hash[i]]));
        }
        vec![Some(dv)]
    }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct McbConfig {
    pub image_feature_dim: usize,
    pub attribute_dim: usize,
    pub sketch_dim: usize,
    pub output_dim: usize,
    /// Signed square root then L2 normalization after sketching.
    pub normalize: bool,
}

impl McbConfig {
    pub fn new(image_feature_dim: usize, attribute_dim: usize, sketch_dim: usize) -> McbConfig {
        McbConfig {
            image_feature_dim,
            attribute_dim,
            sketch_dim,
            output_dim: sketch_dim,
            normalize: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.output_dim != self.sketch_dim {
            return Err(Error::Config(format!(
                "mcb output_dim {} must equal sketch_dim {}",
                self.output_dim, self.sketch_dim
            )));
        }
        if self.image_feature_dim == 0 || self.attribute_dim == 0 || self.sketch_dim == 0 {
            return Err(Error::Config("mcb dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// Configured pooling module with its two frozen sketches.
#[derive(Clone, Debug, PartialEq)]
pub struct Mcb {
    pub config: McbConfig,
    pub image_sketch: SketchParams,
    pub attribute_sketch: SketchParams,
}

impl Mcb {
    pub fn new(config: McbConfig, seed: u64) -> Result<Mcb> {
        config.validate()?;
        Ok(Mcb {
            image_sketch: SketchParams::new(
                config.image_feature_dim,
                config.sketch_dim,
                crate::seed::derive_seed(seed, "mcb.image"),
            )?,
            attribute_sketch: SketchParams::new(
                config.attribute_dim,
                config.sketch_dim,
                crate::seed::derive_seed(seed, "mcb.attribute"),
            )?,
            config,
        })
    }

    pub fn pool(&self, image_feat: &Tensor, attr: &Tensor) -> Result<Tensor> {
        mcb_pool(image_feat, attr, &self.config, &self.image_sketch, &self.attribute_sketch)
    }

    pub fn fuse_spatial(&self, feat_map: &Tensor, attr: &Tensor) -> Result<Tensor> {
        mcb_fuse_spatial(feat_map, attr, &self.config, &self.image_sketch, &self.attribute_sketch)
    }

    pub fn save(&self, c: &mut Container, prefix: &str) {
        self.image_sketch.save(c, &format!("{prefix}image."));
        self.attribute_sketch.save(c, &format!("{prefix}attribute."));
    }

    /// Replaces the sketches with those stored in `c`, checking dimensions.
    pub fn load_sketches(&mut self, c: &Container, prefix: &str) -> Result<()> {
        let image = SketchParams::load(c, &format!("{prefix}image."))?;
        let attribute = SketchParams::load(c, &format!("{prefix}attribute."))?;
        if image.input_dim != self.config.image_feature_dim
            || attribute.input_dim != self.config.attribute_dim
            || image.sketch_dim != self.config.sketch_dim
            || attribute.sketch_dim != self.config.sketch_dim
        {
            return Err(Error::Checkpoint("stored sketches do not match the mcb config".into()));
        }
        self.image_sketch = image;
        self.attribute_sketch = attribute;
        Ok(())
    }
}

/// Sketch of the outer product without post-processing. Both inputs are
/// `[rows, dim]` (or rank 1); `attr` may be a single row shared by all rows.
pub fn mcb_pool_raw(image_feat: &Tensor, attr: &Tensor, p1: &SketchParams, p2: &SketchParams) -> Result<Tensor> {
    if p1.sketch_dim != p2.sketch_dim {
        return Err(Error::shape("mcb", "sketches have different output dimensions"));
    }
    rfft_circular_conv(&count_sketch(image_feat, p1)?, &count_sketch(attr, p2)?)
}

pub fn mcb_pool(
    image_feat: &Tensor,
    attr: &Tensor,
    cfg: &McbConfig,
    p1: &SketchParams,
    p2: &SketchParams,
) -> Result<Tensor> {
    if p1.input_dim != cfg.image_feature_dim || p2.input_dim != cfg.attribute_dim || p1.sketch_dim != cfg.sketch_dim {
        return Err(Error::shape("mcb", "sketch parameters do not match the config"));
    }
    let raw = mcb_pool_raw(image_feat, attr, p1, p2)?;
    if !cfg.normalize {
        return Ok(raw);
    }
    let rooted = raw.signed_sqrt(SIGNED_SQRT_EPS);
    if rooted.ndim() == 1 {
        let d = rooted.numel();
        rooted.reshape(&[1, d])?.l2_normalize_rows()?.reshape(&[d])
    } else {
        rooted.l2_normalize_rows()
    }
}

/// Pools every spatial position of `feat_map` (`[n, c, h, w]`) with the
/// attribute row of its sample (`attr`: `[n, a]`), giving `[n, d, h, w]`.
pub fn mcb_fuse_spatial(
    feat_map: &Tensor,
    attr: &Tensor,
    cfg: &McbConfig,
    p1: &SketchParams,
    p2: &SketchParams,
) -> Result<Tensor> {
    let [n, c, h, w] = *feat_map.shape() else {
        return Err(Error::shape("mcb", format!("expected [n, c, h, w], got {:?}", feat_map.shape())));
    };
    if c != cfg.image_feature_dim {
        return Err(Error::shape(
            "mcb",
            format!("feature map has {c} channels, expected {}", cfg.image_feature_dim),
        ));
    }
    if attr.shape() != [n, cfg.attribute_dim] {
        return Err(Error::shape(
            "mcb",
            format!("attributes have shape {:?}, expected [{n}, {}]", attr.shape(), cfg.attribute_dim),
        ));
    }
    let hw = h * w;
    let positions = |t: &Tensor, ch: usize| -> Result<Tensor> {
        t.reshape(&[n, ch, hw])?.swap_last_two()?.reshape(&[n * hw, ch])
    };
    let feats = positions(feat_map, c)?;
    let attrs = positions(&attr.tile_spatial(h, w)?, cfg.attribute_dim)?;
    let d = cfg.sketch_dim;
    mcb_pool(&feats, &attrs, cfg, p1, p2)?
        .reshape(&[n, hw, d])?
        .swap_last_two()?
        .reshape(&[n, d, h, w])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn one_hot_lands_on_hashed_bucket() {
        let p = SketchParams::new(9, 5, 3).unwrap();
        for k in 0..9 {
            let mut e = vec![0.0; 9];
            e[k] = 1.0;
            let out = count_sketch(&t(&e), &p).unwrap();
            for (j, &v) in out.data().iter().enumerate() {
                let want = if j == p.hash[k] { p.sign[k] } else { 0.0 };
                assert_eq!(v, want);
            }
        }
    }

    #[test]
    fn sketch_matches_index_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = SketchParams::new(40, 32, 8).unwrap();
        let v = random_vec(&mut rng, 40);
        let mut want = vec![0.0; 32];
        for j in 0..32 {
            for i in 0..40 {
                if p.hash[i] == j {
                    want[j] += p.sign[i] * v[i];
                }
            }
        }
        assert_eq!(count_sketch(&t(&v), &p).unwrap().to_vec(), want);
    }

    #[test]
    fn zero_attribute_gives_zero() {
        let cfg = McbConfig { normalize: false, ..McbConfig::new(8, 4, 16) };
        let m = Mcb::new(cfg, 2).unwrap();
        let out = m.pool(&t(&[0.3; 8]), &t(&[0.0; 4])).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        let normed = Mcb::new(McbConfig::new(8, 4, 16), 2).unwrap();
        assert!(normed.pool(&t(&[0.3; 8]), &t(&[0.0; 4])).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fused_map_shape_and_constant_input() {
        let m = Mcb::new(McbConfig::new(6, 3, 8), 4).unwrap();
        let feat = Tensor::full(&[2, 6, 2, 2], 0.7);
        let attr = Tensor::from_vec(&[2, 3], vec![1.0, 0.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
        let out = m.fuse_spatial(&feat, &attr).unwrap();
        assert_eq!(out.shape(), &[2, 8, 2, 2]);
        for chunk in out.data().chunks(4) {
            assert!(chunk.iter().all(|&v| v == chunk[0]));
        }
    }

    #[test]
    fn sketches_survive_checkpoint() {
        let m = Mcb::new(McbConfig::new(5, 3, 7), 9).unwrap();
        let mut c = Container::new();
        m.save(&mut c, "mcb.");
        let mut other = Mcb::new(McbConfig::new(5, 3, 7), 10).unwrap();
        other.load_sketches(&Container::from_bytes(&c.to_bytes()).unwrap(), "mcb.").unwrap();
        assert_eq!(other, m);
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let p = SketchParams::new(4, 8, 0).unwrap();
        assert!(count_sketch(&t(&[1.0; 5]), &p).is_err());
        let m = Mcb::new(McbConfig::new(6, 3, 8), 4).unwrap();
        assert!(m.fuse_spatial(&Tensor::zeros(&[1, 5, 2, 2]), &Tensor::zeros(&[1, 3])).is_err());
    }
}
