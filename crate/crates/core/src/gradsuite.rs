//! Finite-difference checks of every differentiable primitive on randomized
//! small tensors.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::losses::{
    attribute_loss, composite, discriminator_loss, generator_adversarial, l1_multiscale, perceptual_identity,
    AdversarialForm, GeneratorTerms, LossWeights, TripletScores,
};
use crate::mcb::{count_sketch, mcb_fuse_spatial, mcb_pool, McbConfig, SketchParams};
use crate::networks::ScalePyramid;
use crate::perception::{AttributeConfig, AttributePredictor, FeatureConfig, FeatureNetwork};
use crate::seed::rng_for;
use crate::tensor::gradcheck::{check_gradients, project, GradCheckReport};
use crate::tensor::{
    conv2d, conv_transpose2d, largest_singular_value, rfft_circular_conv, spectral_normalize,
    spectral_normalize_fixed, Activation, Tensor,
};

/// Finite-difference step; central differences in f64 keep both truncation
/// and rounding error near 1e-10 at this size.
pub const STEP: f64 = 1e-5;

/// Relative error bound the suite is held to.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub seeds: usize,
    pub report: GradCheckReport,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < TOLERANCE
    }
}

type Check = fn(&mut ChaCha8Rng) -> Result<GradCheckReport>;

const CHECKS: &[(&str, Check)] = &[
    ("conv2d", check_conv),
    ("conv_transpose2d", check_conv_transpose),
    ("leaky_relu", |r| check_activation(r, Activation::LeakyRelu(0.2))),
    ("relu", |r| check_activation(r, Activation::Relu)),
    ("tanh", |r| check_activation(r, Activation::Tanh)),
    ("sigmoid", |r| check_activation(r, Activation::Sigmoid)),
    ("spectral_norm_fixed", check_spectral_fixed),
    ("spectral_norm_converged", check_spectral_converged),
    ("fft_circular_conv", check_fft),
    ("count_sketch", check_count_sketch),
    ("mcb_pool", check_mcb_pool),
    ("mcb_fuse_spatial", check_mcb_fuse),
    ("loss_discriminator", check_d_loss),
    ("loss_adv_non_saturating", |r| check_g_adv(r, AdversarialForm::NonSaturating)),
    ("loss_adv_minimax", |r| check_g_adv(r, AdversarialForm::Minimax)),
    ("loss_l1", check_l1),
    ("loss_perceptual_identity", check_perceptual_identity),
    ("loss_attribute", check_attribute),
    ("loss_composite", check_composite),
];

/// Names of all checked primitives, in suite order.
pub fn primitives() -> Vec<&'static str> {
    CHECKS.iter().map(|(n, _)| *n).collect()
}

/// Runs every check over `seeds` independent draws derived from `seed`.
pub fn run_suite(seeds: usize, seed: u64) -> Result<Vec<SuiteEntry>> {
    CHECKS
        .iter()
        .map(|(name, check)| {
            let mut report = GradCheckReport::default();
            for s in 0..seeds {
                let mut rng = rng_for(seed, &format!("gradsuite.{name}.{s}"));
                report.merge(&check(&mut rng)?);
            }
            Ok(SuiteEntry { name, seeds, report })
        })
        .collect()
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let v = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::from_vec(shape, v).expect("shape matches data")
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let v = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(shape, v).expect("shape matches data")
}

fn check_conv(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let stride = rng.random_range(1..=2);
    let k = [3, 4][rng.random_range(0..2)];
    let x = randn(rng, &[2, 2, 5, 5]);
    let w = randn(rng, &[3, 2, k, k]);
    let b = randn(rng, &[3]);
    let out = conv2d(&x, &w, &b, stride, 1)?;
    let probe = randn(rng, out.shape());
    check_gradients(&[x, w, b], STEP, |v| project(&conv2d(&v[0], &v[1], &v[2], stride, 1)?, &probe))
}

fn check_conv_transpose(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let x = randn(rng, &[2, 3, 3, 3]);
    let w = randn(rng, &[3, 2, 4, 4]);
    let b = randn(rng, &[2]);
    let out = conv_transpose2d(&x, &w, &b, 2, 1, 0)?;
    let probe = randn(rng, out.shape());
    check_gradients(&[x, w, b], STEP, |v| project(&conv_transpose2d(&v[0], &v[1], &v[2], 2, 1, 0)?, &probe))
}

fn check_activation(rng: &mut ChaCha8Rng, a: Activation) -> Result<GradCheckReport> {
    let x = randn(rng, &[24]);
    let probe = randn(rng, &[24]);
    check_gradients(&[x], STEP, |v| project(&v[0].activation(a), &probe))
}

fn unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

fn check_spectral_fixed(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let w = randn(rng, &[4, 2, 3, 1]);
    let (u, v) = (unit(rng, 4), unit(rng, 6));
    let probe = randn(rng, w.shape());
    check_gradients(&[w], STEP, |t| project(&spectral_normalize_fixed(&t[0], &u, &v)?.0, &probe))
}

/// Starting from the converged singular vector, the power-iteration path
/// and the constant-vector gradient agree to first order.
fn check_spectral_converged(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let w = randn(rng, &[4, 6]);
    let (_, u) = largest_singular_value(&w, &unit(rng, 4), 500)?;
    let probe = randn(rng, w.shape());
    check_gradients(&[w], STEP, |t| project(&spectral_normalize(&t[0], &u)?.weight, &probe))
}

fn check_fft(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let n = rng.random_range(3..=9);
    let a = randn(rng, &[2, n]);
    let b = randn(rng, &[2, n]);
    let probe = randn(rng, &[2, n]);
    check_gradients(&[a, b], STEP, |v| project(&rfft_circular_conv(&v[0], &v[1])?, &probe))
}

fn check_count_sketch(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let p = SketchParams::new(7, 5, rng.random())?;
    let x = randn(rng, &[3, 7]);
    let probe = randn(rng, &[3, 5]);
    check_gradients(&[x], STEP, |v| project(&count_sketch(&v[0], &p)?, &probe))
}

fn check_mcb_pool(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let cfg = McbConfig::new(6, 4, 8);
    let p1 = SketchParams::new(6, 8, rng.random())?;
    let p2 = SketchParams::new(4, 8, rng.random())?;
    let x = randn(rng, &[2, 6]);
    let z = randn(rng, &[2, 4]);
    let probe = randn(rng, &[2, 8]);
    check_gradients(&[x, z], STEP, |v| project(&mcb_pool(&v[0], &v[1], &cfg, &p1, &p2)?, &probe))
}

fn check_mcb_fuse(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let cfg = McbConfig::new(4, 3, 4);
    let p1 = SketchParams::new(4, 4, rng.random())?;
    let p2 = SketchParams::new(3, 4, rng.random())?;
    let x = randn(rng, &[2, 4, 2, 2]);
    let z = randn(rng, &[2, 3]);
    let probe = randn(rng, &[2, 4, 2, 2]);
    check_gradients(&[x, z], STEP, |v| project(&mcb_fuse_spatial(&v[0], &v[1], &cfg, &p1, &p2)?, &probe))
}

fn scores(rng: &mut ChaCha8Rng) -> Tensor {
    uniform(rng, &[2, 1, 3, 3], 0.05, 0.95)
}

fn check_d_loss(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let maps: Vec<Tensor> = (0..5).map(|_| scores(rng)).collect();
    check_gradients(&maps, STEP, |v| {
        discriminator_loss(&TripletScores {
            real_uncond: v[0].clone(),
            fake_uncond: v[1].clone(),
            real_cond: Some(v[2].clone()),
            fake_cond: Some(v[3].clone()),
            wrong_cond: Some(v[4].clone()),
        })
    })
}

fn check_g_adv(rng: &mut ChaCha8Rng, form: AdversarialForm) -> Result<GradCheckReport> {
    let maps = [scores(rng), scores(rng)];
    check_gradients(&maps, STEP, |v| generator_adversarial(&v[0], Some(&v[1]), form))
}

fn pyramid(rng: &mut ChaCha8Rng, base: usize, scales: usize) -> Vec<Tensor> {
    (0..scales).map(|i| uniform(rng, &[1, 3, base << i, base << i], -0.9, 0.9)).collect()
}

fn check_l1(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let fake = pyramid(rng, 2, 3);
    let real = ScalePyramid::new(pyramid(rng, 2, 3))?;
    check_gradients(&fake, STEP, |v| l1_multiscale(&ScalePyramid::new(v.to_vec())?, &real))
}

fn check_perceptual_identity(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let f = FeatureNetwork::new(FeatureConfig { shallow_channels: 3, deep_channels: 4, ..FeatureConfig::default() })?;
    let store = f.init(rng.random())?;
    let fake = pyramid(rng, 4, 2);
    let real = ScalePyramid::new(pyramid(rng, 4, 2))?;
    let (a, b) = (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0));
    check_gradients(&fake, STEP, |v| {
        let (p, i) = perceptual_identity(&ScalePyramid::new(v.to_vec())?, &real, &f, &store)?;
        p.mul_scalar(a).add(&i.mul_scalar(b))
    })
}

fn check_attribute(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let q = AttributePredictor::new(AttributeConfig { resolution: 8, channels: vec![4, 4], attribute_dim: 5, ..AttributeConfig::default() })?;
    let store = q.init(rng.random())?;
    let fake = pyramid(rng, 4, 2);
    let real = ScalePyramid::new(pyramid(rng, 4, 2))?;
    check_gradients(&fake, STEP, |v| attribute_loss(&ScalePyramid::new(v.to_vec())?, &real, &q, &store))
}

fn check_composite(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let terms: Vec<Tensor> = (0..5).map(|_| randn(rng, &[1])).collect();
    let w = LossWeights::default();
    check_gradients(&terms, STEP, |v| {
        composite(
            &GeneratorTerms {
                adversarial: Some(v[0].clone()),
                l1: Some(v[1].clone()),
                perceptual: Some(v[2].clone()),
                identity: Some(v[3].clone()),
                attribute: Some(v[4].clone()),
            },
            &w,
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_primitive_passes_on_a_few_seeds() {
        for e in run_suite(2, 11).unwrap() {
            assert!(e.passed(), "{}: {:e}", e.name, e.report.max_rel_error);
            assert!(e.report.entries > 0, "{}", e.name);
        }
    }
}
