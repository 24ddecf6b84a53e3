//! Independent reference implementations used as oracles.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use polarsynth::mcb::{mcb_pool_raw, SketchParams};
use polarsynth::Tensor;

/// Fraction of (genuine, impostor) pairs ordered correctly, ties counted half.
pub fn mann_whitney(genuine: &[f64], impostor: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &g in genuine {
        for &i in impostor {
            wins += if g > i {
                1.0
            } else if g == i {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (genuine.len() * impostor.len()) as f64
}

/// Operating points over the distinct scores sorted high to low. At the
/// continuous point `θ` everything above level `k = ⌊θ⌋` is accepted and the
/// level itself with probability `θ − k`.
struct Levels {
    /// Items strictly above each level: (genuine, impostor).
    above: Vec<(f64, f64)>,
    at: Vec<(f64, f64)>,
    ng: f64,
    ni: f64,
}

impl Levels {
    fn new(genuine: &[f64], impostor: &[f64]) -> Levels {
        let mut values: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
        values.sort_by(|a, b| b.partial_cmp(a).unwrap());
        values.dedup();
        let mut at = vec![(0.0, 0.0); values.len()];
        let rank = |x: f64| values.binary_search_by(|l| x.partial_cmp(l).unwrap()).unwrap();
        for &g in genuine {
            at[rank(g)].0 += 1.0;
        }
        for &i in impostor {
            at[rank(i)].1 += 1.0;
        }
        let mut above = Vec::with_capacity(at.len());
        let mut acc = (0.0, 0.0);
        for &(g, i) in &at {
            above.push(acc);
            acc = (acc.0 + g, acc.1 + i);
        }
        Levels { above, at, ng: genuine.len() as f64, ni: impostor.len() as f64 }
    }

    fn span(&self) -> f64 {
        self.at.len() as f64
    }

    /// `(FAR, FRR)` at `theta`.
    fn rates(&self, theta: f64) -> (f64, f64) {
        let k = theta.floor() as usize;
        if k >= self.at.len() {
            return (1.0, 0.0);
        }
        let p = theta - k as f64;
        let g = self.above[k].0 + p * self.at[k].0;
        let i = self.above[k].1 + p * self.at[k].1;
        (i / self.ni, 1.0 - g / self.ng)
    }
}

/// EER from a dense grid over the continuous operating point followed by
/// bisection on the bracketing cell, independent of any ROC construction.
pub fn eer_grid(genuine: &[f64], impostor: &[f64]) -> f64 {
    let lv = Levels::new(genuine, impostor);
    let span = lv.span();
    let gap = |t: f64| {
        let (far, frr) = lv.rates(t);
        far - frr
    };
    // FAR − FRR rises from −1 at θ = 0 to +1 at θ = span.
    let steps = 64 * lv.at.len();
    let (mut lo, mut hi) = (0.0, span);
    for s in 1..=steps {
        let t = span * s as f64 / steps as f64;
        if gap(t) >= 0.0 {
            lo = span * (s - 1) as f64 / steps as f64;
            hi = t;
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gap(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lv.rates(hi).0
}

/// `out[k] = Σ_i a[i] b[(k − i) mod d]` by the definition.
pub fn circular_conv_direct(a: &[f64], b: &[f64]) -> Vec<f64> {
    let d = a.len();
    (0..d).map(|k| (0..d).map(|i| a[i] * b[(k + d - i) % d]).sum()).collect()
}

pub fn sketch_direct(v: &[f64], p: &SketchParams) -> Vec<f64> {
    let mut out = vec![0.0; p.sketch_dim];
    for (i, &x) in v.iter().enumerate() {
        out[p.hash[i]] += p.sign[i] * x;
    }
    out
}

/// Count sketch of the materialized outer product `a ⊗ b` with the
/// combined hash `(h1(i) + h2(j)) mod d` and sign `s1(i) s2(j)`.
pub fn outer_product_sketch(a: &[f64], b: &[f64], p1: &SketchParams, p2: &SketchParams) -> Vec<f64> {
    let d = p1.sketch_dim;
    let mut out = vec![0.0; d];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[(p1.hash[i] + p2.hash[j]) % d] += p1.sign[i] * p2.sign[j] * x * y;
        }
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn uniform_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Genuine and impostor scores on a coarse grid so ties between and within
/// classes are common.
pub fn random_scores(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let ng = rng.random_range(1..60);
    let ni = rng.random_range(1..120);
    let shift = rng.random_range(0.0..2.0);
    let levels = rng.random_range(4..400) as f64;
    let q = |x: f64| (x * levels).round() / levels;
    let noise = Normal::new(0.0, 1.0).unwrap();
    let g = (0..ng).map(|_| q(shift + noise.sample(rng))).collect();
    let i = (0..ni).map(|_| q(noise.sample(rng))).collect();
    (g, i)
}

pub fn mcb_raw(a: &[f64], b: &[f64], p1: &SketchParams, p2: &SketchParams) -> Vec<f64> {
    let ta = Tensor::from_vec(&[a.len()], a.to_vec()).unwrap();
    let tb = Tensor::from_vec(&[b.len()], b.to_vec()).unwrap();
    mcb_pool_raw(&ta, &tb, p1, p2).unwrap().to_vec()
}

/// Worst disagreement of the FFT path with the direct convolution of the
/// sketches and with the sketch of the materialized outer product, over
/// `trials` random draws with every dimension in `1..=64`.
pub fn mcb_exactness(trials: u64, seed: u64) -> f64 {
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let n1 = rng.random_range(1..=64);
        let n2 = rng.random_range(1..=64);
        let d = rng.random_range(1..=64);
        let p1 = SketchParams::new(n1, d, 2 * trial).unwrap();
        let p2 = SketchParams::new(n2, d, 2 * trial + 1).unwrap();
        let (a, b) = (uniform_vector(&mut rng, n1), uniform_vector(&mut rng, n2));
        let fft = mcb_raw(&a, &b, &p1, &p2);
        let direct = circular_conv_direct(&sketch_direct(&a, &p1), &sketch_direct(&b, &p2));
        let outer = outer_product_sketch(&a, &b, &p1, &p2);
        worst = worst.max(max_abs_diff(&fft, &direct)).max(max_abs_diff(&fft, &outer));
    }
    worst
}

/// Relative error of the sketch-seed average of `<mcb(a, b), mcb(c, e)>`
/// against `<a, c><b, e>`, for correlated pairs so the target is far from 0.
pub fn mcb_unbiasedness(seeds: u64) -> f64 {
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(5);
    let (n1, n2, d) = (8, 4, 16);
    let a = uniform_vector(&mut rng, n1);
    let b = uniform_vector(&mut rng, n2);
    let c: Vec<f64> = a.iter().map(|x| x + 0.3 * rng.random_range(-1.0..1.0)).collect();
    let e: Vec<f64> = b.iter().map(|x| x + 0.3 * rng.random_range(-1.0..1.0)).collect();
    let exact = dot(&a, &c) * dot(&b, &e);
    let mean = (0..seeds)
        .map(|s| {
            let p1 = SketchParams::new(n1, d, 10_000 + 2 * s).unwrap();
            let p2 = SketchParams::new(n2, d, 10_001 + 2 * s).unwrap();
            dot(&mcb_raw(&a, &b, &p1, &p2), &mcb_raw(&c, &e, &p1, &p2))
        })
        .sum::<f64>()
        / seeds as f64;
    (mean - exact).abs() / exact.abs()
}
