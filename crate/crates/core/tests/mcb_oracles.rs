mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{max_abs_diff, mcb_exactness, mcb_raw as raw, mcb_unbiasedness, sketch_direct, uniform_vector as vector};
use polarsynth::mcb::{count_sketch, SketchParams};
use polarsynth::tensor::rfft_circular_conv;
use polarsynth::Tensor;

#[test]
fn fft_path_matches_both_direct_forms() {
    let worst = mcb_exactness(200, 7);
    assert!(worst < 1e-8, "max deviation {worst:e}");
}

#[test]
fn count_sketch_matches_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = SketchParams::new(40, 16, 11).unwrap();
    let v = vector(&mut rng, 80);
    let got = count_sketch(&Tensor::from_vec(&[2, 40], v.clone()).unwrap(), &p).unwrap().to_vec();
    let mut want = sketch_direct(&v[..40], &p);
    want.extend(sketch_direct(&v[40..], &p));
    assert!(max_abs_diff(&got, &want) < 1e-12);
}

#[test]
fn inner_products_are_unbiased_over_sketch_seeds() {
    let rel = mcb_unbiasedness(1000);
    assert!(rel < 0.05, "relative error {rel}");
}

#[test]
fn rfft_convolution_is_commutative() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for d in [1, 2, 3, 7, 16, 33, 64] {
        let a = Tensor::from_vec(&[d], vector(&mut rng, d)).unwrap();
        let b = Tensor::from_vec(&[d], vector(&mut rng, d)).unwrap();
        let ab = rfft_circular_conv(&a, &b).unwrap().to_vec();
        let ba = rfft_circular_conv(&b, &a).unwrap().to_vec();
        assert!(max_abs_diff(&ab, &ba) < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pooling_is_bilinear(
        seed in 0u64..10_000,
        n1 in 1usize..24,
        n2 in 1usize..24,
        d in 1usize..32,
        alpha in -3.0f64..3.0,
        beta in -3.0f64..3.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p1 = SketchParams::new(n1, d, seed).unwrap();
        let p2 = SketchParams::new(n2, d, seed + 1).unwrap();
        let (a, a2) = (vector(&mut rng, n1), vector(&mut rng, n1));
        let (b, b2) = (vector(&mut rng, n2), vector(&mut rng, n2));

        let mix: Vec<f64> = a.iter().zip(&a2).map(|(x, y)| alpha * x + beta * y).collect();
        let lhs = raw(&mix, &b, &p1, &p2);
        let rhs: Vec<f64> = raw(&a, &b, &p1, &p2).iter().zip(raw(&a2, &b, &p1, &p2)).map(|(x, y)| alpha * x + beta * y).collect();
        prop_assert!(max_abs_diff(&lhs, &rhs) < 1e-9);

        let mix: Vec<f64> = b.iter().zip(&b2).map(|(x, y)| alpha * x + beta * y).collect();
        let lhs = raw(&a, &mix, &p1, &p2);
        let rhs: Vec<f64> = raw(&a, &b, &p1, &p2).iter().zip(raw(&a, &b2, &p1, &p2)).map(|(x, y)| alpha * x + beta * y).collect();
        prop_assert!(max_abs_diff(&lhs, &rhs) < 1e-9);
    }

    #[test]
    fn sketch_preserves_total_signed_mass(seed in 0u64..10_000, n in 1usize..64, d in 1usize..64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = SketchParams::new(n, d, seed).unwrap();
        let v = vector(&mut rng, n);
        let signed: f64 = v.iter().zip(&p.sign).map(|(x, s)| x * s).sum();
        let s = count_sketch(&Tensor::from_vec(&[n], v).unwrap(), &p).unwrap().to_vec();
        prop_assert!((s.iter().sum::<f64>() - signed).abs() < 1e-12);
    }
}
