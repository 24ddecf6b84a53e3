use std::time::{Duration, Instant};

use polarsynth::gradsuite::{primitives, run_suite, TOLERANCE};

#[test]
fn every_primitive_matches_central_differences() {
    let t0 = Instant::now();
    let suite = run_suite(20, 0).unwrap();
    let elapsed = t0.elapsed();
    assert_eq!(suite.len(), primitives().len());
    for e in &suite {
        assert_eq!(e.seeds, 20);
        assert!(e.report.entries > 0, "{} checked nothing", e.name);
        assert!(e.passed(), "{}: max rel error {:e} >= {TOLERANCE:e}", e.name, e.report.max_rel_error);
    }
    assert!(elapsed < Duration::from_secs(120), "suite took {elapsed:?}");
}

#[test]
fn suite_covers_the_required_primitives() {
    let names = primitives();
    for needed in ["conv2d", "conv_transpose2d", "tanh", "spectral_norm_fixed", "fft_circular_conv", "count_sketch", "mcb_fuse_spatial", "loss_composite"] {
        assert!(names.contains(&needed), "missing {needed}");
    }
}
