use polarsynth::data::{
    load_paired_dir, make_splits, make_synthetic_dataset, read_split, subjects, thermal_inverse, write_paired_dir,
    write_split, Modality, PairedSample, Variation,
};
use polarsynth::eval::{build_score_set, per_variation_report, FeatureExtractor, Role, Synthesizer};
use polarsynth::{Result, Tensor};

struct Pixels;

impl FeatureExtractor for Pixels {
    fn features(&self, _: &str, _: Role, image: &Tensor) -> Result<Vec<f64>> {
        // Centred so that cosine similarity tracks structure rather than brightness.
        let v = image.to_vec();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        Ok(v.iter().map(|x| x - m).collect())
    }
}

/// Undoes the probe's channel mix and contrast curve.
struct Inverse;

impl Synthesizer for Inverse {
    fn synthesize(&self, probe: &PairedSample) -> Result<Tensor> {
        let r = probe.probe.shape()[1];
        Tensor::from_vec(&[3, r, r], thermal_inverse(probe.probe.data(), r))
    }
}

#[test]
fn dataset_round_trips_through_disk() {
    let data = make_synthetic_dataset(3, 5, 16, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_paired_dir(dir.path(), &data).unwrap();
    let back = load_paired_dir(dir.path(), Modality::Polar, None).unwrap();
    assert_eq!(back.len(), data.len());
    for (a, b) in data.iter().zip(&back) {
        assert_eq!(a.key(), b.key());
        assert_eq!(a.variation, b.variation);
        assert_eq!(a.attributes, b.attributes);
        for (x, y) in [(&a.probe, &b.probe), (&a.gallery, &b.gallery)] {
            let err = x.data().iter().zip(y.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(err <= 1.0 / 65535.0 + 1e-12, "{}: {err}", a.key());
        }
    }
}

#[test]
fn splits_round_trip_and_stay_disjoint() {
    let data = make_synthetic_dataset(12, 1, 8, 0).unwrap();
    let splits = make_splits(&subjects(&data), 6, 3, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for s in &splits {
        assert!(s.train.iter().all(|t| !s.test.contains(t)));
        assert_eq!(s.train.len() + s.test.len(), 12);
        write_split(dir.path(), s).unwrap();
        assert_eq!(&read_split(dir.path(), s.replicate, 5).unwrap(), s);
    }
}

#[test]
fn generation_is_deterministic_per_seed() {
    let a = make_synthetic_dataset(2, 3, 16, 4).unwrap();
    let b = make_synthetic_dataset(2, 3, 16, 4).unwrap();
    let c = make_synthetic_dataset(2, 3, 16, 5).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.probe.data() == y.probe.data() && x.gallery.data() == y.gallery.data()));
    assert!(a.iter().zip(&c).any(|(x, y)| x.gallery.data() != y.gallery.data()));
}

#[test]
fn pose_is_harder_than_neutral() {
    let data = make_synthetic_dataset(16, 10, 16, 2).unwrap();
    let refs: Vec<&PairedSample> = data.iter().collect();
    let set = build_score_set(&refs, &Inverse, &Pixels).unwrap();
    let report = per_variation_report(&set).unwrap();
    let row = |v| report.rows.iter().find(|r| r.variation == Some(v)).unwrap().clone();
    let (neutral, pose) = (row(Variation::Neutral), row(Variation::Pose));
    assert!(pose.eer > neutral.eer, "pose eer {} vs neutral {}", pose.eer, neutral.eer);
}
