use polarsynth::data::{make_synthetic_dataset, PairedSample};
use polarsynth::losses::LossReport;
use polarsynth::perception::Perception;
use polarsynth::train::{run_training, RunOptions, TrainConfig, Trainer};

fn bits(history: &[LossReport]) -> Vec<Vec<u64>> {
    history
        .iter()
        .map(|r| {
            let mut v = vec![r.adv_g, r.l1, r.perceptual, r.identity, r.attribute, r.total, r.l1_finest];
            v.extend(&r.adv_d);
            v.into_iter().map(f64::to_bits).collect()
        })
        .collect()
}

fn config() -> TrainConfig {
    TrainConfig { epochs: 3, seed: 11, ..TrainConfig::default() }
}

fn fresh() -> Trainer {
    Trainer::new(config(), Perception::untrained(4, 2).unwrap()).unwrap()
}

#[test]
fn same_seed_same_history_and_resume_from_disk_matches() {
    let data = make_synthetic_dataset(4, 2, 32, 1).unwrap();
    let refs: Vec<&PairedSample> = data.iter().collect();

    let mut a = fresh();
    run_training(&mut a, &refs, &RunOptions::default(), &mut |_| {}).unwrap();
    let mut b = fresh();
    run_training(&mut b, &refs, &RunOptions::default(), &mut |_| {}).unwrap();
    assert_eq!(bits(&a.history), bits(&b.history));
    assert_eq!(a.g.checksum(), b.g.checksum());
    assert!(a.history.iter().all(|r| r.total.is_finite()));

    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions { checkpoint_dir: Some(dir.path().to_path_buf()), checkpoint_every: 1, stop_after: Some(1) };
    let mut first = fresh();
    run_training(&mut first, &refs, &opts, &mut |_| {}).unwrap();
    assert!(dir.path().join("epoch0001.ckpt").exists());
    let mut resumed = Trainer::load(config(), &dir.path().join("last.ckpt")).unwrap();
    assert_eq!(resumed.epoch, 1);
    run_training(&mut resumed, &refs, &RunOptions::default(), &mut |_| {}).unwrap();
    assert_eq!(bits(&resumed.history), bits(&a.history));
    assert_eq!(resumed.g.checksum(), a.g.checksum());
    for (x, y) in resumed.d.iter().zip(&a.d) {
        assert_eq!(x.checksum(), y.checksum());
    }
}

#[test]
fn different_seed_changes_the_run() {
    let data = make_synthetic_dataset(2, 2, 32, 1).unwrap();
    let refs: Vec<&PairedSample> = data.iter().collect();
    let mut a = fresh();
    let mut b = Trainer::new(TrainConfig { seed: 12, ..config() }, Perception::untrained(4, 2).unwrap()).unwrap();
    let once = RunOptions { stop_after: Some(1), ..Default::default() };
    run_training(&mut a, &refs, &once, &mut |_| {}).unwrap();
    run_training(&mut b, &refs, &once, &mut |_| {}).unwrap();
    assert_ne!(bits(&a.history), bits(&b.history));
}

#[test]
fn synthesized_pyramid_is_bounded() {
    let data = make_synthetic_dataset(1, 1, 32, 1).unwrap();
    let t = fresh();
    let z = t.attributes_for(&data[0]).unwrap();
    let pyr = t.synthesize(&data[0].probe, &z).unwrap();
    assert_eq!(pyr.resolutions(), vec![8, 16, 32]);
    assert!(pyr.images().iter().all(|i| i.data().iter().all(|v| v.abs() <= 1.0)));
}
