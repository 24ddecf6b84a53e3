use std::fs;

use polarsynth::config::Settings;
use polarsynth::pipeline::{dataset, partition, selected_split};
use polarsynth::Error;

#[test]
fn file_then_env_then_override() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ini");
    fs::write(&path, "[train]\nepochs = 3\nlr = 0.001\n[data]\nsubjects = 12\nn_train = 6\n").unwrap();
    let mut s = Settings::from_file(&path).unwrap();
    assert_eq!((s.train.epochs, s.train.lr, s.data.subjects), (3, 1e-3, 12));
    s.apply_env([("POLARSYNTH_TRAIN_EPOCHS".to_string(), "5".to_string()), ("HOME".to_string(), "/x".to_string())]).unwrap();
    assert_eq!(s.train.epochs, 5);
    s.apply_override("train.epochs=8").unwrap();
    assert_eq!(s.train.epochs, 8);
    assert_eq!(s.train.lr, 1e-3);
    s.validate().unwrap();
}

#[test]
fn written_config_reloads_identically() {
    let mut s = Settings::default();
    s.apply_override("train.epochs=4").unwrap();
    s.apply_override("perception.held_out=50").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ini");
    fs::write(&path, s.to_text()).unwrap();
    assert_eq!(Settings::from_file(&path).unwrap().to_text(), s.to_text());
}

#[test]
fn bad_inputs_are_config_errors() {
    let mut s = Settings::default();
    let err = s.apply_override("train.epochz=3").unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert!(err.to_string().contains("train.epochs"), "{err}");
    assert_eq!(err.exit_code(), 2);
    assert!(matches!(s.apply_override("train.epochs=many"), Err(Error::Config(_))));
    assert!(matches!(s.apply_override("no-equals"), Err(Error::Config(_))));
    assert!(matches!(Settings::from_file("/nonexistent/x.ini".as_ref()), Err(Error::Config(_))));
    s.apply_override("data.replicate=999").unwrap();
    assert!(matches!(s.validate(), Err(Error::Config(_))));
}

#[test]
fn replicate_selects_a_different_partition() {
    let mut s = Settings::default();
    for kv in ["data.subjects=10", "data.samples_per_subject=1", "data.n_train=5", "data.replicates=2", "data.resolution=8"] {
        s.apply_override(kv).unwrap();
    }
    let data = dataset(&s).unwrap();
    let first = selected_split(&s, &data).unwrap();
    s.apply_override("data.replicate=2").unwrap();
    let second = selected_split(&s, &data).unwrap();
    assert_ne!(first.train, second.train);
    let (train, test) = partition(&data, &second);
    assert_eq!((train.len(), test.len()), (5, 5));
}
