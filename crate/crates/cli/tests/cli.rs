use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "data.subjects=4",
    "data.samples_per_subject=2",
    "data.n_train=2",
    "data.replicates=1",
    "data.resolution=16",
    "model.num_scales=2",
    "model.base_channels=4",
    "model.max_channels=8",
    "model.d_base_channels=4",
    "model.d_max_channels=8",
    "train.epochs=2",
    "perception.feature_epochs=1",
    "perception.attribute_epochs=1",
    "perception.attribute_subjects=20",
    "perception.held_out=5",
];

fn polarsynth(args: &[&str], out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_polarsynth"));
    cmd.args(args).arg("--out").arg(out).env("RUST_LOG", "warn");
    for (k, _) in std::env::vars() {
        if k.starts_with("POLARSYNTH_") {
            cmd.env_remove(k);
        }
    }
    cmd.output().unwrap()
}

fn tiny(command: &[&str], out: &Path) -> Output {
    let mut args: Vec<&str> = command.to_vec();
    for kv in TINY {
        args.extend(["--set", kv]);
    }
    polarsynth(&args, out)
}

fn ok(o: &Output) {
    assert!(o.status.success(), "status {:?}\nstderr:\n{}", o.status, String::from_utf8_lossy(&o.stderr));
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_config_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = polarsynth(&["gen-data", "--config", "/nonexistent/run.ini"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/run.ini"), "{}", stderr(&o));
}

#[test]
fn unknown_key_exits_2_and_lists_valid_keys() {
    let dir = tempfile::tempdir().unwrap();
    let o = polarsynth(&["gen-data", "--set", "train.epoks=3"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("train.epochs"), "{}", stderr(&o));
}

#[test]
fn unknown_key_in_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.ini");
    fs::write(&cfg, "[model]\nwidth = 3\n").unwrap();
    let o = polarsynth(&["gen-data", "--config", cfg.to_str().unwrap()], &dir.path().join("run"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = polarsynth(&["eval", "--checkpoint", "/nonexistent/last.ckpt"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn gradcheck_reports_every_primitive() {
    let dir = tempfile::tempdir().unwrap();
    let o = polarsynth(&["gradcheck", "--seeds", "2"], dir.path());
    ok(&o);
    let text = fs::read_to_string(dir.path().join("gradcheck.txt")).unwrap();
    for name in ["conv2d", "count_sketch", "mcb_fuse_spatial", "loss_composite"] {
        assert!(text.contains(name), "{name} missing from\n{text}");
    }
    assert!(dir.path().join("config.ini").is_file());
    let meta = fs::read_to_string(dir.path().join("run.txt")).unwrap();
    assert!(meta.contains("command = gradcheck") && meta.contains("build = "), "{meta}");
}

#[test]
fn gen_data_writes_layout_and_splits() {
    let dir = tempfile::tempdir().unwrap();
    ok(&tiny(&["gen-data"], dir.path()));
    assert!(dir.path().join("data/s000/00/s0.png").is_file());
    assert!(dir.path().join("data/s003/01/visible.png").is_file());
    assert!(dir.path().join("data/attributes.csv").is_file());
    assert!(fs::read_dir(dir.path().join("splits")).unwrap().count() >= 1);
    assert!(dir.path().join("config.ini").is_file() && dir.path().join("run.txt").is_file());
}

#[test]
fn train_synth_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (run, rerun) = (dir.path().join("train"), dir.path().join("train2"));
    ok(&tiny(&["train"], &run));
    ok(&tiny(&["train"], &rerun));
    assert!(run.join("checkpoints/last.ckpt").is_file());
    let log = fs::read_to_string(run.join("losses.log")).unwrap();
    assert_eq!(log, fs::read_to_string(rerun.join("losses.log")).unwrap());
    assert_eq!(fs::read(run.join("checkpoints/last.ckpt")).unwrap(), fs::read(rerun.join("checkpoints/last.ckpt")).unwrap());

    let data = dir.path().join("gen");
    ok(&tiny(&["gen-data"], &data));
    let synth = dir.path().join("synth");
    let o = polarsynth(
        &["synth", "--run", run.to_str().unwrap(), "--probe", data.join("data").to_str().unwrap()],
        &synth,
    );
    ok(&o);
    let sample = synth.join("s000_00");
    assert!(sample.join("y1_8.png").is_file() && sample.join("y2_16.png").is_file());
    assert!(sample.join("grid.png").is_file());
    assert_eq!(fs::read_dir(synth.join("s002_01")).unwrap().count(), 3);

    let eval = dir.path().join("eval");
    ok(&polarsynth(&["eval", "--run", run.to_str().unwrap()], &eval));
    let report = fs::read_to_string(eval.join("report.txt")).unwrap();
    assert!(report.contains("auc"), "{report}");
    assert!(eval.join("scores.csv").is_file() && eval.join("roc.csv").is_file());
}

#[test]
fn synth_rejects_probe_of_wrong_size() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("train");
    ok(&tiny(&["train", "--stop-after", "1"], &run));
    let data = dir.path().join("gen");
    let mut args = vec!["gen-data"];
    for kv in TINY {
        args.extend(["--set", kv]);
    }
    args.extend(["--set", "data.resolution=32"]);
    ok(&polarsynth(&args, &data));
    let o = polarsynth(
        &["synth", "--run", run.to_str().unwrap(), "--probe", data.join("data/s000/00").to_str().unwrap()],
        &dir.path().join("synth"),
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
