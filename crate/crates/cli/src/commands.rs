use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use log::{info, warn};

use polarsynth::checkpoint::Container;
use polarsynth::data::{
    load_sample, make_synthetic_dataset, read_attribute_file, write_paired_dir, write_png, write_split, Variation,
    LABEL_FILE,
};
use polarsynth::eval::{per_variation_report, replicate_summary, OracleSynthesizer, RocResult, ScoreSet, Synthesizer};
use polarsynth::gradsuite::{run_suite, TOLERANCE};
use polarsynth::losses::LossReport;
use polarsynth::perception::{Perception, PerceptionReport};
use polarsynth::pipeline::{
    dataset, partition, prepare_perception, protocol_splits, selected_split, train_and_score, TermSet,
};
use polarsynth::train::{run_training, RunOptions, Trainer};
use polarsynth::{Error, Result, Tensor};

use crate::rundir::{io, RunDir, CONFIG_FILE};
use crate::{resolve_settings, Common};

pub const PERCEPTION_FILE: &str = "perception.ckpt";
const CHECKPOINT_DIR: &str = "checkpoints";
const LAST_CHECKPOINT: &str = "last.ckpt";

#[derive(Args)]
pub struct TrainArgs {
    /// Perception networks written by finetune-q; prepared afresh when absent.
    #[arg(long)]
    pub perception: Option<PathBuf>,
    /// Continue from a checkpoint written with the same training settings.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop after this many epochs in total without changing the schedule.
    #[arg(long)]
    pub stop_after: Option<usize>,
}

#[derive(Args)]
pub struct SynthArgs {
    /// Training run directory; supplies config.ini and checkpoints/last.ckpt.
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// A sample directory (s0.png ...) or a dataset root of them.
    #[arg(long)]
    pub probe: PathBuf,
    /// Comma-separated 0/1 attribute vector used for every probe.
    #[arg(long)]
    pub attributes: Option<String>,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Training run directory; supplies config.ini and checkpoints/last.ckpt.
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Score the real visible images instead of a generator (upper bound).
    #[arg(long)]
    pub oracle: bool,
    /// Perception networks for --oracle; prepared afresh when absent.
    #[arg(long)]
    pub perception: Option<PathBuf>,
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// Random draws per primitive.
    #[arg(long, default_value_t = 20)]
    pub seeds: usize,
}

#[derive(Args)]
pub struct AblateArgs {
    /// Comma-separated term sets: l1, l1+adv, l1+adv+p+i, full, ...
    #[arg(long, default_value = "l1,l1+adv,l1+adv+p+i,full")]
    pub terms: String,
    /// Comma-separated scale counts.
    #[arg(long, default_value = "1,2,3")]
    pub scales: String,
    /// Protocol replicates to run (at most data.replicates).
    #[arg(long, default_value_t = 1)]
    pub replicates: usize,
}

fn list<T: std::str::FromStr>(what: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|x| x.trim().parse().map_err(|_| Error::Config(format!("{what}: cannot parse {x:?}"))))
        .collect()
}

fn history_text(h: &[LossReport]) -> String {
    h.iter().map(|r| format!("{r}\n")).collect()
}

fn perception_text(r: &PerceptionReport) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "held_out_accuracy = {:.6}", r.held_out_accuracy);
    let _ = writeln!(t, "held_out_subjects = {}", r.held_out_subjects.len());
    let _ = writeln!(t, "feature_final_loss = {:e}", r.features.train.last().copied().unwrap_or(f64::NAN));
    let _ = writeln!(t, "attribute_best_epoch = {}", r.attributes.best_epoch);
    let vals: Vec<String> = r.attributes.val.iter().map(|v| format!("{v:.6}")).collect();
    let _ = writeln!(t, "attribute_val_loss = {}", vals.join(","));
    t
}

fn load_perception(path: &Path) -> Result<Perception> {
    Perception::load(&Container::read(path)?, "")
}

fn save_perception(p: &Perception, path: &Path) -> Result<()> {
    let mut c = Container::new();
    p.save(&mut c, "");
    c.write(path)
}

pub fn gen_data(c: &Common, out: &Path) -> Result<()> {
    let s = resolve_settings(c, None)?;
    if s.data.root.is_some() {
        return Err(Error::Config("gen-data writes synthetic data; leave data.root empty".into()));
    }
    let run = RunDir::create(out, "gen-data", &s)?;
    let d = &s.data;
    let samples = make_synthetic_dataset(d.subjects, d.samples_per_subject, d.resolution, s.train.seed)?;
    write_paired_dir(&run.subdir("data")?, &samples)?;
    let splits = protocol_splits(&s, &samples)?;
    let split_dir = run.subdir("splits")?;
    for sp in &splits {
        write_split(&split_dir, sp)?;
    }
    let mut t = String::new();
    let _ = writeln!(t, "subjects = {}", d.subjects);
    let _ = writeln!(t, "samples = {}", samples.len());
    for v in Variation::ALL {
        let _ = writeln!(t, "variation.{v} = {}", samples.iter().filter(|x| x.variation == v).count());
    }
    let _ = writeln!(t, "splits = {} x {} train subjects", splits.len(), d.n_train);
    run.write("summary.txt", &t)?;
    print!("{t}");
    Ok(())
}

pub fn finetune_q(c: &Common, out: &Path) -> Result<()> {
    let s = resolve_settings(c, None)?;
    let run = RunDir::create(out, "finetune-q", &s)?;
    let samples = dataset(&s)?;
    let split = selected_split(&s, &samples)?;
    let (train, _) = partition(&samples, &split);
    let (perception, report) = prepare_perception(&s, &train)?;
    save_perception(&perception, &run.file(PERCEPTION_FILE))?;
    let text = perception_text(&report);
    run.write("perception.txt", &text)?;
    print!("{text}");
    Ok(())
}

pub fn train(c: &Common, out: &Path, a: &TrainArgs) -> Result<()> {
    let s = resolve_settings(c, None)?;
    let run = RunDir::create(out, "train", &s)?;
    let samples = dataset(&s)?;
    let split = selected_split(&s, &samples)?;
    let (train, _) = partition(&samples, &split);
    let mut trainer = match &a.resume {
        Some(path) => Trainer::load(s.train.clone(), path)?,
        None => {
            let perception = match &a.perception {
                Some(p) => load_perception(p)?,
                None => {
                    let (p, report) = prepare_perception(&s, &train)?;
                    run.write("perception.txt", &perception_text(&report))?;
                    p
                }
            };
            Trainer::new(s.train.clone(), perception)?
        }
    };
    let opts = RunOptions {
        checkpoint_dir: Some(run.file(CHECKPOINT_DIR)),
        checkpoint_every: s.checkpoint_every,
        stop_after: a.stop_after,
    };
    let per_epoch = train.len().div_ceil(s.train.batch_size).max(1) as u64;
    run_training(&mut trainer, &train, &opts, &mut |r| {
        if r.step % per_epoch == 0 {
            info!("{r}");
        }
    })?;
    run.write("losses.log", &history_text(&trainer.history))?;
    let mut t = String::new();
    let _ = writeln!(t, "epochs = {}", trainer.epoch);
    let _ = writeln!(t, "steps = {}", trainer.step);
    if let (Some(first), Some(last)) = (trainer.history.first(), trainer.history.last()) {
        let _ = writeln!(t, "l1_finest_first = {:e}", first.l1_finest);
        let _ = writeln!(t, "l1_finest_last = {:e}", last.l1_finest);
        let _ = writeln!(t, "last = {last}");
    }
    run.write("summary.txt", &t)?;
    print!("{t}");
    Ok(())
}

fn checkpoint_path(run: &Option<PathBuf>, checkpoint: &Option<PathBuf>) -> Result<PathBuf> {
    checkpoint
        .clone()
        .or_else(|| run.as_ref().map(|d| d.join(CHECKPOINT_DIR).join(LAST_CHECKPOINT)))
        .ok_or_else(|| Error::Config("give --run or --checkpoint".into()))
}

fn has_probe(dir: &Path) -> bool {
    dir.join("s0.png").is_file()
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).map_err(|e| io(dir, e))? {
        let p = e.map_err(|e| io(dir, e))?.path();
        if p.is_dir() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// `(key, dir)` for a single sample directory or every sample below a
/// dataset root (one or two levels deep).
fn probe_dirs(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    if has_probe(root) {
        let name = root.file_name().map_or_else(|| "probe".into(), |n| n.to_string_lossy().into_owned());
        return Ok(vec![(name, root.to_path_buf())]);
    }
    let mut out = Vec::new();
    for a in sorted_subdirs(root)? {
        let an = a.file_name().expect("listed entry").to_string_lossy().into_owned();
        if has_probe(&a) {
            out.push((an, a));
            continue;
        }
        for b in sorted_subdirs(&a)? {
            if has_probe(&b) {
                let bn = b.file_name().expect("listed entry").to_string_lossy().into_owned();
                out.push((format!("{an}/{bn}"), b));
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{}: no probe images (s0.png) found", root.display())));
    }
    Ok(out)
}

fn to_rgb(img: &Tensor) -> Result<Tensor> {
    match img.shape()[0] {
        3 => Ok(img.clone()),
        1 => Tensor::concat(&[img.clone(), img.clone(), img.clone()], 0),
        n => Err(Error::Data(format!("cannot show a {n}-channel image"))),
    }
}

/// Panels side by side with a 2-pixel black gap, bottom-aligned.
fn grid(panels: &[Tensor]) -> Result<Tensor> {
    const GAP: usize = 2;
    let rgb: Vec<Tensor> = panels.iter().map(to_rgb).collect::<Result<_>>()?;
    let h = rgb.iter().map(|t| t.shape()[1]).max().unwrap_or(0);
    let w = rgb.iter().map(|t| t.shape()[2]).sum::<usize>() + GAP * rgb.len().saturating_sub(1);
    let mut out = vec![-1.0; 3 * h * w];
    let mut x0 = 0;
    for t in &rgb {
        let [_, th, tw] = *t.shape() else { unreachable!() };
        let d = t.data();
        for c in 0..3 {
            for y in 0..th {
                let dst = c * h * w + (y + h - th) * w + x0;
                out[dst..dst + tw].copy_from_slice(&d[c * th * tw + y * tw..c * th * tw + (y + 1) * tw]);
            }
        }
        x0 += tw + GAP;
    }
    Tensor::from_vec(&[3, h, w], out)
}

pub fn synth(c: &Common, out: &Path, a: &SynthArgs) -> Result<()> {
    let s = resolve_settings(c, a.run.as_ref().map(|d| d.join(CONFIG_FILE)))?;
    let trainer = Trainer::load(s.train.clone(), &checkpoint_path(&a.run, &a.checkpoint)?)?;
    let run = RunDir::create(out, "synth", &s)?;
    let fixed: Option<Vec<f64>> = a.attributes.as_deref().map(|v| list("--attributes", v)).transpose()?;
    let labels: BTreeMap<String, Vec<f64>> = if a.probe.join(LABEL_FILE).is_file() {
        read_attribute_file(&a.probe.join(LABEL_FILE))?.into_iter().map(|r| (r.path, r.attributes)).collect()
    } else {
        BTreeMap::new()
    };
    let r = s.data.resolution;
    let dim = trainer.perception.attributes.config.attribute_dim;
    let mut written = 0;
    for (key, dir) in probe_dirs(&a.probe)? {
        let (probe, visible) = load_sample(&dir, trainer.config.modality, None)?;
        if probe.shape()[1..] != [r, r] {
            return Err(Error::Config(format!(
                "{}: probe is {}x{}, the model expects {r}x{r}",
                dir.display(),
                probe.shape()[1],
                probe.shape()[2]
            )));
        }
        let attrs = match (&fixed, labels.get(&key), &visible) {
            (Some(f), _, _) => f.clone(),
            (None, Some(l), _) => l.clone(),
            (None, None, Some(v)) => {
                let [c3, h, w] = *v.shape() else { unreachable!() };
                trainer.perception.predict_attributes(&v.reshape(&[1, c3, h, w])?)?.remove(0)
            }
            (None, None, None) if !s.train.generator.fuse_attributes => vec![0.0; dim],
            (None, None, None) => {
                return Err(Error::Data(format!(
                    "{key}: no attributes; pass --attributes or provide visible.png or {LABEL_FILE}"
                )))
            }
        };
        if attrs.len() != dim {
            return Err(Error::Config(format!("{key}: {} attributes given, the model expects {dim}", attrs.len())));
        }
        let pyramid = trainer.synthesize(&probe, &attrs)?;
        let dst = run.subdir(&key.replace('/', "_"))?;
        let mut panels = vec![probe.clone()];
        for (i, img) in pyramid.images().iter().enumerate() {
            let img = img.reshape(&img.shape()[1..])?;
            write_png(&dst.join(format!("y{}_{}.png", i + 1, img.shape()[1])), &img)?;
            if i + 1 == pyramid.len() {
                panels.push(img);
            }
        }
        panels.extend(visible);
        write_png(&dst.join("grid.png"), &grid(&panels)?)?;
        written += 1;
    }
    let t = format!("probes = {written}\nscales = {}\n", trainer.config.num_scales());
    run.write("summary.txt", &t)?;
    print!("{t}");
    Ok(())
}

fn write_scores(run: &RunDir, prefix: &str, scores: &ScoreSet, roc: &RocResult) -> Result<String> {
    scores.write_csv(&run.file(&format!("{prefix}scores.csv")))?;
    roc.write_points(&run.file(&format!("{prefix}roc.csv")))?;
    let report = per_variation_report(scores)?;
    let mut t = report.to_string();
    let _ = writeln!(t, "auc = {:.6}", roc.auc);
    let _ = writeln!(t, "eer = {:.6}", roc.eer);
    if roc.degenerate {
        let _ = writeln!(t, "# degenerate ROC: a single distinct score");
    }
    run.write(&format!("{prefix}report.txt"), &t)?;
    Ok(t)
}

pub fn eval(c: &Common, out: &Path, a: &EvalArgs) -> Result<()> {
    let s = resolve_settings(c, a.run.as_ref().map(|d| d.join(CONFIG_FILE)))?;
    let samples = dataset(&s)?;
    let split = selected_split(&s, &samples)?;
    let (train, test) = partition(&samples, &split);
    let trainer = if a.oracle { None } else { Some(Trainer::load(s.train.clone(), &checkpoint_path(&a.run, &a.checkpoint)?)?) };
    let run = RunDir::create(out, "eval", &s)?;
    let perception = match (&trainer, &a.perception) {
        (Some(t), _) => t.perception.clone(),
        (None, Some(p)) => load_perception(p)?,
        (None, None) => prepare_perception(&s, &train)?.0,
    };
    let synth: &dyn Synthesizer = match &trainer {
        Some(t) => t,
        None => &OracleSynthesizer,
    };
    let scores = polarsynth::pipeline::score(&s, synth, &perception, &test)?;
    let roc = scores.roc()?;
    let t = write_scores(&run, "", &scores, &roc)?;
    print!("{t}");
    Ok(())
}

pub fn gradcheck(c: &Common, out: &Path, a: &GradcheckArgs) -> Result<()> {
    let s = resolve_settings(c, None)?;
    let run = RunDir::create(out, "gradcheck", &s)?;
    let entries = run_suite(a.seeds, s.train.seed)?;
    let mut t = String::from("primitive,seeds,entries,max_rel_error,pass\n");
    let mut worst: f64 = 0.0;
    for e in &entries {
        worst = worst.max(e.report.max_rel_error);
        let _ = writeln!(t, "{},{},{},{:e},{}", e.name, e.seeds, e.report.entries, e.report.max_rel_error, e.passed());
    }
    let _ = writeln!(t, "# max relative error {worst:e} (tolerance {TOLERANCE:e})");
    run.write("gradcheck.txt", &t)?;
    print!("{t}");
    let failed: Vec<&str> = entries.iter().filter(|e| !e.passed()).map(|e| e.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("gradient check failed for {}", failed.join(", "))))
    }
}

pub fn ablate(c: &Common, out: &Path, a: &AblateArgs) -> Result<()> {
    let base = resolve_settings(c, None)?;
    let terms: Vec<TermSet> = list("--terms", &a.terms)?;
    let scales: Vec<usize> = list("--scales", &a.scales)?;
    if a.replicates == 0 || a.replicates > base.data.replicates {
        return Err(Error::Config(format!(
            "--replicates {} must be between 1 and data.replicates {}",
            a.replicates, base.data.replicates
        )));
    }
    let run = RunDir::create(out, "ablate", &base)?;
    let samples = dataset(&base)?;
    let splits = protocol_splits(&base, &samples)?;
    let mut results: BTreeMap<(usize, usize), Vec<RocResult>> = BTreeMap::new();
    for split in &splits[..a.replicates] {
        let (train, test) = partition(&samples, split);
        let mut rep = base.clone();
        rep.data.replicate = split.replicate;
        let (perception, report) = prepare_perception(&rep, &train)?;
        run.write(&format!("perception_rep{}.txt", split.replicate), &perception_text(&report))?;
        for (ti, t) in terms.iter().enumerate() {
            for (si, &n) in scales.iter().enumerate() {
                let mut s = rep.clone();
                t.apply(&mut s);
                s.set("model.num_scales", &n.to_string())?;
                s.validate()?;
                let label = format!("{t}_s{n}");
                info!("replicate {}: {label}", split.replicate);
                let b = train_and_score(&s, &perception, &train, &test, &RunOptions::default(), &mut |_| {})?;
                let prefix = format!("{label}/rep{}/", split.replicate);
                run.write(&format!("{prefix}{CONFIG_FILE}"), &s.to_text())?;
                run.write(&format!("{prefix}losses.log"), &history_text(&b.trainer.history))?;
                write_scores(&run, &prefix, &b.scores, &b.roc)?;
                if !b.trainer.history.iter().all(LossReport::all_finite) {
                    warn!("{label}: non-finite loss recorded");
                }
                results.entry((ti, si)).or_default().push(b.roc);
            }
        }
    }
    let mut t = String::from("terms,scales,summary\n");
    for ((ti, si), rocs) in &results {
        let _ = writeln!(t, "{},{},{}", terms[*ti], scales[*si], replicate_summary(rocs));
    }
    run.write("ablation.txt", &t)?;
    print!("{t}");
    Ok(())
}
