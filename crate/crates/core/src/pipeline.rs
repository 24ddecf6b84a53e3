//! End-to-end steps shared by the command line and the benchmark tests:
//! data loading, perception preparation, training and scoring.

use std::fmt;
use std::str::FromStr;

use log::info;

use crate::config::{EvalSettings, Settings};
use crate::data::{load_paired_dir, make_splits, make_synthetic_dataset, subjects, PairedSample, ProtocolSplit};
use crate::error::{Error, Result};
use crate::eval::{build_score_set, ExternalFeatures, FeatureExtractor, RocResult, ScoreSet, Synthesizer, TapExtractor};
use crate::perception::{fit_attributes, pretrain_features, Perception, PerceptionReport};
use crate::losses::LossReport;
use crate::seed::derive_seed;
use crate::train::{run_training, RunOptions, Trainer};

/// The dataset under `data.root`, or the synthetic one when unset.
pub fn dataset(s: &Settings) -> Result<Vec<PairedSample>> {
    match &s.data.root {
        Some(root) => load_paired_dir(root, s.train.modality, Some(s.data.resolution)),
        None => make_synthetic_dataset(s.data.subjects, s.data.samples_per_subject, s.data.resolution, s.train.seed),
    }
}

pub fn protocol_splits(s: &Settings, samples: &[PairedSample]) -> Result<Vec<ProtocolSplit>> {
    make_splits(&subjects(samples), s.data.n_train, s.data.replicates, s.train.seed)
}

/// The split selected by `data.replicate`.
pub fn selected_split(s: &Settings, samples: &[PairedSample]) -> Result<ProtocolSplit> {
    let mut all = protocol_splits(s, samples)?;
    if s.data.replicate == 0 || s.data.replicate > all.len() {
        return Err(Error::Config(format!("data.replicate {} is not one of 1..={}", s.data.replicate, all.len())));
    }
    Ok(all.swap_remove(s.data.replicate - 1))
}

/// Samples of `split` as (train, test).
pub fn partition<'a>(samples: &'a [PairedSample], split: &ProtocolSplit) -> (Vec<&'a PairedSample>, Vec<&'a PairedSample>) {
    samples.iter().partition(|x| split.train.binary_search(&x.subject_id).is_ok())
}

/// Labelled set for Q: a generated one-sample-per-subject set drawn from a
/// seed stream disjoint from the paired data, or the training split itself.
pub fn attribute_samples(s: &Settings, train: &[&PairedSample]) -> Result<Vec<PairedSample>> {
    let n = s.perception.attribute_subjects;
    if n == 0 {
        return Ok(train.iter().map(|x| (*x).clone()).collect());
    }
    make_synthetic_dataset(n, 1, s.data.resolution, derive_seed(s.train.seed, "attribute_set"))
}

/// Pretrains F on the training split and fine-tunes Q.
pub fn prepare_perception(s: &Settings, train: &[&PairedSample]) -> Result<(Perception, PerceptionReport)> {
    let (mut perception, features) = pretrain_features(train, &s.perception.feature_fit())?;
    info!("feature network pretrained, final loss {:.4}", features.train.last().copied().unwrap_or(f64::NAN));
    let labelled = attribute_samples(s, train)?;
    let refs: Vec<&PairedSample> = labelled.iter().collect();
    let (attributes, held_out_accuracy, held_out_subjects) =
        fit_attributes(&mut perception, &refs, s.perception.held_out, &s.perception.attribute_fit())?;
    info!("attribute predictor held-out accuracy {held_out_accuracy:.4}");
    Ok((perception, PerceptionReport { features, attributes, held_out_accuracy, held_out_subjects }))
}

pub fn extractor<'a>(eval: &EvalSettings, perception: &'a Perception) -> Result<Box<dyn FeatureExtractor + 'a>> {
    Ok(match &eval.feature_file {
        Some(path) => Box::new(ExternalFeatures::read(path)?),
        None => Box::new(TapExtractor { network: &perception.features, store: &perception.feature_store, tap: eval.tap }),
    })
}

pub fn score(s: &Settings, synth: &dyn Synthesizer, perception: &Perception, test: &[&PairedSample]) -> Result<ScoreSet> {
    build_score_set(test, synth, extractor(&s.eval, perception)?.as_ref())
}

/// A subset of loss terms. L1 is always on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TermSet {
    pub adv: bool,
    pub perceptual: bool,
    pub identity: bool,
    pub attribute: bool,
}

impl TermSet {
    pub const FULL: TermSet = TermSet { adv: true, perceptual: true, identity: true, attribute: true };
    pub const L1: TermSet = TermSet { adv: false, perceptual: false, identity: false, attribute: false };

    pub fn apply(&self, s: &mut Settings) {
        s.train.use_adv = self.adv;
        s.train.use_perceptual = self.perceptual;
        s.train.use_identity = self.identity;
        s.train.use_attribute = self.attribute;
    }
}

impl FromStr for TermSet {
    type Err = Error;

    /// `full`, or `l1` joined by `+` with any of `adv`, `p`, `i`, `a`.
    fn from_str(v: &str) -> Result<TermSet> {
        let v = v.trim();
        if v == "full" {
            return Ok(TermSet::FULL);
        }
        let mut t = TermSet::L1;
        let mut l1 = false;
        for part in v.split('+').map(str::trim) {
            match part {
                "l1" => l1 = true,
                "adv" => t.adv = true,
                "p" => t.perceptual = true,
                "i" => t.identity = true,
                "a" => t.attribute = true,
                _ => return Err(Error::Config(format!("unknown loss term {part:?} in {v:?}; use l1, adv, p, i, a or full"))),
            }
        }
        if !l1 {
            return Err(Error::Config(format!("term set {v:?} must include l1")));
        }
        Ok(t)
    }
}

impl fmt::Display for TermSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == TermSet::FULL {
            return f.write_str("full");
        }
        f.write_str("l1")?;
        for (on, name) in [(self.adv, "adv"), (self.perceptual, "p"), (self.identity, "i"), (self.attribute, "a")] {
            if on {
                write!(f, "+{name}")?;
            }
        }
        Ok(())
    }
}

/// Outcome of one train-then-score run.
pub struct BenchmarkRun {
    pub trainer: Trainer,
    pub scores: ScoreSet,
    pub roc: RocResult,
}

/// Trains a fresh generator on `train` and scores `test`.
pub fn train_and_score(
    s: &Settings,
    perception: &Perception,
    train: &[&PairedSample],
    test: &[&PairedSample],
    opts: &RunOptions,
    on_report: &mut dyn FnMut(&LossReport),
) -> Result<BenchmarkRun> {
    let mut trainer = Trainer::new(s.train.clone(), perception.clone())?;
    run_training(&mut trainer, train, opts, on_report)?;
    let scores = score(s, &trainer, perception, test)?;
    let roc = scores.roc()?;
    Ok(BenchmarkRun { trainer, scores, roc })
}
