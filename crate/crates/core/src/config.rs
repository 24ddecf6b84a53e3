//! Run settings: sectioned `key = value` files, `section.key=value`
//! overrides and `POLARSYNTH_SECTION_KEY` environment variables.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::Modality;
use crate::error::{Error, Result};
use crate::perception::{FitConfig, Tap};
use crate::train::TrainConfig;

pub const ENV_PREFIX: &str = "POLARSYNTH_";

#[derive(Clone, Debug, PartialEq)]
pub struct DataSettings {
    /// Dataset directory; empty means generate synthetic data in memory.
    pub root: Option<PathBuf>,
    pub resolution: usize,
    pub subjects: usize,
    pub samples_per_subject: usize,
    pub n_train: usize,
    pub replicates: usize,
    /// Split (1-based) used by single-run commands.
    pub replicate: usize,
}

impl Default for DataSettings {
    fn default() -> Self {
        DataSettings { root: None, resolution: 32, subjects: 20, samples_per_subject: 10, n_train: 10, replicates: 5, replicate: 1 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerceptionSettings {
    /// Batch size, learning rate and seed shared by both networks.
    pub fit: FitConfig,
    pub feature_epochs: usize,
    pub attribute_epochs: usize,
    /// Subjects held out to validate the attribute predictor.
    pub held_out: usize,
    /// Size of the generated labelled set Q is fine-tuned on (one sample per
    /// subject). 0 fine-tunes on the training split instead.
    pub attribute_subjects: usize,
}

impl Default for PerceptionSettings {
    fn default() -> Self {
        PerceptionSettings { fit: FitConfig::default(), feature_epochs: 60, attribute_epochs: 20, held_out: 300, attribute_subjects: 1500 }
    }
}

impl PerceptionSettings {
    pub fn feature_fit(&self) -> FitConfig {
        FitConfig { epochs: self.feature_epochs, ..self.fit.clone() }
    }

    pub fn attribute_fit(&self) -> FitConfig {
        FitConfig { epochs: self.attribute_epochs, ..self.fit.clone() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub tap: Tap,
    pub feature_file: Option<PathBuf>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings { tap: Tap::Deep, feature_file: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    pub data: DataSettings,
    pub train: TrainConfig,
    pub perception: PerceptionSettings,
    pub eval: EvalSettings,
    /// Epochs between checkpoints; 0 keeps only the final one.
    pub checkpoint_every: usize,
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {v:?}"))),
    }
}

fn path_opt(v: &str) -> Option<PathBuf> {
    let v = v.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl Settings {
    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        let g = &t.generator;
        let p = &self.perception;
        vec![
            ("run.seed", t.seed.to_string()),
            ("run.checkpoint_every", self.checkpoint_every.to_string()),
            ("data.root", show_path(&self.data.root)),
            ("data.modality", t.modality.to_string()),
            ("data.resolution", self.data.resolution.to_string()),
            ("data.subjects", self.data.subjects.to_string()),
            ("data.samples_per_subject", self.data.samples_per_subject.to_string()),
            ("data.n_train", self.data.n_train.to_string()),
            ("data.replicates", self.data.replicates.to_string()),
            ("data.replicate", self.data.replicate.to_string()),
            ("model.num_scales", g.num_scales.to_string()),
            ("model.base_channels", g.base_channels.to_string()),
            ("model.max_channels", g.max_channels.to_string()),
            ("model.skip_connections", g.skip_connections.to_string()),
            ("model.fuse_attributes", g.fuse_attributes.to_string()),
            ("model.mcb_normalize", g.mcb_normalize.to_string()),
            ("model.d_base_channels", t.d_base_channels.to_string()),
            ("model.d_max_channels", t.d_max_channels.to_string()),
            ("model.d_bottleneck", t.d_bottleneck.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.lr", t.lr.to_string()),
            ("train.lr_schedule", t.schedule.to_string()),
            ("train.beta1", t.beta1.to_string()),
            ("train.beta2", t.beta2.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.adversarial", t.adversarial.to_string()),
            ("train.use_adv", t.use_adv.to_string()),
            ("train.use_perceptual", t.use_perceptual.to_string()),
            ("train.use_identity", t.use_identity.to_string()),
            ("train.use_attribute", t.use_attribute.to_string()),
            ("train.attribute_source", t.attribute_source.to_string()),
            ("train.lambda_1", t.weights.lambda_1.to_string()),
            ("train.lambda_p", t.weights.lambda_p.to_string()),
            ("train.lambda_i", t.weights.lambda_i.to_string()),
            ("train.lambda_a", t.weights.lambda_a.to_string()),
            ("perception.feature_epochs", p.feature_epochs.to_string()),
            ("perception.attribute_epochs", p.attribute_epochs.to_string()),
            ("perception.batch_size", p.fit.batch_size.to_string()),
            ("perception.lr", p.fit.lr.to_string()),
            ("perception.held_out", p.held_out.to_string()),
            ("perception.attribute_subjects", p.attribute_subjects.to_string()),
            ("eval.tap", self.eval.tap.to_string()),
            ("eval.feature_file", show_path(&self.eval.feature_file)),
        ]
    }

    pub fn keys() -> Vec<&'static str> {
        Settings::default().entries().into_iter().map(|(k, _)| k).collect()
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "run.seed" => {
                t.seed = parse(key, v)?;
                self.perception.fit.seed = t.seed;
            }
            "run.checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "data.root" => self.data.root = path_opt(v),
            "data.modality" => t.modality = v.trim().parse::<Modality>()?,
            "data.resolution" => {
                self.data.resolution = parse(key, v)?;
                t.generator.resolution = self.data.resolution;
            }
            "data.subjects" => self.data.subjects = parse(key, v)?,
            "data.samples_per_subject" => self.data.samples_per_subject = parse(key, v)?,
            "data.n_train" => self.data.n_train = parse(key, v)?,
            "data.replicates" => self.data.replicates = parse(key, v)?,
            "data.replicate" => self.data.replicate = parse(key, v)?,
            "model.num_scales" => t.generator.num_scales = parse(key, v)?,
            "model.base_channels" => t.generator.base_channels = parse(key, v)?,
            "model.max_channels" => t.generator.max_channels = parse(key, v)?,
            "model.skip_connections" => t.generator.skip_connections = parse_bool(key, v)?,
            "model.fuse_attributes" => t.generator.fuse_attributes = parse_bool(key, v)?,
            "model.mcb_normalize" => t.generator.mcb_normalize = parse_bool(key, v)?,
            "model.d_base_channels" => t.d_base_channels = parse(key, v)?,
            "model.d_max_channels" => t.d_max_channels = parse(key, v)?,
            "model.d_bottleneck" => t.d_bottleneck = parse(key, v)?,
            "train.epochs" => t.epochs = parse(key, v)?,
            "train.lr" => t.lr = parse(key, v)?,
            "train.lr_schedule" => t.schedule = v.trim().parse()?,
            "train.beta1" => t.beta1 = parse(key, v)?,
            "train.beta2" => t.beta2 = parse(key, v)?,
            "train.batch_size" => t.batch_size = parse(key, v)?,
            "train.adversarial" => t.adversarial = v.trim().parse()?,
            "train.use_adv" => t.use_adv = parse_bool(key, v)?,
            "train.use_perceptual" => t.use_perceptual = parse_bool(key, v)?,
            "train.use_identity" => t.use_identity = parse_bool(key, v)?,
            "train.use_attribute" => t.use_attribute = parse_bool(key, v)?,
            "train.attribute_source" => t.attribute_source = v.trim().parse()?,
            "train.lambda_1" => t.weights.lambda_1 = parse(key, v)?,
            "train.lambda_p" => t.weights.lambda_p = parse(key, v)?,
            "train.lambda_i" => t.weights.lambda_i = parse(key, v)?,
            "train.lambda_a" => t.weights.lambda_a = parse(key, v)?,
            "perception.feature_epochs" => self.perception.feature_epochs = parse(key, v)?,
            "perception.attribute_epochs" => self.perception.attribute_epochs = parse(key, v)?,
            "perception.batch_size" => self.perception.fit.batch_size = parse(key, v)?,
            "perception.lr" => self.perception.fit.lr = parse(key, v)?,
            "perception.held_out" => self.perception.held_out = parse(key, v)?,
            "perception.attribute_subjects" => self.perception.attribute_subjects = parse(key, v)?,
            "eval.tap" => self.eval.tap = v.trim().parse()?,
            "eval.feature_file" => self.eval.feature_file = path_opt(v),
            _ => {
                return Err(Error::Config(format!(
                    "unknown key {key:?}; valid keys: {}",
                    Settings::keys().join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies a `section.key=value` override.
    pub fn apply_override(&mut self, item: &str) -> Result<()> {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
        self.set(k.trim(), v)
    }

    /// Parses sectioned `key = value` text. `#` and `;` start comments.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        let mut section: Option<String> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let here = || format!("{origin}:{}", n + 1);
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config(format!("{}: unterminated section header", here())))?;
                section = Some(name.trim().to_string());
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{}: expected key = value", here())))?;
            let sec = section
                .as_deref()
                .ok_or_else(|| Error::Config(format!("{}: key outside of a section", here())))?;
            self.set(&format!("{sec}.{}", k.trim()), v)
                .map_err(|e| Error::Config(format!("{}: {e}", here())))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Settings> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
        let mut s = Settings::default();
        s.apply_text(&text, &path.display().to_string())?;
        Ok(s)
    }

    /// Applies `POLARSYNTH_<SECTION>_<KEY>` variables from `vars`.
    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> Result<()> {
        let mut found: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|rest| (rest.to_ascii_lowercase(), v)))
            .collect();
        found.sort();
        for (rest, v) in found {
            let key = rest
                .split_once('_')
                .map(|(s, k)| format!("{s}.{k}"))
                .ok_or_else(|| Error::Config(format!("environment variable {ENV_PREFIX}{} names no key", rest.to_uppercase())))?;
            self.set(&key, &v)?;
        }
        Ok(())
    }

    /// Consistency checks across sections.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.train.generator.resolution != self.data.resolution {
            return Err(Error::Config("model and data resolution differ".into()));
        }
        if self.data.n_train == 0 || (self.data.root.is_none() && self.data.n_train >= self.data.subjects) {
            return Err(Error::Config(format!(
                "data.n_train {} must be positive and below data.subjects {}",
                self.data.n_train, self.data.subjects
            )));
        }
        if self.data.replicate == 0 || self.data.replicate > self.data.replicates {
            return Err(Error::Config(format!(
                "data.replicate {} must be between 1 and data.replicates {}",
                self.data.replicate, self.data.replicates
            )));
        }
        let p = &self.perception;
        if p.held_out == 0 || (p.attribute_subjects > 0 && p.held_out >= p.attribute_subjects) {
            return Err(Error::Config(format!(
                "perception.held_out {} must be positive and below perception.attribute_subjects {}",
                p.held_out, p.attribute_subjects
            )));
        }
        Ok(())
    }

    /// Sectioned text that reproduces these settings when parsed.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for (key, value) in self.entries() {
            let (sec, k) = key.split_once('.').expect("keys are sectioned");
            if sec != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{sec}]");
                current = sec;
            }
            let _ = writeln!(out, "{k} = {value}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut s = Settings::default();
        s.apply_text("[train]\nepochs = 7 # short\nlr=0.001\n[model]\nfuse_attributes = false\n", "t").unwrap();
        assert_eq!(s.train.epochs, 7);
        assert_eq!(s.train.lr, 1e-3);
        assert!(!s.train.generator.fuse_attributes);
        let mut back = Settings::default();
        back.apply_text(&s.to_text(), "echo").unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn unknown_keys_list_valid_ones() {
        let mut s = Settings::default();
        let err = s.apply_override("train.epoch=3").unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.contains("train.epochs")), "{err}");
        assert!(s.apply_text("epochs = 3\n", "t").is_err());
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn env_overrides() {
        let mut s = Settings::default();
        s.apply_env([
            ("POLARSYNTH_TRAIN_USE_ADV".to_string(), "false".to_string()),
            ("POLARSYNTH_RUN_SEED".to_string(), "9".to_string()),
            ("HOME".to_string(), "/x".to_string()),
        ])
        .unwrap();
        assert!(!s.train.use_adv);
        assert_eq!(s.train.seed, 9);
        assert!(s.apply_env([("POLARSYNTH_TRAIN_BOGUS".to_string(), "1".to_string())]).is_err());
    }

    #[test]
    fn missing_file_is_config_error() {
        let err = Settings::from_file(Path::new("/nonexistent/polarsynth.ini")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
