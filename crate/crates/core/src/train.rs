//! Alternating discriminator/generator optimization with checkpointing.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Container;
use crate::data::{Modality, PairedSample, ProtocolSplit};
use crate::error::{Error, Result};
use crate::eval::Synthesizer;
use crate::losses::{
    attribute_loss, composite, discriminator_loss, generator_adversarial, l1_multiscale, perceptual_identity,
    AdversarialForm, GeneratorTerms, LossReport, LossWeights, TripletScores,
};
use crate::networks::{build_triplet_batch, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, ScalePyramid};
use crate::nn::{Adam, AdamConfig, ParamStore, Pass};
use crate::perception::Perception;
use crate::seed::{derive_seed, load_rng, rng_for, save_rng};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LrSchedule {
    /// Base rate for the first half, then minus `base / (epochs / 2)` per
    /// epoch, reaching zero at the end.
    #[default]
    Linear,
    /// Base rate for the first half, then multiplied by 0.99 per epoch.
    Multiplicative,
}

impl FromStr for LrSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<LrSchedule> {
        match s {
            "linear" => Ok(LrSchedule::Linear),
            "multiplicative" => Ok(LrSchedule::Multiplicative),
            o => Err(Error::Config(format!("unknown lr schedule {o:?}; expected linear or multiplicative"))),
        }
    }
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LrSchedule::Linear => "linear",
            LrSchedule::Multiplicative => "multiplicative",
        })
    }
}

/// Where the conditioning attribute vector of a training pair comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AttributeSource {
    /// The label file; samples without labels are an error.
    #[default]
    Labels,
    /// Thresholded predictions of the attribute network on the target image.
    Predicted,
}

impl FromStr for AttributeSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<AttributeSource> {
        match s {
            "labels" => Ok(AttributeSource::Labels),
            "predicted" => Ok(AttributeSource::Predicted),
            o => Err(Error::Config(format!("unknown attribute source {o:?}; expected labels or predicted"))),
        }
    }
}

impl fmt::Display for AttributeSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttributeSource::Labels => "labels",
            AttributeSource::Predicted => "predicted",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub weights: LossWeights,
    pub adversarial: AdversarialForm,
    pub use_adv: bool,
    pub use_perceptual: bool,
    pub use_identity: bool,
    pub use_attribute: bool,
    pub attribute_source: AttributeSource,
    pub modality: Modality,
    pub seed: u64,
    /// Also carries the scale count and the fusion switch.
    pub generator: GeneratorConfig,
    pub d_base_channels: usize,
    pub d_max_channels: usize,
    pub d_bottleneck: usize,
}

impl Default for TrainConfig {
    /// Desk-scale settings: 32² input, three scales.
    fn default() -> Self {
        let d = DiscriminatorConfig::desk(32);
        TrainConfig {
            epochs: 200,
            lr: 2e-4,
            schedule: LrSchedule::Linear,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 1,
            weights: LossWeights::default(),
            adversarial: AdversarialForm::NonSaturating,
            use_adv: true,
            use_perceptual: true,
            use_identity: true,
            use_attribute: true,
            attribute_source: AttributeSource::Labels,
            modality: Modality::Polar,
            seed: 0,
            generator: GeneratorConfig::desk(),
            d_base_channels: d.base_channels,
            d_max_channels: d.max_channels,
            d_bottleneck: d.bottleneck,
        }
    }
}

impl TrainConfig {
    pub fn num_scales(&self) -> usize {
        self.generator.num_scales
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig { input_channels: self.modality.channels(), ..self.generator.clone() }
    }

    pub fn discriminator_config(&self, resolution: usize) -> DiscriminatorConfig {
        DiscriminatorConfig {
            resolution,
            bottleneck: self.d_bottleneck,
            in_channels: 3,
            attribute_dim: self.generator.attribute_dim,
            base_channels: self.d_base_channels,
            max_channels: self.d_max_channels,
            conditional: true,
            negative_slope: self.generator.negative_slope,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        self.weights.validate()?;
        self.generator_config().validate()?;
        if self.use_adv {
            for r in self.generator.scale_resolutions() {
                self.discriminator_config(r).validate()?;
            }
        }
        Ok(())
    }

    /// Stable digest used to refuse resuming under a different config.
    pub fn hash(&self) -> u64 {
        derive_seed(0, &format!("{self:?}"))
    }
}

/// Learning rate for `epoch` (0-based).
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let half = cfg.epochs / 2;
    if epoch < half {
        return cfg.lr;
    }
    match cfg.schedule {
        LrSchedule::Linear => {
            let left = cfg.epochs.saturating_sub(epoch) as f64;
            (cfg.lr * left / (cfg.epochs - half) as f64).max(0.0)
        }
        LrSchedule::Multiplicative => cfg.lr * 0.99f64.powi((epoch - half) as i32),
    }
}

/// One mini-batch in tensor form.
pub struct Batch {
    pub probe: Tensor,
    pub target: ScalePyramid,
    pub attributes: Tensor,
    pub wrong_attributes: Tensor,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub generator: Generator,
    pub discriminators: Vec<Discriminator>,
    pub perception: Perception,
    pub g: ParamStore,
    pub d: Vec<ParamStore>,
    pub opt_g: Adam,
    pub opt_d: Vec<Adam>,
    rng: ChaCha8Rng,
    pub step: u64,
    /// Epochs completed.
    pub epoch: usize,
    pub history: Vec<LossReport>,
}

impl Trainer {
    /// Fresh networks. `perception` is used frozen.
    pub fn new(config: TrainConfig, perception: Perception) -> Result<Trainer> {
        config.validate()?;
        let seed = config.seed;
        let generator = Generator::new(config.generator_config(), seed)?;
        let g = generator.init(seed)?;
        let mut discriminators = Vec::new();
        let mut d = Vec::new();
        if config.use_adv {
            for r in config.generator.scale_resolutions() {
                let disc = Discriminator::new(config.discriminator_config(r))?;
                d.push(disc.init(seed)?);
                discriminators.push(disc);
            }
        }
        let adam = AdamConfig { lr: config.lr, beta1: config.beta1, beta2: config.beta2, ..AdamConfig::default() };
        Ok(Trainer {
            opt_g: Adam::new(adam),
            opt_d: d.iter().map(|_| Adam::new(adam)).collect(),
            rng: rng_for(seed, "train.step"),
            step: 0,
            epoch: 0,
            history: Vec::new(),
            generator,
            discriminators,
            perception,
            g,
            d,
            config,
        })
    }

    fn attribute_rows(&self, samples: &[&PairedSample], gallery: &Tensor) -> Result<Vec<Vec<f64>>> {
        match self.config.attribute_source {
            AttributeSource::Labels => samples
                .iter()
                .map(|s| {
                    s.attributes
                        .clone()
                        .ok_or_else(|| Error::Data(format!("{}: no attribute labels", s.key())))
                })
                .collect(),
            AttributeSource::Predicted => self.perception.predict_attributes(gallery),
        }
    }

    /// Stacks samples and draws a wrong attribute vector per row that
    /// differs from the true one.
    pub fn prepare_batch(&mut self, samples: &[&PairedSample]) -> Result<Batch> {
        if samples.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let probe = Tensor::stack(
            &samples.iter().map(|s| s.probe_for(self.config.modality)).collect::<Result<Vec<_>>>()?,
        )?;
        let gallery = Tensor::stack(&samples.iter().map(|s| s.gallery.clone()).collect::<Vec<_>>())?;
        let rows = self.attribute_rows(samples, &gallery)?;
        let dim = self.config.generator.attribute_dim;
        let mut wrong = Vec::with_capacity(rows.len() * dim);
        for row in &rows {
            if row.len() != dim {
                return Err(Error::Data(format!("expected {dim} attributes, got {}", row.len())));
            }
            let w = loop {
                let w: Vec<f64> = (0..dim).map(|_| f64::from(u8::from(self.rng.random_bool(0.5)))).collect();
                if &w != row {
                    break w;
                }
            };
            wrong.extend(w);
        }
        let n = rows.len();
        Ok(Batch {
            target: ScalePyramid::from_finest(&gallery, self.config.num_scales())?,
            probe,
            attributes: Tensor::from_vec(&[n, dim], rows.concat())?,
            wrong_attributes: Tensor::from_vec(&[n, dim], wrong)?,
        })
    }

    /// One update of every discriminator on real, fake and wrong pairs.
    /// Returns the loss per scale.
    pub fn discriminator_step(&mut self, batch: &Batch, fake: &ScalePyramid) -> Result<Vec<f64>> {
        let n = batch.probe.shape()[0];
        let mut losses = Vec::with_capacity(self.discriminators.len());
        for (i, disc) in self.discriminators.iter().enumerate() {
            let real = &batch.target.images()[i];
            let triplet = build_triplet_batch(real, &fake.images()[i].detach(), &batch.attributes, &batch.wrong_attributes)
                .ok_or_else(|| Error::Numeric("wrong attributes equal the true ones".into()))?;
            let (imgs, attrs) = triplet.stacked()?;
            let mut pass = Pass::train();
            let scores = disc.forward(&imgs, Some(&attrs), &self.d[i], &mut pass)?;
            let cond = scores
                .conditional
                .ok_or_else(|| Error::Config("discriminator has no conditional stream".into()))?;
            let u = &scores.unconditional;
            let s = TripletScores {
                real_uncond: u.slice_batch(0, n)?,
                fake_uncond: u.slice_batch(n, 2 * n)?,
                real_cond: Some(cond.slice_batch(0, n)?),
                fake_cond: Some(cond.slice_batch(n, 2 * n)?),
                wrong_cond: Some(cond.slice_batch(2 * n, 3 * n)?),
            };
            let loss = discriminator_loss(&s)?;
            if !loss.item().is_finite() {
                return Err(Error::Numeric(format!("loss term adv_d (scale {}) is {}", real.shape()[2], loss.item())));
            }
            self.d[i].zero_grad();
            loss.backward()?;
            self.opt_d[i].step(&mut self.d[i])?;
            pass.commit(&mut self.d[i]);
            losses.push(loss.item());
        }
        Ok(losses)
    }

    /// Generator objective on `fake` with every discriminator held fixed.
    pub fn generator_terms(&self, batch: &Batch, fake: &ScalePyramid) -> Result<GeneratorTerms> {
        let cfg = &self.config;
        let p = &self.perception;
        let adversarial = if cfg.use_adv {
            let mut total: Option<Tensor> = None;
            for (i, disc) in self.discriminators.iter().enumerate() {
                let s = disc.forward(&fake.images()[i], Some(&batch.attributes), &self.d[i], &mut Pass::frozen())?;
                let t = generator_adversarial(&s.unconditional, s.conditional.as_ref(), cfg.adversarial)?;
                total = Some(match total {
                    Some(acc) => acc.add(&t)?,
                    None => t,
                });
            }
            total
        } else {
            None
        };
        let (perceptual, identity) = if cfg.use_perceptual || cfg.use_identity {
            let (pp, ii) = perceptual_identity(fake, &batch.target, &p.features, &p.feature_store)?;
            (cfg.use_perceptual.then_some(pp), cfg.use_identity.then_some(ii))
        } else {
            (None, None)
        };
        let attribute = if cfg.use_attribute {
            Some(attribute_loss(fake, &batch.target, &p.attributes, &p.attribute_store)?)
        } else {
            None
        };
        Ok(GeneratorTerms { adversarial, l1: Some(l1_multiscale(fake, &batch.target)?), perceptual, identity, attribute })
    }

    /// One discriminator update per scale followed by one generator update.
    pub fn train_step(&mut self, samples: &[&PairedSample]) -> Result<LossReport> {
        let batch = self.prepare_batch(samples)?;
        let mut gpass = Pass::train();
        let fake = self.generator.forward(&batch.probe, &batch.attributes, &self.g, &mut gpass)?;
        let adv_d = self.discriminator_step(&batch, &fake)?;
        let terms = self.generator_terms(&batch, &fake)?;
        terms.check_finite()?;
        let total = composite(&terms, &self.config.weights)?;
        if !total.item().is_finite() {
            return Err(Error::Numeric(format!("total generator loss is {}", total.item())));
        }
        self.g.zero_grad();
        total.backward()?;
        self.opt_g.step(&mut self.g)?;
        gpass.commit(&mut self.g);
        self.g.zero_grad();
        for d in &self.d {
            d.zero_grad();
        }
        let l1_finest = fake.finest().mean_abs_diff(batch.target.finest())?.item();
        self.step += 1;
        let report = LossReport::from_terms(self.step, &terms, &total, adv_d, l1_finest);
        self.history.push(report.clone());
        Ok(report)
    }

    fn set_lr(&mut self, lr: f64) {
        self.opt_g.set_lr(lr);
        self.opt_d.iter_mut().for_each(|o| o.set_lr(lr));
    }

    /// One pass over `samples` in a seed-determined order.
    pub fn run_epoch(&mut self, samples: &[&PairedSample], on_report: &mut dyn FnMut(&LossReport)) -> Result<()> {
        if samples.is_empty() {
            return Err(Error::Data("empty training split".into()));
        }
        self.set_lr(lr_at(self.epoch, &self.config));
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng_for(self.config.seed, &format!("train.order.{}", self.epoch)));
        for idx in order.chunks(self.config.batch_size) {
            let batch: Vec<&PairedSample> = idx.iter().map(|&i| samples[i]).collect();
            let report = self.train_step(&batch)?;
            on_report(&report);
        }
        self.epoch += 1;
        Ok(())
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        c.put_text("config_hash", format!("{:016x}", self.config.hash()));
        c.put_index("epoch", &[self.epoch as i64]);
        c.put_index("step", &[self.step as i64]);
        self.g.save(&mut c, "g/");
        self.opt_g.save(&mut c, "opt_g/");
        for (i, (d, o)) in self.d.iter().zip(&self.opt_d).enumerate() {
            d.save(&mut c, &format!("d{i}/"));
            o.save(&mut c, &format!("opt_d{i}/"));
        }
        if let Some(m) = self.generator.mcb() {
            m.save(&mut c, "mcb/");
        }
        self.perception.save(&mut c, "perception/");
        save_rng(&mut c, "rng", &self.rng);
        let lines: Vec<String> = self.history.iter().map(ToString::to_string).collect();
        c.put_text("history", lines.join("\n"));
        c
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    /// Restores a trainer written by [`Trainer::save`] under the same config.
    pub fn from_container(config: TrainConfig, c: &Container) -> Result<Trainer> {
        let want = format!("{:016x}", config.hash());
        let have = c.text("config_hash")?;
        if have != want {
            return Err(Error::Checkpoint(format!("config hash {have} does not match the current config {want}")));
        }
        let perception = Perception::load(c, "perception/")?;
        let mut t = Trainer::new(config, perception)?;
        t.g.load(c, "g/")?;
        t.opt_g = Adam::load(c, "opt_g/")?;
        for i in 0..t.d.len() {
            t.d[i].load(c, &format!("d{i}/"))?;
            t.opt_d[i] = Adam::load(c, &format!("opt_d{i}/"))?;
        }
        if let Some(m) = t.generator.mcb_mut() {
            m.load_sketches(c, "mcb/")?;
        }
        t.rng = load_rng(c, "rng")?;
        let first = |name: &str| -> Result<u64> {
            c.index(name)?
                .first()
                .map(|&v| v as u64)
                .ok_or_else(|| Error::Checkpoint(format!("{name} is empty")))
        };
        t.epoch = first("epoch")? as usize;
        t.step = first("step")?;
        t.history = c
            .text("history")?
            .lines()
            .filter(|l| !l.is_empty())
            .map(str::parse)
            .collect::<Result<_>>()
            .map_err(|e| Error::Checkpoint(format!("loss history: {e}")))?;
        Ok(t)
    }

    pub fn load(config: TrainConfig, path: &Path) -> Result<Trainer> {
        Trainer::from_container(config, &Container::read(path)?)
    }

    /// Generator output for one probe `[c, r, r]` and attribute row.
    pub fn synthesize(&self, probe: &Tensor, attributes: &[f64]) -> Result<ScalePyramid> {
        let [c, h, w] = *probe.shape() else {
            return Err(Error::shape("synthesize", format!("probe must be [c, h, w], got {:?}", probe.shape())));
        };
        let x = probe.reshape(&[1, c, h, w])?;
        let z = Tensor::from_vec(&[1, attributes.len()], attributes.to_vec())?;
        Ok(self.generator.forward(&x, &z, &self.g, &mut Pass::frozen())?.detach())
    }
}

impl Trainer {
    /// Attribute row used to condition synthesis for `sample`.
    pub fn attributes_for(&self, sample: &PairedSample) -> Result<Vec<f64>> {
        let g = &sample.gallery;
        let gallery = g.reshape(&[1, g.shape()[0], g.shape()[1], g.shape()[2]])?;
        Ok(self.attribute_rows(&[sample], &gallery)?.remove(0))
    }
}

impl Synthesizer for Trainer {
    /// Finest generator output for the sample's probe.
    fn synthesize(&self, sample: &PairedSample) -> Result<Tensor> {
        let probe = sample.probe_for(self.config.modality)?;
        let out = Trainer::synthesize(self, &probe, &self.attributes_for(sample)?)?;
        let f = out.finest();
        f.reshape(&f.shape()[1..])
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Checkpoints go to `{dir}/epoch{NNNN}.ckpt` and `{dir}/last.ckpt`.
    pub checkpoint_dir: Option<PathBuf>,
    /// Epochs between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Stop after this many epochs in total, leaving the schedule unchanged.
    pub stop_after: Option<usize>,
}

/// Trains from `trainer.epoch` up to the configured epoch count.
pub fn run_training(
    trainer: &mut Trainer,
    samples: &[&PairedSample],
    opts: &RunOptions,
    on_report: &mut dyn FnMut(&LossReport),
) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Data("empty training split".into()));
    }
    if let Some(dir) = &opts.checkpoint_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let end = opts.stop_after.map_or(trainer.config.epochs, |s| s.min(trainer.config.epochs));
    while trainer.epoch < end {
        trainer.run_epoch(samples, on_report)?;
        info!("epoch {}/{} done at step {}", trainer.epoch, trainer.config.epochs, trainer.step);
        let periodic = opts.checkpoint_every > 0 && trainer.epoch.is_multiple_of(opts.checkpoint_every);
        if let Some(dir) = &opts.checkpoint_dir {
            if periodic {
                trainer.save(&dir.join(format!("epoch{:04}.ckpt", trainer.epoch)))?;
            }
            if periodic || trainer.epoch == end {
                trainer.save(&dir.join("last.ckpt"))?;
            }
        }
    }
    Ok(())
}

/// Training samples of `split`, or every sample without a split.
pub fn training_samples<'a>(samples: &'a [PairedSample], split: Option<&ProtocolSplit>) -> Result<Vec<&'a PairedSample>> {
    let out: Vec<&PairedSample> = match split {
        Some(s) => samples.iter().filter(|x| s.train.contains(&x.subject_id)).collect(),
        None => samples.iter().collect(),
    };
    if out.is_empty() {
        return Err(Error::Data("training split selects no samples".into()));
    }
    Ok(out)
}
