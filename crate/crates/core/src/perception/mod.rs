//! Fixed perception networks used by the training losses: a feature
//! extractor with two taps and a facial-attribute predictor.

mod attributes;
mod features;

pub use attributes::{
    binary_accuracy, finetune_predictor, AttributeConfig, AttributePredictor, ATTRIBUTE_NAMES,
    DECISION_THRESHOLD,
};
pub use features::{FeatureConfig, FeatureNetwork, Tap, TapFeatures};

use rand::seq::SliceRandom;

use crate::checkpoint::Container;
use crate::data::PairedSample;
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, ParamStore, Pass};
use crate::seed::rng_for;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { epochs: 30, batch_size: 16, lr: 2e-3, seed: 0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FitHistory {
    /// Mean training loss per epoch.
    pub train: Vec<f64>,
    /// Validation loss per epoch, when a validation set was given.
    pub val: Vec<f64>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

/// Mini-batch Adam over `n` examples. With `validate`, the parameters from
/// the epoch with the lowest validation loss are restored at the end;
/// otherwise the last epoch is kept.
fn fit<L>(
    store: &mut ParamStore,
    n: usize,
    validate: Option<&dyn Fn(&ParamStore) -> Result<f64>>,
    cfg: &FitConfig,
    loss: L,
) -> Result<FitHistory>
where
    L: Fn(&ParamStore, &[usize], &mut Pass) -> Result<Tensor>,
{
    if n == 0 {
        return Err(Error::Data("empty training set".into()));
    }
    let mut rng = rng_for(cfg.seed, "fit.shuffle");
    let mut opt = Adam::new(AdamConfig { lr: cfg.lr, beta1: 0.9, ..AdamConfig::default() });
    let mut history = FitHistory::default();
    let mut best: Option<(f64, ParamStore)> = None;
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs.max(1) {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for idx in order.chunks(cfg.batch_size.max(1)) {
            store.zero_grad();
            let mut pass = Pass::train();
            let l = loss(store, idx, &mut pass)?;
            if !l.item().is_finite() {
                return Err(Error::Numeric(format!("non-finite training loss at epoch {epoch}")));
            }
            l.backward()?;
            opt.step(store)?;
            pass.commit(store);
            total += l.item();
            batches += 1;
        }
        history.train.push(total / batches as f64);
        match validate {
            Some(v) => {
                let vl = v(store)?;
                history.val.push(vl);
                if best.as_ref().is_none_or(|(b, _)| vl < *b) {
                    best = Some((vl, store.clone()));
                    history.best_epoch = epoch;
                }
            }
            None => history.best_epoch = epoch,
        }
    }
    store.zero_grad();
    if let Some((_, s)) = best {
        *store = s;
    }
    Ok(history)
}

/// The two fixed networks and their parameters.
#[derive(Clone)]
pub struct Perception {
    pub features: FeatureNetwork,
    pub feature_store: ParamStore,
    pub attributes: AttributePredictor,
    pub attribute_store: ParamStore,
}

/// Outcome of [`pretrain_features`] followed by [`fit_attributes`].
#[derive(Clone, Debug)]
pub struct PerceptionReport {
    pub features: FitHistory,
    pub attributes: FitHistory,
    /// Binary attribute accuracy on the held-out subjects.
    pub held_out_accuracy: f64,
    pub held_out_subjects: Vec<String>,
}

impl Perception {
    /// Randomly initialized networks with default widths.
    pub fn untrained(num_classes: usize, seed: u64) -> Result<Perception> {
        let features = FeatureNetwork::new(FeatureConfig { num_classes: num_classes.max(2), ..Default::default() })?;
        let attributes = AttributePredictor::new(AttributeConfig::default())?;
        Ok(Perception {
            feature_store: features.init(seed)?,
            attribute_store: attributes.init(seed)?,
            features,
            attributes,
        })
    }

    pub fn save(&self, c: &mut Container, prefix: &str) {
        c.put_index(format!("{prefix}num_classes"), &[self.features.config.num_classes as i64]);
        self.feature_store.save(c, &format!("{prefix}f/"));
        self.attribute_store.save(c, &format!("{prefix}q/"));
    }

    pub fn load(c: &Container, prefix: &str) -> Result<Perception> {
        let classes = c.index(&format!("{prefix}num_classes"))?;
        let mut p = Perception::untrained(classes.first().copied().unwrap_or(2).max(2) as usize, 0)?;
        p.feature_store.load(c, &format!("{prefix}f/"))?;
        p.attribute_store.load(c, &format!("{prefix}q/"))?;
        Ok(p)
    }

    /// Attribute decisions (0/1) predicted for `[n, 3, h, w]` images.
    pub fn predict_attributes(&self, images: &Tensor) -> Result<Vec<Vec<f64>>> {
        let scores = self.attributes.predict(images, &self.attribute_store)?;
        let d = self.attributes.config.attribute_dim;
        Ok(scores
            .data()
            .chunks(d)
            .map(|row| row.iter().map(|&s| f64::from(u8::from(s > DECISION_THRESHOLD))).collect())
            .collect())
    }
}

/// Pretrains F as an identity classifier over the gallery images of
/// `samples`; Q is left untrained (see [`fit_attributes`]).
pub fn pretrain_features(samples: &[&PairedSample], cfg: &FitConfig) -> Result<(Perception, FitHistory)> {
    let ids = subjects_of(samples);
    if ids.len() < 2 {
        return Err(Error::Data(format!("need at least 2 subjects to pretrain features, found {}", ids.len())));
    }
    let mut perception = Perception::untrained(ids.len(), cfg.seed)?;
    let images: Vec<Tensor> = samples.iter().map(|s| s.gallery.clone()).collect();
    let labels: Vec<usize> = samples
        .iter()
        .map(|s| ids.binary_search(&s.subject_id).unwrap_or(0))
        .collect();
    let history = perception.features.pretrain(&mut perception.feature_store, &images, &labels, cfg)?;
    Ok((perception, history))
}

fn subjects_of(samples: &[&PairedSample]) -> Vec<String> {
    let mut ids: Vec<String> = samples.iter().map(|s| s.subject_id.clone()).collect();
    ids.sort();
    ids.dedup();
    ids
}

/// Fine-tunes Q on labelled samples, validating on `held_out` whole subjects.
/// Returns the history, held-out accuracy and the held-out subject ids.
pub fn fit_attributes(
    perception: &mut Perception,
    samples: &[&PairedSample],
    held_out: usize,
    cfg: &FitConfig,
) -> Result<(FitHistory, f64, Vec<String>)> {
    let ids = subjects_of(samples);
    if held_out == 0 || held_out >= ids.len() {
        return Err(Error::Data(format!(
            "need more than {held_out} subjects to hold some out, found {}",
            ids.len()
        )));
    }
    let mut shuffled = ids.clone();
    shuffled.shuffle(&mut rng_for(cfg.seed, "perception.held_out"));
    let mut held: Vec<String> = shuffled[..held_out].to_vec();
    held.sort();
    let (mut tr, mut va) = ((Vec::new(), Vec::new()), (Vec::new(), Vec::new()));
    for s in samples {
        let a = s
            .attributes
            .clone()
            .ok_or_else(|| Error::Data(format!("{}: attribute labels required to fine-tune the predictor", s.key())))?;
        let img = perception.attributes.prepare(&s.gallery.reshape(&[1, 3, s.gallery.shape()[1], s.gallery.shape()[2]])?)?;
        let img = img.reshape(&img.shape()[1..])?.detach();
        let dst = if held.binary_search(&s.subject_id).is_ok() { &mut va } else { &mut tr };
        dst.0.push(img);
        dst.1.push(a);
    }
    let history = finetune_predictor(
        &perception.attributes,
        &mut perception.attribute_store,
        (&tr.0, &tr.1),
        (&va.0, &va.1),
        cfg,
    )?;
    let acc = binary_accuracy(&perception.attributes, &perception.attribute_store, &va.0, &va.1)?;
    Ok((history, acc, held))
}
