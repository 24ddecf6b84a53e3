//! Training objectives for the generator and the discriminators.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::networks::ScalePyramid;
use crate::nn::{ParamStore, Pass};
use crate::perception::{AttributePredictor, FeatureNetwork};
use crate::tensor::Tensor;

/// Lower clamp applied to probabilities before taking logs.
pub const LOG_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_1: f64,
    pub lambda_p: f64,
    pub lambda_i: f64,
    pub lambda_a: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_1: 10.0, lambda_p: 2.5, lambda_i: 0.5, lambda_a: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_1", self.lambda_1),
            ("lambda_p", self.lambda_p),
            ("lambda_i", self.lambda_i),
            ("lambda_a", self.lambda_a),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// `adv + λ_A·attribute + λ_P·perceptual + λ_I·identity + λ_1·l1`.
    pub fn combine(&self, adv: f64, attribute: f64, perceptual: f64, identity: f64, l1: f64) -> f64 {
        adv + self.lambda_a * attribute + self.lambda_p * perceptual + self.lambda_i * identity + self.lambda_1 * l1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AdversarialForm {
    /// `−log D(ŷ)`.
    #[default]
    NonSaturating,
    /// `log(1 − D(ŷ))`, the literal minimax objective.
    Minimax,
}

impl FromStr for AdversarialForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "non_saturating" => Ok(AdversarialForm::NonSaturating),
            "minimax" => Ok(AdversarialForm::Minimax),
            o => Err(Error::Config(format!("unknown adversarial form {o:?}; expected non_saturating or minimax"))),
        }
    }
}

impl fmt::Display for AdversarialForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdversarialForm::NonSaturating => "non_saturating",
            AdversarialForm::Minimax => "minimax",
        })
    }
}

fn mean_log(p: &Tensor) -> Tensor {
    p.log_clamped(LOG_EPS).mean()
}

fn mean_log_complement(p: &Tensor) -> Tensor {
    p.neg().add_scalar(1.0).log_clamped(LOG_EPS).mean()
}

fn sum_all(terms: Vec<Tensor>) -> Result<Tensor> {
    let mut it = terms.into_iter();
    let first = it.next().unwrap_or_else(|| Tensor::scalar(0.0));
    it.try_fold(first, |acc, t| acc.add(&t))
}

/// Patch score maps of one discriminator on a real/fake/wrong triplet. The
/// conditional entries are absent when the discriminator has no
/// conditional stream.
#[derive(Clone, Debug)]
pub struct TripletScores {
    pub real_uncond: Tensor,
    pub fake_uncond: Tensor,
    pub real_cond: Option<Tensor>,
    pub fake_cond: Option<Tensor>,
    pub wrong_cond: Option<Tensor>,
}

/// `−[log D(y) + log D(y,z) + log(1−D(y,z')) + log(1−D(ŷ)) + log(1−D(ŷ,z))]`,
/// each term a patch mean.
pub fn discriminator_loss(s: &TripletScores) -> Result<Tensor> {
    let mut terms = vec![mean_log(&s.real_uncond), mean_log_complement(&s.fake_uncond)];
    if let Some(r) = &s.real_cond {
        terms.push(mean_log(r));
    }
    if let Some(w) = &s.wrong_cond {
        terms.push(mean_log_complement(w));
    }
    if let Some(f) = &s.fake_cond {
        terms.push(mean_log_complement(f));
    }
    Ok(sum_all(terms)?.neg())
}

/// Generator side of the adversarial objective on fake score maps.
pub fn generator_adversarial(fake_uncond: &Tensor, fake_cond: Option<&Tensor>, form: AdversarialForm) -> Result<Tensor> {
    let maps = std::iter::once(fake_uncond).chain(fake_cond);
    match form {
        AdversarialForm::NonSaturating => Ok(sum_all(maps.map(mean_log).collect())?.neg()),
        AdversarialForm::Minimax => sum_all(maps.map(mean_log_complement).collect()),
    }
}

/// Both sides of the adversarial objective for one scale.
pub fn adversarial_terms(s: &TripletScores, form: AdversarialForm) -> Result<(Tensor, Tensor)> {
    Ok((discriminator_loss(s)?, generator_adversarial(&s.fake_uncond, s.fake_cond.as_ref(), form)?))
}

fn check_pair(fake: &ScalePyramid, real: &ScalePyramid) -> Result<()> {
    let ok = fake.len() == real.len()
        && fake.images().iter().zip(real.images()).all(|(a, b)| a.shape() == b.shape());
    if ok {
        Ok(())
    } else {
        Err(Error::shape("loss", format!("pyramids {:?} and {:?} differ", fake.resolutions(), real.resolutions())))
    }
}

/// `Σ_i mean|ŷ_i − y_i|`.
pub fn l1_multiscale(fake: &ScalePyramid, real: &ScalePyramid) -> Result<Tensor> {
    check_pair(fake, real)?;
    let terms = fake
        .images()
        .iter()
        .zip(real.images())
        .map(|(a, b)| a.mean_abs_diff(b))
        .collect::<Result<Vec<_>>>()?;
    sum_all(terms)
}

/// Sums over scales of the mean absolute difference of shallow-tap and
/// deep-tap features: `(perceptual, identity)`.
pub fn perceptual_identity(
    fake: &ScalePyramid,
    real: &ScalePyramid,
    f: &FeatureNetwork,
    store: &ParamStore,
) -> Result<(Tensor, Tensor)> {
    check_pair(fake, real)?;
    let mut perceptual = Vec::new();
    let mut identity = Vec::new();
    for (a, b) in fake.images().iter().zip(real.images()) {
        let fa = f.taps(a, store, &mut Pass::frozen())?;
        let fb = f.taps(&b.detach(), store, &mut Pass::frozen())?;
        perceptual.push(fa.shallow.mean_abs_diff(&fb.shallow)?);
        identity.push(fa.deep.mean_abs_diff(&fb.deep)?);
    }
    Ok((sum_all(perceptual)?, sum_all(identity)?))
}

/// `Σ_i mean|Q(ŷ_i) − Q(y_i)|` over the attribute outputs.
pub fn attribute_loss(fake: &ScalePyramid, real: &ScalePyramid, q: &AttributePredictor, store: &ParamStore) -> Result<Tensor> {
    check_pair(fake, real)?;
    let terms = fake
        .images()
        .iter()
        .zip(real.images())
        .map(|(a, b)| q.forward(a, store, &mut Pass::frozen())?.mean_abs_diff(&q.predict(&b.detach(), store)?))
        .collect::<Result<Vec<_>>>()?;
    sum_all(terms)
}

/// Generator objective terms; `None` marks a disabled term.
#[derive(Clone, Debug, Default)]
pub struct GeneratorTerms {
    pub adversarial: Option<Tensor>,
    pub l1: Option<Tensor>,
    pub perceptual: Option<Tensor>,
    pub identity: Option<Tensor>,
    pub attribute: Option<Tensor>,
}

impl GeneratorTerms {
    fn named(&self) -> [(&'static str, Option<&Tensor>); 5] {
        [
            ("adv_g", self.adversarial.as_ref()),
            ("l1", self.l1.as_ref()),
            ("perceptual", self.perceptual.as_ref()),
            ("identity", self.identity.as_ref()),
            ("attribute", self.attribute.as_ref()),
        ]
    }

    /// Fails naming the first term whose value is not finite.
    pub fn check_finite(&self) -> Result<()> {
        for (name, t) in self.named() {
            if let Some(t) = t {
                if !t.item().is_finite() {
                    return Err(Error::Numeric(format!("loss term {name} is {}", t.item())));
                }
            }
        }
        Ok(())
    }
}

/// Weighted total. Terms with zero weight are left out of the graph.
pub fn composite(terms: &GeneratorTerms, w: &LossWeights) -> Result<Tensor> {
    let weighted = [
        (terms.adversarial.as_ref(), 1.0),
        (terms.attribute.as_ref(), w.lambda_a),
        (terms.perceptual.as_ref(), w.lambda_p),
        (terms.identity.as_ref(), w.lambda_i),
        (terms.l1.as_ref(), w.lambda_1),
    ];
    let parts: Vec<Tensor> = weighted
        .into_iter()
        .filter_map(|(t, lam)| t.filter(|_| lam != 0.0).map(|t| t.mul_scalar(lam)))
        .collect();
    sum_all(parts)
}

/// Per-step scalar record of every loss term.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    pub step: u64,
    pub adv_g: f64,
    /// Discriminator loss per scale, coarsest first.
    pub adv_d: Vec<f64>,
    pub l1: f64,
    pub perceptual: f64,
    pub identity: f64,
    pub attribute: f64,
    pub total: f64,
    /// Unweighted L1 of the finest scale.
    pub l1_finest: f64,
}

impl LossReport {
    pub fn from_terms(step: u64, terms: &GeneratorTerms, total: &Tensor, adv_d: Vec<f64>, l1_finest: f64) -> LossReport {
        let v = |t: &Option<Tensor>| t.as_ref().map_or(0.0, Tensor::item);
        LossReport {
            step,
            adv_g: v(&terms.adversarial),
            adv_d,
            l1: v(&terms.l1),
            perceptual: v(&terms.perceptual),
            identity: v(&terms.identity),
            attribute: v(&terms.attribute),
            total: total.item(),
            l1_finest,
        }
    }

    pub fn all_finite(&self) -> bool {
        [self.adv_g, self.l1, self.perceptual, self.identity, self.attribute, self.total, self.l1_finest]
            .iter()
            .chain(&self.adv_d)
            .all(|v| v.is_finite())
    }
}

impl fmt::Display for LossReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d: Vec<String> = self.adv_d.iter().map(|v| format!("{v:e}")).collect();
        write!(
            f,
            "step={} adv_g={:e} adv_d={} l1={:e} perceptual={:e} identity={:e} attribute={:e} total={:e} l1_finest={:e}",
            self.step,
            self.adv_g,
            if d.is_empty() { "-".to_string() } else { d.join(",") },
            self.l1,
            self.perceptual,
            self.identity,
            self.attribute,
            self.total,
            self.l1_finest
        )
    }
}

impl FromStr for LossReport {
    type Err = Error;

    /// Parses a line written by `Display`. Values round-trip exactly.
    fn from_str(line: &str) -> Result<LossReport> {
        let bad = |m: &str| Error::Data(format!("malformed loss line ({m}): {line}"));
        let mut r = LossReport::default();
        for field in line.split_whitespace() {
            let (k, v) = field.split_once('=').ok_or_else(|| bad("missing '='"))?;
            let num = |v: &str| v.parse::<f64>().map_err(|_| bad(k));
            match k {
                "step" => r.step = v.parse().map_err(|_| bad(k))?,
                "adv_g" => r.adv_g = num(v)?,
                "adv_d" if v == "-" => r.adv_d.clear(),
                "adv_d" => r.adv_d = v.split(',').map(num).collect::<Result<_>>()?,
                "l1" => r.l1 = num(v)?,
                "perceptual" => r.perceptual = num(v)?,
                "identity" => r.identity = num(v)?,
                "attribute" => r.attribute = num(v)?,
                "total" => r.total = num(v)?,
                "l1_finest" => r.l1_finest = num(v)?,
                _ => return Err(bad("unknown key")),
            }
        }
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(v: f64) -> Tensor {
        Tensor::full(&[1, 1, 2, 2], v)
    }

    fn triplet(real: f64, fake: f64, wrong: f64) -> TripletScores {
        TripletScores {
            real_uncond: map(real),
            fake_uncond: map(fake),
            real_cond: Some(map(real)),
            fake_cond: Some(map(fake)),
            wrong_cond: Some(map(wrong)),
        }
    }

    #[test]
    fn half_scores_give_five_log_two() {
        let (d, g) = adversarial_terms(&triplet(0.5, 0.5, 0.5), AdversarialForm::NonSaturating).unwrap();
        assert!((d.item() - 5.0 * 2f64.ln()).abs() < 1e-12);
        assert!((g.item() - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn perfect_discriminator_loss_near_zero() {
        let e = 1e-9;
        let (d, _) = adversarial_terms(&triplet(1.0 - e, e, e), AdversarialForm::NonSaturating).unwrap();
        assert!(d.item() >= 0.0 && d.item() < 1e-6, "{}", d.item());
    }

    #[test]
    fn swapping_real_and_fake_swaps_roles() {
        let s = TripletScores { wrong_cond: None, real_cond: None, fake_cond: None, ..triplet(0.8, 0.3, 0.0) };
        let swapped = TripletScores { real_uncond: s.fake_uncond.clone(), fake_uncond: s.real_uncond.clone(), ..s.clone() };
        let (d, g) = adversarial_terms(&s, AdversarialForm::Minimax).unwrap();
        let (d2, g2) = adversarial_terms(&swapped, AdversarialForm::Minimax).unwrap();
        // −[log r + log(1−f)] vs −[log f + log(1−r)]
        let want = -((0.3f64).ln() + (0.2f64).ln());
        assert!((d2.item() - want).abs() < 1e-12);
        assert!((g.item() - 0.7f64.ln()).abs() < 1e-12);
        assert!((g2.item() - 0.2f64.ln()).abs() < 1e-12);
        assert!(d.item() < d2.item());
    }

    #[test]
    fn l1_constant_offset() {
        let real = ScalePyramid::from_finest(&Tensor::full(&[1, 3, 8, 8], 0.1), 3).unwrap();
        let fake = ScalePyramid::new(real.images().iter().map(|t| t.add_scalar(0.5)).collect()).unwrap();
        assert!((l1_multiscale(&fake, &real).unwrap().item() - 1.5).abs() < 1e-12);
        assert_eq!(l1_multiscale(&real, &real).unwrap().item(), 0.0);
    }

    #[test]
    fn composite_weights_and_zero_weights() {
        let s = |v| Some(Tensor::scalar(v));
        let terms = GeneratorTerms { adversarial: s(0.7), l1: s(0.2), perceptual: s(0.3), identity: s(0.4), attribute: s(0.5) };
        let w = LossWeights::default();
        let total = composite(&terms, &w).unwrap().item();
        assert!((total - w.combine(0.7, 0.5, 0.3, 0.4, 0.2)).abs() < 1e-12);
        assert!((total - (0.7 + 0.5 + 2.5 * 0.3 + 0.5 * 0.4 + 10.0 * 0.2)).abs() < 1e-12);
        let zero = LossWeights { lambda_1: 0.0, lambda_p: 0.0, lambda_i: 0.0, lambda_a: 0.0 };
        assert_eq!(composite(&terms, &zero).unwrap().item(), 0.7);
    }

    #[test]
    fn report_line_round_trips() {
        let r = LossReport {
            step: 12,
            adv_g: 1.0 / 3.0,
            adv_d: vec![0.1, 2.5e-8],
            l1: 0.25,
            perceptual: 0.0,
            identity: 1e300,
            attribute: 0.5,
            total: 7.125,
            l1_finest: 0.07,
        };
        assert_eq!(r.to_string().parse::<LossReport>().unwrap(), r);
        let empty = LossReport::default();
        assert_eq!(empty.to_string().parse::<LossReport>().unwrap(), empty);
    }
}
