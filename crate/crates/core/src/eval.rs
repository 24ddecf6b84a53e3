//! Verification scoring: cosine similarity, ROC, AUC, EER and
//! per-variation breakdowns.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;

use crate::data::{PairedSample, Variation};
use crate::error::{Error, Result};
use crate::perception::{FeatureNetwork, Tap};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub fn cosine_score(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape("cosine_score", format!("lengths {} and {}", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Numeric("cosine similarity of a zero vector".into()));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Score {
    pub probe_id: String,
    pub gallery_id: String,
    pub genuine: bool,
    pub value: f64,
    pub variation: Variation,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreSet {
    pub scores: Vec<Score>,
}

impl ScoreSet {
    /// Unlabelled-metadata set from plain score lists (all neutral).
    pub fn from_lists(genuine: &[f64], impostor: &[f64]) -> ScoreSet {
        let mk = |g: bool, (i, &v): (usize, &f64)| Score {
            probe_id: format!("p{i}"),
            gallery_id: String::new(),
            genuine: g,
            value: v,
            variation: Variation::Neutral,
        };
        let scores = genuine
            .iter()
            .enumerate()
            .map(|x| mk(true, x))
            .chain(impostor.iter().enumerate().map(|x| mk(false, x)))
            .collect();
        ScoreSet { scores }
    }

    pub fn genuine(&self) -> Vec<f64> {
        self.scores.iter().filter(|s| s.genuine).map(|s| s.value).collect()
    }

    pub fn impostor(&self) -> Vec<f64> {
        self.scores.iter().filter(|s| !s.genuine).map(|s| s.value).collect()
    }

    pub fn with_variation(&self, v: Variation) -> ScoreSet {
        ScoreSet { scores: self.scores.iter().filter(|s| s.variation == v).cloned().collect() }
    }

    /// `probe_id,gallery_id,label,score,variation` with a header row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
        w.write_record(["probe_id", "gallery_id", "label", "score", "variation"]).map_err(err)?;
        for s in &self.scores {
            w.write_record([
                s.probe_id.as_str(),
                s.gallery_id.as_str(),
                if s.genuine { "genuine" } else { "impostor" },
                &format!("{:e}", s.value),
                &s.variation.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<ScoreSet> {
        let err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
        let mut r = csv::Reader::from_path(path).map_err(err)?;
        let mut scores = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(err)?;
            let bad = || Error::Data(format!("{}: malformed score row {:?}", path.display(), rec));
            if rec.len() != 5 {
                return Err(bad());
            }
            scores.push(Score {
                probe_id: rec[0].to_string(),
                gallery_id: rec[1].to_string(),
                genuine: match &rec[2] {
                    "genuine" => true,
                    "impostor" => false,
                    _ => return Err(bad()),
                },
                value: rec[3].parse().map_err(|_| bad())?,
                variation: rec[4].parse()?,
            });
        }
        Ok(ScoreSet { scores })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocResult {
    /// `(threshold, far, tar)` from the strictest threshold to the loosest.
    pub points: Vec<(f64, f64, f64)>,
    pub auc: f64,
    pub eer: f64,
    /// Every score had the same value.
    pub degenerate: bool,
}

impl RocResult {
    pub fn write_points(&self, path: &Path) -> Result<()> {
        let mut text = String::from("threshold,far,tar\n");
        for (t, f, a) in &self.points {
            let _ = writeln!(text, "{t:e},{f:e},{a:e}");
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// ROC over thresholds at midpoints between distinct scores (a score is
/// accepted when it exceeds the threshold), trapezoidal AUC, and EER where
/// FAR and FRR cross, interpolated linearly between bracketing points.
pub fn roc_auc_eer(genuine: &[f64], impostor: &[f64]) -> Result<RocResult> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::Data(format!(
            "ROC needs genuine and impostor scores, got {} and {}",
            genuine.len(),
            impostor.len()
        )));
    }
    if let Some(v) = genuine.iter().chain(impostor).find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite score {v}")));
    }
    // Count genuine/impostor at each distinct value, highest first.
    let mut all: Vec<(f64, bool)> = genuine.iter().map(|&v| (v, true)).chain(impostor.iter().map(|&v| (v, false))).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut groups: Vec<(f64, usize, usize)> = Vec::new();
    for (v, g) in all {
        match groups.last_mut() {
            Some(last) if last.0 == v => {
                if g { last.1 += 1 } else { last.2 += 1 }
            }
            _ => groups.push((v, usize::from(g), usize::from(!g))),
        }
    }
    let (ng, ni) = (genuine.len() as f64, impostor.len() as f64);
    let mut points = vec![(f64::INFINITY, 0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (k, &(v, g, i)) in groups.iter().enumerate() {
        tp += g;
        fp += i;
        let t = groups.get(k + 1).map_or(f64::NEG_INFINITY, |next| 0.5 * (v + next.0));
        points.push((t, fp as f64 / ni, tp as f64 / ng));
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].1 - w[0].1) * 0.5 * (w[1].2 + w[0].2))
        .sum::<f64>();
    let mut eer = 1.0;
    for w in points.windows(2) {
        let d0 = w[0].1 - (1.0 - w[0].2);
        let d1 = w[1].1 - (1.0 - w[1].2);
        if d0 == 0.0 {
            eer = w[0].1;
            break;
        }
        if d0 < 0.0 && d1 >= 0.0 {
            let s = d0 / (d0 - d1);
            eer = w[0].1 + s * (w[1].1 - w[0].1);
            break;
        }
    }
    Ok(RocResult { points, auc, eer, degenerate: groups.len() == 1 })
}

impl ScoreSet {
    pub fn roc(&self) -> Result<RocResult> {
        roc_auc_eer(&self.genuine(), &self.impostor())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariationRow {
    /// `None` for the overall row.
    pub variation: Option<Variation>,
    pub genuine: usize,
    pub impostor: usize,
    pub auc: f64,
    pub eer: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VariationReport {
    pub rows: Vec<VariationRow>,
    /// Tags that were skipped and why.
    pub notes: Vec<String>,
}

impl std::fmt::Display for VariationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "variation,genuine,impostor,auc,eer")?;
        for r in &self.rows {
            let name = r.variation.map_or_else(|| "overall".to_string(), |v| v.to_string());
            writeln!(f, "{name},{},{},{:.6},{:.6}", r.genuine, r.impostor, r.auc, r.eer)?;
        }
        for n in &self.notes {
            writeln!(f, "# {n}")?;
        }
        Ok(())
    }
}

/// Metrics per variation tag plus an overall row (last). Tags without both
/// genuine and impostor scores are left out with a note.
pub fn per_variation_report(scores: &ScoreSet) -> Result<VariationReport> {
    let mut report = VariationReport::default();
    for v in Variation::ALL {
        let sub = scores.with_variation(v);
        let (g, i) = (sub.genuine(), sub.impostor());
        if g.is_empty() || i.is_empty() {
            if !sub.scores.is_empty() {
                report.notes.push(format!("{v}: {} genuine and {} impostor scores, omitted", g.len(), i.len()));
            } else {
                report.notes.push(format!("{v}: no scores, omitted"));
            }
            continue;
        }
        let r = roc_auc_eer(&g, &i)?;
        report.rows.push(VariationRow { variation: Some(v), genuine: g.len(), impostor: i.len(), auc: r.auc, eer: r.eer });
    }
    let r = scores.roc()?;
    report.rows.push(VariationRow {
        variation: None,
        genuine: scores.genuine().len(),
        impostor: scores.impostor().len(),
        auc: r.auc,
        eer: r.eer,
    });
    Ok(report)
}

/// Maps a probe sample to a synthesized visible image `[3, r, r]`.
pub trait Synthesizer {
    fn synthesize(&self, probe: &PairedSample) -> Result<Tensor>;
}

/// Returns the paired visible image; an upper bound for any generator.
pub struct OracleSynthesizer;

impl Synthesizer for OracleSynthesizer {
    fn synthesize(&self, probe: &PairedSample) -> Result<Tensor> {
        Ok(probe.gallery.clone())
    }
}

/// Which image a feature vector belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Probe,
    Gallery,
}

/// Feature vector for an image identified by sample key and role.
pub trait FeatureExtractor {
    fn features(&self, key: &str, role: Role, image: &Tensor) -> Result<Vec<f64>>;
}

/// Flattened activations of one tap of the feature network.
pub struct TapExtractor<'a> {
    pub network: &'a FeatureNetwork,
    pub store: &'a ParamStore,
    pub tap: Tap,
}

impl FeatureExtractor for TapExtractor<'_> {
    fn features(&self, _key: &str, _role: Role, image: &Tensor) -> Result<Vec<f64>> {
        let [c, h, w] = *image.shape() else {
            return Err(Error::shape("features", format!("expected [c, h, w], got {:?}", image.shape())));
        };
        Ok(self.network.extract(&image.reshape(&[1, c, h, w])?, self.tap, self.store)?.to_vec())
    }
}

/// Precomputed features read from `role,subject/sample,f1,f2,...` lines.
pub struct ExternalFeatures {
    table: BTreeMap<(bool, String), Vec<f64>>,
}

impl ExternalFeatures {
    pub fn read(path: &Path) -> Result<ExternalFeatures> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut table = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::Data(format!("{}:{}: expected role,key,values...", path.display(), n + 1));
            let mut parts = line.split(',');
            let probe = match parts.next().map(str::trim) {
                Some("probe") => true,
                Some("gallery") => false,
                _ => return Err(bad()),
            };
            let key = parts.next().ok_or_else(bad)?.trim().to_string();
            let values = parts.map(|v| v.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<Vec<_>>>()?;
            if values.is_empty() {
                return Err(bad());
            }
            table.insert((probe, key), values);
        }
        Ok(ExternalFeatures { table })
    }
}

impl FeatureExtractor for ExternalFeatures {
    fn features(&self, key: &str, role: Role, _image: &Tensor) -> Result<Vec<f64>> {
        self.table
            .get(&(role == Role::Probe, key.to_string()))
            .cloned()
            .ok_or_else(|| Error::Data(format!("no external {role:?} features for {key}")))
    }
}

/// Scores every synthesized probe against every gallery image of the test
/// samples. A pair is genuine when the subjects match; each score carries
/// the probe's variation tag. Probes whose subject has no gallery image
/// are skipped with a warning.
pub fn build_score_set(
    test: &[&PairedSample],
    synth: &dyn Synthesizer,
    extractor: &dyn FeatureExtractor,
) -> Result<ScoreSet> {
    let gallery: Vec<(&PairedSample, Vec<f64>)> = test
        .iter()
        .map(|s| Ok((*s, extractor.features(&s.key(), Role::Gallery, &s.gallery)?)))
        .collect::<Result<_>>()?;
    let mut scores = Vec::new();
    for p in test {
        if !gallery.iter().any(|(g, _)| g.subject_id == p.subject_id) {
            warn!("probe {}: subject has no gallery image, skipped", p.key());
            continue;
        }
        let fp = extractor.features(&p.key(), Role::Probe, &synth.synthesize(p)?)?;
        for (g, fg) in &gallery {
            scores.push(Score {
                probe_id: p.key(),
                gallery_id: g.key(),
                genuine: g.subject_id == p.subject_id,
                value: cosine_score(&fp, fg)?,
                variation: p.variation,
            });
        }
    }
    Ok(ScoreSet { scores })
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// `auc=mean±std eer=mean±std` in percent across replicates.
pub fn replicate_summary(results: &[RocResult]) -> String {
    let (am, asd) = mean_std(&results.iter().map(|r| 100.0 * r.auc).collect::<Vec<_>>());
    let (em, esd) = mean_std(&results.iter().map(|r| 100.0 * r.eer).collect::<Vec<_>>());
    format!("replicates={} auc={am:.2}±{asd:.2} eer={em:.2}±{esd:.2}", results.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_synthetic_dataset;

    #[test]
    fn cosine_examples() {
        assert!((cosine_score(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(cosine_score(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert!((cosine_score(&[0.3, -2.0], &[0.3, -2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(cosine_score(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn perfect_separation() {
        let r = roc_auc_eer(&[0.9, 0.8, 0.7], &[0.1, 0.2]).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.eer, 0.0);
        assert!(!r.degenerate);
        assert!(roc_auc_eer(&[0.5], &[0.5]).unwrap().degenerate);
        assert!(roc_auc_eer(&[], &[0.5]).is_err());
    }

    #[test]
    fn ties_count_half() {
        let r = roc_auc_eer(&[0.5, 0.7], &[0.5, 0.1]).unwrap();
        // Pairs: (0.5,0.5) tie, (0.5,0.1) win, (0.7,0.5) win, (0.7,0.1) win.
        assert!((r.auc - 3.5 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn variation_rows_and_omissions() {
        let mut s = ScoreSet::from_lists(&[0.9, 0.4], &[0.3, 0.5]);
        let report = per_variation_report(&s).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!((report.rows[0].auc, report.rows[0].eer), (report.rows[1].auc, report.rows[1].eer));
        assert_eq!(report.notes.len(), 4);
        s.scores[0].variation = Variation::Pose;
        let report = per_variation_report(&s).unwrap();
        assert!(report.notes.iter().any(|n| n.starts_with("pose: 1 genuine and 0 impostor")));
    }

    #[test]
    fn oracle_scores_count_and_dominate() {
        let data = make_synthetic_dataset(3, 2, 16, 0).unwrap();
        let refs: Vec<&PairedSample> = data.iter().collect();
        let f = FeatureNetwork::new(Default::default()).unwrap();
        let store = f.init(0).unwrap();
        let ex = TapExtractor { network: &f, store: &store, tap: Tap::Deep };
        let set = build_score_set(&refs, &OracleSynthesizer, &ex).unwrap();
        assert_eq!(set.scores.len(), 36);
        assert_eq!(set.genuine().len(), 6 * 2);
        for p in &refs {
            let g = set.scores.iter().filter(|s| s.probe_id == p.key() && s.genuine).count();
            assert_eq!(g, refs.iter().filter(|s| s.subject_id == p.subject_id).count());
            assert!(set.scores.iter().filter(|s| s.probe_id == p.key()).all(|s| s.variation == p.variation));
        }
        let g = set.genuine();
        let i = set.impostor();
        let gm = g.iter().sum::<f64>() / g.len() as f64;
        let im = i.iter().sum::<f64>() / i.len() as f64;
        assert!(gm > im, "genuine {gm} impostor {im}");
    }

    #[test]
    fn score_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = ScoreSet::from_lists(&[0.25, 1.0 / 3.0], &[-0.5]);
        s.scores[1].variation = Variation::Occlusion;
        let p = dir.path().join("scores.csv");
        s.write_csv(&p).unwrap();
        assert_eq!(ScoreSet::read_csv(&p).unwrap(), s);
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
