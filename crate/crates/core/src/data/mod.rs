//! Paired thermal/visible samples: on-disk layout, preprocessing, synthetic
//! generation and subject-disjoint splits.

mod layout;
mod png16;
mod splits;
mod synthetic;
mod transform;

use std::fmt;
use std::str::FromStr;

pub use layout::{load_paired_dir, load_sample, read_attribute_file, write_attribute_file, write_paired_dir, AttributeRecord, LABEL_FILE};
pub use png16::{from_unit, read_png, to_unit, write_png};
pub use splits::{make_splits, read_split, write_split, ProtocolSplit};
pub use synthetic::{
    make_synthetic_dataset, subject_id, subject_params, thermal_inverse, thermal_probe, SubjectParams, PROBE_GAIN,
    PROBE_MIX,
};
pub use transform::central_crop_resize;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variation {
    Neutral,
    Expression,
    Pose,
    Occlusion,
    Illumination,
}

impl Variation {
    pub const ALL: [Variation; 5] = [
        Variation::Neutral,
        Variation::Expression,
        Variation::Pose,
        Variation::Occlusion,
        Variation::Illumination,
    ];
}

impl fmt::Display for Variation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variation::Neutral => "neutral",
            Variation::Expression => "expression",
            Variation::Pose => "pose",
            Variation::Occlusion => "occlusion",
            Variation::Illumination => "illumination",
        })
    }
}

impl FromStr for Variation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Variation> {
        Variation::ALL
            .into_iter()
            .find(|v| v.to_string() == s)
            .ok_or_else(|| Error::Data(format!("unknown variation tag {s:?}")))
    }
}

/// Which thermal channels form the probe.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    /// Intensity only, one channel.
    S0,
    /// Stacked `[S0, S1, S2]`.
    Polar,
}

impl Modality {
    pub fn channels(self) -> usize {
        match self {
            Modality::S0 => 1,
            Modality::Polar => 3,
        }
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Modality> {
        match s.to_ascii_lowercase().as_str() {
            "s0" => Ok(Modality::S0),
            "polar" => Ok(Modality::Polar),
            _ => Err(Error::Config(format!("unknown modality {s:?}; expected s0 or polar"))),
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::S0 => "s0",
            Modality::Polar => "polar",
        })
    }
}

/// One aligned probe/gallery pair. Images are `[c, r, r]` in `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct PairedSample {
    pub subject_id: String,
    pub sample_id: String,
    pub probe: Tensor,
    pub gallery: Tensor,
    /// Binary attribute labels, when a label file provides them.
    pub attributes: Option<Vec<f64>>,
    pub variation: Variation,
}

impl PairedSample {
    /// `subject/sample`, the key used by label and score files.
    pub fn key(&self) -> String {
        format!("{}/{}", self.subject_id, self.sample_id)
    }

    /// Probe restricted to `modality` (drops S1, S2 for intensity-only).
    pub fn probe_for(&self, modality: Modality) -> Result<Tensor> {
        let c = self.probe.shape()[0];
        match (modality, c) {
            (Modality::Polar, 3) | (Modality::S0, 1) => Ok(self.probe.clone()),
            (Modality::S0, 3) => {
                let [_, h, w] = *self.probe.shape() else { unreachable!() };
                Tensor::from_vec(&[1, h, w], self.probe.data()[..h * w].to_vec())
            }
            _ => Err(Error::Data(format!("{}: probe has {c} channels, {modality} needs 3", self.key()))),
        }
    }
}

/// Sorted distinct subject ids.
pub fn subjects(samples: &[PairedSample]) -> Vec<String> {
    let mut ids: Vec<String> = samples.iter().map(|s| s.subject_id.clone()).collect();
    ids.sort();
    ids.dedup();
    ids
}

/// Samples whose subject is in `ids`, in input order.
pub fn select<'a>(samples: &'a [PairedSample], ids: &[String]) -> Vec<&'a PairedSample> {
    samples.iter().filter(|s| ids.contains(&s.subject_id)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags_round_trip() {
        for v in Variation::ALL {
            assert_eq!(v.to_string().parse::<Variation>().unwrap(), v);
        }
        assert!("sideways".parse::<Variation>().is_err());
        assert_eq!("Polar".parse::<Modality>().unwrap(), Modality::Polar);
    }

    #[test]
    fn intensity_probe_is_first_channel() {
        let s = &make_synthetic_dataset(1, 1, 8, 0).unwrap()[0];
        let p = s.probe_for(Modality::S0).unwrap();
        assert_eq!(p.shape(), &[1, 8, 8]);
        assert_eq!(p.data(), &s.probe.data()[..64]);
    }
}
