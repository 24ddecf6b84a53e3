use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use log::warn;

use super::{central_crop_resize, read_png, write_png, Modality, PairedSample, Variation};
use crate::error::{Error, Result};
use crate::perception::ATTRIBUTE_NAMES;
use crate::tensor::Tensor;

/// Label file at the dataset root.
pub const LABEL_FILE: &str = "attributes.csv";

const PROBE_FILES: [&str; 3] = ["s0.png", "s1.png", "s2.png"];

/// One row of the label file.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeRecord {
    /// `subject/sample`.
    pub path: String,
    pub attributes: Vec<f64>,
    pub variation: Option<Variation>,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

/// Reads `path,<attribute names...>[,variation]`. Attribute fields are 0 or 1.
pub fn read_attribute_file(path: &Path) -> Result<Vec<AttributeRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let names: Vec<&str> = header.iter().collect();
    let n = ATTRIBUTE_NAMES.len();
    if names.len() < n + 1 || names[0] != "path" || names[1..=n] != ATTRIBUTE_NAMES {
        return Err(Error::Data(format!(
            "{}: header must be path followed by {}",
            path.display(),
            ATTRIBUTE_NAMES.join(",")
        )));
    }
    let has_variation = names.get(n + 1) == Some(&"variation");
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let bad = |what: &str| Error::Data(format!("{} row {}: {what}", path.display(), line + 2));
        let mut attributes = Vec::with_capacity(n);
        for k in 1..=n {
            match rec.get(k).map(str::trim) {
                Some("0") => attributes.push(0.0),
                Some("1") => attributes.push(1.0),
                other => return Err(bad(&format!("{} = {other:?}, expected 0 or 1", ATTRIBUTE_NAMES[k - 1]))),
            }
        }
        let variation = match (has_variation, rec.get(n + 1)) {
            (true, Some(v)) if !v.is_empty() => Some(v.trim().parse().map_err(|_| bad(&format!("variation {v:?}")))?),
            _ => None,
        };
        out.push(AttributeRecord { path: rec[0].trim().to_string(), attributes, variation });
    }
    Ok(out)
}

pub fn write_attribute_file(path: &Path, records: &[AttributeRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<&str> = std::iter::once("path").chain(ATTRIBUTE_NAMES).chain(["variation"]).collect();
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for r in records {
        let mut row = vec![r.path.clone()];
        row.extend(r.attributes.iter().map(|&a| if a >= 0.5 { "1" } else { "0" }.to_string()));
        row.push(r.variation.map(|v| v.to_string()).unwrap_or_default());
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn sorted_dirs(dir: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.file_type().map_err(|e| Error::io(dir, e))?.is_dir() {
            out.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    out.sort();
    Ok(out)
}

fn fit_side(img: Tensor, resolution: Option<usize>) -> Result<Tensor> {
    match resolution {
        Some(r) if img.shape()[1..] != [r, r] => central_crop_resize(&img, r),
        _ => Ok(img),
    }
}

/// Loads `root/{subject}/{sample}/{visible,s0,s1,s2}.png` in sorted order.
/// Samples missing a required file are skipped with a warning. With
/// `resolution`, images that are not already that size are centre-cropped
/// and resized. Labels and variation tags come from [`LABEL_FILE`] when
/// present; without it `attributes` is `None` and variations are neutral.
pub fn load_paired_dir(root: &Path, modality: Modality, resolution: Option<usize>) -> Result<Vec<PairedSample>> {
    let labels: BTreeMap<String, AttributeRecord> = {
        let p = root.join(LABEL_FILE);
        if p.exists() {
            read_attribute_file(&p)?.into_iter().map(|r| (r.path.clone(), r)).collect()
        } else {
            BTreeMap::new()
        }
    };
    let mut out = Vec::new();
    for subject in sorted_dirs(root)? {
        for sample in sorted_dirs(&root.join(&subject))? {
            let dir = root.join(&subject).join(&sample);
            let needed = std::iter::once("visible.png").chain(PROBE_FILES[..modality.channels()].iter().copied());
            if let Some(missing) = needed.into_iter().find(|f| !dir.join(f).is_file()) {
                warn!("skipping {}: missing {missing}", dir.display());
                continue;
            }
            let (probe, gallery) = load_sample(&dir, modality, resolution)?;
            let gallery = gallery.expect("visible image checked above");
            let key = format!("{subject}/{sample}");
            let label = labels.get(&key);
            out.push(PairedSample {
                probe,
                gallery,
                attributes: label.map(|r| r.attributes.clone()),
                variation: label.and_then(|r| r.variation).unwrap_or(Variation::Neutral),
                subject_id: subject.clone(),
                sample_id: sample,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{}: no complete samples", root.display())));
    }
    Ok(out)
}

/// Reads the probe planes of one sample directory and its visible image
/// when present.
pub fn load_sample(dir: &Path, modality: Modality, resolution: Option<usize>) -> Result<(Tensor, Option<Tensor>)> {
    let visible = dir.join("visible.png");
    let gallery = if visible.is_file() {
        let g = fit_side(read_png(&visible)?, resolution)?;
        if g.shape()[0] != 3 {
            return Err(Error::Data(format!("{}: visible image must be RGB", visible.display())));
        }
        Some(g)
    } else {
        None
    };
    let mut probe = Vec::new();
    let mut side = None;
    for f in &PROBE_FILES[..modality.channels()] {
        let t = fit_side(read_png(&dir.join(f))?, resolution)?;
        if t.shape()[0] != 1 {
            return Err(Error::Data(format!("{}: probe channel must be grayscale", dir.join(f).display())));
        }
        if side.is_some_and(|s| s != t.shape()[1..]) {
            return Err(Error::Data(format!("{}: probe planes differ in size", dir.display())));
        }
        side = Some([t.shape()[1], t.shape()[2]]);
        probe.extend_from_slice(t.data());
    }
    let [h, w] = side.expect("at least one probe plane");
    if gallery.as_ref().is_some_and(|g| g.shape()[1..] != [h, w]) {
        return Err(Error::Data(format!("{}: probe and visible sizes differ", dir.display())));
    }
    Ok((Tensor::from_vec(&[modality.channels(), h, w], probe)?, gallery))
}

/// Writes samples in the layout read by [`load_paired_dir`], plus the label
/// file when every sample carries attributes.
pub fn write_paired_dir(root: &Path, samples: &[PairedSample]) -> Result<()> {
    let mut records = Vec::new();
    for s in samples {
        let dir = root.join(&s.subject_id).join(&s.sample_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_png(&dir.join("visible.png"), &s.gallery)?;
        let [c, h, w] = *s.probe.shape() else {
            return Err(Error::Data(format!("{}: probe must be [c, h, w]", s.key())));
        };
        for (k, f) in PROBE_FILES[..c.min(3)].iter().enumerate() {
            let plane = Tensor::from_vec(&[1, h, w], s.probe.data()[k * h * w..(k + 1) * h * w].to_vec())?;
            write_png(&dir.join(f), &plane)?;
        }
        if let Some(a) = &s.attributes {
            records.push(AttributeRecord { path: s.key(), attributes: a.clone(), variation: Some(s.variation) });
        }
    }
    if !records.is_empty() && records.len() == samples.len() {
        write_attribute_file(&root.join(LABEL_FILE), &records)?;
    }
    Ok(())
}
