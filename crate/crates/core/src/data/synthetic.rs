//! Procedural paired faces. Each subject is a parameter vector that fixes
//! ten binary attributes plus continuous identity traits; each sample adds
//! a capture variation and small jitter. The probe is a fixed invertible
//! channel mix of the visible image followed by a mild blur and a tanh
//! contrast curve.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{PairedSample, Variation};
use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::tensor::Tensor;

/// Rows map visible RGB to the three probe channels. Each row has unit L1
/// norm so mixed values stay in `[-1, 1]`.
pub const PROBE_MIX: [[f64; 3]; 3] = [[0.35, 0.45, 0.20], [0.45, -0.25, -0.30], [-0.25, 0.35, -0.40]];

/// Gain inside the probe contrast curve `tanh(gain · x)`.
pub const PROBE_GAIN: f64 = 1.5;

/// Separable blur taps applied to the mixed channels.
const BLUR: [f64; 3] = [0.1, 0.8, 0.1];

const SUPERSAMPLE: usize = 4;

/// Attribute indices, in label-file order.
mod attr {
    pub const ARCHED_EYEBROWS: usize = 0;
    pub const BIG_LIPS: usize = 1;
    pub const BIG_NOSE: usize = 2;
    pub const BUSHY_EYEBROWS: usize = 3;
    pub const MALE: usize = 4;
    pub const MUSTACHE: usize = 5;
    pub const NARROW_EYES: usize = 6;
    pub const NO_BEARD: usize = 7;
    pub const MOUTH_OPEN: usize = 8;
    pub const YOUNG: usize = 9;
}

/// Generative parameters of one synthetic identity.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectParams {
    pub attributes: [bool; 10],
    pub skin: [f64; 3],
    pub hair: [f64; 3],
    pub background: [f64; 3],
    pub lips: [f64; 3],
    pub iris: [f64; 3],
    pub face_w: f64,
    pub face_h: f64,
    pub eye_y: f64,
    pub eye_dx: f64,
    pub mouth_y: f64,
    pub mouth_w: f64,
}

impl SubjectParams {
    pub fn sample(rng: &mut ChaCha8Rng) -> SubjectParams {
        let mut attributes = [false; 10];
        attributes.iter_mut().for_each(|a| *a = rng.random::<bool>());
        let u = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| rng.random_range(lo..hi);
        let tone = u(rng, 0.35, 0.95);
        let skin = [tone, tone * u(rng, 0.72, 0.85), tone * u(rng, 0.55, 0.7)];
        let hair_base = match rng.random_range(0..3) {
            0 => [0.12, 0.09, 0.07],
            1 => [0.42, 0.26, 0.12],
            _ => [0.85, 0.7, 0.38],
        };
        let young = attributes[attr::YOUNG];
        let hair = if young { hair_base } else { hair_base.map(|c| 0.3 * c + 0.55) };
        let background = [u(rng, 0.2, 0.9), u(rng, 0.2, 0.9), u(rng, 0.2, 0.9)];
        let lips = [u(rng, 0.6, 0.85), u(rng, 0.2, 0.35), u(rng, 0.25, 0.4)];
        let iris = [u(rng, 0.05, 0.4), u(rng, 0.1, 0.45), u(rng, 0.1, 0.6)];
        let male = attributes[attr::MALE];
        SubjectParams {
            face_w: u(rng, 0.25, 0.3) + if male { 0.04 } else { 0.0 },
            face_h: u(rng, 0.34, 0.4),
            eye_y: u(rng, 0.41, 0.46),
            eye_dx: u(rng, 0.11, 0.14),
            mouth_y: u(rng, 0.69, 0.73),
            mouth_w: u(rng, 0.08, 0.11),
            attributes,
            skin,
            hair,
            background,
            lips,
            iris,
        }
    }

    pub fn attribute_vector(&self) -> Vec<f64> {
        self.attributes.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect()
    }
}

/// Per-sample capture conditions.
#[derive(Clone, Debug, PartialEq)]
struct Capture {
    variation: Variation,
    dx: f64,
    dy: f64,
    scale: f64,
    brightness: f64,
    noise: f64,
}

fn ellipse(x: f64, y: f64, cx: f64, cy: f64, rx: f64, ry: f64) -> bool {
    let (a, b) = ((x - cx) / rx, (y - cy) / ry);
    a * a + b * b <= 1.0
}

fn mix(c: [f64; 3], d: [f64; 3], t: f64) -> [f64; 3] {
    [c[0] * (1.0 - t) + d[0] * t, c[1] * (1.0 - t) + d[1] * t, c[2] * (1.0 - t) + d[2] * t]
}

/// Colour at face coordinate `(x, y)` in `[0, 1]²`.
fn shade(p: &SubjectParams, cap: &Capture, x0: f64, y0: f64) -> [f64; 3] {
    let a = &p.attributes;
    // Undo the capture transform to land in canonical face coordinates.
    let mut x = (x0 - 0.5 - cap.dx) / cap.scale + 0.5;
    let y = (y0 - 0.5 - cap.dy) / cap.scale + 0.5;
    let expression = cap.variation == Variation::Expression;
    if cap.variation == Variation::Pose {
        // Yaw: compress horizontally and slide toward one side.
        x = (x - 0.62) / 0.8 + 0.5;
    }
    let (cx, cy) = (0.5, 0.5);
    let mut col = p.background;
    if !a[attr::MALE] && ellipse(x, y, cx, cy + 0.12, p.face_w + 0.09, p.face_h + 0.12) && y > cy - p.face_h - 0.06 {
        col = p.hair;
    }
    let in_face = ellipse(x, y, cx, cy, p.face_w, p.face_h);
    if ellipse(x, y, cx, cy - 0.04, p.face_w + 0.025, p.face_h + 0.03) && y < cy - p.face_h * 0.55 {
        col = p.hair;
    }
    if in_face {
        col = p.skin;
        let top = cy - p.face_h;
        let hairline = top + if a[attr::MALE] { 0.07 } else { 0.11 };
        if y < hairline {
            col = p.hair;
        }
        if !a[attr::NO_BEARD] && y > p.mouth_y - 0.03 {
            col = mix(col, [0.1, 0.08, 0.06], 0.9);
        }
    }
    if !in_face && !ellipse(x, y, cx, cy + 0.12, p.face_w + 0.09, p.face_h + 0.12) {
        return finish(col, cap, x0);
    }
    // Eyes, eyebrows.
    let eye_h = if a[attr::NARROW_EYES] { 0.012 } else { 0.03 };
    let brow_y = p.eye_y - 0.075 - if expression { 0.02 } else { 0.0 };
    let brow_t = if a[attr::BUSHY_EYEBROWS] { 0.05 } else { 0.014 };
    for side in [-1.0, 1.0] {
        let ex = cx + side * p.eye_dx;
        if ellipse(x, y, ex, p.eye_y, 0.05, eye_h) {
            col = [0.95, 0.95, 0.93];
            if ellipse(x, y, ex, p.eye_y, 0.022, eye_h.min(0.022)) {
                col = p.iris;
            }
        }
        let t = (x - ex) / 0.065;
        if t.abs() <= 1.0 {
            let arch = if a[attr::ARCHED_EYEBROWS] { 0.085 * (1.0 - t * t) } else { 0.0 };
            if (y - (brow_y - arch)).abs() <= brow_t * 0.5 {
                col = [0.07, 0.05, 0.04];
            }
        }
    }
    // Nose.
    let (nrx, nry) = if a[attr::BIG_NOSE] { (0.05, 0.075) } else { (0.022, 0.04) };
    if ellipse(x, y, cx, p.eye_y + 0.13, nrx, nry) {
        col = p.skin.map(|c| c * 0.72);
    }
    // Mouth.
    let mouth_w = p.mouth_w * if expression { 1.35 } else { 1.0 };
    let lip_h = if a[attr::BIG_LIPS] { 0.045 } else { 0.013 };
    if ellipse(x, y, cx, p.mouth_y, mouth_w, lip_h) {
        col = p.lips;
        if a[attr::MOUTH_OPEN] && ellipse(x, y, cx, p.mouth_y, mouth_w * 0.8, 0.016) {
            col = [0.08, 0.03, 0.03];
        }
    }
    if a[attr::MUSTACHE] && (x - cx).abs() < mouth_w * 1.2 && (y - (p.mouth_y - lip_h - 0.025)).abs() < 0.02 {
        col = [0.06, 0.05, 0.04];
    }
    if cap.variation == Variation::Occlusion
        && (y - p.eye_y).abs() < 0.045
        && (x - cx).abs() < p.eye_dx + 0.075
    {
        col = mix(col, [0.05, 0.05, 0.06], 0.9);
    }
    finish(col, cap, x0)
}

fn finish(col: [f64; 3], cap: &Capture, x0: f64) -> [f64; 3] {
    let light = if cap.variation == Variation::Illumination { 0.55 + 0.7 * x0 } else { 1.0 };
    col.map(|c| c * cap.brightness * light)
}

/// Renders the visible image `[3, r, r]` in `[-1, 1]`.
fn render(p: &SubjectParams, cap: &Capture, r: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = vec![0.0; 3 * r * r];
    let n = SUPERSAMPLE;
    let noise = Normal::new(0.0, cap.noise.max(1e-12)).expect("valid std");
    for i in 0..r {
        for j in 0..r {
            let mut acc = [0.0; 3];
            for si in 0..n {
                for sj in 0..n {
                    let y = (i as f64 + (si as f64 + 0.5) / n as f64) / r as f64;
                    let x = (j as f64 + (sj as f64 + 0.5) / n as f64) / r as f64;
                    let c = shade(p, cap, x, y);
                    (0..3).for_each(|k| acc[k] += c[k]);
                }
            }
            for (k, a) in acc.iter().enumerate() {
                let v = a / (n * n) as f64 + noise.sample(rng);
                out[k * r * r + i * r + j] = (2.0 * v - 1.0).clamp(-1.0, 1.0);
            }
        }
    }
    out
}

fn blur_plane(plane: &[f64], r: usize) -> Vec<f64> {
    let at = |v: &[f64], i: isize, j: isize| {
        let ci = i.clamp(0, r as isize - 1) as usize;
        let cj = j.clamp(0, r as isize - 1) as usize;
        v[ci * r + cj]
    };
    let mut tmp = vec![0.0; r * r];
    for i in 0..r as isize {
        for j in 0..r as isize {
            tmp[i as usize * r + j as usize] = (-1..=1).map(|d| BLUR[(d + 1) as usize] * at(plane, i, j + d)).sum();
        }
    }
    let mut out = vec![0.0; r * r];
    for i in 0..r as isize {
        for j in 0..r as isize {
            out[i as usize * r + j as usize] = (-1..=1).map(|d| BLUR[(d + 1) as usize] * at(&tmp, i + d, j)).sum();
        }
    }
    out
}

/// Three-channel probe `[S0, S1, S2]` of a visible `[3, r, r]` image.
pub fn thermal_probe(visible: &[f64], r: usize) -> Vec<f64> {
    let n = r * r;
    let mut out = Vec::with_capacity(3 * n);
    for row in PROBE_MIX {
        let mixed: Vec<f64> = (0..n)
            .map(|p| row[0] * visible[p] + row[1] * visible[n + p] + row[2] * visible[2 * n + p])
            .collect();
        out.extend(blur_plane(&mixed, r).into_iter().map(|v| (PROBE_GAIN * v).tanh()));
    }
    out
}

fn invert3(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let c = |a: usize, b: usize, x: usize, y: usize| m[a][b] * m[x][y] - m[a][y] * m[x][b];
    [
        [c(1, 1, 2, 2) / det, -c(0, 1, 2, 2) / det, c(0, 1, 1, 2) / det],
        [-c(1, 0, 2, 2) / det, c(0, 0, 2, 2) / det, -c(0, 0, 1, 2) / det],
        [c(1, 0, 2, 1) / det, -c(0, 0, 2, 1) / det, c(0, 0, 1, 1) / det],
    ]
}

/// Inverts the contrast curve and channel mix (the blur is left in place).
pub fn thermal_inverse(probe: &[f64], r: usize) -> Vec<f64> {
    let n = r * r;
    let inv = invert3(PROBE_MIX);
    let lin: Vec<f64> = probe.iter().map(|&p| p.clamp(-0.999_999, 0.999_999).atanh() / PROBE_GAIN).collect();
    let mut out = vec![0.0; 3 * n];
    for (k, row) in inv.iter().enumerate() {
        for p in 0..n {
            out[k * n + p] = row[0] * lin[p] + row[1] * lin[n + p] + row[2] * lin[2 * n + p];
        }
    }
    out
}

const VARIATION_CYCLE: [Variation; 5] = [
    Variation::Neutral,
    Variation::Expression,
    Variation::Pose,
    Variation::Occlusion,
    Variation::Illumination,
];

fn capture(j: usize, rng: &mut ChaCha8Rng) -> Capture {
    Capture {
        variation: VARIATION_CYCLE[j % VARIATION_CYCLE.len()],
        dx: rng.random_range(-0.02..0.02),
        dy: rng.random_range(-0.02..0.02),
        scale: rng.random_range(0.97..1.03),
        brightness: rng.random_range(0.95..1.05),
        noise: 0.01,
    }
}

pub fn subject_id(k: usize) -> String {
    format!("s{k:03}")
}

pub fn subject_params(seed: u64, k: usize) -> SubjectParams {
    SubjectParams::sample(&mut rng_for(seed, &format!("synthetic.subject.{k}")))
}

/// Deterministic paired dataset. Sample `j` of every subject uses variation
/// `j mod 5` in the order neutral, expression, pose, occlusion, illumination.
pub fn make_synthetic_dataset(
    n_subjects: usize,
    samples_per_subject: usize,
    resolution: usize,
    seed: u64,
) -> Result<Vec<PairedSample>> {
    if !resolution.is_power_of_two() || resolution < 8 {
        return Err(Error::Config(format!("synthetic resolution {resolution} must be a power of two >= 8")));
    }
    let r = resolution;
    let mut out = Vec::with_capacity(n_subjects * samples_per_subject);
    for k in 0..n_subjects {
        let params = subject_params(seed, k);
        for j in 0..samples_per_subject {
            let mut rng = rng_for(seed, &format!("synthetic.sample.{k}.{j}"));
            let cap = capture(j, &mut rng);
            let visible = render(&params, &cap, r, &mut rng);
            let probe = thermal_probe(&visible, r);
            out.push(PairedSample {
                subject_id: subject_id(k),
                sample_id: format!("{j:02}"),
                probe: Tensor::from_vec(&[3, r, r], probe)?,
                gallery: Tensor::from_vec(&[3, r, r], visible)?,
                attributes: Some(params.attribute_vector()),
                variation: cap.variation,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = make_synthetic_dataset(2, 2, 16, 5).unwrap();
        let b = make_synthetic_dataset(2, 2, 16, 5).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.gallery.data(), y.gallery.data());
            assert_eq!(x.probe.data(), y.probe.data());
        }
        let c = make_synthetic_dataset(2, 2, 16, 6).unwrap();
        assert_ne!(a[0].gallery.data(), c[0].gallery.data());
    }

    #[test]
    fn attributes_follow_parameters() {
        let data = make_synthetic_dataset(6, 1, 8, 2).unwrap();
        for (k, s) in data.iter().enumerate() {
            let p = subject_params(2, k);
            assert_eq!(s.attributes.as_ref().unwrap(), &p.attribute_vector());
            assert_eq!(!p.attributes[attr::YOUNG], p.hair.iter().all(|&c| c >= 0.55));
        }
    }

    #[test]
    fn inverse_transform_recovers_visible() {
        let data = make_synthetic_dataset(3, 5, 32, 1).unwrap();
        for s in &data {
            let back = thermal_inverse(s.probe.data(), 32);
            let mad = back.iter().zip(s.gallery.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / back.len() as f64;
            assert!(mad < 0.05, "mean abs difference {mad}");
        }
    }

    #[test]
    fn mix_matrix_inverse() {
        let inv = invert3(PROBE_MIX);
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| PROBE_MIX[i][k] * inv[k][j]).sum();
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }
}
