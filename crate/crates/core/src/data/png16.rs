//! 16-bit PNG I/O with a linear map between `[0, 65535]` and `[-1, 1]`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn to_unit(v: u16) -> f64 {
    2.0 * v as f64 / 65535.0 - 1.0
}

pub fn from_unit(x: f64) -> u16 {
    ((x.clamp(-1.0, 1.0) + 1.0) * 0.5 * 65535.0).round() as u16
}

/// Decodes a grayscale or RGB PNG (8- or 16-bit) into `[c, h, w]` with
/// values in `[-1, 1]`. Alpha channels are dropped.
pub fn read_png(path: &Path) -> Result<Tensor> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |e: png::DecodingError| Error::Data(format!("{}: {e}", path.display()));
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(corrupt)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Data(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(corrupt)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let (stored, keep) = match info.color_type {
        ColorType::Grayscale => (1, 1),
        ColorType::GrayscaleAlpha => (2, 1),
        ColorType::Rgb => (3, 3),
        ColorType::Rgba => (4, 3),
        other => return Err(Error::Data(format!("{}: unsupported color type {other:?}", path.display()))),
    };
    let samples: Vec<f64> = match info.bit_depth {
        BitDepth::Sixteen => buf[..info.buffer_size()]
            .chunks_exact(2)
            .map(|b| to_unit(u16::from_be_bytes([b[0], b[1]])))
            .collect(),
        BitDepth::Eight => buf[..info.buffer_size()].iter().map(|&b| 2.0 * b as f64 / 255.0 - 1.0).collect(),
        other => return Err(Error::Data(format!("{}: unsupported bit depth {other:?}", path.display()))),
    };
    let mut out = vec![0.0; keep * h * w];
    for (p, px) in samples.chunks_exact(stored).enumerate() {
        for c in 0..keep {
            out[c * h * w + p] = px[c];
        }
    }
    Tensor::from_vec(&[keep, h, w], out)
}

/// Writes a `[1, h, w]` or `[3, h, w]` tensor as a 16-bit PNG. Values are
/// clamped to `[-1, 1]`.
pub fn write_png(path: &Path, img: &Tensor) -> Result<()> {
    let (c, h, w) = match *img.shape() {
        [c, h, w] if c == 1 || c == 3 => (c, h, w),
        ref s => return Err(Error::shape("write_png", format!("expected [1|3, h, w], got {s:?}"))),
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(if c == 1 { ColorType::Grayscale } else { ColorType::Rgb });
    enc.set_depth(BitDepth::Sixteen);
    let data = img.data();
    let mut bytes = Vec::with_capacity(2 * data.len());
    for p in 0..h * w {
        for ch in 0..c {
            bytes.extend_from_slice(&from_unit(data[ch * h * w + p]).to_be_bytes());
        }
    }
    let fail = |e: png::EncodingError| Error::Data(format!("{}: {e}", path.display()));
    let mut writer = enc.write_header().map_err(fail)?;
    writer.write_image_data(&bytes).map_err(fail)?;
    writer.finish().map_err(fail)
}
