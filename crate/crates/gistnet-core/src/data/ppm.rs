//! Binary PPM (P6, maxval 255) encode/decode. This is the mandatory image
//! format of the pipeline; it needs nothing beyond the standard library.

use crate::tensor::{Scalar, Shape, Tensor};
use crate::{Error, Result};
use std::io::Write;
use std::path::Path;

/// Writes interleaved RGB bytes as a P6 PPM with maxval 255.
pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    if rgb.len() != 3 * width * height {
        return Err(Error::Argument(format!(
            "rgb buffer length {} does not match {width}x{height}x3",
            rgb.len()
        )));
    }
    let mut out = Vec::with_capacity(rgb.len() + 32);
    write!(out, "P6\n{width} {height}\n255\n").expect("in-memory write");
    out.extend_from_slice(rgb);
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

fn skip_ppm_whitespace(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else {
            return pos;
        }
    }
}

fn read_ppm_int(bytes: &[u8], pos: usize, what: &str) -> Result<(usize, usize)> {
    let start = skip_ppm_whitespace(bytes, pos);
    let mut end = start;
    while end < bytes.len() && bytes[end].is_ascii_digit() {
        end += 1;
    }
    if end == start {
        return Err(Error::Parse(format!(
            "expected {what} at byte offset {start} of PPM header"
        )));
    }
    let text = std::str::from_utf8(&bytes[start..end]).expect("ascii digits");
    let value: usize = text
        .parse()
        .map_err(|_| Error::Parse(format!("invalid {what} '{text}' in PPM header")))?;
    Ok((value, end))
}

/// Decodes a P6 PPM (maxval 255) into (width, height, interleaved RGB).
pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    decode_ppm(&bytes).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Decodes P6 bytes; exposed separately so fixtures can be checked without
/// touching the filesystem.
pub(crate) fn decode_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    if bytes.len() < 2 || &bytes[0..2] != b"P6" {
        return Err(Error::Parse("missing P6 magic".into()));
    }
    let (width, pos) = read_ppm_int(bytes, 2, "width")?;
    let (height, pos) = read_ppm_int(bytes, pos, "height")?;
    let (maxval, pos) = read_ppm_int(bytes, pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::Parse(format!("unsupported maxval {maxval}, expected 255")));
    }
    if width == 0 || height == 0 {
        return Err(Error::Parse(format!("degenerate image size {width}x{height}")));
    }
    // Exactly one whitespace byte separates the header from pixel data.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Parse(format!(
            "expected whitespace after maxval at byte offset {pos}"
        )));
    }
    let data_start = pos + 1;
    let need = 3 * width * height;
    if bytes.len() < data_start + need {
        return Err(Error::Parse(format!(
            "truncated pixel data: need {need} bytes, found {}",
            bytes.len() - data_start
        )));
    }
    Ok((width, height, bytes[data_start..data_start + need].to_vec()))
}

/// Converts a [3,H,W] tensor with values in [0,1] to interleaved RGB bytes
/// (clamped, rounded).
pub fn tensor_to_rgb8<T: Scalar>(t: &Tensor<T>) -> Result<(usize, usize, Vec<u8>)> {
    if t.shape().rank() != 3 || t.dims()[0] != 3 {
        return Err(Error::Shape(format!(
            "expected [3,H,W] tensor, got {}",
            t.shape()
        )));
    }
    let (h, w) = (t.dims()[1], t.dims()[2]);
    let d = t.data();
    let mut rgb = vec![0u8; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = d[(c * h + y) * w + x].to_f64();
                rgb[(y * w + x) * 3 + c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    Ok((w, h, rgb))
}

/// Converts interleaved RGB bytes to a [3,H,W] tensor with values in [0,1].
pub fn rgb8_to_tensor(width: usize, height: usize, rgb: &[u8]) -> Result<Tensor<f32>> {
    if rgb.len() != 3 * width * height {
        return Err(Error::Argument(format!(
            "rgb buffer length {} does not match {width}x{height}x3",
            rgb.len()
        )));
    }
    let mut data = vec![0.0f32; 3 * width * height];
    for y in 0..height {
        for x in 0..width {
            for c in 0..3 {
                data[(c * height + y) * width + x] = rgb[(y * width + x) * 3 + c] as f32 / 255.0;
            }
        }
    }
    Tensor::from_vec(Shape::new([3, height, width])?, data)
}
