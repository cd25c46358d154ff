//! Binary grayscale PGM ("P5").

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn parse_err(context: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        context: context.to_string(),
        message: message.into(),
    }
}

/// Reads a P5 image into `[1, H, W]` with values scaled to `[0, 1]`.
pub fn decode_pgm(bytes: &[u8], context: &str) -> Result<Tensor<f64>> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(parse_err(context, "missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, name) in ["width", "height", "maxval"].iter().enumerate() {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let token = std::str::from_utf8(&bytes[start..pos]).unwrap_or_default();
        fields[i] = token
            .parse()
            .map_err(|_| parse_err(context, format!("bad {name} in header")))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(parse_err(context, format!("empty image {width}x{height}")));
    }
    if !(1..=65535).contains(&maxval) {
        return Err(parse_err(context, format!("maxval {maxval} outside 1..=65535")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(parse_err(context, "header not followed by whitespace"));
    }
    pos += 1;
    let wide = maxval > 255;
    let need = width * height * if wide { 2 } else { 1 };
    let raster = bytes.get(pos..pos + need).ok_or_else(|| {
        parse_err(
            context,
            format!("expected {need} pixel bytes, found {}", bytes.len() - pos),
        )
    })?;
    let scale = maxval as f64;
    let mut data = Vec::with_capacity(width * height);
    if wide {
        data.extend(
            raster
                .chunks_exact(2)
                .map(|p| u16::from_be_bytes([p[0], p[1]]) as f64 / scale),
        );
    } else {
        data.extend(raster.iter().map(|&p| p as f64 / scale));
    }
    if data.iter().any(|&v| v > 1.0) {
        return Err(parse_err(context, "pixel value above maxval"));
    }
    Tensor::from_vec(&[1, height, width], data)
}

/// Writes `[1, H, W]` (values in `[0, 1]`) as an 8-bit P5 image, rounding to
/// the nearest level.
pub fn encode_pgm(image: &Tensor<f64>) -> Result<Vec<u8>> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 1 {
        return Err(Error::validation(format!("expected a [1, H, W] image, got {s:?}")));
    }
    let mut out = format!("P5\n{} {}\n255\n", s[2], s[1]).into_bytes();
    for &v in image.data() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::validation(format!("pixel value {v} outside [0, 1]")));
        }
        out.push((v * 255.0).round() as u8);
    }
    Ok(out)
}

pub fn read_pgm(path: &Path) -> Result<Tensor<f64>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, &path.display().to_string())
}

pub fn write_pgm(path: &Path, image: &Tensor<f64>) -> Result<()> {
    std::fs::write(path, encode_pgm(image)?).map_err(|e| Error::io(path, e))
}
