//! Binary PGM (`P5`) and PPM (`P6`) codecs.
//!
//! Decoding accepts any maxval in `1..=65535` (16-bit samples big-endian) and
//! header comments. Encoding always writes 8-bit samples with maxval 255 and
//! a minimal `P5\n<w> <h>\n255\n` header; values are `round(clamp(v) * 255)`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn decode_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Decode {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    maxval: u32,
    data_start: usize,
}

fn parse_header(buf: &[u8]) -> std::result::Result<Header, String> {
    if buf.len() < 2 || buf[0] != b'P' {
        return Err("missing P5/P6 magic".into());
    }
    let channels = match buf[1] {
        b'5' => 1,
        b'6' => 3,
        b'1'..=b'4' => return Err(format!("netpbm variant P{} is not supported", buf[1] as char)),
        _ => return Err("missing P5/P6 magic".into()),
    };
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in &mut fields {
        // whitespace and comments before each header number
        loop {
            match buf.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < buf.len() && buf[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while pos < buf.len() && buf[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err("malformed header number".into());
        }
        *field = std::str::from_utf8(&buf[start..pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| "header number out of range".to_string())?;
    }
    match buf.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err("missing whitespace after maxval".into()),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err("zero image extent".into());
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} outside 1..=65535"));
    }
    Ok(Header {
        channels,
        width: width as usize,
        height: height as usize,
        maxval,
        data_start: pos,
    })
}

/// Decodes a P5/P6 buffer into a `(1, C, H, W)` tensor with values in `[0, 1]`.
pub fn decode(buf: &[u8], path: &Path) -> Result<Tensor<f32>> {
    let h = parse_header(buf).map_err(|m| decode_err(path, m))?;
    let bytes_per = if h.maxval < 256 { 1 } else { 2 };
    let pixels = h.width * h.height;
    let need = pixels * h.channels * bytes_per;
    let data = &buf[h.data_start..];
    if data.len() < need {
        return Err(decode_err(path, format!("expected {need} data bytes, found {}", data.len())));
    }
    let maxval = h.maxval as f32;
    let sample = |i: usize| -> f32 {
        let v = if bytes_per == 1 {
            u32::from(data[i])
        } else {
            u32::from(u16::from_be_bytes([data[2 * i], data[2 * i + 1]]))
        };
        (v.min(h.maxval)) as f32 / maxval
    };
    // interleaved RGB -> planar
    let mut out = vec![0.0f32; pixels * h.channels];
    for p in 0..pixels {
        for c in 0..h.channels {
            out[c * pixels + p] = sample(p * h.channels + c);
        }
    }
    Tensor::from_vec([1, h.channels, h.height, h.width], out)
}

pub fn read(path: &Path) -> Result<Tensor<f32>> {
    let buf = fs::read(path).map_err(|e| decode_err(path, e.to_string()))?;
    decode(&buf, path)
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes sample `index` of an image batch (C = 1 -> P5, C = 3 -> P6).
pub fn encode(image: &Tensor<f32>, index: usize) -> Result<Vec<u8>> {
    let [n, c, h, w] = image.shape();
    if index >= n {
        return Err(Error::invalid("netpbm encode", format!("sample {index} out of {n}")));
    }
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(Error::invalid("netpbm encode", format!("{c} channels; expected 1 or 3"))),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    let s = image.sample(index);
    out.reserve(plane * c);
    for p in 0..plane {
        for ch in 0..c {
            out.push(quantize(s[ch * plane + p]));
        }
    }
    Ok(out)
}

pub fn write(path: &Path, image: &Tensor<f32>, index: usize) -> Result<()> {
    fs::write(path, encode(image, index)?)?;
    Ok(())
}
