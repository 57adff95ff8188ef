//! Binary PGM (P5) and PPM (P6) images with 8-bit samples.
//!
//! Headers are written as `P5 W H 255\n` (single spaces, one newline before
//! the payload). The reader accepts the same shape of header plus arbitrary
//! whitespace between fields, but no comments.

use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetpbmError {
    #[error("netpbm: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An 8-bit image with one (gray) or three (RGB) interleaved channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn gray(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height, "gray payload size");
        Self {
            width,
            height,
            channels: 1,
            data,
        }
    }

    pub fn rgb(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height * 3, "rgb payload size");
        Self {
            width,
            height,
            channels: 3,
            data,
        }
    }

    fn magic(&self) -> &'static str {
        if self.channels == 1 {
            "P5"
        } else {
            "P6"
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("{} {} {} 255\n", self.magic(), self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, NetpbmError> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(NetpbmError::Format("truncated header".into()));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| NetpbmError::Format("non-ASCII header".into()))?);
        }
        // exactly one whitespace byte separates the header from the payload
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(NetpbmError::Format("missing separator before payload".into()));
        }
        pos += 1;
        let channels = match fields[0] {
            "P5" => 1,
            "P6" => 3,
            other => return Err(NetpbmError::Format(format!("unsupported magic {other:?}"))),
        };
        let num = |s: &str, what: &str| {
            s.parse::<usize>()
                .map_err(|_| NetpbmError::Format(format!("bad {what} {s:?}")))
        };
        let width = num(fields[1], "width")?;
        let height = num(fields[2], "height")?;
        if num(fields[3], "maxval")? != 255 {
            return Err(NetpbmError::Format(format!("maxval {} unsupported", fields[3])));
        }
        if width == 0 || height == 0 {
            return Err(NetpbmError::Format("empty image".into()));
        }
        let need = width * height * channels;
        let payload = &bytes[pos..];
        if payload.len() != need {
            return Err(NetpbmError::Format(format!(
                "payload has {} bytes, header implies {need}",
                payload.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data: payload.to_vec(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), NetpbmError> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, NetpbmError> {
        Self::decode(&fs::read(path)?)
    }

    /// Samples mapped back to `[0, 1]`.
    pub fn unit_values(&self) -> Vec<f64> {
        self.data.iter().map(|&b| f64::from(b) / 255.0).collect()
    }
}

/// `round(255·v)` for `v` in `[0, 1]` (values outside are clamped).
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn gray_from_unit(width: usize, height: usize, values: &[f64]) -> Image {
    Image::gray(width, height, values.iter().map(|&v| quantize(v)).collect())
}

const STOPS: [(f64, [f64; 3]); 5] = [
    (0.0, [0.0, 0.0, 64.0]),
    (0.25, [0.0, 64.0, 255.0]),
    (0.5, [0.0, 255.0, 128.0]),
    (0.75, [255.0, 200.0, 0.0]),
    (1.0, [255.0, 32.0, 0.0]),
];

/// Five-stop colormap with linear interpolation, before rounding.
pub fn colormap(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    for pair in STOPS.windows(2) {
        let (a, ca) = pair[0];
        let (b, cb) = pair[1];
        if v <= b {
            let t = (v - a) / (b - a);
            return [0, 1, 2].map(|k| ca[k] + t * (cb[k] - ca[k]));
        }
    }
    STOPS[4].1
}

/// Blends `0.5·image + 0.5·colormap(map)` per pixel.
///
/// `image` holds `channels` planes (1 or 3) of `[0, 1]` values, planar
/// (C×H×W); `map` is H×W.
pub fn overlay(width: usize, height: usize, image: &[f64], channels: usize, map: &[f64]) -> Image {
    assert!(channels == 1 || channels == 3, "overlay needs 1 or 3 channels");
    assert_eq!(image.len(), channels * width * height);
    assert_eq!(map.len(), width * height);
    let plane = width * height;
    let mut data = Vec::with_capacity(plane * 3);
    for p in 0..plane {
        let c = colormap(map[p]);
        for k in 0..3 {
            let g = if channels == 1 { image[p] } else { image[k * plane + p] };
            let v = 0.5 * g.clamp(0.0, 1.0) * 255.0 + 0.5 * c[k];
            data.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    Image::rgb(width, height, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_header_and_payload() {
        let img = Image::gray(16, 16, vec![7; 256]);
        let bytes = img.encode();
        assert!(bytes.starts_with(b"P5 16 16 255\n"));
        assert_eq!(bytes.len(), 13 + 256);
        assert_eq!(Image::decode(&bytes).unwrap(), img);
    }

    #[test]
    fn ppm_round_trip() {
        let img = Image::rgb(3, 2, (0..18).collect());
        let bytes = img.encode();
        assert!(bytes.starts_with(b"P6 3 2 255\n"));
        assert_eq!(Image::decode(&bytes).unwrap(), img);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(Image::decode(b"P5 2 2 255\n\x00\x01\x02").is_err());
        assert!(Image::decode(b"P2 2 2 255\n\x00\x01\x02\x03").is_err());
        assert!(Image::decode(b"P5 2 2 65535\n\x00\x01\x02\x03").is_err());
        assert!(Image::decode(b"P5 2").is_err());
    }

    #[test]
    fn quantization() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(0.2), 51);
    }

    #[test]
    fn colormap_stops() {
        assert_eq!(colormap(0.0), [0.0, 0.0, 64.0]);
        assert_eq!(colormap(0.5), [0.0, 255.0, 128.0]);
        assert_eq!(colormap(1.0), [255.0, 32.0, 0.0]);
        assert_eq!(colormap(0.125), [0.0, 32.0, 159.5]);
    }

    #[test]
    fn overlay_blend() {
        let img = overlay(1, 1, &[1.0], 1, &[0.0]);
        assert_eq!(img.data, vec![128, 128, 160]);
        let img = overlay(1, 1, &[0.0, 1.0, 0.5], 3, &[1.0]);
        assert_eq!(img.data, vec![128, 144, 64]);
    }
}
