//! Minimal PGM/PPM reader (`P2`, `P3`, `P5`, `P6`). Sample values are
//! returned unscaled.

use std::path::Path;

use super::IoError;
use crate::encoder::ImageTensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Row-major `(row, col, channel)`.
    pub data: Vec<f64>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self) -> Option<usize> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()?
            .parse()
            .ok()
    }
}

pub fn parse_pnm(bytes: &[u8]) -> Result<Image, String> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err("not a PNM file".into());
    }
    let (channels, ascii) = match bytes[1] {
        b'2' => (1, true),
        b'3' => (3, true),
        b'5' => (1, false),
        b'6' => (3, false),
        _ => return Err(format!("unsupported PNM variant P{}", bytes[1] as char)),
    };
    let mut c = Cursor { bytes, pos: 2 };
    let width = c.number().ok_or("missing width")?;
    let height = c.number().ok_or("missing height")?;
    let maxval = c.number().ok_or("missing maxval")?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err("invalid PNM header".into());
    }
    let count = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or("image too large")?;

    let mut data = Vec::with_capacity(count.min(bytes.len()));
    if ascii {
        for _ in 0..count {
            let v = c.number().ok_or("truncated sample data")?;
            if v > maxval {
                return Err(format!("sample {v} exceeds maxval {maxval}"));
            }
            data.push(v as f64);
        }
    } else {
        // Exactly one whitespace byte separates the header from the raster.
        let start = c.pos + 1;
        let wide = maxval > 255;
        let need = count * if wide { 2 } else { 1 };
        let raster = bytes.get(start..start + need).ok_or("truncated raster")?;
        if wide {
            data.extend(
                raster
                    .chunks_exact(2)
                    .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64),
            );
        } else {
            data.extend(raster.iter().map(|&b| b as f64));
        }
    }
    Ok(Image {
        height,
        width,
        channels,
        data,
    })
}

pub fn read_pnm(path: &Path) -> Result<Image, IoError> {
    let bytes = std::fs::read(path)?;
    parse_pnm(&bytes).map_err(|m| IoError::format(path, m))
}

/// Reads every `.pgm`/`.ppm`/`.pnm` file in `dir`, sorted by name. All
/// images must share one shape.
pub fn read_image_dir(dir: &Path) -> Result<ImageTensor, IoError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "ppm" | "pnm"))
        })
        .collect();
    paths.sort();
    let mut shape = None;
    let mut data = Vec::new();
    for p in &paths {
        let img = read_pnm(p)?;
        let s = (img.height, img.width, img.channels);
        if *shape.get_or_insert(s) != s {
            return Err(IoError::format(
                p,
                "image shape differs from the first image",
            ));
        }
        data.extend(img.data);
    }
    let (h, w, ch) = shape.ok_or_else(|| IoError::format(dir, "no PGM/PPM images found"))?;
    Ok(ImageTensor::new(paths.len(), h, w, ch, data)?)
}
