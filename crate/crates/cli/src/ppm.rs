//! Binary PPM (P6, maxval 255) image exchange.
//!
//! Pixels map from [-1, 1] by `round(255 * (x + 1) / 2)`, clamped.

use std::path::Path;

use svdiff_diffusion::SampleGrid;
use svdiff_linalg::error::{Error, Result};

pub fn to_byte(x: f64) -> u8 {
    (255.0 * (x + 1.0) / 2.0).round().clamp(0.0, 255.0) as u8
}

pub fn from_byte(b: u8) -> f64 {
    2.0 * b as f64 / 255.0 - 1.0
}

pub fn write_ppm(grid: &SampleGrid) -> Result<Vec<u8>> {
    if grid.channels() != 3 {
        return Err(Error::Shape(format!(
            "ppm needs 3 channels, grid has {}",
            grid.channels()
        )));
    }
    let mut out = format!("P6\n{} {}\n255\n", grid.width(), grid.height()).into_bytes();
    for y in 0..grid.height() {
        for x in 0..grid.width() {
            for c in 0..3 {
                out.push(to_byte(grid.at(c, y, x)));
            }
        }
    }
    Ok(out)
}

pub fn read_ppm(bytes: &[u8]) -> Result<SampleGrid> {
    if !bytes.starts_with(b"P6") {
        return Err(Error::Format("not a P6 ppm file".into()));
    }
    // header: three whitespace-separated fields after the magic,
    // comments (#...) allowed between them
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::CorruptFile("ppm header ended early".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::Format("bad ppm header field".into()))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::Format(format!("ppm maxval {maxval}, expected 255")));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::CorruptFile("ppm header not terminated".into()));
    }
    pos += 1;
    let need = width * height * 3;
    let payload = &bytes[pos..];
    if payload.len() != need {
        return Err(Error::CorruptFile(format!(
            "ppm payload has {} bytes, expected {need}",
            payload.len()
        )));
    }
    let mut grid = SampleGrid::zeros(3, height, width);
    for y in 0..height {
        for x in 0..width {
            for c in 0..3 {
                grid.set(c, y, x, from_byte(payload[(y * width + x) * 3 + c]));
            }
        }
    }
    Ok(grid)
}

pub fn save_ppm(grid: &SampleGrid, path: &Path) -> Result<()> {
    std::fs::write(path, write_ppm(grid)?)?;
    Ok(())
}

pub fn load_ppm(path: &Path) -> Result<SampleGrid> {
    read_ppm(&std::fs::read(path)?)
}
