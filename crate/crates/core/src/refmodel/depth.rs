//! 16-bit depth frames and their binary PGM (`P5`) encoding.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{CameraIntrinsics, RefModelError};

/// Raw depth frame in stored units; multiply by `depth_scale` for meters.
/// A stored value of 0 marks an invalid measurement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthFrame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u16>,
}

impl DepthFrame {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> u16 {
        self.data[v * self.width + u]
    }

    /// Metric depth at a pixel, `None` for invalid pixels.
    #[inline]
    pub fn meters(&self, u: usize, v: usize, depth_scale: f64) -> Option<f64> {
        match self.get(u, v) {
            0 => None,
            d => Some(d as f64 * depth_scale),
        }
    }

    /// Quantizes metric depths (`<= 0` or non-finite means invalid).
    pub fn from_meters(width: usize, height: usize, meters: &[f64], depth_scale: f64) -> Self {
        let data = meters
            .iter()
            .map(|&m| {
                if m.is_finite() && m > 0.0 {
                    (m / depth_scale).round().clamp(0.0, u16::MAX as f64) as u16
                } else {
                    0
                }
            })
            .collect();
        Self { width, height, data }
    }

    pub fn check_dims(&self, intr: &CameraIntrinsics) -> Result<(), RefModelError> {
        if self.width != intr.width || self.height != intr.height || self.data.len() != self.width * self.height {
            return Err(RefModelError::DimensionMismatch {
                frame: (self.width, self.height),
                intrinsics: (intr.width, intr.height),
            });
        }
        Ok(())
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|&&d| d != 0).count()
    }

    pub fn write_pgm<W: Write>(&self, mut out: W) -> Result<(), RefModelError> {
        write!(out, "P5\n{} {}\n65535\n", self.width, self.height)?;
        let mut bytes = Vec::with_capacity(self.data.len() * 2);
        for d in &self.data {
            bytes.extend_from_slice(&d.to_be_bytes());
        }
        out.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_pgm<R: Read>(input: R) -> Result<Self, RefModelError> {
        let mut r = BufReader::new(input);
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            let tok = next_token(&mut r)?;
            fields.push(tok);
        }
        if fields[0] != "P5" {
            return Err(RefModelError::Pgm(format!("expected P5 magic, found '{}'", fields[0])));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| RefModelError::Pgm(format!("bad header field '{s}'")));
        let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
        if maxval == 0 || maxval > 65535 {
            return Err(RefModelError::Pgm(format!("unsupported maxval {maxval}")));
        }
        let bpp = if maxval > 255 { 2 } else { 1 };
        let mut raw = vec![0u8; w * h * bpp];
        r.read_exact(&mut raw).map_err(|_| RefModelError::Pgm("truncated pixel data".into()))?;
        let data = if bpp == 2 {
            raw.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
        } else {
            raw.into_iter().map(u16::from).collect()
        };
        Ok(Self { width: w, height: h, data })
    }

    pub fn save(&self, path: &Path) -> Result<(), RefModelError> {
        let f = std::fs::File::create(path)?;
        self.write_pgm(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self, RefModelError> {
        Self::read_pgm(std::fs::File::open(path)?)
    }
}

/// Next whitespace-delimited header token; `#` comments run to end of line.
/// Consumes exactly one whitespace byte after the token.
fn next_token<R: BufRead>(r: &mut R) -> Result<String, RefModelError> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            return Err(RefModelError::Pgm("truncated header".into()));
        }
        let c = byte[0];
        if c == b'#' && tok.is_empty() {
            let mut skip = Vec::new();
            r.read_until(b'\n', &mut skip)?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            return Ok(tok);
        }
        tok.push(c as char);
    }
}
