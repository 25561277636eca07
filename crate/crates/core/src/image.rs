//! Grayscale image buffer with PGM (P5) persistence.
//!
//! Pixels are stored as `f64` in display units (0..255) so templates,
//! gradients and residuals share one type; quantization happens only at
//! the PGM boundary.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimMismatch {
                context: "image buffer length",
                expected: width * height,
                got: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn pixels(&self) -> &[f64] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Bilinear sample with edge clamping.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = xc.floor() as usize;
        let y0 = yc.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = xc - x0 as f64;
        let fy = yc - y0 as f64;
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bot = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bot * fy
    }

    /// Nearest-neighbor sample with edge clamping.
    pub fn sample_nearest(&self, x: f64, y: f64) -> f64 {
        let xi = x.round().clamp(0.0, (self.width - 1) as f64) as usize;
        let yi = y.round().clamp(0.0, (self.height - 1) as f64) as usize;
        self.get(xi, yi)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }

    /// Central-difference gradients (one-sided at borders).
    pub fn gradients(&self) -> (GrayImage, GrayImage) {
        let (w, h) = (self.width, self.height);
        let mut gx = GrayImage::zeros(w, h);
        let mut gy = GrayImage::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                let xm = x.saturating_sub(1);
                let xp = (x + 1).min(w - 1);
                let step_x = (xp - xm) as f64;
                gx.set(x, y, (self.get(xp, y) - self.get(xm, y)) / step_x.max(1.0));
                let ym = y.saturating_sub(1);
                let yp = (y + 1).min(h - 1);
                let step_y = (yp - ym) as f64;
                gy.set(x, y, (self.get(x, yp) - self.get(x, ym)) / step_y.max(1.0));
            }
        }
        (gx, gy)
    }

    /// Writes 8-bit binary PGM (P5), clamping and rounding pixel values.
    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.data.iter().map(|&v| v.clamp(0.0, 255.0).round() as u8).collect();
        out.write_all(&bytes)?;
        Ok(())
    }

    pub fn load_pgm(path: impl AsRef<Path>) -> Result<Self> {
        let mut raw = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut raw)?;
        parse_pgm(&raw)
    }
}

fn parse_pgm(raw: &[u8]) -> Result<GrayImage> {
    let mut pos = 0usize;
    let mut token = |raw: &[u8]| -> Result<String> {
        // Skip whitespace and # comments between header tokens.
        loop {
            while pos < raw.len() && raw[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < raw.len() && raw[pos] == b'#' {
                while pos < raw.len() && raw[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < raw.len() && !raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::schema("truncated PGM header"));
        }
        Ok(String::from_utf8_lossy(&raw[start..pos]).into_owned())
    };

    let magic = token(raw)?;
    if magic != "P5" {
        return Err(Error::schema(format!("unsupported PGM magic {magic:?} (want P5)")));
    }
    let width: usize = token(raw)?.parse().map_err(|_| Error::schema("bad PGM width"))?;
    let height: usize = token(raw)?.parse().map_err(|_| Error::schema("bad PGM height"))?;
    let maxval: usize = token(raw)?.parse().map_err(|_| Error::schema("bad PGM maxval"))?;
    if maxval != 255 {
        return Err(Error::schema(format!("unsupported PGM maxval {maxval} (want 255)")));
    }
    pos += 1; // single whitespace after maxval
    let need = width * height;
    if raw.len() < pos + need {
        return Err(Error::schema("PGM payload shorter than header promises"));
    }
    let data = raw[pos..pos + need].iter().map(|&b| b as f64).collect();
    GrayImage::from_raw(width, height, data)
}
