//! Reference local detectors and response-map file adapters.
//!
//! The paper-style learned classifier is abstracted behind
//! [`super::LocalDetector`]; shipped here are a normalized-cross-correlation
//! template detector and an adapter serving precomputed score grids.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, Vector2};

use super::{LocalDetector, ResponseMap};
use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Scores candidate locations by normalized cross-correlation against one
/// template patch per keypoint, mapped to a log score via
/// `ln((1 + ncc) / 2)`.
#[derive(Debug, Clone)]
pub struct NccDetector {
    patches: Vec<GrayImage>,
    patch_size: usize,
}

impl NccDetector {
    pub fn new(patches: Vec<GrayImage>) -> Result<Self> {
        let patch_size = patches.first().map_or(0, GrayImage::width);
        if patch_size == 0 || patch_size % 2 == 0 {
            return Err(Error::invalid("NCC patches must be square with odd size"));
        }
        for p in &patches {
            if p.width() != patch_size || p.height() != patch_size {
                return Err(Error::invalid("all NCC patches must share one odd square size"));
            }
        }
        Ok(Self { patches, patch_size })
    }

    /// Cuts the reference patch for each keypoint out of a training image.
    pub fn from_training(image: &GrayImage, shape: &crate::Shape, patch_size: usize) -> Result<Self> {
        if patch_size % 2 == 0 || patch_size == 0 {
            return Err(Error::invalid("patch size must be odd"));
        }
        let half = (patch_size / 2) as f64;
        let mut patches = Vec::with_capacity(shape.len());
        for p in shape.points() {
            let patch = GrayImage::from_fn(patch_size, patch_size, |x, y| {
                image.sample(p.x - half + x as f64, p.y - half + y as f64)
            });
            patches.push(patch);
        }
        Self::new(patches)
    }

    pub fn keypoints(&self) -> usize {
        self.patches.len()
    }
}

impl LocalDetector for NccDetector {
    fn patch_size(&self) -> usize {
        self.patch_size
    }

    fn score(&self, keypoint: usize, image: &GrayImage, x: f64, y: f64) -> f64 {
        let patch = &self.patches[keypoint];
        let half = (self.patch_size / 2) as f64;
        let n = (self.patch_size * self.patch_size) as f64;

        let mut sum_a = 0.0;
        let mut sum_b = 0.0;
        for py in 0..self.patch_size {
            for px in 0..self.patch_size {
                sum_a += patch.get(px, py);
                sum_b += image.sample(x - half + px as f64, y - half + py as f64);
            }
        }
        let (mean_a, mean_b) = (sum_a / n, sum_b / n);
        let mut num = 0.0;
        let mut den_a = 0.0;
        let mut den_b = 0.0;
        for py in 0..self.patch_size {
            for px in 0..self.patch_size {
                let a = patch.get(px, py) - mean_a;
                let b = image.sample(x - half + px as f64, y - half + py as f64) - mean_b;
                num += a * b;
                den_a += a * a;
                den_b += b * b;
            }
        }
        let ncc = if den_a <= 1e-12 || den_b <= 1e-12 { 0.0 } else { num / (den_a * den_b).sqrt() };
        ((1.0 + ncc.clamp(-1.0, 1.0)) / 2.0 + 1e-12).ln()
    }
}

/// Serves precomputed score grids (one per keypoint) as a detector;
/// locations off the stored grid score an extremely low constant.
#[derive(Debug, Clone)]
pub struct GridDetector {
    maps: Vec<ResponseMap>,
}

pub const OFF_GRID_SCORE: f64 = -1e6;

impl GridDetector {
    pub fn new(maps: Vec<ResponseMap>) -> Result<Self> {
        if maps.is_empty() {
            return Err(Error::invalid("grid detector needs at least one map"));
        }
        Ok(Self { maps })
    }

    /// Loads `kp_000.csv, kp_001.csv, ...` from a directory.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut maps = Vec::new();
        loop {
            let path = dir.join(format!("kp_{:03}.csv", maps.len()));
            if !path.exists() {
                break;
            }
            maps.push(load_response_csv(&path, maps.len())?);
        }
        Self::new(maps)
    }

    pub fn maps(&self) -> &[ResponseMap] {
        &self.maps
    }
}

impl LocalDetector for GridDetector {
    fn patch_size(&self) -> usize {
        1
    }

    fn score(&self, keypoint: usize, _image: &GrayImage, x: f64, y: f64) -> f64 {
        let m = &self.maps[keypoint];
        let col = ((x - m.origin.x) / m.stride).round();
        let row = ((y - m.origin.y) / m.stride).round();
        if row < 0.0 || col < 0.0 || row >= m.rows() as f64 || col >= m.cols() as f64 {
            return OFF_GRID_SCORE;
        }
        // Only accept queries that land on (or near) a stored grid point.
        let dx = (x - m.origin.x) - col * m.stride;
        let dy = (y - m.origin.y) - row * m.stride;
        if dx.abs() > 0.5 * m.stride || dy.abs() > 0.5 * m.stride {
            return OFF_GRID_SCORE;
        }
        m.scores[(row as usize, col as usize)]
    }
}

/// CSV layout: `origin_x,origin_y,stride` on the first line, then one row
/// of scores per grid row.
pub fn save_response_csv(map: &ResponseMap, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{},{},{}", map.origin.x, map.origin.y, map.stride)?;
    for r in 0..map.rows() {
        let row: Vec<String> = (0..map.cols()).map(|c| map.scores[(r, c)].to_string()).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn load_response_csv(path: impl AsRef<Path>, keypoint: usize) -> Result<ResponseMap> {
    let reader = BufReader::new(File::open(path.as_ref())?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::schema("empty response map file"))??;
    let parts: Vec<&str> = header.trim().split(',').collect();
    if parts.len() != 3 {
        return Err(Error::schema("response map header must be origin_x,origin_y,stride"));
    }
    let parse = |s: &str| -> Result<f64> {
        s.trim().parse().map_err(|_| Error::schema(format!("bad number {s:?} in response map")))
    };
    let origin = Vector2::new(parse(parts[0])?, parse(parts[1])?);
    let stride = parse(parts[2])?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Result<Vec<f64>> = line.trim().split(',').map(parse).collect();
        rows.push(row?);
    }
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(Error::schema("response map has no grid rows"));
    }
    let mut scores = DMatrix::zeros(nrows, ncols);
    for (r, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(Error::schema(format!("ragged response map row {r}")));
        }
        for (c, &v) in row.iter().enumerate() {
            scores[(r, c)] = v;
        }
    }
    ResponseMap::new(keypoint, origin, stride, scores)
}

/// PGM adapter: pixels encode probabilities scaled by 255; scores are their
/// natural logs. `score = ln(max(pixel / 255, 1e-12))`.
pub fn save_response_pgm(map: &ResponseMap, path: impl AsRef<Path>) -> Result<()> {
    let mut img = GrayImage::zeros(map.cols(), map.rows());
    for r in 0..map.rows() {
        for c in 0..map.cols() {
            let p = map.scores[(r, c)].exp().clamp(0.0, 1.0);
            img.set(c, r, 255.0 * p);
        }
    }
    img.save_pgm(path)
}

pub fn load_response_pgm(
    path: impl AsRef<Path>,
    keypoint: usize,
    origin: Vector2<f64>,
    stride: f64,
) -> Result<ResponseMap> {
    let img = GrayImage::load_pgm(path)?;
    let scores = DMatrix::from_fn(img.height(), img.width(), |r, c| {
        (img.get(c, r) / 255.0).max(1e-12).ln()
    });
    ResponseMap::new(keypoint, origin, stride, scores)
}
