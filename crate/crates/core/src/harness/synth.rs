//! Synthetic data: draws from a randomly constructed identity-expression
//! model, dataset CSV files, and a toy face renderer for the image-domain
//! experiments.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::factor_model::{FactorModel, IdentityGroup};
use crate::image::GrayImage;
use crate::shape::{piecewise_affine_warp, similarity_basis, Interp, TriangleMesh};
use crate::Shape;

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub d: usize,
    pub k: usize,
    pub l: usize,
    pub identities: usize,
    pub j_min: usize,
    pub j_max: usize,
    /// Observation noise standard deviation.
    pub noise_scale: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub groups: Vec<IdentityGroup>,
    /// Ground-truth generating model.
    pub model: FactorModel,
    /// True identity latents, one per group.
    pub w: Vec<DVector<f64>>,
    /// True expression latents, per group per observation.
    pub v: Vec<Vec<DVector<f64>>>,
}

pub(crate) fn standard_normal_vector(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn random_orthonormal_columns(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut m = DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
    for c in 0..cols {
        for prev in 0..c {
            let proj = m.column(c).dot(&m.column(prev));
            let prev_col = m.column(prev).into_owned();
            let mut col = m.column_mut(c);
            col -= prev_col * proj;
        }
        let norm = m.column(c).norm();
        if norm > 1e-12 {
            let mut col = m.column_mut(c);
            col /= norm;
        }
    }
    m
}

/// Draws `w_i ~ N(0, lambda I)`, `v_ij ~ N(0, rho I)`,
/// `x_ij ~ N(mu + F w_i + G v_ij, Sigma)` from a seeded random model with
/// orthonormal loading directions.
pub fn synth_generate(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    if spec.d == 0 || spec.l == 0 || spec.identities == 0 {
        return Err(Error::invalid("synthetic spec needs d >= 1, L >= 1, identities >= 1"));
    }
    if spec.j_min == 0 || spec.j_max < spec.j_min {
        return Err(Error::invalid("synthetic spec needs 1 <= j_min <= j_max"));
    }
    if spec.k + spec.l >= spec.d {
        return Err(Error::invalid("synthetic spec needs K + L < d"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mu = standard_normal_vector(&mut rng, spec.d) * 0.5;
    let directions = random_orthonormal_columns(&mut rng, spec.d, spec.k + spec.l);
    let f = directions.columns(0, spec.k).into_owned();
    let g = directions.columns(spec.k, spec.l).into_owned();
    let sigma_var = (spec.noise_scale * spec.noise_scale).max(1e-8);
    let model = FactorModel::new(
        mu.clone(),
        f.clone(),
        g.clone(),
        DVector::from_element(spec.d, sigma_var),
        DVector::from_element(spec.k, 1.0),
        DVector::from_element(spec.l, 1.0),
    )?;

    let mut groups = Vec::with_capacity(spec.identities);
    let mut all_w = Vec::with_capacity(spec.identities);
    let mut all_v = Vec::with_capacity(spec.identities);
    for i in 0..spec.identities {
        let j = rng.gen_range(spec.j_min..=spec.j_max);
        let w = standard_normal_vector(&mut rng, spec.k);
        let mut observations = Vec::with_capacity(j);
        let mut vs = Vec::with_capacity(j);
        for _ in 0..j {
            let v = standard_normal_vector(&mut rng, spec.l);
            let noise = standard_normal_vector(&mut rng, spec.d) * sigma_var.sqrt();
            observations.push(&mu + &f * &w + &g * &v + noise);
            vs.push(v);
        }
        groups.push(IdentityGroup::new(format!("id{i:03}"), observations)?);
        all_w.push(w);
        all_v.push(vs);
    }
    Ok(SyntheticDataset { groups, model, w: all_w, v: all_v })
}

/// CSV layout per the dataset interface: header `identity,dim_0..dim_{d-1}`,
/// one row per observation.
pub fn write_dataset_csv(groups: &[IdentityGroup], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let d = groups.first().map_or(0, IdentityGroup::dim);
    let mut header = vec!["identity".to_string()];
    header.extend((0..d).map(|i| format!("dim_{i}")));
    w.write_record(&header)?;
    for g in groups {
        for x in &g.observations {
            let mut rec = vec![g.identity_id.clone()];
            rec.extend(x.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset CSV, grouping rows by identity in order of first
/// appearance.
pub fn read_dataset_csv(path: impl AsRef<Path>) -> Result<Vec<IdentityGroup>> {
    let mut reader = csv::Reader::from_reader(BufReader::new(File::open(path.as_ref())?));
    let headers = reader.headers()?.clone();
    if headers.is_empty() || &headers[0] != "identity" {
        return Err(Error::schema("dataset CSV must start with an `identity` column"));
    }
    let d = headers.len() - 1;
    for (i, h) in headers.iter().skip(1).enumerate() {
        if h != format!("dim_{i}") {
            return Err(Error::schema(format!(
                "dataset CSV column {} must be dim_{i}, found {h:?}",
                i + 1
            )));
        }
    }
    let mut order: Vec<String> = Vec::new();
    let mut by_id: HashMap<String, Vec<DVector<f64>>> = HashMap::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != d + 1 {
            return Err(Error::schema(format!(
                "dataset CSV row has {} fields, expected {}",
                record.len(),
                d + 1
            )));
        }
        let id = record[0].to_string();
        let mut x = DVector::zeros(d);
        for i in 0..d {
            let v: f64 = record[i + 1]
                .parse()
                .map_err(|_| Error::schema(format!("bad number {:?} in dataset CSV", &record[i + 1])))?;
            if !v.is_finite() {
                return Err(Error::schema("non-finite value in dataset CSV"));
            }
            x[i] = v;
        }
        if !by_id.contains_key(&id) {
            order.push(id.clone());
        }
        by_id.entry(id).or_default().push(x);
    }
    if order.is_empty() {
        return Err(Error::schema("dataset CSV has no data rows"));
    }
    order
        .into_iter()
        .map(|id| {
            let obs = by_id.remove(&id).expect("id recorded");
            IdentityGroup::new(id, obs)
        })
        .collect()
}

/// Canonical toy face: an oval outline, two eyes and two mouth corners in
/// an 80 x 80 frame. Ten landmarks, non-collinear, triangulation-friendly.
pub fn face_layout() -> Shape {
    let mut pts = Vec::new();
    // Outline hexagon around (40, 42) with radii (26, 30).
    for i in 0..6 {
        let a = std::f64::consts::TAU * i as f64 / 6.0 + 0.3;
        pts.push((40.0 + 26.0 * a.cos(), 42.0 + 30.0 * a.sin()));
    }
    pts.push((30.0, 32.0)); // left eye
    pts.push((50.0, 32.0)); // right eye
    pts.push((32.0, 54.0)); // left mouth corner
    pts.push((48.0, 54.0)); // right mouth corner
    Shape::from_xy(&pts).expect("face layout coordinates are finite")
}

/// Smooth synthetic texture anchored on the landmark layout: Gaussian blobs
/// at the landmarks over sinusoidal shading, so templates carry usable
/// gradients everywhere.
pub fn face_texture(base: &Shape, width: usize, height: usize, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amps: Vec<f64> = (0..base.len()).map(|_| 40.0 + 50.0 * rng.gen::<f64>()).collect();
    let signs: Vec<f64> = (0..base.len()).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
    GrayImage::from_fn(width, height, |x, y| {
        let (xf, yf) = (x as f64, y as f64);
        let mut v = 130.0 + 35.0 * (xf / 9.0).sin() + 30.0 * (yf / 11.0).cos();
        for (i, p) in base.points().iter().enumerate() {
            let d2 = (xf - p.x).powi(2) + (yf - p.y).powi(2);
            v += signs[i] * amps[i] * (-d2 / 30.0).exp();
        }
        v.clamp(5.0, 250.0)
    })
}

/// Builds a ground-truth shape model around `base`: loading columns are
/// random smooth deformations orthogonal to the similarity motions of the
/// base shape, so identity and expression are purely non-rigid.
pub fn synthetic_shape_model(
    base: &Shape,
    k: usize,
    l: usize,
    identity_scale: f64,
    expression_scale: f64,
    noise_std: f64,
    seed: u64,
) -> Result<FactorModel> {
    let n = base.len();
    let dim = 2 * n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pose = similarity_basis(base, std::slice::from_ref(base))?;
    let raw = random_orthonormal_columns(&mut rng, dim, k + l);
    let modes = crate::shape::orthonormalize_against(&pose, &raw);
    if modes.ncols() < k + l {
        return Err(Error::invalid("could not build enough deformation modes"));
    }
    let f = modes.columns(0, k).into_owned() * identity_scale;
    let g = modes.columns(k, l).into_owned() * expression_scale;
    FactorModel::new(
        base.to_vector(),
        f,
        g,
        DVector::from_element(dim, (noise_std * noise_std).max(1e-8)),
        DVector::from_element(k, 1.0),
        DVector::from_element(l, 1.0),
    )
}

/// Renders the toy face for a target shape by warping the canonical
/// texture from the base layout; pixels outside the face hull stay black.
pub fn render_face(
    texture: &GrayImage,
    base: &Shape,
    mesh: &TriangleMesh,
    shape: &Shape,
    width: usize,
    height: usize,
) -> Result<GrayImage> {
    let canvas = if texture.width() == width && texture.height() == height {
        texture.clone()
    } else {
        let mut c = GrayImage::zeros(width, height);
        for y in 0..height.min(texture.height()) {
            for x in 0..width.min(texture.width()) {
                c.set(x, y, texture.get(x, y));
            }
        }
        c
    };
    let out = piecewise_affine_warp(&canvas, base, shape, mesh, Interp::Bilinear)?;
    Ok(out.image)
}

/// Convenience sampler: shapes drawn from a shape-space model.
pub fn sample_shapes(
    model: &FactorModel,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<Shape>, DVector<f64>, Vec<DVector<f64>>) {
    let w = standard_normal_vector(rng, model.k());
    let mut shapes = Vec::with_capacity(count);
    let mut vs = Vec::with_capacity(count);
    for _ in 0..count {
        let v = standard_normal_vector(rng, model.l());
        let vec = model.mu() + model.f() * &w + model.g() * &v;
        shapes.push(Shape::from_vector(&vec).expect("finite shape sample"));
        vs.push(v);
    }
    (shapes, w, vs)
}

