use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BlendshapeModel, LIPS, LOWER_LIP_KEY, UPPER_FACE, UPPER_LIP_KEY};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Grid spacing in millimetres.
pub const GRID_SPACING_MM: f64 = 10.0;
/// Largest displacement any basis column produces per unit coefficient.
pub const MAX_BASIS_AMPLITUDE_MM: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticModelConfig {
    /// Vertices per grid side; the mesh has `grid²` vertices.
    pub grid: usize,
    pub n_id: usize,
    pub n_exp: usize,
    pub n_pose: usize,
    pub seed: u64,
}

impl Default for SyntheticModelConfig {
    fn default() -> Self {
        Self { grid: 8, n_id: 8, n_exp: 16, n_pose: 4, seed: 0 }
    }
}

/// Planar `n × n` grid (10 mm spacing) with smooth seeded sinusoidal bases.
///
/// Regions, with `i` the column and `j` the row counted from the bottom:
/// lips are rows `j < 2` with `n/4 ≤ i < n − n/4`; the upper face is rows
/// `j ≥ n − 2`; the lip keys sit at column `n/2`, rows 1 (upper) and 0 (lower).
pub fn make_synthetic_model(cfg: &SyntheticModelConfig) -> Result<BlendshapeModel> {
    let n = cfg.grid;
    if n < 4 {
        return Err(Error::invalid(format!("grid side {n} must be at least 4")));
    }
    let v = n * n;
    let template = Matrix::from_fn(v, 3, |idx, c| match c {
        0 => (idx % n) as f64 * GRID_SPACING_MM,
        1 => (idx / n) as f64 * GRID_SPACING_MM,
        _ => 0.0,
    });

    let mut faces = Vec::with_capacity(2 * (n - 1) * (n - 1));
    for j in 0..n - 1 {
        for i in 0..n - 1 {
            let v00 = (j * n + i) as u32;
            let v10 = v00 + 1;
            let v01 = v00 + n as u32;
            let v11 = v01 + 1;
            faces.push([v00, v10, v11]);
            faces.push([v00, v11, v01]);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let basis_id = smooth_basis(n, cfg.n_id, &mut rng);
    let basis_exp = smooth_basis(n, cfg.n_exp, &mut rng);
    let basis_pose = smooth_basis(n, cfg.n_pose, &mut rng);

    let lip_cols = n / 4..n - n / 4;
    let mut subsets = BTreeMap::new();
    subsets.insert(
        LIPS.to_string(),
        (0..2).flat_map(|j| lip_cols.clone().map(move |i| (j * n + i) as u32)).collect(),
    );
    subsets.insert(
        UPPER_FACE.to_string(),
        (n - 2..n).flat_map(|j| (0..n).map(move |i| (j * n + i) as u32)).collect(),
    );
    subsets.insert(UPPER_LIP_KEY.to_string(), vec![(n + n / 2) as u32]);
    subsets.insert(LOWER_LIP_KEY.to_string(), vec![(n / 2) as u32]);

    BlendshapeModel::new(template, faces, basis_id, basis_exp, basis_pose, subsets)
}

/// `3V × cols` basis; each column is a mixture of three low-frequency plane
/// waves per coordinate, rescaled so its largest entry is a random amplitude in
/// [1, 3] mm, then rounded to `f32` so that model files round-trip exactly.
fn smooth_basis(n: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let v = n * n;
    let extent = (n - 1) as f64;
    let mut basis = Matrix::zeros(3 * v, cols);
    for col in 0..cols {
        let mut field = vec![0.0; 3 * v];
        for coord in 0..3 {
            // out-of-plane motion dominates, as on a face
            let weight = if coord == 2 { 1.0 } else { 0.4 };
            for _ in 0..3 {
                let fx = rng.random_range(0.0..1.5);
                let fy = rng.random_range(0.0..1.5);
                let phase = rng.random_range(0.0..2.0 * PI);
                let amp = rng.random_range(0.3..1.0) * weight;
                for idx in 0..v {
                    let x = (idx % n) as f64 / extent;
                    let y = (idx / n) as f64 / extent;
                    field[3 * idx + coord] += amp * (2.0 * PI * (fx * x + fy * y) + phase).sin();
                }
            }
        }
        let peak = field.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let target = rng.random_range(1.0..MAX_BASIS_AMPLITUDE_MM);
        // f32 rounding may nudge the peak by an ulp; keep it strictly inside the bound
        let scale = if peak > 0.0 { target / peak } else { 0.0 };
        for (row, value) in field.iter().enumerate() {
            let q = (value * scale) as f32 as f64;
            basis.set(row, col, q.clamp(-MAX_BASIS_AMPLITUDE_MM, MAX_BASIS_AMPLITUDE_MM));
        }
    }
    basis
}
