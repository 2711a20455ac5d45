//! Linear blendshape face model.
//!
//! A mesh is `template + B_shape·β + B_exp·ψ + B_pose·θ`. Pose is handled by an
//! additive corrective basis instead of joint rotations and skinning, which
//! keeps the decoder exactly linear in every parameter block.

mod io;
pub(crate) mod normals;
mod synthetic;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub use io::{mesh_vertex_bytes, MeshManifest};
pub use normals::{vertex_normals, vertex_normals_backward, VertexNormals};
pub use synthetic::{make_synthetic_model, SyntheticModelConfig};

pub const LIPS: &str = "lips";
pub const UPPER_FACE: &str = "upper_face";
pub const UPPER_LIP_KEY: &str = "upper_lip_key";
pub const LOWER_LIP_KEY: &str = "lower_lip_key";

/// Parameter block sizes `(n_id, n_exp, n_pose)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub n_id: usize,
    pub n_exp: usize,
    pub n_pose: usize,
}

impl ParamLayout {
    pub fn dim(&self) -> usize {
        self.n_id + self.n_exp + self.n_pose
    }

    pub fn exp_range(&self) -> std::ops::Range<usize> {
        self.n_id..self.n_id + self.n_exp
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlendshapeModel {
    template: Matrix,
    faces: Vec<[u32; 3]>,
    basis_id: Matrix,
    basis_exp: Matrix,
    basis_pose: Matrix,
    subsets: BTreeMap<String, Vec<u32>>,
    /// `[B_shape | B_exp | B_pose]`, `3V × D`.
    basis_all: Matrix,
}

impl BlendshapeModel {
    pub fn new(
        template: Matrix,
        faces: Vec<[u32; 3]>,
        basis_id: Matrix,
        basis_exp: Matrix,
        basis_pose: Matrix,
        subsets: BTreeMap<String, Vec<u32>>,
    ) -> Result<Self> {
        if template.cols() != 3 {
            return Err(Error::shape("template must be V × 3"));
        }
        let v = template.rows();
        for (name, basis) in [("identity", &basis_id), ("expression", &basis_exp), ("pose", &basis_pose)] {
            if basis.rows() != 3 * v {
                return Err(Error::shape(format!("{name} basis must have 3V = {} rows", 3 * v)));
            }
            if !basis.is_finite() {
                return Err(Error::NonFinite(format!("{name} basis")));
            }
        }
        if faces.iter().flatten().any(|&i| i as usize >= v) {
            return Err(Error::invalid("face index out of range"));
        }
        for (name, idx) in &subsets {
            if idx.is_empty() {
                return Err(Error::invalid(format!("vertex subset {name} is empty")));
            }
            if idx.iter().any(|&i| i as usize >= v) {
                return Err(Error::invalid(format!("vertex subset {name} out of range")));
            }
        }
        for key in [UPPER_LIP_KEY, LOWER_LIP_KEY] {
            if let Some(idx) = subsets.get(key) {
                if idx.len() != 1 {
                    return Err(Error::invalid(format!("{key} must hold exactly one vertex")));
                }
            }
        }
        let basis_all = Matrix::hstack(&[&basis_id, &basis_exp, &basis_pose])?;
        Ok(Self { template, faces, basis_id, basis_exp, basis_pose, subsets, basis_all })
    }

    pub fn num_vertices(&self) -> usize {
        self.template.rows()
    }

    pub fn template(&self) -> &Matrix {
        &self.template
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn basis_id(&self) -> &Matrix {
        &self.basis_id
    }

    pub fn basis_exp(&self) -> &Matrix {
        &self.basis_exp
    }

    pub fn basis_pose(&self) -> &Matrix {
        &self.basis_pose
    }

    /// Concatenated basis `3V × D` in `(β, ψ, θ)` order.
    pub fn basis_all(&self) -> &Matrix {
        &self.basis_all
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout {
            n_id: self.basis_id.cols(),
            n_exp: self.basis_exp.cols(),
            n_pose: self.basis_pose.cols(),
        }
    }

    pub fn subsets(&self) -> &BTreeMap<String, Vec<u32>> {
        &self.subsets
    }

    pub fn subset(&self, name: &str) -> Result<&[u32]> {
        self.subsets
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid(format!("model has no vertex subset {name}")))
    }

    pub fn key_vertex(&self, name: &str) -> Result<usize> {
        Ok(self.subset(name)?[0] as usize)
    }

    /// Template flattened to a `1 × 3V` row.
    fn template_row(&self) -> Matrix {
        Matrix::row_vector(self.template.data())
    }

    pub fn decode(&self, p: &FrameParams) -> Result<MeshFrame> {
        let layout = self.layout();
        if p.beta.len() != layout.n_id || p.psi.len() != layout.n_exp || p.theta.len() != layout.n_pose {
            return Err(Error::shape(format!(
                "frame params ({}, {}, {}) do not match model ({}, {}, {})",
                p.beta.len(),
                p.psi.len(),
                p.theta.len(),
                layout.n_id,
                layout.n_exp,
                layout.n_pose
            )));
        }
        let row = Matrix::row_vector(&p.concat());
        let seq = self.decode_sequence(&ParamSequence::new(row)?)?;
        Ok(seq.frame(0))
    }

    /// Decodes every frame: `T × D` parameters to a `T × 3V` vertex sequence.
    pub fn decode_sequence(&self, params: &ParamSequence) -> Result<MeshSequence> {
        if params.dim() != self.basis_all.cols() {
            return Err(Error::shape(format!(
                "parameter dimension {} does not match model dimension {}",
                params.dim(),
                self.basis_all.cols()
            )));
        }
        let offsets = params.values().matmul_nt(&self.basis_all)?;
        MeshSequence::new(offsets.add_row_broadcast(&self.template_row())?)
    }

    /// Pulls a `T × 3V` vertex gradient back to a `T × D` parameter gradient.
    pub fn decode_backward(&self, d_vertices: &Matrix) -> Result<Matrix> {
        d_vertices.matmul(&self.basis_all)
    }
}

/// Per-frame parameters `(β, ψ, θ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameParams {
    pub beta: Vec<f64>,
    pub psi: Vec<f64>,
    pub theta: Vec<f64>,
}

impl FrameParams {
    pub fn zeros(layout: ParamLayout) -> Self {
        Self {
            beta: vec![0.0; layout.n_id],
            psi: vec![0.0; layout.n_exp],
            theta: vec![0.0; layout.n_pose],
        }
    }

    pub fn concat(&self) -> Vec<f64> {
        [self.beta.as_slice(), &self.psi, &self.theta].concat()
    }
}

/// `T × D` per-frame parameters, each row `β ‖ ψ ‖ θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSequence {
    values: Matrix,
}

impl ParamSequence {
    pub fn new(values: Matrix) -> Result<Self> {
        if !values.is_finite() {
            return Err(Error::NonFinite("parameter sequence".into()));
        }
        Ok(Self { values })
    }

    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn into_values(self) -> Matrix {
        self.values
    }

    /// The expression block `T × n_exp`.
    pub fn expression(&self, layout: ParamLayout) -> Matrix {
        let r = layout.exp_range();
        self.values.columns(r.start, r.end)
    }

    pub fn frame(&self, t: usize, layout: ParamLayout) -> FrameParams {
        let row = self.values.row(t);
        FrameParams {
            beta: row[..layout.n_id].to_vec(),
            psi: row[layout.exp_range()].to_vec(),
            theta: row[layout.n_id + layout.n_exp..].to_vec(),
        }
    }
}

/// One decoded mesh, `V × 3` in millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshFrame {
    pub positions: Matrix,
}

/// `T` frames over a shared face list, stored `T × 3V` (vertex-major xyz per row).
#[derive(Debug, Clone, PartialEq)]
pub struct MeshSequence {
    positions: Matrix,
}

impl MeshSequence {
    pub fn new(positions: Matrix) -> Result<Self> {
        if !positions.cols().is_multiple_of(3) {
            return Err(Error::shape("mesh rows must hold 3V coordinates"));
        }
        if !positions.is_finite() {
            return Err(Error::NonFinite("mesh sequence".into()));
        }
        Ok(Self { positions })
    }

    pub fn from_frames(frames: &[MeshFrame]) -> Result<Self> {
        let v = frames.first().map_or(0, |f| f.positions.rows());
        if frames.iter().any(|f| f.positions.shape() != (v, 3)) {
            return Err(Error::shape("frames differ in vertex count"));
        }
        let rows: Vec<Vec<f64>> = frames.iter().map(|f| f.positions.data().to_vec()).collect();
        if rows.is_empty() {
            return Self::new(Matrix::zeros(0, 0));
        }
        Self::new(Matrix::from_rows(&rows)?)
    }

    pub fn frames(&self) -> usize {
        self.positions.rows()
    }

    pub fn vertices(&self) -> usize {
        self.positions.cols() / 3
    }

    pub fn positions(&self) -> &Matrix {
        &self.positions
    }

    #[inline]
    pub fn vertex(&self, t: usize, v: usize) -> [f64; 3] {
        let row = self.positions.row(t);
        [row[3 * v], row[3 * v + 1], row[3 * v + 2]]
    }

    pub fn frame(&self, t: usize) -> MeshFrame {
        MeshFrame {
            positions: Matrix::new(self.vertices(), 3, self.positions.row(t).to_vec())
                .expect("row holds 3V values"),
        }
    }

    pub fn same_shape(&self, other: &MeshSequence) -> Result<()> {
        if self.positions.shape() != other.positions.shape() {
            return Err(Error::shape(format!(
                "mesh sequences {}x{} vs {}x{}",
                self.frames(),
                self.vertices(),
                other.frames(),
                other.vertices()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use crate::numerics::ParamStore;

    fn model() -> BlendshapeModel {
        make_synthetic_model(&SyntheticModelConfig { grid: 5, n_id: 3, n_exp: 4, n_pose: 2, seed: 9 })
            .unwrap()
    }

    #[test]
    fn zero_params_decode_to_template() {
        let m = model();
        let frame = m.decode(&FrameParams::zeros(m.layout())).unwrap();
        assert_eq!(frame.positions, *m.template());
    }

    #[test]
    fn decode_is_linear() {
        let m = model();
        let l = m.layout();
        let p1 = FrameParams {
            beta: vec![0.3, -1.0, 0.5],
            psi: vec![1.0, 0.2, -0.7, 0.0],
            theta: vec![0.1, 0.4],
        };
        let p2 = FrameParams {
            beta: vec![-0.8, 0.1, 2.0],
            psi: vec![0.0, -0.3, 0.9, 1.4],
            theta: vec![-0.5, 0.25],
        };
        let sum = FrameParams {
            beta: p1.beta.iter().zip(&p2.beta).map(|(a, b)| a + b).collect(),
            psi: p1.psi.iter().zip(&p2.psi).map(|(a, b)| a + b).collect(),
            theta: p1.theta.iter().zip(&p2.theta).map(|(a, b)| a + b).collect(),
        };
        let t = m.template();
        let d1 = m.decode(&p1).unwrap().positions.sub(t).unwrap();
        let d2 = m.decode(&p2).unwrap().positions.sub(t).unwrap();
        let ds = m.decode(&sum).unwrap().positions.sub(t).unwrap();
        assert!(ds.sub(&d1.add(&d2).unwrap()).unwrap().max_abs() < 1e-12);
        assert_eq!(l.dim(), 9);
    }

    #[test]
    fn one_hot_expression_extracts_basis_column() {
        let m = model();
        for j in 0..m.layout().n_exp {
            let mut p = FrameParams::zeros(m.layout());
            p.psi[j] = 1.0;
            let frame = m.decode(&p).unwrap();
            for v in 0..m.num_vertices() {
                for c in 0..3 {
                    let expected = m.template().get(v, c) + m.basis_exp().get(3 * v + c, j);
                    assert_eq!(frame.positions.get(v, c), expected);
                }
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let m = model();
        let mut p = FrameParams::zeros(m.layout());
        p.psi.push(0.0);
        assert!(m.decode(&p).is_err());
    }

    #[test]
    fn decode_backward_passes_grad_check() {
        let m = model();
        let l = m.layout();
        let target = Matrix::from_fn(2, 3 * m.num_vertices(), |t, i| ((t * 7 + i) as f64 * 0.13).sin());
        let mut store = ParamStore::new();
        let id = store
            .insert("p", Matrix::from_fn(2, l.dim(), |t, i| ((t + 2 * i) as f64 * 0.3).cos()))
            .unwrap();
        let r = grad_check(&mut store, 1e-5, |s, with_grad| {
            let seq = m.decode_sequence(&ParamSequence::new(s.value(id).clone())?)?;
            let diff = seq.positions().sub(&target)?;
            if with_grad {
                s.zero_grad();
                let g = m.decode_backward(&diff)?;
                s.accumulate(id, &g)?;
            }
            Ok(0.5 * diff.frobenius_sq())
        })
        .unwrap();
        assert!(r.max_rel_error <= 1e-6, "{r:?}");
    }

    #[test]
    fn constant_params_give_constant_meshes() {
        let m = model();
        let row: Vec<f64> = (0..m.layout().dim()).map(|i| i as f64 * 0.1).collect();
        let rows = vec![row; 4];
        let seq = m
            .decode_sequence(&ParamSequence::new(Matrix::from_rows(&rows).unwrap()).unwrap())
            .unwrap();
        for t in 1..4 {
            assert_eq!(seq.positions().row(t), seq.positions().row(0));
        }
    }
}
