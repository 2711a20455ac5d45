//! Parameter, mesh, normal and temporal losses with their gradients.
//!
//! Every `*_grad` function returns the loss value together with its gradient
//! with respect to the prediction (first argument).

use super::FrameMask;
use crate::error::{Error, Result};
use crate::facemodel::normals::normals_flat;
use crate::facemodel::{vertex_normals_backward, MeshSequence, ParamSequence};
use crate::numerics::Matrix;

pub fn recon_loss(p: &ParamSequence, p_gt: &ParamSequence, mask: &FrameMask) -> Result<f64> {
    recon_loss_grad(p, p_gt, mask).map(|(l, _)| l)
}

/// Masked MSE: `1/(|mask|·D) Σ_{t∈mask} ‖P_t − P_t^gt‖²`.
pub fn recon_loss_grad(
    p: &ParamSequence,
    p_gt: &ParamSequence,
    mask: &FrameMask,
) -> Result<(f64, Matrix)> {
    let (t, d) = p.values().shape();
    if p_gt.values().shape() != (t, d) {
        return Err(Error::shape("recon loss: prediction and target differ in shape"));
    }
    if mask.len() != t {
        return Err(Error::shape(format!("mask has {} frames, sequence has {t}", mask.len())));
    }
    let valid = mask.count_valid();
    let scale = 1.0 / (valid * d) as f64;
    let mut grad = Matrix::zeros(t, d);
    let mut loss = 0.0;
    for frame in 0..t {
        if !mask.is_valid(frame) {
            continue;
        }
        let g = grad.row_mut(frame);
        for ((gi, a), b) in g.iter_mut().zip(p.values().row(frame)).zip(p_gt.values().row(frame)) {
            let diff = a - b;
            loss += diff * diff;
            *gi = 2.0 * diff * scale;
        }
    }
    Ok((loss * scale, grad))
}

pub fn mesh_loss(pred: &MeshSequence, gt: &MeshSequence) -> Result<f64> {
    mesh_loss_grad(pred, gt).map(|(l, _)| l)
}

/// `1/(T·V) Σ_t ‖V_t − V_t^gt‖²_F`.
pub fn mesh_loss_grad(pred: &MeshSequence, gt: &MeshSequence) -> Result<(f64, Matrix)> {
    pred.same_shape(gt)?;
    let scale = 1.0 / (pred.frames() * pred.vertices()) as f64;
    let diff = pred.positions().sub(gt.positions())?;
    Ok((diff.frobenius_sq() * scale, diff.scale(2.0 * scale)))
}

pub fn normal_loss(pred: &MeshSequence, gt: &MeshSequence, faces: &[[u32; 3]]) -> Result<f64> {
    normal_loss_grad(pred, gt, faces).map(|(l, _)| l)
}

/// `1/(T·V) Σ_t ‖N_t − N_t^gt‖²_F` with area-weighted vertex normals.
pub fn normal_loss_grad(
    pred: &MeshSequence,
    gt: &MeshSequence,
    faces: &[[u32; 3]],
) -> Result<(f64, Matrix)> {
    pred.same_shape(gt)?;
    let (t, v) = (pred.frames(), pred.vertices());
    let scale = 1.0 / (t * v) as f64;
    let mut grad = Matrix::zeros(t, 3 * v);
    let mut loss = 0.0;
    for frame in 0..t {
        let flat = pred.positions().row(frame);
        let (n_pred, _) = normals_flat(flat, faces)?;
        let (n_gt, _) = normals_flat(gt.positions().row(frame), faces)?;
        let mut d_normals = vec![0.0; 3 * v];
        for (i, (a, b)) in n_pred.iter().zip(&n_gt).enumerate() {
            for k in 0..3 {
                let diff = a[k] - b[k];
                loss += diff * diff;
                d_normals[3 * i + k] = 2.0 * diff * scale;
            }
        }
        let g = vertex_normals_backward(flat, faces, &d_normals);
        grad.row_mut(frame).copy_from_slice(&g);
    }
    Ok((loss * scale, grad))
}

pub fn velocity_loss(pred: &MeshSequence, gt: &MeshSequence) -> Result<f64> {
    velocity_loss_grad(pred, gt).map(|(l, _)| l)
}

/// `1/((T−1)·V) Σ_t ‖ΔV_t − ΔV_t^gt‖²_F` with `ΔV_t = V_{t+1} − V_t`.
pub fn velocity_loss_grad(pred: &MeshSequence, gt: &MeshSequence) -> Result<(f64, Matrix)> {
    pred.same_shape(gt)?;
    let (t, v) = (pred.frames(), pred.vertices());
    if t < 2 {
        return Err(Error::invalid("velocity loss needs at least 2 frames"));
    }
    let scale = 1.0 / ((t - 1) * v) as f64;
    let (p, g) = (pred.positions(), gt.positions());
    let mut grad = Matrix::zeros(t, 3 * v);
    let mut loss = 0.0;
    for frame in 0..t - 1 {
        for i in 0..3 * v {
            let d = (p.get(frame + 1, i) - p.get(frame, i)) - (g.get(frame + 1, i) - g.get(frame, i));
            loss += d * d;
            let gd = 2.0 * d * scale;
            grad.add_at(frame + 1, i, gd);
            grad.add_at(frame, i, -gd);
        }
    }
    Ok((loss * scale, grad))
}

pub fn accel_loss(pred: &MeshSequence, gt: &MeshSequence) -> Result<f64> {
    accel_loss_grad(pred, gt).map(|(l, _)| l)
}

/// `1/((T−2)·V) Σ_t ‖Δ²V_t − Δ²V_t^gt‖²_F` with `Δ²V_t = V_{t+2} − 2V_{t+1} + V_t`.
pub fn accel_loss_grad(pred: &MeshSequence, gt: &MeshSequence) -> Result<(f64, Matrix)> {
    pred.same_shape(gt)?;
    let (t, v) = (pred.frames(), pred.vertices());
    if t < 3 {
        return Err(Error::invalid("acceleration loss needs at least 3 frames"));
    }
    let scale = 1.0 / ((t - 2) * v) as f64;
    let (p, g) = (pred.positions(), gt.positions());
    let second = |m: &Matrix, f: usize, i: usize| m.get(f + 2, i) - 2.0 * m.get(f + 1, i) + m.get(f, i);
    let mut grad = Matrix::zeros(t, 3 * v);
    let mut loss = 0.0;
    for frame in 0..t - 2 {
        for i in 0..3 * v {
            let d = second(p, frame, i) - second(g, frame, i);
            loss += d * d;
            let gd = 2.0 * d * scale;
            grad.add_at(frame + 2, i, gd);
            grad.add_at(frame + 1, i, -2.0 * gd);
            grad.add_at(frame, i, gd);
        }
    }
    Ok((loss * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, ParamStore};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid_faces(n: usize) -> Vec<[u32; 3]> {
        let mut faces = Vec::new();
        for j in 0..n - 1 {
            for i in 0..n - 1 {
                let v00 = (j * n + i) as u32;
                faces.push([v00, v00 + 1, v00 + 1 + n as u32]);
                faces.push([v00, v00 + 1 + n as u32, v00 + n as u32]);
            }
        }
        faces
    }

    fn grid_frame(n: usize) -> Vec<f64> {
        (0..n * n)
            .flat_map(|v| [(v % n) as f64 * 10.0, (v / n) as f64 * 10.0, 0.0])
            .collect()
    }

    fn seq(rows: Vec<Vec<f64>>) -> MeshSequence {
        MeshSequence::new(Matrix::from_rows(&rows).unwrap()).unwrap()
    }

    #[test]
    fn recon_constant_offset_and_mask() {
        let gt = ParamSequence::new(Matrix::from_fn(4, 3, |t, d| (t + d) as f64)).unwrap();
        let p = ParamSequence::new(gt.values().map(|v| v + 0.5)).unwrap();
        let full = FrameMask::full(4);
        assert_eq!(recon_loss(&gt, &gt, &full).unwrap(), 0.0);
        assert!((recon_loss(&p, &gt, &full).unwrap() - 0.25).abs() < 1e-12);
        // masked frames do not contribute
        let mut off = p.values().clone();
        off.row_mut(3).fill(100.0);
        let off = ParamSequence::new(off).unwrap();
        let mask = FrameMask::new(vec![true, true, true, false]).unwrap();
        assert!((recon_loss(&off, &gt, &mask).unwrap() - 0.25).abs() < 1e-12);
        assert!(FrameMask::new(vec![false; 3]).is_err());
        assert!(recon_loss(&p, &gt, &FrameMask::full(3)).is_err());
    }

    #[test]
    fn rotated_grid_normal_loss_is_two() {
        let n = 4;
        let flat = grid_frame(n);
        // +90° about x maps (x, y, z) to (x, −z, y).
        let rotated: Vec<f64> =
            flat.chunks(3).flat_map(|p| [p[0], -p[2], p[1]]).collect();
        let gt = seq(vec![flat.clone(), flat]);
        let pred = seq(vec![rotated.clone(), rotated]);
        let faces = grid_faces(n);
        assert!((normal_loss(&pred, &gt, &faces).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(normal_loss(&gt, &gt, &faces).unwrap(), 0.0);
    }

    #[test]
    fn temporal_analytic_cases() {
        let base = grid_frame(4);
        let s = 1.5;
        let static_seq = seq(vec![base.clone(); 5]);
        let moving = seq(
            (0..5)
                .map(|t| {
                    base.chunks(3)
                        .flat_map(|p| [p[0] + s * t as f64, p[1], p[2]])
                        .collect()
                })
                .collect(),
        );
        assert_eq!(velocity_loss(&static_seq, &static_seq).unwrap(), 0.0);
        assert!((velocity_loss(&static_seq, &moving).unwrap() - s * s).abs() < 1e-12);
        assert_eq!(accel_loss(&static_seq, &moving).unwrap(), 0.0);
        assert!(velocity_loss(&seq(vec![base.clone()]), &seq(vec![base.clone()])).is_err());
        assert!(accel_loss(&seq(vec![base.clone(); 2]), &seq(vec![base; 2])).is_err());
    }

    #[test]
    fn geometric_gradients_pass_grad_check() {
        let n = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let faces = grid_faces(n);
        let base = grid_frame(n);
        let t = 4;
        let gt = MeshSequence::new(Matrix::from_fn(t, 3 * n * n, |_, i| {
            base[i] + rng.random_range(-2.0..2.0)
        }))
        .unwrap();
        let start = Matrix::from_fn(t, 3 * n * n, |_, i| base[i] + rng.random_range(-2.0..2.0));
        type LossFn = fn(&MeshSequence, &MeshSequence, &[[u32; 3]]) -> Result<(f64, Matrix)>;
        let cases: [(&str, LossFn); 4] = [
            ("mesh", |p, g, _| mesh_loss_grad(p, g)),
            ("normal", normal_loss_grad),
            ("vel", |p, g, _| velocity_loss_grad(p, g)),
            ("acc", |p, g, _| accel_loss_grad(p, g)),
        ];
        for (name, f) in cases {
            let mut store = ParamStore::new();
            let id = store.insert("x", start.clone()).unwrap();
            let r = grad_check(&mut store, 1e-5, |s, with_grad| {
                let pred = MeshSequence::new(s.value(id).clone())?;
                let (l, g) = f(&pred, &gt, &faces)?;
                if with_grad {
                    s.zero_grad();
                    s.accumulate(id, &g)?;
                }
                Ok(l)
            })
            .unwrap();
            assert!(r.max_rel_error < 1e-5, "{name}: {r:?}");
        }
    }
}
