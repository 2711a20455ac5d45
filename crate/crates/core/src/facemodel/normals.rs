use crate::error::{Error, Result};
use crate::numerics::Matrix;

const NORMAL_FLOOR: f64 = 1e-12;
const FALLBACK: [f64; 3] = [0.0, 0.0, 1.0];

/// Unit vertex normals plus the vertices that received the `(0, 0, 1)` fallback.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexNormals {
    pub normals: Matrix,
    pub fallback: Vec<usize>,
}

#[inline]
fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[inline]
fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn point(flat: &[f64], v: u32) -> [f64; 3] {
    let i = 3 * v as usize;
    [flat[i], flat[i + 1], flat[i + 2]]
}

/// Area-weighted (unnormalised cross product) normals accumulated per vertex.
fn accumulate(flat: &[f64], faces: &[[u32; 3]]) -> Vec<[f64; 3]> {
    let mut acc = vec![[0.0; 3]; flat.len() / 3];
    for &[a, b, c] in faces {
        let pa = point(flat, a);
        let n = cross(sub(point(flat, b), pa), sub(point(flat, c), pa));
        for v in [a, b, c] {
            let slot = &mut acc[v as usize];
            slot[0] += n[0];
            slot[1] += n[1];
            slot[2] += n[2];
        }
    }
    acc
}

/// Normals for one frame given as flat `3V` coordinates.
pub(crate) fn normals_flat(flat: &[f64], faces: &[[u32; 3]]) -> Result<(Vec<[f64; 3]>, Vec<usize>)> {
    if faces.is_empty() {
        return Err(Error::invalid("empty face list"));
    }
    let mut fallback = Vec::new();
    let normals = accumulate(flat, faces)
        .into_iter()
        .enumerate()
        .map(|(v, n)| {
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if len < NORMAL_FLOOR {
                fallback.push(v);
                FALLBACK
            } else {
                [n[0] / len, n[1] / len, n[2] / len]
            }
        })
        .collect();
    Ok((normals, fallback))
}

pub fn vertex_normals(positions: &Matrix, faces: &[[u32; 3]]) -> Result<VertexNormals> {
    if positions.cols() != 3 {
        return Err(Error::shape("positions must be V × 3"));
    }
    if faces.iter().flatten().any(|&i| i as usize >= positions.rows()) {
        return Err(Error::invalid("face index out of range"));
    }
    let (normals, fallback) = normals_flat(positions.data(), faces)?;
    if !fallback.is_empty() {
        log::warn!("{} vertices have degenerate normals; using (0, 0, 1)", fallback.len());
    }
    let data = normals.into_iter().flatten().collect();
    Ok(VertexNormals { normals: Matrix::new(positions.rows(), 3, data)?, fallback })
}

/// Gradient of a scalar loss with respect to flat `3V` positions, given `dL/dN`.
pub fn vertex_normals_backward(flat: &[f64], faces: &[[u32; 3]], d_normals: &[f64]) -> Vec<f64> {
    let acc = accumulate(flat, faces);
    // dL/d(accumulated normal) through the normalisation.
    let d_acc: Vec<[f64; 3]> = acc
        .iter()
        .enumerate()
        .map(|(v, n)| {
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if len < NORMAL_FLOOR {
                return [0.0; 3];
            }
            let u = [n[0] / len, n[1] / len, n[2] / len];
            let g = [d_normals[3 * v], d_normals[3 * v + 1], d_normals[3 * v + 2]];
            let proj = u[0] * g[0] + u[1] * g[1] + u[2] * g[2];
            [(g[0] - u[0] * proj) / len, (g[1] - u[1] * proj) / len, (g[2] - u[2] * proj) / len]
        })
        .collect();

    let mut grad = vec![0.0; flat.len()];
    for &[a, b, c] in faces {
        let da = d_acc[a as usize];
        let db = d_acc[b as usize];
        let dc = d_acc[c as usize];
        let dn = [da[0] + db[0] + dc[0], da[1] + db[1] + dc[1], da[2] + db[2] + dc[2]];
        let pa = point(flat, a);
        let e1 = sub(point(flat, b), pa);
        let e2 = sub(point(flat, c), pa);
        // n = e1 × e2: ∂(n·g)/∂e1 = e2 × g, ∂(n·g)/∂e2 = g × e1.
        let de1 = cross(e2, dn);
        let de2 = cross(dn, e1);
        for k in 0..3 {
            grad[3 * b as usize + k] += de1[k];
            grad[3 * c as usize + k] += de2[k];
            grad[3 * a as usize + k] -= de1[k] + de2[k];
        }
    }
    grad
}
