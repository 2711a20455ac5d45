//! Evaluation metrics over decoded meshes and expression-parameter clusters.
//!
//! All distances are in the mesh units (millimetres for the synthetic face).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::facemodel::{BlendshapeModel, MeshSequence, ParamSequence, LIPS, LOWER_LIP_KEY, UPPER_FACE, UPPER_LIP_KEY};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LveMode {
    /// Per-frame maximum over lip vertices, averaged over frames.
    #[default]
    Max,
    /// Per-frame mean over lip vertices, averaged over frames.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub lve: LveMode,
    pub fdd_subset: String,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { lve: LveMode::Max, fdd_subset: UPPER_FACE.to_string() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MetricCounts {
    pub frames: usize,
    pub vertices: usize,
    pub sequences: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ve_mm: f64,
    pub lve_mm: f64,
    pub mod_mm: f64,
    pub fdd: f64,
    pub delta_ch: f64,
    pub counts: MetricCounts,
}

impl MetricsReport {
    pub fn is_valid(&self) -> bool {
        [self.ve_mm, self.lve_mm, self.mod_mm, self.fdd, self.delta_ch]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn check_pair(pred: &MeshSequence, gt: &MeshSequence) -> Result<()> {
    pred.same_shape(gt)?;
    if pred.frames() == 0 || pred.vertices() == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

fn check_subset(subset: &[u32], vertices: usize) -> Result<()> {
    if subset.is_empty() {
        return Err(Error::invalid("vertex subset is empty"));
    }
    if let Some(v) = subset.iter().find(|v| **v as usize >= vertices) {
        return Err(Error::invalid(format!("vertex {v} out of range for {vertices} vertices")));
    }
    Ok(())
}

/// Mean per-vertex Euclidean distance over all frames and vertices.
pub fn ve(pred: &MeshSequence, gt: &MeshSequence) -> Result<f64> {
    check_pair(pred, gt)?;
    let (t_n, v_n) = (pred.frames(), pred.vertices());
    let mut sum = 0.0;
    for t in 0..t_n {
        for v in 0..v_n {
            sum += dist(pred.vertex(t, v), gt.vertex(t, v));
        }
    }
    Ok(sum / (t_n * v_n) as f64)
}

pub fn lve(pred: &MeshSequence, gt: &MeshSequence, lips: &[u32], mode: LveMode) -> Result<f64> {
    check_pair(pred, gt)?;
    check_subset(lips, pred.vertices())?;
    let mut sum = 0.0;
    for t in 0..pred.frames() {
        let d = lips.iter().map(|&v| dist(pred.vertex(t, v as usize), gt.vertex(t, v as usize)));
        sum += match mode {
            LveMode::Max => d.fold(0.0, f64::max),
            LveMode::Mean => d.sum::<f64>() / lips.len() as f64,
        };
    }
    Ok(sum / pred.frames() as f64)
}

/// Mean absolute difference of the upper/lower key-vertex distance.
pub fn mouth_opening_deviation(pred: &MeshSequence, gt: &MeshSequence, upper: usize, lower: usize) -> Result<f64> {
    check_pair(pred, gt)?;
    check_subset(&[upper as u32, lower as u32], pred.vertices())?;
    let opening = |s: &MeshSequence, t| dist(s.vertex(t, upper), s.vertex(t, lower));
    let sum: f64 = (0..pred.frames()).map(|t| (opening(pred, t) - opening(gt, t)).abs()).sum();
    Ok(sum / pred.frames() as f64)
}

/// Root-mean-square displacement of vertex `v` about its temporal mean.
fn dynamics(seq: &MeshSequence, v: usize) -> f64 {
    let n = seq.frames() as f64;
    let mut mean = [0.0; 3];
    for t in 0..seq.frames() {
        let p = seq.vertex(t, v);
        for k in 0..3 {
            mean[k] += p[k] / n;
        }
    }
    let ss: f64 = (0..seq.frames()).map(|t| dist(seq.vertex(t, v), mean).powi(2)).sum();
    (ss / n).sqrt()
}

/// Mean over `subset` of the absolute difference in per-vertex displacement spread.
pub fn fdd(pred: &MeshSequence, gt: &MeshSequence, subset: &[u32]) -> Result<f64> {
    check_pair(pred, gt)?;
    if pred.frames() < 2 {
        return Err(Error::invalid("fdd needs at least 2 frames"));
    }
    check_subset(subset, pred.vertices())?;
    let sum: f64 = subset
        .iter()
        .map(|&v| (dynamics(pred, v as usize) - dynamics(gt, v as usize)).abs())
        .sum();
    Ok(sum / subset.len() as f64)
}

/// Calinski-Harabasz index in trace form; labels may be any integers.
pub fn ch_index(points: &Matrix, labels: &[usize]) -> Result<f64> {
    let (n, p) = points.shape();
    if labels.len() != n {
        return Err(Error::shape(format!("{n} points but {} labels", labels.len())));
    }
    if !points.is_finite() {
        return Err(Error::NonFinite("clustering points".into()));
    }
    let classes: BTreeSet<usize> = labels.iter().copied().collect();
    let k = classes.len();
    if k < 2 || n <= k {
        return Err(Error::Degenerate(format!("degenerate clustering: {n} points in {k} classes")));
    }
    let index: BTreeMap<usize, usize> = classes.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let mut sums = Matrix::zeros(k, p);
    let mut counts = vec![0usize; k];
    for (i, l) in labels.iter().enumerate() {
        let c = index[l];
        counts[c] += 1;
        for (s, x) in sums.row_mut(c).iter_mut().zip(points.row(i)) {
            *s += x;
        }
    }
    let mu = points.col_means();
    let centroids = Matrix::from_fn(k, p, |c, j| sums.get(c, j) / counts[c] as f64);
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let between: f64 = (0..k).map(|c| counts[c] as f64 * sq(centroids.row(c), mu.data())).sum();
    let within: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, l)| sq(centroids.row(index[l]), points.row(i)))
        .sum();
    if within == 0.0 {
        return Err(Error::Degenerate("zero within-cluster dispersion".into()));
    }
    Ok((between / (k - 1) as f64) / (within / (n - k) as f64))
}

/// Relative change `|CH(gen) − CH(gt)| / CH(gt)`.
pub fn delta_ch(gen: &Matrix, gen_labels: &[usize], gt: &Matrix, gt_labels: &[usize]) -> Result<f64> {
    let a: BTreeSet<_> = gen_labels.iter().collect();
    let b: BTreeSet<_> = gt_labels.iter().collect();
    if a != b {
        return Err(Error::invalid("generated and reference label sets differ"));
    }
    let ch_gt = ch_index(gt, gt_labels)?;
    Ok((ch_index(gen, gen_labels)? - ch_gt).abs() / ch_gt)
}

/// Temporal mean of the expression block of each sequence, one row per sequence.
pub fn expression_means(seqs: &[ParamSequence], face: &BlendshapeModel) -> Result<Matrix> {
    let rows: Vec<Vec<f64>> = seqs
        .iter()
        .map(|s| s.expression(face.layout()).col_means().into_data())
        .collect();
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    Matrix::from_rows(&rows)
}

/// Per-sequence mesh metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub ve_mm: f64,
    pub lve_mm: f64,
    pub mod_mm: f64,
    pub fdd: f64,
}

pub fn sequence_metrics(
    pred: &MeshSequence,
    gt: &MeshSequence,
    face: &BlendshapeModel,
    cfg: &MetricsConfig,
) -> Result<SequenceMetrics> {
    Ok(SequenceMetrics {
        ve_mm: ve(pred, gt)?,
        lve_mm: lve(pred, gt, face.subset(LIPS)?, cfg.lve)?,
        mod_mm: mouth_opening_deviation(pred, gt, face.key_vertex(UPPER_LIP_KEY)?, face.key_vertex(LOWER_LIP_KEY)?)?,
        fdd: fdd(pred, gt, face.subset(&cfg.fdd_subset)?)?,
    })
}

/// Full report: mesh metrics averaged over sequences plus ΔCH over temporal-mean ψ.
pub fn evaluate(
    pred: &[ParamSequence],
    gt: &[ParamSequence],
    labels: &[usize],
    face: &BlendshapeModel,
    cfg: &MetricsConfig,
) -> Result<MetricsReport> {
    if pred.len() != gt.len() || pred.len() != labels.len() {
        return Err(Error::shape("prediction, reference and label counts differ"));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut acc = [0.0; 4];
    let mut frames = 0;
    for (p, g) in pred.iter().zip(gt) {
        let m = sequence_metrics(&face.decode_sequence(p)?, &face.decode_sequence(g)?, face, cfg)?;
        for (a, v) in acc.iter_mut().zip([m.ve_mm, m.lve_mm, m.mod_mm, m.fdd]) {
            *a += v;
        }
        frames += p.frames();
    }
    let n = pred.len() as f64;
    let delta = delta_ch(&expression_means(pred, face)?, labels, &expression_means(gt, face)?, labels)?;
    let report = MetricsReport {
        ve_mm: acc[0] / n,
        lve_mm: acc[1] / n,
        mod_mm: acc[2] / n,
        fdd: acc[3] / n,
        delta_ch: delta,
        counts: MetricCounts { frames, vertices: face.num_vertices(), sequences: pred.len() },
    };
    if !report.is_valid() {
        return Err(Error::NonFinite("metrics report".into()));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_seq(rng: &mut impl Rng, t: usize, v: usize) -> MeshSequence {
        MeshSequence::new(Matrix::from_fn(t, 3 * v, |_, _| rng.random_range(-5.0..5.0))).unwrap()
    }

    fn shifted(s: &MeshSequence, d: [f64; 3]) -> MeshSequence {
        MeshSequence::new(Matrix::from_fn(s.frames(), 3 * s.vertices(), |t, c| s.positions().get(t, c) + d[c % 3]))
            .unwrap()
    }

    #[test]
    fn analytic_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gt = random_seq(&mut rng, 6, 5);
        let lips = [1u32, 3];
        assert_eq!(ve(&gt, &gt).unwrap(), 0.0);
        assert_eq!(lve(&gt, &gt, &lips, LveMode::Max).unwrap(), 0.0);
        assert_eq!(mouth_opening_deviation(&gt, &gt, 1, 3).unwrap(), 0.0);
        assert_eq!(fdd(&gt, &gt, &lips).unwrap(), 0.0);
        assert!((ve(&shifted(&gt, [1.0, 0.0, 0.0]), &gt).unwrap() - 1.0).abs() < 1e-12);

        let mut pos = gt.positions().clone();
        pos.add_at(2, 3 * 3 + 1, 2.0);
        let moved = MeshSequence::new(pos).unwrap();
        assert!((lve(&moved, &gt, &lips, LveMode::Max).unwrap() - 2.0 / 6.0).abs() < 1e-12);
        assert!((lve(&moved, &gt, &lips, LveMode::Mean).unwrap() - 1.0 / 6.0).abs() < 1e-12);

        let keys = |gap: f64| {
            MeshSequence::new(Matrix::from_fn(4, 6, |t, c| if c == 4 { gap } else { t as f64 * 0.0 })).unwrap()
        };
        assert!((mouth_opening_deviation(&keys(3.0), &keys(5.0), 0, 1).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fdd_two_position_oscillation() {
        let a = 1.7;
        let stat = MeshSequence::new(Matrix::filled(8, 6, 2.0)).unwrap();
        let osc = MeshSequence::new(Matrix::from_fn(8, 6, |t, c| {
            if c == 0 {
                2.0 + if t % 2 == 0 { a } else { -a }
            } else {
                2.0
            }
        }))
        .unwrap();
        assert_eq!(fdd(&stat, &stat, &[0, 1]).unwrap(), 0.0);
        assert!((fdd(&stat, &osc, &[0]).unwrap() - a).abs() < 1e-12);
        assert!((fdd(&stat, &osc, &[0, 1]).unwrap() - a / 2.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_seq(&mut rng, 3, 4);
        let b = random_seq(&mut rng, 3, 5);
        assert!(ve(&a, &b).is_err());
        assert!(lve(&a, &a, &[], LveMode::Max).is_err());
        assert!(lve(&a, &a, &[4], LveMode::Max).is_err());
        assert!(mouth_opening_deviation(&a, &a, 0, 9).is_err());
        let one = random_seq(&mut rng, 1, 4);
        assert!(fdd(&one, &one, &[0]).is_err());
        let pts = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        assert!(matches!(ch_index(&pts, &[0, 1]), Err(Error::Degenerate(m)) if m.contains("degenerate clustering")));
        let pts = Matrix::from_rows(&[vec![0.0], vec![0.0], vec![1.0], vec![1.0]]).unwrap();
        assert!(
            matches!(ch_index(&pts, &[0, 0, 1, 1]), Err(Error::Degenerate(m)) if m.contains("zero within-cluster"))
        );
        assert!(ch_index(&pts, &[0, 0, 0, 0]).is_err());
    }

    #[test]
    fn ch_oracle_constant() {
        let pts = Matrix::from_rows(&[vec![0.0], vec![0.1], vec![10.0], vec![10.1]]).unwrap();
        // B = 4·5² = 100, W = 4·0.05² = 0.01, CH = 100/(0.01/2)
        let ch = ch_index(&pts, &[0, 0, 1, 1]).unwrap();
        assert!((ch - 20000.0).abs() < 1e-8, "{ch}");
    }

    fn clusters(rng: &mut impl Rng, noise: f64) -> (Matrix, Vec<usize>) {
        let centres = [[0.0, 0.0, 0.0], [6.0, 0.0, 0.0], [0.0, 6.0, 0.0]];
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (k, c) in centres.iter().enumerate() {
            for _ in 0..15 {
                rows.push(c.iter().map(|x| x + noise * Distribution::<f64>::sample(&StandardNormal, rng)).collect());
                labels.push(k);
            }
        }
        (Matrix::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn ch_invariances() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (pts, labels) = clusters(&mut rng, 1.0);
        let ch = ch_index(&pts, &labels).unwrap();
        let moved = Matrix::from_fn(pts.rows(), 3, |r, c| pts.get(r, c) + [5.0, -3.0, 11.0][c]);
        assert!((ch_index(&moved, &labels).unwrap() - ch).abs() <= 1e-9 * ch);
        assert!((ch_index(&pts.scale(3.5), &labels).unwrap() - ch).abs() <= 1e-9 * ch);
        let perm: Vec<usize> = labels.iter().map(|l| [7, 2, 4][*l]).collect();
        assert!((ch_index(&pts, &perm).unwrap() - ch).abs() <= 1e-9 * ch);
        assert_eq!(delta_ch(&pts, &labels, &pts, &labels).unwrap(), 0.0);
        let mu = pts.col_means();
        let scaled = Matrix::from_fn(pts.rows(), 3, |r, c| mu.get(0, c) + 2.0 * (pts.get(r, c) - mu.get(0, c)));
        assert!(delta_ch(&scaled, &labels, &pts, &labels).unwrap() < 1e-12);
        assert!(delta_ch(&pts, &[0; 45], &pts, &labels).is_err());
    }

    #[test]
    fn ch_decreases_with_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let means: Vec<f64> = [0.5, 1.5, 3.0]
            .iter()
            .map(|s| {
                (0..20)
                    .map(|_| {
                        let (p, l) = clusters(&mut rng, *s);
                        ch_index(&p, &l).unwrap()
                    })
                    .sum::<f64>()
                    / 20.0
            })
            .collect();
        assert!(means[0] > means[1] && means[1] > means[2], "{means:?}");
    }

    #[test]
    fn translation_invariance_of_mesh_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (p, g) = (random_seq(&mut rng, 5, 6), random_seq(&mut rng, 5, 6));
        let d = [3.0, -40.0, 7.5];
        let (p2, g2) = (shifted(&p, d), shifted(&g, d));
        assert!((ve(&p, &g).unwrap() - ve(&p2, &g2).unwrap()).abs() < 1e-9);
        let lips = [0, 2, 5];
        assert!((lve(&p, &g, &lips, LveMode::Max).unwrap() - lve(&p2, &g2, &lips, LveMode::Max).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn report_json_keys() {
        let r = MetricsReport {
            ve_mm: 1.0,
            lve_mm: 2.0,
            mod_mm: 0.5,
            fdd: 0.25,
            delta_ch: 0.1,
            counts: MetricCounts { frames: 4, vertices: 64, sequences: 1 },
        };
        let v = serde_json::to_value(&r).unwrap();
        for k in ["ve_mm", "lve_mm", "mod_mm", "fdd", "delta_ch", "counts"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        assert!(r.is_valid());
    }
}
