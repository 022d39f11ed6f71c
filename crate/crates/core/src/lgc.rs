//! Label propagation with local and global consistency.
//!
//! Seed rows average the one-hot labels of a superpixel's labeled
//! member pixels; superpixels without seeds start all-zero. The
//! propagation iterates `F <- alpha * S * F + (1 - alpha) * Y` on the
//! symmetrically normalized weight matrix until the max-norm change
//! drops below the tolerance, which converges to
//! `(1 - alpha) (I - alpha S)^{-1} Y`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::SimilarityGraph;
use crate::hsi_io::{LabelMap, SegMap};

/// Initial per-superpixel label mass, K' x c row-major.
#[derive(Debug, Clone)]
pub struct SeedMatrix {
    pub y: Vec<f64>,
    pub labeled: Vec<bool>,
    pub node_count: usize,
    pub classes: usize,
}

impl SeedMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.y[i * self.classes..(i + 1) * self.classes]
    }

    pub fn labeled_count(&self) -> usize {
        self.labeled.iter().filter(|&&l| l).count()
    }
}

/// Builds Y: row i holds the average one-hot label over the labeled
/// member pixels of superpixel i, or zeros when none are labeled.
pub fn build_seed_matrix(seg: &SegMap, seeds: &LabelMap, classes: usize) -> Result<SeedMatrix> {
    if classes == 0 {
        return Err(Error::Parameter(
            "class count is zero: nothing to propagate".into(),
        ));
    }
    if seeds.width() != seg.width() || seeds.height() != seg.height() {
        return Err(Error::Dimension(format!(
            "seed map is {}x{} but segmentation is {}x{}",
            seeds.width(),
            seeds.height(),
            seg.width(),
            seg.height()
        )));
    }
    let max_seed = seeds.class_count();
    if max_seed as usize > classes {
        return Err(Error::Parameter(format!(
            "seed class {max_seed} exceeds declared class count {classes}"
        )));
    }
    let k = seg.superpixel_count();
    let mut counts = vec![0u64; k * classes];
    let mut totals = vec![0u64; k];
    for (p, &label) in seeds.labels().iter().enumerate() {
        if label == 0 {
            continue;
        }
        let i = seg.assignment()[p] as usize;
        counts[i * classes + (label as usize - 1)] += 1;
        totals[i] += 1;
    }
    let mut y = vec![0.0f64; k * classes];
    let mut labeled = vec![false; k];
    for i in 0..k {
        if totals[i] == 0 {
            continue;
        }
        labeled[i] = true;
        for l in 0..classes {
            y[i * classes + l] = counts[i * classes + l] as f64 / totals[i] as f64;
        }
    }
    Ok(SeedMatrix {
        y,
        labeled,
        node_count: k,
        classes,
    })
}

/// Symmetrically normalized affinity `D^{-1/2} W D^{-1/2}` with zero
/// diagonal, stored as per-row neighbor lists. Isolated nodes get an
/// empty row and are flagged; their F rows stay at `(1-alpha) * Y`.
#[derive(Debug, Clone)]
pub struct NormalizedAffinity {
    rows: Vec<Vec<(u32, f64)>>,
    pub isolated: Vec<bool>,
}

impl NormalizedAffinity {
    pub fn node_count(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[(u32, f64)] {
        &self.rows[i]
    }
}

pub fn normalized_affinity(graph: &SimilarityGraph) -> NormalizedAffinity {
    let n = graph.node_count;
    let lists = graph.neighbor_lists();
    let degrees: Vec<f64> = lists
        .iter()
        .map(|l| l.iter().map(|&(_, w)| w).sum::<f64>())
        .collect();
    let mut rows = vec![Vec::new(); n];
    let mut isolated = vec![false; n];
    for i in 0..n {
        if degrees[i] <= 0.0 {
            isolated[i] = true;
            continue;
        }
        rows[i] = lists[i]
            .iter()
            .filter(|&&(j, _)| degrees[j as usize] > 0.0)
            .map(|&(j, w)| (j, w / (degrees[i] * degrees[j as usize]).sqrt()))
            .collect();
    }
    NormalizedAffinity { rows, isolated }
}

#[derive(Debug, Clone)]
pub struct LgcParams {
    pub alpha: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for LgcParams {
    fn default() -> Self {
        Self {
            alpha: 0.99,
            tol: 1e-8,
            max_iters: 5000,
        }
    }
}

/// Per-iteration residual of the propagation, in both norms. The
/// max-norm drives the stopping rule; the Frobenius norm is the one
/// with a guaranteed geometric decay (ratio <= alpha), since the
/// normalized affinity contracts the 2-norm but can transiently
/// amplify single entries.
#[derive(Debug, Clone, Copy)]
pub struct ResidualSample {
    pub max: f64,
    pub frobenius: f64,
}

#[derive(Debug, Clone)]
pub struct Propagation {
    /// K' x c row-major result matrix.
    pub f: Vec<f64>,
    pub node_count: usize,
    pub classes: usize,
    pub iterations: usize,
    /// Final max-norm change.
    pub residual: f64,
    pub converged: bool,
    pub residual_trace: Vec<ResidualSample>,
}

impl Propagation {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.f[i * self.classes..(i + 1) * self.classes]
    }
}

/// Iterates `F <- alpha S F + (1-alpha) Y` from `F0 = Y` until the
/// max-norm change drops below `tol` or `max_iters` is reached (the
/// result is then flagged as unconverged).
pub fn propagate(
    affinity: &NormalizedAffinity,
    seeds: &SeedMatrix,
    params: &LgcParams,
) -> Result<Propagation> {
    if !(params.alpha > 0.0 && params.alpha < 1.0) {
        return Err(Error::Parameter(format!(
            "alpha must be in (0, 1), got {}",
            params.alpha
        )));
    }
    if !(params.tol > 0.0) {
        return Err(Error::Parameter(format!(
            "tolerance must be positive, got {}",
            params.tol
        )));
    }
    if params.max_iters == 0 {
        return Err(Error::Parameter("max_iters must be at least 1".into()));
    }
    let n = seeds.node_count;
    if affinity.node_count() != n {
        return Err(Error::Dimension(format!(
            "affinity has {} nodes but seed matrix has {n}",
            affinity.node_count()
        )));
    }
    let c = seeds.classes;
    let alpha = params.alpha;
    let base: Vec<f64> = seeds.y.iter().map(|v| (1.0 - alpha) * v).collect();

    let mut f = seeds.y.clone();
    let mut next = vec![0.0f64; n * c];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut residual = f64::INFINITY;

    for _ in 0..params.max_iters {
        iterations += 1;
        let f_ref = &f;
        next.par_chunks_mut(c).enumerate().for_each(|(i, dst)| {
            dst.copy_from_slice(&base[i * c..(i + 1) * c]);
            for &(j, s) in affinity.row(i) {
                let src = &f_ref[j as usize * c..(j as usize + 1) * c];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d += alpha * s * v;
                }
            }
        });
        let mut max_change = 0.0f64;
        let mut fro_sq = 0.0f64;
        for (a, b) in next.iter().zip(&f) {
            let d = (a - b).abs();
            if d > max_change {
                max_change = d;
            }
            fro_sq += d * d;
        }
        std::mem::swap(&mut f, &mut next);
        residual = max_change;
        trace.push(ResidualSample {
            max: max_change,
            frobenius: fro_sq.sqrt(),
        });
        if max_change < params.tol {
            converged = true;
            break;
        }
    }

    Ok(Propagation {
        f,
        node_count: n,
        classes: c,
        iterations,
        residual,
        converged,
        residual_trace: trace,
    })
}

/// Per-superpixel argmax labels (ties to the lowest class index,
/// all-zero rows map to class 0) pushed down to every member pixel.
pub fn finalize_labels(
    f: &[f64],
    node_count: usize,
    classes: usize,
    seg: &SegMap,
) -> (Vec<u32>, LabelMap) {
    assert_eq!(f.len(), node_count * classes);
    assert_eq!(seg.superpixel_count(), node_count);
    let mut superpixel_labels = vec![0u32; node_count];
    for i in 0..node_count {
        let row = &f[i * classes..(i + 1) * classes];
        let mut best = 0.0f64;
        let mut label = 0u32;
        for (l, &v) in row.iter().enumerate() {
            if v > best {
                best = v;
                label = l as u32 + 1;
            }
        }
        superpixel_labels[i] = label;
    }
    let mut pixel_labels = LabelMap::zeros(seg.width(), seg.height());
    for (p, &a) in seg.assignment().iter().enumerate() {
        pixel_labels.labels_mut()[p] = superpixel_labels[a as usize];
    }
    (superpixel_labels, pixel_labels)
}

/// Propagation output plus the finalized labelings.
#[derive(Debug, Clone)]
pub struct PropagationResult {
    pub propagation: Propagation,
    pub superpixel_labels: Vec<u32>,
    pub pixel_labels: LabelMap,
}

/// Seed, propagate and finalize in one call.
pub fn classify(
    graph: &SimilarityGraph,
    seg: &SegMap,
    seeds: &LabelMap,
    classes: usize,
    params: &LgcParams,
) -> Result<PropagationResult> {
    let seed_matrix = build_seed_matrix(seg, seeds, classes)?;
    if seed_matrix.labeled_count() == 0 {
        return Err(Error::EmptyLabelColumnSpace);
    }
    let affinity = normalized_affinity(graph);
    let propagation = propagate(&affinity, &seed_matrix, params)?;
    let (superpixel_labels, pixel_labels) =
        finalize_labels(&propagation.f, propagation.node_count, classes, seg);
    Ok(PropagationResult {
        propagation,
        superpixel_labels,
        pixel_labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Edge, ResolvedParams, SimilarityGraph};

    fn graph_from_edges(n: usize, edges: &[(u32, u32, f64)]) -> SimilarityGraph {
        SimilarityGraph {
            node_count: n,
            edges: edges
                .iter()
                .map(|&(i, j, weight)| Edge { i, j, weight })
                .collect(),
            params: ResolvedParams {
                beta: 0.9,
                sigma_s: 1.0,
                sigma_l: 1.0,
                k: 1,
            },
        }
    }

    fn seg_line(n: usize) -> SegMap {
        SegMap::new(n, 1, (0..n as u32).collect()).unwrap()
    }

    #[test]
    fn seed_rows_average_labeled_pixels() {
        let seg = SegMap::new(3, 1, vec![0, 0, 0]).unwrap();
        let seeds = LabelMap::new(3, 1, vec![1, 1, 2]).unwrap();
        let y = build_seed_matrix(&seg, &seeds, 2).unwrap();
        assert!((y.row(0)[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((y.row(0)[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn unseeded_superpixel_row_is_zero() {
        let seg = SegMap::new(2, 1, vec![0, 1]).unwrap();
        let seeds = LabelMap::new(2, 1, vec![3, 0]).unwrap();
        let y = build_seed_matrix(&seg, &seeds, 3).unwrap();
        assert_eq!(y.row(1), &[0.0, 0.0, 0.0]);
        assert!(!y.labeled[1]);
        assert_eq!(y.row(0), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn fully_seeded_superpixel_is_one_hot() {
        let seg = SegMap::new(2, 1, vec![0, 0]).unwrap();
        let seeds = LabelMap::new(2, 1, vec![3, 3]).unwrap();
        let y = build_seed_matrix(&seg, &seeds, 3).unwrap();
        assert_eq!(y.row(0), &[0.0, 0.0, 1.0]);
        let sum: f64 = y.row(0).iter().sum();
        assert!(sum <= 1.0 + 1e-15);
    }

    #[test]
    fn zero_classes_rejected() {
        let seg = SegMap::new(1, 1, vec![0]).unwrap();
        let seeds = LabelMap::new(1, 1, vec![0]).unwrap();
        assert!(matches!(
            build_seed_matrix(&seg, &seeds, 0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn two_node_normalization_identity() {
        let g = graph_from_edges(2, &[(0, 1, 0.37)]);
        let s = normalized_affinity(&g);
        assert_eq!(s.row(0), &[(1u32, 1.0)]);
        assert_eq!(s.row(1), &[(0u32, 1.0)]);
    }

    #[test]
    fn path_graph_normalization_hand_values() {
        let g = graph_from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]);
        let s = normalized_affinity(&g);
        let inv_sqrt2 = 1.0 / (2.0f64).sqrt();
        assert!((s.row(0)[0].1 - inv_sqrt2).abs() < 1e-15);
        assert!((s.row(1)[0].1 - inv_sqrt2).abs() < 1e-15);
        assert!((s.row(1)[1].1 - inv_sqrt2).abs() < 1e-15);
        assert!((s.row(2)[0].1 - inv_sqrt2).abs() < 1e-15);
    }

    #[test]
    fn star_graph_spectral_radius_bounded() {
        // power iteration on the normalized star stays bounded by 1
        let edges: Vec<(u32, u32, f64)> = (1..6).map(|j| (0u32, j as u32, 0.8)).collect();
        let g = graph_from_edges(6, &edges);
        let s = normalized_affinity(&g);
        let mut v = vec![1.0f64; 6];
        for _ in 0..50 {
            let mut next = vec![0.0f64; 6];
            for i in 0..6 {
                for &(j, w) in s.row(i) {
                    next[i] += w * v[j as usize];
                }
            }
            let norm: f64 = next.iter().map(|x| x * x).sum::<f64>().sqrt();
            let prev: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(norm <= prev * (1.0 + 1e-12));
            v = next;
        }
    }

    #[test]
    fn isolated_node_flagged_and_row_stays_scaled_seed() {
        let g = graph_from_edges(3, &[(0, 1, 1.0)]);
        let s = normalized_affinity(&g);
        assert!(s.isolated[2]);
        let seg = seg_line(3);
        let seeds = LabelMap::new(3, 1, vec![1, 0, 2]).unwrap();
        let y = build_seed_matrix(&seg, &seeds, 2).unwrap();
        let params = LgcParams::default();
        let prop = propagate(&s, &y, &params).unwrap();
        assert!((prop.row(2)[1] - (1.0 - params.alpha)).abs() < 1e-12);
        assert_eq!(prop.row(2)[0], 0.0);
    }

    #[test]
    fn zero_seeds_give_zero_fixed_point() {
        let g = graph_from_edges(3, &[(0, 1, 1.0), (1, 2, 0.5)]);
        let s = normalized_affinity(&g);
        let y = SeedMatrix {
            y: vec![0.0; 6],
            labeled: vec![false; 3],
            node_count: 3,
            classes: 2,
        };
        let prop = propagate(&s, &y, &LgcParams::default()).unwrap();
        assert!(prop.converged);
        assert!(prop.f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_label_dominates_connected_graph() {
        let g = graph_from_edges(4, &[(0, 1, 0.9), (1, 2, 0.8), (2, 3, 0.7)]);
        let s = normalized_affinity(&g);
        let seg = seg_line(4);
        let seeds = LabelMap::new(4, 1, vec![0, 2, 0, 0]).unwrap();
        let y = build_seed_matrix(&seg, &seeds, 2).unwrap();
        let prop = propagate(&s, &y, &LgcParams::default()).unwrap();
        let (labels, _) = finalize_labels(&prop.f, 4, 2, &seg);
        assert_eq!(labels, vec![2, 2, 2, 2]);
    }

    #[test]
    fn absent_classes_stay_absent() {
        let g = graph_from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]);
        let s = normalized_affinity(&g);
        let seg = seg_line(3);
        let seeds = LabelMap::new(3, 1, vec![2, 0, 0]).unwrap();
        let y = build_seed_matrix(&seg, &seeds, 3).unwrap();
        let prop = propagate(&s, &y, &LgcParams::default()).unwrap();
        for i in 0..3 {
            assert_eq!(prop.row(i)[0], 0.0, "class 1 column must stay zero");
            assert_eq!(prop.row(i)[2], 0.0, "class 3 column must stay zero");
        }
    }

    #[test]
    fn frobenius_residuals_decay_geometrically() {
        let g = graph_from_edges(
            5,
            &[(0, 1, 0.9), (0, 2, 0.4), (1, 3, 0.6), (2, 4, 0.8), (3, 4, 0.5)],
        );
        let s = normalized_affinity(&g);
        let seg = seg_line(5);
        let seeds = LabelMap::new(5, 1, vec![1, 0, 2, 0, 0]).unwrap();
        let y = build_seed_matrix(&seg, &seeds, 2).unwrap();
        let params = LgcParams {
            alpha: 0.95,
            tol: 1e-12,
            max_iters: 2000,
        };
        let prop = propagate(&s, &y, &params).unwrap();
        assert!(prop.converged);
        let trace = &prop.residual_trace;
        let r0 = trace[0].frobenius;
        for (t, sample) in trace.iter().enumerate() {
            let bound = params.alpha.powi(t as i32) * r0 * (1.0 + 1e-9);
            assert!(
                sample.frobenius <= bound,
                "iteration {t}: frobenius residual {} exceeds {bound}",
                sample.frobenius
            );
        }
    }

    #[test]
    fn scaling_seeds_scales_f_keeps_argmax() {
        let g = graph_from_edges(4, &[(0, 1, 0.9), (1, 2, 0.8), (2, 3, 0.7), (0, 3, 0.2)]);
        let s = normalized_affinity(&g);
        let y1 = SeedMatrix {
            y: vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.4, 0.0, 0.0],
            labeled: vec![true, false, true, false],
            node_count: 4,
            classes: 2,
        };
        let scale = 3.0;
        let y2 = SeedMatrix {
            y: y1.y.iter().map(|v| v * scale).collect(),
            labeled: y1.labeled.clone(),
            node_count: 4,
            classes: 2,
        };
        let params = LgcParams {
            tol: 1e-13,
            ..LgcParams::default()
        };
        let p1 = propagate(&s, &y1, &params).unwrap();
        let p2 = propagate(&s, &y2, &params).unwrap();
        for (a, b) in p1.f.iter().zip(&p2.f) {
            assert!((b - a * scale).abs() < 1e-9, "{b} != {scale} * {a}");
        }
    }

    #[test]
    fn finalize_argmax_rules() {
        let seg = seg_line(3);
        let f = vec![
            0.2, 0.7, 0.1, // class 2
            0.5, 0.5, 0.0, // tie: class 1
            0.0, 0.0, 0.0, // zero row: class 0
        ];
        let (labels, pixel_map) = finalize_labels(&f, 3, 3, &seg);
        assert_eq!(labels, vec![2, 1, 0]);
        assert_eq!(pixel_map.labels(), &[2, 1, 0]);
    }

    #[test]
    fn pixel_push_down_spans_superpixels() {
        let seg = SegMap::new(4, 1, vec![0, 0, 1, 1]).unwrap();
        let f = vec![0.1, 0.9, 0.8, 0.2];
        let (_, pixel_map) = finalize_labels(&f, 2, 2, &seg);
        assert_eq!(pixel_map.labels(), &[2, 2, 1, 1]);
    }

    #[test]
    fn classify_without_any_seed_errors() {
        let g = graph_from_edges(2, &[(0, 1, 1.0)]);
        let seg = SegMap::new(2, 1, vec![0, 1]).unwrap();
        let seeds = LabelMap::new(2, 1, vec![0, 0]).unwrap();
        let err = classify(&g, &seg, &seeds, 2, &LgcParams::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyLabelColumnSpace));
        assert!(err.to_string().contains("empty label column space"));
    }
}
