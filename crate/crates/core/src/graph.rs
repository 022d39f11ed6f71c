//! Weighted, undirected superpixel similarity graph.
//!
//! Edge weights are the product of a spectral and a location kernel,
//! both in (0, 1] with 1 meaning most similar. Each node keeps edges
//! to its k best-weighted peers and the edge set is the symmetric
//! union, so every node ends with degree >= min(k, K'-1).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::SuperpixelFeatures;

#[derive(Debug, Clone)]
pub struct GraphParams {
    /// Balance between the mean and weighted feature kernels, in [0, 1].
    pub beta: f64,
    /// Spectral kernel width; `None` uses the median heuristic.
    pub sigma_s: Option<f64>,
    /// Location kernel width; `None` uses the median heuristic.
    pub sigma_l: Option<f64>,
    /// Neighbors kept per node before symmetrization.
    pub k: usize,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self {
            beta: 0.9,
            sigma_s: None,
            sigma_l: None,
            k: 20,
        }
    }
}

/// Kernel widths actually used after resolving the median heuristic.
#[derive(Debug, Clone, Copy)]
pub struct ResolvedParams {
    pub beta: f64,
    pub sigma_s: f64,
    pub sigma_l: f64,
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: u32,
    pub j: u32,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct SimilarityGraph {
    pub node_count: usize,
    /// Sorted edges with i < j; weights in (0, 1].
    pub edges: Vec<Edge>,
    pub params: ResolvedParams,
}

impl SimilarityGraph {
    /// Per-node neighbor lists (index, weight), sorted by neighbor index.
    pub fn neighbor_lists(&self) -> Vec<Vec<(u32, f64)>> {
        let mut lists = vec![Vec::new(); self.node_count];
        for e in &self.edges {
            lists[e.i as usize].push((e.j, e.weight));
            lists[e.j as usize].push((e.i, e.weight));
        }
        for l in lists.iter_mut() {
            l.sort_by_key(|&(j, _)| j);
        }
        lists
    }

    /// Degenerate graphs (fewer than two nodes) carry no edges.
    pub fn is_degenerate(&self) -> bool {
        self.node_count < 2
    }
}

/// Spectral similarity between two superpixels:
/// `exp(((beta-1)||w_i - w_j||^2 - beta ||m_i - m_j||^2) / sigma_s^2)`.
pub fn spectral_similarity(
    mean_i: &[f64],
    weighted_i: &[f64],
    mean_j: &[f64],
    weighted_j: &[f64],
    beta: f64,
    sigma_s: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Parameter(format!(
            "beta must be in [0, 1], got {beta}"
        )));
    }
    if !(sigma_s > 0.0) {
        return Err(Error::Parameter(format!(
            "sigma_s must be positive, got {sigma_s}"
        )));
    }
    Ok(spectral_similarity_unchecked(
        mean_i, weighted_i, mean_j, weighted_j, beta, sigma_s,
    ))
}

#[inline]
fn spectral_similarity_unchecked(
    mean_i: &[f64],
    weighted_i: &[f64],
    mean_j: &[f64],
    weighted_j: &[f64],
    beta: f64,
    sigma_s: f64,
) -> f64 {
    let dw = sq_dist(weighted_i, weighted_j);
    let dm = sq_dist(mean_i, mean_j);
    (((beta - 1.0) * dw - beta * dm) / (sigma_s * sigma_s)).exp()
}

/// Location similarity: `exp(-||p_i - p_j||^2 / sigma_l^2)`.
pub fn location_similarity(pi: [f64; 2], pj: [f64; 2], sigma_l: f64) -> Result<f64> {
    if !(sigma_l > 0.0) {
        return Err(Error::Parameter(format!(
            "sigma_l must be positive, got {sigma_l}"
        )));
    }
    let dx = pi[0] - pj[0];
    let dy = pi[1] - pj[1];
    Ok((-(dx * dx + dy * dy) / (sigma_l * sigma_l)).exp())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Builds the kNN similarity graph over all superpixels. Each node
/// ranks every other node by the combined weight `s_ij * l_ij`, keeps
/// the `min(k, K'-1)` best (ties to the lower index), and the edge set
/// is the union over both endpoints.
pub fn build_graph(features: &SuperpixelFeatures, params: &GraphParams) -> Result<SimilarityGraph> {
    if !(0.0..=1.0).contains(&params.beta) {
        return Err(Error::Parameter(format!(
            "beta must be in [0, 1], got {}",
            params.beta
        )));
    }
    if params.k == 0 {
        return Err(Error::Parameter("knn must be at least 1".into()));
    }
    for (name, sigma) in [("sigma_s", params.sigma_s), ("sigma_l", params.sigma_l)] {
        if let Some(s) = sigma {
            if !(s > 0.0) {
                return Err(Error::Parameter(format!("{name} must be positive, got {s}")));
            }
        }
    }
    let n = features.len();
    let resolved = ResolvedParams {
        beta: params.beta,
        sigma_s: params
            .sigma_s
            .unwrap_or_else(|| median_sigma_spectral(features, params.beta, params.k)),
        sigma_l: params
            .sigma_l
            .unwrap_or_else(|| median_sigma_location(features, params.k)),
        k: params.k,
    };
    if n < 2 {
        return Ok(SimilarityGraph {
            node_count: n,
            edges: Vec::new(),
            params: resolved,
        });
    }

    let k_eff = params.k.min(n - 1);
    let selected: Vec<Vec<(u32, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row: Vec<(u32, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let s = spectral_similarity_unchecked(
                        &features.mean[i],
                        &features.weighted[i],
                        &features.mean[j],
                        &features.weighted[j],
                        resolved.beta,
                        resolved.sigma_s,
                    );
                    let dx = features.position[i][0] - features.position[j][0];
                    let dy = features.position[i][1] - features.position[j][1];
                    let l = (-(dx * dx + dy * dy) / (resolved.sigma_l * resolved.sigma_l)).exp();
                    let w = (s * l).max(f64::MIN_POSITIVE);
                    (j as u32, w)
                })
                .collect();
            row.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            row.truncate(k_eff);
            row
        })
        .collect();

    let mut edges: Vec<Edge> = Vec::with_capacity(n * k_eff);
    for (i, row) in selected.iter().enumerate() {
        for &(j, w) in row {
            let (a, b) = if (i as u32) < j {
                (i as u32, j)
            } else {
                (j, i as u32)
            };
            edges.push(Edge {
                i: a,
                j: b,
                weight: w,
            });
        }
    }
    edges.sort_by(|a, b| (a.i, a.j).cmp(&(b.i, b.j)));
    edges.dedup_by_key(|e| (e.i, e.j));

    Ok(SimilarityGraph {
        node_count: n,
        edges,
        params: resolved,
    })
}

/// Median heuristic for sigma_s: per node, take the k smallest values
/// of the kernel exponent's positive combination
/// `(1-beta)||dw||^2 + beta ||dm||^2`, pool them over all nodes, and
/// use the median. Scaling by the near-neighbor distances keeps the
/// kernel discriminative: an all-pairs median would sit at the
/// between-class scale and flatten it.
fn median_sigma_spectral(features: &SuperpixelFeatures, beta: f64, k: usize) -> f64 {
    let n = features.len();
    let mut pool = Vec::with_capacity(n * k.min(n.saturating_sub(1)));
    for i in 0..n {
        let mut row: Vec<f64> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let dw = sq_dist(&features.weighted[i], &features.weighted[j]);
                let dm = sq_dist(&features.mean[i], &features.mean[j]);
                (1.0 - beta) * dw + beta * dm
            })
            .collect();
        row.sort_by(|a, b| a.partial_cmp(b).unwrap());
        row.truncate(k);
        pool.extend(row);
    }
    median_sqrt_or_one(pool)
}

/// Median heuristic for sigma_l over the pooled k smallest squared
/// centroid distances per node.
fn median_sigma_location(features: &SuperpixelFeatures, k: usize) -> f64 {
    let n = features.len();
    let mut pool = Vec::with_capacity(n * k.min(n.saturating_sub(1)));
    for i in 0..n {
        let mut row: Vec<f64> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let dx = features.position[i][0] - features.position[j][0];
                let dy = features.position[i][1] - features.position[j][1];
                dx * dx + dy * dy
            })
            .collect();
        row.sort_by(|a, b| a.partial_cmp(b).unwrap());
        row.truncate(k);
        pool.extend(row);
    }
    median_sqrt_or_one(pool)
}

fn median_sqrt_or_one(mut vals: Vec<f64>) -> f64 {
    if vals.is_empty() {
        return 1.0;
    }
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = vals[vals.len() / 2];
    if median > 0.0 {
        median.sqrt()
    } else {
        1.0
    }
}

/// Dumps edges as CSV lines `i,j,w` with i < j and 9 significant
/// digits on the weight.
pub fn write_graph_csv(graph: &SimilarityGraph, path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    for e in &graph.edges {
        writeln!(out, "{},{},{:.8e}", e.i, e.j, e.weight)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a graph dump back. The node count cannot be recovered from
/// the edge list alone, so the caller supplies it along with the
/// parameters the graph was built with.
pub fn read_graph_csv(path: &Path, node_count: usize, params: ResolvedParams) -> Result<SimilarityGraph> {
    let text = fs::read_to_string(path)?;
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let err = |what: &str| {
            Error::Format(format!("graph line {}: {what}", lineno + 1))
        };
        let i: u32 = parts
            .next()
            .and_then(|t| t.trim().parse().ok())
            .ok_or_else(|| err("bad node index"))?;
        let j: u32 = parts
            .next()
            .and_then(|t| t.trim().parse().ok())
            .ok_or_else(|| err("bad node index"))?;
        let w: f64 = parts
            .next()
            .and_then(|t| t.trim().parse().ok())
            .ok_or_else(|| err("bad weight"))?;
        if parts.next().is_some() {
            return Err(err("too many fields"));
        }
        if i >= j || j as usize >= node_count {
            return Err(err("node indices out of order or range"));
        }
        if !(w > 0.0 && w <= 1.0) {
            return Err(err("weight outside (0, 1]"));
        }
        edges.push(Edge { i, j, weight: w });
    }
    Ok(SimilarityGraph {
        node_count,
        edges,
        params,
    })
}
