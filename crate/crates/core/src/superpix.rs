//! Covariance-metric superpixel segmentation with a content-adaptive
//! search range.
//!
//! The algorithm is localized k-means in the joint space of pixel
//! coordinates and log-covariance matrices. Each centroid only
//! competes for pixels within `2 * sqrt(WH/K) * g` of its position,
//! where the density function `g` shrinks the range in content-dense
//! areas. The minimized objective is the sum of squared combined
//! distances, so the mean update is exactly optimal and the recorded
//! objective trace is non-increasing.

use rayon::prelude::*;

use crate::covfield::{led_distance_unchecked, LogCovField};
use crate::error::{Error, Result};
use crate::hsi_io::SegMap;

#[derive(Debug, Clone)]
pub struct DensityParams {
    /// Odd box-smoothing window for the gradient magnitude.
    pub smoothing: usize,
    /// Sensitivity of the search-range shrinkage.
    pub lambda: f64,
    /// Lower bound on g, keeping every search range positive.
    pub g_min: f64,
}

impl Default for DensityParams {
    fn default() -> Self {
        Self {
            smoothing: 5,
            lambda: 4.0,
            g_min: 0.5,
        }
    }
}

/// Per-pixel content density in (0, 1]; 1 means flat content and a
/// full-size search range.
#[derive(Debug, Clone)]
pub struct DensityField {
    width: usize,
    height: usize,
    g: Vec<f64>,
}

impl DensityField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.g[y * self.width + x]
    }

    /// Uniform density of 1 (plain SLIC search ranges).
    pub fn uniform(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            g: vec![1.0; width * height],
        }
    }
}

/// Computes the density function from the log-covariance field: the
/// per-pixel LED gradient magnitude is box-smoothed, normalized by its
/// 99th percentile (clamping above to 1), and mapped through
/// `g = max(g_min, 1 / (1 + lambda * G))`.
pub fn content_density(field: &LogCovField, params: &DensityParams) -> Result<DensityField> {
    if params.smoothing == 0 || params.smoothing % 2 == 0 {
        return Err(Error::Parameter(format!(
            "density smoothing must be odd, got {}",
            params.smoothing
        )));
    }
    if !(params.lambda >= 0.0) {
        return Err(Error::Parameter(format!(
            "density lambda must be non-negative, got {}",
            params.lambda
        )));
    }
    if !(params.g_min > 0.0 && params.g_min <= 1.0) {
        return Err(Error::Parameter(format!(
            "density g_min must be in (0, 1], got {}",
            params.g_min
        )));
    }
    let (w, h) = (field.width(), field.height());

    let mut grad = vec![0.0f64; w * h];
    grad.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, out) in row.iter_mut().enumerate() {
            let xl = x.saturating_sub(1);
            let xr = (x + 1).min(w - 1);
            let yu = y.saturating_sub(1);
            let yd = (y + 1).min(h - 1);
            let horiz = led_distance_unchecked(field.log_at(xr, y), field.log_at(xl, y));
            let vert = led_distance_unchecked(field.log_at(x, yd), field.log_at(x, yu));
            *out = horiz + vert;
        }
    });

    let smoothed = box_smooth(&grad, w, h, params.smoothing);

    let mut sorted = smoothed.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((0.99 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    let p99 = sorted[rank - 1];

    let g = smoothed
        .iter()
        .map(|&v| {
            let normalized = if p99 > 0.0 { (v / p99).min(1.0) } else { 0.0 };
            (1.0 / (1.0 + params.lambda * normalized)).max(params.g_min)
        })
        .collect();
    Ok(DensityField {
        width: w,
        height: h,
        g,
    })
}

/// Mean over the window clamped to the image, computed exactly with a
/// summed-area table.
fn box_smooth(values: &[f64], w: usize, h: usize, window: usize) -> Vec<f64> {
    if window == 1 {
        return values.to_vec();
    }
    let half = window / 2;
    let mut sat = vec![0.0f64; (w + 1) * (h + 1)];
    for y in 0..h {
        for x in 0..w {
            sat[(y + 1) * (w + 1) + (x + 1)] = values[y * w + x]
                + sat[y * (w + 1) + (x + 1)]
                + sat[(y + 1) * (w + 1) + x]
                - sat[y * (w + 1) + x];
        }
    }
    let mut out = vec![0.0f64; w * h];
    for y in 0..h {
        let y0 = y.saturating_sub(half);
        let y1 = (y + half).min(h - 1);
        for x in 0..w {
            let x0 = x.saturating_sub(half);
            let x1 = (x + half).min(w - 1);
            let sum = sat[(y1 + 1) * (w + 1) + (x1 + 1)]
                - sat[y0 * (w + 1) + (x1 + 1)]
                - sat[(y1 + 1) * (w + 1) + x0]
                + sat[y0 * (w + 1) + x0];
            out[y * w + x] = sum / ((y1 - y0 + 1) * (x1 - x0 + 1)) as f64;
        }
    }
    out
}

/// A cluster center: spatial position plus the Log-Euclidean mean of
/// the member log-covariance matrices.
#[derive(Debug, Clone)]
pub struct Centroid {
    pub position: [f64; 2],
    pub log_cov: Vec<f64>,
    pub member_count: usize,
}

#[derive(Debug, Clone)]
pub struct SegParams {
    /// Spatial weight m: larger values give more compact superpixels.
    pub compactness: f64,
    pub max_iters: usize,
    /// Stop when the relative objective change drops below this.
    pub tol: f64,
}

impl Default for SegParams {
    fn default() -> Self {
        Self {
            compactness: 10.0,
            max_iters: 10,
            tol: 1e-3,
        }
    }
}

#[derive(Debug)]
pub struct SegResult {
    pub seg: SegMap,
    pub centroids: Vec<Centroid>,
    /// Objective value after each assignment step; non-increasing.
    pub objective_trace: Vec<f64>,
}

/// Combined squared clustering distance, or infinity when the pixel
/// lies outside the centroid's search range. `s_r = sqrt(WH/K)` is the
/// nominal superpixel interval.
pub fn clustering_distance(
    pixel_pos: [f64; 2],
    pixel_log: &[f64],
    centroid: &Centroid,
    range_limit: f64,
    compactness: f64,
    s_r: f64,
) -> f64 {
    let dx = pixel_pos[0] - centroid.position[0];
    let dy = pixel_pos[1] - centroid.position[1];
    let d_spat_sq = dx * dx + dy * dy;
    if d_spat_sq > range_limit * range_limit {
        return f64::INFINITY;
    }
    let d_spec = led_distance_unchecked(pixel_log, &centroid.log_cov);
    let ratio = compactness / s_r;
    d_spec * d_spec + ratio * ratio * d_spat_sq
}

#[inline]
fn combined_sq(
    px: f64,
    py: f64,
    pixel_log: &[f64],
    centroid: &Centroid,
    spatial_scale_sq: f64,
) -> f64 {
    let dx = px - centroid.position[0];
    let dy = py - centroid.position[1];
    let mut spec = 0.0f64;
    for (&a, &b) in pixel_log.iter().zip(&centroid.log_cov) {
        let d = a - b;
        spec += d * d;
    }
    spec + spatial_scale_sq * (dx * dx + dy * dy)
}

/// Segments the field into at most `k` superpixels.
///
/// Seeds start on a regular grid at interval `sqrt(WH/K)`, perturbed
/// to the flattest pixel (highest g) of their 3x3 neighborhood. Each
/// iteration assigns pixels to the best centroid among those whose
/// search range covers them -- a pixel may also keep its current
/// centroid, which makes the objective trace provably non-increasing
/// -- then recenters every centroid on its members. A post-pass
/// reattaches disconnected fragments to the neighbor they share the
/// longest boundary with and drops empty superpixels.
pub fn segment(
    field: &LogCovField,
    k: usize,
    density: &DensityField,
    params: &SegParams,
) -> Result<SegResult> {
    let (w, h) = (field.width(), field.height());
    let n = w * h;
    if k == 0 {
        return Err(Error::Parameter("superpixel count must be positive".into()));
    }
    if k > n {
        return Err(Error::Parameter(format!(
            "requested {k} superpixels for {n} pixels"
        )));
    }
    if density.width != w || density.height != h {
        return Err(Error::Dimension(format!(
            "density field is {}x{}, expected {w}x{h}",
            density.width, density.height
        )));
    }
    if !(params.compactness > 0.0) {
        return Err(Error::Parameter(format!(
            "compactness must be positive, got {}",
            params.compactness
        )));
    }
    if params.max_iters == 0 {
        return Err(Error::Parameter("max_iters must be at least 1".into()));
    }

    let d2 = field.dim() * field.dim();
    let s_r = ((w * h) as f64 / k as f64).sqrt();
    let spatial_scale = params.compactness / s_r;
    let spatial_scale_sq = spatial_scale * spatial_scale;

    let mut centroids = place_seeds(field, density, k, s_r);
    let k_seeded = centroids.len();

    // coarse grid over centroid positions; all centroids within the
    // maximum search range 2*s_r of a pixel sit within 2 cells of it
    let cells_x = (w as f64 / s_r).ceil() as usize;
    let cells_y = (h as f64 / s_r).ceil() as usize;
    let cell_of = |v: f64, cells: usize| ((v / s_r) as usize).min(cells - 1);

    let mut assignment = vec![u32::MAX; n];
    let mut best_d2 = vec![f64::INFINITY; n];
    let mut trace = Vec::with_capacity(params.max_iters);
    let mut prev_q: Option<f64> = None;

    for _iter in 0..params.max_iters {
        let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); cells_x * cells_y];
        for (i, c) in centroids.iter().enumerate() {
            let cx = cell_of(c.position[0], cells_x);
            let cy = cell_of(c.position[1], cells_y);
            buckets[cy * cells_x + cx].push(i as u32);
        }
        let ranges: Vec<f64> = centroids
            .iter()
            .map(|c| {
                let rx = (c.position[0].round() as usize).min(w - 1);
                let ry = (c.position[1].round() as usize).min(h - 1);
                2.0 * s_r * density.at(rx, ry)
            })
            .collect();

        let centroids_ref = &centroids;
        let ranges_ref = &ranges;
        let buckets_ref = &buckets;
        assignment
            .par_iter_mut()
            .zip(best_d2.par_iter_mut())
            .enumerate()
            .for_each(|(p, (slot, dist))| {
                let (x, y) = (p % w, p / w);
                let (px, py) = (x as f64, y as f64);
                let log = field.log_at_index(p);
                let incumbent = *slot;
                let mut best = f64::INFINITY;
                let mut best_i = u32::MAX;
                if incumbent != u32::MAX {
                    best = combined_sq(
                        px,
                        py,
                        log,
                        &centroids_ref[incumbent as usize],
                        spatial_scale_sq,
                    );
                    best_i = incumbent;
                }
                let pcx = cell_of(px, cells_x);
                let pcy = cell_of(py, cells_y);
                let cy0 = pcy.saturating_sub(2);
                let cy1 = (pcy + 2).min(cells_y - 1);
                let cx0 = pcx.saturating_sub(2);
                let cx1 = (pcx + 2).min(cells_x - 1);
                for cy in cy0..=cy1 {
                    for cx in cx0..=cx1 {
                        for &i in &buckets_ref[cy * cells_x + cx] {
                            if i == incumbent {
                                continue;
                            }
                            let c = &centroids_ref[i as usize];
                            let dx = px - c.position[0];
                            let dy = py - c.position[1];
                            let r = ranges_ref[i as usize];
                            if dx * dx + dy * dy > r * r {
                                continue;
                            }
                            let d = combined_sq(px, py, log, c, spatial_scale_sq);
                            if d < best || (d == best && i < best_i) {
                                best = d;
                                best_i = i;
                            }
                        }
                    }
                }
                if best_i == u32::MAX {
                    // first iteration, no centroid in range: nearest
                    // centroid by unrestricted distance
                    for (i, c) in centroids_ref.iter().enumerate() {
                        let d = combined_sq(px, py, log, c, spatial_scale_sq);
                        if d < best || (d == best && (i as u32) < best_i) {
                            best = d;
                            best_i = i as u32;
                        }
                    }
                }
                *slot = best_i;
                *dist = best;
            });

        let q: f64 = best_d2.iter().sum();
        trace.push(q);

        // centroid update: members' mean position and mean log matrix
        let mut pos_sum = vec![[0.0f64; 2]; k_seeded];
        let mut log_sum = vec![0.0f64; k_seeded * d2];
        let mut counts = vec![0usize; k_seeded];
        for p in 0..n {
            let i = assignment[p] as usize;
            counts[i] += 1;
            pos_sum[i][0] += (p % w) as f64;
            pos_sum[i][1] += (p / w) as f64;
            let log = field.log_at_index(p);
            let dst = &mut log_sum[i * d2..(i + 1) * d2];
            for (s, &v) in dst.iter_mut().zip(log) {
                *s += v;
            }
        }
        for (i, c) in centroids.iter_mut().enumerate() {
            if counts[i] == 0 {
                c.member_count = 0;
                continue;
            }
            // true division keeps integer-valued means exact, so ties
            // on symmetric inputs stay exact ties
            let count = counts[i] as f64;
            c.position = [pos_sum[i][0] / count, pos_sum[i][1] / count];
            for (dst, &s) in c.log_cov.iter_mut().zip(&log_sum[i * d2..(i + 1) * d2]) {
                *dst = s / count;
            }
            c.member_count = counts[i];
        }

        if let Some(pq) = prev_q {
            let rel = if pq > 0.0 { (pq - q).abs() / pq } else { 0.0 };
            if rel < params.tol {
                break;
            }
        }
        prev_q = Some(q);
    }

    let (compact, k_final) = enforce_connectivity(&mut assignment, w, h);
    let seg = SegMap::new(w, h, compact)?;

    // recompute centroid statistics on the final partition
    let mut pos_sum = vec![[0.0f64; 2]; k_final];
    let mut log_sum = vec![0.0f64; k_final * d2];
    let mut counts = vec![0usize; k_final];
    for p in 0..n {
        let i = seg.assignment()[p] as usize;
        counts[i] += 1;
        pos_sum[i][0] += (p % w) as f64;
        pos_sum[i][1] += (p / w) as f64;
        let log = field.log_at_index(p);
        for (s, &v) in log_sum[i * d2..(i + 1) * d2].iter_mut().zip(log) {
            *s += v;
        }
    }
    let final_centroids = (0..k_final)
        .map(|i| {
            let count = counts[i] as f64;
            Centroid {
                position: [pos_sum[i][0] / count, pos_sum[i][1] / count],
                log_cov: log_sum[i * d2..(i + 1) * d2].iter().map(|&s| s / count).collect(),
                member_count: counts[i],
            }
        })
        .collect();

    Ok(SegResult {
        seg,
        centroids: final_centroids,
        objective_trace: trace,
    })
}

/// Regular-grid seeds at interval `s_r`, each nudged to the highest-g
/// pixel in its 3x3 neighborhood (ties keep the grid position). The
/// grid is shrunk so the seed count never exceeds `k`.
fn place_seeds(field: &LogCovField, density: &DensityField, k: usize, s_r: f64) -> Vec<Centroid> {
    let (w, h) = (field.width(), field.height());
    let mut nx = ((w as f64 / s_r).round() as usize).max(1);
    let mut ny = ((h as f64 / s_r).round() as usize).max(1);
    while nx * ny > k {
        if nx >= ny && nx > 1 {
            nx -= 1;
        } else if ny > 1 {
            ny -= 1;
        } else {
            break;
        }
    }
    let mut centroids = Vec::with_capacity(nx * ny);
    for gy in 0..ny {
        for gx in 0..nx {
            let sx = (((gx as f64 + 0.5) * w as f64 / nx as f64) as usize).min(w - 1);
            let sy = (((gy as f64 + 0.5) * h as f64 / ny as f64) as usize).min(h - 1);
            let mut best = (sx, sy);
            let mut best_g = density.at(sx, sy);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let x = sx as i64 + dx;
                    let y = sy as i64 + dy;
                    if x < 0 || y < 0 || x as usize >= w || y as usize >= h {
                        continue;
                    }
                    let g = density.at(x as usize, y as usize);
                    if g > best_g {
                        best_g = g;
                        best = (x as usize, y as usize);
                    }
                }
            }
            centroids.push(Centroid {
                position: [best.0 as f64, best.1 as f64],
                log_cov: field.log_at(best.0, best.1).to_vec(),
                member_count: 0,
            });
        }
    }
    centroids
}

/// Reassigns every fragment that is not its label's largest component
/// to the adjacent superpixel sharing the most boundary pixels, then
/// compacts labels to 0..K'-1. Each pass merges every current orphan,
/// so the component count strictly decreases until each label is one
/// connected region.
fn enforce_connectivity(assignment: &mut [u32], w: usize, h: usize) -> (Vec<u32>, usize) {
    let n = w * h;
    loop {
        // connected components in raster discovery order
        let mut comp_of = vec![u32::MAX; n];
        let mut comp_label = Vec::new();
        let mut comp_pixels: Vec<Vec<usize>> = Vec::new();
        let mut stack = Vec::new();
        for start in 0..n {
            if comp_of[start] != u32::MAX {
                continue;
            }
            let id = comp_label.len() as u32;
            let label = assignment[start];
            comp_label.push(label);
            let mut pixels = Vec::new();
            comp_of[start] = id;
            stack.push(start);
            while let Some(p) = stack.pop() {
                pixels.push(p);
                let (x, y) = (p % w, p / w);
                let mut visit = |q: usize| {
                    if comp_of[q] == u32::MAX && assignment[q] == label {
                        comp_of[q] = id;
                        stack.push(q);
                    }
                };
                if x > 0 {
                    visit(p - 1);
                }
                if x + 1 < w {
                    visit(p + 1);
                }
                if y > 0 {
                    visit(p - w);
                }
                if y + 1 < h {
                    visit(p + w);
                }
            }
            comp_pixels.push(pixels);
        }

        // keeper per label: largest component, earliest on ties
        let max_label = assignment.iter().copied().max().unwrap() as usize;
        let mut keeper = vec![u32::MAX; max_label + 1];
        for (id, pixels) in comp_pixels.iter().enumerate() {
            let label = comp_label[id] as usize;
            if keeper[label] == u32::MAX
                || pixels.len() > comp_pixels[keeper[label] as usize].len()
            {
                keeper[label] = id as u32;
            }
        }

        let orphans: Vec<usize> = (0..comp_pixels.len())
            .filter(|&id| keeper[comp_label[id] as usize] != id as u32)
            .collect();
        if orphans.is_empty() {
            break;
        }

        for id in orphans {
            let mut contact: std::collections::BTreeMap<u32, usize> =
                std::collections::BTreeMap::new();
            for &p in &comp_pixels[id] {
                let (x, y) = (p % w, p / w);
                let mut touch = |q: usize| {
                    if comp_of[q] != id as u32 {
                        *contact.entry(assignment[q]).or_insert(0) += 1;
                    }
                };
                if x > 0 {
                    touch(p - 1);
                }
                if x + 1 < w {
                    touch(p + 1);
                }
                if y > 0 {
                    touch(p - w);
                }
                if y + 1 < h {
                    touch(p + w);
                }
            }
            // max contact count; BTreeMap order breaks ties toward the
            // lowest label
            let mut target = comp_label[id];
            let mut best = 0usize;
            for (&label, &count) in &contact {
                if count > best {
                    best = count;
                    target = label;
                }
            }
            if best > 0 {
                for &p in &comp_pixels[id] {
                    assignment[p] = target;
                }
            }
        }
    }

    // compact labels to 0..K'-1 preserving index order
    let max_label = assignment.iter().copied().max().unwrap() as usize;
    let mut present = vec![false; max_label + 1];
    for &a in assignment.iter() {
        present[a as usize] = true;
    }
    let mut remap = vec![u32::MAX; max_label + 1];
    let mut next = 0u32;
    for (label, &p) in present.iter().enumerate() {
        if p {
            remap[label] = next;
            next += 1;
        }
    }
    let compact: Vec<u32> = assignment.iter().map(|&a| remap[a as usize]).collect();
    (compact, next as usize)
}
