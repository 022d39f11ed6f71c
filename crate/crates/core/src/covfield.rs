//! Per-pixel local spectral covariance matrices, their matrix
//! logarithms, and the Log-Euclidean distance between them.
//!
//! Logs are computed once and stored; all distance arithmetic then
//! happens in log space, where the Log-Euclidean metric is plain
//! Euclidean geometry on symmetric matrices. That also makes the
//! superpixel centroid update a well-defined mean.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hsi_io::HsiCube;

/// A symmetric positive definite matrix, stored dense row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl SpdMatrix {
    /// Wraps entries after checking shape and symmetry (to 1e-10).
    /// Positive definiteness is enforced downstream by regularization
    /// and checked by `matrix_log`.
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim == 0 || entries.len() != dim * dim {
            return Err(Error::Dimension(format!(
                "expected {dim}x{dim} entries, got {}",
                entries.len()
            )));
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                if (entries[i * dim + j] - entries[j * dim + i]).abs() > 1e-10 {
                    return Err(Error::NotSpd(format!(
                        "asymmetric at ({i},{j}): {} vs {}",
                        entries[i * dim + j],
                        entries[j * dim + i]
                    )));
                }
            }
        }
        Ok(Self { dim, entries })
    }

    pub fn identity(dim: usize) -> Self {
        let mut entries = vec![0.0; dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = 1.0;
        }
        Self { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }
}

/// Per-pixel matrix logarithms of the local covariance matrices.
/// `logs` holds one dense `dim * dim` block per pixel in raster order.
#[derive(Debug, Clone)]
pub struct LogCovField {
    width: usize,
    height: usize,
    dim: usize,
    logs: Vec<f64>,
}

impl LogCovField {
    #[cfg(test)]
    pub(crate) fn from_raw(width: usize, height: usize, dim: usize, logs: Vec<f64>) -> Self {
        assert_eq!(logs.len(), width * height * dim * dim);
        Self {
            width,
            height,
            dim,
            logs,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn log_at(&self, x: usize, y: usize) -> &[f64] {
        let d2 = self.dim * self.dim;
        let start = (y * self.width + x) * d2;
        &self.logs[start..start + d2]
    }

    pub fn log_at_index(&self, p: usize) -> &[f64] {
        let d2 = self.dim * self.dim;
        &self.logs[p * d2..(p + 1) * d2]
    }
}

/// Sample covariance (denominator n-1) of the reduced spectra over a
/// window centered on `(cx, cy)` and clamped to the image bounds, plus
/// `epsilon` times the identity. Single-sample windows contribute a
/// zero sample covariance.
pub fn local_covariance(
    reduced: &HsiCube,
    cx: usize,
    cy: usize,
    window: usize,
    epsilon: f64,
) -> Result<SpdMatrix> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::Parameter(format!(
            "covariance window must be odd and >= 3, got {window}"
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Parameter(format!(
            "covariance epsilon must be positive, got {epsilon}"
        )));
    }
    if cx >= reduced.width() || cy >= reduced.height() {
        return Err(Error::Dimension(format!(
            "center ({cx},{cy}) outside {}x{} image",
            reduced.width(),
            reduced.height()
        )));
    }
    Ok(local_covariance_unchecked(reduced, cx, cy, window, epsilon))
}

fn local_covariance_unchecked(
    reduced: &HsiCube,
    cx: usize,
    cy: usize,
    window: usize,
    epsilon: f64,
) -> SpdMatrix {
    let a = reduced.bands();
    let half = window / 2;
    let x0 = cx.saturating_sub(half);
    let x1 = (cx + half).min(reduced.width() - 1);
    let y0 = cy.saturating_sub(half);
    let y1 = (cy + half).min(reduced.height() - 1);
    let n = (x1 - x0 + 1) * (y1 - y0 + 1);

    let mut mean = vec![0.0f64; a];
    for y in y0..=y1 {
        for x in x0..=x1 {
            for (m, &v) in mean.iter_mut().zip(reduced.pixel(x, y)) {
                *m += v as f64;
            }
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }

    let mut cov = vec![0.0f64; a * a];
    if n > 1 {
        let mut centered = vec![0.0f64; a];
        for y in y0..=y1 {
            for x in x0..=x1 {
                for ((c, &v), &m) in centered.iter_mut().zip(reduced.pixel(x, y)).zip(&mean) {
                    *c = v as f64 - m;
                }
                for i in 0..a {
                    let ci = centered[i];
                    for j in i..a {
                        cov[i * a + j] += ci * centered[j];
                    }
                }
            }
        }
        let denom = (n - 1) as f64;
        for i in 0..a {
            for j in i..a {
                let v = cov[i * a + j] / denom;
                cov[i * a + j] = v;
                cov[j * a + i] = v;
            }
        }
    }
    for i in 0..a {
        cov[i * a + i] += epsilon;
    }
    SpdMatrix {
        dim: a,
        entries: cov,
    }
}

/// Principal matrix logarithm of an SPD matrix via eigendecomposition:
/// `V diag(ln lambda) V^T`, symmetrized against roundoff.
pub fn matrix_log(m: &SpdMatrix) -> Result<Vec<f64>> {
    let d = m.dim;
    let eig = DMatrix::from_row_slice(d, d, &m.entries).symmetric_eigen();
    for &ev in eig.eigenvalues.iter() {
        if ev <= 0.0 {
            return Err(Error::NotSpd(format!(
                "eigenvalue {ev} is not positive"
            )));
        }
    }
    let mut out = vec![0.0f64; d * d];
    for i in 0..d {
        for j in i..d {
            let mut acc = 0.0;
            for k in 0..d {
                acc += eig.eigenvectors[(i, k)] * eig.eigenvalues[k].ln() * eig.eigenvectors[(j, k)];
            }
            out[i * d + j] = acc;
            out[j * d + i] = acc;
        }
    }
    Ok(out)
}

/// Log-Euclidean distance: the Frobenius norm of the difference of the
/// stored matrix logarithms.
pub fn led_distance(la: &[f64], lb: &[f64]) -> Result<f64> {
    if la.len() != lb.len() {
        return Err(Error::Dimension(format!(
            "log matrices have {} and {} entries",
            la.len(),
            lb.len()
        )));
    }
    Ok(led_distance_unchecked(la, lb))
}

#[inline]
pub(crate) fn led_distance_unchecked(la: &[f64], lb: &[f64]) -> f64 {
    let mut acc = 0.0f64;
    for (&a, &b) in la.iter().zip(lb) {
        let d = a - b;
        acc += d * d;
    }
    acc.sqrt()
}

/// Builds the full log-covariance field; each pixel's computation is
/// independent, so the result does not depend on the worker schedule.
pub fn build_log_cov_field(reduced: &HsiCube, window: usize, epsilon: f64) -> Result<LogCovField> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::Parameter(format!(
            "covariance window must be odd and >= 3, got {window}"
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Parameter(format!(
            "covariance epsilon must be positive, got {epsilon}"
        )));
    }
    let (w, h, a) = (reduced.width(), reduced.height(), reduced.bands());
    let d2 = a * a;
    let mut logs = vec![0.0f64; w * h * d2];
    let failed: Vec<String> = logs
        .par_chunks_mut(d2)
        .enumerate()
        .filter_map(|(p, dst)| {
            let (x, y) = (p % w, p / w);
            let cov = local_covariance_unchecked(reduced, x, y, window, epsilon);
            match matrix_log(&cov) {
                Ok(log) => {
                    dst.copy_from_slice(&log);
                    None
                }
                Err(e) => Some(format!("pixel ({x},{y}): {e}")),
            }
        })
        .collect();
    if let Some(first) = failed.first() {
        return Err(Error::NotSpd(first.clone()));
    }
    Ok(LogCovField {
        width: w,
        height: h,
        dim: a,
        logs,
    })
}

/// Mean per-band sample variance of a cube (denominator n-1); the
/// scale reference for the covariance regularizer.
pub fn mean_band_variance(cube: &HsiCube) -> f64 {
    let (n, b) = (cube.pixel_count(), cube.bands());
    if n < 2 {
        return 0.0;
    }
    let mut mean = vec![0.0f64; b];
    for p in 0..n {
        for (m, &v) in mean.iter_mut().zip(cube.pixel_at(p)) {
            *m += v as f64;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut var = vec![0.0f64; b];
    for p in 0..n {
        for ((s, &v), &m) in var.iter_mut().zip(cube.pixel_at(p)).zip(&mean) {
            let d = v as f64 - m;
            *s += d * d;
        }
    }
    var.iter().map(|s| s / (n - 1) as f64).sum::<f64>() / b as f64
}

/// Scale-aware regularizer: `scale` times the mean band variance,
/// falling back to `scale` itself for zero-variance cubes so the
/// covariance stays SPD.
pub fn epsilon_from_scale(cube: &HsiCube, scale: f64) -> f64 {
    let eps = scale * mean_band_variance(cube);
    if eps > 0.0 {
        eps
    } else {
        scale
    }
}
