//! PCA spectral reduction with an explained-variance cutoff.
//!
//! The model is fit on the B x B sample covariance of all pixels
//! (denominator n-1) rather than an SVD of the full sample matrix,
//! since the band count is small next to the pixel count. Component
//! signs are normalized so the largest-magnitude entry of each row is
//! non-negative, keeping outputs deterministic.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hsi_io::HsiCube;

/// Pixel chunk size for the covariance accumulation. Partial sums are
/// reduced in fixed chunk order so results do not depend on the worker
/// count.
const ACCUM_CHUNK: usize = 4096;

#[derive(Debug, Clone)]
pub struct PcaModel {
    mean: Vec<f64>,
    /// kept x bands, row-major; rows are orthonormal.
    components: Vec<f64>,
    eigenvalues: Vec<f64>,
    bands: usize,
    kept: usize,
    total_variance: f64,
    explained_ratio: f64,
}

impl PcaModel {
    pub fn bands(&self) -> usize {
        self.bands
    }

    /// Number of kept components (the reduced band count).
    pub fn kept(&self) -> usize {
        self.kept
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn component(&self, a: usize) -> &[f64] {
        &self.components[a * self.bands..(a + 1) * self.bands]
    }

    /// Kept eigenvalues, non-increasing.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    pub fn explained_ratio(&self) -> f64 {
        self.explained_ratio
    }
}

/// Fits a PCA model keeping the smallest component count whose
/// explained-variance ratio reaches `variance_target`, optionally
/// capped at `max_bands`.
pub fn fit_pca(cube: &HsiCube, variance_target: f64, max_bands: Option<usize>) -> Result<PcaModel> {
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(Error::Parameter(format!(
            "variance target must be in (0, 1], got {variance_target}"
        )));
    }
    if let Some(cap) = max_bands {
        if cap == 0 {
            return Err(Error::Parameter("max bands cap must be at least 1".into()));
        }
    }
    let n = cube.pixel_count();
    if n < 2 {
        return Err(Error::Parameter(
            "PCA requires at least 2 pixels".into(),
        ));
    }
    let b = cube.bands();

    let mean = band_means(cube);
    let cov = sample_covariance(cube, &mean);

    let eig = DMatrix::from_row_slice(b, b, &cov).symmetric_eigen();
    let mut order: Vec<usize> = (0..b).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap()
            .then(i.cmp(&j))
    });
    let eigenvalues: Vec<f64> = order
        .iter()
        .map(|&i| eig.eigenvalues[i].max(0.0))
        .collect();
    let total: f64 = eigenvalues.iter().sum();

    let kept = if total <= 0.0 {
        1 // zero-variance cube: a single arbitrary unit component
    } else {
        let mut prefix = 0.0;
        let mut kept = b;
        for (i, &ev) in eigenvalues.iter().enumerate() {
            prefix += ev;
            if prefix / total >= variance_target {
                kept = i + 1;
                break;
            }
        }
        kept
    };
    let kept = max_bands.map_or(kept, |cap| kept.min(cap)).max(1);

    let mut components = vec![0.0; kept * b];
    for (a, &src) in order.iter().take(kept).enumerate() {
        let col = eig.eigenvectors.column(src);
        let row = &mut components[a * b..(a + 1) * b];
        for (dst, v) in row.iter_mut().zip(col.iter()) {
            *dst = *v;
        }
        // sign convention: largest-magnitude entry non-negative
        let pivot = row
            .iter()
            .enumerate()
            .max_by(|(i, x), (j, y)| {
                x.abs().partial_cmp(&y.abs()).unwrap().then(j.cmp(i))
            })
            .map(|(i, _)| i)
            .unwrap();
        if row[pivot] < 0.0 {
            for v in row.iter_mut() {
                *v = -*v;
            }
        }
    }

    let explained_ratio = if total <= 0.0 {
        1.0
    } else {
        eigenvalues[..kept].iter().sum::<f64>() / total
    };

    Ok(PcaModel {
        mean,
        components,
        eigenvalues: eigenvalues[..kept].to_vec(),
        bands: b,
        kept,
        total_variance: total,
        explained_ratio,
    })
}

fn band_means(cube: &HsiCube) -> Vec<f64> {
    let b = cube.bands();
    let n = cube.pixel_count();
    let partials: Vec<Vec<f64>> = (0..n.div_ceil(ACCUM_CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let start = chunk * ACCUM_CHUNK;
            let end = (start + ACCUM_CHUNK).min(n);
            let mut sum = vec![0.0f64; b];
            for p in start..end {
                for (s, &v) in sum.iter_mut().zip(cube.pixel_at(p)) {
                    *s += v as f64;
                }
            }
            sum
        })
        .collect();
    let mut mean = vec![0.0f64; b];
    for part in partials {
        for (m, v) in mean.iter_mut().zip(part) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    mean
}

/// Upper-triangular accumulation of the centered sample covariance
/// (denominator n-1), mirrored to a full symmetric matrix.
fn sample_covariance(cube: &HsiCube, mean: &[f64]) -> Vec<f64> {
    let b = cube.bands();
    let n = cube.pixel_count();
    let partials: Vec<Vec<f64>> = (0..n.div_ceil(ACCUM_CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let start = chunk * ACCUM_CHUNK;
            let end = (start + ACCUM_CHUNK).min(n);
            let mut acc = vec![0.0f64; b * b];
            let mut centered = vec![0.0f64; b];
            for p in start..end {
                for ((c, &v), &m) in centered.iter_mut().zip(cube.pixel_at(p)).zip(mean) {
                    *c = v as f64 - m;
                }
                for i in 0..b {
                    let ci = centered[i];
                    let row = &mut acc[i * b..(i + 1) * b];
                    for j in i..b {
                        row[j] += ci * centered[j];
                    }
                }
            }
            acc
        })
        .collect();
    let mut cov = vec![0.0f64; b * b];
    for part in partials {
        for (c, v) in cov.iter_mut().zip(part) {
            *c += v;
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..b {
        for j in i..b {
            let v = cov[i * b + j] / denom;
            cov[i * b + j] = v;
            cov[j * b + i] = v;
        }
    }
    cov
}

/// Projects a cube through the model: each spectrum is centered and
/// mapped onto the kept components.
pub fn project(cube: &HsiCube, model: &PcaModel) -> Result<HsiCube> {
    if cube.bands() != model.bands {
        return Err(Error::Dimension(format!(
            "cube has {} bands but the model was fit on {}",
            cube.bands(),
            model.bands
        )));
    }
    let (b, a) = (model.bands, model.kept);
    let n = cube.pixel_count();
    let mut out = vec![0f32; n * a];
    out.par_chunks_mut(a).enumerate().for_each(|(p, dst)| {
        let spectrum = cube.pixel_at(p);
        for (k, d) in dst.iter_mut().enumerate() {
            let row = &model.components[k * b..(k + 1) * b];
            let mut acc = 0.0f64;
            for ((&v, &m), &c) in spectrum.iter().zip(&model.mean).zip(row) {
                acc += (v as f64 - m) * c;
            }
            *d = acc as f32;
        }
    });
    HsiCube::new(cube.width(), cube.height(), a, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube_from_pixels(width: usize, height: usize, pixels: &[&[f32]]) -> HsiCube {
        let bands = pixels[0].len();
        let mut data = Vec::with_capacity(width * height * bands);
        for px in pixels {
            data.extend_from_slice(px);
        }
        HsiCube::new(width, height, bands, data).unwrap()
    }

    #[test]
    fn rank_one_data_needs_one_component() {
        // pixels on a line through band space
        let dir = [1.0f32, 2.0, -1.0];
        let pixels: Vec<Vec<f32>> = (0..6)
            .map(|t| dir.iter().map(|d| d * t as f32).collect())
            .collect();
        let refs: Vec<&[f32]> = pixels.iter().map(|p| p.as_slice()).collect();
        let cube = cube_from_pixels(6, 1, &refs);
        let model = fit_pca(&cube, 0.98, None).unwrap();
        assert_eq!(model.kept(), 1);
        assert!((model.explained_ratio() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_built_eigenvalues_select_one_component() {
        // centered data with sample covariance eigenvalues (3, ~1, 0);
        // 3 / (3 + ~1) >= 0.75 picks a single component. The second
        // column is slightly below sqrt(3)/2 so the ratio stays >= 0.75
        // after f32 rounding.
        let b = 0.866f32;
        let cube = cube_from_pixels(
            4,
            1,
            &[
                &[1.5, b, 0.0],
                &[1.5, -b, 0.0],
                &[-1.5, b, 0.0],
                &[-1.5, -b, 0.0],
            ],
        );
        let model = fit_pca(&cube, 0.75, None).unwrap();
        assert_eq!(model.kept(), 1);
        assert!((model.eigenvalues()[0] - 3.0).abs() < 1e-6);
        assert!(model.explained_ratio() >= 0.75);
    }

    #[test]
    fn target_one_keeps_all_bands_on_full_rank_data() {
        let cube = cube_from_pixels(
            4,
            1,
            &[
                &[1.0, 0.0, 0.0],
                &[0.0, 1.1, 0.0],
                &[0.0, 0.0, 1.2],
                &[0.3, 0.4, 0.5],
            ],
        );
        let model = fit_pca(&cube, 1.0, None).unwrap();
        assert_eq!(model.kept(), 3);
    }

    #[test]
    fn zero_variance_cube_degenerates_gracefully() {
        let cube = cube_from_pixels(2, 1, &[&[5.0, 5.0], &[5.0, 5.0]]);
        let model = fit_pca(&cube, 0.9, None).unwrap();
        assert_eq!(model.kept(), 1);
        assert_eq!(model.explained_ratio(), 1.0);
        let norm: f64 = model.component(0).iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn max_bands_caps_selection() {
        let cube = cube_from_pixels(
            4,
            1,
            &[
                &[1.0, 0.0, 0.0],
                &[0.0, 1.0, 0.0],
                &[0.0, 0.0, 1.0],
                &[0.5, 0.5, 0.5],
            ],
        );
        let model = fit_pca(&cube, 1.0, Some(2)).unwrap();
        assert_eq!(model.kept(), 2);
        assert!(model.explained_ratio() < 1.0);
    }

    #[test]
    fn components_are_orthonormal() {
        let pixels: Vec<Vec<f32>> = (0..40)
            .map(|i| {
                let t = i as f32 * 0.37;
                vec![t.sin(), (2.0 * t).cos(), t * 0.1, (t * 0.5).sin() + 0.2]
            })
            .collect();
        let refs: Vec<&[f32]> = pixels.iter().map(|p| p.as_slice()).collect();
        let cube = cube_from_pixels(8, 5, &refs);
        let model = fit_pca(&cube, 1.0, None).unwrap();
        for i in 0..model.kept() {
            for j in 0..model.kept() {
                let dot: f64 = model
                    .component(i)
                    .iter()
                    .zip(model.component(j))
                    .map(|(a, b)| a * b)
                    .sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-8, "({i},{j}) dot={dot}");
            }
        }
    }

    #[test]
    fn projected_band_variances_match_eigenvalues() {
        let pixels: Vec<Vec<f32>> = (0..60)
            .map(|i| {
                let t = i as f32 * 0.61;
                vec![
                    3.0 * t.sin(),
                    1.5 * (1.3 * t).cos(),
                    0.7 * (0.7 * t).sin() + 0.5 * t.cos(),
                ]
            })
            .collect();
        let refs: Vec<&[f32]> = pixels.iter().map(|p| p.as_slice()).collect();
        let cube = cube_from_pixels(10, 6, &refs);
        let model = fit_pca(&cube, 1.0, None).unwrap();
        let reduced = project(&cube, &model).unwrap();
        let n = reduced.pixel_count();
        for a in 0..model.kept() {
            let mean: f64 = (0..n).map(|p| reduced.pixel_at(p)[a] as f64).sum::<f64>() / n as f64;
            let var: f64 = (0..n)
                .map(|p| {
                    let d = reduced.pixel_at(p)[a] as f64 - mean;
                    d * d
                })
                .sum::<f64>()
                / (n - 1) as f64;
            let ev = model.eigenvalues()[a];
            assert!(
                (var - ev).abs() <= 1e-6 * ev.max(1e-12),
                "band {a}: var={var} ev={ev}"
            );
        }
    }

    #[test]
    fn mean_spectrum_projects_to_zero() {
        let pixels: Vec<Vec<f32>> = (0..20)
            .map(|i| vec![i as f32, (i * i) as f32 * 0.01])
            .collect();
        let refs: Vec<&[f32]> = pixels.iter().map(|p| p.as_slice()).collect();
        let cube = cube_from_pixels(5, 4, &refs);
        let model = fit_pca(&cube, 1.0, None).unwrap();
        let mean_px: Vec<f32> = model.mean().iter().map(|&m| m as f32).collect();
        let mean_cube = HsiCube::new(1, 1, 2, mean_px).unwrap();
        let proj = project(&mean_cube, &model).unwrap();
        for &v in proj.data() {
            assert!(v.abs() < 1e-4, "projected mean component {v}");
        }
    }

    #[test]
    fn full_projection_is_isometry_of_centered_spectra() {
        let pixels: Vec<Vec<f32>> = (0..30)
            .map(|i| {
                let t = i as f32;
                vec![t.sin(), (t * 0.3).cos(), t * 0.05]
            })
            .collect();
        let refs: Vec<&[f32]> = pixels.iter().map(|p| p.as_slice()).collect();
        let cube = cube_from_pixels(6, 5, &refs);
        let model = fit_pca(&cube, 1.0, None).unwrap();
        assert_eq!(model.kept(), 3);
        let reduced = project(&cube, &model).unwrap();
        for p in 0..cube.pixel_count() {
            let centered_sq: f64 = cube
                .pixel_at(p)
                .iter()
                .zip(model.mean())
                .map(|(&v, &m)| {
                    let d = v as f64 - m;
                    d * d
                })
                .sum();
            let proj_sq: f64 = reduced.pixel_at(p).iter().map(|&v| (v as f64) * (v as f64)).sum();
            assert!(
                (centered_sq.sqrt() - proj_sq.sqrt()).abs() < 1e-5,
                "pixel {p}: {centered_sq} vs {proj_sq}"
            );
        }
    }

    #[test]
    fn reconstruction_error_matches_dropped_variance() {
        let pixels: Vec<Vec<f32>> = (0..50)
            .map(|i| {
                let t = i as f64 * 0.41;
                vec![
                    (2.0 * t.sin()) as f32,
                    (0.8 * (1.7 * t).cos()) as f32,
                    (0.3 * (0.9 * t).sin() + 0.1 * t.cos()) as f32,
                ]
            })
            .collect();
        let refs: Vec<&[f32]> = pixels.iter().map(|p| p.as_slice()).collect();
        let cube = cube_from_pixels(10, 5, &refs);
        let model = fit_pca(&cube, 0.8, None).unwrap();
        assert!(model.kept() < 3);
        let reduced = project(&cube, &model).unwrap();

        let n = cube.pixel_count();
        let b = cube.bands();
        let mut total_residual = 0.0f64;
        for p in 0..n {
            let scores = reduced.pixel_at(p);
            for band in 0..b {
                let mut recon = model.mean()[band];
                for a in 0..model.kept() {
                    recon += scores[a] as f64 * model.component(a)[band];
                }
                let d = cube.pixel_at(p)[band] as f64 - recon;
                total_residual += d * d;
            }
        }
        let dropped = model.total_variance()
            - model.eigenvalues().iter().sum::<f64>();
        let expected = (n - 1) as f64 * dropped;
        assert!(
            (total_residual - expected).abs() <= 1e-6 * expected.max(1.0),
            "residual {total_residual} vs dropped variance {expected}"
        );
    }

    #[test]
    fn projection_invariant_to_pixel_order() {
        let pixels: Vec<Vec<f32>> = (0..24)
            .map(|i| {
                let t = i as f32 * 0.77;
                vec![t.sin() * 2.0, t.cos(), (t * 0.4).sin() * 0.3]
            })
            .collect();
        let refs: Vec<&[f32]> = pixels.iter().map(|p| p.as_slice()).collect();
        let cube = cube_from_pixels(6, 4, &refs);

        let mut shuffled = pixels.clone();
        shuffled.reverse();
        let refs2: Vec<&[f32]> = shuffled.iter().map(|p| p.as_slice()).collect();
        let cube2 = cube_from_pixels(6, 4, &refs2);

        let m1 = fit_pca(&cube, 1.0, None).unwrap();
        let m2 = fit_pca(&cube2, 1.0, None).unwrap();
        let p1 = project(&cube, &m1).unwrap();
        let p2 = project(&cube, &m2).unwrap();
        for (a, b) in p1.data().iter().zip(p2.data()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn band_mismatch_rejected() {
        let cube = cube_from_pixels(2, 1, &[&[1.0, 2.0], &[0.0, 1.0]]);
        let model = fit_pca(&cube, 1.0, None).unwrap();
        let other = cube_from_pixels(2, 1, &[&[1.0, 2.0, 3.0], &[0.0, 1.0, 2.0]]);
        assert!(matches!(
            project(&other, &model),
            Err(Error::Dimension(_))
        ));
    }
}
