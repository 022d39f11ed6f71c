//! Per-superpixel features: mean spectrum, adjacency-weighted
//! spectrum, and centroid position.
//!
//! The weighted spectrum blends the mean spectra of the 4-adjacent
//! superpixels with Gaussian weights on the squared mean-spectrum
//! distance, normalized within each neighbor set.

use crate::error::{Error, Result};
use crate::hsi_io::{HsiCube, SegMap};

#[derive(Debug, Clone)]
pub struct SuperpixelFeatures {
    /// Mean reduced spectrum per superpixel, length K'.
    pub mean: Vec<Vec<f64>>,
    /// Adjacency-weighted spectrum per superpixel, length K'.
    pub weighted: Vec<Vec<f64>>,
    /// Mean member pixel coordinates per superpixel, length K'.
    pub position: Vec<[f64; 2]>,
    /// Sorted indices of 4-adjacent superpixels, length K'.
    pub adjacency: Vec<Vec<usize>>,
    /// Bandwidth used for the adjacency weights.
    pub h: f64,
}

impl SuperpixelFeatures {
    /// Extracts all features. When `h` is `None` the bandwidth defaults
    /// to the median squared mean-spectrum distance over adjacent pairs.
    pub fn compute(reduced: &HsiCube, seg: &SegMap, h: Option<f64>) -> Result<Self> {
        if reduced.width() != seg.width() || reduced.height() != seg.height() {
            return Err(Error::Dimension(format!(
                "cube is {}x{} but segmentation is {}x{}",
                reduced.width(),
                reduced.height(),
                seg.width(),
                seg.height()
            )));
        }
        let mean = mean_features(reduced, seg);
        let adjacency = adjacency(seg);
        let h = match h {
            Some(h) if h > 0.0 => h,
            Some(h) => {
                return Err(Error::Parameter(format!(
                    "feature bandwidth h must be positive, got {h}"
                )))
            }
            None => default_bandwidth(&mean, &adjacency),
        };
        let weighted = weighted_features(&mean, &adjacency, h)?;
        let position = centroid_positions(seg);
        Ok(Self {
            mean,
            weighted,
            position,
            adjacency,
            h,
        })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Arithmetic mean of the reduced spectra over each superpixel.
pub fn mean_features(reduced: &HsiCube, seg: &SegMap) -> Vec<Vec<f64>> {
    let k = seg.superpixel_count();
    let a = reduced.bands();
    let mut sums = vec![vec![0.0f64; a]; k];
    let mut counts = vec![0usize; k];
    for p in 0..reduced.pixel_count() {
        let i = seg.assignment()[p] as usize;
        counts[i] += 1;
        for (s, &v) in sums[i].iter_mut().zip(reduced.pixel_at(p)) {
            *s += v as f64;
        }
    }
    for (sum, &count) in sums.iter_mut().zip(&counts) {
        for s in sum.iter_mut() {
            *s /= count as f64;
        }
    }
    sums
}

/// Superpixels i and j are adjacent iff some pixel of i 4-neighbors
/// some pixel of j. Lists are sorted ascending and exclude self.
pub fn adjacency(seg: &SegMap) -> Vec<Vec<usize>> {
    let k = seg.superpixel_count();
    let (w, h) = (seg.width(), seg.height());
    let mut sets = vec![std::collections::BTreeSet::new(); k];
    let mut link = |a: u32, b: u32| {
        if a != b {
            sets[a as usize].insert(b as usize);
            sets[b as usize].insert(a as usize);
        }
    };
    for y in 0..h {
        for x in 0..w {
            let here = seg.get(x, y);
            if x + 1 < w {
                link(here, seg.get(x + 1, y));
            }
            if y + 1 < h {
                link(here, seg.get(x, y + 1));
            }
        }
    }
    sets.into_iter().map(|s| s.into_iter().collect()).collect()
}

/// Median squared mean-spectrum distance over adjacent pairs, the
/// default bandwidth. Falls back to 1.0 when there are no pairs or the
/// median is zero.
pub fn default_bandwidth(means: &[Vec<f64>], adjacency: &[Vec<usize>]) -> f64 {
    let mut dists = Vec::new();
    for (i, neighbors) in adjacency.iter().enumerate() {
        for &j in neighbors {
            if j > i {
                dists.push(sq_dist(&means[i], &means[j]));
            }
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = dists[dists.len() / 2];
    if median > 0.0 {
        median
    } else {
        1.0
    }
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

/// Blends neighbor mean spectra with weights
/// `exp(-||m_j - m_i||^2 / h)` normalized over each neighbor set.
/// Superpixels without neighbors keep their own mean.
pub fn weighted_features(
    means: &[Vec<f64>],
    adjacency: &[Vec<usize>],
    h: f64,
) -> Result<Vec<Vec<f64>>> {
    if !(h > 0.0) {
        return Err(Error::Parameter(format!(
            "feature bandwidth h must be positive, got {h}"
        )));
    }
    let mut out = Vec::with_capacity(means.len());
    for (i, neighbors) in adjacency.iter().enumerate() {
        if neighbors.is_empty() {
            out.push(means[i].clone());
            continue;
        }
        let weights: Vec<f64> = neighbors
            .iter()
            .map(|&j| (-sq_dist(&means[j], &means[i]) / h).exp())
            .collect();
        let total: f64 = weights.iter().sum();
        let mut blended = vec![0.0f64; means[i].len()];
        for (&j, &wj) in neighbors.iter().zip(&weights) {
            let wn = wj / total;
            for (b, &m) in blended.iter_mut().zip(&means[j]) {
                *b += wn * m;
            }
        }
        out.push(blended);
    }
    Ok(out)
}

/// Mean member pixel coordinates per superpixel.
pub fn centroid_positions(seg: &SegMap) -> Vec<[f64; 2]> {
    let k = seg.superpixel_count();
    let w = seg.width();
    let mut sums = vec![[0.0f64; 2]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in seg.assignment().iter().enumerate() {
        let i = a as usize;
        counts[i] += 1;
        sums[i][0] += (p % w) as f64;
        sums[i][1] += (p / w) as f64;
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        s[0] /= c as f64;
        s[1] /= c as f64;
    }
    sums
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(w: usize, h: usize, bands: usize, data: Vec<f32>) -> HsiCube {
        HsiCube::new(w, h, bands, data).unwrap()
    }

    #[test]
    fn constant_cube_means_are_constant() {
        let c = cube(4, 2, 2, vec![3.5; 16]);
        let seg = SegMap::new(4, 2, vec![0, 0, 1, 1, 0, 0, 1, 1]).unwrap();
        let means = mean_features(&c, &seg);
        for m in means {
            assert_eq!(m, vec![3.5, 3.5]);
        }
    }

    #[test]
    fn two_pixel_mean() {
        let c = cube(2, 1, 2, vec![0.0, 2.0, 2.0, 0.0]);
        let seg = SegMap::new(2, 1, vec![0, 0]).unwrap();
        let means = mean_features(&c, &seg);
        assert_eq!(means[0], vec![1.0, 1.0]);
    }

    #[test]
    fn singleton_mean_is_own_spectrum() {
        let c = cube(2, 1, 2, vec![0.25, -1.5, 9.0, 4.0]);
        let seg = SegMap::new(2, 1, vec![0, 1]).unwrap();
        let means = mean_features(&c, &seg);
        assert_eq!(means[0], vec![0.25, -1.5]);
        assert_eq!(means[1], vec![9.0, 4.0]);
    }

    #[test]
    fn half_planes_are_mutually_adjacent() {
        let seg = SegMap::new(4, 2, vec![0, 0, 1, 1, 0, 0, 1, 1]).unwrap();
        let adj = adjacency(&seg);
        assert_eq!(adj[0], vec![1]);
        assert_eq!(adj[1], vec![0]);
    }

    #[test]
    fn single_superpixel_has_no_neighbors() {
        let seg = SegMap::new(3, 2, vec![0; 6]).unwrap();
        let adj = adjacency(&seg);
        assert!(adj[0].is_empty());
    }

    #[test]
    fn quadrants_have_two_neighbors_each() {
        let seg = SegMap::new(4, 4, vec![
            0, 0, 1, 1,
            0, 0, 1, 1,
            2, 2, 3, 3,
            2, 2, 3, 3,
        ])
        .unwrap();
        let adj = adjacency(&seg);
        assert_eq!(adj[0], vec![1, 2]);
        assert_eq!(adj[1], vec![0, 3]);
        assert_eq!(adj[2], vec![0, 3]);
        assert_eq!(adj[3], vec![1, 2]);
    }

    #[test]
    fn equal_neighbor_means_give_uniform_weights() {
        let means = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0]];
        let adj = vec![vec![1, 2, 3], vec![0], vec![0], vec![0]];
        let weighted = weighted_features(&means, &adj, 0.5).unwrap();
        assert!((weighted[0][0] - 1.0).abs() < 1e-12);
        assert!((weighted[0][1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_neighbor_weight_is_one() {
        let means = vec![vec![0.0], vec![7.0]];
        let adj = vec![vec![1], vec![0]];
        let weighted = weighted_features(&means, &adj, 2.0).unwrap();
        assert_eq!(weighted[0], vec![7.0]);
        assert_eq!(weighted[1], vec![0.0]);
    }

    #[test]
    fn hand_computed_two_thirds_one_third_weights() {
        // neighbors at squared distances 0 and h*ln(2): weights 2/3, 1/3
        let h = 0.8;
        let d = (h * (2.0f64).ln()).sqrt();
        let means = vec![vec![0.0], vec![0.0], vec![d]];
        let adj = vec![vec![1, 2], vec![0], vec![0]];
        let weighted = weighted_features(&means, &adj, h).unwrap();
        let expect = (2.0 / 3.0) * 0.0 + (1.0 / 3.0) * d;
        assert!((weighted[0][0] - expect).abs() < 1e-12);
    }

    #[test]
    fn weights_sum_to_one() {
        let means = vec![
            vec![0.1, 0.9],
            vec![0.4, 0.2],
            vec![0.8, 0.3],
            vec![0.2, 0.6],
        ];
        let adj = vec![vec![1, 2, 3], vec![0, 2], vec![0, 1], vec![0]];
        for (i, neighbors) in adj.iter().enumerate() {
            if neighbors.is_empty() {
                continue;
            }
            let raw: Vec<f64> = neighbors
                .iter()
                .map(|&j| (-sq_dist(&means[j], &means[i]) / 0.3).exp())
                .collect();
            let total: f64 = raw.iter().sum();
            let sum: f64 = raw.iter().map(|w| w / total).sum();
            assert!((sum - 1.0).abs() < 1e-9);
            for w in raw {
                assert!(w / total > 0.0);
            }
        }
    }

    #[test]
    fn nonpositive_bandwidth_rejected() {
        let means = vec![vec![0.0], vec![1.0]];
        let adj = vec![vec![1], vec![0]];
        assert!(matches!(
            weighted_features(&means, &adj, 0.0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn positions_basic_arithmetic() {
        // singleton at (3, 1) in a 4x2 grid
        let mut assignment = vec![0u32; 8];
        assignment[1 * 4 + 3] = 1;
        let seg = SegMap::new(4, 2, assignment).unwrap();
        let pos = centroid_positions(&seg);
        assert_eq!(pos[1], [3.0, 1.0]);
    }

    #[test]
    fn block_and_full_image_positions() {
        let seg = SegMap::new(2, 2, vec![0, 0, 0, 0]).unwrap();
        let pos = centroid_positions(&seg);
        assert_eq!(pos[0], [0.5, 0.5]);

        let seg = SegMap::new(5, 3, vec![0; 15]).unwrap();
        let pos = centroid_positions(&seg);
        assert_eq!(pos[0], [2.0, 1.0]);
    }

    #[test]
    fn translation_shifts_means_keeps_weights() {
        let data = vec![0.1f32, 0.4, 0.9, 0.3, 0.2, 0.8, 0.5, 0.6];
        let c1 = cube(4, 1, 2, data.clone());
        let shifted: Vec<f32> = data.iter().map(|v| v + 2.5).collect();
        let c2 = cube(4, 1, 2, shifted);
        let seg = SegMap::new(4, 1, vec![0, 0, 1, 1]).unwrap();
        let f1 = SuperpixelFeatures::compute(&c1, &seg, Some(0.7)).unwrap();
        let f2 = SuperpixelFeatures::compute(&c2, &seg, Some(0.7)).unwrap();
        for i in 0..2 {
            for b in 0..2 {
                assert!((f2.mean[i][b] - f1.mean[i][b] - 2.5).abs() < 1e-6);
                assert!((f2.weighted[i][b] - f1.weighted[i][b] - 2.5).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn isolated_superpixel_weighted_falls_back_to_mean() {
        let c = cube(2, 1, 1, vec![4.0, 4.0]);
        let seg = SegMap::new(2, 1, vec![0, 0]).unwrap();
        let features = SuperpixelFeatures::compute(&c, &seg, None).unwrap();
        assert_eq!(features.weighted[0], features.mean[0]);
        assert!(features.h > 0.0);
    }

    #[test]
    fn permuting_indices_permutes_outputs() {
        let data = vec![0.1f32, 0.9, 0.3, 0.7, 0.5, 0.2, 0.8, 0.4];
        let c = cube(4, 2, 1, data);
        let seg_a = SegMap::new(4, 2, vec![0, 0, 1, 1, 0, 0, 1, 1]).unwrap();
        let seg_b = SegMap::new(4, 2, vec![1, 1, 0, 0, 1, 1, 0, 0]).unwrap();
        let fa = SuperpixelFeatures::compute(&c, &seg_a, Some(1.0)).unwrap();
        let fb = SuperpixelFeatures::compute(&c, &seg_b, Some(1.0)).unwrap();
        assert_eq!(fa.mean[0], fb.mean[1]);
        assert_eq!(fa.mean[1], fb.mean[0]);
        assert_eq!(fa.weighted[0], fb.weighted[1]);
        assert_eq!(fa.position[0], fb.position[1]);
    }
}
