//! Confusion-matrix evaluation: overall accuracy, average accuracy and
//! Cohen's kappa, with seed exclusion and repeated-trial aggregation.
//!
//! The confusion matrix is stored (c+1) x (c+1) with index 0 reserved
//! for the unlabeled/unclassified id, so a pixel predicted as class 0
//! lands in column 0 and counts against overall accuracy. Row 0 stays
//! empty because unlabeled ground truth is never evaluated.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hsi_io::LabelMap;

#[derive(Debug, Clone)]
pub struct EvalReport {
    /// Number of ground-truth classes (the matrix is (classes+1)^2).
    pub classes: usize,
    /// Row-major counts; rows = ground truth, columns = prediction.
    pub confusion: Vec<u64>,
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    pub evaluated_pixels: u64,
    pub excluded_seed_pixels: u64,
    /// Classes with no evaluated pixel, skipped by the AA mean.
    pub skipped_classes: Vec<u32>,
}

impl EvalReport {
    /// Builds a report from a c x c confusion matrix over classes
    /// 1..=c (row-major, rows = ground truth).
    pub fn from_confusion(classes: usize, counts: &[u64]) -> Result<Self> {
        if classes == 0 || counts.len() != classes * classes {
            return Err(Error::Dimension(format!(
                "expected {classes}x{classes} counts, got {}",
                counts.len()
            )));
        }
        let side = classes + 1;
        let mut confusion = vec![0u64; side * side];
        for t in 0..classes {
            for p in 0..classes {
                confusion[(t + 1) * side + (p + 1)] = counts[t * classes + p];
            }
        }
        Self::finish(classes, confusion, 0)
    }

    fn finish(classes: usize, confusion: Vec<u64>, excluded_seed_pixels: u64) -> Result<Self> {
        let side = classes + 1;
        let total: u64 = confusion.iter().sum();
        if total == 0 {
            return Err(Error::EmptyEvaluationSet);
        }
        let n = total as f64;

        let mut diag = 0u64;
        for i in 0..side {
            diag += confusion[i * side + i];
        }
        let oa = diag as f64 / n;

        let mut p_e = 0.0f64;
        for l in 0..side {
            let row: u64 = (0..side).map(|p| confusion[l * side + p]).sum();
            let col: u64 = (0..side).map(|t| confusion[t * side + l]).sum();
            p_e += row as f64 * col as f64;
        }
        p_e /= n * n;
        let kappa = if (1.0 - p_e).abs() < f64::EPSILON {
            if oa >= 1.0 {
                1.0
            } else {
                0.0
            }
        } else {
            (oa - p_e) / (1.0 - p_e)
        };

        let mut recall_sum = 0.0;
        let mut recall_classes = 0usize;
        let mut skipped_classes = Vec::new();
        for t in 1..side {
            let row: u64 = (0..side).map(|p| confusion[t * side + p]).sum();
            if row == 0 {
                skipped_classes.push(t as u32);
                continue;
            }
            recall_sum += confusion[t * side + t] as f64 / row as f64;
            recall_classes += 1;
        }
        let aa = if recall_classes > 0 {
            recall_sum / recall_classes as f64
        } else {
            0.0
        };

        Ok(Self {
            classes,
            confusion,
            oa,
            aa,
            kappa,
            evaluated_pixels: total,
            excluded_seed_pixels,
            skipped_classes,
        })
    }

    /// Structured key: value representation.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("classes: {}\n", self.classes));
        s.push_str(&format!("evaluated_pixels: {}\n", self.evaluated_pixels));
        s.push_str(&format!(
            "excluded_seed_pixels: {}\n",
            self.excluded_seed_pixels
        ));
        s.push_str(&format!("oa: {:.6}\n", self.oa));
        s.push_str(&format!("aa: {:.6}\n", self.aa));
        s.push_str(&format!("kappa: {:.6}\n", self.kappa));
        if !self.skipped_classes.is_empty() {
            s.push_str(&format!(
                "skipped_classes: {}\n",
                self.skipped_classes
                    .iter()
                    .map(|c| c.to_string())
                    .collect::<Vec<_>>()
                    .join(" ")
            ));
        }
        s
    }
}

/// Evaluates a prediction against ground truth. The evaluation set is
/// every pixel with nonzero truth and zero seed; pixels predicted as 0
/// count as errors against their true class.
pub fn evaluate(pred: &LabelMap, truth: &LabelMap, seeds: &LabelMap) -> Result<EvalReport> {
    if pred.width() != truth.width()
        || pred.height() != truth.height()
        || seeds.width() != truth.width()
        || seeds.height() != truth.height()
    {
        return Err(Error::Dimension(format!(
            "prediction {}x{}, truth {}x{}, seeds {}x{} must all match",
            pred.width(),
            pred.height(),
            truth.width(),
            truth.height(),
            seeds.width(),
            seeds.height()
        )));
    }
    let classes = truth.class_count().max(pred.class_count()) as usize;
    if classes == 0 {
        return Err(Error::EmptyEvaluationSet);
    }
    let side = classes + 1;
    let mut confusion = vec![0u64; side * side];
    let mut excluded = 0u64;
    for ((&t, &p), &s) in truth
        .labels()
        .iter()
        .zip(pred.labels())
        .zip(seeds.labels())
    {
        if t == 0 {
            continue;
        }
        if s != 0 {
            excluded += 1;
            continue;
        }
        confusion[t as usize * side + p as usize] += 1;
    }
    EvalReport::finish(classes, confusion, excluded)
}

/// A sampled seed map plus the classes whose full support was taken
/// because it did not reach the requested count.
#[derive(Debug, Clone)]
pub struct SeedSample {
    pub map: LabelMap,
    pub clamped_classes: Vec<u32>,
}

/// Uniformly samples `per_class` ground-truth pixels per class without
/// replacement, reproducibly from `rng_seed`. Classes with fewer
/// pixels are taken whole and reported as clamped.
pub fn sample_seeds(truth: &LabelMap, per_class: usize, rng_seed: u64) -> Result<SeedSample> {
    let c = truth.class_count();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c as usize + 1];
    for (p, &l) in truth.labels().iter().enumerate() {
        if l > 0 {
            by_class[l as usize].push(p);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut map = LabelMap::zeros(truth.width(), truth.height());
    let mut clamped = Vec::new();
    for class in 1..=c {
        let pool = &by_class[class as usize];
        if pool.is_empty() {
            continue;
        }
        if pool.len() <= per_class {
            if pool.len() < per_class {
                clamped.push(class);
            }
            for &p in pool {
                map.labels_mut()[p] = class;
            }
            continue;
        }
        let chosen = rand::seq::index::sample(&mut rng, pool.len(), per_class);
        for idx in chosen.iter() {
            map.labels_mut()[pool[idx]] = class;
        }
    }
    Ok(SeedSample {
        map,
        clamped_classes: clamped,
    })
}

/// Mean and sample standard deviation (denominator R-1, zero for a
/// single trial) of each metric over repeated trials.
#[derive(Debug, Clone)]
pub struct TrialSummary {
    pub trials: usize,
    pub oa_mean: f64,
    pub oa_std: f64,
    pub aa_mean: f64,
    pub aa_std: f64,
    pub kappa_mean: f64,
    pub kappa_std: f64,
}

impl TrialSummary {
    pub fn to_text(&self) -> String {
        format!(
            "trials: {}\noa_mean: {:.6}\noa_std: {:.6}\naa_mean: {:.6}\naa_std: {:.6}\nkappa_mean: {:.6}\nkappa_std: {:.6}\n",
            self.trials,
            self.oa_mean,
            self.oa_std,
            self.aa_mean,
            self.aa_std,
            self.kappa_mean,
            self.kappa_std
        )
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values
        .iter()
        .map(|v| {
            let d = v - mean;
            d * d
        })
        .sum::<f64>()
        / (n - 1) as f64;
    (mean, var.sqrt())
}

pub fn summarize(reports: &[EvalReport]) -> Result<TrialSummary> {
    if reports.is_empty() {
        return Err(Error::Parameter("no reports to summarize".into()));
    }
    let oa: Vec<f64> = reports.iter().map(|r| r.oa).collect();
    let aa: Vec<f64> = reports.iter().map(|r| r.aa).collect();
    let kappa: Vec<f64> = reports.iter().map(|r| r.kappa).collect();
    let (oa_mean, oa_std) = mean_std(&oa);
    let (aa_mean, aa_std) = mean_std(&aa);
    let (kappa_mean, kappa_std) = mean_std(&kappa);
    Ok(TrialSummary {
        trials: reports.len(),
        oa_mean,
        oa_std,
        aa_mean,
        aa_std,
        kappa_mean,
        kappa_std,
    })
}

/// One CSV row per trial, with a header.
pub fn reports_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from("trial,oa,aa,kappa,evaluated_pixels,excluded_seed_pixels\n");
    for (t, r) in reports.iter().enumerate() {
        s.push_str(&format!(
            "{},{:.9},{:.9},{:.9},{},{}\n",
            t, r.oa, r.aa, r.kappa, r.evaluated_pixels, r.excluded_seed_pixels
        ));
    }
    s
}
