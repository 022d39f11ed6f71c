//! End-to-end pipeline orchestration and the flat key = value
//! configuration format.
//!
//! A run executes PCA, the log-covariance field, the density field,
//! segmentation, feature extraction and graph construction once, then
//! repeats seed sampling, propagation and evaluation per trial (trial
//! t samples with `rng_seed + t`). Artifacts land in the output
//! directory and every intermediate is loadable by its module's
//! reader.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::covfield;
use crate::dimred;
use crate::error::{Error, Result};
use crate::features::SuperpixelFeatures;
use crate::graph::{self, GraphParams};
use crate::hsi_io::{self, HsiCube, LabelMap};
use crate::lgc::{self, LgcParams};
use crate::metrics::{self, EvalReport, TrialSummary};
use crate::superpix::{self, DensityParams, SegParams};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub variance_target: f64,
    pub max_bands: Option<usize>,
    pub cov_window: usize,
    pub cov_epsilon_scale: f64,
    pub superpixels: usize,
    pub compactness: f64,
    pub max_iters: usize,
    pub density_lambda: f64,
    pub density_gmin: f64,
    pub density_smoothing: usize,
    pub h: Option<f64>,
    pub beta: f64,
    pub sigma_s: Option<f64>,
    pub sigma_l: Option<f64>,
    pub knn: usize,
    pub alpha: f64,
    pub lgc_tol: f64,
    pub lgc_max_iters: usize,
    pub labels_per_class: usize,
    pub trials: usize,
    pub rng_seed: u64,
    pub include_seeds: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            variance_target: 0.98,
            max_bands: None,
            cov_window: 5,
            cov_epsilon_scale: 1e-3,
            superpixels: 100,
            compactness: 10.0,
            max_iters: 10,
            density_lambda: 4.0,
            density_gmin: 0.5,
            density_smoothing: 5,
            h: None,
            beta: 0.9,
            sigma_s: None,
            sigma_l: None,
            knn: 20,
            alpha: 0.99,
            lgc_tol: 1e-8,
            lgc_max_iters: 5000,
            labels_per_class: 10,
            trials: 1,
            rng_seed: 7,
            include_seeds: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: String| Err(Error::Config(format!("{key}: {why}")));
        if !(self.variance_target > 0.0 && self.variance_target <= 1.0) {
            return bad(
                "variance_target",
                format!("must be in (0, 1], got {}", self.variance_target),
            );
        }
        if let Some(m) = self.max_bands {
            if m == 0 {
                return bad("max_bands", "must be at least 1".into());
            }
        }
        if self.cov_window < 3 || self.cov_window % 2 == 0 {
            return bad(
                "cov_window",
                format!("must be odd and >= 3, got {}", self.cov_window),
            );
        }
        if !(self.cov_epsilon_scale > 0.0) {
            return bad(
                "cov_epsilon_scale",
                format!("must be positive, got {}", self.cov_epsilon_scale),
            );
        }
        if self.superpixels == 0 {
            return bad("superpixels", "must be at least 1".into());
        }
        if !(self.compactness > 0.0) {
            return bad(
                "compactness",
                format!("must be positive, got {}", self.compactness),
            );
        }
        if self.max_iters == 0 {
            return bad("max_iters", "must be at least 1".into());
        }
        if !(self.density_lambda >= 0.0) {
            return bad(
                "density_lambda",
                format!("must be non-negative, got {}", self.density_lambda),
            );
        }
        if !(self.density_gmin > 0.0 && self.density_gmin <= 1.0) {
            return bad(
                "density_gmin",
                format!("must be in (0, 1], got {}", self.density_gmin),
            );
        }
        if self.density_smoothing == 0 || self.density_smoothing % 2 == 0 {
            return bad(
                "density_smoothing",
                format!("must be odd, got {}", self.density_smoothing),
            );
        }
        if let Some(h) = self.h {
            if !(h > 0.0) {
                return bad("h", format!("must be positive, got {h}"));
            }
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad("beta", format!("must be in [0, 1], got {}", self.beta));
        }
        for (key, v) in [("sigma_s", self.sigma_s), ("sigma_l", self.sigma_l)] {
            if let Some(s) = v {
                if !(s > 0.0) {
                    return bad(key, format!("must be positive, got {s}"));
                }
            }
        }
        if self.knn == 0 {
            return bad("knn", "must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha", format!("must be in (0, 1), got {}", self.alpha));
        }
        if !(self.lgc_tol > 0.0) {
            return bad(
                "lgc_tol",
                format!("must be positive, got {}", self.lgc_tol),
            );
        }
        if self.lgc_max_iters == 0 {
            return bad("lgc_max_iters", "must be at least 1".into());
        }
        if self.trials == 0 {
            return bad("trials", "must be at least 1".into());
        }
        Ok(())
    }
}

/// Parses a flat `key = value` configuration. `#` starts a comment,
/// unknown keys are rejected, and absent keys keep their defaults.
pub fn parse_config(path: &Path) -> Result<PipelineConfig> {
    let text = fs::read_to_string(path)?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<PipelineConfig> {
    let mut config = PipelineConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key = value", lineno + 1))
        })?;
        let key = key.trim();
        let value = value.trim();
        apply_key(&mut config, key, value)
            .map_err(|why| Error::Config(format!("{key}: {why}")))?;
    }
    config.validate()?;
    Ok(config)
}

fn apply_key(config: &mut PipelineConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    fn parse<T: std::str::FromStr>(value: &str) -> std::result::Result<T, String> {
        value
            .parse()
            .map_err(|_| format!("cannot parse {value:?}"))
    }
    match key {
        "variance_target" => config.variance_target = parse(value)?,
        "max_bands" => config.max_bands = Some(parse(value)?),
        "cov_window" => config.cov_window = parse(value)?,
        "cov_epsilon_scale" => config.cov_epsilon_scale = parse(value)?,
        "superpixels" => config.superpixels = parse(value)?,
        "compactness" => config.compactness = parse(value)?,
        "max_iters" => config.max_iters = parse(value)?,
        "density_lambda" => config.density_lambda = parse(value)?,
        "density_gmin" => config.density_gmin = parse(value)?,
        "density_smoothing" => config.density_smoothing = parse(value)?,
        "h" => config.h = Some(parse(value)?),
        "beta" => config.beta = parse(value)?,
        "sigma_s" => config.sigma_s = Some(parse(value)?),
        "sigma_l" => config.sigma_l = Some(parse(value)?),
        "knn" => config.knn = parse(value)?,
        "alpha" => config.alpha = parse(value)?,
        "lgc_tol" => config.lgc_tol = parse(value)?,
        "lgc_max_iters" => config.lgc_max_iters = parse(value)?,
        "labels_per_class" => config.labels_per_class = parse(value)?,
        "trials" => config.trials = parse(value)?,
        "rng_seed" => config.rng_seed = parse(value)?,
        "include_seeds" => config.include_seeds = parse(value)?,
        other => return Err(format!("unknown key {other:?}")),
    }
    Ok(())
}

/// Everything a pipeline run produces.
#[derive(Debug)]
pub struct PipelineOutcome {
    pub reports: Vec<EvalReport>,
    pub summary: TrialSummary,
    pub reduced_bands: usize,
    pub explained_ratio: f64,
    pub superpixel_count: usize,
    pub edge_count: usize,
    /// Warnings accumulated across stages (clamped seed classes,
    /// degenerate graphs).
    pub warnings: Vec<String>,
    /// Classification map of the last trial.
    pub last_prediction: LabelMap,
}

impl PipelineOutcome {
    pub fn report_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "reduced_bands: {}", self.reduced_bands);
        let _ = writeln!(s, "explained_ratio: {:.6}", self.explained_ratio);
        let _ = writeln!(s, "superpixels: {}", self.superpixel_count);
        let _ = writeln!(s, "graph_edges: {}", self.edge_count);
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        for (t, r) in self.reports.iter().enumerate() {
            let _ = writeln!(s, "--- trial {t}");
            s.push_str(&r.to_text());
        }
        let _ = writeln!(s, "--- summary");
        s.push_str(&self.summary.to_text());
        s
    }
}

/// Runs the full pipeline from files and writes artifacts to `out_dir`.
pub fn run_pipeline(
    config: &PipelineConfig,
    cube_path: &Path,
    truth_path: &Path,
    out_dir: &Path,
) -> Result<PipelineOutcome> {
    let cube = hsi_io::read_cube(cube_path).map_err(Error::in_stage("read cube"))?;
    let truth = hsi_io::read_label_map(truth_path, cube.width(), cube.height())
        .map_err(Error::in_stage("read truth"))?;
    run_pipeline_on(config, &cube, &truth, Some(out_dir))
}

/// Runs the pipeline on in-memory inputs; artifacts are written only
/// when `out_dir` is given.
pub fn run_pipeline_on(
    config: &PipelineConfig,
    cube: &HsiCube,
    truth: &LabelMap,
    out_dir: Option<&Path>,
) -> Result<PipelineOutcome> {
    config.validate()?;
    if truth.width() != cube.width() || truth.height() != cube.height() {
        return Err(Error::Dimension(format!(
            "truth map is {}x{} but cube is {}x{}",
            truth.width(),
            truth.height(),
            cube.width(),
            cube.height()
        )));
    }
    let classes = truth
        .validate_contiguous()
        .map_err(Error::in_stage("read truth"))?;
    if classes == 0 {
        return Err(Error::Stage {
            stage: "read truth",
            source: Box::new(Error::Parameter(
                "ground truth has no labeled pixels".into(),
            )),
        });
    }
    let mut warnings = Vec::new();

    let model = dimred::fit_pca(cube, config.variance_target, config.max_bands)
        .map_err(Error::in_stage("pca"))?;
    let reduced = dimred::project(cube, &model).map_err(Error::in_stage("pca"))?;

    let epsilon = covfield::epsilon_from_scale(&reduced, config.cov_epsilon_scale);
    let field = covfield::build_log_cov_field(&reduced, config.cov_window, epsilon)
        .map_err(Error::in_stage("covariance"))?;

    let density = superpix::content_density(
        &field,
        &DensityParams {
            smoothing: config.density_smoothing,
            lambda: config.density_lambda,
            g_min: config.density_gmin,
        },
    )
    .map_err(Error::in_stage("density"))?;

    let seg_result = superpix::segment(
        &field,
        config.superpixels,
        &density,
        &SegParams {
            compactness: config.compactness,
            max_iters: config.max_iters,
            tol: 1e-3,
        },
    )
    .map_err(Error::in_stage("segment"))?;
    let seg = &seg_result.seg;

    let features = SuperpixelFeatures::compute(&reduced, seg, config.h)
        .map_err(Error::in_stage("features"))?;

    let similarity = graph::build_graph(
        &features,
        &GraphParams {
            beta: config.beta,
            sigma_s: config.sigma_s,
            sigma_l: config.sigma_l,
            k: config.knn,
        },
    )
    .map_err(Error::in_stage("graph"))?;
    if similarity.is_degenerate() {
        warnings.push("similarity graph is degenerate (fewer than 2 superpixels)".into());
    }

    let lgc_params = LgcParams {
        alpha: config.alpha,
        tol: config.lgc_tol,
        max_iters: config.lgc_max_iters,
    };

    let mut reports = Vec::with_capacity(config.trials);
    let mut last: Option<(LabelMap, LabelMap, lgc::PropagationResult)> = None;
    for trial in 0..config.trials {
        let sample = metrics::sample_seeds(
            truth,
            config.labels_per_class,
            config.rng_seed.wrapping_add(trial as u64),
        )
        .map_err(Error::in_stage("seeds"))?;
        for class in &sample.clamped_classes {
            warnings.push(format!(
                "trial {trial}: class {class} has fewer than {} pixels, fully seeded",
                config.labels_per_class
            ));
        }
        let result = lgc::classify(&similarity, seg, &sample.map, classes as usize, &lgc_params)
            .map_err(Error::in_stage("classify"))?;
        if !result.propagation.converged {
            warnings.push(format!(
                "trial {trial}: propagation stopped at {} iterations with residual {:.3e}",
                result.propagation.iterations, result.propagation.residual
            ));
        }
        let eval_seeds = if config.include_seeds {
            LabelMap::zeros(truth.width(), truth.height())
        } else {
            sample.map.clone()
        };
        let report = metrics::evaluate(&result.pixel_labels, truth, &eval_seeds)
            .map_err(Error::in_stage("evaluate"))?;
        reports.push(report);
        last = Some((sample.map, eval_seeds, result));
    }
    let summary = metrics::summarize(&reports).map_err(Error::in_stage("evaluate"))?;
    let (_, _, last_result) = last.expect("at least one trial");

    let outcome = PipelineOutcome {
        reduced_bands: model.kept(),
        explained_ratio: model.explained_ratio(),
        superpixel_count: seg.superpixel_count(),
        edge_count: similarity.edges.len(),
        reports,
        summary,
        warnings,
        last_prediction: last_result.pixel_labels.clone(),
    };

    if let Some(dir) = out_dir {
        write_artifacts(dir, &outcome, seg, &similarity, &last_result)?;
    }
    Ok(outcome)
}

fn write_artifacts(
    dir: &Path,
    outcome: &PipelineOutcome,
    seg: &hsi_io::SegMap,
    similarity: &graph::SimilarityGraph,
    last: &lgc::PropagationResult,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let p = |name: &str| -> PathBuf { dir.join(name) };
    hsi_io::write_seg_map(seg, &p("segmentation.csv")).map_err(Error::in_stage("artifacts"))?;
    graph::write_graph_csv(similarity, &p("graph.csv")).map_err(Error::in_stage("artifacts"))?;

    let mut f_csv = String::new();
    let prop = &last.propagation;
    for i in 0..prop.node_count {
        let row: Vec<String> = prop.row(i).iter().map(|v| format!("{v:e}")).collect();
        f_csv.push_str(&row.join(","));
        f_csv.push('\n');
    }
    fs::write(p("f_matrix.csv"), f_csv)?;

    hsi_io::render_class_map(
        &last.pixel_labels,
        &hsi_io::default_palette(),
        &p("classification.ppm"),
    )
    .map_err(Error::in_stage("artifacts"))?;
    hsi_io::write_label_map(&last.pixel_labels, &p("classification.csv"))
        .map_err(Error::in_stage("artifacts"))?;

    fs::write(p("report.txt"), outcome.report_text())?;
    fs::write(p("report.csv"), metrics::reports_csv(&outcome.reports))?;
    Ok(())
}
