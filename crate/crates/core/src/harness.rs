//! Study orchestration: one replication runs generation, the three fits,
//! EAP scoring, the dimensionality battery, Q3, M2 and recovery. Studies fan
//! replications out over a thread pool and reduce them per condition.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{
    enumerate_conditions, replication_keys, Condition, GeneratorKind, ReplicationKey,
    SimulationDesign,
};
use crate::dimensionality::{dimensionality_battery, DimensionalityReport, DEFAULT_PA_ITERATIONS};
use crate::error::{IrtError, Result};
use crate::estimation::{
    compare_nested, eap_scores, fit_mml, make_grid, AbilityEstimates, FitSettings, IrtModel,
    ItemEstimates, ModelComparison, QuadratureGrid, DEFAULT_QUAD_BOUND, DEFAULT_QUAD_POINTS,
};
use crate::fit::{m2_statistic, yen_q3, M2Result, Q3Report, Q3Settings};
use crate::generators::{simulate_dataset, ResponseMatrix, SimRng, TrueParametersRecord};
use crate::recovery::{
    aggregate_condition, recovery_metrics, ConditionSummary, RecoveryMetrics, ReplicationOutcome,
    Tally,
};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub quad_points: usize,
    pub quad_bound: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Significance level for M2 violations and the nested comparison.
    pub alpha: f64,
    pub q3: Q3Settings,
    pub pa_iterations: usize,
    /// Report intercepts in the difficulty slot and pair them with the drawn
    /// `b` values.
    pub intercept_as_difficulty: bool,
    pub keep_data: bool,
}

impl Default for Settings {
    fn default() -> Self {
        let fit = FitSettings::default();
        Settings {
            quad_points: DEFAULT_QUAD_POINTS,
            quad_bound: DEFAULT_QUAD_BOUND,
            tol: fit.tol,
            max_iter: fit.max_iter,
            alpha: DEFAULT_ALPHA,
            q3: Q3Settings::default(),
            pa_iterations: DEFAULT_PA_ITERATIONS,
            intercept_as_difficulty: false,
            keep_data: false,
        }
    }
}

impl Settings {
    pub fn validate(&self) -> Result<()> {
        make_grid(self.quad_points, self.quad_bound)?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(IrtError::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(IrtError::Config("tolerance and iteration cap must be positive".into()));
        }
        if self.pa_iterations < 20 {
            return Err(IrtError::Config(format!(
                "parallel analysis needs at least 20 iterations, got {}",
                self.pa_iterations
            )));
        }
        if !(self.q3.threshold >= 0.0 && self.q3.threshold < 1.0) {
            return Err(IrtError::Config(format!(
                "Q3 threshold must lie in [0, 1), got {}",
                self.q3.threshold
            )));
        }
        Ok(())
    }

    pub fn fit_settings(&self) -> FitSettings {
        FitSettings {
            tol: self.tol,
            max_iter: self.max_iter,
            report_intercept_as_difficulty: self.intercept_as_difficulty,
        }
    }

    pub fn grid(&self) -> Result<QuadratureGrid> {
        make_grid(self.quad_points, self.quad_bound)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationArtifact {
    pub key: ReplicationKey,
    pub generator: GeneratorKind,
    pub n_items: usize,
    pub n_persons: usize,
    pub true_parameters: Option<TrueParametersRecord>,
    /// SHA-256 of the response matrix in CSV form.
    pub data_digest: Option<String>,
    /// 1PL, 2PL and 3PL fits, in that order, for those that succeeded.
    pub fits: Vec<ItemEstimates>,
    pub ability: Option<AbilityEstimates>,
    pub dimensionality: Option<DimensionalityReport>,
    pub comparison: Option<ModelComparison>,
    pub q3: Option<Q3Report>,
    pub m2: Option<M2Result>,
    pub recovery: Option<RecoveryMetrics>,
    pub warnings: Vec<String>,
    /// Reason the replication produced no recovery metrics.
    pub failure: Option<String>,
    #[serde(skip)]
    pub data: Option<ResponseMatrix>,
}

impl ReplicationArtifact {
    fn new(key: &ReplicationKey, cond: &Condition) -> Self {
        ReplicationArtifact {
            key: key.clone(),
            generator: cond.generator,
            n_items: cond.n_items,
            n_persons: cond.n_persons,
            true_parameters: None,
            data_digest: None,
            fits: Vec::new(),
            ability: None,
            dimensionality: None,
            comparison: None,
            q3: None,
            m2: None,
            recovery: None,
            warnings: Vec::new(),
            failure: None,
            data: None,
        }
    }

    pub fn fit(&self, model: IrtModel) -> Option<&ItemEstimates> {
        self.fits.iter().find(|f| f.model == model)
    }

    /// Inputs to the condition summary; `None` for a failed replication.
    pub fn outcome(&self) -> Option<ReplicationOutcome> {
        Some(ReplicationOutcome {
            metrics: self.recovery?,
            efa_factors: self.dimensionality.as_ref().map(|d| d.efa_factors),
            pa_factors: self.dimensionality.as_ref().map(|d| d.pa.retained),
            q3_violation: self.q3.as_ref().map(Q3Report::has_violation),
            m2_p_value: self.m2.map(|m| m.p_value),
            preferred_model: self.comparison.as_ref().map(|c| c.preferred),
        })
    }
}

/// Runs one replication. Failures are recorded in the artifact, never raised.
pub fn run_replication(
    key: &ReplicationKey,
    cond: &Condition,
    design: &SimulationDesign,
    settings: &Settings,
) -> ReplicationArtifact {
    let mut art = ReplicationArtifact::new(key, cond);
    if let Err(e) = replicate(&mut art, key, cond, design, settings) {
        art.failure = Some(e.to_string());
    }
    if !settings.keep_data {
        art.data = None;
    }
    art
}

fn replicate(
    art: &mut ReplicationArtifact,
    key: &ReplicationKey,
    cond: &Condition,
    design: &SimulationDesign,
    settings: &Settings,
) -> Result<()> {
    let grid = settings.grid()?;
    let fit_settings = settings.fit_settings();
    let (params, data) = simulate_dataset(cond, design, key.seed)?;
    art.true_parameters = Some(TrueParametersRecord::new(&params, key.seed));
    art.data_digest = Some(data.digest());

    let constant = data.constant_columns();
    if !constant.is_empty() {
        art.warnings.push(format!(
            "items {constant:?} have constant responses; their parameters are held at boundary values"
        ));
    }

    for model in [IrtModel::OnePL, IrtModel::TwoPL, IrtModel::ThreePL] {
        match fit_mml(&data, model, &grid, &fit_settings) {
            Ok(f) => {
                if !f.converged {
                    art.warnings.push(format!("{model} fit stopped at the iteration cap"));
                }
                art.fits.push(f);
            }
            Err(e) if model == IrtModel::TwoPL => return Err(e),
            Err(e) => art.warnings.push(format!("{model} fit failed: {e}")),
        }
    }
    let two = art
        .fit(IrtModel::TwoPL)
        .cloned()
        .expect("2PL fit present after successful estimation");

    art.recovery = Some(recovery_metrics(&two, &params, design, settings.intercept_as_difficulty)?);

    if art.fits.len() == 3 {
        match compare_nested(&art.fits, settings.alpha) {
            Ok(c) => {
                art.warnings.extend(c.notes.iter().map(|n| format!("nested comparison: {n}")));
                art.comparison = Some(c);
            }
            Err(e) => art.warnings.push(format!("nested comparison failed: {e}")),
        }
    }

    // parallel analysis draws from a separate stream of the replication seed
    let mut rng = SimRng::seed_from_u64(key.seed);
    rng.set_stream(1);
    match dimensionality_battery(&data, settings.pa_iterations, &mut rng) {
        Ok(d) => {
            art.warnings.extend(d.warnings.iter().cloned());
            art.dimensionality = Some(d);
        }
        Err(e) => art.warnings.push(format!("dimensionality battery failed: {e}")),
    }

    match eap_scores(&data, &two, &grid) {
        Ok(ab) => {
            match yen_q3(&data, &two, &ab, &settings.q3) {
                Ok(q) => {
                    if !q.undefined_pairs.is_empty() {
                        art.warnings.push(format!(
                            "Q3 undefined for {} item pairs with constant residuals",
                            q.undefined_pairs.len()
                        ));
                    }
                    art.q3 = Some(q);
                }
                Err(e) => art.warnings.push(format!("Q3 failed: {e}")),
            }
            art.ability = Some(ab);
        }
        Err(e) => art.warnings.push(format!("EAP scoring failed: {e}")),
    }

    match m2_statistic(&data, &two, &grid) {
        Ok(m) => {
            if m.pseudo_inverse {
                art.warnings.push("M2 used a pseudo-inverse of the margin covariance".into());
            }
            art.m2 = Some(m);
        }
        Err(e) => art.warnings.push(format!("M2 failed: {e}")),
    }

    art.data = Some(data);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub design_digest: String,
    pub master_seed: u64,
    pub toolkit_version: String,
    pub design: SimulationDesign,
    pub settings: Settings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub generator: GeneratorKind,
    pub summary: ConditionSummary,
}

/// Per-condition summaries sorted by (generator, K, N). Contains no timing,
/// so equal inputs give equal reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub metadata: ReportMetadata,
    pub rows: Vec<ReportRow>,
}

impl StudyReport {
    /// Any condition lost more than 20% of its replications.
    pub fn has_unreliable_rows(&self) -> bool {
        self.rows.iter().any(|r| r.summary.unreliable)
    }

    pub fn row(&self, condition_id: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.summary.condition_id == condition_id)
    }
}

pub struct StudyRun {
    pub report: StudyReport,
    /// In condition-major, replication order.
    pub artifacts: Vec<ReplicationArtifact>,
    pub elapsed_seconds: f64,
}

fn failed_summary(cond: &Condition, failed: usize) -> ConditionSummary {
    ConditionSummary {
        condition_id: cond.condition_id.clone(),
        n_items: cond.n_items,
        n_persons: cond.n_persons,
        replications: failed,
        failed,
        unreliable: true,
        efa_factors: Tally::from_values([]),
        pa_factors: Tally::from_values([]),
        q3_violating_datasets: 0,
        m2_tested: 0,
        m2_violations: 0,
        m2_violation_pct: 0.0,
        preferred_model: Tally::from_values([]),
        total_oob_a: 0,
        total_oob_b: 0,
        oob_a_pct: 0.0,
        oob_b_pct: 0.0,
        mean_bias_a: 0.0,
        mean_bias_b: 0.0,
        mean_rmse_a: 0.0,
        mean_rmse_b: 0.0,
    }
}

/// Reduces artifacts into one row per design condition.
pub fn aggregate_study(
    design: &SimulationDesign,
    settings: &Settings,
    artifacts: &[ReplicationArtifact],
) -> Result<StudyReport> {
    let mut rows = Vec::new();
    for cond in enumerate_conditions(design)? {
        let mine: Vec<&ReplicationArtifact> = artifacts
            .iter()
            .filter(|a| a.key.condition_id == cond.condition_id)
            .collect();
        if mine.is_empty() {
            return Err(IrtError::Input(format!(
                "no replication artifacts for condition {}",
                cond.condition_id
            )));
        }
        let outcomes: Vec<ReplicationOutcome> = mine.iter().filter_map(|a| a.outcome()).collect();
        let failed = mine.len() - outcomes.len();
        let summary = if outcomes.is_empty() {
            failed_summary(&cond, failed)
        } else {
            aggregate_condition(&cond.condition_id, cond.n_persons, &outcomes, failed, settings.alpha)?
        };
        rows.push(ReportRow {
            generator: cond.generator,
            summary,
        });
    }
    Ok(StudyReport {
        metadata: ReportMetadata {
            design_digest: design.digest(),
            master_seed: design.master_seed,
            toolkit_version: TOOLKIT_VERSION.to_string(),
            design: design.clone(),
            settings: settings.clone(),
        },
        rows,
    })
}

/// Runs every replication of the design on `parallelism` worker threads.
/// Results do not depend on the thread count.
pub fn run_study(design: &SimulationDesign, settings: &Settings, parallelism: usize) -> Result<StudyRun> {
    settings.validate()?;
    let keys = replication_keys(design)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| IrtError::Config(format!("cannot build thread pool: {e}")))?;
    let start = std::time::Instant::now();
    let artifacts: Vec<ReplicationArtifact> = pool.install(|| {
        keys.par_iter()
            .map(|(cond, key)| run_replication(key, cond, design, settings))
            .collect()
    });
    let elapsed_seconds = start.elapsed().as_secs_f64();
    let report = aggregate_study(design, settings, &artifacts)?;
    Ok(StudyRun {
        report,
        artifacts,
        elapsed_seconds,
    })
}

pub const SUMMARY_COLUMNS: [&str; 21] = [
    "condition_id",
    "generator",
    "n_items",
    "n_persons",
    "replications",
    "failed",
    "unreliable",
    "efa_factors",
    "pa_factors",
    "q3_violating_datasets",
    "m2_violations",
    "m2_violation_pct",
    "nested_model_fit",
    "oob_a",
    "oob_a_pct",
    "oob_b",
    "oob_b_pct",
    "mean_bias_a",
    "mean_bias_b",
    "mean_rmse_a",
    "mean_rmse_b",
];

/// Three decimals, without a sign on zero.
fn fmt3(x: f64) -> String {
    let s = format!("{x:.3}");
    if s == "-0.000" { "0.000".into() } else { s }
}

fn fmt_pct(x: f64) -> String {
    format!("{:.0}", x.round() + 0.0)
}

fn summary_record(row: &ReportRow) -> Vec<String> {
    let s = &row.summary;
    let none_ok = s.failed == s.replications;
    let metric = |x: f64| if none_ok { "NA".to_string() } else { fmt3(x) };
    let pct = |x: f64| if none_ok { "NA".to_string() } else { fmt_pct(x) };
    vec![
        s.condition_id.clone(),
        row.generator.to_string(),
        s.n_items.to_string(),
        s.n_persons.to_string(),
        s.replications.to_string(),
        s.failed.to_string(),
        s.unreliable.to_string(),
        s.efa_factors.to_string(),
        s.pa_factors.to_string(),
        s.q3_violating_datasets.to_string(),
        s.m2_violations.to_string(),
        if s.m2_tested == 0 { "NA".into() } else { fmt_pct(s.m2_violation_pct) },
        s.preferred_model.to_string(),
        s.total_oob_a.to_string(),
        pct(s.oob_a_pct),
        s.total_oob_b.to_string(),
        pct(s.oob_b_pct),
        metric(s.mean_bias_a),
        metric(s.mean_bias_b),
        metric(s.mean_rmse_a),
        metric(s.mean_rmse_b),
    ]
}

/// Summary table as CSV: bias and RMSE to 3 decimals, whole percents.
pub fn summary_csv(report: &StudyReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| IrtError::Input(format!("CSV encoding failed: {e}"));
    w.write_record(SUMMARY_COLUMNS).map_err(csv_err)?;
    for row in &report.rows {
        w.write_record(summary_record(row)).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| IrtError::Input(format!("CSV encoding failed: {e}")))?;
    Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| IrtError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| IrtError::io(path, e))
}

pub fn artifact_path(out_dir: &Path, key: &ReplicationKey) -> PathBuf {
    out_dir
        .join("replications")
        .join(&key.condition_id)
        .join(format!("rep-{:04}.json", key.rep_index))
}

pub fn data_path(out_dir: &Path, key: &ReplicationKey) -> PathBuf {
    out_dir
        .join("data")
        .join(&key.condition_id)
        .join(format!("rep-{:04}.csv", key.rep_index))
}

/// Writes `summary.csv`, `manifest.json`, one JSON file per replication and,
/// for artifacts that carry data, the response matrices. Returns the paths
/// written.
pub fn write_reports(
    report: &StudyReport,
    artifacts: &[ReplicationArtifact],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let summary = out_dir.join("summary.csv");
    write_file(&summary, summary_csv(report)?.as_bytes())?;
    written.push(summary);
    let manifest = out_dir.join("manifest.json");
    write_file(&manifest, &serde_json::to_vec_pretty(report)?)?;
    written.push(manifest);
    for art in artifacts {
        let path = artifact_path(out_dir, &art.key);
        write_file(&path, &serde_json::to_vec(art)?)?;
        written.push(path);
        if let Some(data) = &art.data {
            let path = data_path(out_dir, &art.key);
            write_file(&path, data.to_csv().as_bytes())?;
            written.push(path);
        }
    }
    Ok(written)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Timing {
    pub wall_clock_seconds: f64,
    pub parallelism: usize,
}

/// Run timing, kept apart from the reproducible report files.
pub fn write_timing(out_dir: &Path, timing: &Timing) -> Result<PathBuf> {
    let path = out_dir.join("timing.json");
    write_file(&path, &serde_json::to_vec_pretty(timing)?)?;
    Ok(path)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| IrtError::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| IrtError::Input(format!("{}: {e}", path.display())))
}

/// Loads the manifest and every replication artifact under `dir`, sorted by
/// condition and replication index.
pub fn load_study(dir: &Path) -> Result<(StudyReport, Vec<ReplicationArtifact>)> {
    let report: StudyReport = read_json(&dir.join("manifest.json"))?;
    let rep_dir = dir.join("replications");
    let mut artifacts = Vec::new();
    for cond in enumerate_conditions(&report.metadata.design)? {
        let cdir = rep_dir.join(&cond.condition_id);
        let entries = fs::read_dir(&cdir).map_err(|e| IrtError::io(&cdir, e))?;
        let mut paths = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| IrtError::io(&cdir, e))?.path();
            if path.extension().is_some_and(|x| x == "json") {
                paths.push(path);
            }
        }
        paths.sort();
        for path in paths {
            artifacts.push(read_json::<ReplicationArtifact>(&path)?);
        }
    }
    Ok((report, artifacts))
}

/// Re-aggregates the artifacts persisted under `dir`.
pub fn reaggregate(dir: &Path) -> Result<StudyReport> {
    let (report, artifacts) = load_study(dir)?;
    aggregate_study(&report.metadata.design, &report.metadata.settings, &artifacts)
}

/// Full diagnostic battery for one dataset without known truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n_items: usize,
    pub n_persons: usize,
    pub data_digest: String,
    pub fits: Vec<ItemEstimates>,
    pub comparison: Option<ModelComparison>,
    pub dimensionality: Option<DimensionalityReport>,
    pub q3: Option<Q3Report>,
    pub m2: Option<M2Result>,
    pub warnings: Vec<String>,
}

/// Runs the fits, nested comparison, dimensionality battery, Q3 and M2 on
/// `data`. `seed` drives the parallel-analysis permutations.
pub fn validate_dataset(data: &ResponseMatrix, settings: &Settings, seed: u64) -> Result<ValidationReport> {
    settings.validate()?;
    let key = ReplicationKey {
        condition_id: "external".into(),
        rep_index: 0,
        seed,
    };
    let cond = Condition::new(GeneratorKind::A3, data.n_items(), data.n_persons());
    let mut art = ReplicationArtifact::new(&key, &cond);
    let grid = settings.grid()?;
    let fit_settings = settings.fit_settings();
    let constant = data.constant_columns();
    if !constant.is_empty() {
        art.warnings.push(format!(
            "items {constant:?} have constant responses; their parameters are held at boundary values"
        ));
    }
    for model in [IrtModel::OnePL, IrtModel::TwoPL, IrtModel::ThreePL] {
        match fit_mml(data, model, &grid, &fit_settings) {
            Ok(f) => art.fits.push(f),
            Err(e) if model == IrtModel::TwoPL => return Err(e),
            Err(e) => art.warnings.push(format!("{model} fit failed: {e}")),
        }
    }
    let two = art.fit(IrtModel::TwoPL).cloned().expect("2PL fit present");
    if art.fits.len() == 3 {
        art.comparison = compare_nested(&art.fits, settings.alpha)
            .map_err(|e| art.warnings.push(format!("nested comparison failed: {e}")))
            .ok();
    }
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(1);
    art.dimensionality = dimensionality_battery(data, settings.pa_iterations, &mut rng)
        .map_err(|e| art.warnings.push(format!("dimensionality battery failed: {e}")))
        .ok();
    match eap_scores(data, &two, &grid) {
        Ok(ab) => {
            art.q3 = yen_q3(data, &two, &ab, &settings.q3)
                .map_err(|e| art.warnings.push(format!("Q3 failed: {e}")))
                .ok();
        }
        Err(e) => art.warnings.push(format!("EAP scoring failed: {e}")),
    }
    art.m2 = m2_statistic(data, &two, &grid)
        .map_err(|e| art.warnings.push(format!("M2 failed: {e}")))
        .ok();
    if let Some(d) = &art.dimensionality {
        art.warnings.extend(d.warnings.iter().cloned());
    }
    Ok(ValidationReport {
        n_items: data.n_items(),
        n_persons: data.n_persons(),
        data_digest: data.digest(),
        fits: art.fits,
        comparison: art.comparison,
        dimensionality: art.dimensionality,
        q3: art.q3,
        m2: art.m2,
        warnings: art.warnings,
    })
}
