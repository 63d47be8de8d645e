//! Seeded multi-method experiment sweeps and report emission.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bfqr::{BfqrPredictor, BinEdges, GroupBinQuantiles};
use crate::conformal::{conformity_records, CqrPredictor, GcqrPredictor, LcqrPredictor};
use crate::dataset::{
    generate_synthetic, load_csv, make_equal_mass_bins, split, CsvSchema, Dataset, GeneratorOptions,
};
use crate::error::{Error, Result};
use crate::interval::IntervalUnion;
use crate::metrics::{evaluate, EvaluationRecord, MetricsReport, TSettings, GAP_BINS};
use crate::optimizer::{init_betas, ObjectivePoint, OptimizerSettings, OptimizerState, TracePoint};
use crate::quantile_model::{FitOptions, QuantileModel};

/// Calibration method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "CQR")]
    Cqr,
    #[serde(rename = "GCQR")]
    Gcqr,
    #[serde(rename = "LCQR")]
    Lcqr,
    #[serde(rename = "BFQR")]
    Bfqr,
    /// Convex hull of the BFQR set.
    #[serde(rename = "BFQR*")]
    BfqrHull,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Cqr,
        Method::Gcqr,
        Method::Lcqr,
        Method::Bfqr,
        Method::BfqrHull,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Cqr => "CQR",
            Method::Gcqr => "GCQR",
            Method::Lcqr => "LCQR",
            Method::Bfqr => "BFQR",
            Method::BfqrHull => "BFQR*",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic {
        n: usize,
        #[serde(default)]
        generator: GeneratorOptions,
    },
    Csv {
        path: PathBuf,
        schema: CsvSchema,
    },
}

/// How the protected attribute enters the base model's features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupEncoding {
    /// Not a feature.
    None,
    /// One numeric column holding the group id.
    #[default]
    Numeric,
    /// `K - 1` indicator columns.
    Indicators,
}

/// Which points the optimizer measures widths on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveData {
    #[default]
    Test,
    Calibration,
}

impl FromStr for ObjectiveData {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "test" => Ok(Self::Test),
            "calibration" => Ok(Self::Calibration),
            other => Err(Error::Config(format!("unknown objective data `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSettings {
    /// Directory receiving `report.txt`, `report.json` and traces.
    pub dir: Option<PathBuf>,
    /// Write one optimizer trace CSV per seed.
    pub traces: bool,
    /// Directory for fitted base models, keyed by a hash of their inputs.
    pub model_cache: Option<PathBuf>,
}

/// A whole experiment in one serializable object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub alpha: f64,
    /// Calibration label bins `M`.
    pub bins: usize,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    /// Train / calibration / test ratios.
    pub split: [f64; 3],
    /// Quantile levels of the base model heads.
    pub levels: (f64, f64),
    pub group_encoding: GroupEncoding,
    pub edges: BinEdges,
    pub fit: FitOptions,
    pub optimizer: OptimizerSettings,
    pub optimize_on: ObjectiveData,
    pub t: TSettings,
    /// Evaluation bins of the mean max coverage gap.
    pub gap_bins: usize,
    pub output: OutputSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::Synthetic {
                n: 100_000,
                generator: GeneratorOptions::default(),
            },
            alpha: 0.1,
            bins: 20,
            methods: Method::ALL.to_vec(),
            seeds: (0..100).collect(),
            split: [3.0, 1.0, 1.0],
            levels: (0.05, 0.95),
            group_encoding: GroupEncoding::Numeric,
            edges: BinEdges::Open,
            fit: FitOptions::default(),
            optimizer: OptimizerSettings::default(),
            optimize_on: ObjectiveData::Test,
            t: TSettings::default(),
            gap_bins: GAP_BINS,
            output: OutputSettings::default(),
        }
    }
}

impl ExperimentConfig {
    /// Synthetic n = 20,000 with seeds 0..19.
    pub fn desk() -> Self {
        Self {
            dataset: DatasetSpec::Synthetic {
                n: 20_000,
                generator: GeneratorOptions::default(),
            },
            seeds: (0..20).collect(),
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.bins == 0 {
            return Err(Error::Config("bins must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds given".into()));
        }
        if self.gap_bins == 0 {
            return Err(Error::Config("gap_bins must be at least 1".into()));
        }
        let (lo, hi) = self.levels;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::Config(format!(
                "invalid quantile levels ({lo}, {hi})"
            )));
        }
        Ok(())
    }
}

/// Everything one seed produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub reports: BTreeMap<Method, MetricsReport>,
    /// Final BFQR coverage targets.
    pub betas: Option<Vec<f64>>,
    pub trace: Vec<TracePoint>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub message: String,
}

/// Mean and sample standard deviation over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let count = values.len();
        if count == 0 {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
                count,
            };
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        let std = if count < 2 {
            0.0
        } else {
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (count - 1) as f64).sqrt()
        };
        Self { mean, std, count }
    }

    pub fn scaled(self, factor: f64) -> Self {
        Self {
            mean: self.mean * factor,
            std: self.std * factor,
            count: self.count,
        }
    }
}

/// One method's metrics aggregated across seeds. Coverages are fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub marginal_coverage: Summary,
    pub group_coverage: Vec<Summary>,
    pub mean_width: Summary,
    pub mean_hull_width: Summary,
    pub mean_pieces: Summary,
    pub mean_max_gap: Summary,
    pub t: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateTable {
    pub rows: Vec<MethodSummary>,
    pub seeds_requested: usize,
    pub seeds_completed: usize,
    pub failures: Vec<SeedFailure>,
}

impl AggregateTable {
    pub fn from_runs(
        methods: &[Method],
        runs: &[SeedRun],
        requested: usize,
        failures: Vec<SeedFailure>,
    ) -> Self {
        let rows = methods
            .iter()
            .map(|&method| {
                let reports: Vec<&MetricsReport> =
                    runs.iter().filter_map(|r| r.reports.get(&method)).collect();
                let pick = |f: &dyn Fn(&MetricsReport) -> f64| {
                    Summary::of(&reports.iter().map(|r| f(r)).collect::<Vec<_>>())
                };
                let groups = reports
                    .iter()
                    .map(|r| r.group_coverage.len())
                    .max()
                    .unwrap_or(0);
                MethodSummary {
                    method,
                    marginal_coverage: pick(&|r| r.marginal_coverage),
                    group_coverage: (0..groups)
                        .map(|a| {
                            let v: Vec<f64> = reports
                                .iter()
                                .filter_map(|r| r.group_coverage.get(a).copied().flatten())
                                .collect();
                            Summary::of(&v)
                        })
                        .collect(),
                    mean_width: pick(&|r| r.mean_width),
                    mean_hull_width: pick(&|r| r.mean_hull_width),
                    mean_pieces: pick(&|r| r.mean_pieces),
                    mean_max_gap: pick(&|r| r.mean_max_gap),
                    t: pick(&|r| r.t.value),
                }
            })
            .collect();
        Self {
            rows,
            seeds_requested: requested,
            seeds_completed: runs.len(),
            failures,
        }
    }

    pub fn row(&self, method: Method) -> Option<&MethodSummary> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Aligned text table; coverage, gap and `T` are multiplied by 100.
    pub fn to_text(&self) -> String {
        let groups = self
            .rows
            .iter()
            .map(|r| r.group_coverage.len())
            .max()
            .unwrap_or(0);
        let cell = |s: Summary| format!("{:.2}±{:.2}", s.mean, s.std);
        let mut header = vec!["Method".to_string(), "Coverage".to_string()];
        header.extend((0..groups).map(|a| format!("Cov A={a}")));
        header.extend(["Width", "Hull", "Gap", "T"].map(String::from));
        let mut lines = vec![header];
        for r in &self.rows {
            let mut line = vec![
                r.method.to_string(),
                cell(r.marginal_coverage.scaled(100.0)),
            ];
            line.extend((0..groups).map(|a| {
                r.group_coverage
                    .get(a)
                    .map_or_else(|| "-".into(), |s| cell(s.scaled(100.0)))
            }));
            line.push(cell(r.mean_width));
            line.push(cell(r.mean_hull_width));
            line.push(cell(r.mean_max_gap.scaled(100.0)));
            line.push(cell(r.t.scaled(100.0)));
            lines.push(line);
        }
        let cols = lines[0].len();
        let widths: Vec<usize> = (0..cols)
            .map(|c| {
                lines
                    .iter()
                    .map(|l| l[c].chars().count())
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        for l in &lines {
            let padded: Vec<String> = l
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (s, &w))| {
                    let pad = w - s.chars().count();
                    if c == 0 {
                        format!("{s}{}", " ".repeat(pad))
                    } else {
                        format!("{}{s}", " ".repeat(pad))
                    }
                })
                .collect();
            out.push_str(padded.join("  ").trim_end());
            out.push('\n');
        }
        out.push_str(&format!(
            "seeds: {}/{} completed\n",
            self.seeds_completed, self.seeds_requested
        ));
        for f in &self.failures {
            out.push_str(&format!("seed {} failed: {}\n", f.seed, f.message));
        }
        out
    }
}

/// Result of [`run_experiment`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub table: AggregateTable,
    pub runs: Vec<SeedRun>,
}

impl ExperimentReport {
    pub fn succeeded(&self) -> bool {
        self.table.failures.is_empty()
    }
}

/// Runs every seed (concurrently) and aggregates in seed order.
///
/// A seed that fails is recorded in the table instead of aborting the sweep.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let shared = match &config.dataset {
        DatasetSpec::Csv { path, schema } => Some(load_csv(path, schema)?),
        DatasetSpec::Synthetic { .. } => None,
    };
    let outcomes: Vec<(u64, Result<SeedRun>)> = config
        .seeds
        .par_iter()
        .map(|&seed| (seed, run_seed(config, shared.as_ref(), seed)))
        .collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (seed, outcome) in outcomes {
        match outcome {
            Ok(run) => runs.push(run),
            Err(e) => {
                warn!("seed {seed} failed: {e}");
                failures.push(SeedFailure {
                    seed,
                    message: e.to_string(),
                });
            }
        }
    }
    let table = AggregateTable::from_runs(&config.methods, &runs, config.seeds.len(), failures);
    Ok(ExperimentReport {
        config: config.clone(),
        table,
        runs,
    })
}

/// One seed: data, split, base model, calibration, every method, metrics.
pub fn run_seed(config: &ExperimentConfig, shared: Option<&Dataset>, seed: u64) -> Result<SeedRun> {
    let data = match (&config.dataset, shared) {
        (_, Some(d)) => d.clone(),
        (DatasetSpec::Synthetic { n, generator }, None) => generate_synthetic(*n, seed, *generator),
        (DatasetSpec::Csv { path, schema }, None) => load_csv(path, schema)?,
    };
    let groups = data.group_count();
    let model_data = match config.group_encoding {
        GroupEncoding::None => data.clone(),
        GroupEncoding::Numeric => data.with_group_feature(),
        GroupEncoding::Indicators => data.with_group_indicators(),
    };
    let parts = split(&model_data, config.split, seed)?;
    let train = model_data.subset(&parts.train);
    let cal = model_data.subset(&parts.calibration);
    let test = model_data.subset(&parts.test);
    if cal.is_empty() || test.is_empty() {
        return Err(Error::EmptyInput("calibration or test split is empty"));
    }

    let fit = FitOptions { seed, ..config.fit };
    let model = cached_model(
        &train,
        config.levels,
        &fit,
        config.output.model_cache.as_deref(),
    )?;
    let cal_pred = model.predict_dataset(&cal)?;
    let test_pred = model.predict_dataset(&test)?;

    let partition = make_equal_mass_bins(cal.labels(), config.bins)?;
    let records = conformity_records(&cal_pred, cal.labels(), cal.groups(), &partition);
    let scores: Vec<f64> = records.iter().map(|r| r.score).collect();

    let wants = |m: Method| config.methods.contains(&m);
    let mut bfqr = None;
    let mut trace = Vec::new();
    if wants(Method::Bfqr) || wants(Method::BfqrHull) {
        let gbq = GroupBinQuantiles::build(&records, groups, config.bins)?;
        let objective = match config.optimize_on {
            ObjectiveData::Test => (&test_pred, test.groups()),
            ObjectiveData::Calibration => (&cal_pred, cal.groups()),
        };
        let points = objective
            .0
            .iter()
            .zip(objective.1)
            .map(|(&(q_lo, q_hi), &group)| ObjectivePoint { q_lo, q_hi, group })
            .collect();
        let init = init_betas(&records, &partition, config.alpha, None)?;
        let mut state = OptimizerState::new(
            init,
            gbq.clone(),
            partition.clone(),
            config.edges,
            points,
            config.alpha,
        )?;
        state.optimize(&config.optimizer);
        info!(
            "seed {seed}: optimizer took {} steps ({:?})",
            state.iteration(),
            state.stop_reason()
        );
        trace = state.trace().to_vec();
        bfqr = Some(BfqrPredictor::new(
            gbq,
            partition.clone(),
            state.into_betas(),
            config.edges,
        )?);
    }

    let t_settings = TSettings {
        seed: config.t.seed ^ seed,
        ..config.t
    };
    let mut reports = BTreeMap::new();
    for &method in &config.methods {
        let set_of: Box<dyn Fn(f64, f64, usize) -> Result<IntervalUnion>> = match method {
            Method::Cqr => {
                let p = CqrPredictor::calibrate(&scores, config.alpha)?;
                Box::new(move |lo, hi, _| Ok(p.interval(lo, hi)))
            }
            Method::Gcqr => {
                let p = GcqrPredictor::calibrate(&scores, cal.groups(), groups, config.alpha)?;
                Box::new(move |lo, hi, a| p.interval(lo, hi, a))
            }
            Method::Lcqr => {
                let p = LcqrPredictor::calibrate(&records, &partition, config.alpha, config.edges)?;
                Box::new(move |lo, hi, _| Ok(p.interval(lo, hi)))
            }
            Method::Bfqr => {
                let p = bfqr.clone().expect("BFQR predictor built above");
                Box::new(move |lo, hi, a| Ok(p.interval(lo, hi, a)))
            }
            Method::BfqrHull => {
                let p = bfqr.clone().expect("BFQR predictor built above");
                Box::new(move |lo, hi, a| Ok(p.hull(lo, hi, a)))
            }
        };
        let evaluation = test_pred
            .iter()
            .zip(test.labels())
            .zip(test.groups())
            .map(|((&(lo, hi), &y), &a)| Ok(EvaluationRecord::new(&set_of(lo, hi, a)?, a, y)))
            .collect::<Result<Vec<_>>>()?;
        let fallback = match (&bfqr, method) {
            (Some(p), Method::Bfqr | Method::BfqrHull) => p.quantiles().fallback_cells(),
            _ => 0,
        };
        reports.insert(
            method,
            evaluate(&evaluation, groups, config.gap_bins, &t_settings, fallback)?,
        );
    }
    Ok(SeedRun {
        seed,
        reports,
        betas: bfqr.map(|p| p.betas().values().to_vec()),
        trace,
    })
}

/// Hex SHA-256 of everything that determines a fitted base model.
pub fn model_key(train: &Dataset, levels: (f64, f64), fit: &FitOptions) -> String {
    let mut h = Sha256::new();
    h.update((train.len() as u64).to_le_bytes());
    h.update((train.feature_count() as u64).to_le_bytes());
    for v in train.features().iter().chain(train.labels()) {
        h.update(v.to_le_bytes());
    }
    for v in [levels.0, levels.1, fit.learning_rate] {
        h.update(v.to_le_bytes());
    }
    for v in [fit.iterations as u64, fit.batch_size as u64, fit.seed] {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn cached_model(
    train: &Dataset,
    levels: (f64, f64),
    fit: &FitOptions,
    cache: Option<&Path>,
) -> Result<QuantileModel> {
    let Some(dir) = cache else {
        return QuantileModel::fit_dataset(train, levels, fit);
    };
    let path = dir.join(format!("{}.model", model_key(train, levels, fit)));
    if path.exists() {
        return QuantileModel::load(&path);
    }
    let model = QuantileModel::fit_dataset(train, levels, fit)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    model.save(&path)?;
    Ok(model)
}

/// Machine-readable report: every aggregate in raw units and, for coverage,
/// gap and `T`, also multiplied by 100; plus the per-seed reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonReport {
    pub config: ExperimentConfig,
    pub seeds_requested: usize,
    pub seeds_completed: usize,
    pub failures: Vec<SeedFailure>,
    pub methods: Vec<JsonMethod>,
    pub runs: Vec<SeedRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonMethod {
    pub method: Method,
    pub raw: MethodSummary,
    pub marginal_coverage_x100: Summary,
    pub group_coverage_x100: Vec<Summary>,
    pub mean_max_gap_x100: Summary,
    pub t_x100: Summary,
}

impl JsonReport {
    pub fn new(report: &ExperimentReport) -> Self {
        let t = &report.table;
        Self {
            config: report.config.clone(),
            seeds_requested: t.seeds_requested,
            seeds_completed: t.seeds_completed,
            failures: t.failures.clone(),
            methods: t
                .rows
                .iter()
                .map(|r| JsonMethod {
                    method: r.method,
                    raw: r.clone(),
                    marginal_coverage_x100: r.marginal_coverage.scaled(100.0),
                    group_coverage_x100: r.group_coverage.iter().map(|s| s.scaled(100.0)).collect(),
                    mean_max_gap_x100: r.mean_max_gap.scaled(100.0),
                    t_x100: r.t.scaled(100.0),
                })
                .collect(),
            runs: report.runs.clone(),
        }
    }
}

/// Writes `report.txt`, `report.json` and, if enabled, `trace_seed<k>.csv`
/// into `dir`. Returns the written paths.
pub fn emit_report(report: &ExperimentReport, dir: &Path, traces: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let text = dir.join("report.txt");
    fs::write(&text, report.table.to_text()).map_err(|e| Error::io(&text, e))?;
    written.push(text);

    let json = dir.join("report.json");
    let body = serde_json::to_string_pretty(&JsonReport::new(report))?;
    fs::write(&json, body).map_err(|e| Error::io(&json, e))?;
    written.push(json);

    if traces {
        for run in report.runs.iter().filter(|r| !r.trace.is_empty()) {
            let path = dir.join(format!("trace_seed{}.csv", run.seed));
            write_trace(&path, &run.trace)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// `iteration,width,hull_width,dummy_bound` with a header row.
pub fn write_trace(path: &Path, trace: &[TracePoint]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for t in trace {
        w.serialize(t)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(methods: Vec<Method>, seeds: Vec<u64>) -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetSpec::Synthetic {
                n: 2000,
                generator: GeneratorOptions::default(),
            },
            methods,
            seeds,
            bins: 5,
            fit: FitOptions {
                iterations: 300,
                ..FitOptions::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(m.name().to_lowercase().parse::<Method>().unwrap(), m);
        }
        assert!("MVP".parse::<Method>().is_err());
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut c = ExperimentConfig::desk();
        c.methods.clear();
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::desk();
        c.alpha = 1.0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::desk();
        c.seeds.clear();
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::desk();
        c.bins = 0;
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::desk().validate().is_ok());
    }

    #[test]
    fn toml_round_trip() {
        let c = ExperimentConfig::desk();
        let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        let parsed = ExperimentConfig::from_toml(
            "alpha = 0.2\nmethods = [\"CQR\", \"BFQR*\"]\nseeds = [1, 2]\n[dataset]\nkind = \"synthetic\"\nn = 500\n",
        )
        .unwrap();
        assert_eq!(parsed.methods, vec![Method::Cqr, Method::BfqrHull]);
        assert_eq!(parsed.bins, 20);
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn single_seed_has_zero_std() {
        let report = run_experiment(&small(vec![Method::Cqr], vec![3])).unwrap();
        assert_eq!(report.table.rows.len(), 1);
        let row = report.table.row(Method::Cqr).unwrap();
        assert_eq!(row.marginal_coverage.std, 0.0);
        assert_eq!(row.marginal_coverage.count, 1);
    }

    #[test]
    fn deterministic_and_order_independent() {
        let c = small(vec![Method::Cqr, Method::Bfqr], vec![0, 1, 2]);
        let a = run_experiment(&c).unwrap();
        let b = run_experiment(&c).unwrap();
        assert_eq!(a, b);
        let json_a = serde_json::to_string(&JsonReport::new(&a)).unwrap();
        let json_b = serde_json::to_string(&JsonReport::new(&b)).unwrap();
        assert_eq!(json_a, json_b);
        // method selection does not change another method's numbers
        let alone = run_experiment(&small(vec![Method::Cqr], vec![0, 1, 2])).unwrap();
        assert_eq!(
            alone.runs[1].reports[&Method::Cqr],
            a.runs[1].reports[&Method::Cqr]
        );
    }

    #[test]
    fn summary_statistics() {
        let s = Summary::of(&[1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 1.0).abs() < 1e-12);
        assert_eq!(Summary::of(&[5.0]).std, 0.0);
    }

    #[test]
    fn model_cache_reuses_fits() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small(vec![Method::Cqr], vec![7]);
        c.output.model_cache = Some(dir.path().to_path_buf());
        let first = run_experiment(&c).unwrap();
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
        let second = run_experiment(&c).unwrap();
        assert_eq!(first.table, second.table);
    }
}
