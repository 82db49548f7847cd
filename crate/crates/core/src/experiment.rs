//! Configuration file handling and the train / eval / sweep / report runners.
//!
//! Every runner writes its tabular output as CSV with a header row and drops a
//! resolved copy of the configuration next to it, so a run directory is
//! self-describing and can be replayed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{PszError, Result};
use crate::eval::{anchor_average, compare, improvement, multi_anchor_run, sample_anchors, Aggregation, AveragedMetric, FreeFieldAtfs, GeneratorPair, ImprovementKind, ImprovementRow, NeighborhoodConfig, NeighborhoodReport, SummaryMode, METRIC_EPSILON};
use crate::filters::FilterDims;
use crate::generator::{load_checkpoint, AdamConfig, ArchConfig, GeneratorParams};
use crate::geometry::{Band, Point2, SceneConfig, StackedCoords};
use crate::objectives::LossWeights;
use crate::training::{train_with_progress, write_log_csv, GridConfig, LogRow, TrainConfig};

/// Environment variable that overrides `io.output_dir`.
pub const OUTPUT_DIR_ENV: &str = "PSZ_OUTPUT_DIR";

pub const POINTS_CSV: &str = "points.csv";
pub const SUMMARIES_CSV: &str = "summaries.csv";
pub const IMPROVEMENTS_CSV: &str = "improvements.csv";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const RESOLVED_CONFIG: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub sample_rate: f64,
    pub fft_length: usize,
    /// Bands that get a generator.
    pub bands: Vec<Band>,
    pub woofer_taps: usize,
    pub tweeter_taps: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            sample_rate: 16_000.0,
            fft_length: 1024,
            bands: vec![Band::Woofer],
            woofer_taps: 128,
            tweeter_taps: 64,
        }
    }
}

impl GridSection {
    pub fn taps(&self, band: Band) -> usize {
        match band {
            Band::Woofer => self.woofer_taps,
            Band::Tweeter => self.tweeter_taps,
        }
    }

    pub fn grid(&self) -> GridConfig {
        GridConfig {
            sample_rate: self.sample_rate,
            fft_length: self.fft_length,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub steps: usize,
    pub batch_size: usize,
    pub log_every: usize,
    pub loss: LossWeights,
    pub optimizer: AdamConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 32,
            log_every: 50,
            loss: LossWeights::default(),
            optimizer: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub r_max: f64,
    pub spacing: f64,
    pub mode: SummaryMode,
    pub anchors: usize,
    /// Seed of the anchor draw; falls back to `io.seed`.
    pub anchor_seed: Option<u64>,
    /// One-based listener numbers reported in simulation mode.
    pub listeners: Vec<usize>,
    pub meas_spacings: Vec<f64>,
    /// Listener-2 positions of the measurement-style anchors.
    pub meas_anchors: Vec<[f64; 2]>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            r_max: 0.10,
            spacing: 0.01,
            mode: SummaryMode::Cvar10,
            anchors: 25,
            anchor_seed: None,
            listeners: vec![2],
            meas_spacings: vec![0.02, 0.05, 0.10],
            meas_anchors: vec![[0.10, 0.95], [0.30, 1.15], [0.50, 1.35]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub lambdas: Vec<f64>,
    pub deltas: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            lambdas: vec![0.25, 0.5, 0.75, 1.0, 1.25, 1.5],
            deltas: vec![0.005, 0.01, 0.02],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoSection {
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for IoSection {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("runs"),
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scene: SceneConfig,
    pub grid: GridSection,
    pub model: ArchConfig,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub sweep: SweepSection,
    pub io: IoSection,
}

impl ExperimentConfig {
    /// Parses a TOML document. Errors carry the line and column of the offending key.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| PszError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| PszError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            PszError::Config(msg) => PszError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| PszError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.train.loss.validate()?;
        self.grid.grid().build()?;
        if self.grid.bands.is_empty() {
            return Err(PszError::Config("grid.bands must enable at least one band".into()));
        }
        let mut seen = self.grid.bands.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.grid.bands.len() {
            return Err(PszError::Config("grid.bands lists a band twice".into()));
        }
        if self.eval.listeners.is_empty() || self.eval.listeners.iter().any(|&k| k != 1 && k != 2) {
            return Err(PszError::Config("eval.listeners must contain 1 and/or 2".into()));
        }
        if self.eval.anchors == 0 {
            return Err(PszError::Config("eval.anchors must be at least 1".into()));
        }
        Ok(())
    }

    pub fn ensure_band(&self, band: Band) -> Result<()> {
        if self.grid.bands.contains(&band) {
            Ok(())
        } else {
            Err(PszError::BandNotEnabled(band))
        }
    }

    pub fn with_output_dir(mut self, dir: Option<PathBuf>) -> Self {
        if let Some(d) = dir {
            self.io.output_dir = d;
        }
        self
    }

    pub fn dims(&self, band: Band) -> FilterDims {
        FilterDims {
            drivers: self.scene.array.count(band),
            taps: self.grid.taps(band),
        }
    }

    /// Training configuration for one band with optional weight overrides.
    pub fn train_config(&self, band: Band, lambda: Option<f64>, delta: Option<f64>) -> Result<TrainConfig> {
        self.ensure_band(band)?;
        let mut weights = self.train.loss;
        if let Some(l) = lambda {
            weights.lambda = l;
        }
        if let Some(d) = delta {
            weights.delta = d;
        }
        let cfg = TrainConfig {
            band,
            steps: self.train.steps,
            batch_size: self.train.batch_size,
            seed: self.io.seed,
            taps: self.grid.taps(band),
            weights,
            scene: self.scene.clone(),
            grid: self.grid.grid(),
            arch: self.model.clone(),
            optimizer: self.train.optimizer,
            log_every: self.train.log_every,
            checkpoint: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Rejects checkpoints whose band or network shape differs from this configuration.
    pub fn check_model(&self, model: &GeneratorParams) -> Result<()> {
        self.ensure_band(model.band)?;
        let expected = GeneratorParams::init(model.band, self.dims(model.band), &self.model, self.scene.bounds, 0)?;
        if model.dims != expected.dims || model.layer_sizes() != expected.layer_sizes() || model.encoding != expected.encoding {
            return Err(PszError::ShapeMismatch(format!(
                "{} checkpoint has layers {:?}, configuration expects {:?}",
                model.band,
                model.layer_sizes(),
                expected.layer_sizes()
            )));
        }
        Ok(())
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| PszError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| PszError::io(path, e))
}

fn write_resolved(cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    write_text(path, &cfg.to_toml_string()?)
}

/// File stem shared by a trained checkpoint, its log and its config copy.
pub fn model_stem(band: Band, lambda: f64, delta: f64) -> String {
    format!("{band}_lambda{lambda}_delta{delta}")
}

#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub config: PathBuf,
    pub params: GeneratorParams,
}

/// Trains one band and writes `<stem>.ckpt`, `<stem>.log.csv` and `<stem>.config.toml`.
pub fn run_train(cfg: &ExperimentConfig, band: Band, lambda: Option<f64>, delta: Option<f64>, progress: impl FnMut(&LogRow)) -> Result<TrainArtifacts> {
    let tc = cfg.train_config(band, lambda, delta)?;
    train_into(cfg, &tc, &cfg.io.output_dir, progress)
}

fn train_into(cfg: &ExperimentConfig, tc: &TrainConfig, dir: &Path, progress: impl FnMut(&LogRow)) -> Result<TrainArtifacts> {
    create_dir(dir)?;
    let stem = model_stem(tc.band, tc.weights.lambda, tc.weights.delta);
    let checkpoint = dir.join(format!("{stem}.ckpt"));
    let log = dir.join(format!("{stem}.log.csv"));
    let config = dir.join(format!("{stem}.config.toml"));

    let mut resolved = cfg.clone();
    resolved.train.loss = tc.weights;
    resolved.io.output_dir = dir.to_path_buf();
    write_resolved(&resolved, &config)?;

    let mut tc = tc.clone();
    tc.checkpoint = Some(checkpoint.clone());
    let outcome = train_with_progress(&tc, progress)?;
    write_log_csv(&outcome.log, &log)?;
    Ok(TrainArtifacts {
        checkpoint,
        log,
        config,
        params: outcome.params,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Multi-anchor protocol with per-band aggregation.
    Sim,
    /// Fixed anchors, 3x3 grids at several spacings, full-band aggregation.
    Meas,
}

impl EvalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::Sim => "sim",
            EvalMode::Meas => "meas",
        }
    }
}

/// One neighborhood size evaluated for both models.
#[derive(Debug, Clone)]
pub struct EvalBlock {
    pub spacing: f64,
    pub r_max: f64,
    pub baseline: Vec<NeighborhoodReport>,
    pub nc: Vec<NeighborhoodReport>,
    pub baseline_avg: Vec<AveragedMetric>,
    pub nc_avg: Vec<AveragedMetric>,
    pub improvements: Vec<ImprovementRow>,
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub mode: EvalMode,
    pub blocks: Vec<EvalBlock>,
}

fn check_models(cfg: &ExperimentConfig, models: &[GeneratorParams], role: &str) -> Result<()> {
    for m in models {
        cfg.check_model(m)?;
    }
    let mut bands: Vec<Band> = models.iter().map(|m| m.band).collect();
    bands.sort();
    let mut want = cfg.grid.bands.clone();
    want.sort();
    if bands != want {
        return Err(PszError::Config(format!(
            "{role} models cover bands {bands:?} but the configuration enables {want:?}"
        )));
    }
    Ok(())
}

/// Anchors used by the simulation protocol.
pub fn sim_anchors(cfg: &ExperimentConfig) -> Result<Vec<StackedCoords>> {
    sample_anchors(
        cfg.eval.anchor_seed.unwrap_or(cfg.io.seed),
        &cfg.scene,
        cfg.eval.r_max,
        cfg.eval.anchors,
    )
}

fn meas_anchors(cfg: &ExperimentConfig) -> Vec<StackedCoords> {
    cfg.eval
        .meas_anchors
        .iter()
        .map(|p| StackedCoords::new(cfg.scene.listener1_anchor, Point2::new(p[0], p[1])))
        .collect()
}

/// Runs the chosen protocol on two sets of in-memory models.
pub fn evaluate_models(cfg: &ExperimentConfig, mode: EvalMode, baseline: &[GeneratorParams], nc: &[GeneratorParams]) -> Result<EvalOutcome> {
    check_models(cfg, baseline, "baseline")?;
    check_models(cfg, nc, "nc")?;
    let grid = cfg.grid.grid().build()?;
    let atfs = FreeFieldAtfs::new(&cfg.scene, &grid, &cfg.grid.bands)?;
    let base_pair = GeneratorPair::new(baseline)?;
    let nc_pair = GeneratorPair::new(nc)?;

    let plans: Vec<(Vec<StackedCoords>, NeighborhoodConfig)> = match mode {
        EvalMode::Sim => vec![(
            sim_anchors(cfg)?,
            NeighborhoodConfig {
                r_max: cfg.eval.r_max,
                spacing: cfg.eval.spacing,
                mode: cfg.eval.mode,
                aggregation: Aggregation::PerBand,
                listeners: cfg.eval.listeners.iter().map(|k| k - 1).collect(),
            },
        )],
        EvalMode::Meas => {
            if cfg.eval.meas_anchors.is_empty() || cfg.eval.meas_spacings.is_empty() {
                return Err(PszError::Config("measurement mode needs anchors and spacings".into()));
            }
            let anchors = meas_anchors(cfg);
            cfg.eval
                .meas_spacings
                .iter()
                .map(|&s| {
                    (
                        anchors.clone(),
                        NeighborhoodConfig {
                            r_max: s,
                            spacing: s,
                            mode: SummaryMode::Min,
                            aggregation: Aggregation::FullBand,
                            listeners: vec![0, 1],
                        },
                    )
                })
                .collect()
        }
    };

    let blocks = plans
        .into_iter()
        .map(|(anchors, ncfg)| {
            let b = multi_anchor_run(&anchors, &atfs, &base_pair, &cfg.scene, &grid, &ncfg)?;
            let n = multi_anchor_run(&anchors, &atfs, &nc_pair, &cfg.scene, &grid, &ncfg)?;
            let baseline_avg = anchor_average(&b)?;
            let nc_avg = anchor_average(&n)?;
            let improvements = compare(&baseline_avg, &nc_avg)?;
            Ok(EvalBlock {
                spacing: ncfg.spacing,
                r_max: ncfg.r_max,
                baseline: b,
                nc: n,
                baseline_avg,
                nc_avg,
                improvements,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalOutcome { mode, blocks })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| PszError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn flush(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| PszError::io(path, e))
}

/// Per-point values of every anchor, both conditions.
pub fn write_points_csv(outcome: &EvalOutcome, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["condition", "spacing", "anchor_id", "dx", "dy", "metric", "listener", "band", "value_db"])?;
    for block in &outcome.blocks {
        for (condition, reports) in [("baseline", &block.baseline), ("nc", &block.nc)] {
            for (a, rep) in reports.iter().enumerate() {
                for m in &rep.metrics {
                    for (off, v) in rep.grid.offsets.iter().zip(&m.values) {
                        w.write_record([
                            condition.to_string(),
                            block.spacing.to_string(),
                            a.to_string(),
                            off[0].to_string(),
                            off[1].to_string(),
                            m.id.kind.as_str().to_string(),
                            (m.id.listener + 1).to_string(),
                            m.id.scope.as_str().to_string(),
                            v.to_string(),
                        ])?;
                    }
                }
            }
        }
    }
    flush(w, path)
}

/// Per-anchor summaries, both conditions.
pub fn write_summaries_csv(outcome: &EvalOutcome, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "condition", "spacing", "anchor_id", "anchor_x2", "anchor_y2", "metric", "listener", "band", "median", "lower_bound", "mode", "sigma_mean", "sigma_rms",
    ])?;
    for block in &outcome.blocks {
        for (condition, reports) in [("baseline", &block.baseline), ("nc", &block.nc)] {
            for (a, rep) in reports.iter().enumerate() {
                let x2 = rep.anchor.listener(1);
                for m in &rep.metrics {
                    let s = &m.summary;
                    w.write_record([
                        condition.to_string(),
                        block.spacing.to_string(),
                        a.to_string(),
                        x2.x.to_string(),
                        x2.y.to_string(),
                        m.id.kind.as_str().to_string(),
                        (m.id.listener + 1).to_string(),
                        m.id.scope.as_str().to_string(),
                        s.median.to_string(),
                        s.lower.to_string(),
                        s.mode.as_str().to_string(),
                        s.sigma_mean.to_string(),
                        s.sigma_rms.to_string(),
                    ])?;
                }
            }
        }
    }
    flush(w, path)
}

const IMPROVEMENT_HEADER: [&str; 10] = [
    "spacing", "metric", "listener", "band", "summary", "baseline", "baseline_std", "nc", "nc_std", "imp_pct",
];

/// Anchor-averaged values and improvements.
pub fn write_improvements_csv(outcome: &EvalOutcome, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(IMPROVEMENT_HEADER)?;
    for block in &outcome.blocks {
        for row in &block.improvements {
            let std_of = |avg: &[AveragedMetric]| {
                avg.iter()
                    .find(|m| m.id == row.id)
                    .map(|m| m.field(row.field).std)
                    .unwrap_or(f64::NAN)
            };
            w.write_record([
                block.spacing.to_string(),
                row.id.kind.as_str().to_string(),
                (row.id.listener + 1).to_string(),
                row.id.scope.as_str().to_string(),
                row.field.name(row.mode).to_string(),
                row.baseline.to_string(),
                std_of(&block.baseline_avg).to_string(),
                row.nc.to_string(),
                std_of(&block.nc_avg).to_string(),
                row.imp_pct.to_string(),
            ])?;
        }
    }
    flush(w, path)
}

/// Directory that receives the CSVs of one evaluation.
pub fn eval_dir(cfg: &ExperimentConfig, mode: EvalMode) -> PathBuf {
    cfg.io.output_dir.join(format!("eval-{}", mode.as_str()))
}

pub fn write_eval(outcome: &EvalOutcome, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    write_points_csv(outcome, &dir.join(POINTS_CSV))?;
    write_summaries_csv(outcome, &dir.join(SUMMARIES_CSV))?;
    write_improvements_csv(outcome, &dir.join(IMPROVEMENTS_CSV))?;
    write_resolved(cfg, &dir.join(RESOLVED_CONFIG))
}

/// Loads the checkpoints, evaluates them and writes the report CSVs.
pub fn run_eval(cfg: &ExperimentConfig, mode: EvalMode, baseline: &[PathBuf], nc: &[PathBuf]) -> Result<(PathBuf, EvalOutcome)> {
    let load = |paths: &[PathBuf]| {
        paths
            .iter()
            .map(|p| load_checkpoint(p))
            .collect::<Result<Vec<_>>>()
    };
    let outcome = evaluate_models(cfg, mode, &load(baseline)?, &load(nc)?)?;
    let dir = eval_dir(cfg, mode);
    write_eval(&outcome, cfg, &dir)?;
    Ok((dir, outcome))
}

/// Which hyperparameter a sweep row varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Lambda,
    Delta,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Lambda => "lambda",
            SweepAxis::Delta => "delta",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub band: Band,
    pub axis: SweepAxis,
    pub lambda: f64,
    pub delta: f64,
    pub improvement: ImprovementRow,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub dir: PathBuf,
    pub rows: Vec<SweepRow>,
}

/// Bit pattern key so identical (lambda, delta) pairs train once.
fn point_key(lambda: f64, delta: f64) -> (u64, u64) {
    // Without the consistency term the perturbation range has no effect.
    let delta = if lambda == 0.0 { 0.0 } else { delta };
    (lambda.to_bits(), delta.to_bits())
}

/// Trains a shared baseline and one model per sweep point for every enabled band,
/// then compares each point against the baseline with the simulation protocol.
pub fn run_sweep(cfg: &ExperimentConfig, mut progress: impl FnMut(&str)) -> Result<SweepOutcome> {
    if cfg.sweep.lambdas.is_empty() || cfg.sweep.deltas.is_empty() {
        return Err(PszError::Config("sweep.lambdas and sweep.deltas must be nonempty".into()));
    }
    let dir = cfg.io.output_dir.join("sweep");
    create_dir(&dir)?;
    write_resolved(cfg, &dir.join(RESOLVED_CONFIG))?;

    let fixed = cfg.train.loss;
    let points: Vec<(SweepAxis, f64, f64)> = cfg
        .sweep
        .lambdas
        .iter()
        .map(|&l| (SweepAxis::Lambda, l, fixed.delta))
        .chain(cfg.sweep.deltas.iter().map(|&d| (SweepAxis::Delta, fixed.lambda, d)))
        .collect();

    let grid = cfg.grid.grid().build()?;
    let anchors = sim_anchors(cfg)?;
    let ncfg = NeighborhoodConfig {
        r_max: cfg.eval.r_max,
        spacing: cfg.eval.spacing,
        mode: cfg.eval.mode,
        aggregation: Aggregation::PerBand,
        listeners: cfg.eval.listeners.iter().map(|k| k - 1).collect(),
    };

    let mut rows = Vec::new();
    for &band in &cfg.grid.bands {
        let atfs = FreeFieldAtfs::new(&cfg.scene, &grid, &[band])?;
        let mut averaged: BTreeMap<(u64, u64), Vec<AveragedMetric>> = BTreeMap::new();
        let mut evaluate = |lambda: f64, delta: f64, progress: &mut dyn FnMut(&str)| -> Result<Vec<AveragedMetric>> {
            let key = point_key(lambda, delta);
            if let Some(avg) = averaged.get(&key) {
                return Ok(avg.clone());
            }
            progress(&format!("training {band} lambda={lambda} delta={delta}"));
            let tc = cfg.train_config(band, Some(lambda), Some(delta))?;
            let art = train_into(cfg, &tc, &dir, |_| {})?;
            let models = [art.params];
            let pair = GeneratorPair::new(&models)?;
            let reports = multi_anchor_run(&anchors, &atfs, &pair, &cfg.scene, &grid, &ncfg)?;
            let avg = anchor_average(&reports)?;
            averaged.insert(key, avg.clone());
            Ok(avg)
        };
        let base = evaluate(0.0, fixed.delta, &mut progress)?;
        for &(axis, lambda, delta) in &points {
            let avg = evaluate(lambda, delta, &mut progress)?;
            for improvement in compare(&base, &avg)? {
                rows.push(SweepRow {
                    band,
                    axis,
                    lambda,
                    delta,
                    improvement,
                });
            }
        }
    }
    write_sweep_csv(&rows, &dir.join(SWEEP_CSV))?;
    Ok(SweepOutcome { dir, rows })
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["band", "sweep", "lambda", "delta", "metric", "listener", "summary", "baseline", "nc", "imp_pct"])?;
    for r in rows {
        let i = &r.improvement;
        w.write_record([
            r.band.as_str().to_string(),
            r.axis.as_str().to_string(),
            r.lambda.to_string(),
            r.delta.to_string(),
            i.id.kind.as_str().to_string(),
            (i.id.listener + 1).to_string(),
            i.field.name(i.mode).to_string(),
            i.baseline.to_string(),
            i.nc.to_string(),
            i.imp_pct.to_string(),
        ])?;
    }
    flush(w, path)
}

fn read_rows(path: &Path) -> Result<(csv::StringRecord, Vec<csv::StringRecord>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let rows = r.records().collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((header, rows))
}

fn column(header: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| PszError::Config(format!("{} has no '{name}' column", path.display())))
}

fn summary_kind(name: &str) -> ImprovementKind {
    if name.starts_with("sigma") {
        ImprovementKind::Stability
    } else {
        ImprovementKind::Quality
    }
}

/// Renders the anchor-averaged tables of an evaluation directory as text.
///
/// Values are printed exactly as stored in the CSV. Every improvement is
/// recomputed from its absolute columns and a mismatch is reported as an error.
pub fn run_report(dir: &Path) -> Result<String> {
    let missing: Vec<String> = [SUMMARIES_CSV, IMPROVEMENTS_CSV]
        .iter()
        .filter(|f| !dir.join(f).is_file())
        .map(|f| f.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(PszError::MissingFiles {
            dir: dir.to_path_buf(),
            missing,
        });
    }
    let path = dir.join(IMPROVEMENTS_CSV);
    let (header, rows) = read_rows(&path)?;
    let col = |n: &str| column(&header, n, &path);
    let [spacing, metric, listener, band, summary, base, base_std, nc, nc_std, imp] = IMPROVEMENT_HEADER.map(|n| col(n));
    let (spacing, metric, listener, band, summary) = (spacing?, metric?, listener?, band?, summary?);
    let (base, base_std, nc, nc_std, imp) = (base?, base_std?, nc?, nc_std?, imp?);

    let anchors = {
        let (sh, srows) = read_rows(&dir.join(SUMMARIES_CSV))?;
        let a = column(&sh, "anchor_id", &dir.join(SUMMARIES_CSV))?;
        let mut ids: Vec<&str> = srows.iter().map(|r| &r[a]).collect();
        ids.sort();
        ids.dedup();
        ids.len()
    };

    let mut out = String::new();
    let mut current: Option<(String, String)> = None;
    for row in &rows {
        let parse = |i: usize| -> Result<f64> {
            row[i]
                .parse::<f64>()
                .map_err(|_| PszError::Config(format!("non-numeric value '{}' in {}", &row[i], path.display())))
        };
        let recomputed = improvement(parse(base)?, parse(nc)?, summary_kind(&row[summary]), METRIC_EPSILON);
        let stored = parse(imp)?;
        if (recomputed - stored).abs() > 1e-9 * recomputed.abs().max(1.0) {
            return Err(PszError::Config(format!(
                "improvement {stored} for {} {} does not match recomputed {recomputed}",
                &row[metric], &row[summary]
            )));
        }
        let key = (row[spacing].to_string(), row[band].to_string());
        if current.as_ref() != Some(&key) {
            let _ = writeln!(
                out,
                "\n[{} band, spacing {} m, {} anchor(s)]\n{:<8} {:<12} {:>24} {:>24} {:>10}",
                key.1, key.0, anchors, "metric", "summary", "baseline", "nc", "imp_%"
            );
            current = Some(key);
        }
        let _ = writeln!(
            out,
            "{:<8} {:<12} {:>24} {:>24} {:>10}",
            format!("{}_{}", row[metric].to_uppercase(), &row[listener]),
            &row[summary],
            format!("{} ± {}", &row[base], &row[base_std]),
            format!("{} ± {}", &row[nc], &row[nc_std]),
            &row[imp],
        );
    }
    Ok(out)
}
