//! Per-band generator training.
//!
//! Each step draws a batch of stacked coordinates uniformly over the training
//! bounds, evaluates the PSZ objective at the unperturbed inputs and, when the
//! neighbor-consistency weight is positive, a second generator pass at clipped
//! perturbed copies. Batches and perturbations come from separate RNG streams,
//! so runs that differ only in the consistency weight see identical batches.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acoustics::{BandAtf, FrequencyGrid};
use crate::error::{PszError, Result};
use crate::filters::FilterDims;
use crate::generator::{save_checkpoint, AdamConfig, AdamState, ArchConfig, GeneratorParams, Gradients, TrainingMeta};
use crate::geometry::{clip_to_bounds, region_indicator, same_region_mask, Band, Point2, SceneConfig, StackedCoords, LISTENERS};
use crate::objectives::{nc_batch, sample_perturbation, total_loss, BandProblem, LossBreakdown, LossWeights, SCALE_NC};

const BATCH_STREAM: u64 = 1;
const PERTURBATION_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub sample_rate: f64,
    pub fft_length: usize,
}

impl GridConfig {
    pub fn build(&self) -> Result<FrequencyGrid> {
        FrequencyGrid::new(self.sample_rate, self.fft_length)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub band: Band,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub taps: usize,
    pub weights: LossWeights,
    pub scene: SceneConfig,
    pub grid: GridConfig,
    pub arch: ArchConfig,
    pub optimizer: AdamConfig,
    /// A log row is kept every `log_every` steps, plus the first and last step.
    pub log_every: usize,
    pub checkpoint: Option<PathBuf>,
}

impl TrainConfig {
    /// Woofer-only configuration sized for a single CPU core.
    pub fn desk(seed: u64) -> Self {
        Self {
            band: Band::Woofer,
            steps: 3000,
            batch_size: 32,
            seed,
            taps: 128,
            weights: LossWeights::default(),
            scene: SceneConfig::default(),
            grid: GridConfig {
                sample_rate: 16_000.0,
                fft_length: 1024,
            },
            arch: ArchConfig::default(),
            optimizer: AdamConfig::default(),
            log_every: 50,
            checkpoint: None,
        }
    }

    pub fn dims(&self) -> FilterDims {
        FilterDims {
            drivers: self.scene.array.count(self.band),
            taps: self.taps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.weights.validate()?;
        if self.steps == 0 || self.batch_size == 0 || self.log_every == 0 {
            return Err(PszError::InvalidParameter(
                "steps, batch size and log cadence must be at least 1".into(),
            ));
        }
        if self.taps == 0 || self.dims().drivers == 0 {
            return Err(PszError::InvalidParameter(format!("no {} filters to train", self.band)));
        }
        Ok(())
    }
}

/// Uniform samples over each listener's training box.
pub fn sample_batch<R: Rng + ?Sized>(rng: &mut R, scene: &SceneConfig, size: usize) -> Vec<StackedCoords> {
    (0..size)
        .map(|_| {
            let mut pts = [Point2::default(); LISTENERS];
            for (k, p) in pts.iter_mut().enumerate() {
                let b = &scene.bounds.listeners[k];
                *p = Point2::new(rng.random_range(b.x[0]..=b.x[1]), rng.random_range(b.y[0]..=b.y[1]));
            }
            StackedCoords::new(pts[0], pts[1])
        })
        .collect()
}

/// Loss and parameter gradient for one batch.
///
/// `perturbed`, when given, holds the clipped perturbed inputs paired with
/// `batch`; it is ignored when the consistency weight is zero.
pub fn batch_objective(params: &GeneratorParams, problem: &BandProblem, scene: &SceneConfig, grid: &FrequencyGrid, batch: &[StackedCoords], perturbed: Option<&[StackedCoords]>) -> Result<(LossBreakdown, Gradients)> {
    let atfs = batch
        .iter()
        .map(|x| problem.atf(scene, x, grid))
        .collect::<Result<Vec<BandAtf>>>()?;
    batch_objective_with_atfs(params, problem, scene, &atfs, batch, perturbed)
}

fn batch_objective_with_atfs(params: &GeneratorParams, problem: &BandProblem, scene: &SceneConfig, atfs: &[BandAtf], batch: &[StackedCoords], perturbed: Option<&[StackedCoords]>) -> Result<(LossBreakdown, Gradients)> {
    let d_ov = scene.overlap_threshold;
    let regimes: Vec<u8> = batch.iter().map(|x| region_indicator(x, d_ov)).collect();
    let (g, tape) = params.forward_batch(batch)?;
    let psz = problem.psz_batch(atfs, &g.view(), &regimes)?;
    let psz_parts = psz.breakdown(&problem.weights);
    let lambda = problem.weights.lambda;

    let mut adj = psz.grad;
    let (loss, second) = match perturbed {
        Some(xp) if lambda > 0.0 => {
            if xp.len() != batch.len() {
                return Err(PszError::LengthMismatch {
                    what: "perturbed batch",
                    expected: batch.len(),
                    actual: xp.len(),
                });
            }
            let mask: Vec<bool> = batch
                .iter()
                .zip(xp)
                .map(|(x, p)| same_region_mask(x, p, d_ov) == 1)
                .collect();
            let (gp, tape_p) = params.forward_batch(xp)?;
            let nc = nc_batch(&g.view(), &gp.view(), &mask)?;
            let w = lambda * SCALE_NC;
            adj.scaled_add(w, &nc.grad);
            let adj_p: Array2<f64> = nc.grad * (-w);
            let loss = total_loss(&psz_parts, nc.value, nc.mask_rate, lambda);
            (loss, Some((tape_p, adj_p)))
        }
        _ => (total_loss(&psz_parts, 0.0, 0.0, lambda), None),
    };
    if !loss.is_finite() {
        return Err(PszError::NumericalOverflow("loss"));
    }
    let mut grads = params.backward(&tape, &adj.view())?;
    if let Some((tape_p, adj_p)) = second {
        grads.add_assign(&params.backward(&tape_p, &adj_p.view())?);
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub bz: f64,
    pub dz: f64,
    pub gain: f64,
    pub compact: f64,
    pub nc: f64,
    pub total: f64,
    pub mask_rate: f64,
}

impl LogRow {
    fn new(step: usize, l: &LossBreakdown) -> Self {
        Self {
            step,
            bz: l.bz,
            dz: l.dz,
            gain: l.gain,
            compact: l.compact,
            nc: l.nc,
            total: l.total,
            mask_rate: l.mask_rate,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: GeneratorParams,
    pub log: Vec<LogRow>,
}

/// Runs the configured number of optimizer steps.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(config, |_| {})
}

/// As [`train`], calling `progress` after every logged step.
pub fn train_with_progress(config: &TrainConfig, mut progress: impl FnMut(&LogRow)) -> Result<TrainOutcome> {
    config.validate()?;
    let grid = config.grid.build()?;
    let dims = config.dims();
    let problem = BandProblem::new(&grid, config.band, dims, config.weights)?;
    let mut params = GeneratorParams::init(config.band, dims, &config.arch, config.scene.bounds, config.seed)?;
    let mut opt = AdamState::new(&params, config.optimizer);

    let mut batch_rng = ChaCha8Rng::seed_from_u64(config.seed);
    batch_rng.set_stream(BATCH_STREAM);
    let mut pert_rng = ChaCha8Rng::seed_from_u64(config.seed);
    pert_rng.set_stream(PERTURBATION_STREAM);
    let use_nc = config.weights.lambda > 0.0;

    let mut log = Vec::new();
    for step in 1..=config.steps {
        let batch = sample_batch(&mut batch_rng, &config.scene, config.batch_size);
        let perturbed: Option<Vec<StackedCoords>> = use_nc.then(|| {
            batch
                .iter()
                .map(|x| {
                    let d = sample_perturbation(&mut pert_rng, config.weights.delta);
                    clip_to_bounds(&x.add(&d), &config.scene.bounds)
                })
                .collect()
        });
        let (loss, grads) = match batch_objective(&params, &problem, &config.scene, &grid, &batch, perturbed.as_deref()) {
            Err(PszError::NumericalOverflow(_)) => return Err(PszError::TrainingDiverged { step }),
            other => other?,
        };
        if !grads.is_finite() {
            return Err(PszError::TrainingDiverged { step });
        }
        if step == 1 || step == config.steps || step % config.log_every == 0 {
            let row = LogRow::new(step, &loss);
            progress(&row);
            log.push(row);
        }
        opt.step(&mut params, &grads)?;
    }
    params.training = Some(TrainingMeta {
        lambda: config.weights.lambda,
        delta: config.weights.delta,
        steps: config.steps,
        batch_size: config.batch_size,
    });
    if let Some(path) = &config.checkpoint {
        save_checkpoint(&params, path)?;
    }
    Ok(TrainOutcome { params, log })
}

pub fn write_log_csv(log: &[LogRow], path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| PszError::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for row in log {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| PszError::io(path, e))
}
