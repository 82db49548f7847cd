//! Decoupled neighborhood evaluation.
//!
//! Transfer functions are built once at the physical anchor. Filters are
//! generated from perturbed copies of the anchor in which only listener 2
//! moves over a square offset grid, and every perturbed filter set is rendered
//! against the fixed anchor transfer functions.

use std::cell::RefCell;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{build_neighbor_edges, improvement, ipi, izi, quality_summaries, stability_stats, ImprovementKind, SummaryMode, METRIC_EPSILON};
use crate::acoustics::{build_band_atf, indices, AtfSet, FrequencyGrid};
use crate::error::{PszError, Result};
use crate::filters::{accumulate_pressure, Channel, DftTable, FilterBank, FilterSet, PressureField};
use crate::generator::GeneratorParams;
use crate::geometry::{Band, Point2, SceneConfig, StackedCoords, LISTENERS};

/// Supplies transfer functions for a physical configuration.
pub trait AtfSource {
    fn atfs(&self, x: &StackedCoords) -> Result<AtfSet>;
}

/// Supplies filters for a (possibly perturbed) coordinate input.
pub trait FilterSource {
    fn filters(&self, x_hat: &StackedCoords) -> Result<FilterSet>;

    fn filters_batch(&self, xs: &[StackedCoords]) -> Result<Vec<FilterSet>> {
        xs.iter().map(|x| self.filters(x)).collect()
    }
}

/// Free-field transfer functions for the given bands on the union of their bins.
#[derive(Debug, Clone)]
pub struct FreeFieldAtfs<'a> {
    scene: &'a SceneConfig,
    grid: &'a FrequencyGrid,
    bands: Vec<Band>,
    bins: Vec<usize>,
}

impl<'a> FreeFieldAtfs<'a> {
    pub fn new(scene: &'a SceneConfig, grid: &'a FrequencyGrid, bands: &[Band]) -> Result<Self> {
        if bands.is_empty() {
            return Err(PszError::EmptyInput("bands"));
        }
        let mask: Vec<bool> = (0..grid.len())
            .map(|i| bands.iter().any(|&b| grid.band_mask(b)[i]))
            .collect();
        let bins = indices(&mask);
        if bins.is_empty() {
            return Err(PszError::EmptyMask("no grid bins fall inside the evaluated bands"));
        }
        Ok(Self {
            scene,
            grid,
            bands: bands.to_vec(),
            bins,
        })
    }
}

impl AtfSource for FreeFieldAtfs<'_> {
    fn atfs(&self, x: &StackedCoords) -> Result<AtfSet> {
        let mut set = AtfSet {
            coords: *x,
            woofer: None,
            tweeter: None,
        };
        for &b in &self.bands {
            let atf = Some(build_band_atf(self.scene, x, self.grid, b, &self.bins)?);
            match b {
                Band::Woofer => set.woofer = atf,
                Band::Tweeter => set.tweeter = atf,
            }
        }
        Ok(set)
    }
}

/// Trained generators for either or both bands.
#[derive(Debug, Clone, Copy, Default)]
pub struct GeneratorPair<'a> {
    pub woofer: Option<&'a GeneratorParams>,
    pub tweeter: Option<&'a GeneratorParams>,
}

impl<'a> GeneratorPair<'a> {
    pub fn new(models: &'a [GeneratorParams]) -> Result<Self> {
        let mut pair = Self::default();
        for m in models {
            let slot = match m.band {
                Band::Woofer => &mut pair.woofer,
                Band::Tweeter => &mut pair.tweeter,
            };
            if slot.replace(m).is_some() {
                return Err(PszError::InvalidParameter(format!("two {} models supplied", m.band)));
            }
        }
        Ok(pair)
    }

    fn models(&self) -> impl Iterator<Item = &'a GeneratorParams> {
        self.woofer.into_iter().chain(self.tweeter)
    }
}

impl FilterSource for GeneratorPair<'_> {
    fn filters(&self, x_hat: &StackedCoords) -> Result<FilterSet> {
        Ok(self.filters_batch(std::slice::from_ref(x_hat))?.remove(0))
    }

    fn filters_batch(&self, xs: &[StackedCoords]) -> Result<Vec<FilterSet>> {
        let mut out = vec![FilterSet::default(); xs.len()];
        for model in self.models() {
            let (g, _) = model.forward_batch(xs)?;
            for (set, row) in out.iter_mut().zip(g.rows()) {
                let bank = FilterBank::unpack(model.band, model.dims, row.to_vec())?;
                match model.band {
                    Band::Woofer => set.woofer = Some(bank),
                    Band::Tweeter => set.tweeter = Some(bank),
                }
            }
        }
        Ok(out)
    }
}

/// Per-bin energies for both listeners, summed over each listener's control points
/// and, per program, over both audio channels driven separately.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyTriple {
    pub bins: Vec<usize>,
    pub tar: [Vec<f64>; LISTENERS],
    pub int: [Vec<f64>; LISTENERS],
    pub leak: [Vec<f64>; LISTENERS],
}

/// Renders energies, caching one DFT table per band.
#[derive(Debug)]
pub struct EnergyRenderer<'a> {
    grid: &'a FrequencyGrid,
    tables: RefCell<Vec<(Band, Rc<DftTable>)>>,
}

impl<'a> EnergyRenderer<'a> {
    pub fn new(grid: &'a FrequencyGrid) -> Self {
        Self {
            grid,
            tables: RefCell::new(Vec::new()),
        }
    }

    fn table(&self, band: Band, bins: &[usize], taps: usize) -> Rc<DftTable> {
        let mut tables = self.tables.borrow_mut();
        if let Some((_, t)) = tables
            .iter()
            .find(|(b, t)| *b == band && t.taps() == taps && t.bins == bins)
        {
            return Rc::clone(t);
        }
        let t = Rc::new(DftTable::new(self.grid, bins, taps));
        tables.push((band, Rc::clone(&t)));
        t
    }

    pub fn energies(&self, atfs: &AtfSet, filters: &FilterSet) -> Result<EnergyTriple> {
        let mut parts = Vec::new();
        let mut shape: Option<(Vec<usize>, usize)> = None;
        for bank in filters.banks() {
            let atf = atfs
                .band(bank.band)
                .ok_or_else(|| PszError::GridMismatch(format!("no {} ATFs in set", bank.band)))?;
            if atf.drivers != bank.dims.drivers {
                return Err(PszError::GridMismatch(format!(
                    "{} ATFs have {} drivers, filters have {}",
                    bank.band, atf.drivers, bank.dims.drivers
                )));
            }
            match &shape {
                Some((bins, ne)) if *bins != atf.bins || *ne != atf.points_per_ear => {
                    return Err(PszError::GridMismatch("bands cover different bins".into()))
                }
                None => shape = Some((atf.bins.clone(), atf.points_per_ear)),
                _ => {}
            }
            let response = self.table(bank.band, &atf.bins, bank.dims.taps).response(bank);
            let band_mask = self.grid.band_mask(bank.band);
            let mask: Vec<bool> = atf.bins.iter().map(|&b| band_mask[b]).collect();
            parts.push((atf, response, mask));
        }
        let (bins, ne) = shape.ok_or(PszError::EmptyInput("filter set has no bands"))?;
        let nb = bins.len();
        let mut tar: [Vec<f64>; LISTENERS] = std::array::from_fn(|_| vec![0.0; nb]);
        let mut leak: [Vec<f64>; LISTENERS] = std::array::from_fn(|_| vec![0.0; nb]);
        for j in 0..LISTENERS {
            for c in Channel::BOTH {
                let mut field = PressureField::zeros(bins.clone(), ne);
                for (atf, response, mask) in &parts {
                    accumulate_pressure(atf, response, j, c as usize, Some(mask), &mut field);
                }
                for k in 0..LISTENERS {
                    let acc = if k == j { &mut tar[j] } else { &mut leak[j] };
                    for point in 0..field.points_per_listener() {
                        for (a, p) in acc.iter_mut().zip(field.at(k, point)) {
                            *a += p.norm_sqr();
                        }
                    }
                }
            }
        }
        let int = [leak[1].clone(), leak[0].clone()];
        Ok(EnergyTriple { bins, tar, int, leak })
    }
}

/// Energies for filters generated at `x_hat` rendered against `atfs` built at the anchor.
pub fn decoupled_point_eval(renderer: &EnergyRenderer, atfs: &AtfSet, filters: &dyn FilterSource, x_hat: &StackedCoords) -> Result<EnergyTriple> {
    renderer.energies(atfs, &filters.filters(x_hat)?)
}

/// Offsets of listener 2 over a square grid, row-major with the x offset varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedGrid {
    pub side: usize,
    pub spacing: f64,
    pub offsets: Vec<[f64; 2]>,
    pub points: Vec<StackedCoords>,
}

pub fn perturbed_grid(anchor: &StackedCoords, r_max: f64, spacing: f64) -> Result<PerturbedGrid> {
    if !(r_max >= 0.0 && r_max.is_finite()) {
        return Err(PszError::InvalidParameter("r_max must be finite and >= 0".into()));
    }
    let steps = if r_max == 0.0 {
        0
    } else {
        if !(spacing > 0.0) {
            return Err(PszError::InvalidParameter("grid spacing must be > 0".into()));
        }
        let ratio = 2.0 * r_max / spacing;
        let n = ratio.round();
        if (ratio - n).abs() > 1e-9 * ratio.max(1.0) || n as usize % 2 != 0 {
            return Err(PszError::InvalidParameter(format!(
                "spacing {spacing} does not divide 2 r_max = {} evenly",
                2.0 * r_max
            )));
        }
        n as usize
    };
    let side = steps + 1;
    let half = (steps / 2) as f64;
    let x2 = anchor.listener(1);
    let mut offsets = Vec::with_capacity(side * side);
    let mut points = Vec::with_capacity(side * side);
    for iy in 0..side {
        for ix in 0..side {
            let d = [(ix as f64 - half) * spacing, (iy as f64 - half) * spacing];
            offsets.push(d);
            points.push(anchor.with_listener(1, x2 + Point2::new(d[0], d[1])));
        }
    }
    Ok(PerturbedGrid {
        side,
        spacing,
        offsets,
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Izi,
    Ipi,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Izi => "izi",
            MetricKind::Ipi => "ipi",
        }
    }
}

/// Frequency range a metric is aggregated over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Woofer,
    Tweeter,
    Full,
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::Woofer => "woofer",
            Scope::Tweeter => "tweeter",
            Scope::Full => "full",
        }
    }

    fn of(band: Band) -> Self {
        match band {
            Band::Woofer => Scope::Woofer,
            Band::Tweeter => Scope::Tweeter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MetricId {
    pub kind: MetricKind,
    /// Zero-based listener index.
    pub listener: usize,
    pub scope: Scope,
}

impl MetricId {
    /// Label such as `izi_2` with a one-based listener number.
    pub fn label(&self) -> String {
        format!("{}_{}", self.kind.as_str(), self.listener + 1)
    }
}

/// Per-band aggregation in simulation mode, whole evaluated range in measurement mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    PerBand,
    FullBand,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodConfig {
    pub r_max: f64,
    pub spacing: f64,
    pub mode: SummaryMode,
    pub aggregation: Aggregation,
    /// Zero-based listeners to report.
    pub listeners: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub median: f64,
    pub lower: f64,
    pub mode: SummaryMode,
    pub sigma_mean: f64,
    pub sigma_rms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub id: MetricId,
    pub values: Vec<f64>,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodReport {
    pub anchor: StackedCoords,
    pub grid: PerturbedGrid,
    pub edge_count: usize,
    pub metrics: Vec<MetricReport>,
}

fn metric_ids(atfs: &AtfSet, cfg: &NeighborhoodConfig) -> Result<Vec<MetricId>> {
    let scopes: Vec<Scope> = match cfg.aggregation {
        Aggregation::PerBand => Band::ALL
            .iter()
            .filter(|b| atfs.band(**b).is_some())
            .map(|&b| Scope::of(b))
            .collect(),
        Aggregation::FullBand => vec![Scope::Full],
    };
    if cfg.listeners.is_empty() || cfg.listeners.iter().any(|&k| k >= LISTENERS) {
        return Err(PszError::InvalidParameter("listener selection must name listeners 1 or 2".into()));
    }
    let mut ids = Vec::new();
    for &scope in &scopes {
        for &listener in &cfg.listeners {
            for kind in [MetricKind::Izi, MetricKind::Ipi] {
                ids.push(MetricId { kind, listener, scope });
            }
        }
    }
    Ok(ids)
}

/// Band-aggregated metric values of one point, in the order of `ids`.
pub fn point_metrics(energy: &EnergyTriple, grid: &FrequencyGrid, ids: &[MetricId]) -> Result<Vec<f64>> {
    ids.iter()
        .map(|id| {
            let in_scope = |b: usize| match id.scope {
                Scope::Woofer => grid.band_mask(Band::Woofer)[b],
                Scope::Tweeter => grid.band_mask(Band::Tweeter)[b],
                Scope::Full => true,
            };
            let k = id.listener;
            let other = match id.kind {
                MetricKind::Izi => &energy.leak[k],
                MetricKind::Ipi => &energy.int[k],
            };
            let (mut sum, mut n) = (0.0, 0usize);
            for (i, &b) in energy.bins.iter().enumerate() {
                if in_scope(b) {
                    sum += match id.kind {
                        MetricKind::Izi => izi(energy.tar[k][i], other[i], METRIC_EPSILON),
                        MetricKind::Ipi => ipi(energy.tar[k][i], other[i], METRIC_EPSILON),
                    };
                    n += 1;
                }
            }
            if n == 0 {
                return Err(PszError::EmptyMask("no evaluated bins inside the metric's scope"));
            }
            Ok(sum / n as f64)
        })
        .collect()
}

/// Evaluates every perturbed input around `anchor` with acoustics fixed at the anchor.
pub fn evaluate_neighborhood(anchor: &StackedCoords, atf_source: &dyn AtfSource, filters: &dyn FilterSource, scene: &SceneConfig, grid: &FrequencyGrid, cfg: &NeighborhoodConfig) -> Result<NeighborhoodReport> {
    let x2 = anchor.listener(1);
    if anchor.separation() <= scene.overlap_threshold + std::f64::consts::SQRT_2 * cfg.r_max {
        return Err(PszError::OverlapRisk {
            x2: x2.x,
            y2: x2.y,
            r_max: cfg.r_max,
        });
    }
    let pgrid = perturbed_grid(anchor, cfg.r_max, cfg.spacing)?;
    if pgrid.points.iter().any(|p| !scene.bounds.contains(p)) {
        return Err(PszError::OutOfBounds);
    }
    let atfs = atf_source.atfs(anchor)?;
    let ids = metric_ids(&atfs, cfg)?;
    let renderer = EnergyRenderer::new(grid);
    let filter_sets = filters.filters_batch(&pgrid.points)?;
    let mut values = vec![Vec::with_capacity(pgrid.points.len()); ids.len()];
    for set in &filter_sets {
        let energy = renderer.energies(&atfs, set)?;
        for (v, q) in values.iter_mut().zip(point_metrics(&energy, grid, &ids)?) {
            v.push(q);
        }
    }
    let edges = build_neighbor_edges(pgrid.side, pgrid.side, pgrid.spacing);
    let metrics = ids
        .into_iter()
        .zip(values)
        .map(|(id, values)| {
            let (median, lower) = quality_summaries(&values, cfg.mode)?;
            let (sigma_mean, sigma_rms) = if edges.is_empty() {
                (0.0, 0.0)
            } else {
                stability_stats(&values, &edges)?
            };
            Ok(MetricReport {
                id,
                values,
                summary: Summary {
                    median,
                    lower,
                    mode: cfg.mode,
                    sigma_mean,
                    sigma_rms,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NeighborhoodReport {
        anchor: *anchor,
        grid: pgrid,
        edge_count: edges.len(),
        metrics,
    })
}

/// Maximum number of listener-2 draws before anchor sampling gives up.
pub const ANCHOR_ATTEMPTS: usize = 10_000;

/// Anchors with listener 1 at its configured position and listener 2 drawn uniformly
/// from its box shrunk by `r_max`, rejecting positions that risk the overlap regime.
pub fn sample_anchors(seed: u64, scene: &SceneConfig, r_max: f64, count: usize) -> Result<Vec<StackedCoords>> {
    let tight = PszError::BoundsTooTight {
        attempts: ANCHOR_ATTEMPTS,
    };
    let Some(region) = scene.bounds.listeners[1].shrink(r_max) else {
        return Err(tight);
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        if attempts == ANCHOR_ATTEMPTS {
            return Err(tight);
        }
        attempts += 1;
        let x2 = Point2::new(
            rng.random_range(region.x[0]..=region.x[1]),
            rng.random_range(region.y[0]..=region.y[1]),
        );
        let x = StackedCoords::new(scene.listener1_anchor, x2);
        if x.separation() > scene.overlap_threshold + std::f64::consts::SQRT_2 * r_max {
            out.push(x);
        }
    }
    Ok(out)
}

pub fn multi_anchor_run(anchors: &[StackedCoords], atf_source: &dyn AtfSource, filters: &dyn FilterSource, scene: &SceneConfig, grid: &FrequencyGrid, cfg: &NeighborhoodConfig) -> Result<Vec<NeighborhoodReport>> {
    anchors
        .iter()
        .map(|a| evaluate_neighborhood(a, atf_source, filters, scene, grid, cfg))
        .collect()
}

/// Mean and population standard deviation across anchors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> MeanStd {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MeanStd {
        mean,
        std: var.sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryField {
    Median,
    Lower,
    SigmaMean,
    SigmaRms,
}

impl SummaryField {
    pub const ALL: [SummaryField; 4] = [
        SummaryField::Median,
        SummaryField::Lower,
        SummaryField::SigmaMean,
        SummaryField::SigmaRms,
    ];

    pub fn name(self, mode: SummaryMode) -> &'static str {
        match self {
            SummaryField::Median => "median",
            SummaryField::Lower => mode.as_str(),
            SummaryField::SigmaMean => "sigma_mean",
            SummaryField::SigmaRms => "sigma_rms",
        }
    }

    pub fn kind(self) -> ImprovementKind {
        match self {
            SummaryField::Median | SummaryField::Lower => ImprovementKind::Quality,
            SummaryField::SigmaMean | SummaryField::SigmaRms => ImprovementKind::Stability,
        }
    }

    pub fn get(self, s: &Summary) -> f64 {
        match self {
            SummaryField::Median => s.median,
            SummaryField::Lower => s.lower,
            SummaryField::SigmaMean => s.sigma_mean,
            SummaryField::SigmaRms => s.sigma_rms,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AveragedMetric {
    pub id: MetricId,
    pub mode: SummaryMode,
    /// Indexed like [`SummaryField::ALL`].
    pub fields: [MeanStd; 4],
}

impl AveragedMetric {
    pub fn field(&self, f: SummaryField) -> MeanStd {
        self.fields[f as usize]
    }
}

/// Anchor-averaged summaries, one entry per metric.
pub fn anchor_average(reports: &[NeighborhoodReport]) -> Result<Vec<AveragedMetric>> {
    let first = reports.first().ok_or(PszError::EmptyInput("neighborhood reports"))?;
    first
        .metrics
        .iter()
        .enumerate()
        .map(|(i, m)| {
            if reports
                .iter()
                .any(|r| r.metrics.get(i).map(|x| x.id) != Some(m.id))
            {
                return Err(PszError::ShapeMismatch("reports list different metrics".into()));
            }
            let fields = SummaryField::ALL
                .map(|f| mean_std(reports.iter().map(move |r| f.get(&r.metrics[i].summary))));
            Ok(AveragedMetric {
                id: m.id,
                mode: m.summary.mode,
                fields,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImprovementRow {
    pub id: MetricId,
    pub field: SummaryField,
    pub mode: SummaryMode,
    pub baseline: f64,
    pub nc: f64,
    pub imp_pct: f64,
}

/// Improvements of the consistency model over the baseline on anchor-averaged summaries.
pub fn compare(baseline: &[AveragedMetric], nc: &[AveragedMetric]) -> Result<Vec<ImprovementRow>> {
    if baseline.len() != nc.len() || baseline.iter().zip(nc).any(|(a, b)| a.id != b.id) {
        return Err(PszError::ShapeMismatch("baseline and consistency reports differ in metrics".into()));
    }
    let mut rows = Vec::with_capacity(baseline.len() * 4);
    for (b, n) in baseline.iter().zip(nc) {
        for f in SummaryField::ALL {
            let (bv, nv) = (b.field(f).mean, n.field(f).mean);
            rows.push(ImprovementRow {
                id: b.id,
                field: f,
                mode: b.mode,
                baseline: bv,
                nc: nv,
                imp_pct: improvement(bv, nv, f.kind(), METRIC_EPSILON),
            });
        }
    }
    Ok(rows)
}
