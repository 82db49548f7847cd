//! Training objective for one band.
//!
//! The PSZ part combines four terms evaluated on the in-band bins of the
//! unperturbed sample: bright-zone magnitude matching, dark-zone energy (only
//! when the listeners are separated), a hinge on filter response magnitudes and
//! a windowed late-tap energy. Neighbor consistency adds the masked mean squared
//! difference between the filters generated for a sample and for its perturbed
//! copy.
//!
//! Per sample, each program `j` is rendered with one audio channel active at a
//! time. The bright zone is every control point of listener `j`, the dark zone
//! every control point of the other listener.

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::acoustics::{build_band_atf, indices, BandAtf, FrequencyGrid};
use crate::error::{PszError, Result};
use crate::filters::{DftTable, FilterBank, FilterDims, FilterResponse, PressureField};
use crate::geometry::{Band, SceneConfig, StackedCoords, LISTENERS, STACKED_DIM};

pub const SCALE_BZDZ: f64 = 1e3;
pub const SCALE_COMPACT: f64 = 5.0;
pub const SCALE_NC: f64 = 1e3;
/// Guard added to the neighbor-consistency mask count.
pub const NC_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    /// Half-width of the uniform training perturbation, in meters.
    pub delta: f64,
    /// Linear response magnitude above which the gain hinge activates.
    pub g_max: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.5,
            gamma: 0.5,
            lambda: 0.75,
            delta: 0.01,
            g_max: 4.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.alpha)
            && self.beta >= 0.0
            && self.gamma >= 0.0
            && self.lambda >= 0.0
            && self.delta >= 0.0
            && self.g_max > 0.0
            && [self.beta, self.gamma, self.lambda, self.delta, self.g_max]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(PszError::InvalidParameter(format!("invalid loss weights {self:?}")))
        }
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        Self { lambda, ..self }
    }
}

/// Batch-level loss components.
///
/// `dz` already carries the regime factor: it is the batch mean of `r * dz`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub bz: f64,
    pub dz: f64,
    pub gain: f64,
    pub compact: f64,
    pub nc: f64,
    pub total: f64,
    pub mask_rate: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.bz, self.dz, self.gain, self.compact, self.nc, self.total, self.mask_rate]
            .iter()
            .all(|v| v.is_finite())
    }
}

fn check_mask(mask: &[bool], bins: usize) -> Result<()> {
    if mask.len() != bins {
        return Err(PszError::LengthMismatch {
            what: "band mask",
            expected: bins,
            actual: mask.len(),
        });
    }
    if !mask.iter().any(|&m| m) {
        return Err(PszError::EmptyMask("band mask selects no bins"));
    }
    Ok(())
}

/// Mean of `(|P| - target)^2` over listener `listener`'s control points and the masked bins.
pub fn bright_zone_loss(field: &PressureField, listener: usize, target: &[f64], mask: &[bool]) -> Result<f64> {
    check_mask(mask, field.bins.len())?;
    if target.len() != field.bins.len() {
        return Err(PszError::LengthMismatch {
            what: "target",
            expected: field.bins.len(),
            actual: target.len(),
        });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for point in 0..field.points_per_listener() {
        for ((p, t), _) in field
            .at(listener, point)
            .iter()
            .zip(target)
            .zip(mask)
            .filter(|(_, &m)| m)
        {
            sum += (p.norm() - t).powi(2);
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Mean of `|P|^2` over listener `listener`'s control points and the masked bins.
pub fn dark_zone_loss(field: &PressureField, listener: usize, mask: &[bool]) -> Result<f64> {
    check_mask(mask, field.bins.len())?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for point in 0..field.points_per_listener() {
        for (p, _) in field.at(listener, point).iter().zip(mask).filter(|(_, &m)| m) {
            sum += p.norm_sqr();
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Mean over every filter row and masked bin of `max(|G| - g_max, 0)^2`.
pub fn gain_penalty(response: &FilterResponse, mask: &[bool], g_max: f64) -> Result<f64> {
    if !(g_max > 0.0) {
        return Err(PszError::InvalidParameter("g_max must be > 0".into()));
    }
    check_mask(mask, response.bins.len())?;
    let nb = response.bins.len();
    let mut sum = 0.0;
    let mut count = 0usize;
    for row in response.data.chunks_exact(nb) {
        for (g, _) in row.iter().zip(mask).filter(|(_, &m)| m) {
            sum += (g.norm() - g_max).max(0.0).powi(2);
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Late-tap weighting: zero over the first half, then a linear ramp reaching 1 at the last tap.
pub fn compact_window(taps: usize) -> Vec<f64> {
    let start = taps / 2;
    (0..taps)
        .map(|n| {
            if n < start {
                0.0
            } else if taps - 1 == start {
                1.0
            } else {
                (n - start) as f64 / (taps - 1 - start) as f64
            }
        })
        .collect()
}

/// Mean over all coefficients of `w[n] g[n]^2`.
pub fn compactness_penalty(bank: &FilterBank, window: &[f64]) -> Result<f64> {
    if window.len() != bank.dims.taps {
        return Err(PszError::LengthMismatch {
            what: "compactness window",
            expected: bank.dims.taps,
            actual: window.len(),
        });
    }
    let sum: f64 = bank
        .as_slice()
        .chunks_exact(bank.dims.taps)
        .flat_map(|row| row.iter().zip(window).map(|(g, w)| w * g * g))
        .sum();
    Ok(sum / bank.dims.len() as f64)
}

/// Componentwise uniform offset on `[-delta, delta]` for the stacked coordinate.
pub fn sample_perturbation<R: Rng + ?Sized>(rng: &mut R, delta: f64) -> [f64; STACKED_DIM] {
    let mut out = [0.0; STACKED_DIM];
    for v in &mut out {
        *v = rng.random_range(-delta..=delta);
    }
    out
}

/// Per-sample neighbor-consistency contribution `(m ||g - g'||^2 / D, m)`.
pub fn nc_loss(g: &[f64], g_pert: &[f64], mask: bool) -> Result<(f64, f64)> {
    if g.len() != g_pert.len() {
        return Err(PszError::LengthMismatch {
            what: "perturbed filter vector",
            expected: g.len(),
            actual: g_pert.len(),
        });
    }
    if !mask {
        return Ok((0.0, 0.0));
    }
    let sq: f64 = g.iter().zip(g_pert).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sq / g.len() as f64, 1.0))
}

/// Batch neighbor-consistency value and its gradient with respect to the unperturbed filters.
/// The gradient with respect to the perturbed filters is the negation of `grad`.
#[derive(Debug, Clone)]
pub struct NcBatch {
    pub value: f64,
    pub mask_rate: f64,
    pub grad: Array2<f64>,
}

pub fn nc_batch(g: &ArrayView2<f64>, g_pert: &ArrayView2<f64>, mask: &[bool]) -> Result<NcBatch> {
    if g.dim() != g_pert.dim() {
        return Err(PszError::ShapeMismatch(format!(
            "filters {:?} vs perturbed filters {:?}",
            g.dim(),
            g_pert.dim()
        )));
    }
    if mask.len() != g.nrows() {
        return Err(PszError::LengthMismatch {
            what: "same-region mask",
            expected: g.nrows(),
            actual: mask.len(),
        });
    }
    let d = g.ncols() as f64;
    let mut num = 0.0;
    let mut masks = 0.0;
    for (i, &m) in mask.iter().enumerate() {
        let (v, w) = nc_loss(
            g.row(i).as_slice().expect("standard layout"),
            g_pert.row(i).as_slice().expect("standard layout"),
            m,
        )?;
        num += v;
        masks += w;
    }
    let denom = masks + NC_EPSILON;
    let mut grad = Array2::zeros(g.raw_dim());
    for (i, &m) in mask.iter().enumerate() {
        if m {
            let scale = 2.0 / (d * denom);
            for ((o, a), b) in grad.row_mut(i).iter_mut().zip(g.row(i)).zip(g_pert.row(i)) {
                *o = scale * (a - b);
            }
        }
    }
    Ok(NcBatch {
        value: num / denom,
        mask_rate: if mask.is_empty() { 0.0 } else { masks / mask.len() as f64 },
        grad,
    })
}

/// Adds the weighted neighbor-consistency term to PSZ components.
///
/// With `lambda == 0` the PSZ total is returned unchanged.
pub fn total_loss(psz: &LossBreakdown, nc: f64, mask_rate: f64, lambda: f64) -> LossBreakdown {
    let total = if lambda == 0.0 {
        psz.total
    } else {
        psz.total + lambda * SCALE_NC * nc
    };
    LossBreakdown {
        nc,
        mask_rate,
        total,
        ..*psz
    }
}

/// Unweighted PSZ components of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SampleTerms {
    pub bz: f64,
    /// Raw dark-zone energy, before the regime factor.
    pub dz: f64,
    pub gain: f64,
    pub compact: f64,
    pub regime: u8,
}

impl SampleTerms {
    pub fn total(&self, w: &LossWeights) -> f64 {
        w.alpha * SCALE_BZDZ * self.bz
            + (1.0 - w.alpha) * SCALE_BZDZ * self.dz * f64::from(self.regime)
            + w.beta * self.gain
            + w.gamma * SCALE_COMPACT * self.compact
    }
}

/// Batch PSZ values and the gradient of their mean total with respect to each sample's filters.
#[derive(Debug, Clone)]
pub struct PszBatch {
    pub terms: Vec<SampleTerms>,
    pub grad: Array2<f64>,
}

impl PszBatch {
    /// Batch means of the components; `nc` and `mask_rate` are left at zero.
    pub fn breakdown(&self, w: &LossWeights) -> LossBreakdown {
        let n = self.terms.len() as f64;
        let mean = |f: &dyn Fn(&SampleTerms) -> f64| self.terms.iter().map(f).sum::<f64>() / n;
        LossBreakdown {
            bz: mean(&|t| t.bz),
            dz: mean(&|t| t.dz * f64::from(t.regime)),
            gain: mean(&|t| t.gain),
            compact: mean(&|t| t.compact),
            nc: 0.0,
            total: mean(&|t| t.total(w)),
            mask_rate: 0.0,
        }
    }
}

/// Precomputed per-band data for evaluating the objective on batches.
#[derive(Debug, Clone)]
pub struct BandProblem {
    pub band: Band,
    pub dims: FilterDims,
    /// In-band grid bins on which the loss is evaluated.
    pub bins: Vec<usize>,
    pub weights: LossWeights,
    /// Bright-zone target magnitude, flat across the band.
    pub target: f64,
    dft: DftTable,
    window: Vec<f64>,
}

impl BandProblem {
    pub fn new(grid: &FrequencyGrid, band: Band, dims: FilterDims, weights: LossWeights) -> Result<Self> {
        weights.validate()?;
        if dims.is_empty() {
            return Err(PszError::InvalidParameter("empty filter dimensions".into()));
        }
        if dims.taps > grid.fft_length() {
            return Err(PszError::GridMismatch("filters longer than the fft length".into()));
        }
        let bins = indices(grid.band_mask(band));
        if bins.is_empty() {
            return Err(PszError::EmptyMask("no grid bins fall inside the band"));
        }
        Ok(Self {
            band,
            dims,
            dft: DftTable::new(grid, &bins, dims.taps),
            window: compact_window(dims.taps),
            bins,
            weights,
            target: 1.0,
        })
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Transfer functions on this problem's bins.
    pub fn atf(&self, scene: &SceneConfig, x: &StackedCoords, grid: &FrequencyGrid) -> Result<BandAtf> {
        let atf = build_band_atf(scene, x, grid, self.band, &self.bins)?;
        self.check_atf(&atf)?;
        Ok(atf)
    }

    fn check_atf(&self, atf: &BandAtf) -> Result<()> {
        if atf.band != self.band {
            return Err(PszError::BandMismatch {
                expected: self.band,
                found: atf.band,
            });
        }
        if atf.drivers != self.dims.drivers || atf.bins != self.bins {
            return Err(PszError::GridMismatch("ATF does not match the problem's drivers or bins".into()));
        }
        Ok(())
    }

    /// PSZ terms of every sample and the gradient of their mean total.
    ///
    /// Row `i` of `filters` is the stacked filter vector for the sample whose
    /// transfer functions are `atfs[i]` and whose regime indicator is `regimes[i]`.
    pub fn psz_batch(&self, atfs: &[BandAtf], filters: &ArrayView2<f64>, regimes: &[u8]) -> Result<PszBatch> {
        let b = filters.nrows();
        if b == 0 {
            return Err(PszError::EmptyInput("batch"));
        }
        if atfs.len() != b || regimes.len() != b {
            return Err(PszError::LengthMismatch {
                what: "batch metadata",
                expected: b,
                actual: atfs.len().min(regimes.len()),
            });
        }
        if filters.ncols() != self.dims.len() {
            return Err(PszError::LengthMismatch {
                what: "stacked filter vector",
                expected: self.dims.len(),
                actual: filters.ncols(),
            });
        }
        for atf in atfs {
            self.check_atf(atf)?;
        }
        let rows_per = self.dims.rows();
        let taps = self.dims.taps;
        let nb = self.bins.len();
        let owned;
        let flat = match filters.to_shape((b * rows_per, taps)) {
            Ok(v) => v,
            Err(_) => {
                owned = filters.to_owned();
                owned.to_shape((b * rows_per, taps)).expect("contiguous")
            }
        };
        let (g_re, g_im) = self.dft.forward(&flat.view());
        let mut adj_re = Array2::<f64>::zeros((b * rows_per, nb));
        let mut adj_im = Array2::<f64>::zeros((b * rows_per, nb));

        let w = &self.weights;
        let inv_b = 1.0 / b as f64;
        let mut terms = Vec::with_capacity(b);
        let mut pressure = vec![Complex64::new(0.0, 0.0); nb];
        let mut adj_p = vec![Complex64::new(0.0, 0.0); nb];
        for (s, (atf, &regime)) in atfs.iter().zip(regimes).enumerate() {
            let np = atf.points_per_listener();
            let zone_count = (LISTENERS * 2 * np * nb) as f64;
            let bz_scale = w.alpha * SCALE_BZDZ * inv_b / zone_count;
            let dz_scale = (1.0 - w.alpha) * SCALE_BZDZ * f64::from(regime) * inv_b / zone_count;
            let mut bz = 0.0;
            let mut dz = 0.0;
            for j in 0..LISTENERS {
                for c in 0..2 {
                    for l in 0..LISTENERS {
                        for p in 0..np {
                            pressure.fill(Complex64::new(0.0, 0.0));
                            for m in 0..self.dims.drivers {
                                let r = s * rows_per + self.dims.row(j, c, m);
                                let h = atf.row(l, p, m);
                                let (gr, gi) = (g_re.row(r), g_im.row(r));
                                for q in 0..nb {
                                    pressure[q] += h[q] * Complex64::new(gr[q], gi[q]);
                                }
                            }
                            if l == j {
                                for (a, pv) in adj_p.iter_mut().zip(&pressure) {
                                    let mag = pv.norm();
                                    let e = mag - self.target;
                                    bz += e * e;
                                    *a = if mag > 0.0 {
                                        pv * (2.0 * e * bz_scale / mag)
                                    } else {
                                        Complex64::new(0.0, 0.0)
                                    };
                                }
                            } else {
                                for (a, pv) in adj_p.iter_mut().zip(&pressure) {
                                    dz += pv.norm_sqr();
                                    *a = pv * (2.0 * dz_scale);
                                }
                            }
                            if l != j && dz_scale == 0.0 {
                                continue;
                            }
                            for m in 0..self.dims.drivers {
                                let r = s * rows_per + self.dims.row(j, c, m);
                                let h = atf.row(l, p, m);
                                let mut are = adj_re.row_mut(r);
                                let mut aim = adj_im.row_mut(r);
                                for q in 0..nb {
                                    let v = h[q].conj() * adj_p[q];
                                    are[q] += v.re;
                                    aim[q] += v.im;
                                }
                            }
                        }
                    }
                }
            }

            let gain_count = (rows_per * nb) as f64;
            let gain_scale = w.beta * inv_b / gain_count;
            let mut gain = 0.0;
            for r in s * rows_per..(s + 1) * rows_per {
                for q in 0..nb {
                    let g = Complex64::new(g_re[[r, q]], g_im[[r, q]]);
                    let mag = g.norm();
                    let e = mag - w.g_max;
                    if e > 0.0 {
                        gain += e * e;
                        let a = g * (2.0 * e * gain_scale / mag);
                        adj_re[[r, q]] += a.re;
                        adj_im[[r, q]] += a.im;
                    }
                }
            }

            let row = filters.row(s);
            let compact: f64 = row
                .iter()
                .enumerate()
                .map(|(i, v)| self.window[i % taps] * v * v)
                .sum::<f64>()
                / self.dims.len() as f64;

            terms.push(SampleTerms {
                bz: bz / zone_count,
                dz: dz / zone_count,
                gain: gain / gain_count,
                compact,
                regime,
            });
        }

        let grad_rows = self.dft.backward(&adj_re.view(), &adj_im.view());
        let mut grad = grad_rows
            .into_shape_with_order((b, self.dims.len()))
            .expect("row-major");
        let compact_scale = w.gamma * SCALE_COMPACT * inv_b * 2.0 / self.dims.len() as f64;
        for (mut grow, frow) in grad.rows_mut().into_iter().zip(filters.rows()) {
            for (i, (o, v)) in grow.iter_mut().zip(frow).enumerate() {
                *o += compact_scale * self.window[i % taps] * v;
            }
        }
        Ok(PszBatch { terms, grad })
    }

    /// Single-sample PSZ terms with the gradient of the weighted total.
    pub fn psz_loss(&self, atf: &BandAtf, g: &[f64], regime: u8) -> Result<(SampleTerms, Vec<f64>)> {
        let view = ArrayView2::from_shape((1, g.len()), g).map_err(|_| PszError::LengthMismatch {
            what: "stacked filter vector",
            expected: self.dims.len(),
            actual: g.len(),
        })?;
        let batch = self.psz_batch(std::slice::from_ref(atf), &view, &[regime])?;
        Ok((batch.terms[0], batch.grad.into_raw_vec_and_offset().0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acoustics::build_atf_set;
    use crate::filters::{render_pressure_freq, Channel, FilterSet};
    use crate::geometry::{ArrayGeometry, Driver, Point2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn field_from(values: &[Complex64], nb: usize) -> PressureField {
        let mut f = PressureField::zeros((0..nb).collect(), 1);
        f.data.copy_from_slice(values);
        f
    }

    #[test]
    fn bright_zone_trivial_cases() {
        let nb = 3;
        let ones = vec![Complex64::new(0.0, 1.0); 4 * nb];
        let f = field_from(&ones, nb);
        let mask = vec![true; nb];
        assert_eq!(bright_zone_loss(&f, 0, &[1.0; 3], &mask).unwrap(), 0.0);
        let zero = PressureField::zeros((0..nb).collect(), 1);
        assert_eq!(bright_zone_loss(&zero, 1, &[1.0; 3], &mask).unwrap(), 1.0);
        assert!(matches!(
            bright_zone_loss(&zero, 1, &[1.0; 3], &[false; 3]),
            Err(PszError::EmptyMask(_))
        ));
    }

    #[test]
    fn dark_zone_trivial_cases() {
        let nb = 4;
        let mask = vec![true, false, true, true];
        let zero = PressureField::zeros((0..nb).collect(), 2);
        assert_eq!(dark_zone_loss(&zero, 0, &mask).unwrap(), 0.0);
        let mut f = PressureField::zeros((0..nb).collect(), 2);
        f.data.fill(Complex64::from_polar(2.0, 0.7));
        assert!((dark_zone_loss(&f, 1, &mask).unwrap() - 4.0).abs() < 1e-12);
        assert!(matches!(dark_zone_loss(&f, 1, &[false; 4]), Err(PszError::EmptyMask(_))));
    }

    #[test]
    fn zone_losses_match_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let nb = 7;
        let ne = 2;
        let mut f = PressureField::zeros((0..nb).collect(), ne);
        for v in &mut f.data {
            *v = Complex64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        }
        let target: Vec<f64> = (0..nb).map(|_| rng.random_range(0.5..1.5)).collect();
        let mask: Vec<bool> = (0..nb).map(|i| i % 3 != 1).collect();
        for k in 0..2 {
            let (mut bz, mut dz, mut n) = (0.0, 0.0, 0.0);
            for p in 0..2 * ne {
                for q in 0..nb {
                    if mask[q] {
                        let v = f.data[(k * 2 * ne + p) * nb + q];
                        bz += ((v.re * v.re + v.im * v.im).sqrt() - target[q]).powi(2);
                        dz += v.re * v.re + v.im * v.im;
                        n += 1.0;
                    }
                }
            }
            assert!((bright_zone_loss(&f, k, &target, &mask).unwrap() - bz / n).abs() < 1e-12);
            assert!((dark_zone_loss(&f, k, &mask).unwrap() - dz / n).abs() < 1e-12);
        }
    }

    #[test]
    fn gain_penalty_cases() {
        let dims = FilterDims { drivers: 1, taps: 1 };
        let nb = 5;
        let mut resp = FilterResponse {
            dims,
            bins: (0..nb).collect(),
            data: vec![Complex64::new(0.0, 3.0); dims.rows() * nb],
        };
        let mask = vec![true; nb];
        assert_eq!(gain_penalty(&resp, &mask, 4.0).unwrap(), 0.0);
        resp.data[7] = Complex64::new(0.0, 5.0);
        let count = (dims.rows() * nb) as f64;
        assert!((gain_penalty(&resp, &mask, 4.0).unwrap() - 1.0 / count).abs() < 1e-15);
        resp.data[7] = Complex64::new(0.0, 6.0);
        assert!((gain_penalty(&resp, &mask, 4.0).unwrap() - 4.0 / count).abs() < 1e-15);
    }

    #[test]
    fn compactness_cases() {
        let dims = FilterDims { drivers: 2, taps: 8 };
        let w = compact_window(8);
        assert_eq!(w, vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]);
        let mut bank = FilterBank::zeros(Band::Woofer, dims);
        assert_eq!(compactness_penalty(&bank, &w).unwrap(), 0.0);
        bank.filter_mut(0, Channel::Left, 0)[2] = 5.0;
        assert_eq!(compactness_penalty(&bank, &w).unwrap(), 0.0);
        let mut bank = FilterBank::zeros(Band::Woofer, dims);
        bank.filter_mut(1, Channel::Right, 1)[7] = 1.0;
        assert!((compactness_penalty(&bank, &w).unwrap() - 1.0 / dims.len() as f64).abs() < 1e-15);
        assert!(compactness_penalty(&bank, &w[..7]).is_err());
        assert_eq!(compact_window(1), vec![1.0]);
        assert_eq!(compact_window(2), vec![0.0, 1.0]);
    }

    #[test]
    fn perturbation_support_and_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_perturbation(&mut rng, 0.0), [0.0; 4]);
        let delta = 0.01;
        let n = 100_000;
        let mut sums = [0.0; 4];
        for _ in 0..n {
            let d = sample_perturbation(&mut rng, delta);
            for (s, v) in sums.iter_mut().zip(d) {
                assert!(v.abs() <= delta);
                *s += v;
            }
        }
        let bound = 3.0 * delta / (3.0 * n as f64).sqrt();
        for s in sums {
            assert!((s / n as f64).abs() < bound);
        }
        let a = sample_perturbation(&mut ChaCha8Rng::seed_from_u64(9), delta);
        let b = sample_perturbation(&mut ChaCha8Rng::seed_from_u64(9), delta);
        assert_eq!(a, b);
    }

    #[test]
    fn nc_cases() {
        let g = vec![0.3; 10];
        assert_eq!(nc_loss(&g, &g, true).unwrap(), (0.0, 1.0));
        let gp: Vec<f64> = g.iter().map(|v| v - 1.0).collect();
        assert_eq!(nc_loss(&g, &gp, true).unwrap(), (1.0, 1.0));
        assert_eq!(nc_loss(&g, &gp, false).unwrap(), (0.0, 0.0));
        assert!(nc_loss(&g, &gp[..3], true).is_err());

        let a = Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64 * 0.1);
        let b = Array2::from_shape_fn((3, 4), |(i, j)| ((i + j) as f64).sin());
        let masked = nc_batch(&a.view(), &b.view(), &[false; 3]).unwrap();
        assert_eq!(masked.value, 0.0);
        assert_eq!(masked.mask_rate, 0.0);
        assert!(masked.grad.iter().all(|&v| v == 0.0));

        let mask = [true, false, true];
        let ab = nc_batch(&a.view(), &b.view(), &mask).unwrap();
        let ba = nc_batch(&b.view(), &a.view(), &mask).unwrap();
        assert_eq!(ab.value, ba.value);
        assert!((ab.mask_rate - 2.0 / 3.0).abs() < 1e-15);
        let oracle = ((&a - &b).row(0).mapv(|v| v * v).sum() / 4.0 + (&a - &b).row(2).mapv(|v| v * v).sum() / 4.0)
            / (2.0 + NC_EPSILON);
        assert!((ab.value - oracle).abs() < 1e-15);
    }

    #[test]
    fn total_loss_arithmetic() {
        let psz = LossBreakdown {
            bz: 0.1,
            dz: 0.2,
            gain: 0.0,
            compact: 0.01,
            total: 123.456789,
            ..LossBreakdown::default()
        };
        assert_eq!(total_loss(&psz, 55.0, 1.0, 0.0).total.to_bits(), psz.total.to_bits());
        assert_eq!(total_loss(&psz, 0.0, 1.0, 0.75).total, psz.total);
        let t = total_loss(&psz, 2e-3, 1.0, 0.75);
        assert!((t.total - psz.total - 1.5).abs() < 1e-12);
        assert_eq!(t.nc, 2e-3);
    }

    fn toy_scene() -> SceneConfig {
        SceneConfig {
            array: ArrayGeometry {
                drivers: vec![
                    Driver {
                        position: Point2::new(-0.1, 0.0),
                        band: Band::Woofer,
                    },
                    Driver {
                        position: Point2::new(0.12, 0.0),
                        band: Band::Woofer,
                    },
                ],
            },
            ..SceneConfig::default()
        }
    }

    /// End-to-end oracle: render every program and channel with the public renderer and
    /// score the result with the standalone term functions.
    fn oracle_terms(scene: &SceneConfig, x: &StackedCoords, grid: &FrequencyGrid, bank: &FilterBank, w: &LossWeights, regime: u8) -> (SampleTerms, f64) {
        let atfs = build_atf_set(scene, x, grid).unwrap();
        let filters = FilterSet {
            woofer: Some(bank.clone()),
            tweeter: None,
        };
        let mask = grid.band_mask(Band::Woofer).to_vec();
        let target = vec![1.0; grid.len()];
        let (mut bz, mut dz) = (0.0, 0.0);
        for j in 0..2 {
            for c in Channel::BOTH {
                let field = render_pressure_freq(&atfs, &filters, grid, j, &[c]).unwrap();
                bz += bright_zone_loss(&field, j, &target, &mask).unwrap() / 4.0;
                dz += dark_zone_loss(&field, 1 - j, &mask).unwrap() / 4.0;
            }
        }
        let resp = crate::filters::frequency_response(bank, grid).unwrap();
        let terms = SampleTerms {
            bz,
            dz,
            gain: gain_penalty(&resp, &mask, w.g_max).unwrap(),
            compact: compactness_penalty(bank, &compact_window(bank.dims.taps)).unwrap(),
            regime,
        };
        (terms, terms.total(w))
    }

    #[test]
    fn psz_matches_end_to_end_oracle_and_regime_rules() {
        let grid = FrequencyGrid::new(4000.0, 32).unwrap();
        let scene = toy_scene();
        let dims = FilterDims { drivers: 2, taps: 6 };
        let w = LossWeights {
            g_max: 0.05,
            ..LossWeights::default()
        };
        let problem = BandProblem::new(&grid, Band::Woofer, dims, w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = StackedCoords::new(Point2::new(-0.3, 1.0), Point2::new(0.35, 1.2));
        let g: Vec<f64> = (0..dims.len()).map(|_| rng.random_range(-0.2..0.2)).collect();
        let bank = FilterBank::unpack(Band::Woofer, dims, g.clone()).unwrap();
        let atf = problem.atf(&scene, &x, &grid).unwrap();
        for regime in [0u8, 1] {
            let (terms, _) = problem.psz_loss(&atf, &g, regime).unwrap();
            let (oracle, oracle_total) = oracle_terms(&scene, &x, &grid, &bank, &w, regime);
            assert!(oracle.gain > 0.0);
            for (a, b) in [
                (terms.bz, oracle.bz),
                (terms.dz, oracle.dz),
                (terms.gain, oracle.gain),
                (terms.compact, oracle.compact),
                (terms.total(&w), oracle_total),
            ] {
                assert!((a - b).abs() <= 1e-10 * b.abs().max(1e-12), "{a} vs {b}");
            }
        }

        // With r = 0 the dark-zone energy drops out of the total; with alpha = 1 it never enters.
        let (t0, _) = problem.psz_loss(&atf, &g, 0).unwrap();
        assert!(t0.dz > 0.0);
        let no_dz = w.alpha * SCALE_BZDZ * t0.bz + w.beta * t0.gain + w.gamma * SCALE_COMPACT * t0.compact;
        assert!((t0.total(&w) - no_dz).abs() < 1e-12 * no_dz);
        let alt = LossWeights { alpha: 1.0, ..w };
        let t1 = SampleTerms { regime: 1, ..t0 };
        let t2 = SampleTerms { dz: 1e6, ..t1 };
        assert_eq!(t1.total(&alt), t2.total(&alt));
    }

    #[test]
    fn psz_gradient_matches_finite_differences() {
        let grid = FrequencyGrid::new(2000.0, 16).unwrap();
        let scene = toy_scene();
        let dims = FilterDims { drivers: 2, taps: 16 };
        let problem = BandProblem::new(&grid, Band::Woofer, dims, LossWeights {
            g_max: 0.02,
            ..LossWeights::default()
        })
        .unwrap();
        assert_eq!(problem.bins.len(), 8);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = StackedCoords::new(Point2::new(-0.2, 0.9), Point2::new(0.3, 1.3));
        let atf = problem.atf(&scene, &x, &grid).unwrap();
        let g: Vec<f64> = (0..dims.len()).map(|_| rng.random_range(-0.05..0.05)).collect();
        for regime in [0u8, 1] {
            let (_, grad) = problem.psz_loss(&atf, &g, regime).unwrap();
            let f = |v: &[f64]| problem.psz_loss(&atf, v, regime).unwrap().0.total(&problem.weights);
            let h = 1e-6;
            for i in 0..g.len() {
                let mut p = g.clone();
                p[i] += h;
                let mut m = g.clone();
                m[i] -= h;
                let fd = (f(&p) - f(&m)) / (2.0 * h);
                assert!(
                    (fd - grad[i]).abs() <= 1e-5 * fd.abs().max(grad[i].abs()).max(1e-3),
                    "coefficient {i}: {} vs {fd}",
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn dark_zone_gradient_vanishes_in_overlap_regime() {
        let grid = FrequencyGrid::new(2000.0, 16).unwrap();
        let scene = toy_scene();
        let dims = FilterDims { drivers: 2, taps: 4 };
        let only_dz = LossWeights {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            ..LossWeights::default()
        };
        let problem = BandProblem::new(&grid, Band::Woofer, dims, only_dz).unwrap();
        let x = StackedCoords::new(Point2::new(-0.2, 0.9), Point2::new(-0.1, 1.0));
        let atf = problem.atf(&scene, &x, &grid).unwrap();
        let g: Vec<f64> = (0..dims.len()).map(|i| (i as f64).cos()).collect();
        let (terms, grad) = problem.psz_loss(&atf, &g, 0).unwrap();
        assert!(terms.dz > 0.0);
        assert!(grad.iter().all(|&v| v == 0.0));
        let (_, grad1) = problem.psz_loss(&atf, &g, 1).unwrap();
        assert!(grad1.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn problem_rejects_mismatched_inputs() {
        let grid = FrequencyGrid::new(2000.0, 16).unwrap();
        let dims = FilterDims { drivers: 2, taps: 4 };
        let problem = BandProblem::new(&grid, Band::Woofer, dims, LossWeights::default()).unwrap();
        assert!(matches!(
            BandProblem::new(&grid, Band::Tweeter, dims, LossWeights::default()),
            Err(PszError::EmptyMask(_))
        ));
        let x = StackedCoords::new(Point2::new(-0.2, 0.9), Point2::new(0.3, 1.3));
        let atf = problem.atf(&toy_scene(), &x, &grid).unwrap();
        assert!(problem.psz_loss(&atf, &[0.0; 5], 1).is_err());
        let bad = LossWeights {
            alpha: 1.5,
            ..LossWeights::default()
        };
        assert!(BandProblem::new(&grid, Band::Woofer, dims, bad).is_err());
    }
}
