//! FIR filter banks in the stacked layout and pressure rendering.
//!
//! A band's filters are stored as one real vector ordered by program `k`,
//! then audio channel (L before R), then driver `m`, with the tap index
//! innermost. Row `(k, c, m)` therefore starts at `((k * 2 + c) * M + m) * L`.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::acoustics::{atf_to_impulse_response, AtfSet, BandAtf, FrequencyGrid};
use crate::container;
use crate::error::{PszError, Result};
use crate::geometry::{Band, LISTENERS};

/// Audio channel of a program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    Left = 0,
    Right = 1,
}

impl Channel {
    pub const BOTH: [Channel; 2] = [Channel::Left, Channel::Right];
}

/// Shape of one band's filter set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterDims {
    pub drivers: usize,
    pub taps: usize,
}

impl FilterDims {
    /// Number of filter rows `(k, c, m)`.
    pub fn rows(&self) -> usize {
        LISTENERS * 2 * self.drivers
    }

    /// Stacked coefficient count `2 K M L`.
    pub fn len(&self) -> usize {
        self.rows() * self.taps
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn row(&self, program: usize, channel: usize, driver: usize) -> usize {
        (program * 2 + channel) * self.drivers + driver
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub band: Band,
    pub dims: FilterDims,
    taps: Vec<f64>,
}

impl FilterBank {
    pub fn zeros(band: Band, dims: FilterDims) -> Self {
        Self {
            band,
            dims,
            taps: vec![0.0; dims.len()],
        }
    }

    /// Builds a bank from a stacked coefficient vector.
    pub fn unpack(band: Band, dims: FilterDims, stacked: Vec<f64>) -> Result<Self> {
        if stacked.len() != dims.len() {
            return Err(PszError::LengthMismatch {
                what: "stacked filter vector",
                expected: dims.len(),
                actual: stacked.len(),
            });
        }
        if stacked.iter().any(|v| !v.is_finite()) {
            return Err(PszError::NumericalOverflow("filter taps"));
        }
        Ok(Self {
            band,
            dims,
            taps: stacked,
        })
    }

    pub fn pack(&self) -> Vec<f64> {
        self.taps.clone()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.taps
    }

    pub fn filter(&self, program: usize, channel: Channel, driver: usize) -> &[f64] {
        let r = self.dims.row(program, channel as usize, driver);
        &self.taps[r * self.dims.taps..(r + 1) * self.dims.taps]
    }

    pub fn filter_mut(&mut self, program: usize, channel: Channel, driver: usize) -> &mut [f64] {
        let r = self.dims.row(program, channel as usize, driver);
        let l = self.dims.taps;
        &mut self.taps[r * l..(r + 1) * l]
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            band: self.band,
            dims: self.dims,
            taps: self.taps.iter().map(|v| v * s).collect(),
        }
    }

    fn rows_view(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.dims.rows(), self.dims.taps), &self.taps).expect("dims match")
    }
}

/// Complex filter responses indexed `[row(k, c, m)][bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterResponse {
    pub dims: FilterDims,
    pub bins: Vec<usize>,
    pub data: Vec<Complex64>,
}

impl FilterResponse {
    pub fn row(&self, program: usize, channel: usize, driver: usize) -> &[Complex64] {
        let nb = self.bins.len();
        let r = self.dims.row(program, channel, driver);
        &self.data[r * nb..(r + 1) * nb]
    }
}

/// Zero-padded DFT of every filter on the full grid.
pub fn frequency_response(filter: &FilterBank, grid: &FrequencyGrid) -> Result<FilterResponse> {
    let n = grid.fft_length();
    if n < filter.dims.taps {
        return Err(PszError::GridMismatch(format!(
            "fft length {n} shorter than filter length {}",
            filter.dims.taps
        )));
    }
    let fft = FftPlanner::new().plan_fft_forward(n);
    let nb = n / 2 + 1;
    let mut data = Vec::with_capacity(filter.dims.rows() * nb);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for row in filter.taps.chunks_exact(filter.dims.taps) {
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for (b, &v) in buf.iter_mut().zip(row) {
            b.re = v;
        }
        fft.process(&mut buf);
        data.extend_from_slice(&buf[..nb]);
    }
    Ok(FilterResponse {
        dims: filter.dims,
        bins: grid.all_bins(),
        data,
    })
}

/// Dense DFT restricted to a subset of bins, used where gradients are needed.
///
/// `cos[n, b] = cos(w_b n)` and `sin[n, b] = sin(w_b n)`, so for real taps
/// `G = g cos - i g sin`.
#[derive(Debug, Clone)]
pub struct DftTable {
    pub bins: Vec<usize>,
    cos: Array2<f64>,
    sin: Array2<f64>,
}

impl DftTable {
    pub fn new(grid: &FrequencyGrid, bins: &[usize], taps: usize) -> Self {
        let mut cos = Array2::zeros((taps, bins.len()));
        let mut sin = Array2::zeros((taps, bins.len()));
        for n in 0..taps {
            for (j, &b) in bins.iter().enumerate() {
                // Reduce the phase index modulo the fft length to keep the argument small.
                let idx = (n * b) % grid.fft_length();
                let w = 2.0 * std::f64::consts::PI * idx as f64 / grid.fft_length() as f64;
                cos[[n, j]] = w.cos();
                sin[[n, j]] = w.sin();
            }
        }
        Self {
            bins: bins.to_vec(),
            cos,
            sin,
        }
    }

    pub fn taps(&self) -> usize {
        self.cos.nrows()
    }

    /// Responses of stacked rows `(R x L)`, returned as real and imaginary `(R x bins)` parts.
    pub fn forward(&self, rows: &ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
        let re = rows.dot(&self.cos);
        let im = -rows.dot(&self.sin);
        (re, im)
    }

    /// Adjoint of [`forward`](Self::forward): maps response gradients back onto taps.
    pub fn backward(&self, adj_re: &ArrayView2<f64>, adj_im: &ArrayView2<f64>) -> Array2<f64> {
        adj_re.dot(&self.cos.t()) - adj_im.dot(&self.sin.t())
    }

    pub fn response(&self, filter: &FilterBank) -> FilterResponse {
        let (re, im) = self.forward(&filter.rows_view());
        FilterResponse {
            dims: filter.dims,
            bins: self.bins.clone(),
            data: re
                .iter()
                .zip(im.iter())
                .map(|(&a, &b)| Complex64::new(a, b))
                .collect(),
        }
    }
}

/// Filters for both bands; either may be absent.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FilterSet {
    pub woofer: Option<FilterBank>,
    pub tweeter: Option<FilterBank>,
}

impl FilterSet {
    pub fn band(&self, band: Band) -> Option<&FilterBank> {
        match band {
            Band::Woofer => self.woofer.as_ref(),
            Band::Tweeter => self.tweeter.as_ref(),
        }
    }

    pub fn banks(&self) -> impl Iterator<Item = &FilterBank> {
        self.woofer.iter().chain(self.tweeter.iter())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            woofer: self.woofer.as_ref().map(|f| f.scaled(s)),
            tweeter: self.tweeter.as_ref().map(|f| f.scaled(s)),
        }
    }
}

/// Complex pressure indexed `[k][point][bin]`, point = ear * N_e + e (left ear first).
#[derive(Debug, Clone, PartialEq)]
pub struct PressureField {
    pub bins: Vec<usize>,
    pub points_per_ear: usize,
    pub data: Vec<Complex64>,
}

impl PressureField {
    pub fn zeros(bins: Vec<usize>, points_per_ear: usize) -> Self {
        let n = LISTENERS * 2 * points_per_ear * bins.len();
        Self {
            bins,
            points_per_ear,
            data: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    pub fn points_per_listener(&self) -> usize {
        2 * self.points_per_ear
    }

    pub fn at(&self, k: usize, point: usize) -> &[Complex64] {
        let nb = self.bins.len();
        let start = (k * self.points_per_listener() + point) * nb;
        &self.data[start..start + nb]
    }

    pub fn at_mut(&mut self, k: usize, point: usize) -> &mut [Complex64] {
        let nb = self.bins.len();
        let start = (k * self.points_per_listener() + point) * nb;
        &mut self.data[start..start + nb]
    }

    /// Listener `k`'s pressures over all its control points, `[point][bin]`.
    pub fn listener(&self, k: usize) -> &[Complex64] {
        let n = self.points_per_listener() * self.bins.len();
        &self.data[k * n..(k + 1) * n]
    }
}

/// Adds `sum_m H[k, point, m] G[program, channel, m]` into `field` wherever `mask[bin]` holds.
pub(crate) fn accumulate_pressure(atf: &BandAtf, response: &FilterResponse, program: usize, channel: usize, mask: Option<&[bool]>, field: &mut PressureField) {
    for k in 0..LISTENERS {
        for point in 0..atf.points_per_listener() {
            let out = field.at_mut(k, point);
            for m in 0..atf.drivers {
                let h = atf.row(k, point, m);
                let g = response.row(program, channel, m);
                for (bin, o) in out.iter_mut().enumerate() {
                    if mask.is_none_or(|mk| mk[bin]) {
                        *o += h[bin] * g[bin];
                    }
                }
            }
        }
    }
}

fn check_band(atf: &BandAtf, filter: &FilterBank, grid: &FrequencyGrid) -> Result<()> {
    if atf.drivers != filter.dims.drivers {
        return Err(PszError::GridMismatch(format!(
            "{} ATFs have {} drivers, filters have {}",
            filter.band, atf.drivers, filter.dims.drivers
        )));
    }
    if filter.dims.taps > grid.fft_length() {
        return Err(PszError::GridMismatch("filters longer than the fft length".into()));
    }
    if atf.bins.iter().any(|&b| b >= grid.len()) {
        return Err(PszError::GridMismatch("ATF bins outside the grid".into()));
    }
    Ok(())
}

/// Pressure at every control point with program `program` active on the given channels.
///
/// Each band contributes only inside its own frequency band (digital crossover),
/// and every active channel is driven by a unit input.
pub fn render_pressure_freq(atfs: &AtfSet, filters: &FilterSet, grid: &FrequencyGrid, program: usize, channels: &[Channel]) -> Result<PressureField> {
    let mut field: Option<PressureField> = None;
    for bank in filters.banks() {
        let atf = atfs
            .band(bank.band)
            .ok_or_else(|| PszError::GridMismatch(format!("no {} ATFs in set", bank.band)))?;
        check_band(atf, bank, grid)?;
        let f = field.get_or_insert_with(|| PressureField::zeros(atf.bins.clone(), atf.points_per_ear));
        if f.bins != atf.bins || f.points_per_ear != atf.points_per_ear {
            return Err(PszError::GridMismatch("bands cover different bins".into()));
        }
        let table = DftTable::new(grid, &atf.bins, bank.dims.taps);
        let response = table.response(bank);
        let band_mask = grid.band_mask(bank.band);
        let mask: Vec<bool> = atf.bins.iter().map(|&b| band_mask[b]).collect();
        for &c in channels {
            accumulate_pressure(atf, &response, program, c as usize, Some(&mask), f);
        }
    }
    field.ok_or(PszError::EmptyInput("filter set has no bands"))
}

/// Impulse responses of one band, `[k][point][m]`, each `fft_length` samples.
#[derive(Debug, Clone)]
pub struct BandRirs {
    pub band: Band,
    pub points_per_ear: usize,
    pub drivers: usize,
    pub data: Vec<Vec<f64>>,
}

impl BandRirs {
    pub fn from_atf(atf: &BandAtf, grid: &FrequencyGrid) -> Result<Self> {
        if atf.bins != grid.all_bins() {
            return Err(PszError::GridMismatch("impulse responses need full-grid ATFs".into()));
        }
        let data = atf
            .data
            .chunks_exact(atf.bins.len())
            .map(|spec| atf_to_impulse_response(spec, grid))
            .collect::<Result<_>>()?;
        Ok(Self {
            band: atf.band,
            points_per_ear: atf.points_per_ear,
            drivers: atf.drivers,
            data,
        })
    }

    fn rir(&self, k: usize, point: usize, m: usize) -> &[f64] {
        &self.data[(k * 2 * self.points_per_ear + point) * self.drivers + m]
    }
}

/// Full linear convolution.
pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Time-domain rendering `p = sum_b sum_m h * (sum_c g * s)`, one output per `(k, point)`.
pub fn render_pressure_time(rirs: &[BandRirs], filters: &FilterSet, program: usize, channels: &[Channel], probe: &[f64]) -> Result<Vec<Vec<f64>>> {
    let mut outputs: Option<Vec<Vec<f64>>> = None;
    for bank in filters.banks() {
        let r = rirs
            .iter()
            .find(|r| r.band == bank.band)
            .ok_or_else(|| PszError::GridMismatch(format!("no {} impulse responses", bank.band)))?;
        if r.drivers != bank.dims.drivers {
            return Err(PszError::GridMismatch("driver count mismatch".into()));
        }
        let points = 2 * r.points_per_ear;
        let outs = outputs.get_or_insert_with(|| vec![Vec::new(); LISTENERS * points]);
        for m in 0..r.drivers {
            let mut drive: Vec<f64> = Vec::new();
            for &c in channels {
                add_into(&mut drive, &convolve(bank.filter(program, c, m), probe));
            }
            for k in 0..LISTENERS {
                for point in 0..points {
                    add_into(&mut outs[k * points + point], &convolve(r.rir(k, point, m), &drive));
                }
            }
        }
    }
    outputs.ok_or(PszError::EmptyInput("filter set has no bands"))
}

fn add_into(acc: &mut Vec<f64>, v: &[f64]) {
    if acc.len() < v.len() {
        acc.resize(v.len(), 0.0);
    }
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FilterHeader {
    kind: String,
    version: u32,
    band: Band,
    programs: usize,
    channels: usize,
    drivers: usize,
    taps: usize,
    count: usize,
}

const FILTER_KIND: &str = "filter-bank";

/// Writes a filter bank as a JSON header line followed by little-endian doubles in stacking order.
pub fn export_filter_bank(bank: &FilterBank, path: &Path) -> Result<()> {
    let header = FilterHeader {
        kind: FILTER_KIND.into(),
        version: 1,
        band: bank.band,
        programs: LISTENERS,
        channels: 2,
        drivers: bank.dims.drivers,
        taps: bank.dims.taps,
        count: bank.dims.len(),
    };
    container::write_file(path, &container::encode(&header, &bank.taps)?)
}

pub fn import_filter_bank(path: &Path) -> Result<FilterBank> {
    let bytes = container::read_file(path)?;
    let (h, values) =
        container::decode::<FilterHeader>(&bytes, |h| h.count).map_err(PszError::CorruptContainer)?;
    if h.kind != FILTER_KIND || h.version != 1 || h.programs != LISTENERS || h.channels != 2 {
        return Err(PszError::CorruptContainer("not a filter-bank v1 container".into()));
    }
    FilterBank::unpack(
        h.band,
        FilterDims {
            drivers: h.drivers,
            taps: h.taps,
        },
        values,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acoustics::{build_atf_set, real_dft};
    use crate::geometry::{ArrayGeometry, Driver, Point2, SceneConfig, StackedCoords};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_bank(rng: &mut ChaCha8Rng, band: Band, dims: FilterDims) -> FilterBank {
        let v = (0..dims.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        FilterBank::unpack(band, dims, v).unwrap()
    }

    #[test]
    fn stacked_length_formula() {
        let d = FilterDims {
            drivers: 8,
            taps: 512,
        };
        assert_eq!(d.len(), 16384);
    }

    #[test]
    fn pack_layout_and_errors() {
        let dims = FilterDims { drivers: 3, taps: 4 };
        let mut bank = FilterBank::zeros(Band::Woofer, dims);
        assert_eq!(bank.pack(), vec![0.0; 48]);
        bank.filter_mut(1, Channel::Right, 2)[3] = 7.0;
        // k = 1, c = R, m = 2, n = 3 -> ((1 * 2 + 1) * 3 + 2) * 4 + 3
        assert_eq!(bank.pack()[47], 7.0);
        bank.filter_mut(0, Channel::Right, 0)[0] = 5.0;
        assert_eq!(bank.pack()[12], 5.0);
        assert!(matches!(
            FilterBank::unpack(Band::Woofer, dims, vec![0.0; 47]),
            Err(PszError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn impulse_responses_are_flat_or_allpass() {
        let grid = FrequencyGrid::new(1000.0, 64).unwrap();
        let dims = FilterDims { drivers: 1, taps: 8 };
        let mut bank = FilterBank::zeros(Band::Woofer, dims);
        bank.filter_mut(0, Channel::Left, 0)[0] = 1.0;
        bank.filter_mut(1, Channel::Left, 0)[5] = 1.0;
        let r = frequency_response(&bank, &grid).unwrap();
        for z in r.row(0, 0, 0) {
            assert!((z - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
        for z in r.row(1, 0, 0) {
            assert!((z.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fft_response_matches_naive_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grid = FrequencyGrid::new(8000.0, 64).unwrap();
        let dims = FilterDims { drivers: 2, taps: 16 };
        let bank = random_bank(&mut rng, Band::Woofer, dims);
        let fast = frequency_response(&bank, &grid).unwrap();
        let table = DftTable::new(&grid, &grid.all_bins(), 16).response(&bank);
        for r in 0..dims.rows() {
            let g = &bank.as_slice()[r * 16..(r + 1) * 16];
            for b in 0..grid.len() {
                let w = grid.omega(b);
                let naive: Complex64 = g
                    .iter()
                    .enumerate()
                    .map(|(n, &v)| Complex64::from_polar(v, -w * n as f64))
                    .sum();
                assert!((fast.data[r * grid.len() + b] - naive).norm() < 1e-10);
                assert!((table.data[r * grid.len() + b] - naive).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn dft_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let grid = FrequencyGrid::new(8000.0, 64).unwrap();
        let table = DftTable::new(&grid, &[3, 7, 20], 8);
        let g = Array2::from_shape_fn((2, 8), |_| rng.random_range(-1.0..1.0));
        let ar = Array2::from_shape_fn((2, 3), |_| rng.random_range(-1.0..1.0));
        let ai = Array2::from_shape_fn((2, 3), |_| rng.random_range(-1.0..1.0));
        let (re, im) = table.forward(&g.view());
        let lhs = (&re * &ar).sum() + (&im * &ai).sum();
        let rhs = (&g * &table.backward(&ar.view(), &ai.view())).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    fn small_scene(m: usize) -> SceneConfig {
        let drivers = (0..m)
            .map(|i| Driver {
                position: Point2::new(-0.3 + 0.2 * i as f64, 0.0),
                band: Band::Woofer,
            })
            .chain(std::iter::once(Driver {
                position: Point2::new(0.0, 0.05),
                band: Band::Tweeter,
            }))
            .collect();
        SceneConfig {
            array: ArrayGeometry { drivers },
            ..SceneConfig::default()
        }
    }

    #[test]
    fn zero_and_homogeneity() {
        let scene = small_scene(2);
        let grid = FrequencyGrid::new(4000.0, 64).unwrap();
        let x = StackedCoords::new(Point2::new(-0.4, 1.1), Point2::new(0.3, 1.0));
        let atfs = build_atf_set(&scene, &x, &grid).unwrap();
        let dims = FilterDims { drivers: 2, taps: 16 };
        let zero = FilterSet {
            woofer: Some(FilterBank::zeros(Band::Woofer, dims)),
            tweeter: None,
        };
        let p = render_pressure_freq(&atfs, &zero, &grid, 0, &Channel::BOTH).unwrap();
        assert!(p.data.iter().all(|z| z.norm() == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = FilterSet {
            woofer: Some(random_bank(&mut rng, Band::Woofer, dims)),
            tweeter: None,
        };
        let p1 = render_pressure_freq(&atfs, &f, &grid, 1, &Channel::BOTH).unwrap();
        let p2 = render_pressure_freq(&atfs, &f.scaled(2.0), &grid, 1, &Channel::BOTH).unwrap();
        for (a, b) in p1.data.iter().zip(&p2.data) {
            assert!((a * 2.0 - b).norm() <= 1e-12 * (1.0 + b.norm()));
        }
    }

    #[test]
    fn superposition_over_programs() {
        let scene = small_scene(3);
        let grid = FrequencyGrid::new(4000.0, 64).unwrap();
        let x = StackedCoords::new(Point2::new(-0.4, 1.1), Point2::new(0.3, 1.0));
        let atfs = build_atf_set(&scene, &x, &grid).unwrap();
        let dims = FilterDims { drivers: 3, taps: 8 };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let full = random_bank(&mut rng, Band::Woofer, dims);
        // Split into program-1-only and program-2-only banks.
        let mut only = [full.clone(), full.clone()];
        for (j, bank) in only.iter_mut().enumerate() {
            for c in Channel::BOTH {
                for m in 0..3 {
                    bank.filter_mut(1 - j, c, m).fill(0.0);
                }
            }
        }
        let render = |bank: &FilterBank, j| {
            let set = FilterSet {
                woofer: Some(bank.clone()),
                tweeter: None,
            };
            render_pressure_freq(&atfs, &set, &grid, j, &Channel::BOTH).unwrap()
        };
        for j in 0..2 {
            let a = render(&only[j], j);
            let both = render(&full, j);
            for (u, v) in a.data.iter().zip(&both.data) {
                assert!((u - v).norm() <= 1e-15 * (1.0 + v.norm()));
            }
        }
    }

    #[test]
    fn time_identity_and_commutativity() {
        let probe = [1.0];
        assert_eq!(convolve(&[1.0], &probe), vec![1.0]);
        let a = [0.3, -1.0, 2.0, 0.5];
        let b = [1.5, 0.25, -0.75];
        assert_eq!(convolve(&a, &b), convolve(&b, &a));
    }

    #[test]
    fn frequency_rendering_matches_time_oracle() {
        let scene = small_scene(2);
        let grid = FrequencyGrid::new(8000.0, 128).unwrap();
        let x = StackedCoords::new(Point2::new(-0.4, 1.1), Point2::new(0.3, 1.0));
        let atfs = build_atf_set(&scene, &x, &grid).unwrap();
        let dims = FilterDims { drivers: 2, taps: 16 };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let set = FilterSet {
            woofer: Some(random_bank(&mut rng, Band::Woofer, dims)),
            tweeter: None,
        };
        let rirs = [BandRirs::from_atf(atfs.woofer.as_ref().unwrap(), &grid).unwrap()];
        let fd = render_pressure_freq(&atfs, &set, &grid, 0, &[Channel::Left]).unwrap();
        let td = render_pressure_time(&rirs, &set, 0, &[Channel::Left], &[1.0]).unwrap();
        let mask = grid.band_mask(Band::Woofer);
        for k in 0..2 {
            for p in 0..2 {
                let spec = real_dft(&td[k * 2 + p], grid.fft_length());
                for (b, z) in fd.at(k, p).iter().enumerate() {
                    if mask[b] {
                        assert!((spec[b] - z).norm() <= 1e-6 * z.norm().max(1e-12));
                    } else {
                        assert_eq!(z.norm(), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn filter_container_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bank = random_bank(&mut rng, Band::Tweeter, FilterDims { drivers: 2, taps: 5 });
        export_filter_bank(&bank, &path).unwrap();
        assert_eq!(import_filter_bank(&path).unwrap(), bank);
    }

    mod props {
        use super::*;
        use proptest::prelude::{any, proptest, prop_assert_eq};
        use rand::Rng;

        proptest! {
            #[test]
            fn unpack_pack_identity(m in 1usize..5, l in 1usize..9, seed in any::<u64>()) {
                let dims = FilterDims { drivers: m, taps: l };
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let v: Vec<f64> = (0..dims.len()).map(|_| rng.random_range(-5.0..5.0)).collect();
                let bank = FilterBank::unpack(Band::Woofer, dims, v.clone()).unwrap();
                prop_assert_eq!(bank.pack(), v);
            }
        }
    }
}
