//! Free-field acoustic transfer functions from drivers to ear control points.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{PszError, Result};
use crate::geometry::{ear_points, Band, Point2, SceneConfig, StackedCoords, LISTENERS};

/// Non-negative half of a DFT grid with the split-band masks.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    sample_rate: f64,
    fft_length: usize,
    bins: Vec<f64>,
    woofer_mask: Vec<bool>,
    tweeter_mask: Vec<bool>,
}

impl FrequencyGrid {
    pub fn new(sample_rate: f64, fft_length: usize) -> Result<Self> {
        if !(sample_rate > 0.0) || fft_length < 2 || fft_length % 2 != 0 {
            return Err(PszError::InvalidParameter(format!(
                "frequency grid needs fs > 0 and an even fft length >= 2 (got {sample_rate}, {fft_length})"
            )));
        }
        let bins: Vec<f64> = (0..=fft_length / 2)
            .map(|i| i as f64 * sample_rate / fft_length as f64)
            .collect();
        let mask = |band: Band| bins.iter().map(|&f| band.contains(f)).collect();
        Ok(Self {
            woofer_mask: mask(Band::Woofer),
            tweeter_mask: mask(Band::Tweeter),
            sample_rate,
            fft_length,
            bins,
        })
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn fft_length(&self) -> usize {
        self.fft_length
    }

    /// Bin center frequencies in Hz.
    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn band_mask(&self, band: Band) -> &[bool] {
        match band {
            Band::Woofer => &self.woofer_mask,
            Band::Tweeter => &self.tweeter_mask,
        }
    }

    pub fn band_bins(&self, band: Band) -> Vec<usize> {
        indices(self.band_mask(band))
    }

    /// Normalized angular frequency (rad/sample) of bin `i`.
    pub fn omega(&self, i: usize) -> f64 {
        2.0 * PI * i as f64 / self.fft_length as f64
    }

    pub fn all_bins(&self) -> Vec<usize> {
        (0..self.bins.len()).collect()
    }
}

pub(crate) fn indices(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect()
}

/// Free-field monopole response `exp(-j 2 pi f r / c) / (4 pi r)`.
pub fn point_source_response(src: Point2, rcv: Point2, f: f64, c_sound: f64) -> Result<Complex64> {
    let r = src.distance(rcv);
    if r == 0.0 {
        return Err(PszError::DegenerateGeometry { x: src.x, y: src.y });
    }
    Ok(Complex64::from_polar(1.0 / (4.0 * PI * r), -2.0 * PI * f * r / c_sound))
}

/// Transfer functions of one driver group, indexed `[k, c, e, m, bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandAtf {
    pub band: Band,
    pub points_per_ear: usize,
    pub drivers: usize,
    /// Grid bin indices covered, in increasing order.
    pub bins: Vec<usize>,
    pub data: Vec<Complex64>,
}

impl BandAtf {
    /// Control points per listener (both ears).
    pub fn points_per_listener(&self) -> usize {
        2 * self.points_per_ear
    }

    #[inline]
    pub fn index(&self, k: usize, point: usize, m: usize, bin: usize) -> usize {
        ((k * self.points_per_listener() + point) * self.drivers + m) * self.bins.len() + bin
    }

    /// Slice over bins for listener `k`, control point `point` (left ear points first), driver `m`.
    pub fn row(&self, k: usize, point: usize, m: usize) -> &[Complex64] {
        let start = self.index(k, point, m, 0);
        &self.data[start..start + self.bins.len()]
    }
}

/// Transfer functions for both driver groups at one physical configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct AtfSet {
    pub coords: StackedCoords,
    pub woofer: Option<BandAtf>,
    pub tweeter: Option<BandAtf>,
}

impl AtfSet {
    pub fn band(&self, band: Band) -> Option<&BandAtf> {
        match band {
            Band::Woofer => self.woofer.as_ref(),
            Band::Tweeter => self.tweeter.as_ref(),
        }
    }

    fn bands(&self) -> impl Iterator<Item = &BandAtf> {
        self.woofer.iter().chain(self.tweeter.iter())
    }
}

/// Transfer functions from one driver group to every ear control point, on the given bins.
pub fn build_band_atf(scene: &SceneConfig, x: &StackedCoords, grid: &FrequencyGrid, band: Band, bins: &[usize]) -> Result<BandAtf> {
    let drivers = scene.array.positions(band);
    let ne = scene.head.points_per_ear;
    let mut data = Vec::with_capacity(LISTENERS * 2 * ne * drivers.len() * bins.len());
    for k in 0..LISTENERS {
        for p in ear_points(x.listener(k), &scene.head) {
            for &d in &drivers {
                let r = d.distance(p);
                if r == 0.0 {
                    return Err(PszError::DegenerateGeometry { x: d.x, y: d.y });
                }
                let amp = 1.0 / (4.0 * PI * r);
                let phase_per_hz = -2.0 * PI * r / scene.speed_of_sound;
                data.extend(
                    bins.iter()
                        .map(|&b| Complex64::from_polar(amp, phase_per_hz * grid.bins()[b])),
                );
            }
        }
    }
    Ok(BandAtf {
        band,
        points_per_ear: ne,
        drivers: drivers.len(),
        bins: bins.to_vec(),
        data,
    })
}

/// Full-grid transfer functions for both driver groups.
pub fn build_atf_set(scene: &SceneConfig, x: &StackedCoords, grid: &FrequencyGrid) -> Result<AtfSet> {
    let all = grid.all_bins();
    Ok(AtfSet {
        coords: *x,
        woofer: Some(build_band_atf(scene, x, grid, Band::Woofer, &all)?),
        tweeter: Some(build_band_atf(scene, x, grid, Band::Tweeter, &all)?),
    })
}

/// Real impulse response of a spectrum given on the non-negative DFT bins.
///
/// The spectrum is extended with Hermitian symmetry; the imaginary parts of the
/// DC and Nyquist bins cannot be represented by a real sequence and are dropped.
pub fn atf_to_impulse_response(spectrum: &[Complex64], grid: &FrequencyGrid) -> Result<Vec<f64>> {
    let n = grid.fft_length();
    if spectrum.len() != n / 2 + 1 {
        return Err(PszError::LengthMismatch {
            what: "half spectrum",
            expected: n / 2 + 1,
            actual: spectrum.len(),
        });
    }
    let mut full = vec![Complex64::new(0.0, 0.0); n];
    full[..=n / 2].copy_from_slice(spectrum);
    full[0].im = 0.0;
    full[n / 2].im = 0.0;
    for i in 1..n / 2 {
        full[n - i] = spectrum[i].conj();
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut full);
    Ok(full.iter().map(|c| c.re / n as f64).collect())
}

/// Forward real DFT, returning the non-negative half spectrum.
pub fn real_dft(signal: &[f64], fft_length: usize) -> Vec<Complex64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); fft_length];
    // Fold longer signals onto the circular grid (DTFT sampled at the bins).
    for (i, &v) in signal.iter().enumerate() {
        buf[i % fft_length].re += v;
    }
    FftPlanner::new().plan_fft_forward(fft_length).process(&mut buf);
    buf.truncate(fft_length / 2 + 1);
    buf
}

#[derive(Debug, Serialize, Deserialize)]
struct AtfHeader {
    kind: String,
    version: u32,
    sample_rate: f64,
    fft_length: usize,
    coords: [f64; 4],
    blocks: Vec<AtfBlock>,
    count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct AtfBlock {
    band: Band,
    listeners: usize,
    ears: usize,
    points_per_ear: usize,
    drivers: usize,
    bins: Vec<usize>,
}

const ATF_KIND: &str = "atf-set";
const ATF_VERSION: u32 = 1;

/// Writes an ATF set as a JSON header line followed by interleaved re/im doubles in `[k, c, e, m, bin]` order.
pub fn export_atf_set(atfs: &AtfSet, grid: &FrequencyGrid, path: &Path) -> Result<()> {
    let mut values = Vec::new();
    let mut blocks = Vec::new();
    for b in atfs.bands() {
        blocks.push(AtfBlock {
            band: b.band,
            listeners: LISTENERS,
            ears: 2,
            points_per_ear: b.points_per_ear,
            drivers: b.drivers,
            bins: b.bins.clone(),
        });
        for c in &b.data {
            values.push(c.re);
            values.push(c.im);
        }
    }
    let header = AtfHeader {
        kind: ATF_KIND.into(),
        version: ATF_VERSION,
        sample_rate: grid.sample_rate(),
        fft_length: grid.fft_length(),
        coords: atfs.coords.0,
        blocks,
        count: values.len(),
    };
    container::write_file(path, &container::encode(&header, &values)?)
}

/// Reads an ATF set written by [`export_atf_set`] together with its grid.
pub fn import_atf_set(path: &Path) -> Result<(AtfSet, FrequencyGrid)> {
    let bytes = container::read_file(path)?;
    let (header, values) =
        container::decode::<AtfHeader>(&bytes, |h| h.count).map_err(PszError::CorruptContainer)?;
    if header.kind != ATF_KIND || header.version != ATF_VERSION {
        return Err(PszError::CorruptContainer(format!(
            "expected {ATF_KIND} v{ATF_VERSION}, found {} v{}",
            header.kind, header.version
        )));
    }
    let grid = FrequencyGrid::new(header.sample_rate, header.fft_length)?;
    let mut set = AtfSet {
        coords: StackedCoords::from_slice(&header.coords)?,
        woofer: None,
        tweeter: None,
    };
    let mut offset = 0;
    for block in header.blocks {
        let n = block.listeners * block.ears * block.points_per_ear * block.drivers * block.bins.len();
        if block.listeners != LISTENERS || block.ears != 2 || offset + 2 * n > values.len() {
            return Err(PszError::CorruptContainer("block dimensions do not match payload".into()));
        }
        if block.bins.iter().any(|&b| b >= grid.len()) {
            return Err(PszError::CorruptContainer("bin index outside grid".into()));
        }
        let data = values[offset..offset + 2 * n]
            .chunks_exact(2)
            .map(|c| Complex64::new(c[0], c[1]))
            .collect();
        offset += 2 * n;
        let atf = BandAtf {
            band: block.band,
            points_per_ear: block.points_per_ear,
            drivers: block.drivers,
            bins: block.bins,
            data,
        };
        match atf.band {
            Band::Woofer => set.woofer = Some(atf),
            Band::Tweeter => set.tweeter = Some(atf),
        }
    }
    if offset != values.len() {
        return Err(PszError::CorruptContainer("trailing payload".into()));
    }
    Ok((set, grid))
}
