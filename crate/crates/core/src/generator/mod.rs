//! Coordinate-conditioned filter generator.
//!
//! A fully connected network maps the (normalized, optionally sinusoidally
//! encoded) stacked listener coordinates to one band's stacked FIR vector.
//! Hidden layers use `tanh`; the output layer is linear and multiplied by a
//! fixed output scale. Gradients are computed by a hand-written reverse pass
//! over the activations recorded in a [`Tape`].

mod adam;
mod checkpoint;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, CHECKPOINT_VERSION};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PszError, Result};
use crate::filters::FilterDims;
use crate::geometry::{clip_to_bounds, Band, CoordBounds, StackedCoords, STACKED_DIM};

/// Sinusoidal feature depth `E`: each normalized component `u` contributes
/// `u, sin(2^i pi u), cos(2^i pi u)` for `i < E`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingConfig {
    pub levels: usize,
}

impl EncodingConfig {
    pub fn width(&self) -> usize {
        STACKED_DIM * (1 + 2 * self.levels)
    }
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self { levels: 2 }
    }
}

pub fn encode_coordinates(x: &StackedCoords, bounds: &CoordBounds, encoding: EncodingConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(encoding.width());
    encode_into(x, bounds, encoding, &mut out);
    out
}

fn encode_into(x: &StackedCoords, bounds: &CoordBounds, encoding: EncodingConfig, out: &mut Vec<f64>) {
    for (i, &v) in x.0.iter().enumerate() {
        let (lo, hi) = bounds.component(i);
        let u = 2.0 * (v - lo) / (hi - lo) - 1.0;
        out.push(u);
        for level in 0..encoding.levels {
            let w = (1u64 << level) as f64 * std::f64::consts::PI * u;
            out.push(w.sin());
            out.push(w.cos());
        }
    }
}

/// Network shape and initialization choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub hidden: Vec<usize>,
    pub encoding_levels: usize,
    pub output_scale: f64,
    /// Final-layer weights are drawn from `U(-a, a)` with `a = final_init / sqrt(fan_in)`.
    pub final_init: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256, 256],
            encoding_levels: 2,
            output_scale: 1e-2,
            final_init: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `(fan_in x fan_out)`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros_like(&self) -> Self {
        Self {
            weights: Array2::zeros(self.weights.raw_dim()),
            bias: Array1::zeros(self.bias.len()),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.ncols()
    }
}

/// Training settings recorded in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub lambda: f64,
    pub delta: f64,
    pub steps: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    pub band: Band,
    pub dims: FilterDims,
    pub encoding: EncodingConfig,
    pub bounds: CoordBounds,
    pub output_scale: f64,
    pub seed: u64,
    pub layers: Vec<Dense>,
    pub training: Option<TrainingMeta>,
}

impl GeneratorParams {
    /// Fan-in scaled uniform initialization, zero biases.
    pub fn init(band: Band, dims: FilterDims, arch: &ArchConfig, bounds: CoordBounds, seed: u64) -> Result<Self> {
        if !(arch.output_scale.is_finite() && arch.output_scale > 0.0) {
            return Err(PszError::InvalidParameter("output scale must be > 0".into()));
        }
        if arch.hidden.iter().any(|&h| h == 0) || dims.is_empty() {
            return Err(PszError::InvalidParameter("layer widths must be positive".into()));
        }
        let encoding = EncodingConfig {
            levels: arch.encoding_levels,
        };
        let mut sizes = vec![encoding.width()];
        sizes.extend(&arch.hidden);
        sizes.push(dims.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let gain = if i == last { arch.final_init } else { 1.0 };
                let a = gain / (w[0] as f64).sqrt();
                Dense {
                    weights: Array2::from_shape_simple_fn((w[0], w[1]), || {
                        if a > 0.0 {
                            rng.random_range(-a..a)
                        } else {
                            0.0
                        }
                    }),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Ok(Self {
            band,
            dims,
            encoding,
            bounds,
            output_scale: arch.output_scale,
            seed,
            layers,
            training: None,
        })
    }

    /// Widths from input features to output.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].fan_in()];
        s.extend(self.layers.iter().map(Dense::fan_out));
        s
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.len() < 2 {
            return Err(PszError::ShapeMismatch("need at least two layers".into()));
        }
        let sizes = self.layer_sizes();
        if sizes[0] != self.encoding.width() {
            return Err(PszError::ShapeMismatch(format!(
                "input width {} does not match encoding width {}",
                sizes[0],
                self.encoding.width()
            )));
        }
        if *sizes.last().expect("nonempty") != self.dims.len() {
            return Err(PszError::ShapeMismatch(format!(
                "output width {} does not match filter length {}",
                sizes.last().unwrap(),
                self.dims.len()
            )));
        }
        for pair in self.layers.windows(2) {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(PszError::ShapeMismatch("adjacent layer widths disagree".into()));
            }
        }
        if self.layers.iter().any(|l| l.bias.len() != l.fan_out()) {
            return Err(PszError::ShapeMismatch("bias length".into()));
        }
        Ok(())
    }

    /// Encodes a batch of coordinates; inputs are clipped to the training bounds first.
    pub fn encode_batch(&self, xs: &[StackedCoords]) -> Array2<f64> {
        let mut flat = Vec::with_capacity(xs.len() * self.encoding.width());
        for x in xs {
            encode_into(&clip_to_bounds(x, &self.bounds), &self.bounds, self.encoding, &mut flat);
        }
        Array2::from_shape_vec((xs.len(), self.encoding.width()), flat).expect("encoding width")
    }

    /// Batched forward pass; row `i` of the result is the stacked filter vector for `xs[i]`.
    pub fn forward_batch(&self, xs: &[StackedCoords]) -> Result<(Array2<f64>, Tape)> {
        let input = self.encode_batch(xs);
        let mut hidden = Vec::with_capacity(self.layers.len() - 1);
        let (last, body) = self.layers.split_last().expect("at least one layer");
        for layer in body {
            let prev = hidden.last().unwrap_or(&input);
            let mut z = prev.dot(&layer.weights) + &layer.bias;
            z.mapv_inplace(f64::tanh);
            hidden.push(z);
        }
        let prev = hidden.last().unwrap_or(&input);
        let mut out = prev.dot(&last.weights) + &last.bias;
        out *= self.output_scale;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(PszError::NumericalOverflow("generator output"));
        }
        Ok((
            out,
            Tape {
                input,
                hidden,
                rows: xs.len(),
            },
        ))
    }

    pub fn forward(&self, x: &StackedCoords) -> Result<(Vec<f64>, Tape)> {
        let (out, tape) = self.forward_batch(std::slice::from_ref(x))?;
        Ok((out.into_raw_vec_and_offset().0, tape))
    }

    /// Gradients of `sum_rows <adjoint_row, output_row>` with respect to every parameter.
    pub fn backward(&self, tape: &Tape, adjoint: &ArrayView2<f64>) -> Result<Gradients> {
        if adjoint.nrows() != tape.rows || adjoint.ncols() != self.dims.len() {
            return Err(PszError::ShapeMismatch(format!(
                "adjoint is {}x{}, forward produced {}x{}",
                adjoint.nrows(),
                adjoint.ncols(),
                tape.rows,
                self.dims.len()
            )));
        }
        let n = self.layers.len();
        let mut grads: Vec<Option<Dense>> = vec![None; n];
        let mut delta = adjoint.to_owned() * self.output_scale;
        for i in (0..n).rev() {
            let layer_in = if i == 0 { &tape.input } else { &tape.hidden[i - 1] };
            grads[i] = Some(Dense {
                weights: layer_in.t().dot(&delta),
                bias: delta.sum_axis(Axis(0)),
            });
            if i > 0 {
                let mut back = delta.dot(&self.layers[i].weights.t());
                back.zip_mut_with(&tape.hidden[i - 1], |d, &a| *d *= 1.0 - a * a);
                delta = back;
            }
        }
        Ok(Gradients {
            layers: grads.into_iter().map(|g| g.expect("filled")).collect(),
        })
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            layers: self.layers.iter().map(Dense::zeros_like).collect(),
        }
    }

    /// Mutable view of every scalar parameter in a fixed order.
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(usize, &mut f64)) {
        let mut idx = 0;
        for l in &mut self.layers {
            for v in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                f(idx, v);
                idx += 1;
            }
        }
    }
}

/// Activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    input: Array2<f64>,
    hidden: Vec<Array2<f64>>,
    rows: usize,
}

impl Tape {
    pub fn rows(&self) -> usize {
        self.rows
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }
}
