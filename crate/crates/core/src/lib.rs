//! Coordinate-conditioned personal sound zone (PSZ) filter generation.
//!
//! The crate covers the whole pipeline: free-field transfer functions for a
//! split-band woofer/tweeter array, FIR filter banks and pressure rendering,
//! a small feed-forward generator with hand-written reverse-mode gradients,
//! the PSZ training objective with neighbor-consistency regularization, and a
//! decoupled robustness evaluation that keeps the acoustics fixed at a
//! physical anchor while perturbing the coordinates fed to the generator.

pub mod acoustics;
mod container;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod filters;
pub mod generator;
pub mod geometry;
pub mod objectives;
pub mod training;

pub use acoustics::{AtfSet, BandAtf, FrequencyGrid};
pub use error::{PszError, Result};
pub use experiment::{EvalMode, ExperimentConfig};
pub use filters::{Channel, FilterBank, FilterDims, FilterSet, PressureField};
pub use generator::{GeneratorParams, TrainingMeta};
pub use objectives::{BandProblem, LossBreakdown, LossWeights};
pub use training::{train, TrainConfig, TrainOutcome};
pub use geometry::{Band, CoordBounds, Point2, SceneConfig, StackedCoords};
