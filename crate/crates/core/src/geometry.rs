//! Array and listener geometry.
//!
//! Conventions: the loudspeaker array lies on the `y = 0` line and listeners
//! sit at `y > 0`. Listener `k` is identified by the center of its head; ear
//! control points are derived from that center with a nominal head width.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{PszError, Result};

/// Number of listeners (and programs).
pub const LISTENERS: usize = 2;
/// Coordinate dimension per listener.
pub const COORD_DIM: usize = 2;
/// Length of the stacked coordinate vector.
pub const STACKED_DIM: usize = LISTENERS * COORD_DIM;

/// Driver group of the split-band array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    #[serde(alias = "w")]
    Woofer,
    #[serde(alias = "t")]
    Tweeter,
}

impl Band {
    pub const ALL: [Band; 2] = [Band::Woofer, Band::Tweeter];

    pub fn as_str(self) -> &'static str {
        match self {
            Band::Woofer => "woofer",
            Band::Tweeter => "tweeter",
        }
    }

    pub fn short(self) -> char {
        match self {
            Band::Woofer => 'w',
            Band::Tweeter => 't',
        }
    }

    /// Inclusive frequency limits in Hz. The 2 kHz crossover bin belongs to the woofer.
    pub fn frequency_range(self) -> (f64, f64) {
        match self {
            Band::Woofer => (100.0, 2000.0),
            Band::Tweeter => (2000.0, 20000.0),
        }
    }

    pub fn contains(self, f: f64) -> bool {
        let (lo, hi) = self.frequency_range();
        match self {
            Band::Woofer => f >= lo && f <= hi,
            Band::Tweeter => f > lo && f <= hi,
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Band {
    type Err = PszError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "w" | "woofer" => Ok(Band::Woofer),
            "t" | "tweeter" => Ok(Band::Tweeter),
            other => Err(PszError::InvalidParameter(format!("unknown band '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl std::ops::Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Driver {
    pub position: Point2,
    pub band: Band,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArrayGeometry {
    pub drivers: Vec<Driver>,
}

impl ArrayGeometry {
    /// Two uniformly spaced rows centered on the origin along the x axis.
    pub fn linear(woofers: usize, woofer_spacing: f64, tweeters: usize, tweeter_spacing: f64) -> Result<Self> {
        let row = |count: usize, spacing: f64, band: Band| {
            let mid = (count as f64 - 1.0) / 2.0;
            (0..count).map(move |i| Driver {
                position: Point2::new((i as f64 - mid) * spacing, 0.0),
                band,
            })
        };
        let geometry = Self {
            drivers: row(woofers, woofer_spacing, Band::Woofer)
                .chain(row(tweeters, tweeter_spacing, Band::Tweeter))
                .collect(),
        };
        geometry.validate()?;
        Ok(geometry)
    }

    pub fn validate(&self) -> Result<()> {
        if self.count(Band::Woofer) == 0 || self.count(Band::Tweeter) == 0 {
            return Err(PszError::InvalidParameter(
                "array needs at least one woofer and one tweeter".into(),
            ));
        }
        if self.drivers.iter().any(|d| !d.position.is_finite()) {
            return Err(PszError::InvalidParameter("non-finite driver position".into()));
        }
        Ok(())
    }

    pub fn count(&self, band: Band) -> usize {
        self.drivers.iter().filter(|d| d.band == band).count()
    }

    pub fn positions(&self, band: Band) -> Vec<Point2> {
        self.drivers
            .iter()
            .filter(|d| d.band == band)
            .map(|d| d.position)
            .collect()
    }
}

impl Default for ArrayGeometry {
    /// 8 woofers at 0.152 m and 16 tweeters at 0.076 m spacing.
    fn default() -> Self {
        Self::linear(8, 0.152, 16, 0.076).expect("default array is valid")
    }
}

/// Radius of the control-point circle used when more than one point per ear is requested.
pub const EAR_CLUSTER_RADIUS: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    /// Distance from head center to each ear point (m).
    pub half_width: f64,
    pub points_per_ear: usize,
    /// Unit look direction.
    pub facing: Point2,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            half_width: 0.08,
            points_per_ear: 1,
            facing: Point2::new(0.0, -1.0),
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.half_width >= 0.0) || self.points_per_ear == 0 {
            return Err(PszError::InvalidParameter(
                "head needs half_width >= 0 and at least one point per ear".into(),
            ));
        }
        let norm = self.facing.x.hypot(self.facing.y);
        if !((norm - 1.0).abs() < 1e-9) {
            return Err(PszError::InvalidParameter("head facing must be a unit vector".into()));
        }
        Ok(())
    }
}

/// Axis-aligned box for one listener's head center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxBounds {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl BoxBounds {
    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.x[0] && p.x <= self.x[1] && p.y >= self.y[0] && p.y <= self.y[1]
    }

    pub fn clamp(&self, p: Point2) -> Point2 {
        Point2::new(p.x.clamp(self.x[0], self.x[1]), p.y.clamp(self.y[0], self.y[1]))
    }

    /// Box shrunk by `margin` on every side; `None` when it would be empty.
    pub fn shrink(&self, margin: f64) -> Option<BoxBounds> {
        let b = BoxBounds {
            x: [self.x[0] + margin, self.x[1] - margin],
            y: [self.y[0] + margin, self.y[1] - margin],
        };
        (b.x[0] <= b.x[1] && b.y[0] <= b.y[1]).then_some(b)
    }

    fn validate(&self) -> Result<()> {
        let ok = self.x.iter().chain(&self.y).all(|v| v.is_finite())
            && self.x[0] < self.x[1]
            && self.y[0] < self.y[1];
        if ok {
            Ok(())
        } else {
            Err(PszError::InvalidParameter(format!("empty or non-finite bounds {self:?}")))
        }
    }
}

/// Training bounds for both listeners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoordBounds {
    pub listeners: [BoxBounds; LISTENERS],
}

impl Default for CoordBounds {
    fn default() -> Self {
        let b = BoxBounds {
            x: [-0.8, 0.8],
            y: [0.7, 1.6],
        };
        Self { listeners: [b, b] }
    }
}

impl CoordBounds {
    /// Lower and upper limit of stacked component `i`.
    pub fn component(&self, i: usize) -> (f64, f64) {
        let b = &self.listeners[i / COORD_DIM];
        let lim = if i % COORD_DIM == 0 { b.x } else { b.y };
        (lim[0], lim[1])
    }

    pub fn contains(&self, x: &StackedCoords) -> bool {
        (0..LISTENERS).all(|k| self.listeners[k].contains(x.listener(k)))
    }
}

/// Stacked head-center coordinates `[x1; x2]` in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StackedCoords(pub [f64; STACKED_DIM]);

impl StackedCoords {
    pub fn new(x1: Point2, x2: Point2) -> Self {
        Self([x1.x, x1.y, x2.x, x2.y])
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        let arr: [f64; STACKED_DIM] = v.try_into().map_err(|_| PszError::LengthMismatch {
            what: "stacked coordinates",
            expected: STACKED_DIM,
            actual: v.len(),
        })?;
        let x = Self(arr);
        if !x.is_finite() {
            return Err(PszError::InvalidParameter("non-finite coordinate".into()));
        }
        Ok(x)
    }

    pub fn listener(&self, k: usize) -> Point2 {
        Point2::new(self.0[COORD_DIM * k], self.0[COORD_DIM * k + 1])
    }

    pub fn with_listener(mut self, k: usize, p: Point2) -> Self {
        self.0[COORD_DIM * k] = p.x;
        self.0[COORD_DIM * k + 1] = p.y;
        self
    }

    pub fn swapped(&self) -> Self {
        Self::new(self.listener(1), self.listener(0))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn separation(&self) -> f64 {
        self.listener(0).distance(self.listener(1))
    }

    pub fn add(&self, delta: &[f64; STACKED_DIM]) -> Self {
        let mut out = self.0;
        for (o, d) in out.iter_mut().zip(delta) {
            *o += d;
        }
        Self(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub array: ArrayGeometry,
    pub bounds: CoordBounds,
    pub overlap_threshold: f64,
    pub head: HeadConfig,
    pub listener1_anchor: Point2,
    pub speed_of_sound: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            array: ArrayGeometry::default(),
            bounds: CoordBounds::default(),
            overlap_threshold: 0.30,
            head: HeadConfig::default(),
            listener1_anchor: Point2::new(-0.40, 1.10),
            speed_of_sound: 343.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        self.array.validate()?;
        self.head.validate()?;
        for b in &self.bounds.listeners {
            b.validate()?;
        }
        if !(self.overlap_threshold > 0.0) {
            return Err(PszError::InvalidParameter("overlap threshold must be > 0".into()));
        }
        if !self.bounds.listeners[0].contains(self.listener1_anchor) {
            return Err(PszError::InvalidParameter(
                "listener 1 anchor lies outside its bounds".into(),
            ));
        }
        if !(self.speed_of_sound > 0.0) {
            return Err(PszError::InvalidParameter("speed of sound must be > 0".into()));
        }
        Ok(())
    }
}

/// Ear control points for a head at `center`: `N_e` left-ear points followed by `N_e` right-ear points.
pub fn ear_points(center: Point2, head: &HeadConfig) -> Vec<Point2> {
    // Left is the look direction rotated by +90 degrees.
    let left_dir = Point2::new(-head.facing.y, head.facing.x);
    let ears = [center + left_dir * head.half_width, center - left_dir * head.half_width];
    let n = head.points_per_ear;
    let mut out = Vec::with_capacity(2 * n);
    for ear in ears {
        if n == 1 {
            out.push(ear);
            continue;
        }
        for i in 0..n {
            let phi = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            out.push(ear + Point2::new(phi.cos(), phi.sin()) * EAR_CLUSTER_RADIUS);
        }
    }
    out
}

/// 1 when the listeners are strictly farther apart than `d_ov` (non-overlapping regime).
pub fn region_indicator(x: &StackedCoords, d_ov: f64) -> u8 {
    u8::from(x.separation() > d_ov)
}

/// 1 when both inputs fall in the same overlap regime.
pub fn same_region_mask(x: &StackedCoords, x_pert: &StackedCoords, d_ov: f64) -> u8 {
    u8::from(region_indicator(x, d_ov) == region_indicator(x_pert, d_ov))
}

pub fn clip_to_bounds(x: &StackedCoords, bounds: &CoordBounds) -> StackedCoords {
    let mut out = *x;
    for k in 0..LISTENERS {
        out = out.with_listener(k, bounds.listeners[k].clamp(x.listener(k)));
    }
    out
}

/// Whether a listener-2 anchor keeps every grid-perturbed input with per-axis
/// offset up to `r_max` out of the overlap regime.
pub fn anchor_admissible(x2: Point2, scene: &SceneConfig, r_max: f64) -> bool {
    scene.listener1_anchor.distance(x2) > scene.overlap_threshold + std::f64::consts::SQRT_2 * r_max
}
