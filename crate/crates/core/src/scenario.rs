//! Physical `(x, t)` and similarity `(y, s)` problem descriptions and the
//! exact change of variables between them:
//!
//! ```text
//! y = x / sqrt(1 + t),  s = log(1 + t),  S = log(1 + T)
//! v(y,s) = e^{sN/2} u(e^{s/2} y, e^s - 1)        A(y,s) = e^s a(...)
//! B(y,s) = e^{s/2} b(...)                        g(y,s) = e^{s(N+2)/2} f(...)
//! ```

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::{ControlSeries, TimeGrid};
use crate::weighted::{Grid, MAX_DIM};

pub type SpaceTimeFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;
pub type VectorFieldFn = Arc<dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync>;
pub type SpaceFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Axis-aligned box serialized as `[lo[], hi[]]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion(pub Vec<f64>, pub Vec<f64>);

impl BoxRegion {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Self(lo, hi)
    }

    pub fn lo(&self) -> &[f64] {
        &self.0
    }

    pub fn hi(&self) -> &[f64] {
        &self.1
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    fn validate(&self, dim: usize, key: &str) -> Result<()> {
        if self.0.len() != dim || self.1.len() != dim {
            return Err(Error::config(
                key,
                format!("box corners must have {dim} components"),
            ));
        }
        for a in 0..dim {
            let (lo, hi) = (self.0[a], self.1[a]);
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(Error::config(key, "box corners must be finite"));
            }
            if lo >= hi {
                return Err(Error::config(
                    key,
                    format!("lo[{a}] = {lo} is not below hi[{a}] = {hi}"),
                ));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter()
            .zip(self.0.iter().zip(&self.1))
            .all(|(x, (lo, hi))| *lo <= *x && *x <= *hi)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(
            self.0.iter().map(|v| v * factor).collect(),
            self.1.iter().map(|v| v * factor).collect(),
        )
    }

    /// Euclidean distance from `p` to the box (zero inside).
    pub fn distance(&self, p: &[f64]) -> f64 {
        p.iter()
            .zip(self.0.iter().zip(&self.1))
            .map(|(x, (lo, hi))| {
                let d = (lo - x).max(0.0).max(x - hi);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    /// True when the open boxes do not intersect.
    pub fn disjoint(&self, other: &BoxRegion) -> bool {
        (0..self.dim().min(other.dim())).any(|a| self.1[a] <= other.0[a] || other.1[a] <= self.0[a])
    }
}

/// A scalar field given by value: a constant or a Gaussian bump
/// `amplitude * exp(-|x - center|^2 / width^2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarSpec {
    Constant(f64),
    Gaussian {
        amplitude: f64,
        center: Vec<f64>,
        width: f64,
    },
}

impl Default for ScalarSpec {
    fn default() -> Self {
        ScalarSpec::Constant(0.0)
    }
}

impl ScalarSpec {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            ScalarSpec::Constant(c) => *c,
            ScalarSpec::Gaussian {
                amplitude,
                center,
                width,
            } => {
                let d2: f64 = x.iter().zip(center).map(|(x, c)| (x - c) * (x - c)).sum();
                amplitude * (-d2 / (width * width)).exp()
            }
        }
    }

    /// Bound on `|value|` over all of space.
    pub fn sup_norm(&self) -> f64 {
        match self {
            ScalarSpec::Constant(c) => c.abs(),
            ScalarSpec::Gaussian { amplitude, .. } => amplitude.abs(),
        }
    }

    fn validate(&self, dim: usize, key: &str) -> Result<()> {
        match self {
            ScalarSpec::Constant(c) if !c.is_finite() => Err(Error::config(key, "must be finite")),
            ScalarSpec::Constant(_) => Ok(()),
            ScalarSpec::Gaussian {
                amplitude,
                center,
                width,
            } => {
                if !amplitude.is_finite() {
                    return Err(Error::config(format!("{key}.amplitude"), "must be finite"));
                }
                if center.len() != dim || center.iter().any(|c| !c.is_finite()) {
                    return Err(Error::config(
                        format!("{key}.center"),
                        format!("must hold {dim} finite components"),
                    ));
                }
                if !(width.is_finite() && *width > 0.0) {
                    return Err(Error::config(format!("{key}.width"), "must be positive"));
                }
                Ok(())
            }
        }
    }
}

/// A constant vector field. A bare number is broadcast to every component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorSpec {
    Uniform(f64),
    Components(Vec<f64>),
}

impl Default for VectorSpec {
    fn default() -> Self {
        VectorSpec::Uniform(0.0)
    }
}

impl VectorSpec {
    pub fn components(&self, dim: usize) -> Vec<f64> {
        match self {
            VectorSpec::Uniform(c) => vec![*c; dim],
            VectorSpec::Components(v) => v.clone(),
        }
    }
}

fn default_rho_margin() -> f64 {
    2.0
}

/// Discretization parameters carried alongside a scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationConfig {
    pub n: usize,
    #[serde(rename = "R")]
    pub radius: f64,
    pub steps: usize,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_linear_tol")]
    pub linear_tol: f64,
    #[serde(default)]
    pub upwind: bool,
}

fn default_theta() -> f64 {
    0.5
}

fn default_linear_tol() -> f64 {
    1e-11
}

impl DiscretizationConfig {
    pub fn default_for(dim: usize) -> Self {
        Self {
            n: if dim == 1 { 129 } else { 65 },
            radius: 8.0,
            steps: 128,
            theta: 0.5,
            linear_tol: 1e-11,
            upwind: false,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        Grid::new(dim, self.radius, self.n).map_err(|e| match e {
            Error::Config { key, message } => {
                Error::config(format!("discretization.{key}"), message)
            }
            other => other,
        })?;
        if self.steps < 2 {
            return Err(Error::config(
                "discretization.steps",
                "need at least 2 time steps",
            ));
        }
        if !(0.5..=1.0).contains(&self.theta) {
            return Err(Error::config(
                "discretization.theta",
                "theta must lie in [1/2, 1]",
            ));
        }
        if !(self.linear_tol > 0.0 && self.linear_tol < 1.0) {
            return Err(Error::config(
                "discretization.linear_tol",
                "must lie in (0, 1)",
            ));
        }
        Ok(())
    }
}

/// Scenario file contents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub dim: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default)]
    pub a: ScalarSpec,
    #[serde(default)]
    pub b: VectorSpec,
    pub leader_box: BoxRegion,
    #[serde(default)]
    pub follower_boxes: Vec<BoxRegion>,
    #[serde(default)]
    pub alpha: Vec<f64>,
    /// Width of the localizer transition, in grid cells. Zero gives sharp indicators.
    #[serde(default = "default_rho_margin")]
    pub rho_margin: f64,
    pub target: ScalarSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discretization: Option<DiscretizationConfig>,
}

impl ScenarioConfig {
    /// Parses and validates a scenario document.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let config: ScenarioConfig = serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            let key = msg
                .split('`')
                .nth(1)
                .filter(|_| msg.contains("field"))
                .unwrap_or("<document>")
                .to_string();
            Error::config(key, msg)
        })?;
        config.validate()?;
        Ok(config.normalized())
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.dim;
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::config("dim", format!("expected 1 or 2, got {dim}")));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::config(
                "T",
                format!("horizon must be positive, got {}", self.horizon),
            ));
        }
        self.a.validate(dim, "a")?;
        let b = self.b.components(dim);
        if b.len() != dim || b.iter().any(|v| !v.is_finite()) {
            return Err(Error::config(
                "b",
                format!("must hold {dim} finite components"),
            ));
        }
        self.target.validate(dim, "target")?;
        self.leader_box.validate(dim, "leader_box")?;
        for (i, region) in self.follower_boxes.iter().enumerate() {
            let key = format!("follower_boxes[{i}]");
            region.validate(dim, &key)?;
            if !region.disjoint(&self.leader_box) {
                return Err(Error::config(key, "overlaps leader_box"));
            }
            for (j, other) in self.follower_boxes[..i].iter().enumerate() {
                if !region.disjoint(other) {
                    return Err(Error::config(key, format!("overlaps follower_boxes[{j}]")));
                }
            }
        }
        if self.alpha.len() != self.follower_boxes.len() {
            return Err(Error::config(
                "alpha",
                format!(
                    "expected {} weights (one per follower), got {}",
                    self.follower_boxes.len(),
                    self.alpha.len()
                ),
            ));
        }
        for (i, a) in self.alpha.iter().enumerate() {
            if !(a.is_finite() && *a > 0.0) {
                return Err(Error::config(
                    format!("alpha[{i}]"),
                    format!("must be positive, got {a}"),
                ));
            }
        }
        if !(self.rho_margin.is_finite() && self.rho_margin >= 0.0) {
            return Err(Error::config("rho_margin", "must be a nonnegative number"));
        }
        if let Some(d) = &self.discretization {
            d.validate(dim)?;
        }
        Ok(())
    }

    /// Canonical form: vector potentials spelled out per component.
    pub fn normalized(mut self) -> Self {
        self.b = VectorSpec::Components(self.b.components(self.dim));
        self
    }

    pub fn discretization_or_default(&self) -> DiscretizationConfig {
        self.discretization
            .clone()
            .unwrap_or_else(|| DiscretizationConfig::default_for(self.dim))
    }
}

/// The `(x, t)` problem with zero initial state.
#[derive(Clone)]
pub struct PhysicalScenario {
    pub dim: usize,
    pub horizon: f64,
    pub a: SpaceTimeFn,
    pub b: VectorFieldFn,
    /// Sup-norm bounds of `a` and `|b|`, if known in closed form.
    pub a_bound: Option<f64>,
    pub b_bound: Option<f64>,
    pub leader_region: BoxRegion,
    pub follower_regions: Vec<BoxRegion>,
    pub alphas: Vec<f64>,
    pub rho_margin: f64,
    pub target: SpaceFn,
}

impl fmt::Debug for PhysicalScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PhysicalScenario")
            .field("dim", &self.dim)
            .field("horizon", &self.horizon)
            .field("leader_region", &self.leader_region)
            .field("follower_regions", &self.follower_regions)
            .field("alphas", &self.alphas)
            .field("rho_margin", &self.rho_margin)
            .finish_non_exhaustive()
    }
}

impl PhysicalScenario {
    pub fn from_config(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let a_spec = config.a.clone();
        let b_vec = config.b.components(config.dim);
        let target = config.target.clone();
        let b_norm = b_vec.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(Self {
            dim: config.dim,
            horizon: config.horizon,
            a_bound: Some(a_spec.sup_norm()),
            b_bound: Some(b_norm),
            a: Arc::new(move |x, _t| a_spec.eval(x)),
            b: Arc::new(move |_x, _t, out| out.copy_from_slice(&b_vec)),
            leader_region: config.leader_box.clone(),
            follower_regions: config.follower_boxes.clone(),
            alphas: config.alpha.clone(),
            rho_margin: config.rho_margin,
            target: Arc::new(move |x| target.eval(x)),
        })
    }

    /// A scenario with zero potentials and a zero target.
    pub fn free(dim: usize, horizon: f64, leader: BoxRegion) -> Self {
        Self {
            dim,
            horizon,
            a: Arc::new(|_, _| 0.0),
            b: Arc::new(|_, _, out| out.iter_mut().for_each(|v| *v = 0.0)),
            a_bound: Some(0.0),
            b_bound: Some(0.0),
            leader_region: leader,
            follower_regions: Vec::new(),
            alphas: Vec::new(),
            rho_margin: default_rho_margin(),
            target: Arc::new(|_| 0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim > MAX_DIM {
            return Err(Error::config(
                "dim",
                format!("expected 1 or 2, got {}", self.dim),
            ));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::config(
                "T",
                format!("horizon must be positive, got {}", self.horizon),
            ));
        }
        self.leader_region.validate(self.dim, "leader_box")?;
        for (i, r) in self.follower_regions.iter().enumerate() {
            let key = format!("follower_boxes[{i}]");
            r.validate(self.dim, &key)?;
            if !r.disjoint(&self.leader_region) {
                return Err(Error::config(key, "overlaps leader_box"));
            }
            for (j, o) in self.follower_regions[..i].iter().enumerate() {
                if !r.disjoint(o) {
                    return Err(Error::config(key, format!("overlaps follower_boxes[{j}]")));
                }
            }
        }
        if self.alphas.len() != self.follower_regions.len() {
            return Err(Error::config(
                "alpha",
                "one weight per follower is required",
            ));
        }
        for (i, a) in self.alphas.iter().enumerate() {
            if !(a.is_finite() && *a > 0.0) {
                return Err(Error::config(
                    format!("alpha[{i}]"),
                    format!("must be positive, got {a}"),
                ));
            }
        }
        if !(self.rho_margin.is_finite() && self.rho_margin >= 0.0) {
            return Err(Error::config("rho_margin", "must be a nonnegative number"));
        }
        Ok(())
    }
}

/// Physical quantities transformed by the change of variables, with the
/// exponent `q` in `sim(y, s) = e^{q s} phys(e^{s/2} y, e^s - 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quantity {
    State,
    PotentialA,
    PotentialB,
    Control,
}

impl Quantity {
    pub fn exponent(self, dim: usize) -> f64 {
        match self {
            Quantity::State => dim as f64 / 2.0,
            Quantity::PotentialA => 1.0,
            Quantity::PotentialB => 0.5,
            Quantity::Control => (dim as f64 + 2.0) / 2.0,
        }
    }
}

/// Evaluates a physical quantity in similarity variables.
pub fn to_similarity_value(
    q: Quantity,
    phys: impl Fn(&[f64], f64) -> f64,
    y: &[f64],
    s: f64,
) -> f64 {
    let dim = y.len();
    let stretch = (0.5 * s).exp();
    let mut x = [0.0; MAX_DIM];
    for (xi, yi) in x.iter_mut().zip(y) {
        *xi = stretch * yi;
    }
    (q.exponent(dim) * s).exp() * phys(&x[..dim], s.exp_m1())
}

/// Evaluates a similarity-variable quantity at a physical point.
pub fn from_similarity_value(
    q: Quantity,
    sim: impl Fn(&[f64], f64) -> f64,
    x: &[f64],
    t: f64,
) -> f64 {
    let dim = x.len();
    let shrink = 1.0 / (1.0 + t).sqrt();
    let mut y = [0.0; MAX_DIM];
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = shrink * xi;
    }
    (1.0 + t).powf(-q.exponent(dim)) * sim(&y[..dim], t.ln_1p())
}

/// The `(y, s)` problem obtained from a [`PhysicalScenario`].
#[derive(Clone)]
pub struct SimilarityScenario {
    physical: PhysicalScenario,
    horizon: f64,
}

impl fmt::Debug for SimilarityScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SimilarityScenario")
            .field("horizon", &self.horizon)
            .field("physical", &self.physical)
            .finish()
    }
}

/// Maps a physical scenario to similarity variables.
pub fn to_similarity(p: &PhysicalScenario) -> Result<SimilarityScenario> {
    p.validate()?;
    Ok(SimilarityScenario {
        horizon: p.horizon.ln_1p(),
        physical: p.clone(),
    })
}

impl SimilarityScenario {
    pub fn dim(&self) -> usize {
        self.physical.dim
    }

    /// `S = log(T + 1)`.
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn physical(&self) -> &PhysicalScenario {
        &self.physical
    }

    pub fn followers(&self) -> usize {
        self.physical.follower_regions.len()
    }

    pub fn alphas(&self) -> &[f64] {
        &self.physical.alphas
    }

    pub fn rho_margin(&self) -> f64 {
        self.physical.rho_margin
    }

    /// `A(y, s) = e^s a(e^{s/2} y, e^s - 1)`.
    pub fn potential_a(&self, y: &[f64], s: f64) -> f64 {
        to_similarity_value(Quantity::PotentialA, |x, t| (self.physical.a)(x, t), y, s)
    }

    /// `B(y, s) = e^{s/2} b(e^{s/2} y, e^s - 1)`, written into `out`.
    pub fn potential_b(&self, y: &[f64], s: f64, out: &mut [f64]) {
        let dim = y.len();
        let stretch = (0.5 * s).exp();
        let mut x = [0.0; MAX_DIM];
        for (xi, yi) in x.iter_mut().zip(y) {
            *xi = stretch * yi;
        }
        (self.physical.b)(&x[..dim], s.exp_m1(), out);
        out.iter_mut().for_each(|v| *v *= stretch);
    }

    /// `O'(s) = e^{-s/2} O`.
    pub fn leader_region_at(&self, s: f64) -> BoxRegion {
        self.physical.leader_region.scaled((-0.5 * s).exp())
    }

    pub fn follower_region_at(&self, i: usize, s: f64) -> BoxRegion {
        self.physical.follower_regions[i].scaled((-0.5 * s).exp())
    }

    /// Localizer `rho_i(y)`: one on the final-time follower region, decaying
    /// to zero over `margin` (a length) with a smoothstep profile.
    pub fn rho(&self, i: usize, y: &[f64], margin: f64) -> f64 {
        let region = self.follower_region_at(i, self.horizon);
        let d = region.distance(y);
        if d == 0.0 {
            return 1.0;
        }
        if margin <= 0.0 {
            return 0.0;
        }
        let t = (1.0 - d / margin).clamp(0.0, 1.0);
        t * t * (3.0 - 2.0 * t)
    }

    /// `v^S(y) = (1 + T)^{N/2} u^T(sqrt(1 + T) y)`.
    pub fn target(&self, y: &[f64]) -> f64 {
        let t = self.physical.horizon;
        let dim = y.len();
        let stretch = (1.0 + t).sqrt();
        let mut x = [0.0; MAX_DIM];
        for (xi, yi) in x.iter_mut().zip(y) {
            *xi = stretch * yi;
        }
        (1.0 + t).powf(dim as f64 / 2.0) * (self.physical.target)(&x[..dim])
    }

    /// Jacobian determinant of `(y, s) -> (x, t)`: `e^{s(N+2)/2}`.
    pub fn jacobian_ys(&self, s: f64) -> Result<f64> {
        let slack = 1e-12 * self.horizon.max(1.0);
        if !(s >= -slack && s <= self.horizon + slack) {
            return Err(Error::OutOfRange(format!(
                "s = {s} lies outside [0, {}]",
                self.horizon
            )));
        }
        Ok(jacobian_ys(self.dim(), s))
    }

    /// Jacobian determinant of `y -> x` at the final time: `(1 + T)^{N/2}`.
    pub fn jacobian_y(&self) -> f64 {
        jacobian_y(self.dim(), self.physical.horizon)
    }

    /// `(k1, k2, k3, k4)` with `k1 <= D_ys <= k2` and `k3 <= D_y <= k4`.
    pub fn jacobian_bounds(&self) -> (f64, f64, f64, f64) {
        let dy = self.jacobian_y();
        (1.0, jacobian_ys(self.dim(), self.horizon), dy, dy)
    }
}

pub fn jacobian_ys(dim: usize, s: f64) -> f64 {
    (s * (dim as f64 + 2.0) / 2.0).exp()
}

pub fn jacobian_y(dim: usize, horizon_t: f64) -> f64 {
    (1.0 + horizon_t).powf(dim as f64 / 2.0)
}

/// Multilinear interpolation of nodal values; zero outside the grid.
pub fn interpolate(grid: &Grid, values: &[f64], y: &[f64]) -> f64 {
    let n = grid.points_per_axis();
    let h = grid.spacing();
    let r = grid.radius();
    let mut base = [0usize; MAX_DIM];
    let mut frac = [0.0; MAX_DIM];
    for a in 0..grid.dim() {
        let u = (y[a] + r) / h;
        if !(u >= -1e-9 && u <= (n - 1) as f64 + 1e-9) {
            return 0.0;
        }
        let u = u.clamp(0.0, (n - 1) as f64);
        let j = (u.floor() as usize).min(n - 2);
        base[a] = j;
        frac[a] = u - j as f64;
    }
    let corners = 1usize << grid.dim();
    let mut total = 0.0;
    for c in 0..corners {
        let mut idx = 0;
        let mut wgt = 1.0;
        for a in 0..grid.dim() {
            let bit = (c >> a) & 1;
            idx = idx * n + base[a] + bit;
            wgt *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
        }
        if wgt != 0.0 {
            total += wgt * values[idx];
        }
    }
    total
}

/// A similarity-variable control pulled back to physical variables:
/// `f(x, t) = (1 + t)^{-N/2 - 1} g(x / sqrt(1 + t), log(1 + t))`.
#[derive(Clone, Debug)]
pub struct PhysicalControl {
    time: TimeGrid,
    series: ControlSeries,
}

impl PhysicalControl {
    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        let series = &self.series;
        let time = self.time;
        from_similarity_value(
            Quantity::Control,
            |y, s| {
                let k = time.step_containing(s);
                interpolate(series.grid(), series.step(k), y)
            },
            x,
            t,
        )
    }

    /// Physical time, spatial stretch `sqrt(1 + t_k)` and nodal values of step `k`,
    /// sampled at the physical points `x_j = sqrt(1 + t_k) y_j`.
    pub fn sample_step(&self, k: usize) -> (f64, f64, Vec<f64>) {
        let s = self.time.time(k);
        let t = s.exp_m1();
        let factor = (1.0 + t).powf(-Quantity::Control.exponent(self.series.grid().dim()));
        let values = self.series.step(k).iter().map(|g| factor * g).collect();
        (t, (1.0 + t).sqrt(), values)
    }

    pub fn series(&self) -> &ControlSeries {
        &self.series
    }
}

/// Physical leader and follower controls `(f, w_1, ..., w_n)`.
#[derive(Clone, Debug)]
pub struct PhysicalControls {
    pub leader: PhysicalControl,
    pub followers: Vec<PhysicalControl>,
}

/// Pulls similarity controls back to physical variables.
pub fn from_similarity_controls(
    g: &ControlSeries,
    h: &[ControlSeries],
    time: &TimeGrid,
    p: &PhysicalScenario,
) -> Result<PhysicalControls> {
    let expected = p.horizon.ln_1p();
    if (time.horizon() - expected).abs() > 1e-12 * expected.max(1.0) {
        return Err(Error::OutOfRange(format!(
            "control horizon {} does not match log(1 + T) = {expected}",
            time.horizon()
        )));
    }
    if h.len() != p.follower_regions.len() {
        return Err(Error::OutOfRange(format!(
            "expected {} follower controls, got {}",
            p.follower_regions.len(),
            h.len()
        )));
    }
    for series in std::iter::once(g).chain(h) {
        if series.steps() != time.steps() {
            return Err(Error::OutOfRange(
                "control step count differs from the time grid".into(),
            ));
        }
        if series.grid().dim() != p.dim {
            return Err(Error::GridMismatch(
                "control dimension differs from the scenario".into(),
            ));
        }
    }
    let wrap = |s: &ControlSeries| PhysicalControl {
        time: *time,
        series: s.clone(),
    };
    Ok(PhysicalControls {
        leader: wrap(g),
        followers: h.iter().map(wrap).collect(),
    })
}
