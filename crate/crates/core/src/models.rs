//! Benchmark systems and disturbance laws.
//!
//! Two concrete systems ship with the crate: a thermostatically controlled
//! load (one state, temperature in degrees Celsius) and a two-tank stormwater
//! network with an automated valve (two states, water elevations in feet).
//! Arbitrary systems can be supplied through [`FnSystem`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::risk::DiscreteDistribution;

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

/// A discrete-time stochastic control system `x' = f(x, u, d)` with a
/// bounded constraint surrogate `g_K`.
pub trait SystemModel: Sync {
    fn state_dim(&self) -> usize {
        self.state_bounds().len()
    }

    fn control_dim(&self) -> usize {
        self.control_bounds().len()
    }

    fn horizon(&self) -> usize;

    fn state_bounds(&self) -> &[Interval];

    fn control_bounds(&self) -> &[Interval];

    /// Writes `f(x, u, d)` into `next`.
    fn step(&self, x: &[f64], u: &[f64], d: f64, next: &mut [f64]) -> Result<()>;

    /// Constraint surrogate `g_K`: negative or zero inside `K`, positive outside.
    fn constraint_cost(&self, x: &[f64]) -> f64;

    /// Clamps `x` into the declared state bounds.
    fn clamp_state(&self, x: &mut [f64]) {
        for (v, b) in x.iter_mut().zip(self.state_bounds()) {
            *v = v.clamp(b.lo, b.hi);
        }
    }
}

fn check_unit_control(u: f64) -> Result<()> {
    if (0.0..=1.0).contains(&u) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("control {u} outside [0, 1]")))
    }
}

// ---------------------------------------------------------------------------
// Thermostatically controlled load
// ---------------------------------------------------------------------------

/// Thermostatically controlled load parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TclParams {
    /// Time delay `exp(-dt / (c r))`, derived at construction.
    pub a: f64,
    /// Temperature shift, degrees Celsius.
    pub b: f64,
    /// Thermal capacitance, kWh per degree Celsius.
    pub capacitance: f64,
    /// Control efficiency.
    pub efficiency: f64,
    /// Range of energy transfer, kW.
    pub power: f64,
    /// Thermal resistance, degrees Celsius per kW.
    pub resistance: f64,
    /// Step length, hours.
    pub dt_hours: f64,
    pub horizon: usize,
    /// Constraint set `K`, degrees Celsius.
    pub k: Interval,
    /// State space, degrees Celsius.
    pub state_bounds: Interval,
}

impl TclParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        b: f64,
        capacitance: f64,
        efficiency: f64,
        power: f64,
        resistance: f64,
        dt_hours: f64,
        horizon: usize,
    ) -> Result<Self> {
        if !(capacitance > 0.0 && resistance > 0.0 && dt_hours > 0.0 && power >= 0.0) {
            return Err(Error::InvalidInput(
                "TCL capacitance, resistance and step length must be positive".into(),
            ));
        }
        if horizon == 0 {
            return Err(Error::InvalidInput("horizon must be positive".into()));
        }
        Ok(Self {
            a: (-dt_hours / (capacitance * resistance)).exp(),
            b,
            capacitance,
            efficiency,
            power,
            resistance,
            dt_hours,
            horizon,
            k: Interval::new(20.0, 21.0),
            state_bounds: Interval::new(18.0, 23.0),
        })
    }

    /// The published benchmark: b = 32 C, c = 2 kWh/C, eta = 0.7, p = 14 kW,
    /// r = 2 C/kW, dt = 5 min, T = 12.
    pub fn benchmark() -> Self {
        Self::new(32.0, 2.0, 0.7, 14.0, 2.0, 5.0 / 60.0, 12).expect("benchmark parameters are valid")
    }
}

impl Default for TclParams {
    fn default() -> Self {
        Self::benchmark()
    }
}

/// `a x + (1 - a)(b - eta r p u) + d`.
pub fn tcl_step(params: &TclParams, x: f64, u: f64, d: f64) -> Result<f64> {
    check_unit_control(u)?;
    let a = params.a;
    Ok(a * x + (1.0 - a) * (params.b - params.efficiency * params.resistance * params.power * u) + d)
}

/// `max(x - 21, 20 - x)`.
pub fn tcl_gk(x: f64) -> f64 {
    (x - 21.0).max(20.0 - x)
}

#[derive(Debug, Clone)]
pub struct TclSystem {
    pub params: TclParams,
    bounds: [Interval; 1],
    controls: [Interval; 1],
}

impl TclSystem {
    pub fn new(params: TclParams) -> Self {
        Self {
            bounds: [params.state_bounds],
            controls: [Interval::new(0.0, 1.0)],
            params,
        }
    }
}

impl SystemModel for TclSystem {
    fn horizon(&self) -> usize {
        self.params.horizon
    }

    fn state_bounds(&self) -> &[Interval] {
        &self.bounds
    }

    fn control_bounds(&self) -> &[Interval] {
        &self.controls
    }

    fn step(&self, x: &[f64], u: &[f64], d: f64, next: &mut [f64]) -> Result<()> {
        next[0] = tcl_step(&self.params, x[0], u[0], d)?;
        Ok(())
    }

    fn constraint_cost(&self, x: &[f64]) -> f64 {
        let k = self.params.k;
        (x[0] - k.hi).max(k.lo - x[0])
    }
}

// ---------------------------------------------------------------------------
// Two-tank stormwater system
// ---------------------------------------------------------------------------

/// Two-tank stormwater parameters (feet, seconds, minutes).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StormwaterParams {
    /// Surface area of tank 1, ft^2.
    pub area1: f64,
    /// Surface area of tank 2, ft^2.
    pub area2: f64,
    pub discharge_coeff: f64,
    /// Gravitational acceleration, ft/s^2.
    pub gravity: f64,
    /// Maximum level in tank 1 before surcharge, ft.
    pub k1: f64,
    /// Maximum level in tank 2 before surcharge, ft.
    pub k2: f64,
    /// Drain radius, ft.
    pub drain_radius: f64,
    /// Valve radius, ft.
    pub valve_radius: f64,
    /// Step length, minutes.
    pub dt_minutes: f64,
    pub horizon: usize,
    /// Invert of the connecting pipe above the base of tank 1, ft.
    pub z1: f64,
    /// Invert of the connecting pipe above the base of tank 2, ft.
    pub z1_in: f64,
    /// Orifice elevation above the base of tank 2, ft.
    pub z2: f64,
    pub state_bounds: [Interval; 2],
}

impl StormwaterParams {
    pub fn benchmark() -> Self {
        Self {
            area1: 28292.0,
            area2: 25965.0,
            discharge_coeff: 0.61,
            gravity: 32.2,
            k1: 3.5,
            k2: 5.0,
            drain_radius: 2.0 / 3.0,
            valve_radius: 1.0 / 3.0,
            dt_minutes: 5.0,
            horizon: 24,
            z1: 1.0,
            z1_in: 2.5,
            z2: 1.0,
            state_bounds: [Interval::new(0.0, 5.0), Interval::new(0.0, 6.5)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.area1,
            self.area2,
            self.discharge_coeff,
            self.gravity,
            self.drain_radius,
            self.valve_radius,
            self.dt_minutes,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidInput(
                "stormwater areas, radii, coefficients and step length must be positive".into(),
            ));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidInput("horizon must be positive".into()));
        }
        Ok(())
    }

    /// Head difference across the connecting pipe.
    pub fn head(&self, x: [f64; 2]) -> f64 {
        (x[0] - self.z1).max(0.0) - (x[1] - self.z1_in).max(0.0)
    }

    /// Valve flow from tank 1 into tank 2, cfs (negative when reversed).
    pub fn valve_flow(&self, x: [f64; 2], u: f64) -> f64 {
        let h = self.head(x);
        if h == 0.0 {
            return 0.0;
        }
        let orifice = std::f64::consts::PI * self.valve_radius * self.valve_radius;
        u * orifice * h.signum() * (2.0 * self.gravity * h.abs()).sqrt()
    }

    /// Drain flow out of tank 2, cfs.
    pub fn drain_flow(&self, x: [f64; 2]) -> f64 {
        if x[1] >= self.z2 {
            let orifice = std::f64::consts::PI * self.drain_radius * self.drain_radius;
            self.discharge_coeff * orifice * (2.0 * self.gravity * (x[1] - self.z2)).sqrt()
        } else {
            0.0
        }
    }
}

impl Default for StormwaterParams {
    fn default() -> Self {
        Self::benchmark()
    }
}

/// One explicit Euler step of the tank balance, clamped to the state bounds.
pub fn stormwater_step(params: &StormwaterParams, x: [f64; 2], u: f64, d: f64) -> Result<[f64; 2]> {
    if x[0] < 0.0 || x[1] < 0.0 {
        return Err(Error::InvalidInput(format!("negative water level {x:?}")));
    }
    if d < 0.0 {
        return Err(Error::InvalidInput(format!("negative runoff {d}")));
    }
    check_unit_control(u)?;
    let dt_seconds = params.dt_minutes * 60.0;
    let q_valve = params.valve_flow(x, u);
    let q_drain = params.drain_flow(x);
    let next = [
        x[0] + (d - q_valve) / params.area1 * dt_seconds,
        x[1] + (d + q_valve - q_drain) / params.area2 * dt_seconds,
    ];
    let [b1, b2] = params.state_bounds;
    Ok([next[0].clamp(b1.lo, b1.hi), next[1].clamp(b2.lo, b2.hi)])
}

/// Surcharge level `max(x1 - k1, x2 - k2, 0)`, with the benchmark capacities.
pub fn stormwater_gk(x: [f64; 2]) -> f64 {
    let p = StormwaterParams::benchmark();
    stormwater_gk_with(&p, x)
}

pub fn stormwater_gk_with(params: &StormwaterParams, x: [f64; 2]) -> f64 {
    (x[0] - params.k1).max(x[1] - params.k2).max(0.0)
}

#[derive(Debug, Clone)]
pub struct StormwaterSystem {
    pub params: StormwaterParams,
    controls: [Interval; 1],
}

impl StormwaterSystem {
    pub fn new(params: StormwaterParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            controls: [Interval::new(0.0, 1.0)],
        })
    }
}

impl SystemModel for StormwaterSystem {
    fn horizon(&self) -> usize {
        self.params.horizon
    }

    fn state_bounds(&self) -> &[Interval] {
        &self.params.state_bounds
    }

    fn control_bounds(&self) -> &[Interval] {
        &self.controls
    }

    fn step(&self, x: &[f64], u: &[f64], d: f64, next: &mut [f64]) -> Result<()> {
        let y = stormwater_step(&self.params, [x[0], x[1]], u[0], d)?;
        next[..2].copy_from_slice(&y);
        Ok(())
    }

    fn constraint_cost(&self, x: &[f64]) -> f64 {
        stormwater_gk_with(&self.params, [x[0], x[1]])
    }
}

// ---------------------------------------------------------------------------
// User-defined systems
// ---------------------------------------------------------------------------

/// A system assembled from closures.
pub struct FnSystem<F, G> {
    state_bounds: Vec<Interval>,
    control_bounds: Vec<Interval>,
    horizon: usize,
    dynamics: F,
    cost: G,
}

impl<F, G> FnSystem<F, G>
where
    F: Fn(&[f64], &[f64], f64, &mut [f64]) + Sync,
    G: Fn(&[f64]) -> f64 + Sync,
{
    pub fn new(
        state_bounds: Vec<Interval>,
        control_bounds: Vec<Interval>,
        horizon: usize,
        dynamics: F,
        cost: G,
    ) -> Self {
        Self {
            state_bounds,
            control_bounds,
            horizon,
            dynamics,
            cost,
        }
    }
}

impl<F, G> SystemModel for FnSystem<F, G>
where
    F: Fn(&[f64], &[f64], f64, &mut [f64]) + Sync,
    G: Fn(&[f64]) -> f64 + Sync,
{
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn state_bounds(&self) -> &[Interval] {
        &self.state_bounds
    }

    fn control_bounds(&self) -> &[Interval] {
        &self.control_bounds
    }

    fn step(&self, x: &[f64], u: &[f64], d: f64, next: &mut [f64]) -> Result<()> {
        (self.dynamics)(x, u, d, next);
        Ok(())
    }

    fn constraint_cost(&self, x: &[f64]) -> f64 {
        (self.cost)(x)
    }
}

// ---------------------------------------------------------------------------
// Disturbance laws
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Skew {
    Left,
    None,
    Right,
}

/// Named disturbance families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DisturbanceFamily {
    #[serde(rename = "temperature-left")]
    TemperatureLeft,
    #[serde(rename = "temperature-none")]
    TemperatureNone,
    #[serde(rename = "temperature-right")]
    TemperatureRight,
    #[serde(rename = "stormwater-runoff")]
    StormwaterRunoff,
}

impl DisturbanceFamily {
    pub fn name(self) -> &'static str {
        match self {
            Self::TemperatureLeft => "temperature-left",
            Self::TemperatureNone => "temperature-none",
            Self::TemperatureRight => "temperature-right",
            Self::StormwaterRunoff => "stormwater-runoff",
        }
    }
}

impl fmt::Display for DisturbanceFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DisturbanceFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "temperature-left" => Ok(Self::TemperatureLeft),
            "temperature-none" => Ok(Self::TemperatureNone),
            "temperature-right" => Ok(Self::TemperatureRight),
            "stormwater-runoff" => Ok(Self::StormwaterRunoff),
            other => Err(Error::InvalidInput(format!("unknown disturbance family `{other}`"))),
        }
    }
}

/// Runoff statistics the stormwater law is matched to: mean (cfs),
/// variance (cfs^2) and skewness.
pub const RUNOFF_MOMENTS: (f64, f64, f64) = (12.2, 9.9, 0.74);

/// A temperature disturbance law with a declared skew direction.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewedDisturbance {
    pub dist: DiscreteDistribution,
    pub declared_skew: Skew,
}

impl SkewedDisturbance {
    /// Atoms equally spaced on `[-0.5, 0.5]` (endpoints exact), weighted by a
    /// discretized Beta(a, b) shape: (2, 5) for right skew, (5, 2) for left,
    /// (2, 2) for none.
    pub fn temperature(skew: Skew, n_atoms: usize) -> Result<Self> {
        let (a, b) = match skew {
            Skew::Left => (5.0, 2.0),
            Skew::None => (2.0, 2.0),
            Skew::Right => (2.0, 5.0),
        };
        Self::temperature_with_shape(skew, a, b, n_atoms)
    }

    pub fn temperature_with_shape(skew: Skew, a: f64, b: f64, n_atoms: usize) -> Result<Self> {
        if n_atoms < 3 {
            return Err(Error::InvalidInput(format!(
                "disturbance needs at least 3 atoms, got {n_atoms}"
            )));
        }
        if !(a >= 1.0 && b >= 1.0) {
            return Err(Error::InvalidInput("Beta shape parameters must be >= 1".into()));
        }
        let n = n_atoms as f64;
        let half_span = 2.0 * (n - 1.0);
        // Mirror-exact construction: atom k and atom n-1-k are exact negatives,
        // and the cell midpoints u, 1-u are computed from integers.
        let support: Vec<f64> = (0..n_atoms)
            .map(|k| (2.0 * k as f64 - (n - 1.0)) / half_span)
            .collect();
        let weights: Vec<f64> = (0..n_atoms)
            .map(|k| {
                let u = (k as f64 + 0.5) / n;
                let v = ((n_atoms - 1 - k) as f64 + 0.5) / n;
                u.powf(a - 1.0) * v.powf(b - 1.0)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let probs = weights.iter().map(|w| w / total).collect();
        let dist = DiscreteDistribution::new(support, probs)?;
        let (_, _, sample_skew) = dist.moments();
        let consistent = match skew {
            Skew::Left => sample_skew < 0.0,
            Skew::None => sample_skew.abs() <= 1e-9,
            Skew::Right => sample_skew > 0.0,
        };
        if !consistent {
            return Err(Error::InvalidInput(format!(
                "shape ({a}, {b}) gives skewness {sample_skew}, inconsistent with {skew:?}"
            )));
        }
        Ok(Self {
            dist,
            declared_skew: skew,
        })
    }
}

/// Equal-probability runoff law with prescribed mean, variance and skewness.
///
/// The shape comes from a midpoint-discretized log-normal whose log-scale
/// parameter is bisected until the discrete skewness matches; a positive
/// affine map then fixes mean and variance exactly (skewness is invariant
/// under it).
pub fn moment_matched_runoff(mean: f64, variance: f64, skew: f64, n_atoms: usize) -> Result<DiscreteDistribution> {
    if n_atoms < 3 {
        return Err(Error::InvalidInput(format!(
            "disturbance needs at least 3 atoms, got {n_atoms}"
        )));
    }
    if !(variance > 0.0 && skew > 0.0) {
        return Err(Error::InvalidInput(
            "runoff matching needs positive variance and positive skewness".into(),
        ));
    }
    let shape_skew = |sigma: f64| -> Result<f64> {
        Ok(DiscreteDistribution::lognormal_midpoint(0.0, sigma, n_atoms)?.moments().2)
    };
    let (mut lo, mut hi) = (1e-6_f64, 4.0_f64);
    if shape_skew(hi)? < skew {
        return Err(Error::Numeric(format!(
            "skewness {skew} is not reachable with {n_atoms} equal-probability atoms"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if shape_skew(mid)? < skew {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let shape = DiscreteDistribution::lognormal_midpoint(0.0, 0.5 * (lo + hi), n_atoms)?;
    let (m, v, _) = shape.moments();
    let scale = (variance / v).sqrt();
    let dist = shape.map(|y| mean + (y - m) * scale)?;
    if dist.min_atom() < 0.0 {
        return Err(Error::Numeric(format!(
            "moment match needs a negative runoff atom ({}); infeasible",
            dist.min_atom()
        )));
    }
    let (gm, gv, gs) = dist.moments();
    if (gm - mean).abs() > 0.01 * mean.abs() || (gv - variance).abs() > 0.01 * variance || (gs - skew).abs() > 0.01 {
        return Err(Error::Numeric(format!(
            "moment match missed its targets: ({gm}, {gv}, {gs})"
        )));
    }
    Ok(dist)
}

/// Builds the disturbance law for a named family.
pub fn make_disturbance(family: DisturbanceFamily, n_atoms: usize) -> Result<DiscreteDistribution> {
    let skew = match family {
        DisturbanceFamily::TemperatureLeft => Skew::Left,
        DisturbanceFamily::TemperatureNone => Skew::None,
        DisturbanceFamily::TemperatureRight => Skew::Right,
        DisturbanceFamily::StormwaterRunoff => {
            let (m, v, s) = RUNOFF_MOMENTS;
            return moment_matched_runoff(m, v, s, n_atoms);
        }
    };
    Ok(SkewedDisturbance::temperature(skew, n_atoms)?.dist)
}
