//! TOML experiment configuration. Unknown keys are rejected; physical
//! quantities carry their unit in the key name.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::dp::CapExponent;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::models::{DisturbanceFamily, Interval, StormwaterParams, StormwaterSystem, SystemModel, TclParams, TclSystem};
use crate::risk::RiskLevel;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Overrides the model's default horizon.
    pub horizon_steps: Option<usize>,
    pub system: SystemConfig,
    pub grid: GridConfig,
    pub disturbance: DisturbanceConfig,
    pub analysis: AnalysisConfig,
    pub monte_carlo: MonteCarloConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum SystemConfig {
    Tcl(TclConfig),
    Stormwater(StormwaterConfig),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TclConfig {
    pub ambient_shift_celsius: f64,
    pub capacitance_kwh_per_celsius: f64,
    pub efficiency: f64,
    pub power_kw: f64,
    pub resistance_celsius_per_kw: f64,
    pub time_step_minutes: f64,
    /// Constraint set `K` as `[low, high]`.
    pub constraint_celsius: [f64; 2],
}

impl Default for TclConfig {
    fn default() -> Self {
        let p = TclParams::benchmark();
        Self {
            ambient_shift_celsius: p.b,
            capacitance_kwh_per_celsius: p.capacitance,
            efficiency: p.efficiency,
            power_kw: p.power,
            resistance_celsius_per_kw: p.resistance,
            time_step_minutes: p.dt_hours * 60.0,
            constraint_celsius: [p.k.lo, p.k.hi],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StormwaterConfig {
    pub tank1_area_ft2: f64,
    pub tank2_area_ft2: f64,
    pub discharge_coefficient: f64,
    pub gravity_ft_per_s2: f64,
    pub tank1_max_level_ft: f64,
    pub tank2_max_level_ft: f64,
    pub drain_radius_ft: f64,
    pub valve_radius_ft: f64,
    pub time_step_minutes: f64,
    pub pipe_invert_tank1_ft: f64,
    pub pipe_invert_tank2_ft: f64,
    pub orifice_elevation_ft: f64,
}

impl Default for StormwaterConfig {
    fn default() -> Self {
        let p = StormwaterParams::benchmark();
        Self {
            tank1_area_ft2: p.area1,
            tank2_area_ft2: p.area2,
            discharge_coefficient: p.discharge_coeff,
            gravity_ft_per_s2: p.gravity,
            tank1_max_level_ft: p.k1,
            tank2_max_level_ft: p.k2,
            drain_radius_ft: p.drain_radius,
            valve_radius_ft: p.valve_radius,
            time_step_minutes: p.dt_minutes,
            pipe_invert_tank1_ft: p.z1,
            pipe_invert_tank2_ft: p.z1_in,
            orifice_elevation_ft: p.z2,
        }
    }
}

/// One grid axis, in the unit of the corresponding state or control.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisConfig {
    pub min: f64,
    pub max: f64,
    pub resolution: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub state: Vec<AxisConfig>,
    pub control: Vec<AxisConfig>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceConfig {
    pub families: Vec<DisturbanceFamily>,
    pub n_atoms: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub gammas: Vec<f64>,
    pub alphas: Vec<RiskLevel>,
    /// Thresholds on CVaR of `G`, in the unit of `g_K`.
    pub r_values: Vec<f64>,
    #[serde(default)]
    pub cap_exponent: CapExponent,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub n_trajectories: usize,
    #[serde(default)]
    pub interpolate_policy: bool,
    /// Write every `G` sample as CSV in addition to the binary summary.
    #[serde(default)]
    pub export_samples: bool,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

/// Parsed configuration together with the SHA-256 of its source text.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub sha256: String,
}

impl LoadedConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(Self {
            config,
            sha256: hex::encode(Sha256::digest(text.as_bytes())),
        })
    }
}

fn non_empty<T>(list: &[T], what: &str) -> Result<()> {
    if list.is_empty() {
        Err(Error::Config(format!("{what} must not be empty")))
    } else {
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        non_empty(&self.analysis.gammas, "analysis.gammas")?;
        non_empty(&self.analysis.alphas, "analysis.alphas")?;
        non_empty(&self.analysis.r_values, "analysis.r_values")?;
        non_empty(&self.disturbance.families, "disturbance.families")?;
        if let Some(g) = self.analysis.gammas.iter().find(|g| !(**g >= 1.0 && g.is_finite())) {
            return Err(Error::Config(format!("every gamma must be >= 1, got {g}")));
        }
        if let Some(r) = self.analysis.r_values.iter().find(|r| !r.is_finite()) {
            return Err(Error::Config(format!("r values must be finite, got {r}")));
        }
        if self.disturbance.n_atoms == 0 {
            return Err(Error::Config("disturbance.n_atoms must be at least 1".into()));
        }
        if self.monte_carlo.n_trajectories == 0 {
            return Err(Error::Config("monte_carlo.n_trajectories must be at least 1".into()));
        }
        if self.horizon_steps == Some(0) {
            return Err(Error::Config("horizon_steps must be positive".into()));
        }
        let (state_dim, runoff) = match self.system {
            SystemConfig::Tcl(_) => (1, false),
            SystemConfig::Stormwater(_) => (2, true),
        };
        if self.grid.state.len() != state_dim || self.grid.control.len() != 1 {
            return Err(Error::Config(format!(
                "{} needs {state_dim} state axes and 1 control axis",
                self.system_name()
            )));
        }
        if let Some(f) = self
            .disturbance
            .families
            .iter()
            .find(|f| (**f == DisturbanceFamily::StormwaterRunoff) != runoff)
        {
            return Err(Error::Config(format!("disturbance {f} does not apply to {}", self.system_name())));
        }
        self.grids()?;
        self.model()?;
        Ok(())
    }

    pub fn system_name(&self) -> &'static str {
        match self.system {
            SystemConfig::Tcl(_) => "tcl",
            SystemConfig::Stormwater(_) => "stormwater",
        }
    }

    /// State and control grids.
    pub fn grids(&self) -> Result<(Grid, Grid)> {
        let axes = |a: &[AxisConfig]| a.iter().map(|x| (x.min, x.max, x.resolution)).collect::<Vec<_>>();
        let sgrid = Grid::from_bounds(&axes(&self.grid.state)).map_err(|e| Error::Config(format!("grid.state: {e}")))?;
        let cgrid = Grid::from_bounds(&axes(&self.grid.control)).map_err(|e| Error::Config(format!("grid.control: {e}")))?;
        if cgrid.axes()[0].min < 0.0 || cgrid.axes()[0].max > 1.0 {
            return Err(Error::Config("control grid must lie in [0, 1]".into()));
        }
        Ok((sgrid, cgrid))
    }

    /// The model, with state bounds taken from the state grid.
    pub fn model(&self) -> Result<Box<dyn SystemModel>> {
        let bounds: Vec<Interval> = self.grid.state.iter().map(|a| Interval::new(a.min, a.max)).collect();
        match &self.system {
            SystemConfig::Tcl(c) => {
                let p = TclParams::benchmark();
                let mut params = TclParams::new(
                    c.ambient_shift_celsius,
                    c.capacitance_kwh_per_celsius,
                    c.efficiency,
                    c.power_kw,
                    c.resistance_celsius_per_kw,
                    c.time_step_minutes / 60.0,
                    self.horizon_steps.unwrap_or(p.horizon),
                )
                .map_err(|e| Error::Config(e.to_string()))?;
                let [lo, hi] = c.constraint_celsius;
                if !(lo <= hi) {
                    return Err(Error::Config("constraint_celsius must be [low, high]".into()));
                }
                params.k = Interval::new(lo, hi);
                params.state_bounds = bounds[0];
                Ok(Box::new(TclSystem::new(params)))
            }
            SystemConfig::Stormwater(c) => {
                let params = StormwaterParams {
                    area1: c.tank1_area_ft2,
                    area2: c.tank2_area_ft2,
                    discharge_coeff: c.discharge_coefficient,
                    gravity: c.gravity_ft_per_s2,
                    k1: c.tank1_max_level_ft,
                    k2: c.tank2_max_level_ft,
                    drain_radius: c.drain_radius_ft,
                    valve_radius: c.valve_radius_ft,
                    dt_minutes: c.time_step_minutes,
                    horizon: self.horizon_steps.unwrap_or(StormwaterParams::benchmark().horizon),
                    z1: c.pipe_invert_tank1_ft,
                    z1_in: c.pipe_invert_tank2_ft,
                    z2: c.orifice_elevation_ft,
                    state_bounds: [bounds[0], bounds[1]],
                };
                Ok(Box::new(StormwaterSystem::new(params).map_err(|e| Error::Config(e.to_string()))?))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TCL: &str = r#"
seed = 7

[system]
model = "tcl"

[grid]
state = [{ min = 18.0, max = 23.0, resolution = 0.1 }]
control = [{ min = 0.0, max = 1.0, resolution = 0.1 }]

[disturbance]
families = ["temperature-none"]
n_atoms = 10

[analysis]
gammas = [14.0]
alphas = [0.99, 0.05]
r_values = [1.5]

[monte_carlo]
n_trajectories = 10
"#;

    #[test]
    fn parses_minimal_tcl() {
        let loaded = LoadedConfig::from_text(TCL).unwrap();
        assert_eq!(loaded.sha256.len(), 64);
        let c = loaded.config;
        assert_eq!(c.system, SystemConfig::Tcl(TclConfig::default()));
        assert_eq!(c.analysis.cap_exponent, CapExponent::InverseHorizon);
        let model = c.model().unwrap();
        assert_eq!(model.horizon(), 12);
        assert_eq!(c.grids().unwrap().0.len(), 51);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let bad = TCL.replace("n_atoms = 10", "n_atoms = 10\nweird = 1");
        assert!(matches!(LoadedConfig::from_text(&bad), Err(Error::Config(_))));
        let bad = TCL.replace("model = \"tcl\"", "model = \"tcl\"\ncapacitance = 2.0");
        assert!(LoadedConfig::from_text(&bad).is_err());
        let bad = TCL.replace("gammas = [14.0]", "gammas = [0.5]");
        assert!(LoadedConfig::from_text(&bad).is_err());
        let bad = TCL.replace("alphas = [0.99, 0.05]", "alphas = [0.0]");
        assert!(LoadedConfig::from_text(&bad).is_err());
        let bad = TCL.replace("r_values = [1.5]", "r_values = []");
        assert!(LoadedConfig::from_text(&bad).is_err());
        let bad = TCL.replace("temperature-none", "stormwater-runoff");
        assert!(LoadedConfig::from_text(&bad).is_err());
        let bad = TCL.replace("resolution = 0.1 }]\ncontrol", "resolution = 0.3 }]\ncontrol");
        assert!(LoadedConfig::from_text(&bad).is_err());
    }

    #[test]
    fn overrides_apply() {
        let text = TCL.replace("model = \"tcl\"", "model = \"tcl\"\npower_kw = 10.0").replace("seed = 7", "seed = 7\nhorizon_steps = 4");
        let c = LoadedConfig::from_text(&text).unwrap().config;
        match &c.system {
            SystemConfig::Tcl(t) => assert_eq!(t.power_kw, 10.0),
            _ => unreachable!(),
        }
        assert_eq!(c.model().unwrap().horizon(), 4);
    }
}
