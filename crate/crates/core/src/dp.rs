//! Finite-horizon backward recursions on a discrete kernel.
//!
//! All solvers share one engine: for `t = T-1, ..., 0`,
//!
//! ```text
//! V_t(i) = min_j [ c_t(i, j) + Phi(row(i, j), V_{t+1}) ]
//! ```
//!
//! where `Phi` is either the expectation under the kernel row, or the
//! supremum of `sum q_k xi_k V_{t+1}(k)` over densities `0 <= xi <= cap` with
//! unit mass (a CVaR at level `1 / cap` of the row). With `cap = 1` the only
//! feasible density is `xi = 1`, and the two operators agree bit-for-bit.
//! Argmin ties go to the lowest control index.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::io::{self, BinReader, BinWriter, Provenance};
use crate::kernel::TransitionKernel;
use crate::risk::{bounded_density_sup, expectation, RiskLevel};

/// Value function at one stage, indexed by state node.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub stage: usize,
    pub values: Vec<f64>,
}

/// Deterministic Markov policy: a control-node index per stage and state node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyTable {
    controls: Vec<Vec<u32>>,
    n_controls: usize,
}

impl PolicyTable {
    pub fn new(controls: Vec<Vec<u32>>, n_controls: usize) -> Result<Self> {
        let n_states = controls.first().map_or(0, Vec::len);
        if controls.is_empty() || n_states == 0 {
            return Err(Error::InvalidInput("policy needs at least one stage and state".into()));
        }
        for (t, stage) in controls.iter().enumerate() {
            if stage.len() != n_states {
                return Err(Error::InvalidInput(format!(
                    "policy stage {t} covers {} states, expected {n_states}",
                    stage.len()
                )));
            }
            if let Some(&j) = stage.iter().find(|&&j| j as usize >= n_controls) {
                return Err(Error::InvalidInput(format!(
                    "policy stage {t} uses control {j} but only {n_controls} exist"
                )));
            }
        }
        Ok(Self { controls, n_controls })
    }

    /// The same control at every stage and state.
    pub fn constant(horizon: usize, n_states: usize, control: usize, n_controls: usize) -> Result<Self> {
        Self::new(vec![vec![control as u32; n_states]; horizon], n_controls)
    }

    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    pub fn n_states(&self) -> usize {
        self.controls[0].len()
    }

    pub fn n_controls(&self) -> usize {
        self.n_controls
    }

    #[inline]
    pub fn control(&self, stage: usize, state: usize) -> usize {
        self.controls[stage][state] as usize
    }

    pub fn stage(&self, stage: usize) -> &[u32] {
        &self.controls[stage]
    }
}

/// Selects the per-stage density cap `alpha^(-e)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CapExponent {
    /// `e = 1 / T`.
    #[default]
    InverseHorizon,
    /// `e = 1 / (T + 1)`.
    InverseHorizonPlusOne,
}

impl CapExponent {
    pub fn exponent(self, horizon: usize) -> f64 {
        match self {
            Self::InverseHorizon => 1.0 / horizon as f64,
            Self::InverseHorizonPlusOne => 1.0 / (horizon as f64 + 1.0),
        }
    }

    /// Upper bound on each per-stage density.
    pub fn cap(self, alpha: RiskLevel, horizon: usize) -> f64 {
        alpha.alpha().powf(-self.exponent(horizon))
    }

    /// The CVaR level a single stage's supremum corresponds to.
    pub fn stage_level(self, alpha: RiskLevel, horizon: usize) -> RiskLevel {
        RiskLevel::new(alpha.alpha().powf(self.exponent(horizon))).expect("alpha^e stays in (0, 1]")
    }
}

/// Stage costs `c_t(i, j)` for `t < T` and terminal cost `c_T(i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostTables {
    stage: Vec<Vec<f64>>,
    terminal: Vec<f64>,
    n_controls: usize,
}

impl CostTables {
    /// `stage[t][i * n_controls + j]`.
    pub fn new(stage: Vec<Vec<f64>>, terminal: Vec<f64>, n_controls: usize) -> Result<Self> {
        let n_states = terminal.len();
        if n_states == 0 || n_controls == 0 {
            return Err(Error::InvalidInput("cost tables need states and controls".into()));
        }
        for (t, c) in stage.iter().enumerate() {
            if c.len() != n_states * n_controls {
                return Err(Error::InvalidInput(format!(
                    "stage cost {t} has {} entries, expected {}",
                    c.len(),
                    n_states * n_controls
                )));
            }
        }
        if stage.iter().flatten().chain(&terminal).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("costs must be finite".into()));
        }
        Ok(Self {
            stage,
            terminal,
            n_controls,
        })
    }

    pub fn from_fn(
        horizon: usize,
        n_states: usize,
        n_controls: usize,
        stage: impl Fn(usize, usize, usize) -> f64,
        terminal: impl Fn(usize) -> f64,
    ) -> Result<Self> {
        let stage = (0..horizon)
            .map(|t| {
                (0..n_states * n_controls)
                    .map(|r| stage(t, r / n_controls, r % n_controls))
                    .collect()
            })
            .collect();
        Self::new(stage, (0..n_states).map(terminal).collect(), n_controls)
    }

    /// `c_t(i, j) = c_T(i) = cost[i]` for every stage.
    pub fn state_cost(cost: &[f64], horizon: usize, n_controls: usize) -> Result<Self> {
        Self::from_fn(horizon, cost.len(), n_controls, |_, i, _| cost[i], |i| cost[i])
    }

    pub fn horizon(&self) -> usize {
        self.stage.len()
    }

    pub fn n_states(&self) -> usize {
        self.terminal.len()
    }

    #[inline]
    pub fn stage_cost(&self, t: usize, state: usize, control: usize) -> f64 {
        self.stage[t][state * self.n_controls + control]
    }

    pub fn terminal(&self) -> &[f64] {
        &self.terminal
    }
}

#[derive(Debug, Clone)]
pub struct RhoParams {
    pub alpha: RiskLevel,
    pub cap_exponent: CapExponent,
    pub costs: CostTables,
}

/// Value tables for every stage `0..=T` and the greedy policy.
#[derive(Debug, Clone, PartialEq)]
pub struct DpSolution {
    pub values: Vec<ValueTable>,
    pub policy: PolicyTable,
}

impl DpSolution {
    pub fn initial(&self) -> &ValueTable {
        &self.values[0]
    }
}

#[derive(Clone, Copy)]
enum Inner {
    Expectation,
    BoundedDensity { cap: f64 },
}

enum Choice<'a> {
    Optimize,
    Fixed(&'a PolicyTable),
}

fn backward<C>(
    kernel: &TransitionKernel,
    horizon: usize,
    terminal: Vec<f64>,
    stage_cost: C,
    inner: Inner,
    choice: Choice<'_>,
) -> DpSolution
where
    C: Fn(usize, usize, usize) -> f64 + Sync,
{
    let n_states = kernel.n_states();
    let n_controls = kernel.n_controls();
    let mut tables = vec![Vec::new(); horizon + 1];
    let mut policy = vec![Vec::new(); horizon];
    tables[horizon] = terminal;
    for t in (0..horizon).rev() {
        let next = &tables[t + 1];
        let stage: Vec<(f64, u32)> = (0..n_states)
            .into_par_iter()
            .map_init(Vec::new, |buf: &mut Vec<f64>, i| {
                let candidates = match choice {
                    Choice::Optimize => 0..n_controls,
                    Choice::Fixed(p) => {
                        let j = p.control(t, i);
                        j..j + 1
                    }
                };
                let mut best = (f64::INFINITY, 0u32);
                for j in candidates {
                    let (cols, probs) = kernel.row(i, j);
                    buf.clear();
                    buf.extend(cols.iter().map(|&c| next[c as usize]));
                    let phi = match inner {
                        Inner::Expectation => expectation(probs, buf),
                        Inner::BoundedDensity { cap } => bounded_density_sup(buf, probs, cap, None),
                    };
                    let v = stage_cost(t, i, j) + phi;
                    if v < best.0 {
                        best = (v, j as u32);
                    }
                }
                best
            })
            .collect();
        tables[t] = stage.iter().map(|s| s.0).collect();
        policy[t] = stage.iter().map(|s| s.1).collect();
    }
    let policy = match choice {
        Choice::Optimize => PolicyTable {
            controls: policy,
            n_controls,
        },
        Choice::Fixed(p) => p.clone(),
    };
    DpSolution {
        values: tables
            .into_iter()
            .enumerate()
            .map(|(stage, values)| ValueTable { stage, values })
            .collect(),
        policy,
    }
}

fn check_costs(kernel: &TransitionKernel, costs: &CostTables, horizon: usize) -> Result<()> {
    if costs.n_states() != kernel.n_states() || costs.n_controls != kernel.n_controls() {
        return Err(Error::InvalidInput(format!(
            "cost tables are {}x{} but the kernel is {}x{}",
            costs.n_states(),
            costs.n_controls,
            kernel.n_states(),
            kernel.n_controls()
        )));
    }
    if costs.horizon() != horizon {
        return Err(Error::InvalidInput(format!(
            "cost tables cover {} stages, horizon is {horizon}",
            costs.horizon()
        )));
    }
    Ok(())
}

fn check_policy(kernel: &TransitionKernel, policy: &PolicyTable, horizon: usize) -> Result<()> {
    if policy.horizon() != horizon || policy.n_states() != kernel.n_states() || policy.n_controls() != kernel.n_controls() {
        return Err(Error::InvalidInput(format!(
            "policy shape ({} stages, {} states, {} controls) does not match the kernel and horizon {horizon}",
            policy.horizon(),
            policy.n_states(),
            policy.n_controls()
        )));
    }
    Ok(())
}

/// Minimizes `E[ sum_{t=0}^T exp(gamma g_K(X_t)) ]`.
pub fn dp_exponential(kernel: &TransitionKernel, gk_nodes: &[f64], gamma: f64, horizon: usize) -> Result<DpSolution> {
    if !(gamma >= 1.0 && gamma.is_finite()) {
        return Err(Error::InvalidInput(format!("gamma must be >= 1, got {gamma}")));
    }
    if horizon == 0 {
        return Err(Error::InvalidInput("horizon must be positive".into()));
    }
    if gk_nodes.len() != kernel.n_states() {
        return Err(Error::InvalidInput(format!(
            "g_K has {} entries for {} states",
            gk_nodes.len(),
            kernel.n_states()
        )));
    }
    let gk_max = gk_nodes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !gk_max.is_finite() || !((horizon as f64 + 1.0) * (gamma * gk_max).exp()).is_finite() {
        return Err(Error::Numeric(format!(
            "exp(gamma * max g_K) = exp({gamma} * {gk_max}) overflows over {} stages",
            horizon + 1
        )));
    }
    let stage: Vec<f64> = gk_nodes.iter().map(|&g| (gamma * g).exp()).collect();
    let terminal = stage.clone();
    Ok(backward(
        kernel,
        horizon,
        terminal,
        |_, i, _| stage[i],
        Inner::Expectation,
        Choice::Optimize,
    ))
}

/// Minimizes the expected cumulative cost.
pub fn dp_risk_neutral(kernel: &TransitionKernel, costs: &CostTables, horizon: usize) -> Result<DpSolution> {
    check_costs(kernel, costs, horizon)?;
    Ok(backward(
        kernel,
        horizon,
        costs.terminal.clone(),
        |t, i, j| costs.stage_cost(t, i, j),
        Inner::Expectation,
        Choice::Optimize,
    ))
}

/// Expected cumulative cost of a fixed policy.
pub fn evaluate_policy(kernel: &TransitionKernel, costs: &CostTables, policy: &PolicyTable) -> Result<Vec<ValueTable>> {
    let horizon = policy.horizon();
    check_costs(kernel, costs, horizon)?;
    check_policy(kernel, policy, horizon)?;
    Ok(backward(
        kernel,
        horizon,
        costs.terminal.clone(),
        |t, i, j| costs.stage_cost(t, i, j),
        Inner::Expectation,
        Choice::Fixed(policy),
    )
    .values)
}

/// Upper bound on `inf_pi rho(Y)` for the cumulative cost `Y`, with the
/// per-stage density supremum solved exactly.
pub fn dp_theorem3(kernel: &TransitionKernel, params: &RhoParams, horizon: usize) -> Result<DpSolution> {
    check_costs(kernel, &params.costs, horizon)?;
    let cap = params.cap_exponent.cap(params.alpha, horizon);
    Ok(backward(
        kernel,
        horizon,
        params.costs.terminal.clone(),
        |t, i, j| params.costs.stage_cost(t, i, j),
        Inner::BoundedDensity { cap },
        Choice::Optimize,
    ))
}

/// The same recursion with the control fixed by `policy`; `J_0` bounds
/// `rho(Y)` under that policy from above.
pub fn dp_rho_policy(
    kernel: &TransitionKernel,
    policy: &PolicyTable,
    params: &RhoParams,
    horizon: usize,
) -> Result<Vec<ValueTable>> {
    check_costs(kernel, &params.costs, horizon)?;
    check_policy(kernel, policy, horizon)?;
    let cap = params.cap_exponent.cap(params.alpha, horizon);
    Ok(backward(
        kernel,
        horizon,
        params.costs.terminal.clone(),
        |t, i, j| params.costs.stage_cost(t, i, j),
        Inner::BoundedDensity { cap },
        Choice::Fixed(policy),
    )
    .values)
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

const VALUE_MAGIC: &[u8; 4] = b"RRVT";
const POLICY_MAGIC: &[u8; 4] = b"RRPT";

fn coord_header(grid: &Grid, prefix: &str) -> String {
    (0..grid.dim()).map(|d| format!("{prefix}{d}")).collect::<Vec<_>>().join(",")
}

fn coords(grid: &Grid, node: usize) -> String {
    grid.node_coords(node)
        .iter()
        .map(f64::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

/// CSV with columns `stage,node,x0..,value`.
pub fn write_values_csv(path: &Path, tables: &[ValueTable], grid: &Grid, provenance: &Provenance) -> Result<()> {
    let header = format!("stage,node,{},value", coord_header(grid, "x"));
    let rows = tables.iter().flat_map(|t| {
        t.values
            .iter()
            .enumerate()
            .map(move |(i, v)| format!("{},{i},{},{v}", t.stage, coords(grid, i)))
    });
    io::write_csv(path, provenance, &header, rows)
}

/// CSV with columns `stage,node,x0..,control,u0..`.
pub fn write_policy_csv(
    path: &Path,
    policy: &PolicyTable,
    sgrid: &Grid,
    cgrid: &Grid,
    provenance: &Provenance,
) -> Result<()> {
    let header = format!("stage,node,{},control,{}", coord_header(sgrid, "x"), coord_header(cgrid, "u"));
    let rows = (0..policy.horizon()).flat_map(|t| {
        (0..policy.n_states()).map(move |i| {
            let j = policy.control(t, i);
            format!("{t},{i},{},{j},{}", coords(sgrid, i), coords(cgrid, j))
        })
    });
    io::write_csv(path, provenance, &header, rows)
}

/// Binary cache: header, `u32` stage count, `u32` node count, then each
/// stage as `u32` stage index followed by `f64` values.
pub fn write_values_bin(path: &Path, tables: &[ValueTable], provenance: &Provenance) -> Result<()> {
    let n_nodes = tables.first().map_or(0, |t| t.values.len());
    let mut w = BinWriter::create(path, VALUE_MAGIC, 1, provenance)?;
    w.u32(tables.len() as u32)?;
    w.u32(n_nodes as u32)?;
    for t in tables {
        w.u32(t.stage as u32)?;
        for &v in &t.values {
            w.f64(v)?;
        }
    }
    w.finish()
}

pub fn read_values_bin(path: &Path) -> Result<Vec<ValueTable>> {
    let (mut r, _) = BinReader::open(path, VALUE_MAGIC, 1)?;
    let n_tables = r.u32()? as usize;
    let n_nodes = r.u32()? as usize;
    (0..n_tables)
        .map(|_| {
            let stage = r.u32()? as usize;
            let values = (0..n_nodes).map(|_| r.f64()).collect::<Result<_>>()?;
            Ok(ValueTable { stage, values })
        })
        .collect()
}

/// Binary cache: header, `u32` horizon, `u32` node count, `u32` control
/// count, then the control indices stage by stage.
pub fn write_policy_bin(path: &Path, policy: &PolicyTable, provenance: &Provenance) -> Result<()> {
    let mut w = BinWriter::create(path, POLICY_MAGIC, 1, provenance)?;
    w.u32(policy.horizon() as u32)?;
    w.u32(policy.n_states() as u32)?;
    w.u32(policy.n_controls() as u32)?;
    for stage in &policy.controls {
        for &j in stage {
            w.u32(j)?;
        }
    }
    w.finish()
}

pub fn read_policy_bin(path: &Path) -> Result<PolicyTable> {
    let (mut r, _) = BinReader::open(path, POLICY_MAGIC, 1)?;
    let horizon = r.u32()? as usize;
    let n_states = r.u32()? as usize;
    let n_controls = r.u32()? as usize;
    let controls = (0..horizon)
        .map(|_| (0..n_states).map(|_| r.u32()).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    PolicyTable::new(controls, n_controls)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state_kernel() -> TransitionKernel {
        TransitionKernel::from_rows(
            2,
            2,
            vec![
                vec![(0, 0.9), (1, 0.1)],
                vec![(0, 0.3), (1, 0.7)],
                vec![(0, 0.5), (1, 0.5)],
                vec![(1, 1.0)],
            ],
        )
        .unwrap()
    }

    #[test]
    fn zero_cost_exponential_counts_stages() {
        let k = two_state_kernel();
        let sol = dp_exponential(&k, &[0.0, 0.0], 14.0, 12).unwrap();
        assert!(sol.initial().values.iter().all(|v| (v - 13.0).abs() < 1e-12));
        assert_eq!(sol.values.len(), 13);
        assert_eq!(sol.policy.horizon(), 12);
    }

    #[test]
    fn absorbing_state_geometric_value() {
        let k = TransitionKernel::from_rows(1, 1, vec![vec![(0, 1.0)]]).unwrap();
        let (gamma, c, horizon) = (3.0, 0.4, 5);
        let sol = dp_exponential(&k, &[c], gamma, horizon).unwrap();
        let expected = (horizon as f64 + 1.0) * (gamma * c).exp();
        assert!((sol.initial().values[0] - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn exponential_rejects_overflow_and_small_gamma() {
        let k = two_state_kernel();
        assert!(matches!(dp_exponential(&k, &[0.0, 40.0], 20.0, 3), Err(Error::Numeric(_))));
        assert!(dp_exponential(&k, &[0.0, 0.0], 0.5, 3).is_err());
        assert!(dp_exponential(&k, &[0.0], 2.0, 3).is_err());
    }

    #[test]
    fn argmin_ties_take_lowest_control() {
        let k = TransitionKernel::from_rows(1, 3, vec![vec![(0, 1.0)]; 3]).unwrap();
        let sol = dp_exponential(&k, &[0.1], 2.0, 2).unwrap();
        assert!(sol.policy.stage(0).iter().chain(sol.policy.stage(1)).all(|&j| j == 0));
    }

    #[test]
    fn bounded_density_at_level_one_is_risk_neutral_bitwise() {
        let k = two_state_kernel();
        let costs = CostTables::from_fn(3, 2, 2, |t, i, j| (t + 2 * i + j) as f64 * 0.3 - 0.5, |i| i as f64 * 2.0).unwrap();
        let neutral = dp_risk_neutral(&k, &costs, 3).unwrap();
        let params = RhoParams {
            alpha: RiskLevel::NEUTRAL,
            cap_exponent: CapExponent::InverseHorizon,
            costs,
        };
        assert_eq!(dp_theorem3(&k, &params, 3).unwrap(), neutral);
    }

    #[test]
    fn bounded_density_degenerate_instance() {
        let k = TransitionKernel::from_rows(1, 1, vec![vec![(0, 1.0)]]).unwrap();
        let costs = CostTables::new(vec![vec![0.0]], vec![5.0], 1).unwrap();
        for alpha in [1.0, 0.5, 0.01] {
            let params = RhoParams {
                alpha: RiskLevel::new(alpha).unwrap(),
                cap_exponent: CapExponent::InverseHorizon,
                costs: costs.clone(),
            };
            assert_eq!(dp_theorem3(&k, &params, 1).unwrap().initial().values, vec![5.0]);
        }
    }

    #[test]
    fn rho_policy_reproduces_greedy_optimum() {
        let k = two_state_kernel();
        let costs = CostTables::from_fn(2, 2, 2, |_, i, j| if i == 1 { 1.0 } else { 0.2 * j as f64 }, |i| 3.0 * i as f64).unwrap();
        let params = RhoParams {
            alpha: RiskLevel::new(0.2).unwrap(),
            cap_exponent: CapExponent::InverseHorizonPlusOne,
            costs,
        };
        let opt = dp_theorem3(&k, &params, 2).unwrap();
        let fixed = dp_rho_policy(&k, &opt.policy, &params, 2).unwrap();
        assert_eq!(fixed, opt.values);
    }

    #[test]
    fn cap_exponent_values() {
        let a = RiskLevel::new(0.01).unwrap();
        assert!((CapExponent::InverseHorizon.cap(a, 2) - 10.0).abs() < 1e-12);
        assert!((CapExponent::InverseHorizonPlusOne.cap(a, 1) - 10.0).abs() < 1e-12);
        assert_eq!(CapExponent::InverseHorizon.cap(RiskLevel::NEUTRAL, 7), 1.0);
        assert!((CapExponent::InverseHorizon.stage_level(a, 2).alpha() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn policy_validation() {
        assert!(PolicyTable::new(vec![vec![0, 2]], 2).is_err());
        assert!(PolicyTable::new(vec![vec![0, 1], vec![0]], 2).is_err());
        assert!(PolicyTable::new(vec![], 2).is_err());
    }

    #[test]
    fn binary_caches_round_trip() {
        let k = two_state_kernel();
        let sol = dp_exponential(&k, &[0.1, 0.7], 4.0, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let vpath = dir.path().join("v.bin");
        let ppath = dir.path().join("p.bin");
        write_values_bin(&vpath, &sol.values, &Provenance::new("00ff", 3)).unwrap();
        write_policy_bin(&ppath, &sol.policy, &Provenance::default()).unwrap();
        assert_eq!(read_values_bin(&vpath).unwrap(), sol.values);
        assert_eq!(read_policy_bin(&ppath).unwrap(), sol.policy);
        assert!(read_policy_bin(&vpath).is_err());
    }
}
