//! Exhaustive oracles on MDPs small enough to enumerate every Markov policy
//! and every state path.

use rand::Rng;

use crate::dp::{CapExponent, CostTables, PolicyTable};
use crate::error::{Error, Result};
use crate::kernel::TransitionKernel;
use crate::risk::{cvar_ru, DiscreteDistribution, RiskLevel};

pub const MAX_STATES: usize = 3;
pub const MAX_CONTROLS: usize = 2;
pub const MAX_HORIZON: usize = 3;
/// Upper bound on vertex combinations examined by [`rho_bruteforce`].
pub const MAX_VERTEX_COMBINATIONS: u64 = 20_000_000;

const VERTEX_TOL: f64 = 1e-12;

/// Dense-row MDP with at most 3 states, 2 controls and horizon 3.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyMdp {
    n_states: usize,
    n_controls: usize,
    horizon: usize,
    /// `rows[i * n_controls + j][k]`.
    rows: Vec<Vec<f64>>,
    costs: CostTables,
}

/// A state path `x_0, ..., x_T` with its probability under a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub states: Vec<usize>,
    pub prob: f64,
}

impl TinyMdp {
    pub fn new(n_states: usize, n_controls: usize, horizon: usize, rows: Vec<Vec<f64>>, costs: CostTables) -> Result<Self> {
        if !(1..=MAX_STATES).contains(&n_states) || !(1..=MAX_CONTROLS).contains(&n_controls) || !(1..=MAX_HORIZON).contains(&horizon) {
            return Err(Error::TooLarge(format!(
                "tiny MDPs allow 1..={MAX_STATES} states, 1..={MAX_CONTROLS} controls, horizon 1..={MAX_HORIZON}; got {n_states}, {n_controls}, {horizon}"
            )));
        }
        if rows.len() != n_states * n_controls {
            return Err(Error::InvalidInput(format!("expected {} rows, got {}", n_states * n_controls, rows.len())));
        }
        for (r, row) in rows.iter().enumerate() {
            let total: f64 = row.iter().sum();
            if row.len() != n_states || row.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidInput(format!("row {r} is not a probability vector over {n_states} states")));
            }
        }
        if costs.horizon() != horizon || costs.n_states() != n_states {
            return Err(Error::InvalidInput("cost tables do not match the MDP shape".into()));
        }
        Ok(Self {
            n_states,
            n_controls,
            horizon,
            rows,
            costs,
        })
    }

    /// Random instance: sizes drawn from the allowed ranges, sparse rows,
    /// costs in `[-1, 2)`.
    pub fn random(rng: &mut impl Rng) -> Self {
        let n_states = rng.random_range(1..=MAX_STATES);
        let n_controls = rng.random_range(1..=MAX_CONTROLS);
        let horizon = rng.random_range(1..=MAX_HORIZON);
        Self::random_with(rng, n_states, n_controls, horizon)
    }

    pub fn random_with(rng: &mut impl Rng, n_states: usize, n_controls: usize, horizon: usize) -> Self {
        let rows = (0..n_states * n_controls)
            .map(|_| {
                let mut w: Vec<f64> = (0..n_states)
                    .map(|_| if rng.random_bool(0.25) { 0.0 } else { rng.random_range(0.05..1.0) })
                    .collect();
                if w.iter().all(|&v| v == 0.0) {
                    w[rng.random_range(0..n_states)] = 1.0;
                }
                let total: f64 = w.iter().sum();
                w.iter_mut().for_each(|v| *v /= total);
                w
            })
            .collect();
        let stage: Vec<Vec<f64>> = (0..horizon)
            .map(|_| (0..n_states * n_controls).map(|_| rng.random_range(-1.0..2.0)).collect())
            .collect();
        let terminal = (0..n_states).map(|_| rng.random_range(-1.0..2.0)).collect();
        let costs = CostTables::new(stage, terminal, n_controls).expect("finite random costs");
        Self::new(n_states, n_controls, horizon, rows, costs).expect("random instance within limits")
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_controls(&self) -> usize {
        self.n_controls
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn costs(&self) -> &CostTables {
        &self.costs
    }

    /// Same transitions with different costs.
    pub fn with_costs(&self, costs: CostTables) -> Result<Self> {
        Self::new(self.n_states, self.n_controls, self.horizon, self.rows.clone(), costs)
    }

    pub fn row(&self, state: usize, control: usize) -> &[f64] {
        &self.rows[state * self.n_controls + control]
    }

    pub fn kernel(&self) -> TransitionKernel {
        let rows = self
            .rows
            .iter()
            .map(|r| r.iter().enumerate().filter(|e| *e.1 > 0.0).map(|(k, &p)| (k, p)).collect())
            .collect();
        TransitionKernel::from_rows(self.n_states, self.n_controls, rows).expect("validated rows")
    }

    /// All deterministic Markov policies, `n_controls^(n_states * T)` of them.
    pub fn all_policies(&self) -> Vec<PolicyTable> {
        let slots = self.n_states * self.horizon;
        let total = self.n_controls.pow(slots as u32);
        (0..total)
            .map(|mut code| {
                let controls = (0..self.horizon)
                    .map(|_| {
                        (0..self.n_states)
                            .map(|_| {
                                let j = code % self.n_controls;
                                code /= self.n_controls;
                                j as u32
                            })
                            .collect()
                    })
                    .collect();
                PolicyTable::new(controls, self.n_controls).expect("valid enumeration")
            })
            .collect()
    }

    /// Every positive-probability path from `x0` under `policy`.
    pub fn paths(&self, policy: &PolicyTable, x0: usize) -> Vec<Path> {
        let mut paths = vec![Path {
            states: vec![x0],
            prob: 1.0,
        }];
        for t in 0..self.horizon {
            paths = paths
                .into_iter()
                .flat_map(|p| {
                    let s = *p.states.last().unwrap();
                    let row = self.row(s, policy.control(t, s));
                    row.iter()
                        .enumerate()
                        .filter(|e| *e.1 > 0.0)
                        .map(|(k, &q)| {
                            let mut states = p.states.clone();
                            states.push(k);
                            Path { states, prob: p.prob * q }
                        })
                        .collect::<Vec<_>>()
                })
                .collect();
        }
        paths
    }

    /// Cumulative cost `sum_{t<T} c_t(x_t, pi_t(x_t)) + c_T(x_T)` of a path.
    pub fn path_cost(&self, policy: &PolicyTable, states: &[usize]) -> f64 {
        let mut y = 0.0;
        for t in 0..self.horizon {
            y += self.costs.stage_cost(t, states[t], policy.control(t, states[t]));
        }
        y + self.costs.terminal()[states[self.horizon]]
    }

    /// Exact law of the cumulative cost from `x0`.
    pub fn cost_distribution(&self, policy: &PolicyTable, x0: usize) -> DiscreteDistribution {
        self.path_distribution(policy, x0, |states| self.path_cost(policy, states))
    }

    /// Exact law of an arbitrary path functional from `x0`.
    pub fn path_distribution(&self, policy: &PolicyTable, x0: usize, f: impl Fn(&[usize]) -> f64) -> DiscreteDistribution {
        let paths = self.paths(policy, x0);
        let support = paths.iter().map(|p| f(&p.states)).collect();
        let probs: Vec<f64> = paths.iter().map(|p| p.prob).collect();
        let total: f64 = probs.iter().sum();
        DiscreteDistribution::new(support, probs.iter().map(|p| p / total).collect()).expect("path law is a distribution")
    }

    pub fn expected_cost(&self, policy: &PolicyTable, x0: usize) -> f64 {
        self.paths(policy, x0)
            .iter()
            .map(|p| p.prob * self.path_cost(policy, &p.states))
            .sum()
    }

    /// `min_pi E[Y]` per initial state by trying every Markov policy.
    pub fn enumerate_optimal_expectation(&self) -> Vec<f64> {
        let policies = self.all_policies();
        (0..self.n_states)
            .map(|x0| {
                policies
                    .iter()
                    .map(|p| self.expected_cost(p, x0))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    pub fn exact_cvar(&self, policy: &PolicyTable, x0: usize, level: RiskLevel) -> f64 {
        cvar_ru(&self.cost_distribution(policy, x0), level)
    }
}

/// Vertices of `{nu : 0 <= nu <= cap, sum nu_k q_k = 1}`. Each vertex has
/// every coordinate but one at a bound.
pub fn density_vertices(q: &[f64], cap: f64) -> Vec<Vec<f64>> {
    let n = q.len();
    if cap <= 1.0 {
        return vec![vec![1.0; n]];
    }
    let mut out: Vec<Vec<f64>> = Vec::new();
    for free in 0..n {
        for mask in 0..(1u32 << (n - 1)) {
            let mut nu = vec![0.0; n];
            let mut mass = 0.0;
            let mut bit = 0;
            for k in (0..n).filter(|&k| k != free) {
                if mask >> bit & 1 == 1 {
                    nu[k] = cap;
                    mass += cap * q[k];
                }
                bit += 1;
            }
            let v = (1.0 - mass) / q[free];
            if v < -VERTEX_TOL || v > cap + VERTEX_TOL {
                continue;
            }
            nu[free] = v.clamp(0.0, cap);
            if !out.iter().any(|o| o.iter().zip(&nu).all(|(a, b)| (a - b).abs() <= VERTEX_TOL)) {
                out.push(nu);
            }
        }
    }
    out
}

/// Exact `rho` of the cumulative cost under `policy` from each initial state.
///
/// Each reachable `(t, state)` transition row gets its own density from the
/// capped polytope; the objective is multilinear in those densities, so its
/// maximum over the product of polytopes is attained at a product of vertices.
pub fn rho_bruteforce(mdp: &TinyMdp, policy: &PolicyTable, level: RiskLevel, cap_exponent: CapExponent) -> Result<Vec<f64>> {
    if policy.horizon() != mdp.horizon || policy.n_states() != mdp.n_states || policy.n_controls() != mdp.n_controls {
        return Err(Error::InvalidInput("policy does not match the MDP".into()));
    }
    let cap = cap_exponent.cap(level, mdp.horizon);
    (0..mdp.n_states).map(|x0| rho_from(mdp, policy, cap, x0)).collect()
}

fn rho_from(mdp: &TinyMdp, policy: &PolicyTable, cap: f64, x0: usize) -> Result<f64> {
    let paths = mdp.paths(policy, x0);
    // Reachable rows: (t, state) pairs visited before the horizon.
    let mut rows: Vec<(usize, usize)> = Vec::new();
    for p in &paths {
        for t in 0..mdp.horizon {
            if !rows.contains(&(t, p.states[t])) {
                rows.push((t, p.states[t]));
            }
        }
    }
    // Per row: support states and vertex densities over them.
    let mut supports: Vec<Vec<usize>> = Vec::with_capacity(rows.len());
    let mut vertices: Vec<Vec<Vec<f64>>> = Vec::with_capacity(rows.len());
    for &(t, s) in &rows {
        let row = mdp.row(s, policy.control(t, s));
        let support: Vec<usize> = (0..row.len()).filter(|&k| row[k] > 0.0).collect();
        let q: Vec<f64> = support.iter().map(|&k| row[k]).collect();
        vertices.push(density_vertices(&q, cap));
        supports.push(support);
    }
    let combos = vertices
        .iter()
        .try_fold(1u64, |acc, v| acc.checked_mul(v.len() as u64))
        .filter(|&c| c <= MAX_VERTEX_COMBINATIONS)
        .ok_or_else(|| Error::TooLarge(format!("more than {MAX_VERTEX_COMBINATIONS} vertex combinations")))?;

    // For each path, the (row, atom) position of every transition.
    let encoded: Vec<(f64, Vec<(usize, usize)>)> = paths
        .iter()
        .map(|p| {
            let steps = (0..mdp.horizon)
                .map(|t| {
                    let r = rows.iter().position(|&rw| rw == (t, p.states[t])).unwrap();
                    let a = supports[r].iter().position(|&k| k == p.states[t + 1]).unwrap();
                    (r, a)
                })
                .collect();
            (p.prob * mdp.path_cost(policy, &p.states), steps)
        })
        .collect();

    let mut choice = vec![0usize; rows.len()];
    let mut best = f64::NEG_INFINITY;
    for _ in 0..combos {
        let value: f64 = encoded
            .iter()
            .map(|(weighted, steps)| {
                steps
                    .iter()
                    .fold(*weighted, |acc, &(r, a)| acc * vertices[r][choice[r]][a])
            })
            .sum();
        best = best.max(value);
        for (c, v) in choice.iter_mut().zip(&vertices) {
            *c += 1;
            if *c < v.len() {
                break;
            }
            *c = 0;
        }
    }
    Ok(best)
}
