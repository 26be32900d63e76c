//! Closed-loop rollouts and empirical CVaR of the trajectory maximum
//! `G = max_{t=0..T} g_K(X_t)`.
//!
//! Each trajectory draws its disturbances from its own ChaCha8 block range:
//! stream = initial node, word position = `trajectory * 2T`. Results are
//! therefore independent of thread count and scheduling.

use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dp::PolicyTable;
use crate::error::{Error, Result};
use crate::grid::{Grid, InterpWeights};
use crate::io::{self, BinReader, BinWriter, Provenance};
use crate::models::SystemModel;
use crate::risk::{cvar_empirical_sorted, DiscreteDistribution, RiskLevel};

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n_trajectories: usize,
    pub seed: u64,
    pub policy: PolicyTable,
    /// Interpolate the control between neighbouring state nodes instead of
    /// using the nearest node's control.
    pub interpolate_policy: bool,
    /// Remember which trajectory produced each sorted sample.
    pub keep_trajectory_index: bool,
}

/// Sorted `G` samples per initial node.
#[derive(Debug, Clone, PartialEq)]
pub struct GSampleSet {
    sorted: Vec<Vec<f64>>,
    trajectory: Option<Vec<Vec<u32>>>,
}

impl GSampleSet {
    /// Sorts each node's samples; samples must be finite and non-empty.
    pub fn from_samples(per_node: Vec<Vec<f64>>) -> Result<Self> {
        Self::build(per_node, false)
    }

    fn build(per_node: Vec<Vec<f64>>, keep_index: bool) -> Result<Self> {
        if per_node.is_empty() {
            return Err(Error::InvalidInput("sample set needs at least one node".into()));
        }
        for (i, s) in per_node.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::InvalidInput(format!("node {i} has no samples")));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("node {i} has a non-finite sample")));
            }
        }
        if keep_index {
            let (sorted, trajectory) = per_node
                .into_par_iter()
                .map(|s| {
                    let mut idx: Vec<u32> = (0..s.len() as u32).collect();
                    idx.sort_by(|&a, &b| s[a as usize].total_cmp(&s[b as usize]).then(a.cmp(&b)));
                    (idx.iter().map(|&k| s[k as usize]).collect(), idx)
                })
                .unzip();
            Ok(Self {
                sorted,
                trajectory: Some(trajectory),
            })
        } else {
            let mut sorted = per_node;
            sorted.par_iter_mut().for_each(|s| s.sort_by(f64::total_cmp));
            Ok(Self { sorted, trajectory: None })
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.sorted.len()
    }

    pub fn samples(&self, node: usize) -> &[f64] {
        &self.sorted[node]
    }

    /// Trajectory index of the sample at `rank` in the sorted order, when kept.
    pub fn trajectory_of(&self, node: usize, rank: usize) -> Option<u32> {
        self.trajectory.as_ref().map(|t| t[node][rank])
    }

    pub fn mean(&self, node: usize) -> f64 {
        let s = &self.sorted[node];
        s.iter().sum::<f64>() / s.len() as f64
    }

    /// Sample standard deviation (zero for a single sample).
    pub fn std(&self, node: usize) -> f64 {
        let s = &self.sorted[node];
        if s.len() < 2 {
            return 0.0;
        }
        let m = self.mean(node);
        let ss: f64 = s.iter().map(|v| (v - m) * (v - m)).sum();
        (ss / (s.len() - 1) as f64).sqrt()
    }

    /// `3 * std / sqrt(alpha * n)`: the slack used when comparing an
    /// empirical CVaR against an exact quantity.
    pub fn clt_tolerance(&self, node: usize, level: RiskLevel) -> f64 {
        3.0 * self.std(node) / (level.alpha() * self.sorted[node].len() as f64).sqrt()
    }

    /// Left-continuous empirical quantile; `p = 0` gives the minimum.
    pub fn quantile(&self, node: usize, p: f64) -> f64 {
        let s = &self.sorted[node];
        let k = (p.clamp(0.0, 1.0) * s.len() as f64).ceil() as usize;
        s[k.saturating_sub(1).min(s.len() - 1)]
    }
}

/// Empirical CVaR per level and node.
#[derive(Debug, Clone, PartialEq)]
pub struct CvarField {
    levels: Vec<RiskLevel>,
    values: Vec<Vec<f64>>,
}

impl CvarField {
    pub fn new(levels: Vec<RiskLevel>, values: Vec<Vec<f64>>) -> Result<Self> {
        if levels.len() != values.len() || values.is_empty() {
            return Err(Error::InvalidInput("one value vector per level is required".into()));
        }
        let n = values[0].len();
        if values.iter().any(|v| v.len() != n) {
            return Err(Error::InvalidInput("all levels must cover the same nodes".into()));
        }
        Ok(Self { levels, values })
    }

    pub fn levels(&self) -> &[RiskLevel] {
        &self.levels
    }

    pub fn n_nodes(&self) -> usize {
        self.values[0].len()
    }

    /// Values at the level with index `k` in [`Self::levels`].
    pub fn at(&self, k: usize) -> &[f64] {
        &self.values[k]
    }

    /// Values at `level`, if it was estimated.
    pub fn for_level(&self, level: RiskLevel) -> Option<&[f64]> {
        self.levels
            .iter()
            .position(|&l| l == level)
            .map(|k| self.values[k].as_slice())
    }
}

struct Sampler {
    support: Vec<f64>,
    cumulative: Vec<f64>,
}

impl Sampler {
    fn new(dist: &DiscreteDistribution) -> Self {
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = dist
            .probs()
            .iter()
            .map(|q| {
                acc += q;
                acc
            })
            .collect();
        if let Some(last) = cumulative.last_mut() {
            *last = 1.0;
        }
        Self {
            support: dist.support().to_vec(),
            cumulative,
        }
    }

    #[inline]
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let k = self.cumulative.partition_point(|&c| c <= u);
        self.support[k.min(self.support.len() - 1)]
    }
}

struct ControlLookup<'a> {
    policy: &'a PolicyTable,
    sgrid: &'a Grid,
    controls: Vec<Vec<f64>>,
    interpolate: bool,
}

impl ControlLookup<'_> {
    fn write(&self, t: usize, x: &[f64], weights: &mut InterpWeights, u: &mut [f64]) {
        if self.interpolate {
            self.sgrid.project_into(x, weights);
            u.fill(0.0);
            for &(k, w) in &weights.entries {
                for (ud, cd) in u.iter_mut().zip(&self.controls[self.policy.control(t, k)]) {
                    *ud += w * cd;
                }
            }
        } else {
            let k = self.sgrid.nearest_node(x);
            u.copy_from_slice(&self.controls[self.policy.control(t, k)]);
        }
    }
}

/// Runs `n_trajectories` rollouts from every node of `sgrid` under the
/// configured policy and returns the maxima of `g_K` over `t = 0..=T`,
/// the initial state included. Successor states are clamped to the state bounds.
pub fn simulate_g(
    model: &dyn SystemModel,
    dist: &DiscreteDistribution,
    config: &SimConfig,
    sgrid: &Grid,
    cgrid: &Grid,
) -> Result<GSampleSet> {
    let horizon = model.horizon();
    if config.n_trajectories == 0 {
        return Err(Error::InvalidInput("n_trajectories must be at least 1".into()));
    }
    if config.n_trajectories > u32::MAX as usize {
        return Err(Error::InvalidInput("n_trajectories exceeds u32 range".into()));
    }
    if config.policy.horizon() != horizon
        || config.policy.n_states() != sgrid.len()
        || config.policy.n_controls() != cgrid.len()
    {
        return Err(Error::InvalidInput(format!(
            "policy covers {} stages x {} states x {} controls; simulation needs {horizon} x {} x {}",
            config.policy.horizon(),
            config.policy.n_states(),
            config.policy.n_controls(),
            sgrid.len(),
            cgrid.len()
        )));
    }
    if model.state_dim() != sgrid.dim() || model.control_dim() != cgrid.dim() {
        return Err(Error::InvalidInput("model dimensions do not match the grids".into()));
    }
    let sampler = Sampler::new(dist);
    let lookup = ControlLookup {
        policy: &config.policy,
        sgrid,
        controls: (0..cgrid.len()).map(|j| cgrid.node_coords(j)).collect(),
        interpolate: config.interpolate_policy,
    };
    let words_per_trajectory = 2 * horizon as u128;

    let per_node = (0..sgrid.len())
        .into_par_iter()
        .map(|node| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(node as u64);
            let x0 = sgrid.node_coords(node);
            let g0 = model.constraint_cost(&x0);
            let mut x = x0.clone();
            let mut next = vec![0.0; x.len()];
            let mut u = vec![0.0; cgrid.dim()];
            let mut weights = InterpWeights::default();
            let mut out = Vec::with_capacity(config.n_trajectories);
            for traj in 0..config.n_trajectories {
                rng.set_word_pos(traj as u128 * words_per_trajectory);
                x.copy_from_slice(&x0);
                let mut g = g0;
                for t in 0..horizon {
                    lookup.write(t, &x, &mut weights, &mut u);
                    for (v, b) in u.iter_mut().zip(model.control_bounds()) {
                        *v = v.clamp(b.lo, b.hi);
                    }
                    let d = sampler.draw(&mut rng);
                    model.step(&x, &u, d, &mut next).map_err(|e| {
                        Error::Numeric(format!("trajectory {traj} from node {node} failed at stage {t}: {e}"))
                    })?;
                    if next.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Numeric(format!(
                            "trajectory {traj} from node {node} reached a non-finite state at stage {}",
                            t + 1
                        )));
                    }
                    model.clamp_state(&mut next);
                    std::mem::swap(&mut x, &mut next);
                    g = g.max(model.constraint_cost(&x));
                }
                out.push(g);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    GSampleSet::build(per_node, config.keep_trajectory_index)
}

/// Empirical CVaR of `G` at each level for every node.
pub fn estimate_cvar_field(samples: &GSampleSet, levels: &[RiskLevel]) -> Result<CvarField> {
    if levels.is_empty() {
        return Err(Error::InvalidInput("at least one risk level is required".into()));
    }
    let values = levels
        .iter()
        .map(|&level| {
            (0..samples.n_nodes())
                .into_par_iter()
                .map(|i| cvar_empirical_sorted(samples.samples(i), level))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    CvarField::new(levels.to_vec(), values)
}

/// CSV with columns `node,trajectory,g`. Requires trajectory indices to
/// have been kept; rows are in trajectory order per node.
pub fn write_samples_csv(path: &Path, samples: &GSampleSet, provenance: &Provenance) -> Result<()> {
    let index = samples.trajectory.as_ref().ok_or_else(|| {
        Error::InvalidInput("sample export needs trajectory indices (keep_trajectory_index)".into())
    })?;
    let rows = (0..samples.n_nodes()).flat_map(|i| {
        let mut by_traj: Vec<(u32, f64)> = index[i].iter().copied().zip(samples.sorted[i].iter().copied()).collect();
        by_traj.sort_by_key(|e| e.0);
        by_traj.into_iter().map(move |(k, g)| format!("{i},{k},{g}"))
    });
    io::write_csv(path, provenance, "node,trajectory,g", rows)
}

pub const SUMMARY_QUANTILES: usize = 101;
const SUMMARY_MAGIC: &[u8; 4] = b"RRGS";

/// Per-node sketch stored in the binary summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantileSummary {
    pub n: u64,
    pub mean: f64,
    pub std: f64,
    /// Quantiles at `p = k / 100`, `k = 0..=100`.
    pub quantiles: Vec<f64>,
}

pub fn summarize(samples: &GSampleSet) -> Vec<QuantileSummary> {
    (0..samples.n_nodes())
        .map(|i| QuantileSummary {
            n: samples.samples(i).len() as u64,
            mean: samples.mean(i),
            std: samples.std(i),
            quantiles: (0..SUMMARY_QUANTILES)
                .map(|k| samples.quantile(i, k as f64 / (SUMMARY_QUANTILES - 1) as f64))
                .collect(),
        })
        .collect()
}

/// Binary summary: header, `u32` node count, `u32` quantile count, then per
/// node `u64 n`, `f64 mean`, `f64 std` and the quantiles.
pub fn write_summary_bin(path: &Path, samples: &GSampleSet, provenance: &Provenance) -> Result<()> {
    let mut w = BinWriter::create(path, SUMMARY_MAGIC, 1, provenance)?;
    w.u32(samples.n_nodes() as u32)?;
    w.u32(SUMMARY_QUANTILES as u32)?;
    for s in summarize(samples) {
        w.u64(s.n)?;
        w.f64(s.mean)?;
        w.f64(s.std)?;
        for q in s.quantiles {
            w.f64(q)?;
        }
    }
    w.finish()
}

pub fn read_summary_bin(path: &Path) -> Result<Vec<QuantileSummary>> {
    let (mut r, _) = BinReader::open(path, SUMMARY_MAGIC, 1)?;
    let n_nodes = r.u32()? as usize;
    let n_q = r.u32()? as usize;
    (0..n_nodes)
        .map(|_| {
            Ok(QuantileSummary {
                n: r.u64()?,
                mean: r.f64()?,
                std: r.f64()?,
                quantiles: (0..n_q).map(|_| r.f64()).collect::<Result<_>>()?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{tcl_gk, FnSystem, Interval, TclParams, TclSystem};

    fn tcl_grids() -> (Grid, Grid) {
        (
            Grid::from_bounds(&[(18.0, 23.0, 0.1)]).unwrap(),
            Grid::from_bounds(&[(0.0, 1.0, 0.1)]).unwrap(),
        )
    }

    #[test]
    fn fixed_point_trajectories_are_constant() {
        let (sgrid, cgrid) = tcl_grids();
        let p = TclParams::benchmark();
        let model = TclSystem::new(p);
        // u = 0.5 holds x = b - 0.5 * eta * r * p = 22.2.
        let node = sgrid.nearest_node(&[22.2]);
        let policy = PolicyTable::constant(p.horizon, sgrid.len(), 5, cgrid.len()).unwrap();
        let cfg = SimConfig {
            n_trajectories: 50,
            seed: 9,
            policy,
            interpolate_policy: false,
            keep_trajectory_index: false,
        };
        let s = simulate_g(&model, &DiscreteDistribution::point(0.0), &cfg, &sgrid, &cgrid).unwrap();
        let g0 = tcl_gk(sgrid.node_coords(node)[0]);
        assert!(s.samples(node).iter().all(|g| (g - g0).abs() < 1e-12));
    }

    #[test]
    fn samples_never_below_initial_cost() {
        let (sgrid, cgrid) = tcl_grids();
        let p = TclParams::benchmark();
        let model = TclSystem::new(p);
        let dist = DiscreteDistribution::new(vec![-0.5, 0.5], vec![0.5, 0.5]).unwrap();
        let policy = PolicyTable::constant(p.horizon, sgrid.len(), 3, cgrid.len()).unwrap();
        let cfg = SimConfig {
            n_trajectories: 40,
            seed: 1,
            policy,
            interpolate_policy: true,
            keep_trajectory_index: true,
        };
        let s = simulate_g(&model, &dist, &cfg, &sgrid, &cgrid).unwrap();
        for i in 0..sgrid.len() {
            let g0 = tcl_gk(sgrid.node_coords(i)[0]);
            assert!(s.samples(i)[0] >= g0);
        }
        assert_eq!(s, simulate_g(&model, &dist, &cfg, &sgrid, &cgrid).unwrap());
    }

    /// One step, `x1 = d`, cost `g(x) = x`: G = max(x0, d).
    #[allow(clippy::type_complexity)]
    fn two_outcome() -> (FnSystem<impl Fn(&[f64], &[f64], f64, &mut [f64]) + Sync, impl Fn(&[f64]) -> f64 + Sync>, Grid, Grid) {
        let model = FnSystem::new(
            vec![Interval::new(0.0, 4.0)],
            vec![Interval::new(0.0, 1.0)],
            1,
            |_x: &[f64], _u: &[f64], d: f64, next: &mut [f64]| {
                next[0] = d;
            },
            |x: &[f64]| x[0],
        );
        (
            model,
            Grid::from_bounds(&[(0.0, 4.0, 4.0)]).unwrap(),
            Grid::from_bounds(&[(0.0, 1.0, 1.0)]).unwrap(),
        )
    }

    #[test]
    fn two_outcome_law_converges() {
        let (model, sgrid, cgrid) = two_outcome();
        let dist = DiscreteDistribution::new(vec![1.0, 3.0], vec![0.7, 0.3]).unwrap();
        let n = 100_000;
        let cfg = SimConfig {
            n_trajectories: n,
            seed: 2024,
            policy: PolicyTable::constant(1, 2, 0, 2).unwrap(),
            interpolate_policy: false,
            keep_trajectory_index: false,
        };
        let s = simulate_g(&model, &dist, &cfg, &sgrid, &cgrid).unwrap();
        // Node 0 (x0 = 0): G is 1 or 3.
        let distinct: std::collections::BTreeSet<u64> = s.samples(0).iter().map(|g| g.to_bits()).collect();
        assert!(distinct.len() <= 2);
        let freq3 = s.samples(0).iter().filter(|&&g| g == 3.0).count() as f64 / n as f64;
        assert!((freq3 - 0.3).abs() < 3.0 * (0.21f64 / n as f64).sqrt());

        for alpha in [1.0, 0.5, 0.3, 0.1] {
            let level = RiskLevel::new(alpha).unwrap();
            let exact = crate::risk::cvar_ru(&dist, level);
            let field = estimate_cvar_field(&s, &[level]).unwrap();
            let tol = s.clt_tolerance(0, level);
            assert!((field.at(0)[0] - exact).abs() <= tol, "alpha={alpha}");
        }
        // Node 1 (x0 = 4) dominates every draw.
        assert!(s.samples(1).iter().all(|&g| g == 4.0));
    }

    #[test]
    fn field_examples() {
        let s = GSampleSet::from_samples(vec![vec![2.5; 7], vec![3.0, 1.0, 2.0]]).unwrap();
        let levels: Vec<RiskLevel> = [1.0, 0.5, 0.1].iter().map(|&a| RiskLevel::new(a).unwrap()).collect();
        let f = estimate_cvar_field(&s, &levels).unwrap();
        for k in 0..3 {
            assert_eq!(f.at(k)[0], 2.5);
        }
        assert!((f.at(0)[1] - 2.0).abs() < 1e-15);
        assert!(f.at(0)[1] <= f.at(1)[1] && f.at(1)[1] <= f.at(2)[1]);
        assert_eq!(f.at(2)[1], 3.0);
    }

    #[test]
    fn rejects_bad_configs() {
        let (model, sgrid, cgrid) = two_outcome();
        let dist = DiscreteDistribution::point(1.0);
        let mut cfg = SimConfig {
            n_trajectories: 0,
            seed: 0,
            policy: PolicyTable::constant(1, 2, 0, 2).unwrap(),
            interpolate_policy: false,
            keep_trajectory_index: false,
        };
        assert!(simulate_g(&model, &dist, &cfg, &sgrid, &cgrid).is_err());
        cfg.n_trajectories = 1;
        cfg.policy = PolicyTable::constant(2, 2, 0, 2).unwrap();
        assert!(simulate_g(&model, &dist, &cfg, &sgrid, &cgrid).is_err());
        assert!(GSampleSet::from_samples(vec![vec![]]).is_err());
    }

    #[test]
    fn summary_round_trip() {
        let s = GSampleSet::from_samples(vec![(0..10).map(f64::from).collect(), vec![1.0]]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.bin");
        write_summary_bin(&path, &s, &Provenance::new("ab", 5)).unwrap();
        let back = read_summary_bin(&path).unwrap();
        assert_eq!(back, summarize(&s));
        assert_eq!(back[0].quantiles[0], 0.0);
        assert_eq!(back[0].quantiles[50], 4.0);
        assert_eq!(back[0].quantiles[100], 9.0);
    }
}
