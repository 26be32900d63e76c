//! Discrete transition kernels on a state grid.
//!
//! Row `(i, j)` is the law of the next grid state when the system sits on
//! state node `i` and applies control node `j`. Each disturbance atom is pushed
//! through the dynamics, clamped into the grid hull, and spread over the
//! enclosing cell with multilinear weights.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Grid, InterpWeights};
use crate::io::{self, Provenance};
use crate::models::SystemModel;
use crate::risk::DiscreteDistribution;

/// Allowed deviation of a row's total mass from 1.
pub const ROW_MASS_TOL: f64 = 1e-10;

/// Sparse row-compressed transition kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernel {
    n_states: usize,
    n_controls: usize,
    offsets: Vec<usize>,
    cols: Vec<u32>,
    probs: Vec<f64>,
}

impl TransitionKernel {
    /// Assembles a kernel from rows ordered by `i * n_controls + j`.
    pub fn from_rows(n_states: usize, n_controls: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if n_states == 0 || n_controls == 0 {
            return Err(Error::InvalidInput("kernel needs states and controls".into()));
        }
        if rows.len() != n_states * n_controls {
            return Err(Error::InvalidInput(format!(
                "expected {} kernel rows, got {}",
                n_states * n_controls,
                rows.len()
            )));
        }
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut probs = Vec::new();
        offsets.push(0);
        for (r, row) in rows.into_iter().enumerate() {
            let mut total = 0.0;
            for (c, p) in row {
                if c >= n_states || !(p >= 0.0 && p.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "kernel row {r} has invalid entry ({c}, {p})"
                    )));
                }
                total += p;
                cols.push(c as u32);
                probs.push(p);
            }
            if (total - 1.0).abs() > ROW_MASS_TOL {
                return Err(Error::InvalidInput(format!(
                    "kernel row {r} (state {}, control {}) has mass {total}",
                    r / n_controls,
                    r % n_controls
                )));
            }
            offsets.push(cols.len());
        }
        Ok(Self {
            n_states,
            n_controls,
            offsets,
            cols,
            probs,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_controls(&self) -> usize {
        self.n_controls
    }

    /// Total stored entries.
    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// Successor nodes and probabilities of row `(state, control)`.
    #[inline]
    pub fn row(&self, state: usize, control: usize) -> (&[u32], &[f64]) {
        let r = state * self.n_controls + control;
        let (a, b) = (self.offsets[r], self.offsets[r + 1]);
        (&self.cols[a..b], &self.probs[a..b])
    }

    /// Row `(state, control)` as a distribution over node indices.
    pub fn row_distribution(&self, state: usize, control: usize) -> Result<DiscreteDistribution> {
        let (cols, probs) = self.row(state, control);
        DiscreteDistribution::new(cols.iter().map(|&c| c as f64).collect(), probs.to_vec())
    }

    /// Writes `row,col,prob` triplets, `row = state * n_controls + control`.
    pub fn write_csv(&self, path: &Path, provenance: &Provenance) -> Result<()> {
        let mut w = io::create(path)?;
        let head = format!(
            "# riskreach transition kernel v1\n# n_states={} n_controls={}\n{}row,col,prob\n",
            self.n_states,
            self.n_controls,
            provenance.csv_comment()
        );
        io::write_all(&mut w, path, head.as_bytes())?;
        for r in 0..self.n_states * self.n_controls {
            for k in self.offsets[r]..self.offsets[r + 1] {
                let line = format!("{r},{},{}\n", self.cols[k], self.probs[k]);
                io::write_all(&mut w, path, line.as_bytes())?;
            }
        }
        io::finish(w, path)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let (comments, lines) = io::read_lines(path)?;
        let mut dims = None;
        for c in &comments {
            let mut n_states = None;
            let mut n_controls = None;
            for tok in c.split_whitespace() {
                if let Some(v) = tok.strip_prefix("n_states=") {
                    n_states = v.parse::<usize>().ok();
                } else if let Some(v) = tok.strip_prefix("n_controls=") {
                    n_controls = v.parse::<usize>().ok();
                }
            }
            if let (Some(s), Some(c)) = (n_states, n_controls) {
                dims = Some((s, c));
            }
        }
        let (n_states, n_controls) = dims.ok_or_else(|| {
            Error::InvalidInput(format!("{}: missing n_states/n_controls comment", path.display()))
        })?;
        let mut rows = vec![Vec::new(); n_states * n_controls];
        for line in lines.iter().skip_while(|l| l.starts_with("row")) {
            let mut f = line.split(',');
            let r: usize = io::parse_field(f.next(), "row id", path)?;
            let c: usize = io::parse_field(f.next(), "column id", path)?;
            let p: f64 = io::parse_field(f.next(), "probability", path)?;
            let slot = rows
                .get_mut(r)
                .ok_or_else(|| Error::InvalidInput(format!("{}: row id {r} out of range", path.display())))?;
            slot.push((c, p));
        }
        Self::from_rows(n_states, n_controls, rows)
    }
}

/// Builds `Q(. | node_i, control_j)` for every state and control node.
pub fn build_kernel(
    model: &dyn SystemModel,
    sgrid: &Grid,
    cgrid: &Grid,
    dist: &DiscreteDistribution,
) -> Result<TransitionKernel> {
    if model.state_dim() != sgrid.dim() || model.control_dim() != cgrid.dim() {
        return Err(Error::InvalidInput(format!(
            "model dimensions ({}, {}) do not match grids ({}, {})",
            model.state_dim(),
            model.control_dim(),
            sgrid.dim(),
            cgrid.dim()
        )));
    }
    let n_states = sgrid.len();
    let n_controls = cgrid.len();
    let per_state: Vec<Vec<Vec<(usize, f64)>>> = (0..n_states)
        .into_par_iter()
        .map(|i| {
            let x = sgrid.node_coords(i);
            let mut u = vec![0.0; cgrid.dim()];
            let mut next = vec![0.0; sgrid.dim()];
            let mut weights = InterpWeights::default();
            let mut rows = Vec::with_capacity(n_controls);
            for j in 0..n_controls {
                cgrid.write_node_coords(j, &mut u);
                let mut row: Vec<(usize, f64)> = Vec::new();
                for (d, (&w, &q)) in dist.support().iter().zip(dist.probs()).enumerate() {
                    if q == 0.0 {
                        continue;
                    }
                    model
                        .step(&x, &u, w, &mut next)
                        .map_err(|e| Error::Numeric(format!("dynamics failed at (state {i}, control {j}, atom {d}): {e}")))?;
                    if next.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Numeric(format!(
                            "dynamics produced a non-finite successor at (state {i}, control {j}, atom {d})"
                        )));
                    }
                    sgrid.clamp_in_place(&mut next);
                    sgrid.project_into(&next, &mut weights);
                    row.extend(weights.entries.iter().map(|&(k, wt)| (k, wt * q)));
                }
                rows.push(merge_row(row));
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    TransitionKernel::from_rows(n_states, n_controls, per_state.into_iter().flatten().collect())
}

/// Sorts by node, merges duplicates, and rescales to unit mass.
fn merge_row(mut row: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    row.sort_by_key(|e| e.0);
    let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
    for (k, p) in row {
        match merged.last_mut() {
            Some(last) if last.0 == k => last.1 += p,
            _ => merged.push((k, p)),
        }
    }
    let total: f64 = merged.iter().map(|e| e.1).sum();
    if total > 0.0 {
        for e in &mut merged {
            e.1 /= total;
        }
    }
    merged
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{FnSystem, Interval};

    fn line_grid(h: f64, n: usize) -> Grid {
        Grid::from_bounds(&[(0.0, h * (n - 1) as f64, h)]).unwrap()
    }

    #[test]
    fn identity_dynamics_give_identity_kernel() {
        let sgrid = line_grid(0.5, 5);
        let cgrid = Grid::from_bounds(&[(0.0, 1.0, 0.5)]).unwrap();
        let sys = FnSystem::new(
            vec![Interval::new(0.0, 2.0)],
            vec![Interval::new(0.0, 1.0)],
            1,
            |x: &[f64], _u: &[f64], _d: f64, next: &mut [f64]| next[0] = x[0],
            |x: &[f64]| x[0],
        );
        let k = build_kernel(&sys, &sgrid, &cgrid, &DiscreteDistribution::point(0.0)).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                assert_eq!(k.row(i, j), (&[i as u32][..], &[1.0][..]));
            }
        }
    }

    #[test]
    fn random_walk_rows() {
        let h = 0.25;
        let sgrid = line_grid(h, 9);
        let cgrid = Grid::from_bounds(&[(0.0, 1.0, 1.0)]).unwrap();
        let sys = FnSystem::new(
            vec![Interval::new(0.0, 2.0)],
            vec![Interval::new(0.0, 1.0)],
            1,
            |x: &[f64], _u: &[f64], d: f64, next: &mut [f64]| next[0] = x[0] + d,
            |x: &[f64]| x[0],
        );
        let dist = DiscreteDistribution::new(vec![-h, h], vec![0.5, 0.5]).unwrap();
        let k = build_kernel(&sys, &sgrid, &cgrid, &dist).unwrap();
        for i in 1..8 {
            let (cols, probs) = k.row(i, 0);
            assert_eq!(cols, &[(i - 1) as u32, (i + 1) as u32]);
            assert_eq!(probs, &[0.5, 0.5]);
        }
        // Boundary rows: the outward move is clamped back onto the end node.
        assert_eq!(k.row(0, 1), (&[0u32, 1][..], &[0.5, 0.5][..]));
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(TransitionKernel::from_rows(2, 1, vec![vec![(0, 0.5)], vec![(1, 1.0)]]).is_err());
        assert!(TransitionKernel::from_rows(2, 1, vec![vec![(2, 1.0)], vec![(1, 1.0)]]).is_err());
        assert!(TransitionKernel::from_rows(2, 1, vec![vec![(0, 1.0)]]).is_err());
    }

    #[test]
    fn non_finite_successor_is_reported_with_context() {
        let sgrid = line_grid(1.0, 3);
        let cgrid = Grid::from_bounds(&[(0.0, 1.0, 1.0)]).unwrap();
        let sys = FnSystem::new(
            vec![Interval::new(0.0, 2.0)],
            vec![Interval::new(0.0, 1.0)],
            1,
            |x: &[f64], _u: &[f64], d: f64, next: &mut [f64]| next[0] = if x[0] == 1.0 { f64::NAN } else { x[0] + d },
            |x: &[f64]| x[0],
        );
        let err = build_kernel(&sys, &sgrid, &cgrid, &DiscreteDistribution::point(0.0)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("state 1") && msg.contains("control 0") && msg.contains("atom 0"), "{msg}");
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![vec![(0, 0.25), (1, 0.75)], vec![(1, 1.0)], vec![(0, 0.1), (1, 0.9)], vec![(0, 1.0)]];
        let k = TransitionKernel::from_rows(2, 2, rows).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.csv");
        k.write_csv(&path, &Provenance::new("ab", 7)).unwrap();
        assert_eq!(TransitionKernel::read_csv(&path).unwrap(), k);
    }
}
