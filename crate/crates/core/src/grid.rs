//! Rectilinear grids and multilinear interpolation.
//!
//! Nodes are indexed row-major: the first axis varies slowest.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack when checking that `(max - min) / resolution` is integral.
const SPAN_TOL: f64 = 1e-9;
/// Interpolation weights below this are snapped to zero.
const WEIGHT_SNAP: f64 = 1e-12;

/// One uniformly discretized axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub resolution: f64,
    count: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, resolution: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(Error::InvalidInput(format!(
                "axis bounds must satisfy min < max, got [{min}, {max}]"
            )));
        }
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "axis resolution must be positive, got {resolution}"
            )));
        }
        let cells = (max - min) / resolution;
        let rounded = cells.round();
        if (cells - rounded).abs() > SPAN_TOL * cells.max(1.0) {
            return Err(Error::InvalidInput(format!(
                "resolution {resolution} does not divide [{min}, {max}]; both endpoints must be nodes"
            )));
        }
        Ok(Self {
            min,
            max,
            resolution,
            count: rounded as usize + 1,
        })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Coordinate of node `k`; the last node is exactly `max`.
    pub fn node(&self, k: usize) -> f64 {
        if k + 1 == self.count {
            self.max
        } else {
            self.min + k as f64 * self.resolution
        }
    }

    fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.min, self.max)
    }

    /// Lower cell index and the fractional position inside it.
    fn locate(&self, x: f64) -> (usize, f64) {
        let x = self.clamp(x);
        let pos = (x - self.min) / self.resolution;
        let mut k = pos.floor() as usize;
        if k + 1 >= self.count {
            k = self.count - 2;
        }
        let lo = self.node(k);
        let hi = self.node(k + 1);
        let t = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
        (k, t)
    }

    fn nearest(&self, x: f64) -> usize {
        let pos = ((self.clamp(x) - self.min) / self.resolution).round();
        (pos as usize).min(self.count - 1)
    }
}

/// Tensor-product grid over one or more axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    axes: Vec<Axis>,
}

/// Interpolation stencil: `(node index, weight)` pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InterpWeights {
    pub entries: Vec<(usize, f64)>,
}

impl InterpWeights {
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }
}

impl Grid {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidInput("grid needs at least one axis".into()));
        }
        Ok(Self { axes })
    }

    /// Builds a grid from per-axis `(min, max, resolution)` triples.
    pub fn from_bounds(bounds: &[(f64, f64, f64)]) -> Result<Self> {
        let axes = bounds
            .iter()
            .map(|&(lo, hi, res)| Axis::new(lo, hi, res))
            .collect::<Result<Vec<_>>>()?;
        Self::new(axes)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Axis::count).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-axis indices of a node.
    pub fn multi_index(&self, mut node: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for (d, axis) in self.axes.iter().enumerate().rev() {
            idx[d] = node % axis.count;
            node /= axis.count;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        self.axes
            .iter()
            .zip(idx)
            .fold(0, |acc, (axis, &k)| acc * axis.count + k)
    }

    pub fn node_coords(&self, node: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.write_node_coords(node, &mut out);
        out
    }

    pub fn write_node_coords(&self, mut node: usize, out: &mut [f64]) {
        for (d, axis) in self.axes.iter().enumerate().rev() {
            out[d] = axis.node(node % axis.count);
            node /= axis.count;
        }
    }

    /// Clamps `point` into the grid hull in place.
    pub fn clamp_in_place(&self, point: &mut [f64]) {
        for (x, axis) in point.iter_mut().zip(&self.axes) {
            *x = axis.clamp(*x);
        }
    }

    /// Node closest to `point` (after clamping), rounding half away from the lower node.
    pub fn nearest_node(&self, point: &[f64]) -> usize {
        self.axes
            .iter()
            .zip(point)
            .fold(0, |acc, (axis, &x)| acc * axis.count + axis.nearest(x))
    }

    /// Multilinear weights of the cell enclosing `point`; points outside the
    /// hull are clamped first. Zero weights are dropped, so a point on a node
    /// yields a single unit weight.
    pub fn project(&self, point: &[f64]) -> InterpWeights {
        let mut out = InterpWeights::default();
        self.project_into(point, &mut out);
        out
    }

    pub fn project_into(&self, point: &[f64], out: &mut InterpWeights) {
        out.entries.clear();
        out.entries.push((0, 1.0));
        for (axis, &x) in self.axes.iter().zip(point) {
            let (k, mut t) = axis.locate(x);
            if t < WEIGHT_SNAP {
                t = 0.0;
            } else if t > 1.0 - WEIGHT_SNAP {
                t = 1.0;
            }
            let n = out.entries.len();
            for e in 0..n {
                let (base, w) = out.entries[e];
                let base = base * axis.count;
                if t == 1.0 {
                    out.entries[e] = (base + k + 1, w);
                } else {
                    out.entries[e] = (base + k, w * (1.0 - t));
                    if t > 0.0 {
                        out.entries.push((base + k + 1, w * t));
                    }
                }
            }
        }
        out.entries.sort_unstable_by_key(|e| e.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_count_includes_endpoints() {
        let g = Grid::from_bounds(&[(18.0, 23.0, 0.1)]).unwrap();
        assert_eq!(g.len(), 51);
        assert_eq!(g.node_coords(50), vec![23.0]);
        let g = Grid::from_bounds(&[(0.0, 5.0, 0.1), (0.0, 6.5, 0.1)]).unwrap();
        assert_eq!(g.len(), 51 * 66);
        assert_eq!(g.node_coords(g.len() - 1), vec![5.0, 6.5]);
    }

    #[test]
    fn rejects_bad_axes() {
        assert!(Axis::new(1.0, 1.0, 0.1).is_err());
        assert!(Axis::new(0.0, 1.0, 0.0).is_err());
        assert!(Axis::new(0.0, 1.0, 0.3).is_err());
    }

    #[test]
    fn projection_examples() {
        let g = Grid::from_bounds(&[(0.0, 1.0, 1.0)]).unwrap();
        assert_eq!(g.project(&[0.25]).entries, vec![(0, 0.75), (1, 0.25)]);
        assert_eq!(g.project(&[1.0]).entries, vec![(1, 1.0)]);
        assert_eq!(g.project(&[7.0]).entries, vec![(1, 1.0)]);

        let sq = Grid::from_bounds(&[(0.0, 1.0, 1.0), (0.0, 1.0, 1.0)]).unwrap();
        let w = sq.project(&[0.5, 0.5]);
        assert_eq!(w.entries.len(), 4);
        assert!(w.entries.iter().all(|e| e.1 == 0.25));

        let g = Grid::from_bounds(&[(18.0, 23.0, 0.1)]).unwrap();
        for k in 0..g.len() {
            let x = g.node_coords(k);
            assert_eq!(g.project(&x).entries, vec![(k, 1.0)]);
        }
    }

    #[test]
    fn index_round_trip() {
        let g = Grid::from_bounds(&[(0.0, 2.0, 1.0), (0.0, 3.0, 1.0)]).unwrap();
        for n in 0..g.len() {
            assert_eq!(g.flat_index(&g.multi_index(n)), n);
        }
        assert_eq!(g.node_coords(5), vec![1.0, 1.0]);
        assert_eq!(g.nearest_node(&[1.4, 2.6]), g.flat_index(&[1, 3]));
    }
}
