//! Safe sets, under-approximations and their audits.

use std::path::Path;

use serde::Serialize;

use crate::dp::ValueTable;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::io::{self, Provenance};
use crate::monte_carlo::GSampleSet;
use crate::risk::RiskLevel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskProvenance {
    /// Sub-level set of the exponential-cost value.
    AnalyticU,
    /// Sub-level set of an empirical CVaR field.
    MonteCarloS,
    /// Sub-level set of the bounded-density DP value.
    Theorem3Sbar,
}

impl MaskProvenance {
    pub fn name(self) -> &'static str {
        match self {
            Self::AnalyticU => "analytic-U",
            Self::MonteCarloS => "monte-carlo-S",
            Self::Theorem3Sbar => "theorem3-Sbar",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafeSetMask {
    pub membership: Vec<bool>,
    pub alpha: RiskLevel,
    pub r: f64,
    pub gamma: Option<f64>,
    pub provenance: MaskProvenance,
}

impl SafeSetMask {
    pub fn len(&self) -> usize {
        self.membership.len()
    }

    pub fn is_empty(&self) -> bool {
        self.membership.is_empty()
    }

    pub fn count(&self) -> usize {
        self.membership.iter().filter(|&&m| m).count()
    }

    /// Nodes in `self` but not in `other`.
    pub fn not_in(&self, other: &SafeSetMask) -> Vec<usize> {
        self.membership
            .iter()
            .zip(&other.membership)
            .enumerate()
            .filter(|(_, (&a, &b))| a && !b)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn is_subset_of(&self, other: &SafeSetMask) -> bool {
        self.len() == other.len() && self.not_in(other).is_empty()
    }
}

/// `(1/gamma) * (ln J0 - ln alpha)`, an upper bound on CVaR of `G` under the exponential-DP policy.
pub fn thm1_bound(j0: f64, gamma: f64, alpha: RiskLevel) -> f64 {
    (j0.ln() - alpha.alpha().ln()) / gamma
}

/// Membership iff `(1/gamma) ln(J0 / alpha) <= r`.
pub fn under_approx_set(j0: &ValueTable, alpha: RiskLevel, r: f64, gamma: f64) -> Result<SafeSetMask> {
    if !(gamma >= 1.0 && gamma.is_finite()) {
        return Err(Error::InvalidInput(format!("gamma must be >= 1, got {gamma}")));
    }
    if let Some(v) = j0.values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidInput(format!("exponential-cost values must be positive and finite, got {v}")));
    }
    Ok(SafeSetMask {
        membership: j0.values.iter().map(|&v| thm1_bound(v, gamma, alpha) <= r).collect(),
        alpha,
        r,
        gamma: Some(gamma),
        provenance: MaskProvenance::AnalyticU,
    })
}

/// Membership iff the estimated CVaR is at most `r`.
pub fn mc_safe_set(cvar_field: &[f64], alpha: RiskLevel, r: f64) -> SafeSetMask {
    SafeSetMask {
        membership: cvar_field.iter().map(|&c| c <= r).collect(),
        alpha,
        r,
        gamma: None,
        provenance: MaskProvenance::MonteCarloS,
    }
}

/// Membership iff `J_0^alpha <= r`.
pub fn theorem3_safe_set(j0_alpha: &ValueTable, r: f64, alpha: RiskLevel) -> SafeSetMask {
    SafeSetMask {
        membership: j0_alpha.values.iter().map(|&v| v <= r).collect(),
        alpha,
        r,
        gamma: None,
        provenance: MaskProvenance::Theorem3Sbar,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coverage {
    pub percent: f64,
    pub inner_count: usize,
    pub reference_count: usize,
    /// Nodes in the inner set but outside the reference set.
    pub violations: Vec<usize>,
}

/// `|U| / |S| * 100`. An empty `S` is an error rather than zero coverage.
pub fn coverage(u: &SafeSetMask, s: &SafeSetMask) -> Result<Coverage> {
    if u.len() != s.len() {
        return Err(Error::InvalidInput(format!("mask lengths differ: {} vs {}", u.len(), s.len())));
    }
    let reference_count = s.count();
    if reference_count == 0 {
        return Err(Error::EmptyReference);
    }
    let inner_count = u.count();
    Ok(Coverage {
        percent: inner_count as f64 / reference_count as f64 * 100.0,
        inner_count,
        reference_count,
        violations: u.not_in(s),
    })
}

/// `3 * std / sqrt(alpha * n)` per node.
pub fn clt_tolerances(samples: &GSampleSet, alpha: RiskLevel) -> Vec<f64> {
    (0..samples.n_nodes()).map(|i| samples.clt_tolerance(i, alpha)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Thm1Audit {
    pub bound: Vec<f64>,
    /// `bound - estimated CVaR`.
    pub margins: Vec<f64>,
    /// Nodes whose margin is below `-tolerance`, with the margin.
    pub flagged: Vec<(usize, f64)>,
    /// Nodes with a negative margin, tolerated or not.
    pub negative: usize,
    pub pass_fraction: f64,
}

/// Compares the analytic bound against an estimated CVaR field node by node.
pub fn audit_thm1(j0: &ValueTable, gamma: f64, alpha: RiskLevel, cvar_field: &[f64], tolerance: &[f64]) -> Result<Thm1Audit> {
    let n = j0.values.len();
    if cvar_field.len() != n || tolerance.len() != n {
        return Err(Error::InvalidInput("value table, CVaR field and tolerances must cover the same nodes".into()));
    }
    let bound: Vec<f64> = j0.values.iter().map(|&v| thm1_bound(v, gamma, alpha)).collect();
    let margins: Vec<f64> = bound.iter().zip(cvar_field).map(|(b, c)| b - c).collect();
    let flagged: Vec<(usize, f64)> = margins
        .iter()
        .zip(tolerance)
        .enumerate()
        .filter(|(_, (&m, &tol))| m < -tol)
        .map(|(i, (&m, _))| (i, m))
        .collect();
    Ok(Thm1Audit {
        negative: margins.iter().filter(|&&m| m < 0.0).count(),
        pass_fraction: 1.0 - flagged.len() as f64 / n.max(1) as f64,
        bound,
        margins,
        flagged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetAudit {
    /// Nodes in `U` but outside the estimated `S`.
    pub raw_violations: Vec<usize>,
    /// Raw violations whose CVaR exceeds `r` by more than the tolerance.
    pub violations: Vec<usize>,
    /// Largest `CVaR - r` over nodes of `U`; zero when none exceeds `r`.
    pub max_excess: f64,
    pub pass_fraction: f64,
}

/// `U ⊆ S` up to a per-node slack on the estimated CVaR.
pub fn subset_audit(u: &SafeSetMask, cvar_field: &[f64], tolerance: &[f64]) -> Result<SubsetAudit> {
    let n = u.len();
    if cvar_field.len() != n || tolerance.len() != n {
        return Err(Error::InvalidInput("mask, CVaR field and tolerances must cover the same nodes".into()));
    }
    let mut raw_violations = Vec::new();
    let mut violations = Vec::new();
    let mut max_excess = 0.0_f64;
    for i in (0..n).filter(|&i| u.membership[i]) {
        let excess = cvar_field[i] - u.r;
        if excess > 0.0 {
            raw_violations.push(i);
            max_excess = max_excess.max(excess);
            if excess > tolerance[i] {
                violations.push(i);
            }
        }
    }
    Ok(SubsetAudit {
        pass_fraction: 1.0 - violations.len() as f64 / n.max(1) as f64,
        raw_violations,
        violations,
        max_excess,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NestingViolation {
    /// Index of the smaller `(alpha, r)` mask in the input slice.
    pub inner: usize,
    pub outer: usize,
    pub nodes: Vec<usize>,
}

/// Checks `mask_a ⊆ mask_b` for every pair with `alpha_a <= alpha_b` and
/// `r_a <= r_b`. Masks should share provenance and gamma.
pub fn check_nested(masks: &[SafeSetMask]) -> Vec<NestingViolation> {
    let mut out = Vec::new();
    for (a, ma) in masks.iter().enumerate() {
        for (b, mb) in masks.iter().enumerate() {
            if a == b || ma.alpha > mb.alpha || ma.r > mb.r {
                continue;
            }
            let nodes = ma.not_in(mb);
            if !nodes.is_empty() {
                out.push(NestingViolation { inner: a, outer: b, nodes });
            }
        }
    }
    out
}

/// Long-format CSV: `provenance,alpha,r,gamma,node,x0..,member`.
pub fn write_masks_csv(path: &Path, masks: &[SafeSetMask], grid: &Grid, provenance: &Provenance) -> Result<()> {
    if let Some(m) = masks.iter().find(|m| m.len() != grid.len()) {
        return Err(Error::InvalidInput(format!("mask has {} nodes, grid has {}", m.len(), grid.len())));
    }
    let coords: Vec<String> = (0..grid.len())
        .map(|i| grid.node_coords(i).iter().map(f64::to_string).collect::<Vec<_>>().join(","))
        .collect();
    let xs = (0..grid.dim()).map(|d| format!("x{d}")).collect::<Vec<_>>().join(",");
    let header = format!("provenance,alpha,r,gamma,node,{xs},member");
    let rows = masks.iter().flat_map(|m| {
        let gamma = m.gamma.map_or(String::new(), |g| g.to_string());
        let coords = &coords;
        m.membership.iter().enumerate().map(move |(i, &v)| {
            format!(
                "{},{},{},{},{i},{},{}",
                m.provenance.name(),
                m.alpha.alpha(),
                m.r,
                gamma,
                coords[i],
                u8::from(v)
            )
        })
    });
    io::write_csv(path, provenance, &header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn level(a: f64) -> RiskLevel {
        RiskLevel::new(a).unwrap()
    }

    fn table(values: Vec<f64>) -> ValueTable {
        ValueTable { stage: 0, values }
    }

    #[test]
    fn under_approx_threshold_example() {
        let j0 = table(vec![13.0; 3]);
        let threshold = (13.0f64 / 0.99).ln() / 14.0;
        assert!((threshold - 0.1839).abs() < 5e-5);
        assert_eq!(under_approx_set(&j0, level(0.99), 0.1838, 14.0).unwrap().count(), 0);
        assert_eq!(under_approx_set(&j0, level(0.99), 0.1840, 14.0).unwrap().count(), 3);
    }

    #[test]
    fn mc_set_extremes() {
        let field = [0.2, 0.5, 1.5];
        assert_eq!(mc_safe_set(&field, level(0.1), 0.1).count(), 0);
        assert_eq!(mc_safe_set(&field, level(0.1), 1.5).count(), 3);
    }

    #[test]
    fn coverage_cases() {
        let s = mc_safe_set(&[0.0, 0.0, 1.0], level(0.5), 0.5);
        let u = SafeSetMask {
            provenance: MaskProvenance::AnalyticU,
            ..s.clone()
        };
        assert_eq!(coverage(&u, &s).unwrap().percent, 100.0);
        let empty = mc_safe_set(&[1.0; 3], level(0.5), 0.5);
        assert_eq!(coverage(&empty, &s).unwrap().percent, 0.0);
        assert!(matches!(coverage(&s, &empty), Err(Error::EmptyReference)));
        let outside = mc_safe_set(&[1.0, 0.0, 0.0], level(0.5), 0.5);
        let c = coverage(&outside, &s).unwrap();
        assert_eq!(c.violations, vec![2]);
    }

    #[test]
    fn deterministic_bound_margin() {
        // Constant trajectory at g = c over T + 1 stages.
        let (c, gamma, horizon) = (0.3f64, 14.0f64, 12.0f64);
        let j0 = table(vec![(horizon + 1.0) * (gamma * c).exp()]);
        for a in [0.99, 0.05, 0.001] {
            let audit = audit_thm1(&j0, gamma, level(a), &[c], &[0.0]).unwrap();
            let expected = ((horizon + 1.0) / a).ln() / gamma;
            assert!((audit.margins[0] - expected).abs() < 1e-12);
            assert!(audit.flagged.is_empty());
        }
        let residual = audit_thm1(&j0, gamma, RiskLevel::NEUTRAL, &[c], &[0.0]).unwrap().margins[0];
        assert!(residual <= (horizon + 1.0).ln() / gamma + 1e-15);
    }

    #[test]
    fn nesting_detects_violations() {
        let masks = vec![
            mc_safe_set(&[0.1, 0.4], level(0.5), 0.2),
            mc_safe_set(&[0.1, 0.4], level(0.5), 0.5),
            mc_safe_set(&[0.6, 0.4], level(0.9), 0.5),
        ];
        assert!(check_nested(&masks[..2]).is_empty());
        let v = check_nested(&masks);
        let pairs: Vec<(usize, usize)> = v.iter().map(|x| (x.inner, x.outer)).collect();
        assert_eq!(pairs, vec![(0, 2), (1, 2)]);
        assert_eq!(v[1].nodes, vec![0]);
    }

    #[test]
    fn subset_audit_slack() {
        let u = mc_safe_set(&[0.0, 0.0, 0.0], level(0.1), 1.0);
        let audit = subset_audit(&u, &[0.5, 1.05, 1.5], &[0.1, 0.1, 0.1]).unwrap();
        assert_eq!(audit.raw_violations, vec![1, 2]);
        assert_eq!(audit.violations, vec![2]);
        assert!((audit.max_excess - 0.5).abs() < 1e-15);
    }
}
