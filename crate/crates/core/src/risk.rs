//! Value-at-Risk and Conditional Value-at-Risk for finitely supported laws.
//!
//! Every random cost in the crate (a disturbance, a kernel row relabelled with
//! a value function, an empirical sample of the trajectory maximum) is a
//! [`DiscreteDistribution`]. For such laws all three classical forms of CVaR
//! can be evaluated exactly:
//!
//! ```text
//! CVaR_a(Y) = min_s  s + (1/a) E[(Y - s)+]                 (Rockafellar-Uryasev)
//!           = (1/a) * integral_{1-a}^{1} VaR_{1-p}(Y) dp    (averaged quantile)
//!           = max { E[Y xi] : 0 <= xi <= 1/a, E[xi] = 1 }   (bounded density)
//! ```
//!
//! The first is a convex piecewise-linear function of `s` with kinks at the
//! atoms, so scanning the support is exact. The third is a fractional knapsack
//! solved greedily. Quantiles follow the left-continuous generalized inverse.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Absolute tolerance for exact discrete computations.
pub const EXACT_TOL: f64 = 1e-12;

/// Neumaier-compensated sum.
pub(crate) fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// A probability law with finitely many atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistribution {
    support: Vec<f64>,
    probs: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(support: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::InvalidInput("distribution has no atoms".into()));
        }
        if support.len() != probs.len() {
            return Err(Error::InvalidInput(format!(
                "support has {} atoms but {} probabilities were given",
                support.len(),
                probs.len()
            )));
        }
        if let Some(i) = support.iter().position(|y| !y.is_finite()) {
            return Err(Error::InvalidInput(format!("atom {i} is not finite")));
        }
        if let Some(i) = probs.iter().position(|q| !(q.is_finite() && *q >= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "probability {i} is negative or not finite"
            )));
        }
        let total = compensated_sum(probs.iter().copied());
        if (total - 1.0).abs() > EXACT_TOL {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self { support, probs })
    }

    /// Point mass at `value`.
    pub fn point(value: f64) -> Self {
        Self {
            support: vec![value],
            probs: vec![1.0],
        }
    }

    /// Uniform empirical law over `samples`.
    pub fn uniform(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("empty sample set".into()));
        }
        let q = 1.0 / samples.len() as f64;
        Self::new(samples.to_vec(), vec![q; samples.len()])
    }

    /// Equal-probability quantile discretization of a log-normal law: atom `k`
    /// sits at the quantile of level `(k + 1/2) / n`.
    pub fn lognormal_midpoint(mu: f64, sigma: f64, n: usize) -> Result<Self> {
        if n == 0 || !(sigma > 0.0) || !mu.is_finite() {
            return Err(Error::InvalidInput(format!(
                "log-normal discretization needs n > 0 and sigma > 0 (got n={n}, sigma={sigma})"
            )));
        }
        let std_normal = Normal::standard();
        let support = (0..n)
            .map(|k| {
                let p = (k as f64 + 0.5) / n as f64;
                (mu + sigma * std_normal.inverse_cdf(p)).exp()
            })
            .collect();
        Self::new(support, vec![1.0 / n as f64; n])
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn mean(&self) -> f64 {
        compensated_sum(self.support.iter().zip(&self.probs).map(|(y, q)| y * q))
    }

    /// Central moments `(mean, variance, skewness)`. Skewness is zero for a
    /// degenerate law.
    pub fn moments(&self) -> (f64, f64, f64) {
        let mean = self.mean();
        let central = |k: i32| {
            compensated_sum(
                self.support
                    .iter()
                    .zip(&self.probs)
                    .map(|(y, q)| q * (y - mean).powi(k)),
            )
        };
        let var = central(2);
        let skew = if var > 0.0 {
            central(3) / var.powf(1.5)
        } else {
            0.0
        };
        (mean, var, skew)
    }

    /// Same probabilities, atoms transformed by `f`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.support.iter().map(|&y| f(y)).collect(), self.probs.clone())
    }

    pub fn min_atom(&self) -> f64 {
        self.support.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_atom(&self) -> f64 {
        self.support.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Atoms with positive mass, ascending, equal values merged.
    pub fn sorted_atoms(&self) -> Vec<(f64, f64)> {
        let mut atoms: Vec<(f64, f64)> = self
            .support
            .iter()
            .zip(&self.probs)
            .filter(|(_, q)| **q > 0.0)
            .map(|(y, q)| (*y, *q))
            .collect();
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (y, q) in atoms {
            match merged.last_mut() {
                Some(last) if last.0 == y => last.1 += q,
                _ => merged.push((y, q)),
            }
        }
        merged
    }
}

/// Risk-sensitivity level `alpha` in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct RiskLevel(f64);

impl RiskLevel {
    pub const NEUTRAL: RiskLevel = RiskLevel(1.0);

    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha <= 1.0 {
            Ok(Self(alpha))
        } else {
            Err(Error::InvalidInput(format!(
                "risk level must lie in (0, 1], got {alpha}"
            )))
        }
    }

    pub fn alpha(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for RiskLevel {
    type Error = Error;

    fn try_from(alpha: f64) -> Result<Self> {
        Self::new(alpha)
    }
}

impl From<RiskLevel> for f64 {
    fn from(level: RiskLevel) -> f64 {
        level.0
    }
}

/// A feasible point of the bounded-density polytope of a distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityVector {
    pub values: Vec<f64>,
    pub cap: f64,
}

impl DensityVector {
    /// Checks `0 <= values[i] <= cap` and `sum values[i] probs[i] = 1`.
    pub fn is_feasible_for(&self, dist: &DiscreteDistribution, tol: f64) -> bool {
        if self.values.len() != dist.len() {
            return false;
        }
        let in_box = self
            .values
            .iter()
            .all(|&v| v >= 0.0 && v <= self.cap * (1.0 + f64::EPSILON));
        let mass = compensated_sum(self.values.iter().zip(dist.probs()).map(|(v, q)| v * q));
        in_box && (mass - 1.0).abs() <= tol
    }
}

/// Left `(1 - alpha)`-quantile: the smallest atom whose cumulative mass
/// reaches `1 - alpha`.
pub fn var(dist: &DiscreteDistribution, level: RiskLevel) -> Result<f64> {
    let alpha = level.alpha();
    if alpha >= 1.0 {
        return Err(Error::InvalidInput(
            "VaR is defined for alpha in (0, 1); alpha = 1 was given".into(),
        ));
    }
    let target = 1.0 - alpha;
    let atoms = dist.sorted_atoms();
    let mut cum = 0.0;
    for &(y, q) in &atoms {
        cum += q;
        if cum >= target - EXACT_TOL {
            return Ok(y);
        }
    }
    Ok(atoms.last().map(|a| a.0).unwrap_or(f64::NAN))
}

/// Rockafellar-Uryasev CVaR, minimized exactly over the atoms.
///
/// For ascending atoms `y_0 < ... < y_{n-1}` the excess mass above `y_k`,
/// `D_k = sum_{i>k} q_i (y_i - y_k)`, satisfies
/// `D_k = D_{k+1} + (y_{k+1} - y_k) * sum_{i>k} q_i`, which keeps every term
/// non-negative and avoids cancellation.
pub fn cvar_ru(dist: &DiscreteDistribution, level: RiskLevel) -> f64 {
    cvar_sorted(&dist.sorted_atoms(), level.alpha())
}

pub(crate) fn cvar_sorted(atoms: &[(f64, f64)], alpha: f64) -> f64 {
    let n = atoms.len();
    let inv_alpha = 1.0 / alpha;
    let mut best = f64::INFINITY;
    let mut excess = 0.0;
    let mut tail_mass = 0.0;
    for k in (0..n).rev() {
        if k + 1 < n {
            tail_mass += atoms[k + 1].1;
            excess += (atoms[k + 1].0 - atoms[k].0) * tail_mass;
        }
        let objective = atoms[k].0 + inv_alpha * excess;
        if objective < best {
            best = objective;
        }
    }
    best
}

/// Probability-weighted sum `sum q_i y_i` in row order.
#[inline]
pub(crate) fn expectation(probs: &[f64], values: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (q, y) in probs.iter().zip(values) {
        acc += q * y;
    }
    acc
}

/// `max sum y_i xi_i q_i` over `0 <= xi <= cap`, `sum xi_i q_i = 1`.
///
/// Greedy on atoms ordered by value (descending, ties by index). Returns the
/// optimum and writes the maximizing density into `density` when given.
/// A cap of 1 admits only `xi = 1`, in which case the plain expectation is
/// returned bit-for-bit.
pub(crate) fn bounded_density_sup(
    values: &[f64],
    probs: &[f64],
    cap: f64,
    density: Option<&mut Vec<f64>>,
) -> f64 {
    debug_assert_eq!(values.len(), probs.len());
    if cap <= 1.0 {
        if let Some(d) = density {
            d.clear();
            d.resize(values.len(), 1.0);
        }
        return expectation(probs, values);
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut xi = vec![0.0; values.len()];
    let mut remaining = 1.0_f64;
    let mut acc = 0.0;
    for &i in &order {
        if remaining <= 0.0 {
            break;
        }
        let q = probs[i];
        if q <= 0.0 {
            continue;
        }
        let take = (cap * q).min(remaining);
        xi[i] = (take / q).min(cap);
        acc += take * values[i];
        remaining -= take;
    }
    if let Some(d) = density {
        *d = xi;
    }
    acc
}

/// CVaR through its dual representation, with the attaining density.
pub fn cvar_dual(dist: &DiscreteDistribution, level: RiskLevel) -> (f64, DensityVector) {
    let cap = 1.0 / level.alpha();
    let mut values = Vec::new();
    let opt = bounded_density_sup(dist.support(), dist.probs(), cap, Some(&mut values));
    (opt, DensityVector { values, cap })
}

/// CVaR of the uniform empirical law of `samples`.
pub fn cvar_empirical(samples: &[f64], level: RiskLevel) -> Result<f64> {
    let dist = DiscreteDistribution::uniform(samples)?;
    Ok(cvar_ru(&dist, level))
}

/// CVaR of the uniform empirical law of samples already sorted ascending.
/// Non-increasing in the level for a fixed sample.
pub fn cvar_empirical_sorted(sorted: &[f64], level: RiskLevel) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::InvalidInput("empirical CVaR needs at least one sample".into()));
    }
    if sorted.iter().any(|y| !y.is_finite()) {
        return Err(Error::InvalidInput("samples must be finite".into()));
    }
    debug_assert!(sorted.windows(2).all(|w| w[0] <= w[1]));
    let weight = 1.0 / sorted.len() as f64;
    let mut atoms: Vec<(f64, f64)> = Vec::new();
    let mut run = 0usize;
    for (i, &y) in sorted.iter().enumerate() {
        run += 1;
        if i + 1 == sorted.len() || sorted[i + 1] != y {
            atoms.push((y, run as f64 * weight));
            run = 0;
        }
    }
    Ok(cvar_sorted(&atoms, level.alpha()))
}

/// `CVaR_a(Y) <= E(Y) / a` for non-negative `Y`.
pub fn cvar_expectation_bound_check(dist: &DiscreteDistribution, level: RiskLevel) -> Result<bool> {
    if dist.support().iter().any(|&y| y < 0.0) {
        return Err(Error::InvalidInput(
            "expectation bound requires non-negative atoms".into(),
        ));
    }
    Ok(cvar_ru(dist, level) <= dist.mean() / level.alpha() + EXACT_TOL)
}

/// `CVaR_a(log Y) <= log CVaR_a(Y)` for strictly positive `Y`.
pub fn cvar_log_check(dist: &DiscreteDistribution, level: RiskLevel) -> Result<bool> {
    if dist.support().iter().any(|&y| y <= 0.0) {
        return Err(Error::InvalidInput(
            "log inequality requires strictly positive atoms".into(),
        ));
    }
    let lhs = cvar_ru(&dist.map(f64::ln)?, level);
    let rhs = cvar_ru(dist, level).ln();
    Ok(lhs <= rhs + EXACT_TOL)
}

/// Exact `integral_a^b Q(p) dp` of the left-continuous quantile function.
pub fn quantile_integral(dist: &DiscreteDistribution, a: f64, b: f64) -> f64 {
    let atoms = dist.sorted_atoms();
    let last = atoms.len().saturating_sub(1);
    let mut lo = 0.0;
    let mut terms = Vec::with_capacity(atoms.len());
    for (k, &(y, q)) in atoms.iter().enumerate() {
        let hi = if k == last { 1.0 } else { lo + q };
        let overlap = hi.min(b) - lo.max(a);
        if overlap > 0.0 {
            terms.push(overlap * y);
        }
        lo = hi;
    }
    compensated_sum(terms)
}

/// Tail-fatness ratio and the tightness certificate that comes with it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailFatness {
    /// `integral_{1-a}^1 Q(p) dp`.
    pub upper_integral: f64,
    /// `integral_0^{1-a} Q(p) dp`.
    pub lower_integral: f64,
    /// `upper_integral / lower_integral`.
    pub ratio: f64,
    /// `log(E(Y) / a) - log(CVaR_a(Y))`.
    pub gap: f64,
    /// `log(1 / ratio + 1)`.
    pub gap_bound: f64,
    /// Whether `0 <= gap <= gap_bound` holds numerically.
    pub certified: bool,
}

pub fn tail_fatness(dist: &DiscreteDistribution, level: RiskLevel) -> Result<TailFatness> {
    let alpha = level.alpha();
    if alpha >= 1.0 {
        return Err(Error::InvalidInput(
            "tail fatness needs alpha in (0, 1)".into(),
        ));
    }
    if dist.support().iter().any(|&y| y <= 0.0) {
        return Err(Error::InvalidInput(
            "tail fatness requires strictly positive atoms".into(),
        ));
    }
    let split = 1.0 - alpha;
    let upper_integral = quantile_integral(dist, split, 1.0);
    let lower_integral = quantile_integral(dist, 0.0, split);
    if !(lower_integral > 0.0) {
        return Err(Error::Degenerate(
            "lower quantile integral is zero; all mass sits in the upper tail".into(),
        ));
    }
    let ratio = upper_integral / lower_integral;
    let gap = (dist.mean() / alpha).ln() - cvar_ru(dist, level).ln();
    let gap_bound = (1.0 / ratio + 1.0).ln();
    let slack = 1e-9 * gap_bound.abs().max(1.0);
    let certified = gap >= -slack && gap <= gap_bound + slack;
    Ok(TailFatness {
        upper_integral,
        lower_integral,
        ratio,
        gap,
        gap_bound,
        certified,
    })
}

/// The bracket `max <= (1/g) log sum exp(g y) <= max + log(p)/g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogSumExp {
    pub max: f64,
    pub soft_max: f64,
    pub upper: f64,
}

impl LogSumExp {
    pub fn holds(&self) -> bool {
        self.max <= self.soft_max && self.soft_max <= self.upper
    }
}

pub fn logsumexp_sandwich(values: &[f64], gamma: f64) -> Result<LogSumExp> {
    if values.is_empty() {
        return Err(Error::InvalidInput("log-sum-exp of an empty vector".into()));
    }
    if !(gamma >= 1.0) {
        return Err(Error::InvalidInput(format!("gamma must be >= 1, got {gamma}")));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // Every shifted term is <= 1 and the maximizer contributes exactly 1,
    // so the sum lies in [1, p] and its log in [0, log p].
    let sum: f64 = values.iter().map(|&y| (gamma * (y - max)).exp()).sum();
    let p = values.len() as f64;
    Ok(LogSumExp {
        max,
        soft_max: max + sum.ln() / gamma,
        upper: max + p.ln() / gamma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_dist(support: &[f64]) -> DiscreteDistribution {
        DiscreteDistribution::uniform(support).unwrap()
    }

    fn level(a: f64) -> RiskLevel {
        RiskLevel::new(a).unwrap()
    }

    // Scan oracle: evaluate the RU objective directly at every atom.
    fn ru_scan(dist: &DiscreteDistribution, alpha: f64) -> f64 {
        dist.support()
            .iter()
            .map(|&s| {
                let excess: f64 = dist
                    .support()
                    .iter()
                    .zip(dist.probs())
                    .map(|(y, q)| q * (y - s).max(0.0))
                    .sum();
                s + excess / alpha
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn rejects_malformed_distributions() {
        assert!(DiscreteDistribution::new(vec![], vec![]).is_err());
        assert!(DiscreteDistribution::new(vec![1.0], vec![0.5, 0.5]).is_err());
        assert!(DiscreteDistribution::new(vec![1.0, 2.0], vec![0.5, 0.6]).is_err());
        assert!(DiscreteDistribution::new(vec![1.0, 2.0], vec![-0.5, 1.5]).is_err());
        assert!(DiscreteDistribution::new(vec![f64::NAN], vec![1.0]).is_err());
        assert!(DiscreteDistribution::new(vec![1.0, 2.0], vec![1.0, 0.0]).is_ok());
    }

    #[test]
    fn risk_level_bounds() {
        assert!(RiskLevel::new(0.0).is_err());
        assert!(RiskLevel::new(-0.1).is_err());
        assert!(RiskLevel::new(1.0 + 1e-15).is_err());
        assert!(RiskLevel::new(f64::NAN).is_err());
        assert_eq!(RiskLevel::new(1.0).unwrap(), RiskLevel::NEUTRAL);
    }

    #[test]
    fn var_examples() {
        let ten: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(var(&uniform_dist(&ten), level(0.2)).unwrap(), 8.0);
        assert_eq!(var(&DiscreteDistribution::point(3.5), level(0.3)).unwrap(), 3.5);
        assert_eq!(var(&uniform_dist(&[0.0, 1.0]), level(0.5)).unwrap(), 0.0);
        assert!(var(&uniform_dist(&[0.0, 1.0]), RiskLevel::NEUTRAL).is_err());
    }

    #[test]
    fn var_ignores_zero_mass_and_permutation() {
        let a = DiscreteDistribution::new(vec![5.0, 1.0, 9.0, 1.0], vec![0.25, 0.25, 0.0, 0.5]).unwrap();
        let b = DiscreteDistribution::new(vec![1.0, 9.0, 1.0, 5.0], vec![0.5, 0.0, 0.25, 0.25]).unwrap();
        for alpha in [0.1, 0.25, 0.5, 0.8] {
            assert_eq!(var(&a, level(alpha)).unwrap(), var(&b, level(alpha)).unwrap());
        }
        assert_eq!(var(&a, level(0.1)).unwrap(), 5.0);
    }

    #[test]
    fn cvar_ru_examples() {
        let d = uniform_dist(&[0.0, 1.0, 2.0, 3.0]);
        assert!((cvar_ru(&d, level(0.25)) - 3.0).abs() <= EXACT_TOL);
        assert!((cvar_ru(&d, level(0.5)) - 2.5).abs() <= EXACT_TOL);
        assert!((cvar_ru(&d, RiskLevel::NEUTRAL) - d.mean()).abs() <= EXACT_TOL);
        for alpha in [0.1, 0.25, 0.3, 0.5, 0.9, 1.0] {
            assert!((cvar_ru(&d, level(alpha)) - ru_scan(&d, alpha)).abs() <= EXACT_TOL);
        }
    }

    #[test]
    fn cvar_dual_example_density() {
        let d = uniform_dist(&[0.0, 1.0, 2.0, 3.0]);
        let (value, density) = cvar_dual(&d, level(0.25));
        assert!((value - 3.0).abs() <= EXACT_TOL);
        assert_eq!(density.values, vec![0.0, 0.0, 0.0, 4.0]);
        assert!(density.is_feasible_for(&d, 1e-10));

        let (mean, ones) = cvar_dual(&d, RiskLevel::NEUTRAL);
        assert_eq!(mean, 1.5);
        assert_eq!(ones.values, vec![1.0; 4]);
    }

    #[test]
    fn cvar_dual_breaks_ties_by_index() {
        let d = DiscreteDistribution::new(vec![2.0, 2.0, 1.0], vec![0.25, 0.25, 0.5]).unwrap();
        let (value, density) = cvar_dual(&d, level(0.4));
        // Cap 2.5: the first tied atom saturates, the second absorbs the rest.
        assert_eq!(density.values[0], 2.5);
        assert!((density.values[1] - 1.5).abs() < 1e-15);
        assert_eq!(density.values[2], 0.0);
        assert!((value - 2.0).abs() <= EXACT_TOL);
    }

    #[test]
    fn empirical_examples() {
        assert_eq!(cvar_empirical(&[4.0; 7], level(0.05)).unwrap(), 4.0);
        assert!((cvar_empirical(&[1.0, 2.0, 3.0, 4.0], level(0.5)).unwrap() - 3.5).abs() <= EXACT_TOL);
        assert!((cvar_empirical(&[1.0, 2.0, 3.0, 4.0], RiskLevel::NEUTRAL).unwrap() - 2.5).abs() <= EXACT_TOL);
        assert!(cvar_empirical(&[], level(0.5)).is_err());
    }

    #[test]
    fn expectation_bound_examples() {
        let d = uniform_dist(&[0.0, 2.0, 7.0]);
        assert!(cvar_expectation_bound_check(&d, RiskLevel::NEUTRAL).unwrap());
        assert!((cvar_ru(&d, RiskLevel::NEUTRAL) - d.mean()).abs() <= EXACT_TOL);

        let d = uniform_dist(&[1.0, 3.0]);
        assert!((cvar_ru(&d, level(0.5)) - 3.0).abs() <= EXACT_TOL);
        assert!(cvar_expectation_bound_check(&d, level(0.5)).unwrap());

        let d = DiscreteDistribution::new(vec![0.0, 10.0], vec![0.99, 0.01]).unwrap();
        assert!((cvar_ru(&d, level(0.01)) - 10.0).abs() <= 1e-9);
        assert!(cvar_expectation_bound_check(&d, level(0.01)).unwrap());

        assert!(cvar_expectation_bound_check(&uniform_dist(&[-1.0, 1.0]), level(0.5)).is_err());
    }

    #[test]
    fn log_check_examples() {
        let e = std::f64::consts::E;
        assert!(cvar_log_check(&DiscreteDistribution::point(e), level(0.3)).unwrap());
        let d = uniform_dist(&[1.0, e * e]);
        let lhs = cvar_ru(&d.map(f64::ln).unwrap(), RiskLevel::NEUTRAL);
        assert!((lhs - 1.0).abs() <= EXACT_TOL);
        assert!((cvar_ru(&d, RiskLevel::NEUTRAL).ln() - 1.4338).abs() < 1e-4);
        assert!(cvar_log_check(&d, RiskLevel::NEUTRAL).unwrap());
        assert!(cvar_log_check(&uniform_dist(&[0.0, 1.0]), level(0.5)).is_err());
    }

    #[test]
    fn tail_fatness_constant_law() {
        let d = uniform_dist(&[1.0, 1.0]);
        for alpha in [0.05, 0.3, 0.5] {
            let tf = tail_fatness(&d, level(alpha)).unwrap();
            assert!((tf.upper_integral - alpha).abs() <= EXACT_TOL);
            assert!((tf.lower_integral - (1.0 - alpha)).abs() <= EXACT_TOL);
            assert!((tf.ratio - alpha / (1.0 - alpha)).abs() <= 1e-12);
            assert!(tf.certified);
        }
        assert!(tail_fatness(&d, RiskLevel::NEUTRAL).is_err());
        assert!(tail_fatness(&uniform_dist(&[0.0, 1.0]), level(0.5)).is_err());
    }

    #[test]
    fn quantile_integral_matches_cvar_times_alpha() {
        let d = DiscreteDistribution::new(vec![3.0, -1.0, 2.0, 7.0], vec![0.1, 0.4, 0.3, 0.2]).unwrap();
        for alpha in [0.05, 0.2, 0.5, 0.75, 1.0] {
            let avg = quantile_integral(&d, 1.0 - alpha, 1.0) / alpha;
            assert!((avg - cvar_ru(&d, level(alpha))).abs() <= EXACT_TOL);
        }
    }

    #[test]
    fn logsumexp_examples() {
        let b = logsumexp_sandwich(&[0.0, 0.0], 1.0).unwrap();
        assert_eq!(b.max, 0.0);
        assert!((b.soft_max - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((b.upper - std::f64::consts::LN_2).abs() < 1e-15);
        let b = logsumexp_sandwich(&[5.0], 14.0).unwrap();
        assert_eq!((b.max, b.soft_max, b.upper), (5.0, 5.0, 5.0));
        // Overflow safety at large gamma * value.
        let b = logsumexp_sandwich(&[800.0, 799.0], 22.0).unwrap();
        assert!(b.holds() && b.soft_max.is_finite());
        assert!(logsumexp_sandwich(&[], 2.0).is_err());
        assert!(logsumexp_sandwich(&[1.0], 0.5).is_err());
    }

    #[test]
    fn moments_of_symmetric_law() {
        let d = uniform_dist(&[-1.0, 0.0, 1.0]);
        let (m, v, s) = d.moments();
        assert_eq!(m, 0.0);
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s, 0.0);
    }
}
