//! Self-check suite run by the `verify` command: randomized identities and
//! inequalities that must hold for any correct build.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dp::{dp_exponential, dp_risk_neutral, dp_rho_policy, dp_theorem3, CapExponent, CostTables, RhoParams};
use crate::risk::{
    cvar_dual, cvar_expectation_bound_check, cvar_log_check, cvar_ru, logsumexp_sandwich, tail_fatness, DiscreteDistribution,
    RiskLevel,
};
use crate::sets::{check_nested, under_approx_set, thm1_bound};
use crate::tiny_mdp::{rho_bruteforce, TinyMdp};

const TOL: f64 = 1e-12;
const DP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyResult {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// First failing case, if any.
    pub detail: Option<String>,
}

impl PropertyResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

struct Tally {
    name: &'static str,
    cases: usize,
    failures: usize,
    detail: Option<String>,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            cases: 0,
            failures: 0,
            detail: None,
        }
    }

    fn check(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok {
            self.failures += 1;
            if self.detail.is_none() {
                self.detail = Some(detail());
            }
        }
    }

    fn done(self) -> PropertyResult {
        PropertyResult {
            name: self.name,
            cases: self.cases,
            failures: self.failures,
            detail: self.detail,
        }
    }
}

pub const LEVELS: [f64; 8] = [0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0];

fn random_dist(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> DiscreteDistribution {
    let n = rng.random_range(3..=50);
    let support: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
    let total: f64 = w.iter().sum();
    DiscreteDistribution::new(support, w.iter().map(|v| v / total).collect()).expect("valid random law")
}

fn level(a: f64) -> RiskLevel {
    RiskLevel::new(a).expect("level in (0, 1]")
}

/// Runs every property with `cases` random instances each (tiny-MDP
/// properties use `cases / 20` instances, at least 5).
pub fn run_suite(seed: u64, cases: usize) -> Vec<PropertyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mdp_cases = (cases / 20).max(5);
    vec![
        dual_equals_primal(&mut rng, cases),
        coherence(&mut rng, cases),
        expectation_and_log_bounds(&mut rng, cases),
        tail_fatness_certificate(),
        logsumexp(&mut rng, cases),
        dp_matches_enumeration(&mut rng, mdp_cases),
        theorem3_sandwich(&mut rng, mdp_cases),
        rho_sandwich(&mut rng, mdp_cases),
        exact_under_approximation(&mut rng, mdp_cases),
    ]
}

fn dual_equals_primal(rng: &mut ChaCha8Rng, cases: usize) -> PropertyResult {
    let mut t = Tally::new("cvar dual equals primal");
    for _ in 0..cases {
        let d = random_dist(rng, -5.0, 5.0);
        for a in LEVELS {
            let (dual, density) = cvar_dual(&d, level(a));
            let primal = cvar_ru(&d, level(a));
            t.check((dual - primal).abs() <= TOL && density.is_feasible_for(&d, 1e-12), || {
                format!("alpha={a}: dual {dual} vs primal {primal}")
            });
        }
    }
    t.done()
}

fn coherence(rng: &mut ChaCha8Rng, cases: usize) -> PropertyResult {
    let mut t = Tally::new("cvar coherence axioms");
    for _ in 0..cases {
        let x = random_dist(rng, -5.0, 5.0);
        let probs = x.probs().to_vec();
        let y_vals: Vec<f64> = x.support().iter().map(|_| rng.random_range(-5.0..5.0)).collect();
        let y = DiscreteDistribution::new(y_vals.clone(), probs.clone()).unwrap();
        let sum = DiscreteDistribution::new(x.support().iter().zip(&y_vals).map(|(a, b)| a + b).collect(), probs.clone()).unwrap();
        let above = DiscreteDistribution::new(
            x.support().iter().map(|v| v + rng.random_range(0.0..1.0)).collect(),
            probs.clone(),
        )
        .unwrap();
        let c = rng.random_range(-3.0..3.0);
        let lambda = rng.random_range(0.0..4.0);
        let shifted = x.map(|v| v + c).unwrap();
        let scaled = x.map(|v| lambda * v).unwrap();
        for a in LEVELS {
            let l = level(a);
            let cx = cvar_ru(&x, l);
            t.check(cx <= cvar_ru(&above, l) + TOL, || format!("monotonicity at alpha={a}"));
            t.check(cvar_ru(&sum, l) <= cx + cvar_ru(&y, l) + TOL, || format!("subadditivity at alpha={a}"));
            t.check((cvar_ru(&shifted, l) - cx - c).abs() <= TOL, || format!("translation at alpha={a}"));
            t.check((cvar_ru(&scaled, l) - lambda * cx).abs() <= TOL * (1.0 + lambda), || {
                format!("homogeneity at alpha={a}")
            });
        }
    }
    t.done()
}

fn expectation_and_log_bounds(rng: &mut ChaCha8Rng, cases: usize) -> PropertyResult {
    let mut t = Tally::new("cvar expectation and log bounds");
    for _ in 0..cases {
        let d = random_dist(rng, 0.01, 10.0);
        for a in LEVELS {
            let l = level(a);
            t.check(cvar_expectation_bound_check(&d, l).unwrap_or(false), || format!("E/alpha bound at {a}"));
            t.check(cvar_log_check(&d, l).unwrap_or(false), || format!("log bound at {a}"));
        }
    }
    t.done()
}

fn tail_fatness_certificate() -> PropertyResult {
    let mut t = Tally::new("tail fatness of log-normal laws");
    for (sigma, expected, tol) in [(1.0, 0.35, 0.02), (2.0, 1.7, 0.1)] {
        let d = DiscreteDistribution::lognormal_midpoint(0.0, sigma, 20_000).expect("valid law");
        match tail_fatness(&d, level(0.05)) {
            Ok(tf) => t.check(tf.certified && (tf.ratio - expected).abs() <= tol, || {
                format!("sigma={sigma}: ratio {} certified {}", tf.ratio, tf.certified)
            }),
            Err(e) => t.check(false, || e.to_string()),
        }
    }
    t.done()
}

fn logsumexp(rng: &mut ChaCha8Rng, cases: usize) -> PropertyResult {
    let mut t = Tally::new("log-sum-exp sandwich");
    for _ in 0..cases * 10 {
        let n = rng.random_range(1..=25);
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let gamma = rng.random_range(1.0..30.0);
        let s = logsumexp_sandwich(&v, gamma).unwrap();
        t.check(s.holds(), || {
            format!("{n} values, gamma={gamma}: {s:?}")
        });
    }
    t.done()
}

fn dp_matches_enumeration(rng: &mut ChaCha8Rng, cases: usize) -> PropertyResult {
    let mut t = Tally::new("dp matches policy enumeration");
    for _ in 0..cases {
        let mdp = TinyMdp::random(rng);
        let kernel = mdp.kernel();
        let horizon = mdp.horizon();
        let neutral = dp_risk_neutral(&kernel, mdp.costs(), horizon).unwrap();
        for (a, b) in neutral.initial().values.iter().zip(mdp.enumerate_optimal_expectation()) {
            t.check((a - b).abs() <= DP_TOL, || format!("risk-neutral {a} vs enumeration {b}"));
        }
        let gk: Vec<f64> = (0..mdp.n_states()).map(|_| rng.random_range(-0.5..1.0)).collect();
        let gamma = rng.random_range(1.0..6.0);
        let exp = dp_exponential(&kernel, &gk, gamma, horizon).unwrap();
        let stage: Vec<f64> = gk.iter().map(|g| (gamma * g).exp()).collect();
        let exp_mdp = mdp.with_costs(CostTables::state_cost(&stage, horizon, mdp.n_controls()).unwrap()).unwrap();
        for (a, b) in exp.initial().values.iter().zip(exp_mdp.enumerate_optimal_expectation()) {
            t.check((a - b).abs() <= DP_TOL * b.abs().max(1.0), || format!("exponential {a} vs enumeration {b}"));
        }
    }
    t.done()
}

fn theorem3_sandwich(rng: &mut ChaCha8Rng, cases: usize) -> PropertyResult {
    let mut t = Tally::new("bounded-density identity, sandwich and monotonicity");
    for _ in 0..cases {
        let mdp = TinyMdp::random(rng);
        let kernel = mdp.kernel();
        let horizon = mdp.horizon();
        let neutral = dp_risk_neutral(&kernel, mdp.costs(), horizon).unwrap();
        let solve = |a: f64, cap_exponent| {
            let params = RhoParams {
                alpha: level(a),
                cap_exponent,
                costs: mdp.costs().clone(),
            };
            dp_theorem3(&kernel, &params, horizon).unwrap()
        };
        for cap in [CapExponent::InverseHorizon, CapExponent::InverseHorizonPlusOne] {
            t.check(solve(1.0, cap) == neutral, || "alpha=1 differs from risk-neutral".into());
            let mut prev = neutral.values.clone();
            for a in [0.5, 0.1, 0.01] {
                let cur = solve(a, cap).values;
                let ok = cur
                    .iter()
                    .zip(&prev)
                    .all(|(c, p)| c.values.iter().zip(&p.values).all(|(x, y)| x >= y));
                t.check(ok, || format!("values not monotone at alpha={a}"));
                prev = cur;
            }
        }
    }
    t.done()
}

fn rho_sandwich(rng: &mut ChaCha8Rng, cases: usize) -> PropertyResult {
    let mut t = Tally::new("rho between expectation, CVaR and the policy DP");
    for _ in 0..cases {
        let mdp = TinyMdp::random(rng);
        let kernel = mdp.kernel();
        let policies = mdp.all_policies();
        let policy = &policies[rng.random_range(0..policies.len())];
        for a in [0.5, 0.1, 0.01] {
            for cap in [CapExponent::InverseHorizon, CapExponent::InverseHorizonPlusOne] {
                let rho = rho_bruteforce(&mdp, policy, level(a), cap).unwrap();
                let params = RhoParams {
                    alpha: level(a),
                    cap_exponent: cap,
                    costs: mdp.costs().clone(),
                };
                let j = dp_rho_policy(&kernel, policy, &params, mdp.horizon()).unwrap();
                for (x0, &r) in rho.iter().enumerate() {
                    let e = mdp.expected_cost(policy, x0);
                    let c = mdp.exact_cvar(policy, x0, level(a));
                    let bound = j[0].values[x0];
                    t.check(e <= r + DP_TOL && r <= c + DP_TOL && r <= bound + DP_TOL, || {
                        format!("alpha={a} x0={x0}: E={e} rho={r} CVaR={c} J0={bound}")
                    });
                }
            }
        }
    }
    t.done()
}

/// On enumerable instances the analytic set is inside the exact safe set,
/// and both families are nested in `(alpha, r)`.
fn exact_under_approximation(rng: &mut ChaCha8Rng, cases: usize) -> PropertyResult {
    let mut t = Tally::new("exact under-approximation and nestedness");
    let alphas = [0.99, 0.5, 0.1, 0.01];
    let rs = [-0.25, 0.0, 0.5, 1.0, 2.0];
    for _ in 0..cases {
        let mdp = TinyMdp::random(rng);
        let gk: Vec<f64> = (0..mdp.n_states()).map(|_| rng.random_range(-0.5..1.0)).collect();
        let gamma = rng.random_range(1.0..10.0);
        let sol = dp_exponential(&mdp.kernel(), &gk, gamma, mdp.horizon()).unwrap();
        let mut masks = Vec::new();
        for a in alphas {
            for r in rs {
                let u = under_approx_set(sol.initial(), level(a), r, gamma).unwrap();
                for x0 in 0..mdp.n_states() {
                    let g = mdp.path_distribution(&sol.policy, x0, |s| s.iter().map(|&k| gk[k]).fold(f64::NEG_INFINITY, f64::max));
                    let cvar = cvar_ru(&g, level(a));
                    let bound = thm1_bound(sol.initial().values[x0], gamma, level(a));
                    t.check(cvar <= bound + TOL, || format!("CVaR {cvar} above bound {bound}"));
                    if u.membership[x0] {
                        t.check(cvar <= r + TOL, || format!("node {x0} in U but CVaR {cvar} > r={r}"));
                    }
                }
                masks.push(u);
            }
        }
        t.check(check_nested(&masks).is_empty(), || "analytic masks not nested".into());
    }
    t.done()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_small() {
        for r in run_suite(17, 40) {
            assert!(r.passed(), "{r:?}");
            assert!(r.cases > 0);
        }
    }
}
