use proptest::prelude::*;
use riskreach::dp::{dp_exponential, dp_risk_neutral, dp_theorem3, CapExponent, CostTables, RhoParams};
use riskreach::models::{DisturbanceFamily, TclParams, TclSystem, make_disturbance};
use riskreach::risk::{cvar_dual, cvar_ru, logsumexp_sandwich};
use riskreach::sets::{check_nested, thm1_bound, under_approx_set};
use riskreach::{build_kernel, DiscreteDistribution, Grid, RiskLevel};
use riskreach::dp::ValueTable;

fn distribution() -> impl Strategy<Value = DiscreteDistribution> {
    (1usize..30).prop_flat_map(|n| {
        (
            prop::collection::vec(-50.0f64..50.0, n),
            prop::collection::vec(0.01f64..1.0, n),
        )
            .prop_map(|(support, weights)| {
                let total: f64 = weights.iter().sum();
                let mut probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
                // Put the rounding residue on the last atom so the law sums to 1.
                let head: f64 = probs[..probs.len() - 1].iter().sum();
                *probs.last_mut().unwrap() = 1.0 - head;
                DiscreteDistribution::new(support, probs).unwrap()
            })
    })
}

fn level() -> impl Strategy<Value = RiskLevel> {
    (1e-4f64..=1.0).prop_map(|a| RiskLevel::new(a).unwrap())
}

proptest! {
    #[test]
    fn cvar_lies_between_mean_and_max(d in distribution(), a in level()) {
        let c = cvar_ru(&d, a);
        let scale = 1e-12 * (1.0 + d.max_atom().abs());
        prop_assert!(c >= d.mean() - scale);
        prop_assert!(c <= d.max_atom() + scale);
    }

    #[test]
    fn cvar_is_non_increasing_in_alpha(d in distribution(), a in level(), b in level()) {
        let (lo, hi) = if a.alpha() <= b.alpha() { (a, b) } else { (b, a) };
        prop_assert!(cvar_ru(&d, lo) >= cvar_ru(&d, hi));
    }

    #[test]
    fn dual_density_is_feasible_and_attains_primal(d in distribution(), a in level()) {
        let (value, density) = cvar_dual(&d, a);
        prop_assert!(density.is_feasible_for(&d, 1e-12));
        let tilted: f64 = density.values.iter().zip(d.support()).zip(d.probs()).map(|((v, y), q)| v * y * q).sum();
        let scale = 1e-10 * (1.0 + d.max_atom().abs());
        prop_assert!((tilted - value).abs() <= scale);
        prop_assert!((value - cvar_ru(&d, a)).abs() <= 1e-12 * (1.0 + value.abs()));
    }

    #[test]
    fn logsumexp_bracket_holds(v in prop::collection::vec(-5.0f64..5.0, 1..40), gamma in 1.0f64..60.0) {
        prop_assert!(logsumexp_sandwich(&v, gamma).unwrap().holds());
    }

    #[test]
    fn projection_is_a_partition_of_unity(x in -1.0f64..12.0, y in -2.0f64..7.0) {
        let grid = Grid::from_bounds(&[(0.0, 10.0, 0.5), (0.0, 5.0, 0.25)]).unwrap();
        let w = grid.project(&[x, y]);
        prop_assert!(w.entries.iter().all(|e| e.1 >= 0.0 && e.0 < grid.len()));
        prop_assert!((w.total() - 1.0).abs() <= 1e-12);
        let (cx, cy) = (x.clamp(0.0, 10.0), y.clamp(0.0, 5.0));
        let rx: f64 = w.entries.iter().map(|&(k, q)| q * grid.node_coords(k)[0]).sum();
        let ry: f64 = w.entries.iter().map(|&(k, q)| q * grid.node_coords(k)[1]).sum();
        prop_assert!((rx - cx).abs() <= 1e-9 && (ry - cy).abs() <= 1e-9);
    }

    #[test]
    fn cvar_bound_grows_as_alpha_shrinks(j0 in 1.0f64..1e6, gamma in 1.0f64..30.0, a in level(), b in level()) {
        let (lo, hi) = if a.alpha() <= b.alpha() { (a, b) } else { (b, a) };
        prop_assert!(thm1_bound(j0, gamma, lo) >= thm1_bound(j0, gamma, hi));
    }

    #[test]
    fn under_approximations_nest(
        values in prop::collection::vec(1.0f64..1e4, 1..50),
        alphas in prop::collection::vec(level(), 1..5),
        rs in prop::collection::vec(-1.0f64..3.0, 1..5),
    ) {
        let j0 = ValueTable { stage: 0, values };
        let masks: Vec<_> = alphas
            .iter()
            .flat_map(|&a| rs.iter().map(move |&r| (a, r)))
            .map(|(a, r)| under_approx_set(&j0, a, r, 5.0).unwrap())
            .collect();
        prop_assert!(check_nested(&masks).is_empty());
    }
}

/// Small TCL instance shared by the kernel and DP properties.
fn tcl_kernel(family: DisturbanceFamily) -> (riskreach::TransitionKernel, Vec<f64>, usize) {
    let params = TclParams::benchmark();
    let horizon = params.horizon;
    let model = TclSystem::new(params);
    let sgrid = Grid::from_bounds(&[(18.0, 23.0, 0.25)]).unwrap();
    let cgrid = Grid::from_bounds(&[(0.0, 1.0, 0.25)]).unwrap();
    let dist = make_disturbance(family, 10).unwrap();
    let kernel = build_kernel(&model, &sgrid, &cgrid, &dist).unwrap();
    let gk = (0..sgrid.len()).map(|i| riskreach::models::tcl_gk(sgrid.node_coords(i)[0])).collect();
    (kernel, gk, horizon)
}

#[test]
fn kernel_rows_are_distributions() {
    for family in [DisturbanceFamily::TemperatureNone, DisturbanceFamily::TemperatureLeft, DisturbanceFamily::TemperatureRight] {
        let (kernel, _, _) = tcl_kernel(family);
        for i in 0..kernel.n_states() {
            for j in 0..kernel.n_controls() {
                let (idx, p) = kernel.row(i, j);
                assert!(idx.iter().all(|&k| (k as usize) < kernel.n_states()));
                assert!(p.iter().all(|&q| q > 0.0));
                assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-10, "row ({i},{j})");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn exponential_values_respect_cost_bounds(gamma in 1.0f64..12.0) {
        let (kernel, gk, horizon) = tcl_kernel(DisturbanceFamily::TemperatureRight);
        let sol = dp_exponential(&kernel, &gk, gamma, horizon).unwrap();
        let lo = gk.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = gk.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (t, table) in sol.values.iter().enumerate() {
            let terms = (horizon + 1 - t) as f64;
            for (i, &v) in table.values.iter().enumerate() {
                prop_assert!(v >= terms * (gamma * lo).exp() * (1.0 - 1e-12));
                prop_assert!(v <= terms * (gamma * hi).exp() * (1.0 + 1e-12));
                // The stage term alone is a lower bound.
                prop_assert!(v >= (gamma * gk[i]).exp() * (1.0 - 1e-12));
            }
        }
    }

    #[test]
    fn bounded_density_values_are_monotone_in_alpha(a in level(), b in level(), seed_cost in 0.0f64..2.0) {
        let (kernel, gk, horizon) = tcl_kernel(DisturbanceFamily::TemperatureLeft);
        let cost: Vec<f64> = gk.iter().map(|g| g + seed_cost).collect();
        let costs = CostTables::state_cost(&cost, horizon, kernel.n_controls()).unwrap();
        let neutral = dp_risk_neutral(&kernel, &costs, horizon).unwrap();
        let (lo, hi) = if a.alpha() <= b.alpha() { (a, b) } else { (b, a) };
        let solve = |alpha| {
            let params = RhoParams { alpha, cap_exponent: CapExponent::default(), costs: costs.clone() };
            dp_theorem3(&kernel, &params, horizon).unwrap()
        };
        let (small, large) = (solve(lo), solve(hi));
        for i in 0..kernel.n_states() {
            prop_assert!(small.initial().values[i] >= large.initial().values[i]);
            prop_assert!(large.initial().values[i] >= neutral.initial().values[i] - 1e-12);
        }
    }
}
