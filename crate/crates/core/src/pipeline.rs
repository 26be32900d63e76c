//! Config-driven orchestration of the analysis stages and their artifacts.
//!
//! Outputs are deterministic functions of the configuration text and seed:
//! no timestamps, stable iteration order, and a manifest listing every file
//! with its SHA-256.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, LoadedConfig};
use crate::dp::{
    dp_exponential, dp_theorem3, write_policy_bin, write_policy_csv, write_values_bin, write_values_csv, CostTables,
    DpSolution, RhoParams,
};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::io::{self, Provenance};
use crate::kernel::{build_kernel, TransitionKernel};
use crate::models::{make_disturbance, DisturbanceFamily, SystemModel};
use crate::monte_carlo::{estimate_cvar_field, simulate_g, write_samples_csv, write_summary_bin, CvarField, SimConfig};
use crate::sets::{
    audit_thm1, check_nested, clt_tolerances, coverage, mc_safe_set, subset_audit, theorem3_safe_set, under_approx_set,
    write_masks_csv, SafeSetMask,
};
use crate::verify::{run_suite, PropertyResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Kernel and exponential-cost DP.
    Solve,
    /// Solve, then roll out the greedy policy and estimate CVaR of `G`.
    Simulate,
    /// Simulate, then build and audit the safe sets.
    Sets,
    /// Bounded-density DP and its sub-level sets.
    Theorem3,
    /// Randomized property suite.
    Verify,
    ExportKernel,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Solve => "solve",
            Mode::Simulate => "simulate",
            Mode::Sets => "sets",
            Mode::Theorem3 => "theorem3",
            Mode::Verify => "verify",
            Mode::ExportKernel => "export-kernel",
        }
    }
}

/// Number of random instances per property in verify mode.
pub const VERIFY_CASES: usize = 1000;

#[derive(Debug, Clone, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub mode: &'static str,
    pub config_sha256: String,
    pub seed: u64,
    pub files: Vec<ManifestEntry>,
}

/// What a run produced.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub files: Vec<PathBuf>,
    /// Verify mode only.
    pub properties: Vec<PropertyResult>,
}

impl RunReport {
    pub fn failed_properties(&self) -> usize {
        self.properties.iter().filter(|p| !p.passed()).count()
    }
}

#[derive(Debug, Clone, Serialize)]
struct SetRecord {
    family: String,
    gamma: f64,
    alpha: f64,
    r: f64,
    u_count: usize,
    s_count: usize,
    /// `None` when the estimated safe set is empty.
    coverage_percent: Option<f64>,
    raw_subset_violations: usize,
    subset_violations_beyond_tolerance: usize,
    max_subset_excess: f64,
    subset_pass_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
struct Thm1Record {
    family: String,
    gamma: f64,
    alpha: f64,
    min_margin: f64,
    negative_margins: usize,
    flagged_beyond_tolerance: usize,
    pass_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
struct SetsSummary {
    nodes: usize,
    n_trajectories: usize,
    sets: Vec<SetRecord>,
    thm1: Vec<Thm1Record>,
    nested_u_violations: usize,
    nested_s_violations: usize,
}

#[derive(Debug, Clone, Serialize)]
struct Theorem3Record {
    family: String,
    alpha: f64,
    r: f64,
    count: usize,
}

#[derive(Debug, Clone, Serialize)]
struct Theorem3Summary {
    nodes: usize,
    cap_exponent: crate::dp::CapExponent,
    stage_cost: &'static str,
    sets: Vec<Theorem3Record>,
    nested_violations: usize,
}

struct Context<'a> {
    config: &'a ExperimentConfig,
    model: Box<dyn SystemModel>,
    sgrid: Grid,
    cgrid: Grid,
    out: &'a Path,
    provenance: Provenance,
    files: Vec<PathBuf>,
}

impl Context<'_> {
    fn path(&mut self, rel: impl AsRef<Path>) -> PathBuf {
        let p = self.out.join(rel);
        self.files.push(p.clone());
        p
    }

    fn gk_nodes(&self) -> Vec<f64> {
        (0..self.sgrid.len())
            .map(|i| self.model.constraint_cost(&self.sgrid.node_coords(i)))
            .collect()
    }

    fn kernel(&self, family: DisturbanceFamily) -> Result<TransitionKernel> {
        let dist = make_disturbance(family, self.config.disturbance.n_atoms).map_err(|e| e.in_stage("disturbance"))?;
        build_kernel(self.model.as_ref(), &self.sgrid, &self.cgrid, &dist).map_err(|e| e.in_stage("kernel"))
    }
}

/// JSON artifacts carry the provenance next to their payload.
#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    config_sha256: &'a str,
    seed: u64,
    data: &'a T,
}

fn write_stamped<T: Serialize>(path: &Path, provenance: &Provenance, data: &T) -> Result<()> {
    io::write_json(
        path,
        &Stamped {
            config_sha256: &provenance.config_sha256,
            seed: provenance.seed,
            data,
        },
    )
}

fn tag(x: f64) -> String {
    format!("{x}")
}

/// Runs `mode` for a loaded configuration, writing into `out`.
pub fn run(loaded: &LoadedConfig, mode: Mode, out: &Path, seed: u64) -> Result<RunReport> {
    let config = &loaded.config;
    let (sgrid, cgrid) = config.grids()?;
    let mut ctx = Context {
        config,
        model: config.model()?,
        sgrid,
        cgrid,
        out,
        provenance: Provenance::new(loaded.sha256.clone(), seed),
        files: Vec::new(),
    };
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut properties = Vec::new();
    match mode {
        Mode::ExportKernel => export_kernels(&mut ctx)?,
        Mode::Solve | Mode::Simulate | Mode::Sets => exponential_pipeline(&mut ctx, mode)?,
        Mode::Theorem3 => theorem3_pipeline(&mut ctx)?,
        Mode::Verify => {
            properties = run_suite(seed, VERIFY_CASES);
            let p = ctx.path("verify.json");
            write_stamped(&p, &ctx.provenance, &properties)?;
        }
    }
    write_manifest(&mut ctx, mode)?;
    Ok(RunReport {
        files: ctx.files,
        properties,
    })
}

fn export_kernels(ctx: &mut Context<'_>) -> Result<()> {
    for &family in &ctx.config.disturbance.families {
        let kernel = ctx.kernel(family)?;
        let p = ctx.path(format!("{family}/kernel.csv"));
        kernel.write_csv(&p, &ctx.provenance)?;
    }
    Ok(())
}

fn write_solution(ctx: &mut Context<'_>, dir: &str, stem: &str, sol: &DpSolution) -> Result<()> {
    let prov = ctx.provenance.clone();
    let p = ctx.path(format!("{dir}/{stem}_values.csv"));
    write_values_csv(&p, &sol.values[..1], &ctx.sgrid, &prov)?;
    let p = ctx.path(format!("{dir}/{stem}_values.bin"));
    write_values_bin(&p, &sol.values, &prov)?;
    let p = ctx.path(format!("{dir}/{stem}_policy.csv"));
    write_policy_csv(&p, &sol.policy, &ctx.sgrid, &ctx.cgrid, &prov)?;
    let p = ctx.path(format!("{dir}/{stem}_policy.bin"));
    write_policy_bin(&p, &sol.policy, &prov)
}

fn write_cvar_csv(ctx: &mut Context<'_>, path: PathBuf, field: &CvarField) -> Result<()> {
    let xs = (0..ctx.sgrid.dim()).map(|d| format!("x{d}")).collect::<Vec<_>>().join(",");
    let levels = field.levels().iter().map(|l| format!("cvar_{}", l.alpha())).collect::<Vec<_>>().join(",");
    let sgrid = &ctx.sgrid;
    let rows = (0..field.n_nodes()).map(|i| {
        let coords = sgrid.node_coords(i).iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        let vals = (0..field.levels().len()).map(|k| field.at(k)[i].to_string()).collect::<Vec<_>>().join(",");
        format!("{i},{coords},{vals}")
    });
    io::write_csv(&path, &ctx.provenance, &format!("node,{xs},{levels}"), rows)
}

fn exponential_pipeline(ctx: &mut Context<'_>, mode: Mode) -> Result<()> {
    let config = ctx.config;
    let alphas = &config.analysis.alphas;
    let gk = ctx.gk_nodes();
    let horizon = ctx.model.horizon();
    let mut coverage_rows = Vec::new();
    for &family in &config.disturbance.families {
        let dist = make_disturbance(family, config.disturbance.n_atoms).map_err(|e| e.in_stage("disturbance"))?;
        let kernel = build_kernel(ctx.model.as_ref(), &ctx.sgrid, &ctx.cgrid, &dist).map_err(|e| e.in_stage("kernel"))?;
        for &gamma in &config.analysis.gammas {
            let dir = format!("{family}/gamma{}", tag(gamma));
            let sol = dp_exponential(&kernel, &gk, gamma, horizon).map_err(|e| e.in_stage("dp_exponential"))?;
            write_solution(ctx, &dir, "exponential", &sol)?;
            if mode == Mode::Solve {
                continue;
            }
            let sim = SimConfig {
                n_trajectories: config.monte_carlo.n_trajectories,
                seed: ctx.provenance.seed,
                policy: sol.policy.clone(),
                interpolate_policy: config.monte_carlo.interpolate_policy,
                keep_trajectory_index: config.monte_carlo.export_samples,
            };
            let samples =
                simulate_g(ctx.model.as_ref(), &dist, &sim, &ctx.sgrid, &ctx.cgrid).map_err(|e| e.in_stage("simulate_g"))?;
            let prov = ctx.provenance.clone();
            let p = ctx.path(format!("{dir}/g_summary.bin"));
            write_summary_bin(&p, &samples, &prov)?;
            if config.monte_carlo.export_samples {
                let p = ctx.path(format!("{dir}/g_samples.csv"));
                write_samples_csv(&p, &samples, &prov)?;
            }
            let field = estimate_cvar_field(&samples, alphas).map_err(|e| e.in_stage("estimate_cvar_field"))?;
            let p = ctx.path(format!("{dir}/cvar.csv"));
            write_cvar_csv(ctx, p, &field)?;
            if mode == Mode::Simulate {
                continue;
            }

            let mut summary = SetsSummary {
                nodes: ctx.sgrid.len(),
                n_trajectories: config.monte_carlo.n_trajectories,
                sets: Vec::new(),
                thm1: Vec::new(),
                nested_u_violations: 0,
                nested_s_violations: 0,
            };
            let mut u_masks: Vec<SafeSetMask> = Vec::new();
            let mut s_masks: Vec<SafeSetMask> = Vec::new();
            for (k, &alpha) in alphas.iter().enumerate() {
                let tol = clt_tolerances(&samples, alpha);
                let audit = audit_thm1(sol.initial(), gamma, alpha, field.at(k), &tol).map_err(|e| e.in_stage("audit_thm1"))?;
                summary.thm1.push(Thm1Record {
                    family: family.to_string(),
                    gamma,
                    alpha: alpha.alpha(),
                    min_margin: audit.margins.iter().copied().fold(f64::INFINITY, f64::min),
                    negative_margins: audit.negative,
                    flagged_beyond_tolerance: audit.flagged.len(),
                    pass_fraction: audit.pass_fraction,
                });
                for &r in &config.analysis.r_values {
                    let u = under_approx_set(sol.initial(), alpha, r, gamma).map_err(|e| e.in_stage("under_approx_set"))?;
                    let s = mc_safe_set(field.at(k), alpha, r);
                    let sub = subset_audit(&u, field.at(k), &tol).map_err(|e| e.in_stage("subset_audit"))?;
                    let cov = match coverage(&u, &s) {
                        Ok(c) => Some(c.percent),
                        Err(Error::EmptyReference) => None,
                        Err(e) => return Err(e.in_stage("coverage")),
                    };
                    let record = SetRecord {
                        family: family.to_string(),
                        gamma,
                        alpha: alpha.alpha(),
                        r,
                        u_count: u.count(),
                        s_count: s.count(),
                        coverage_percent: cov,
                        raw_subset_violations: sub.raw_violations.len(),
                        subset_violations_beyond_tolerance: sub.violations.len(),
                        max_subset_excess: sub.max_excess,
                        subset_pass_fraction: sub.pass_fraction,
                    };
                    coverage_rows.push(format!(
                        "{},{},{},{},{},{},{}",
                        record.family,
                        gamma,
                        alpha.alpha(),
                        r,
                        record.u_count,
                        record.s_count,
                        cov.map_or(String::new(), |c| c.to_string())
                    ));
                    summary.sets.push(record);
                    u_masks.push(u);
                    s_masks.push(s);
                }
            }
            summary.nested_u_violations = check_nested(&u_masks).len();
            summary.nested_s_violations = check_nested(&s_masks).len();
            let all: Vec<SafeSetMask> = u_masks.into_iter().chain(s_masks).collect();
            let prov = ctx.provenance.clone();
            let p = ctx.path(format!("{dir}/masks.csv"));
            write_masks_csv(&p, &all, &ctx.sgrid, &prov)?;
            let p = ctx.path(format!("{dir}/sets_summary.json"));
            write_stamped(&p, &prov, &summary)?;
        }
    }
    if mode == Mode::Sets {
        let prov = ctx.provenance.clone();
        let p = ctx.path("coverage.csv");
        io::write_csv(&p, &prov, "family,gamma,alpha,r,u_count,s_count,coverage_percent", coverage_rows)?;
    }
    Ok(())
}

fn theorem3_pipeline(ctx: &mut Context<'_>) -> Result<()> {
    let config = ctx.config;
    let gk = ctx.gk_nodes();
    let horizon = ctx.model.horizon();
    let costs = CostTables::state_cost(&gk, horizon, ctx.cgrid.len())?;
    let mut summary = Theorem3Summary {
        nodes: ctx.sgrid.len(),
        cap_exponent: config.analysis.cap_exponent,
        stage_cost: "g_K at every stage and at the terminal stage",
        sets: Vec::new(),
        nested_violations: 0,
    };
    for &family in &config.disturbance.families {
        let kernel = ctx.kernel(family)?;
        let mut masks = Vec::new();
        for &alpha in &config.analysis.alphas {
            let params = RhoParams {
                alpha,
                cap_exponent: config.analysis.cap_exponent,
                costs: costs.clone(),
            };
            let sol = dp_theorem3(&kernel, &params, horizon).map_err(|e| e.in_stage("dp_theorem3"))?;
            write_solution(ctx, &family.to_string(), &format!("theorem3_alpha{}", alpha.alpha()), &sol)?;
            for &r in &config.analysis.r_values {
                let m = theorem3_safe_set(sol.initial(), r, alpha);
                summary.sets.push(Theorem3Record {
                    family: family.to_string(),
                    alpha: alpha.alpha(),
                    r,
                    count: m.count(),
                });
                masks.push(m);
            }
        }
        summary.nested_violations += check_nested(&masks).len();
        let prov = ctx.provenance.clone();
        let p = ctx.path(format!("{family}/theorem3_masks.csv"));
        write_masks_csv(&p, &masks, &ctx.sgrid, &prov)?;
    }
    let p = ctx.path("theorem3_summary.json");
    write_stamped(&p, &ctx.provenance, &summary)
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_manifest(ctx: &mut Context<'_>, mode: Mode) -> Result<()> {
    let mut files = ctx
        .files
        .iter()
        .map(|p| {
            Ok(ManifestEntry {
                path: p.strip_prefix(ctx.out).unwrap_or(p).to_string_lossy().replace('\\', "/"),
                sha256: file_sha256(p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    files.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest {
        tool: "riskreach",
        version: env!("CARGO_PKG_VERSION"),
        mode: mode.name(),
        config_sha256: ctx.provenance.config_sha256.clone(),
        seed: ctx.provenance.seed,
        files,
    };
    let p = ctx.path("manifest.json");
    io::write_json(&p, &manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
seed = 3
horizon_steps = 3

[system]
model = "tcl"

[grid]
state = [{ min = 18.0, max = 23.0, resolution = 0.5 }]
control = [{ min = 0.0, max = 1.0, resolution = 0.5 }]

[disturbance]
families = ["temperature-none", "temperature-right"]
n_atoms = 5

[analysis]
gammas = [4.0]
alphas = [0.99, 0.1]
r_values = [0.5, 1.5]

[monte_carlo]
n_trajectories = 50
export_samples = true
"#;

    fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut out = Vec::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in std::fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn sets_mode_is_deterministic_and_complete() {
        let loaded = LoadedConfig::from_text(SMALL).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let report = run(&loaded, Mode::Sets, a.path(), 3).unwrap();
        run(&loaded, Mode::Sets, b.path(), 3).unwrap();
        assert_eq!(read_tree(a.path()), read_tree(b.path()));
        let tree = read_tree(a.path());
        let names: Vec<&str> = tree.iter().map(|t| t.0.as_str()).collect();
        assert!(names.contains(&"coverage.csv"));
        assert!(names.contains(&"manifest.json"));
        assert!(names.contains(&"temperature-right/gamma4/masks.csv"));
        assert!(names.contains(&"temperature-none/gamma4/g_samples.csv"));
        assert_eq!(report.files.len(), tree.len());
        for (name, bytes) in &tree {
            let text = String::from_utf8_lossy(bytes);
            if name.ends_with(".csv") {
                assert!(text.starts_with(&format!("# config_sha256={} seed=3", loaded.sha256)), "{name}");
            }
        }
    }

    #[test]
    fn other_modes_run() {
        let loaded = LoadedConfig::from_text(SMALL).unwrap();
        for mode in [Mode::Solve, Mode::Simulate, Mode::Theorem3, Mode::ExportKernel] {
            let dir = tempfile::tempdir().unwrap();
            let report = run(&loaded, mode, dir.path(), 1).unwrap();
            assert!(report.files.len() >= 2, "{mode:?}");
        }
    }
}
