//! Config-driven pipelines behind the command-line subcommands. Each writes
//! its artifacts into an output directory and finishes with a manifest,
//! marked `FAILED` when the pipeline stopped early.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{
    dpp_min_slack, exit_time_check, fixed_direction_path, gradient_lower_bound,
    radial_error, semiconcavity_constant, time_monotonicity_check, transversality_report, Check,
};
use crate::config::{ExperimentConfig, Problem};
use crate::dynamics::{speed_field_from_density_path, SpeedField};
use crate::equilibrium::{
    epsilon_limit_study, initial_density_path, iterate_or_best, lp_diagnostics, EquilibriumState,
    InitialDensity,
};
use crate::error::{Error, Result};
use crate::geometry::{BoundaryCost, SignedDomain};
use crate::grid::{Grid, Point};
use crate::hjb::{hj_residual, solve_value_function, ValueGrid};
use crate::io::{Manifest, OutputDir};
use crate::trajectories::{integrate_optimal_perturbed, trajectory_cost, Trajectory};
use crate::transport::{continuity_residual, feedback_velocity, test_dictionary};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    SolveHjb,
    Trajectories,
    Equilibrium,
    EpsilonStudy,
    Verify,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SolveHjb => "solve-hjb",
            Command::Trajectories => "trajectories",
            Command::Equilibrium => "equilibrium",
            Command::EpsilonStudy => "epsilon-study",
            Command::Verify => "verify",
        }
    }
}

/// What a finished pipeline reports back.
pub struct Outcome {
    pub manifest: Manifest,
    /// All asserted checks passed (always true for non-verifying commands).
    pub pass: bool,
}

/// Runs `command` for `cfg` into `out`. Partial outputs are kept and the
/// manifest is marked `FAILED` on error.
pub fn run(command: Command, cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let mut dir = OutputDir::create(out)?;
    let result = match command {
        Command::SolveHjb => run_solve(cfg, &mut dir),
        Command::Trajectories => run_trajectories(cfg, &mut dir),
        Command::Equilibrium => run_equilibrium(cfg, &mut dir),
        Command::EpsilonStudy => run_epsilon_study(cfg, &mut dir),
        Command::Verify => run_verify(cfg, &mut dir),
    };
    let config = cfg.to_toml();
    match result {
        Ok(pass) => {
            let manifest = dir.finish(command.name(), &config, cfg.seed, None)?;
            Ok(Outcome { manifest, pass })
        }
        Err(e) => {
            let e = e.context(command.name());
            dir.finish(command.name(), &config, cfg.seed, Some(e.to_string()))?;
            Err(e)
        }
    }
}

fn timed<T>(dir: &mut OutputDir, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let r = f().map_err(|e| e.context(stage));
    dir.record_time(stage, start.elapsed().as_secs_f64());
    r
}

fn initial(cfg: &ExperimentConfig) -> InitialDensity {
    cfg.initial.clone().unwrap_or(InitialDensity::UniformDomain)
}

/// The field the single-agent commands work with: the prescribed profile,
/// or the kernel applied to the initial density held fixed.
pub fn base_field(cfg: &ExperimentConfig, problem: &Problem) -> Result<SpeedField> {
    if let Some(f) = problem.profile_field() {
        return Ok(f);
    }
    let kernel = problem.kernel.as_ref().expect("kernel or profile");
    let path = initial_density_path(&initial(cfg), &problem.domain, &problem.disc)?;
    speed_field_from_density_path(kernel, &path)
}

fn grid_attributes(grid: &Grid, dt: f64) -> serde_json::Value {
    serde_json::json!({
        "origin": grid.origin,
        "h": grid.h,
        "nodes": grid.n,
        "dt": dt,
    })
}

fn spatial_shape(grid: &Grid) -> (Vec<usize>, Vec<&'static str>) {
    if grid.dim == 1 {
        (vec![grid.n[0]], vec!["x"])
    } else {
        (vec![grid.n[1], grid.n[0]], vec!["y", "x"])
    }
}

fn write_slices(
    dir: &mut OutputDir,
    name: &str,
    grid: &Grid,
    dt: f64,
    count: usize,
    slice: impl Fn(usize) -> Vec<f64>,
) -> Result<()> {
    let (space, space_axes) = spatial_shape(grid);
    let mut data = Vec::with_capacity(count * grid.len());
    for i in 0..count {
        data.extend(slice(i));
    }
    let mut shape = vec![count];
    shape.extend(space);
    let mut axes = vec!["t"];
    axes.extend(space_axes);
    dir.write_tensor(name, &data, &shape, &axes, grid_attributes(grid, dt))
}

fn write_value(dir: &mut OutputDir, vg: &ValueGrid) -> Result<()> {
    write_slices(dir, "value", vg.grid(), vg.time().dt, vg.slices().stored(), |i| {
        vg.slice(i).to_vec()
    })
}

#[derive(Serialize)]
struct SolveMetrics {
    t_max: f64,
    time_steps: usize,
    stored_slices: usize,
    k_min: f64,
    k_max: f64,
    lipschitz: f64,
    min_time_quotient: f64,
    hj_residual: f64,
    hj_residual_nodes: usize,
    field_hash: String,
}

fn solve(cfg: &ExperimentConfig, dir: &mut OutputDir) -> Result<(Problem, SpeedField, ValueGrid)> {
    let problem = cfg.problem()?;
    let field = timed(dir, "field", || base_field(cfg, &problem))?;
    let vg = timed(dir, "hjb", || {
        solve_value_function(&field, &problem.domain, &problem.cost, &cfg.solver)
    })?;
    Ok((problem, field, vg))
}

pub fn run_solve(cfg: &ExperimentConfig, dir: &mut OutputDir) -> Result<bool> {
    let (_, field, vg) = solve(cfg, dir)?;
    write_value(dir, &vg)?;
    let res = hj_residual(&vg, &field, cfg.verify.ridge_band);
    let c = field.constants();
    dir.write_json(
        "metrics.json",
        &SolveMetrics {
            t_max: vg.t_max(),
            time_steps: vg.time().n,
            stored_slices: vg.slices().stored(),
            k_min: c.k_min,
            k_max: c.k_max,
            lipschitz: vg.lipschitz(),
            min_time_quotient: vg.min_time_quotient(),
            hj_residual: res.max,
            hj_residual_nodes: res.nodes_checked,
            field_hash: vg.field_hash().to_string(),
        },
    )?;
    Ok(true)
}

/// Uniform points at least `margin` inside `dom`, with start times uniform
/// in `[0, t_spread]`.
pub fn random_starts(
    dom: &SignedDomain,
    count: usize,
    margin: f64,
    t_spread: f64,
    seed: u64,
) -> Vec<(f64, Point)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = dom.bbox();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut x = [rng.gen_range(lo[0]..hi[0]), 0.0];
        if dom.dim() == 2 {
            x[1] = rng.gen_range(lo[1]..hi[1]);
        }
        let t: f64 = if t_spread > 0.0 { rng.gen_range(0.0..t_spread) } else { 0.0 };
        if dom.signed_distance(x) <= -margin {
            out.push((t, x));
        }
    }
    out
}

fn trajectory_rows(trajs: &[Trajectory], limit: usize) -> Vec<Vec<f64>> {
    let mut rows = Vec::new();
    for (id, tr) in trajs.iter().take(limit).enumerate() {
        for ((t, x), u) in tr.times.iter().zip(&tr.positions).zip(&tr.controls) {
            rows.push(vec![id as f64, *t, x[0], x[1], u[0], u[1]]);
        }
    }
    rows
}

pub fn run_trajectories(cfg: &ExperimentConfig, dir: &mut OutputDir) -> Result<bool> {
    let (problem, field, vg) = solve(cfg, dir)?;
    let dom = &problem.domain;
    let starts = random_starts(dom, cfg.verify.starts, field.grid().h, 0.0, cfg.seed);
    let trajs = timed(dir, "trajectories", || {
        starts
            .par_iter()
            .map(|&(t, x)| integrate_optimal_perturbed(&vg, &field, dom, x, t, &cfg.trajectories))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut summary = Vec::new();
    for (id, tr) in trajs.iter().enumerate() {
        let e = tr.exit.ok_or(Error::NotExited)?;
        summary.push(vec![
            id as f64,
            tr.x0[0],
            tr.x0[1],
            e.tau,
            e.point[0],
            e.point[1],
            trajectory_cost(tr, dom, &problem.cost)?,
            tr.perturbed as u8 as f64,
        ]);
    }
    dir.write_csv(
        "trajectories_summary.csv",
        &["id", "x0", "y0", "tau", "exit_x", "exit_y", "cost", "perturbed"],
        &summary,
    )?;
    dir.write_csv(
        "trajectories.csv",
        &["id", "t", "x", "y", "ux", "uy"],
        &trajectory_rows(&trajs, 100),
    )?;
    Ok(true)
}

#[derive(Serialize)]
struct EquilibriumMetrics {
    iterations: usize,
    converged: bool,
    exploitability: f64,
    tol: f64,
    tol_fp: f64,
    hj_residual: f64,
    continuity_residual: f64,
    exited_mass: f64,
    lp: Vec<LpEntry>,
    c_div: Option<f64>,
    certified: bool,
}

#[derive(Serialize)]
struct LpEntry {
    exponent: f64,
    ratio: f64,
    envelope: f64,
}

fn write_density(dir: &mut OutputDir, state: &EquilibriumState) -> Result<()> {
    let path = &state.path;
    write_slices(dir, "density", path.grid(), path.time().dt, path.slices().stored(), |i| {
        path.density(i).to_vec()
    })?;
    write_slices(dir, "exited", path.grid(), path.time().dt, path.exited_slices().stored(), |i| {
        path.exited(i).to_vec()
    })
}

fn write_paths(dir: &mut OutputDir, state: &EquilibriumState, limit: usize) -> Result<()> {
    let dt = state.measure.time.dt;
    let mut rows = Vec::new();
    for (id, p) in state.measure.paths.iter().take(limit).enumerate() {
        for (j, x) in p.route().enumerate() {
            let t = if j < p.samples.len() { j as f64 * dt } else { p.exit.tau };
            rows.push(vec![id as f64, t, x[0], x[1]]);
        }
    }
    dir.write_csv("trajectories.csv", &["id", "t", "x", "y"], &rows)
}

pub fn run_equilibrium(cfg: &ExperimentConfig, dir: &mut OutputDir) -> Result<bool> {
    let problem = cfg.problem()?;
    let Some(kernel) = &problem.kernel else {
        return Err(Error::config("dynamics", "equilibrium needs a kernel"));
    };
    let params = cfg.equilibrium_params();
    let rho0 = initial(cfg);
    let state = timed(dir, "fixed_point", || {
        iterate_or_best(kernel, &problem.domain, &problem.cost, &rho0, &problem.disc, &params)
    })?;
    dir.write_jsonl("iterations.jsonl", &state.history)?;
    write_density(dir, &state)?;
    write_value(dir, &state.value)?;
    write_paths(dir, &state, 200)?;
    let dom = &problem.domain;
    let hj = hj_residual(&state.value, &state.field, cfg.verify.ridge_band);
    let tests = test_dictionary(dom, state.t_max);
    let cont = timed(dir, "continuity_residual", || {
        Ok(continuity_residual(
            &state.path,
            |t, x| feedback_velocity(&state.value, &state.field, t, x),
            &tests,
        ))
    })?;
    let (lp, c_div) = match kernel.presence {
        crate::dynamics::Presence::Cutoff { delta } if delta <= 0.5 * dom.tube() => {
            let (report, _) = timed(dir, "lp_flow", || {
                lp_diagnostics(&state, dom, delta, &cfg.study.exponents)
            })?;
            let entries = (0..report.exponents.len())
                .map(|e| {
                    let b = crate::analysis::lp_bound_report(&report, e, report.c_div_particles, state.t_max);
                    LpEntry {
                        exponent: b.exponent,
                        ratio: b.ratio,
                        envelope: b.envelope,
                    }
                })
                .collect();
            (entries, Some(report.c_div_particles))
        }
        _ => (Vec::new(), None),
    };
    let last = state.path.active_slices().saturating_sub(1);
    dir.write_json(
        "metrics.json",
        &EquilibriumMetrics {
            iterations: state.iterations(),
            converged: state.converged,
            exploitability: state.exploitability,
            tol: params.tol.unwrap_or_else(|| problem.disc.scheme_tolerance()),
            tol_fp: params.tol_fp.unwrap_or(problem.disc.grid.h),
            hj_residual: hj.max,
            continuity_residual: cont,
            exited_mass: state.path.exited_mass(last),
            lp,
            c_div,
            certified: !matches!(kernel.presence, crate::dynamics::Presence::Indicator),
        },
    )?;
    Ok(true)
}

pub fn run_epsilon_study(cfg: &ExperimentConfig, dir: &mut OutputDir) -> Result<bool> {
    let problem = cfg.problem()?;
    let Some(kernel) = &problem.kernel else {
        return Err(Error::config("dynamics", "epsilon study needs a kernel"));
    };
    let study = timed(dir, "study", || {
        epsilon_limit_study(
            kernel,
            &problem.domain,
            &problem.cost,
            &initial(cfg),
            &problem.disc,
            &cfg.equilibrium_params(),
            &cfg.study.epsilons,
            &cfg.study.exponents,
        )
    })?;
    dir.write_json("study.json", &study)?;
    let rows: Vec<Vec<f64>> = study
        .entries
        .iter()
        .flat_map(|e| {
            (0..e.exponents.len()).map(move |k| {
                vec![
                    e.epsilon,
                    e.exponents[k],
                    e.lp_ratios[k],
                    e.envelopes[k],
                    e.c_div,
                    e.value_distance.unwrap_or(f64::NAN),
                    e.exploitability,
                ]
            })
        })
        .collect();
    dir.write_csv(
        "study.csv",
        &["epsilon", "p", "lp_ratio", "envelope", "c_div", "value_distance", "exploitability"],
        &rows,
    )?;
    if let Some(f) = &study.failure {
        return Err(Error::Pipeline {
            context: "partial study".into(),
            source: Box::new(Error::InvalidKernel(f.clone())),
        });
    }
    Ok(true)
}

/// Tolerance shared by the value-consistency checks: `5 (h + Δt)`.
pub fn scheme_tolerance(field: &SpeedField) -> f64 {
    5.0 * (field.grid().h + field.time().dt)
}

/// Property checks on the value function of a config and on optimal paths
/// from seeded random starts.
pub fn verify_checks(
    cfg: &ExperimentConfig,
    problem: &Problem,
    field: &SpeedField,
    vg: &ValueGrid,
) -> Result<Vec<Check>> {
    let dom = &problem.domain;
    let g = &problem.cost;
    let h = field.grid().h;
    let tol = scheme_tolerance(field);
    let c = field.constants();
    let lam = g.lipschitz(dom);
    let mut checks = Vec::new();

    if let (Some(zeta), crate::geometry::Shape::Ball { center, radius }, BoundaryCost::Zero) =
        (problem.profile, dom.shape(), g)
    {
        if *center == [0.0, 0.0] && *radius == 1.0 {
            checks.push(Check::at_most(
                "radial_oracle_error",
                radial_error(vg, &zeta)?,
                2.0 * (h + field.time().dt),
                "closed-form radial value function",
            ));
        }
    }

    let starts = random_starts(dom, cfg.verify.starts, h, 0.0, cfg.seed);
    let trajs: Vec<Trajectory> = starts
        .par_iter()
        .map(|&(t, x)| integrate_optimal_perturbed(vg, field, dom, x, t, &cfg.trajectories))
        .collect::<Result<_>>()?;

    let exits = exit_time_check(&trajs, field, dom, g, 2.0 * h);
    checks.push(Check::at_most(
        "exit_time_bound_violations",
        exits.violations as f64,
        0.0,
        "exit time at most ((1+λk_max)/(1−λk_max)) d(x)/k_min",
    ));

    // DPP along optimal paths from non-ridge starts
    let mut good = 0usize;
    let mut considered = 0usize;
    for tr in trajs.iter().filter(|t| !t.perturbed && !vg.near_ridge(t.t0, t.x0, 1)) {
        considered += 1;
        let cost = trajectory_cost(tr, dom, g)?;
        if (cost - vg.value(tr.t0, tr.x0)).abs() <= tol {
            good += 1;
        }
    }
    checks.push(Check::at_least(
        "dpp_share_within_tolerance",
        good as f64 / considered.max(1) as f64,
        0.95,
        "cost of optimal paths equals the value",
    ));
    // the one-sided DPP for arbitrary straight paths
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let competitors: Vec<Trajectory> = starts
        .iter()
        .take(200)
        .map(|&(t, x)| {
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let u = if dom.dim() == 1 {
                [a.cos().signum(), 0.0]
            } else {
                [a.cos(), a.sin()]
            };
            fixed_direction_path(field, dom, x, t, u, 2.0 * vg.t_max())
        })
        .collect();
    let slack = competitors
        .iter()
        .map(|tr| dpp_min_slack(vg, dom, g, tr))
        .fold(f64::INFINITY, f64::min);
    checks.push(Check::at_least(
        "dpp_inequality_min_slack",
        slack,
        -tol,
        "value at most elapsed time plus value downstream",
    ));

    let mono = time_monotonicity_check(vg);
    checks.push(Check::at_least(
        "time_monotonicity_implied_c",
        mono.implied_c,
        f64::MIN_POSITIVE,
        "value decreases in time at rate below one",
    ));
    let grad = gradient_lower_bound(vg);
    checks.push(Check::at_least(
        "gradient_lower_bound",
        grad.min_gradient,
        0.5 * grad.estimate,
        "gradient bounded away from zero off the ridge",
    ));

    let tv = transversality_report(&trajs, dom, dom.tube(), c.k_min, c.k_max, lam);
    checks.push(Check::at_most(
        "transversality_violations",
        tv.violations as f64,
        0.0,
        "outward speed near the boundary at least (k_min/4)(1/k_max − λ)",
    ));
    if let Some(m) = tv.min_product {
        checks.push(Check::at_least(
            "transversality_min_product",
            m,
            0.9 * tv.bound,
            "outward speed near the boundary",
        ));
    }

    if dom.dim() == 2 && c.ell == 0.0 && matches!(g, BoundaryCost::Zero) {
        let sc = semiconcavity_constant(vg, 0.0);
        checks.push(Check::at_most(
            "semiconcavity_constant",
            sc.off_ridge,
            1.3 * dom.curvature(),
            "semiconcavity bounded by the boundary curvature",
        ));
    }
    Ok(checks)
}

#[derive(Serialize)]
struct VerifyReport<'a> {
    config: &'a str,
    pass: bool,
    checks: &'a [Check],
}

pub fn run_verify(cfg: &ExperimentConfig, dir: &mut OutputDir) -> Result<bool> {
    let (problem, field, vg) = solve(cfg, dir)?;
    let checks = timed(dir, "checks", || verify_checks(cfg, &problem, &field, &vg))?;
    let pass = checks.iter().all(|c| c.pass);
    dir.write_json(
        "verify.json",
        &VerifyReport {
            config: &cfg.name,
            pass,
            checks: &checks,
        },
    )?;
    Ok(pass)
}

/// Re-hashes every file listed in a manifest; returns the mismatches.
pub fn audit(dir: &Path) -> Result<(Manifest, Vec<String>)> {
    let manifest = crate::io::read_manifest(dir)?;
    let mut bad = Vec::new();
    for f in &manifest.files {
        match std::fs::read(dir.join(&f.path)) {
            Ok(bytes) if crate::io::sha256_hex(&bytes) == f.sha256 => {}
            _ => bad.push(f.path.clone()),
        }
    }
    for entry in std::fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().to_string();
        if name != "manifest.json" && !manifest.files.iter().any(|f| f.path == name) {
            bad.push(format!("{name} (not in manifest)"));
        }
    }
    Ok((manifest, bad))
}

/// Human-readable summary of an output directory.
pub fn report(dir: &Path) -> Result<String> {
    let (manifest, bad) = audit(dir)?;
    let mut s = format!(
        "command: {}\nstatus: {}\nseed: {}\nfingerprint: {}\nfiles: {}\n",
        manifest.command,
        manifest.status,
        manifest.seed,
        manifest.fingerprint(),
        manifest.files.len()
    );
    if let Some(e) = &manifest.error {
        s.push_str(&format!("error: {e}\n"));
    }
    for (stage, secs) in &manifest.timing {
        s.push_str(&format!("time {stage}: {secs:.2} s\n"));
    }
    if bad.is_empty() {
        s.push_str("integrity: ok\n");
    } else {
        s.push_str(&format!("integrity: {} problem(s): {}\n", bad.len(), bad.join(", ")));
    }
    if let Ok(text) = std::fs::read(dir.join("verify.json")) {
        let v: serde_json::Value = serde_json::from_slice(&text)?;
        for c in v["checks"].as_array().into_iter().flatten() {
            s.push_str(&format!(
                "[{}] {}: {} (bound {})\n",
                if c["pass"].as_bool() == Some(true) { "pass" } else { "FAIL" },
                c["name"].as_str().unwrap_or("?"),
                c["measured"],
                c["bound"]
            ));
        }
    }
    if let Ok(text) = std::fs::read(dir.join("metrics.json")) {
        s.push_str("metrics: ");
        s.push_str(&String::from_utf8_lossy(&text));
    }
    Ok(s)
}
