//! Lagrangian equilibria by fixed-point iteration.
//!
//! One iteration builds the speed field generated by the current density
//! path, solves the value function, lets a share of the agents switch to
//! their best response and pushes the updated measure forward. Fictitious
//! play switches a share `1/(n+1)` at iteration `n`, damped Picard a fixed
//! share `θ`. The switching set is chosen per agent from a low-discrepancy
//! sequence with a seeded offset, so the stored measure is always an exact
//! mixture of best responses and its push-forward is the averaged density.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{speed_field_from_density_path, InteractionKernel, Presence, SpeedField};
use crate::error::{Error, Result};
use crate::geometry::{BoundaryCost, SignedDomain};
use crate::grid::{dist, dot, Grid, Point, Slices, TimeGrid};
use crate::hjb::{horizon_from_bounds, solve_value_function, SolverParams, ValueGrid};
use crate::trajectories::{integrate_optimal_with, retry_off_ridge, StepSink, TrajectoryOptions};
use crate::transport::wasserstein::{sup_w1, w1};
use crate::transport::{
    flow_with_jacobian, mollified_velocity, push_forward, DensityPath, FlowParticle,
    LagrangianMeasure, ParticlePath,
};

/// Absolutely continuous initial distribution of agents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialDensity {
    /// Uniform on the whole domain.
    UniformDomain,
    UniformBall { center: Point, radius: f64 },
    /// Uniform on an axis-aligned box (an interval in 1D).
    UniformBox { lo: Point, hi: Point },
    /// Nodal density values on the computational grid.
    Tabulated { values: Vec<f64> },
}

const SUBSAMPLES: usize = 8;

impl InitialDensity {
    fn in_support(&self, dom: &SignedDomain, x: Point) -> bool {
        if dom.signed_distance(x) >= 0.0 {
            return false;
        }
        match self {
            InitialDensity::UniformDomain | InitialDensity::Tabulated { .. } => true,
            InitialDensity::UniformBall { center, radius } => dist(x, *center) < *radius,
            InitialDensity::UniformBox { lo, hi } => {
                (0..dom.dim()).all(|a| x[a] >= lo[a] && x[a] <= hi[a])
            }
        }
    }

    /// Rejects atomic or misplaced densities.
    pub fn validate(&self, dom: &SignedDomain) -> Result<()> {
        match self {
            InitialDensity::UniformBall { center, radius } => {
                if !(*radius > 0.0) {
                    return Err(Error::UnnormalizedDensity { mass: f64::INFINITY });
                }
                if dom.signed_distance(*center) + radius > 0.0 {
                    return Err(Error::InvalidDomain(
                        "initial ball must lie inside the domain".into(),
                    ));
                }
            }
            InitialDensity::UniformBox { lo, hi } => {
                if (0..dom.dim()).any(|a| !(hi[a] > lo[a])) {
                    return Err(Error::UnnormalizedDensity { mass: f64::INFINITY });
                }
                let corners = if dom.dim() == 1 {
                    vec![[lo[0], 0.0], [hi[0], 0.0]]
                } else {
                    vec![*lo, *hi, [lo[0], hi[1]], [hi[0], lo[1]]]
                };
                if corners.iter().any(|&c| dom.signed_distance(c) > 0.0) {
                    return Err(Error::InvalidDomain(
                        "initial box must lie inside the domain".into(),
                    ));
                }
            }
            InitialDensity::Tabulated { values } => {
                if values.iter().any(|&v| v < 0.0) {
                    let (node, &value) = values
                        .iter()
                        .enumerate()
                        .find(|(_, &v)| v < 0.0)
                        .expect("negative entry");
                    return Err(Error::NegativeDensity { node, value });
                }
            }
            InitialDensity::UniformDomain => {}
        }
        Ok(())
    }

    /// Mass of every node cell, summing to one.
    pub fn cell_masses(&self, grid: &Grid, dom: &SignedDomain) -> Result<Vec<f64>> {
        self.validate(dom)?;
        let vol = grid.cell_volume();
        if let InitialDensity::Tabulated { values } = self {
            if values.len() != grid.len() {
                return Err(Error::GridMismatch(format!(
                    "tabulated density has {} values for {} nodes",
                    values.len(),
                    grid.len()
                )));
            }
            let masses: Vec<f64> = values.iter().map(|v| v * vol).collect();
            let mass: f64 = masses.iter().sum();
            if (mass - 1.0).abs() > 1e-6 {
                return Err(Error::UnnormalizedDensity { mass });
            }
            return Ok(masses.into_iter().map(|m| m / mass).collect());
        }
        let s = SUBSAMPLES;
        let sy = if grid.dim == 2 { s } else { 1 };
        let raw: Vec<f64> = (0..grid.len())
            .map(|k| {
                let c = grid.node(k);
                let mut inside = 0usize;
                for b in 0..sy {
                    for a in 0..s {
                        let mut p = c;
                        p[0] += grid.h * ((a as f64 + 0.5) / s as f64 - 0.5);
                        if grid.dim == 2 {
                            p[1] += grid.h * ((b as f64 + 0.5) / s as f64 - 0.5);
                        }
                        if self.in_support(dom, p) {
                            inside += 1;
                        }
                    }
                }
                inside as f64
            })
            .collect();
        let total: f64 = raw.iter().sum();
        if total == 0.0 {
            return Err(Error::UnnormalizedDensity { mass: 0.0 });
        }
        Ok(raw.into_iter().map(|m| m / total).collect())
    }

    /// Density value at `x`, consistent with `cell_masses`. For the
    /// uniform laws this is the reciprocal support volume, read off a fully
    /// covered cell.
    pub fn value(&self, grid: &Grid, masses: &[f64], x: Point) -> f64 {
        let vol = grid.cell_volume();
        let Some(k) = grid.nearest(x) else {
            return 0.0;
        };
        match self {
            InitialDensity::Tabulated { .. } => masses[k] / vol,
            _ => masses.iter().cloned().fold(0.0, f64::max) / vol,
        }
    }
}

/// `N` stratified samples with equal weights, deterministic for a seed.
pub fn sample_initial(
    rho0: &InitialDensity,
    dom: &SignedDomain,
    grid: &Grid,
    count: usize,
    seed: u64,
) -> Result<Vec<FlowParticle>> {
    let masses = rho0.cell_masses(grid, dom)?;
    let mut cdf = Vec::with_capacity(masses.len());
    let mut acc = 0.0;
    for m in &masses {
        acc += m;
        cdf.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = 1.0 / count as f64;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let u = (i as f64 + rng.gen::<f64>()) * w * acc;
        let k = cdf.partition_point(|&c| c <= u).min(masses.len() - 1);
        let c = grid.node(k);
        let mut x = c;
        for _ in 0..256 {
            let mut p = c;
            p[0] += grid.h * (rng.gen::<f64>() - 0.5);
            if grid.dim == 2 {
                p[1] += grid.h * (rng.gen::<f64>() - 0.5);
            }
            if matches!(rho0, InitialDensity::Tabulated { .. }) && dom.signed_distance(p) < 0.0
                || rho0.in_support(dom, p)
            {
                x = p;
                break;
            }
        }
        out.push(FlowParticle {
            x,
            weight: w,
            rho0: rho0.value(grid, &masses, x),
        });
    }
    Ok(out)
}

/// Grids and horizon shared by every iteration of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discretization {
    pub grid: Grid,
    pub time: TimeGrid,
    pub t_max: f64,
}

impl Discretization {
    /// Grid of spacing `h` around `dom`, horizon from the a-priori speed
    /// bounds padded by `pad`, time step `cfl · h / k_max`.
    pub fn new(
        dom: &SignedDomain,
        g: &BoundaryCost,
        h: f64,
        speed_bounds: (f64, f64),
        cfl: f64,
        pad: f64,
    ) -> Result<Self> {
        let (k_min, k_max) = speed_bounds;
        let t_max = horizon_from_bounds(k_min, k_max, dom, g)?;
        let (lo, hi) = dom.bbox();
        let grid = Grid::covering(dom.dim(), lo, hi, h, 2);
        let time = TimeGrid::covering(t_max * (1.0 + pad), cfl * h / k_max);
        Ok(Discretization { grid, time, t_max })
    }

    pub fn scheme_tolerance(&self) -> f64 {
        5.0 * (self.grid.h + self.time.dt)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scheme {
    FictitiousPlay,
    DampedPicard { theta: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumParams {
    pub scheme: Scheme,
    /// Exploitability target; defaults to `5 (h + Δt)`.
    pub tol: Option<f64>,
    /// Successive-path distance target; defaults to `h`.
    pub tol_fp: Option<f64>,
    pub max_iter: usize,
    pub particles: usize,
    pub seed: u64,
    pub solver: SolverParams,
    pub trajectories: TrajectoryOptions,
}

impl Default for EquilibriumParams {
    fn default() -> Self {
        EquilibriumParams {
            scheme: Scheme::FictitiousPlay,
            tol: None,
            tol_fp: None,
            max_iter: 200,
            particles: 100_000,
            seed: 0,
            solver: SolverParams::default(),
            trajectories: TrajectoryOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub exploitability: f64,
    /// `sup_t W₁` to the previous density path.
    pub distance: f64,
    /// Share of agents that switched to their best response.
    pub weight: f64,
    pub switched: usize,
    pub perturbed_starts: usize,
    pub field_hash: String,
}

#[derive(Clone, Debug)]
pub struct EquilibriumState {
    pub measure: LagrangianMeasure,
    pub path: DensityPath,
    pub field: SpeedField,
    pub value: ValueGrid,
    pub particles: Vec<FlowParticle>,
    pub history: Vec<IterationRecord>,
    pub converged: bool,
    pub exploitability: f64,
    pub t_max: f64,
}

impl EquilibriumState {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }
}

struct CompactSink<'a> {
    dom: &'a SignedDomain,
    band: f64,
    samples: Vec<[f32; 2]>,
    tube_min: Option<f64>,
}

impl StepSink for CompactSink<'_> {
    fn record(&mut self, step: usize, _t: f64, x: Point, u: Point) {
        if step.is_multiple_of(2) {
            self.samples.push([x[0] as f32, x[1] as f32]);
        }
        if self.dom.signed_distance(x) >= -self.band {
            let v = dot(self.dom.distance_gradient(x), u);
            self.tube_min = Some(self.tube_min.map_or(v, |m| m.min(v)));
        }
    }
}

/// Optimal path of one agent from `x0` at `t = 0`, stored compactly. Ridge
/// starts are moved off the ridge first.
pub fn best_response_path(
    vg: &ValueGrid,
    field: &SpeedField,
    dom: &SignedDomain,
    g: &BoundaryCost,
    particle: &FlowParticle,
    opts: &TrajectoryOptions,
) -> Result<ParticlePath> {
    let run = |x: Point| -> Result<ParticlePath> {
        let mut sink = CompactSink {
            dom,
            band: dom.tube(),
            samples: Vec::new(),
            tube_min: None,
        };
        let exit = integrate_optimal_with(vg, field, dom, x, 0.0, opts, &mut sink)?;
        Ok(ParticlePath {
            start: x,
            weight: particle.weight,
            samples: sink.samples,
            exit,
            cost: exit.tau + g.value_at(dom, exit.point),
            tube_min: sink.tube_min,
            perturbed: false,
        })
    };
    let (mut path, moved) = retry_off_ridge(particle.x, vg.grid().h, dom.dim(), run)?;
    path.perturbed = moved;
    Ok(path)
}

/// Best responses of the selected agents to the field; `indices = None`
/// means everyone.
pub fn best_response(
    vg: &ValueGrid,
    field: &SpeedField,
    dom: &SignedDomain,
    g: &BoundaryCost,
    particles: &[FlowParticle],
    indices: &[usize],
    opts: &TrajectoryOptions,
) -> Result<Vec<ParticlePath>> {
    indices
        .par_iter()
        .map(|&i| {
            best_response_path(vg, field, dom, g, &particles[i], opts).map_err(|e| {
                Error::Particle {
                    index: i,
                    source: Box::new(e),
                }
            })
        })
        .collect()
}

/// Time to travel the route of `path` at full speed in `field`, and the
/// resulting cost.
pub fn retime_route(
    path: &ParticlePath,
    field: &SpeedField,
    dom: &SignedDomain,
    g: &BoundaryCost,
) -> f64 {
    let verts: Vec<Point> = path.route().collect();
    let z = path.exit.point;
    let dt = 0.5 * field.time().dt;
    let limit = 4.0 * field.time().end().max(1.0);
    let (mut seg, mut frac) = (0usize, 0.0f64);
    let mut t = 0.0;
    let pos = |seg: usize, frac: f64| -> Point {
        let (a, b) = (verts[seg], verts[(seg + 1).min(verts.len() - 1)]);
        [a[0] + frac * (b[0] - a[0]), a[1] + frac * (b[1] - a[1])]
    };
    // advance by arc length `len`; returns the unused remainder at the end
    let advance = |seg: &mut usize, frac: &mut f64, mut len: f64| -> f64 {
        while *seg + 1 < verts.len() {
            let l = dist(verts[*seg], verts[*seg + 1]);
            let left = (1.0 - *frac) * l;
            if len < left {
                *frac += len / l;
                return 0.0;
            }
            len -= left;
            *seg += 1;
            *frac = 0.0;
        }
        len
    };
    while seg + 1 < verts.len() && t < limit {
        let x = pos(seg, frac);
        let k1 = field.speed(t, x);
        let (mut s2, mut f2) = (seg, frac);
        advance(&mut s2, &mut f2, 0.5 * dt * k1);
        let k2 = field.speed(t + 0.5 * dt, pos(s2, f2));
        let rest = advance(&mut seg, &mut frac, dt * k2);
        if rest > 0.0 || seg + 1 >= verts.len() {
            t += dt - rest / k2;
            break;
        }
        t += dt;
    }
    t + g.value_at(dom, dom.project(z))
}

/// Per-agent gain available by switching to an optimal path,
/// `(J′ − φ(0, x₀))`, where `J′` re-times the agent's route at full speed in
/// `field` and `φ` solves the problem for `field`.
pub fn deviation_gains(
    eta: &LagrangianMeasure,
    field: &SpeedField,
    vg: &ValueGrid,
    dom: &SignedDomain,
    g: &BoundaryCost,
) -> Vec<f64> {
    eta.paths
        .par_iter()
        .map(|p| retime_route(p, field, dom, g) - vg.value(0.0, p.start))
        .collect()
}

/// `max (J′ − φ(0, x₀))₊` over the agents.
pub fn exploitability_of(
    eta: &LagrangianMeasure,
    field: &SpeedField,
    vg: &ValueGrid,
    dom: &SignedDomain,
    g: &BoundaryCost,
) -> f64 {
    deviation_gains(eta, field, vg, dom, g)
        .into_iter()
        .fold(0.0, f64::max)
}

/// Exploitability of a state against its own field and value function.
pub fn exploitability(state: &EquilibriumState, dom: &SignedDomain, g: &BoundaryCost) -> f64 {
    exploitability_of(&state.measure, &state.field, &state.value, dom, g)
}

/// The initial density held fixed over the whole horizon, from exact cell
/// masses rather than samples.
pub fn initial_density_path(
    rho0: &InitialDensity,
    dom: &SignedDomain,
    disc: &Discretization,
) -> Result<DensityPath> {
    let vol = disc.grid.cell_volume();
    let rho = rho0
        .cell_masses(&disc.grid, dom)?
        .into_iter()
        .map(|m| m / vol)
        .collect();
    Ok(DensityPath::constant(disc.grid.clone(), disc.time, dom, rho))
}

/// Frozen initial density as a path over the whole horizon.
fn frozen_path(disc: &Discretization, particles: &[FlowParticle]) -> DensityPath {
    let grid = &disc.grid;
    let vol = grid.cell_volume();
    let mut rho = vec![0.0; grid.len()];
    for p in particles {
        if let Some(k) = grid.nearest(p.x) {
            rho[k] += p.weight / vol;
        }
    }
    let n = grid.len();
    DensityPath::from_slices(
        grid.clone(),
        disc.time,
        Slices::from_vec(n, rho),
        Slices::from_vec(n, vec![0.0; n]),
    )
}

/// Agents switching at iteration `n` with share `w`: those whose
/// low-discrepancy coordinate, shifted by a seeded offset, falls below `w`.
fn switching_set(count: usize, w: f64, seed: u64, n: usize) -> Vec<usize> {
    if w >= 1.0 {
        return (0..count).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let offset: f64 = rng.gen();
    const GOLDEN: f64 = 0.618_033_988_749_894_9;
    (0..count)
        .filter(|&i| (i as f64 * GOLDEN + offset).fract() < w)
        .collect()
}

/// Iterates best responses until the exploitability or the change between
/// successive density paths falls below its tolerance.
pub fn fixed_point_iterate(
    kernel: &InteractionKernel,
    dom: &SignedDomain,
    g: &BoundaryCost,
    rho0: &InitialDensity,
    disc: &Discretization,
    params: &EquilibriumParams,
) -> Result<EquilibriumState> {
    if matches!(kernel.presence, Presence::Indicator) {
        log::warn!("indicator presence: equilibrium is not certified, prefer the epsilon study");
    }
    let particles = sample_initial(rho0, dom, &disc.grid, params.particles, params.seed)?;
    fixed_point_from(kernel, dom, g, particles, disc, params)
}

pub fn fixed_point_from(
    kernel: &InteractionKernel,
    dom: &SignedDomain,
    g: &BoundaryCost,
    particles: Vec<FlowParticle>,
    disc: &Discretization,
    params: &EquilibriumParams,
) -> Result<EquilibriumState> {
    let tol = params.tol.unwrap_or_else(|| disc.scheme_tolerance());
    let tol_fp = params.tol_fp.unwrap_or(disc.grid.h);
    let all: Vec<usize> = (0..particles.len()).collect();

    let mut path = frozen_path(disc, &particles);
    let mut field = speed_field_from_density_path(kernel, &path)?;
    let mut value = solve_value_function(&field, dom, g, &params.solver)?;
    let paths = best_response(&value, &field, dom, g, &particles, &all, &params.trajectories)?;
    let mut measure = LagrangianMeasure {
        time: disc.time,
        paths,
    };
    let mut switched = particles.len();
    let mut weight = 1.0;
    let mut history = Vec::new();
    let mut n = 1usize;
    loop {
        let next = push_forward(&measure, &disc.grid);
        let distance = sup_w1(&path, &next)?;
        path = next;
        if kernel.is_interacting() || n == 1 {
            field = speed_field_from_density_path(kernel, &path)?;
            value = solve_value_function(&field, dom, g, &params.solver)?;
        }
        let expl = exploitability_of(&measure, &field, &value, dom, g);
        let perturbed = measure.paths.iter().filter(|p| p.perturbed).count();
        log::info!(
            "iteration {n}: exploitability {expl:.3e}, distance {distance:.3e}, switched {switched}"
        );
        history.push(IterationRecord {
            iteration: n,
            exploitability: expl,
            distance,
            weight,
            switched,
            perturbed_starts: perturbed,
            field_hash: field.hash(),
        });
        let converged = expl <= tol || distance <= tol_fp;
        let state = |history: Vec<IterationRecord>,
                     measure: LagrangianMeasure,
                     path: DensityPath,
                     field: SpeedField,
                     value: ValueGrid| EquilibriumState {
            measure,
            path,
            field,
            value,
            particles: particles.clone(),
            history,
            converged,
            exploitability: expl,
            t_max: disc.t_max,
        };
        if converged {
            return Ok(state(history, measure, path, field, value));
        }
        if n >= params.max_iter {
            return Err(Error::MaxIterExceeded {
                iterations: n,
                exploitability: expl,
                state: Box::new(state(history, measure, path, field, value)),
            });
        }
        weight = match params.scheme {
            Scheme::FictitiousPlay => 1.0 / (n as f64 + 1.0),
            Scheme::DampedPicard { theta } => theta,
        };
        let chosen = switching_set(particles.len(), weight, params.seed, n);
        switched = chosen.len();
        let fresh = best_response(&value, &field, dom, g, &particles, &chosen, &params.trajectories)?;
        for (i, p) in chosen.into_iter().zip(fresh) {
            measure.paths[i] = p;
        }
        n += 1;
    }
}

/// Result of `fixed_point_iterate` whether or not it met its tolerance.
pub fn iterate_or_best(
    kernel: &InteractionKernel,
    dom: &SignedDomain,
    g: &BoundaryCost,
    rho0: &InitialDensity,
    disc: &Discretization,
    params: &EquilibriumParams,
) -> Result<EquilibriumState> {
    match fixed_point_iterate(kernel, dom, g, rho0, disc, params) {
        Err(Error::MaxIterExceeded { state, .. }) => Ok(*state),
        other => other,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpsilonEntry {
    pub epsilon: f64,
    pub iterations: usize,
    pub converged: bool,
    pub exploitability: f64,
    /// `sup |φ^ε − φ^{ε_prev}|` over interior nodes and times.
    pub value_distance: Option<f64>,
    pub exponents: Vec<f64>,
    /// `sup_t ‖ρ_t‖_p / ‖ρ₀‖_p` per exponent.
    pub lp_ratios: Vec<f64>,
    /// `exp((1 − 1/p) C_div T_max)` per exponent.
    pub envelopes: Vec<f64>,
    pub c_div: f64,
    /// Divergence envelope away from the mollification layer.
    pub c_div_interior: f64,
    pub ell: f64,
    pub ell_bound: f64,
    pub inward_violations: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpsilonStudy {
    pub entries: Vec<EpsilonEntry>,
    /// Exploitability of the smallest-ε equilibrium under the indicator
    /// presence.
    pub indicator_exploitability: Option<f64>,
    pub t_max: f64,
    pub failure: Option<String>,
}

/// `L^p` diagnostics of a state along the mollified flow of width `epsilon`.
pub fn lp_diagnostics(
    state: &EquilibriumState,
    dom: &SignedDomain,
    epsilon: f64,
    exponents: &[f64],
) -> Result<(crate::transport::FlowReport, f64)> {
    let mv = mollified_velocity(&state.value, &state.field, dom, epsilon)?;
    let interior = mv.divergence_envelope(dom, epsilon + mv.grid().h);
    let report = flow_with_jacobian(&mv, dom, &state.particles, exponents)?;
    Ok((report, interior))
}

/// Equilibria for the cutoff family `ψ^ε` (cutoff width and mollification
/// radius both `ε`), compared across `ε`.
pub fn epsilon_limit_study(
    kernel: &InteractionKernel,
    dom: &SignedDomain,
    g: &BoundaryCost,
    rho0: &InitialDensity,
    disc: &Discretization,
    params: &EquilibriumParams,
    epsilons: &[f64],
    exponents: &[f64],
) -> Result<EpsilonStudy> {
    let particles = sample_initial(rho0, dom, &disc.grid, params.particles, params.seed)?;
    let mut study = EpsilonStudy {
        entries: Vec::new(),
        indicator_exploitability: None,
        t_max: disc.t_max,
        failure: None,
    };
    let mut previous: Option<(Slices, Vec<bool>)> = None;
    let mut last_state = None;
    for &eps in epsilons {
        let mut run = || -> Result<EpsilonEntry> {
            let k_eps = kernel.with_presence(Presence::Cutoff { delta: eps })?;
            let state = match fixed_point_from(&k_eps, dom, g, particles.clone(), disc, params) {
                Err(Error::MaxIterExceeded { state, .. }) => *state,
                other => other?,
            };
            let (report, c_int) = lp_diagnostics(&state, dom, eps, exponents)?;
            let value_distance = previous.as_ref().map(|(prev, interior)| {
                let stored = prev.stored().max(state.value.slices().stored());
                let mut d = 0.0f64;
                for i in 0..stored {
                    let (a, b) = (prev.get(i), state.value.slice(i));
                    for m in 0..a.len() {
                        if interior[m] {
                            d = d.max((a[m] - b[m]).abs());
                        }
                    }
                }
                d
            });
            let envelopes = exponents
                .iter()
                .map(|&p| {
                    let q = if p.is_infinite() { 1.0 } else { 1.0 - 1.0 / p };
                    (q * report.c_div_particles * disc.t_max).exp()
                })
                .collect();
            let entry = EpsilonEntry {
                epsilon: eps,
                iterations: state.iterations(),
                converged: state.converged,
                exploitability: state.exploitability,
                value_distance,
                exponents: exponents.to_vec(),
                lp_ratios: (0..exponents.len()).map(|e| report.sup_ratio(e)).collect(),
                envelopes,
                c_div: report.c_div_particles,
                c_div_interior: c_int,
                ell: state.field.constants().ell,
                ell_bound: k_eps.time_derivative_bound(),
                inward_violations: report.inward_violations,
            };
            previous = Some((state.value.slices().clone(), state.value.interior().to_vec()));
            last_state = Some(state);
            Ok(entry)
        };
        match run() {
            Ok(e) => study.entries.push(e),
            Err(e) => {
                study.failure = Some(format!("epsilon {eps}: {e}"));
                return Ok(study);
            }
        }
    }
    if let Some(state) = last_state {
        let k_ind = kernel.with_presence(Presence::Indicator)?;
        let field = speed_field_from_density_path(&k_ind, &state.path)?;
        let vg = solve_value_function(&field, dom, g, &params.solver)?;
        study.indicator_exploitability = Some(exploitability_of(&state.measure, &field, &vg, dom, g));
    }
    Ok(study)
}

/// `W₁` between the starting points of a measure and `ρ₀` on `grid`.
pub fn initial_marginal_distance(
    eta: &LagrangianMeasure,
    rho0: &InitialDensity,
    dom: &SignedDomain,
    grid: &Grid,
) -> Result<f64> {
    let target = rho0.cell_masses(grid, dom)?;
    let vol = grid.cell_volume();
    let hist: Vec<f64> = eta.initial_histogram(grid).iter().map(|r| r * vol).collect();
    Ok(w1(grid, &hist, &target))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_of_a_single_cell_stay_in_it() {
        let dom = SignedDomain::interval(0.0, 1.0).unwrap();
        let grid = Grid::covering(1, [0.0, 0.0], [1.0, 0.0], 0.1, 2);
        let mut values = vec![0.0; grid.len()];
        let k = grid.nearest([0.5, 0.0]).unwrap();
        values[k] = 10.0;
        let rho = InitialDensity::Tabulated { values };
        let s = sample_initial(&rho, &dom, &grid, 500, 3).unwrap();
        assert!(s.iter().all(|p| (p.x[0] - 0.5).abs() <= 0.05 + 1e-12));
        assert!(s.iter().all(|p| (p.rho0 - 10.0).abs() < 1e-12));
    }

    #[test]
    fn unnormalised_tabulated_density_is_rejected() {
        let dom = SignedDomain::interval(0.0, 1.0).unwrap();
        let grid = Grid::covering(1, [0.0, 0.0], [1.0, 0.0], 0.1, 2);
        let rho = InitialDensity::Tabulated { values: vec![1.0; grid.len()] };
        assert!(matches!(
            sample_initial(&rho, &dom, &grid, 10, 0),
            Err(Error::UnnormalizedDensity { .. })
        ));
    }

    #[test]
    fn quadrant_counts_of_a_uniform_disk() {
        let dom = SignedDomain::unit_ball();
        let grid = Grid::covering(2, [-1.0, -1.0], [1.0, 1.0], 1.0 / 32.0, 2);
        let n = 40_000;
        let s = sample_initial(&InitialDensity::UniformDomain, &dom, &grid, n, 11).unwrap();
        let mut q = [0usize; 4];
        for p in &s {
            assert!(dom.contains(p.x));
            q[(p.x[0] > 0.0) as usize + 2 * (p.x[1] > 0.0) as usize] += 1;
        }
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        for c in q {
            assert!((c as f64 - n as f64 / 4.0).abs() < 3.0 * sigma, "{q:?}");
        }
        let rho = s[0].rho0;
        assert!((rho - 1.0 / std::f64::consts::PI).abs() < 0.01, "{rho}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let dom = SignedDomain::unit_ball();
        let grid = Grid::covering(2, [-1.0, -1.0], [1.0, 1.0], 0.1, 2);
        let a = sample_initial(&InitialDensity::UniformDomain, &dom, &grid, 1000, 5).unwrap();
        let b = sample_initial(&InitialDensity::UniformDomain, &dom, &grid, 1000, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn switching_share_matches_weight() {
        let s = switching_set(100_000, 0.25, 7, 3);
        assert!((s.len() as f64 / 100_000.0 - 0.25).abs() < 1e-3);
        assert_eq!(switching_set(10, 1.0, 0, 0).len(), 10);
    }
}
