//! Moving mass around: push-forwards of Lagrangian measures, the mollified
//! flow with Jacobian tracking, interior `L^p` norms and the weak residual
//! of the continuity equation.

pub mod wasserstein;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Convolver, SpeedField};
use crate::error::{Error, Result};
use crate::geometry::SignedDomain;
use crate::grid::{axpy, dot, norm, Grid, Point, Slices, TimeGrid};
use crate::hjb::ValueGrid;
use crate::trajectories::Exit;

/// One agent of a Lagrangian measure, stored compactly: positions at the
/// grid times before exit, then the exit itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticlePath {
    pub start: Point,
    pub weight: f64,
    /// `γ(tⱼ)` for every grid time `tⱼ < τ`.
    pub samples: Vec<[f32; 2]>,
    pub exit: Exit,
    pub cost: f64,
    /// Smallest `∇d±·u` seen near the boundary.
    pub tube_min: Option<f64>,
    pub perturbed: bool,
}

impl ParticlePath {
    /// Position at grid index `j`, or `None` once exited.
    #[inline]
    pub fn sample(&self, j: usize) -> Option<Point> {
        self.samples.get(j).map(|s| [s[0] as f64, s[1] as f64])
    }

    /// Position at time `t`, interpolated along the stored route, or `None`
    /// once exited.
    pub fn position_at(&self, time: &TimeGrid, t: f64) -> Option<Point> {
        if t >= self.exit.tau {
            return None;
        }
        let s = (t / time.dt).max(0.0);
        let j = s.floor() as usize;
        let a = self.sample(j)?;
        let w = s - j as f64;
        if w == 0.0 {
            return Some(a);
        }
        let (b, tb) = match self.sample(j + 1) {
            Some(b) => (b, time.time(j + 1)),
            None => (self.exit.point, self.exit.tau),
        };
        let ta = time.time(j);
        let f = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
        Some([a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])])
    }

    /// Vertices of the route, ending at the exit point.
    pub fn route(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.samples.len())
            .map(|j| self.sample(j).expect("in range"))
            .chain(std::iter::once(self.exit.point))
    }
}

/// Weighted ensemble of trajectories, a discrete `η ∈ P(Γ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagrangianMeasure {
    pub time: TimeGrid,
    pub paths: Vec<ParticlePath>,
}

impl LagrangianMeasure {
    pub fn total_weight(&self) -> f64 {
        self.paths.iter().map(|p| p.weight).sum()
    }

    pub fn check_weights(&self) -> Result<()> {
        let m = self.total_weight();
        if (m - 1.0).abs() > 1e-12 || self.paths.iter().any(|p| p.weight < 0.0) {
            return Err(Error::UnnormalizedDensity { mass: m });
        }
        Ok(())
    }

    /// Histogram of the starting points.
    pub fn initial_histogram(&self, grid: &Grid) -> Vec<f64> {
        let mut h = vec![0.0; grid.len()];
        let vol = grid.cell_volume();
        for p in &self.paths {
            if let Some(k) = grid.nearest(p.start) {
                h[k] += p.weight / vol;
            }
        }
        h
    }

    /// Largest exit time.
    pub fn last_exit(&self) -> f64 {
        self.paths.iter().map(|p| p.exit.tau).fold(0.0, f64::max)
    }
}

/// `ρ_{tᵢ}` as cell-averaged histograms, together with the mass that has
/// already left, binned at the exit points.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityPath {
    grid: Grid,
    time: TimeGrid,
    density: Slices,
    exited: Slices,
    interior_mass: Vec<f64>,
    exited_mass: Vec<f64>,
}

impl DensityPath {
    fn assemble(grid: Grid, time: TimeGrid, mut density: Slices, mut exited: Slices) -> Self {
        density.compress_tail();
        exited.compress_tail();
        let vol = grid.cell_volume();
        let interior_mass = (0..density.stored())
            .map(|i| density.get(i).iter().sum::<f64>() * vol)
            .collect();
        let exited_mass = (0..exited.stored())
            .map(|i| exited.get(i).iter().sum::<f64>())
            .collect();
        DensityPath {
            grid,
            time,
            density,
            exited,
            interior_mass,
            exited_mass,
        }
    }

    /// A density that never moves.
    pub fn constant(grid: Grid, time: TimeGrid, _dom: &SignedDomain, rho: Vec<f64>) -> Self {
        let n = grid.len();
        let density = Slices::from_vec(n, rho);
        let exited = Slices::from_vec(n, vec![0.0; n]);
        Self::assemble(grid, time, density, exited)
    }

    /// Builds a path from per-slice histograms (density per unit volume)
    /// and exit histograms (mass).
    pub fn from_slices(grid: Grid, time: TimeGrid, density: Slices, exited: Slices) -> Self {
        Self::assemble(grid, time, density, exited)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn slices(&self) -> &Slices {
        &self.density
    }

    pub fn exited_slices(&self) -> &Slices {
        &self.exited
    }

    #[inline]
    pub fn density(&self, i: usize) -> &[f64] {
        self.density.get(i)
    }

    #[inline]
    pub fn exited(&self, i: usize) -> &[f64] {
        self.exited.get(i)
    }

    pub fn interior_mass(&self, i: usize) -> f64 {
        self.interior_mass[i.min(self.interior_mass.len() - 1)]
    }

    pub fn exited_mass(&self, i: usize) -> f64 {
        self.exited_mass[i.min(self.exited_mass.len() - 1)]
    }

    /// Number of time slices after which nothing changes.
    pub fn active_slices(&self) -> usize {
        self.density.stored().max(self.exited.stored())
    }

    /// Interior density plus exited mass as one nodal mass vector.
    pub fn total_masses(&self, i: usize) -> Vec<f64> {
        let vol = self.grid.cell_volume();
        self.density(i)
            .iter()
            .zip(self.exited(i))
            .map(|(r, e)| r * vol + e)
            .collect()
    }

    /// Convex combination `(1 − w) self + w other`.
    pub fn blend(&self, other: &DensityPath, w: f64) -> Result<DensityPath> {
        if self.grid != other.grid || self.time != other.time {
            return Err(Error::GridMismatch("blending density paths on different grids".into()));
        }
        let n = self.grid.len();
        let mix = |a: &Slices, b: &Slices, stored: usize| {
            let mut s = Slices::new(n);
            for i in 0..stored {
                let v: Vec<f64> = a
                    .get(i)
                    .iter()
                    .zip(b.get(i))
                    .map(|(x, y)| (1.0 - w) * x + w * y)
                    .collect();
                s.push(&v);
            }
            s
        };
        let stored = self.active_slices().max(other.active_slices());
        Ok(Self::assemble(
            self.grid.clone(),
            self.time,
            mix(&self.density, &other.density, stored),
            mix(&self.exited, &other.exited, stored),
        ))
    }

    /// Largest exit-time index with interior mass above `tol`.
    pub fn support_end(&self, tol: f64) -> f64 {
        let last = (0..self.interior_mass.len())
            .rev()
            .find(|&i| self.interior_mass[i] > tol)
            .map_or(0, |i| i + 1);
        self.time.time(last.min(self.time.n - 1))
    }
}

fn bin(grid: &Grid, x: Point) -> Option<usize> {
    grid.nearest(x)
}

/// `(e_t)#η` at one time: interior density and exited mass.
pub fn push_forward_at(eta: &LagrangianMeasure, t: f64, grid: &Grid) -> (Vec<f64>, f64) {
    let vol = grid.cell_volume();
    let mut rho = vec![0.0; grid.len()];
    let mut exited = 0.0;
    for p in &eta.paths {
        match p.position_at(&eta.time, t) {
            Some(x) => {
                if let Some(k) = bin(grid, x) {
                    rho[k] += p.weight / vol;
                }
            }
            None => exited += p.weight,
        }
    }
    (rho, exited)
}

/// `(e_{tᵢ})#η` at every grid time of `η`.
pub fn push_forward(eta: &LagrangianMeasure, grid: &Grid) -> DensityPath {
    let n = grid.len();
    let vol = grid.cell_volume();
    let last = ((eta.last_exit() / eta.time.dt).ceil() as usize + 1).min(eta.time.n);
    let slices: Vec<(Vec<f64>, Vec<f64>)> = (0..last.max(1))
        .into_par_iter()
        .map(|j| {
            let mut rho = vec![0.0; n];
            let mut out = vec![0.0; n];
            for p in &eta.paths {
                match p.sample(j) {
                    Some(x) => {
                        if let Some(k) = bin(grid, x) {
                            rho[k] += p.weight / vol;
                        }
                    }
                    None => {
                        if let Some(k) = bin(grid, p.exit.point) {
                            out[k] += p.weight;
                        }
                    }
                }
            }
            (rho, out)
        })
        .collect();
    let mut density = Slices::new(n);
    let mut exited = Slices::new(n);
    for (r, e) in &slices {
        density.push(r);
        exited.push(e);
    }
    DensityPath::assemble(grid.clone(), eta.time, density, exited)
}

/// Discrete `L^p` norm of nodal values with the given cell volume; `p = ∞`
/// gives the maximum.
pub fn lp_norm(values: &[f64], cell_volume: f64, p: f64) -> Result<f64> {
    if !(p > 1.0) {
        return Err(Error::BadExponent(p));
    }
    if p.is_infinite() {
        return Ok(values.iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    let s: f64 = values.iter().map(|v| v.abs().powf(p)).sum::<f64>() * cell_volume;
    Ok(s.powf(1.0 / p))
}

/// `lp_norm` restricted to cells whose node lies in the open interior.
pub fn lp_norm_interior(grid: &Grid, dom: &SignedDomain, rho: &[f64], p: f64) -> Result<f64> {
    let masked: Vec<f64> = rho
        .iter()
        .enumerate()
        .map(|(k, &r)| if dom.signed_distance(grid.node(k)) < 0.0 { r } else { 0.0 })
        .collect();
    lp_norm(&masked, grid.cell_volume(), p)
}

/// Normalised `exp(−1/(1 − |x|²))` bump on the unit ball.
#[inline]
pub fn bump(r2: f64) -> f64 {
    if r2 >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - r2)).exp()
    }
}

/// Nodal velocity `v^ε = (−k ∇φ/|∇φ| 1_Ω) ∗ β_ε` and its divergence at
/// every time slice where either input changes.
#[derive(Clone, Debug)]
pub struct MollifiedVelocity {
    grid: Grid,
    time: TimeGrid,
    vx: Slices,
    vy: Slices,
    div: Slices,
    epsilon: f64,
}

/// Optimal feedback velocity `−k ∇φ/|∇φ|` from interpolated central
/// gradients, zero where the gradient vanishes.
#[inline]
pub fn feedback_velocity(vg: &ValueGrid, field: &SpeedField, t: f64, x: Point) -> Point {
    let p = vg.gradient_central(t, x);
    let n = norm(p);
    if n < 1e-12 {
        return [0.0, 0.0];
    }
    let k = field.speed(t, x);
    [-k * p[0] / n, -k * p[1] / n]
}

pub fn mollified_velocity(
    vg: &ValueGrid,
    field: &SpeedField,
    dom: &SignedDomain,
    epsilon: f64,
) -> Result<MollifiedVelocity> {
    let limit = 0.5 * dom.tube();
    if !(epsilon > 0.0) || epsilon > limit {
        return Err(Error::EpsilonTooLarge { epsilon, limit });
    }
    let grid = vg.grid().clone();
    if grid != *field.grid() {
        return Err(Error::GridMismatch("value grid and speed field differ".into()));
    }
    let n = grid.len();
    let dim = grid.dim;
    let mut total = 0.0;
    for (ox, oy) in offsets(&grid, epsilon) {
        total += bump((ox * ox + oy * oy) / (epsilon * epsilon));
    }
    let conv = Convolver::from_kernel(&grid, |x| {
        let r2 = (x[0] * x[0] + x[1] * x[1]) / (epsilon * epsilon);
        if total > 0.0 {
            bump(r2) / total
        } else if r2 == 0.0 {
            1.0
        } else {
            0.0
        }
    });
    let stored = vg
        .slices()
        .stored()
        .max(field.varying_slices())
        .min(vg.time().n);
    let interior = vg.interior();
    let mut vx = Slices::new(n);
    let mut vy = Slices::new(n);
    let mut div = Slices::new(n);
    for i in 0..stored {
        let phi = vg.slice(i);
        let k = field.slice(i);
        let raw: Vec<Point> = (0..n)
            .into_par_iter()
            .map(|m| {
                if !interior[m] {
                    return [0.0, 0.0];
                }
                let p = grid.node_gradient(phi, m);
                let pn = norm(if dim == 1 { [p[0], 0.0] } else { p });
                if pn < 1e-12 {
                    [0.0, 0.0]
                } else {
                    [-k[m] * p[0] / pn, if dim == 2 { -k[m] * p[1] / pn } else { 0.0 }]
                }
            })
            .collect();
        let cx = conv.convolve(&raw.iter().map(|v| v[0]).collect::<Vec<_>>());
        let cy = if dim == 2 {
            conv.convolve(&raw.iter().map(|v| v[1]).collect::<Vec<_>>())
        } else {
            vec![0.0; n]
        };
        let d: Vec<f64> = (0..n)
            .map(|m| {
                let gx = grid.node_gradient(&cx, m)[0];
                let gy = if dim == 2 { grid.node_gradient(&cy, m)[1] } else { 0.0 };
                gx + gy
            })
            .collect();
        vx.push(&cx);
        vy.push(&cy);
        div.push(&d);
    }
    Ok(MollifiedVelocity {
        grid,
        time: *vg.time(),
        vx,
        vy,
        div,
        epsilon,
    })
}

fn offsets(grid: &Grid, epsilon: f64) -> Vec<(f64, f64)> {
    let r = (epsilon / grid.h).ceil() as isize;
    let ry = if grid.dim == 2 { r } else { 0 };
    let mut out = Vec::new();
    for j in -ry..=ry {
        for i in -r..=r {
            out.push((i as f64 * grid.h, j as f64 * grid.h));
        }
    }
    out
}

impl MollifiedVelocity {
    /// Tabulates a given velocity without mollification.
    pub fn from_fn(grid: Grid, time: TimeGrid, v: impl Fn(f64, Point) -> Point) -> Self {
        let n = grid.len();
        let (mut vx, mut vy, mut div) = (Slices::new(n), Slices::new(n), Slices::new(n));
        for i in 0..time.n {
            let t = time.time(i);
            let vals: Vec<Point> = (0..n).map(|m| v(t, grid.node(m))).collect();
            let cx: Vec<f64> = vals.iter().map(|p| p[0]).collect();
            let cy: Vec<f64> = vals.iter().map(|p| p[1]).collect();
            let d: Vec<f64> = (0..n)
                .map(|m| {
                    grid.node_gradient(&cx, m)[0]
                        + if grid.dim == 2 { grid.node_gradient(&cy, m)[1] } else { 0.0 }
                })
                .collect();
            vx.push(&cx);
            vy.push(&cy);
            div.push(&d);
        }
        vx.compress_tail();
        vy.compress_tail();
        div.compress_tail();
        MollifiedVelocity {
            grid,
            time,
            vx,
            vy,
            div,
            epsilon: 0.0,
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    #[inline]
    pub fn velocity(&self, t: f64, x: Point) -> Point {
        let a = self.vx.at_time(&self.time, t, |v| self.grid.interpolate(v, x));
        let b = if self.grid.dim == 2 {
            self.vy.at_time(&self.time, t, |v| self.grid.interpolate(v, x))
        } else {
            0.0
        };
        [a, b]
    }

    #[inline]
    pub fn divergence(&self, t: f64, x: Point) -> f64 {
        self.div.at_time(&self.time, t, |v| self.grid.interpolate(v, x))
    }

    /// `−min ∇·v^ε` over nodes at depth at least `depth` inside `dom`,
    /// clamped at zero.
    pub fn divergence_envelope(&self, dom: &SignedDomain, depth: f64) -> f64 {
        let n = self.grid.len();
        let deep: Vec<bool> = (0..n)
            .map(|m| dom.signed_distance(self.grid.node(m)) <= -depth)
            .collect();
        let mut lo = 0.0f64;
        for i in 0..self.div.stored() {
            let d = self.div.get(i);
            for m in 0..n {
                if deep[m] {
                    lo = lo.min(d[m]);
                }
            }
        }
        -lo
    }
}

/// Starting state of one flow particle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowParticle {
    pub x: Point,
    pub weight: f64,
    /// `ρ₀` at the starting point.
    pub rho0: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowReport {
    pub times: Vec<f64>,
    pub exponents: Vec<f64>,
    /// `‖ρ_t‖_p` per exponent and time, from `ρ₀/J` at the particles.
    pub lp: Vec<Vec<f64>>,
    pub initial_lp: Vec<f64>,
    pub interior_mass: Vec<f64>,
    pub min_log_jacobian: Vec<f64>,
    /// `−min ∇·v^ε` over particle positions, clamped at zero.
    pub c_div_particles: f64,
    /// Steps taken inside the ε-tube that did not move away from the
    /// interior.
    pub inward_violations: usize,
    pub tube_steps: usize,
}

impl FlowReport {
    /// `sup_t ‖ρ_t‖_p / ‖ρ₀‖_p` for exponent index `e`.
    pub fn sup_ratio(&self, e: usize) -> f64 {
        let sup = self.lp[e].iter().cloned().fold(0.0, f64::max);
        sup / self.initial_lp[e]
    }
}

struct FlowAcc {
    sums: Vec<Vec<f64>>,
    mass: Vec<f64>,
    min_log_j: Vec<f64>,
    min_div: f64,
    violations: usize,
    tube_steps: usize,
}

impl FlowAcc {
    fn new(nt: usize, np: usize) -> Self {
        FlowAcc {
            sums: vec![vec![0.0; nt]; np],
            mass: vec![0.0; nt],
            min_log_j: vec![0.0; nt],
            min_div: 0.0,
            violations: 0,
            tube_steps: 0,
        }
    }

    fn merge(mut self, other: FlowAcc, exponents: &[f64]) -> FlowAcc {
        for (e, p) in exponents.iter().enumerate() {
            for (a, b) in self.sums[e].iter_mut().zip(&other.sums[e]) {
                *a = if p.is_infinite() { a.max(*b) } else { *a + b };
            }
        }
        for (a, b) in self.mass.iter_mut().zip(&other.mass) {
            *a += b;
        }
        for (a, b) in self.min_log_j.iter_mut().zip(&other.min_log_j) {
            *a = a.min(*b);
        }
        self.min_div = self.min_div.min(other.min_div);
        self.violations += other.violations;
        self.tube_steps += other.tube_steps;
        self
    }
}

/// Integrates `X′ = v^ε(t, X)` and `(log J)′ = ∇·v^ε(t, X)` with the
/// explicit midpoint rule until each particle leaves `dom`, accumulating
/// Lagrangian `L^p` norms of `ρ^ε_t = ρ₀/J` at the grid times.
pub fn flow_with_jacobian(
    mv: &MollifiedVelocity,
    dom: &SignedDomain,
    particles: &[FlowParticle],
    exponents: &[f64],
) -> Result<FlowReport> {
    for &p in exponents {
        if !(p > 1.0) {
            return Err(Error::BadExponent(p));
        }
    }
    let time = mv.time;
    let nt = time.n;
    let np = exponents.len();
    let dt = 0.5 * time.dt;
    let band = mv.epsilon;
    let acc = particles
        .par_iter()
        .try_fold(
            || FlowAcc::new(nt, np),
            |mut acc, part| -> Result<FlowAcc> {
                let (mut x, mut lj) = (part.x, 0.0f64);
                let mut alive = dom.signed_distance(x) < 0.0;
                for j in 0..nt {
                    if !alive {
                        break;
                    }
                    let dens = part.rho0 * (-lj).exp();
                    acc.mass[j] += part.weight;
                    acc.min_log_j[j] = acc.min_log_j[j].min(lj);
                    for (e, &p) in exponents.iter().enumerate() {
                        if p.is_infinite() {
                            acc.sums[e][j] = acc.sums[e][j].max(dens);
                        } else {
                            acc.sums[e][j] += part.weight * dens.powf(p - 1.0);
                        }
                    }
                    if j + 1 == nt {
                        break;
                    }
                    for sub in 0..2 {
                        let t = time.time(j) + sub as f64 * dt;
                        let v1 = mv.velocity(t, x);
                        let d1 = mv.divergence(t, x);
                        let xm = axpy(x, 0.5 * dt, v1);
                        let v2 = mv.velocity(t + 0.5 * dt, xm);
                        let d2 = mv.divergence(t + 0.5 * dt, xm);
                        acc.min_div = acc.min_div.min(d1).min(d2);
                        let xn = axpy(x, dt, v2);
                        lj += dt * d2;
                        let (d_old, d_new) = (dom.signed_distance(x), dom.signed_distance(xn));
                        if band > 0.0 && d_old >= -band {
                            acc.tube_steps += 1;
                            if d_new <= d_old && dot(v2, v2) > 0.0 {
                                acc.violations += 1;
                            }
                        }
                        x = xn;
                        if lj.abs() > 50.0 {
                            return Err(Error::JacobianBlowup {
                                log_jacobian: lj,
                                t: t + dt,
                            });
                        }
                        if d_new >= 0.0 {
                            alive = false;
                            break;
                        }
                    }
                }
                Ok(acc)
            },
        )
        .try_reduce(|| FlowAcc::new(nt, np), |a, b| Ok(a.merge(b, exponents)))?;
    let finish = |e: usize, s: f64| {
        let p = exponents[e];
        if p.is_infinite() {
            s
        } else {
            s.powf(1.0 / p)
        }
    };
    let lp: Vec<Vec<f64>> = (0..np)
        .map(|e| acc.sums[e].iter().map(|&s| finish(e, s)).collect())
        .collect();
    let initial_lp = lp.iter().map(|v| v[0]).collect();
    Ok(FlowReport {
        times: (0..nt).map(|j| time.time(j)).collect(),
        exponents: exponents.to_vec(),
        lp,
        initial_lp,
        interior_mass: acc.mass,
        min_log_jacobian: acc.min_log_j,
        c_div_particles: (-acc.min_div).max(0.0),
        inward_violations: acc.violations,
        tube_steps: acc.tube_steps,
    })
}

/// Smooth test function `θ(t) b(x)` with `b` a tensor bump.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub center: Point,
    pub scale: f64,
    pub t_end: f64,
}

fn bump1(r: f64) -> (f64, f64) {
    if r.abs() >= 1.0 {
        return (0.0, 0.0);
    }
    let q = 1.0 - r * r;
    let v = (-1.0 / q).exp();
    (v, v * (-2.0 * r / (q * q)))
}

impl TestFunction {
    /// `(b, ∇b)` at `x`.
    #[inline]
    pub fn space(&self, dim: usize, x: Point) -> (f64, Point) {
        let (a, da) = bump1((x[0] - self.center[0]) / self.scale);
        if dim == 1 {
            return (a, [da / self.scale, 0.0]);
        }
        let (b, db) = bump1((x[1] - self.center[1]) / self.scale);
        (a * b, [da * b / self.scale, a * db / self.scale])
    }

    /// `(θ, θ′)` at `t`, a bump on `(0, t_end)`.
    #[inline]
    pub fn time(&self, t: f64) -> (f64, f64) {
        let r = 2.0 * t / self.t_end - 1.0;
        let (v, dv) = bump1(r);
        (v, dv * 2.0 / self.t_end)
    }
}

/// Tensor bumps at three scales and nine centres, kept only when their
/// support lies inside `dom`.
pub fn test_dictionary(dom: &SignedDomain, t_end: f64) -> Vec<TestFunction> {
    let r = dom.inradius();
    let c = dom.center();
    let dim = dom.dim();
    let mut out = Vec::new();
    for s in [0.5 * r, 0.25 * r, 0.125 * r] {
        let centers: Vec<Point> = if dim == 1 {
            (0..9)
                .map(|i| [c[0] + r * (-0.8 + 0.2 * i as f64), 0.0])
                .collect()
        } else {
            let mut v = Vec::new();
            for j in -1..=1 {
                for i in -1..=1 {
                    v.push([c[0] + 0.5 * r * i as f64, c[1] + 0.5 * r * j as f64]);
                }
            }
            v
        };
        for center in centers {
            if dom.signed_distance(center) + s * (dim as f64).sqrt() < 0.0 {
                out.push(TestFunction {
                    center,
                    scale: s,
                    t_end,
                });
            }
        }
    }
    out
}

/// Largest `|∫∫ (∂ₜϑ ρ + ∇ϑ·v ρ) dx dt|` over the dictionary, trapezoidal
/// in time and midpoint in space.
pub fn continuity_residual(
    path: &DensityPath,
    velocity: impl Fn(f64, Point) -> Point + Sync,
    tests: &[TestFunction],
) -> f64 {
    let grid = path.grid();
    let time = path.time();
    let vol = grid.cell_volume();
    let dim = grid.dim;
    let n = grid.len();
    let nt = time.n;
    let mut acc = vec![0.0; tests.len()];
    for i in 0..nt {
        let t = time.time(i);
        let w = if i == 0 || i + 1 == nt { 0.5 } else { 1.0 } * time.dt;
        let rho = path.density(i);
        let contrib: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .filter(|&m| rho[m] != 0.0)
            .map(|m| {
                let x = grid.node(m);
                let v = velocity(t, x);
                tests
                    .iter()
                    .map(|f| {
                        let (th, dth) = f.time(t);
                        if th == 0.0 && dth == 0.0 {
                            return 0.0;
                        }
                        let (b, db) = f.space(dim, x);
                        rho[m] * vol * (dth * b + th * dot(db, v))
                    })
                    .collect()
            })
            .collect();
        for c in contrib {
            for (a, v) in acc.iter_mut().zip(c) {
                *a += w * v;
            }
        }
    }
    acc.into_iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight_measure(time: TimeGrid, starts: &[f64], speed: f64) -> LagrangianMeasure {
        let w = 1.0 / starts.len() as f64;
        let paths = starts
            .iter()
            .map(|&x0| {
                let tau = x0 / speed;
                let samples = (0..time.n)
                    .map(|j| time.time(j))
                    .take_while(|&t| t < tau)
                    .map(|t| [(x0 - speed * t) as f32, 0.0])
                    .collect();
                ParticlePath {
                    start: [x0, 0.0],
                    weight: w,
                    samples,
                    exit: Exit { tau, point: [0.0, 0.0] },
                    cost: tau,
                    tube_min: None,
                    perturbed: false,
                }
            })
            .collect();
        LagrangianMeasure { time, paths }
    }

    #[test]
    fn translation_moves_a_uniform_block() {
        let n = 60_000;
        let starts: Vec<f64> = (0..n).map(|i| 0.2 + 0.6 * (i as f64 + 0.5) / n as f64).collect();
        let time = TimeGrid::covering(1.0, 0.05);
        let eta = straight_measure(time, &starts, 1.0);
        let grid = Grid::covering(1, [0.0, 0.0], [1.0, 0.0], 0.01, 2);
        let dom = SignedDomain::interval(0.0, 1.0).unwrap();
        let (rho, out) = push_forward_at(&eta, 0.1, &grid);
        assert_eq!(out, 0.0);
        for k in 0..grid.len() {
            let x = grid.node(k)[0];
            if x > 0.11 && x < 0.69 {
                assert!((rho[k] - 1.0 / 0.6).abs() < 0.02, "x={x} rho={}", rho[k]);
            } else if !(0.09..=0.71).contains(&x) {
                assert_eq!(rho[k], 0.0);
            }
        }
        let r0 = eta.initial_histogram(&grid);
        let linf0 = lp_norm_interior(&grid, &dom, &r0, f64::INFINITY).unwrap();
        let linf1 = lp_norm_interior(&grid, &dom, &rho, f64::INFINITY).unwrap();
        assert!((linf0 - linf1).abs() < 0.05);
        let path = push_forward(&eta, &grid);
        for i in 0..time.n {
            assert!((path.interior_mass(i) + path.exited_mass(i) - 1.0).abs() < 1e-9);
            if i > 0 {
                assert!(path.interior_mass(i) <= path.interior_mass(i - 1) + 1e-15);
            }
        }
        assert_eq!(path.interior_mass(time.n - 1), 0.0);
    }

    #[test]
    fn norm_examples() {
        assert!((lp_norm(&[2.0, 0.0], 0.5, 2.0).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(matches!(lp_norm(&[1.0], 1.0, 1.0), Err(Error::BadExponent(_))));
        let grid = Grid::covering(2, [0.0, 0.0], [1.0, 1.0], 0.05, 0);
        let dom = SignedDomain::rounded_rect([0.5, 0.5], [0.5, 0.5], Some(1e-9)).unwrap();
        // cell-centred interior density of a unit square
        let inner = Grid { dim: 2, n: [20, 20], origin: [0.025, 0.025], h: 0.05 };
        let rho = vec![1.0; inner.len()];
        assert!((lp_norm_interior(&inner, &dom, &rho, 2.0).unwrap() - 1.0).abs() < 1e-12);
        let disk = SignedDomain::unit_ball();
        let g = Grid::covering(2, [-1.0, -1.0], [1.0, 1.0], 0.05, 2);
        let r: Vec<f64> = (0..g.len())
            .map(|k| if disk.contains(g.node(k)) { 1.0 / std::f64::consts::PI } else { 0.0 })
            .collect();
        let linf = lp_norm_interior(&g, &disk, &r, f64::INFINITY).unwrap();
        assert!((linf - 1.0 / std::f64::consts::PI).abs() < 1e-15);
        let _ = grid;
    }

    #[test]
    fn linear_expansion_jacobian() {
        let grid = Grid::covering(1, [-8.0, 0.0], [8.0, 0.0], 0.01, 2);
        let time = TimeGrid::covering(1.0, 0.01);
        let mv = MollifiedVelocity::from_fn(grid, time, |_, x| [x[0], 0.0]);
        let dom = SignedDomain::interval(-10.0, 10.0).unwrap();
        let parts: Vec<FlowParticle> = (0..100)
            .map(|i| FlowParticle {
                x: [-0.5 + (i as f64 + 0.5) / 100.0, 0.0],
                weight: 0.01,
                rho0: 1.0,
            })
            .collect();
        let rep = flow_with_jacobian(&mv, &dom, &parts, &[2.0, f64::INFINITY]).unwrap();
        let last = rep.times.len() - 1;
        // ρ_t = e^{−t} on an interval of length e^t
        assert!((rep.lp[1][last] - (-1.0f64).exp()).abs() < 1e-4);
        let expect2 = ((-1.0f64).exp()).sqrt();
        assert!((rep.lp[0][last] - expect2).abs() < 1e-4);
        assert!(rep.sup_ratio(1) <= 1.0 + 1e-12);
    }

    #[test]
    fn constant_velocity_mollifies_to_itself_and_keeps_jacobian_one() {
        let grid = Grid::covering(1, [-3.0, 0.0], [3.0, 0.0], 0.01, 2);
        let time = TimeGrid::covering(0.5, 0.01);
        let mv = MollifiedVelocity::from_fn(grid, time, |_, _| [0.5, 0.0]);
        let dom = SignedDomain::interval(-2.0, 2.0).unwrap();
        let parts = [FlowParticle { x: [0.0, 0.0], weight: 1.0, rho0: 1.0 }];
        let rep = flow_with_jacobian(&mv, &dom, &parts, &[2.0]).unwrap();
        assert!(rep.min_log_jacobian.iter().all(|&l| l.abs() < 1e-12));
    }

    #[test]
    fn stationary_density_has_zero_residual() {
        let dom = SignedDomain::unit_ball();
        let grid = Grid::covering(2, [-1.0, -1.0], [1.0, 1.0], 0.1, 2);
        let time = TimeGrid::covering(1.0, 0.05);
        let rho: Vec<f64> = (0..grid.len())
            .map(|k| if dom.contains(grid.node(k)) { 0.3 } else { 0.0 })
            .collect();
        let path = DensityPath::constant(grid, time, &dom, rho);
        let tests = test_dictionary(&dom, time.end());
        assert!(!tests.is_empty());
        let r = continuity_residual(&path, |_, _| [0.0, 0.0], &tests);
        assert!(r < 1e-12, "{r}");
    }

    #[test]
    fn mollifier_bump_is_normalised_and_smooth() {
        assert_eq!(bump(1.0), 0.0);
        assert!(bump(0.25) > 0.0);
        let (_, d) = bump1(0.999_999);
        assert!(d.abs() < 1e-100);
    }
}
