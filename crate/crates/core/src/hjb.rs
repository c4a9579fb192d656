//! Value function of the exit-time problem on a space-time grid.
//!
//! The solver works backward in time. Once the speed field stops changing
//! the value function is stationary and solves the eikonal equation
//! `k |∇φ| = 1`, which is handled by fast sweeping. Earlier slices come from
//! the semi-Lagrangian dynamic programming update
//! `φ(tᵢ, x) = min_u { Δt + φ(tᵢ₊₁, x + Δt k(tᵢ, x) u) }`, where a foot that
//! leaves the domain pays the fraction of `Δt` spent inside plus `g` at the
//! crossing point.
//!
//! Nodes on or outside `∂Ω` carry the linear extension `g(z) − μ d±` of the
//! boundary data, with `μ` the normal slope that makes `|∇φ| = 1/k` there.
//! This lets multilinear interpolation straddle the boundary.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::SpeedField;
use crate::error::{Error, Result};
use crate::geometry::{BoundaryCost, SignedDomain};
use crate::grid::{axpy, dot, norm, Grid, Point, Slices, TimeGrid};

/// Uniform exit-time bound for an agent at distance `distance` from `∂Ω`.
pub fn exit_time_bound(k_min: f64, k_max: f64, lipschitz: f64, distance: f64) -> f64 {
    let lk = lipschitz * k_max;
    (1.0 + lk) / (1.0 - lk) * distance / k_min
}

/// Horizon by which every optimal trajectory started at `t = 0` has exited.
pub fn terminal_horizon(field: &SpeedField, dom: &SignedDomain, g: &BoundaryCost) -> Result<f64> {
    let c = field.constants();
    horizon_from_bounds(c.k_min, c.k_max, dom, g)
}

pub fn horizon_from_bounds(
    k_min: f64,
    k_max: f64,
    dom: &SignedDomain,
    g: &BoundaryCost,
) -> Result<f64> {
    g.check_against(dom, k_max)?;
    Ok(exit_time_bound(k_min, k_max, g.lipschitz(dom), dom.inradius()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverParams {
    /// Number of equally spaced unit controls in 2D.
    pub directions: usize,
    pub sweep_tol: f64,
    pub max_sweeps: usize,
    /// Two minimising controls closer than this in value mark a ridge node.
    pub ridge_tol: f64,
    pub crossing_bisections: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            directions: 16,
            sweep_tol: 1e-10,
            max_sweeps: 500,
            ridge_tol: 1e-9,
            crossing_bisections: 6,
        }
    }
}

/// `φ(tᵢ, xⱼ)` with its boundary mask and ridge flags.
#[derive(Clone, Debug)]
pub struct ValueGrid {
    grid: Grid,
    time: TimeGrid,
    values: Slices,
    /// Nodes with `d± < 0`.
    interior: Vec<bool>,
    /// Ridge flags, one byte per node for every stored slice.
    ridge: Vec<u8>,
    t_max: f64,
    field_hash: String,
    k_max: f64,
    lipschitz: f64,
    min_time_quotient: f64,
    grad_floor: f64,
}

const BOUNDARY_EPS: f64 = 1e-12;

fn interior_mask(grid: &Grid, dom: &SignedDomain) -> Vec<bool> {
    (0..grid.len())
        .map(|k| dom.signed_distance(grid.node(k)) < -BOUNDARY_EPS)
        .collect()
}

/// Extension of the boundary data to a node on or outside `∂Ω`.
fn ghost_value(dom: &SignedDomain, g: &BoundaryCost, x: Point, k: f64) -> f64 {
    let d = dom.signed_distance(x);
    let z = dom.project(x);
    let gt = norm(g.gradient_at(dom, z));
    let mu = (1.0 / (k * k) - gt * gt).max(0.0).sqrt();
    g.value_at(dom, z) - mu * d.max(0.0)
}

fn unit_controls(dim: usize, count: usize) -> Vec<Point> {
    if dim == 1 {
        return vec![[1.0, 0.0], [-1.0, 0.0]];
    }
    (0..count)
        .map(|m| {
            let a = std::f64::consts::TAU * m as f64 / count as f64;
            [a.cos(), a.sin()]
        })
        .collect()
}

/// Godunov upwind gradient at a node: along each axis, the one-sided
/// difference toward the smaller neighbour, or zero at a local minimum.
pub fn upwind_gradient(grid: &Grid, values: &[f64], idx: usize) -> Point {
    let mut p = [0.0; 2];
    let central = grid.node_gradient(values, idx);
    for a in 0..grid.dim {
        p[a] = match grid.one_sided(values, idx, a) {
            Some((back, fwd)) => {
                let b = back.max(0.0);
                let f = (-fwd).max(0.0);
                if b == 0.0 && f == 0.0 {
                    0.0
                } else if b >= f {
                    back
                } else {
                    fwd
                }
            }
            None => central[a],
        };
    }
    p
}

struct Stepper<'a> {
    grid: &'a Grid,
    dom: &'a SignedDomain,
    g: &'a BoundaryCost,
    controls: Vec<Point>,
    params: &'a SolverParams,
}

impl Stepper<'_> {
    /// Cost of leaving `x` along `u` for one step of length `dt` and speed
    /// `k`, given the next slice.
    #[inline]
    fn candidate(&self, next: &[f64], x: Point, u: Point, dt: f64, k: f64) -> f64 {
        let y = axpy(x, dt * k, u);
        let dy = self.dom.signed_distance(y);
        if dy < 0.0 {
            return dt + self.grid.interpolate(next, y);
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let (mut d_lo, mut d_hi) = (self.dom.signed_distance(x), dy);
        for _ in 0..self.params.crossing_bisections {
            let mid = 0.5 * (lo + hi);
            let dm = self.dom.signed_distance(axpy(x, mid * dt * k, u));
            if dm < 0.0 {
                lo = mid;
                d_lo = dm;
            } else {
                hi = mid;
                d_hi = dm;
            }
        }
        let s = if d_hi > d_lo {
            lo + (hi - lo) * (-d_lo) / (d_hi - d_lo)
        } else {
            hi
        };
        let z = self.dom.project(axpy(x, s * dt * k, u));
        s * dt + self.g.value_at(self.dom, z)
    }

    /// Semi-Lagrangian update at an interior node; returns the value and
    /// whether the minimiser is ambiguous.
    fn update(&self, next: &[f64], idx: usize, dt: f64, k: f64) -> (f64, bool) {
        let x = self.grid.node(idx);
        let mut best = (f64::INFINITY, [0.0; 2]);
        let mut second = (f64::INFINITY, [0.0; 2]);
        fn consider(best: &mut (f64, Point), second: &mut (f64, Point), v: f64, u: Point) {
            if v < best.0 {
                *second = *best;
                *best = (v, u);
            } else if v < second.0 {
                *second = (v, u);
            }
        }
        for &u in &self.controls {
            consider(&mut best, &mut second, self.candidate(next, x, u, dt, k), u);
        }
        let p = upwind_gradient(self.grid, next, idx);
        let pn = norm(p);
        if pn > 0.0 {
            let u = [-p[0] / pn, -p[1] / pn];
            let v = self.candidate(next, x, u, dt, k);
            // only an improvement counts, so an exact repeat of a grid
            // direction does not read as a tie
            if v < best.0 - self.params.ridge_tol {
                consider(&mut best, &mut second, v, u);
            } else if v < best.0 {
                best.0 = v;
            }
        }
        let ridge =
            (second.0 - best.0).abs() <= self.params.ridge_tol && dot(best.1, second.1) < 0.0;
        (best.0, ridge)
    }
}

/// Godunov update for `k |∇φ| = 1` at one node.
#[inline]
fn eikonal_update(grid: &Grid, phi: &[f64], idx: usize, k: f64) -> f64 {
    let (i, j) = grid.coords(idx);
    let f = grid.h / k;
    let mut a = f64::INFINITY;
    if i > 0 {
        a = a.min(phi[idx - 1]);
    }
    if i + 1 < grid.n[0] {
        a = a.min(phi[idx + 1]);
    }
    if grid.dim == 1 {
        return a + f;
    }
    let nx = grid.n[0];
    let mut b = f64::INFINITY;
    if j > 0 {
        b = b.min(phi[idx - nx]);
    }
    if j + 1 < grid.n[1] {
        b = b.min(phi[idx + nx]);
    }
    if (a - b).abs() >= f {
        a.min(b) + f
    } else {
        0.5 * (a + b + (2.0 * f * f - (a - b) * (a - b)).sqrt())
    }
}

/// Fast sweeping for the stationary eikonal equation with fixed values on
/// the non-interior nodes.
fn fast_sweep(
    grid: &Grid,
    interior: &[bool],
    speed: &[f64],
    fixed: &[f64],
    params: &SolverParams,
) -> Result<Vec<f64>> {
    const FAR: f64 = 1e10;
    let mut phi: Vec<f64> = (0..grid.len())
        .map(|k| if interior[k] { FAR } else { fixed[k] })
        .collect();
    let (nx, ny) = (grid.n[0], grid.n[1]);
    let orders: &[(bool, bool)] = if grid.dim == 1 {
        &[(false, false), (true, false)]
    } else {
        &[(false, false), (true, false), (true, true), (false, true)]
    };
    let mut change = f64::INFINITY;
    let mut rounds = 0;
    while rounds < params.max_sweeps {
        rounds += 1;
        change = 0.0f64;
        for &(rev_x, rev_y) in orders {
            for jj in 0..ny {
                let j = if rev_y { ny - 1 - jj } else { jj };
                for ii in 0..nx {
                    let i = if rev_x { nx - 1 - ii } else { ii };
                    let idx = j * nx + i;
                    if !interior[idx] {
                        continue;
                    }
                    let cand = eikonal_update(grid, &phi, idx, speed[idx]);
                    if cand < phi[idx] {
                        let old = phi[idx];
                        phi[idx] = cand;
                        if old < FAR {
                            change = change.max(old - cand);
                        } else {
                            change = f64::INFINITY;
                        }
                    }
                }
            }
        }
        if change <= params.sweep_tol {
            return Ok(phi);
        }
    }
    Err(Error::NonConvergence {
        sweeps: rounds,
        change,
    })
}

/// Solves `−∂ₜφ + k |∇φ| − 1 = 0`, `φ = g` on `∂Ω`, on the grid of `field`.
pub fn solve_value_function(
    field: &SpeedField,
    dom: &SignedDomain,
    g: &BoundaryCost,
    params: &SolverParams,
) -> Result<ValueGrid> {
    let grid = field.grid().clone();
    let time = *field.time();
    if grid.dim != dom.dim() {
        return Err(Error::GridMismatch(format!(
            "speed field is {}-dimensional, domain is {}-dimensional",
            grid.dim,
            dom.dim()
        )));
    }
    let consts = *field.constants();
    g.validate(dom)?;
    let t_max = terminal_horizon(field, dom, g)?;
    if consts.k_max * time.dt > grid.h * (1.0 + 1e-12) {
        return Err(Error::CflViolation {
            step: consts.k_max * time.dt,
            h: grid.h,
        });
    }
    if time.end() < t_max {
        log::warn!(
            "time grid ends at {:.4} before the exit horizon {:.4}",
            time.end(),
            t_max
        );
    }
    let interior = interior_mask(&grid, dom);
    let n = grid.len();
    let stepper = Stepper {
        grid: &grid,
        dom,
        g,
        controls: unit_controls(grid.dim, params.directions),
        params,
    };
    let ghosts = |i: usize| -> Vec<f64> {
        let k = field.slice(i);
        (0..n)
            .map(|m| {
                if interior[m] {
                    0.0
                } else {
                    ghost_value(dom, g, grid.node(m), k[m])
                }
            })
            .collect()
    };

    let freeze = field.varying_slices().min(time.n) - 1;
    let mut slices = vec![Vec::new(); freeze + 1];
    let mut ridge = vec![Vec::new(); freeze + 1];

    let fixed = ghosts(freeze);
    let stationary = fast_sweep(&grid, &interior, field.slice(freeze), &fixed, params)?;
    let flags: Vec<u8> = (0..n)
        .into_par_iter()
        .map(|m| {
            interior[m]
                && stepper
                    .update(&stationary, m, time.dt, field.slice(freeze)[m])
                    .1
        })
        .map(u8::from)
        .collect();
    slices[freeze] = stationary;
    ridge[freeze] = flags;

    for i in (0..freeze).rev() {
        let fixed = ghosts(i);
        let k = field.slice(i);
        let next = &slices[i + 1];
        let (vals, flags): (Vec<f64>, Vec<u8>) = (0..n)
            .into_par_iter()
            .map(|m| {
                if interior[m] {
                    let (v, r) = stepper.update(next, m, time.dt, k[m]);
                    (v, u8::from(r))
                } else {
                    (fixed[m], 0)
                }
            })
            .unzip();
        slices[i] = vals;
        ridge[i] = flags;
    }

    let mut values = Slices::new(n);
    for s in &slices {
        values.push(s);
    }
    values.compress_tail();
    let stored = values.stored();
    let mut ridge_flat = Vec::with_capacity(stored * n);
    for r in ridge.iter().take(stored) {
        ridge_flat.extend_from_slice(r);
    }

    let mut vg = ValueGrid {
        grid,
        time,
        values,
        interior,
        ridge: ridge_flat,
        t_max,
        field_hash: field.hash(),
        k_max: consts.k_max,
        lipschitz: 0.0,
        min_time_quotient: 0.0,
        grad_floor: 0.0,
    };
    vg.finish();
    Ok(vg)
}

impl ValueGrid {
    /// Tabulates a known value function; ridge flags come from kinks only.
    pub fn from_fn(
        grid: Grid,
        time: TimeGrid,
        dom: &SignedDomain,
        k_max: f64,
        t_max: f64,
        f: impl Fn(f64, Point) -> f64 + Sync,
    ) -> Self {
        let n = grid.len();
        let mut values = Slices::new(n);
        for i in 0..time.n {
            let t = time.time(i);
            let s: Vec<f64> = (0..n).into_par_iter().map(|m| f(t, grid.node(m))).collect();
            values.push(&s);
        }
        values.compress_tail();
        let stored = values.stored();
        let mut vg = ValueGrid {
            interior: interior_mask(&grid, dom),
            ridge: vec![0; stored * n],
            grid,
            time,
            values,
            t_max,
            field_hash: String::new(),
            k_max,
            lipschitz: 0.0,
            min_time_quotient: 0.0,
            grad_floor: 0.0,
        };
        vg.finish();
        vg
    }

    /// Derived constants and kink flags.
    fn finish(&mut self) {
        let n = self.grid.len();
        let stored = self.values.stored();
        let mut q = 0.0f64;
        for i in 0..stored.saturating_sub(1) {
            let (a, b) = (self.values.get(i), self.values.get(i + 1));
            for m in 0..n {
                if self.interior[m] {
                    q = q.min((b[m] - a[m]) / self.time.dt);
                }
            }
        }
        self.min_time_quotient = q;
        self.grad_floor = (1.0 + q).max(0.0) / self.k_max;
        let kink = 0.5 * self.grad_floor;
        for i in 0..stored {
            let v = self.values.get(i);
            let flags: Vec<bool> = (0..n)
                .into_par_iter()
                .map(|m| self.interior[m] && is_kink(&self.grid, v, m, kink))
                .collect();
            for (m, f) in flags.into_iter().enumerate() {
                if f {
                    self.ridge[i * n + m] = 1;
                }
            }
        }
        let v0 = self.values.get(0);
        let mut lip = 0.0f64;
        for m in 0..n {
            if !self.interior[m] {
                continue;
            }
            for nb in self.grid.neighbors(m) {
                if self.interior[nb] {
                    lip = lip.max((v0[nb] - v0[m]).abs() / self.grid.h);
                }
            }
        }
        self.lipschitz = lip;
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn slices(&self) -> &Slices {
        &self.values
    }

    #[inline]
    pub fn slice(&self, i: usize) -> &[f64] {
        self.values.get(i)
    }

    pub fn interior(&self) -> &[bool] {
        &self.interior
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn field_hash(&self) -> &str {
        &self.field_hash
    }

    pub fn k_max(&self) -> f64 {
        self.k_max
    }

    /// Discrete Lipschitz constant of `φ(0, ·)` over interior neighbours.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// `min (φ(tᵢ₊₁, x) − φ(tᵢ, x)) / Δt` over interior nodes.
    pub fn min_time_quotient(&self) -> f64 {
        self.min_time_quotient
    }

    /// Certified lower bound `c / k_max` on `|∇φ|` off the ridge.
    pub fn grad_floor(&self) -> f64 {
        self.grad_floor
    }

    #[inline]
    pub fn is_ridge(&self, i: usize, idx: usize) -> bool {
        let i = i.min(self.values.stored() - 1);
        self.ridge[i * self.grid.len() + idx] != 0
    }

    /// Ridge flags of slice `i`.
    pub fn ridge_slice(&self, i: usize) -> &[u8] {
        let n = self.grid.len();
        let i = i.min(self.values.stored() - 1);
        &self.ridge[i * n..(i + 1) * n]
    }

    /// Whether a ridge node lies within `radius` grid cells of `x` at the
    /// slice nearest to `t`.
    pub fn near_ridge(&self, t: f64, x: Point, radius: usize) -> bool {
        let i = ((t / self.time.dt).round().max(0.0) as usize).min(self.time.n - 1);
        let Some(c) = self.grid.nearest(x) else {
            return false;
        };
        let (ci, cj) = self.grid.coords(c);
        let r = radius as isize;
        let ry = if self.grid.dim == 2 { r } else { 0 };
        for dj in -ry..=ry {
            for di in -r..=r {
                let (a, b) = (ci as isize + di, cj as isize + dj);
                if a < 0 || b < 0 || a >= self.grid.n[0] as isize || b >= self.grid.n[1] as isize {
                    continue;
                }
                if self.is_ridge(i, self.grid.index(a as usize, b as usize)) {
                    return true;
                }
            }
        }
        false
    }

    #[inline]
    pub fn value(&self, t: f64, x: Point) -> f64 {
        self.values
            .at_time(&self.time, t, |v| self.grid.interpolate(v, x))
    }

    /// Interpolated central-difference gradient.
    pub fn gradient_central(&self, t: f64, x: Point) -> Point {
        let (i0, i1, w) = self.time.bracket(t);
        let g0 = self.grid.interpolate_gradient(self.slice(i0), x);
        if w == 0.0 {
            return g0;
        }
        let g1 = self.grid.interpolate_gradient(self.slice(i1), x);
        [(1.0 - w) * g0[0] + w * g1[0], (1.0 - w) * g0[1] + w * g1[1]]
    }

    /// Upwind gradient at `(t, x)`, blended from the stencil nodes.
    pub fn value_gradient(&self, t: f64, x: Point) -> Result<Point> {
        let (i0, i1, w) = self.time.bracket(t);
        let (idx, wx) = self.grid.stencil(x);
        let corners = if self.grid.dim == 1 { 2 } else { 4 };
        let mut p = [0.0; 2];
        for (slice, wt) in [(i0, 1.0 - w), (i1, w)] {
            if wt == 0.0 {
                continue;
            }
            let v = self.slice(slice);
            for c in 0..corners {
                if wx[c] == 0.0 {
                    continue;
                }
                if self.is_ridge(slice, idx[c]) && wx[c] >= 0.25 {
                    return Err(Error::DegenerateGradient {
                        t,
                        x,
                        magnitude: 0.0,
                        floor: self.grad_floor,
                    });
                }
                let pc = upwind_gradient(&self.grid, v, idx[c]);
                p[0] += wt * wx[c] * pc[0];
                p[1] += wt * wx[c] * pc[1];
            }
        }
        let magnitude = norm(p);
        if magnitude < 0.5 * self.grad_floor {
            return Err(Error::DegenerateGradient {
                t,
                x,
                magnitude,
                floor: self.grad_floor,
            });
        }
        Ok(p)
    }

    /// Raw little-endian bytes of all stored slices, for hashing and export.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.values
            .raw()
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect()
    }
}

/// Concave kink along an axis: the one-sided slopes point away from each
/// other, both steeper than `threshold`.
fn is_kink(grid: &Grid, v: &[f64], idx: usize, threshold: f64) -> bool {
    (0..grid.dim).any(|a| match grid.one_sided(v, idx, a) {
        Some((back, fwd)) => back >= threshold && fwd <= -threshold,
        None => false,
    })
}

/// Pointwise HJ residual summary.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Residual {
    /// Per-node maximum over time of the residual; zero on excluded nodes.
    pub per_node: Vec<f64>,
    pub max: f64,
    pub argmax: Option<(f64, Point)>,
    pub nodes_checked: usize,
}

/// `|−Dₜφ + k |Dφ| − 1|` with forward time differences and upwind space
/// differences, over interior nodes whose neighbours are interior and which
/// stay more than `ridge_band` cells from a ridge node.
pub fn hj_residual(vg: &ValueGrid, field: &SpeedField, ridge_band: usize) -> Residual {
    let grid = &vg.grid;
    let n = grid.len();
    let stored = vg.values.stored().max(field.varying_slices()).min(vg.time.n);
    let eligible: Vec<bool> = (0..n)
        .map(|m| vg.interior[m] && grid.neighbors(m).all(|nb| vg.interior[nb]))
        .collect();
    let mut per_node = vec![0.0; n];
    let mut best = (0.0f64, None);
    let mut checked = 0;
    for i in 0..stored {
        let v = vg.slice(i);
        let next = vg.slice(i + 1);
        let k = field.slice(i);
        let t = vg.time.time(i);
        let res: Vec<Option<f64>> = (0..n)
            .into_par_iter()
            .map(|m| {
                if !eligible[m] || vg.near_ridge(t, grid.node(m), ridge_band) {
                    return None;
                }
                let dt = if i + 1 < vg.time.n {
                    (next[m] - v[m]) / vg.time.dt
                } else {
                    0.0
                };
                let p = upwind_gradient(grid, v, m);
                Some((-dt + k[m] * norm(p) - 1.0).abs())
            })
            .collect();
        for (m, r) in res.into_iter().enumerate() {
            if let Some(r) = r {
                checked += 1;
                if r > per_node[m] {
                    per_node[m] = r;
                }
                if r > best.0 {
                    best = (r, Some((t, grid.node(m))));
                }
            }
        }
    }
    Residual {
        per_node,
        max: best.0,
        argmax: best.1,
        nodes_checked: checked,
    }
}

/// HJ residual of a value function known in closed form, evaluated with
/// exact derivatives at the given space-time points.
pub fn hj_residual_analytic(
    field: &SpeedField,
    points: &[(f64, Point)],
    time_derivative: impl Fn(f64, Point) -> f64,
    gradient: impl Fn(f64, Point) -> Point,
) -> f64 {
    points
        .iter()
        .map(|&(t, x)| {
            (-time_derivative(t, x) + field.speed(t, x) * norm(gradient(t, x)) - 1.0).abs()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ball_field(h: f64, k: impl Fn(f64, Point) -> f64 + Sync, t_end: f64, k_max: f64) -> SpeedField {
        let grid = Grid::covering(2, [-1.0, -1.0], [1.0, 1.0], h, 2);
        SpeedField::from_fn(grid, TimeGrid::covering(t_end, 0.5 * h / k_max), k)
    }

    #[test]
    fn horizon_examples() {
        let dom = SignedDomain::unit_ball();
        let f1 = ball_field(0.25, |_, _| 1.0, 1.0, 1.0);
        let f2 = ball_field(0.25, |_, _| 2.0, 1.0, 2.0);
        assert!((terminal_horizon(&f1, &dom, &BoundaryCost::Zero).unwrap() - 1.0).abs() < 1e-12);
        assert!((terminal_horizon(&f2, &dom, &BoundaryCost::Zero).unwrap() - 0.5).abs() < 1e-12);
        let g = BoundaryCost::Cosine { amplitude: 2.0 / 3.0, direction: [1.0, 0.0] };
        assert!((terminal_horizon(&f1, &dom, &g).unwrap() - 2.0).abs() < 1e-12);
        let steep = BoundaryCost::Cosine { amplitude: 2.0, direction: [1.0, 0.0] };
        assert!(matches!(
            terminal_horizon(&f1, &dom, &steep),
            Err(Error::CostTooSteep { .. })
        ));
    }

    #[test]
    fn unit_speed_ball_gives_distance_to_boundary() {
        let dom = SignedDomain::unit_ball();
        let h = 1.0 / 32.0;
        let f = ball_field(h, |_, _| 1.0, 1.5, 1.0);
        let vg = solve_value_function(&f, &dom, &BoundaryCost::Zero, &SolverParams::default()).unwrap();
        let mut err = 0.0f64;
        for m in 0..vg.grid().len() {
            let x = vg.grid().node(m);
            if vg.interior()[m] {
                err = err.max((vg.slice(0)[m] - (1.0 - norm(x))).abs());
            } else if dom.signed_distance(x).abs() < 1e-12 {
                assert_eq!(vg.slice(0)[m], 0.0);
            }
        }
        assert!(err < 2.0 * h, "max error {err}");
        let p = vg.value_gradient(0.0, [0.5, 0.0]).unwrap();
        // one-sided differences across the level-set curvature: O(h)
        assert!((p[0] + 1.0).abs() < 2.0 * h && p[1].abs() < 2.0 * h, "{p:?}");
        assert!(matches!(
            vg.value_gradient(0.0, [0.0, 0.0]),
            Err(Error::DegenerateGradient { .. })
        ));
        assert_eq!(vg.min_time_quotient(), 0.0);
        assert!((vg.grad_floor() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn growing_speed_matches_radial_formula() {
        let dom = SignedDomain::unit_ball();
        let h = 1.0 / 32.0;
        let f = ball_field(h, |t, _| 1.0 + t / 2.0, 1.5, 1.75);
        let vg = solve_value_function(&f, &dom, &BoundaryCost::Zero, &SolverParams::default()).unwrap();
        let mut err = 0.0f64;
        for m in 0..vg.grid().len() {
            if vg.interior()[m] {
                let r = norm(vg.grid().node(m));
                let exact = 2.0 * ((2.0 - r).sqrt() - 1.0);
                err = err.max((vg.slice(0)[m] - exact).abs());
            }
        }
        assert!(err < 0.05, "max error {err}");
        assert!(vg.min_time_quotient() < 0.0 && vg.min_time_quotient() > -1.0);
    }

    #[test]
    fn two_exit_interval() {
        let dom = SignedDomain::interval(0.0, 1.0).unwrap();
        let h = 1.0 / 64.0;
        let grid = Grid::covering(1, [0.0, 0.0], [1.0, 0.0], h, 2);
        let f = SpeedField::constant(grid, TimeGrid::covering(1.5, h / 2.0), 1.0);
        let g = BoundaryCost::Endpoints { left: 0.0, right: 0.4 };
        let vg = solve_value_function(&f, &dom, &g, &SolverParams::default()).unwrap();
        assert!((vg.value(0.0, [0.55, 0.0]) - 0.55).abs() < 1e-9);
        let p = vg.value_gradient(0.0, [0.3, 0.0]).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-9);
        let r = hj_residual(&vg, &f, 1);
        assert!(r.max < 1e-9, "{}", r.max);
    }

    #[test]
    fn cfl_is_enforced() {
        let dom = SignedDomain::unit_ball();
        let grid = Grid::covering(2, [-1.0, -1.0], [1.0, 1.0], 0.1, 2);
        let f = SpeedField::constant(grid, TimeGrid::covering(1.0, 0.2), 1.0);
        assert!(matches!(
            solve_value_function(&f, &dom, &BoundaryCost::Zero, &SolverParams::default()),
            Err(Error::CflViolation { .. })
        ));
    }

    #[test]
    fn analytic_residual_of_cone_vanishes() {
        let grid = Grid::covering(2, [-1.0, -1.0], [1.0, 1.0], 0.1, 2);
        let f = SpeedField::constant(grid, TimeGrid::covering(1.0, 0.05), 1.0);
        let pts: Vec<(f64, Point)> = (0..50)
            .map(|i| {
                let a = i as f64 * 0.37;
                (0.0, [0.6 * a.cos() * (0.2 + (i % 5) as f64 * 0.15), 0.6 * a.sin()])
            })
            .filter(|(_, x)| norm(*x) > 1e-3)
            .collect();
        let r = hj_residual_analytic(&f, &pts, |_, _| 0.0, |_, x| {
            let n = norm(x);
            [-x[0] / n, -x[1] / n]
        });
        assert!(r < 1e-8);
    }
}
