//! Optimal trajectories, computed two ways: by following `−∇φ/|∇φ|` through
//! a solved value grid, and by integrating the Pontryagin state/control
//! system and shooting on the initial control until the exit direction
//! satisfies the boundary transversality condition.

use serde::{Deserialize, Serialize};

use crate::dynamics::SpeedField;
use crate::error::{Error, Result};
use crate::geometry::{BoundaryCost, SignedDomain};
use crate::grid::{axpy, dot, norm, normalized, scale, sub, Point};
use crate::hjb::{terminal_horizon, ValueGrid};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exit {
    /// Exit time measured from the start time.
    pub tau: f64,
    pub point: Point,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub t0: f64,
    pub x0: Point,
    pub times: Vec<f64>,
    pub positions: Vec<Point>,
    /// Control applied over the step starting at the matching sample; the
    /// last entry is the control at exit.
    pub controls: Vec<Point>,
    pub exit: Option<Exit>,
    /// Dual arc at the sample times, when produced by the Pontryagin system.
    pub dual: Option<Vec<Point>>,
    /// Start was moved off the ridge set before integrating.
    pub perturbed: bool,
    /// Largest deviation of `|u|` from 1 before renormalisation.
    pub control_drift: f64,
    /// Angle between the exit control and the transversality direction.
    pub mismatch: Option<f64>,
    /// The dual arc became tiny relative to its terminal value.
    pub dual_degenerate: bool,
}

impl Trajectory {
    pub fn tau(&self) -> Option<f64> {
        self.exit.map(|e| e.tau)
    }

    pub fn exit_point(&self) -> Option<Point> {
        self.exit.map(|e| e.point)
    }

    /// Position at absolute time `t`, frozen at the exit point afterwards.
    pub fn position_at(&self, t: f64) -> Point {
        if t <= self.t0 || self.times.is_empty() {
            return self.x0;
        }
        let k = self.times.partition_point(|&s| s <= t);
        if k >= self.times.len() {
            return *self.positions.last().unwrap_or(&self.x0);
        }
        let (t_a, t_b) = (self.times[k - 1], self.times[k]);
        let w = if t_b > t_a { (t - t_a) / (t_b - t_a) } else { 1.0 };
        let (a, b) = (self.positions[k - 1], self.positions[k]);
        [a[0] + w * (b[0] - a[0]), a[1] + w * (b[1] - a[1])]
    }

    /// Control at absolute time `t`; zero after exit.
    pub fn control_at(&self, t: f64) -> Point {
        if let Some(e) = self.exit {
            if t >= self.t0 + e.tau {
                return [0.0, 0.0];
            }
        }
        if self.controls.is_empty() {
            return [0.0, 0.0];
        }
        let k = self.times.partition_point(|&s| s <= t).max(1) - 1;
        self.controls[k.min(self.controls.len() - 1)]
    }
}

/// `J = τ + g(z)`.
pub fn trajectory_cost(traj: &Trajectory, dom: &SignedDomain, g: &BoundaryCost) -> Result<f64> {
    let e = traj.exit.ok_or(Error::NotExited)?;
    Ok(e.tau + g.value_at(dom, dom.project(e.point)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryOptions {
    pub exit_bisections: usize,
    /// Directions sampled before refining sign changes of the mismatch.
    pub shooting_samples: usize,
    pub shooting_refinements: usize,
    /// Largest accepted angle (radians) between exit control and target.
    pub shooting_tol: f64,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        TrajectoryOptions {
            exit_bisections: 40,
            shooting_samples: 64,
            shooting_refinements: 30,
            shooting_tol: 1e-3,
        }
    }
}

/// Callback receiving `(step, t, x, u)` for every step start.
pub trait StepSink {
    fn record(&mut self, step: usize, t: f64, x: Point, u: Point);
}

struct Collect<'a>(&'a mut Trajectory);

impl StepSink for Collect<'_> {
    fn record(&mut self, _step: usize, t: f64, x: Point, u: Point) {
        self.0.times.push(t);
        self.0.positions.push(x);
        self.0.controls.push(u);
    }
}

/// Fraction `s ∈ (0, 1]` of the segment `a → b` at which `d±` crosses zero.
fn crossing(dom: &SignedDomain, a: Point, b: Point, iterations: usize) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let step = sub(b, a);
    for _ in 0..iterations {
        let mid = 0.5 * (lo + hi);
        if dom.signed_distance(axpy(a, mid, step)) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

fn unit_direction(dim: usize, p: Point, floor: f64) -> Option<Point> {
    let mut p = p;
    if dim == 1 {
        p[1] = 0.0;
    }
    normalized(scale(p, -1.0), floor)
}

/// Follows `γ′ = −k ∇φ/|∇φ|` with the explicit midpoint rule at step `Δt/2`,
/// reporting the start of each step to `sink`. Returns the exit, which is
/// not reported as a step.
pub fn integrate_optimal_with(
    vg: &ValueGrid,
    field: &SpeedField,
    dom: &SignedDomain,
    x0: Point,
    t0: f64,
    opts: &TrajectoryOptions,
    sink: &mut impl StepSink,
) -> Result<Exit> {
    let dim = dom.dim();
    let d0 = dom.signed_distance(x0);
    if d0 >= 0.0 {
        return Ok(Exit {
            tau: 0.0,
            point: dom.project(x0),
        });
    }
    let floor = 0.5 * vg.grad_floor();
    let dt = 0.5 * vg.time().dt;
    let limit = 2.0 * vg.t_max();
    let mut u = unit_direction(dim, vg.gradient_central(t0, x0), floor)
        .ok_or(Error::DegenerateStart { t0, x0 })?;
    let dir = |t: f64, x: Point, prev: Point| -> Point {
        unit_direction(dim, vg.gradient_central(t, x), 1e-12).unwrap_or(prev)
    };
    let (mut t, mut x) = (t0, x0);
    let mut step = 0usize;
    loop {
        let u1 = dir(t, x, u);
        let xm = axpy(x, 0.5 * dt * field.speed(t, x), u1);
        let u2 = dir(t + 0.5 * dt, xm, u1);
        let xn = axpy(x, dt * field.speed(t + 0.5 * dt, xm), u2);
        u = u2;
        sink.record(step, t, x, u);
        step += 1;
        if dom.signed_distance(xn) >= 0.0 {
            let s = crossing(dom, x, xn, opts.exit_bisections);
            let z = dom.project(axpy(x, s, sub(xn, x)));
            return Ok(Exit {
                tau: t + s * dt - t0,
                point: z,
            });
        }
        t += dt;
        x = xn;
        if t - t0 > limit {
            return Err(Error::StallDetected { x0, horizon: limit });
        }
    }
}

pub fn integrate_optimal(
    vg: &ValueGrid,
    field: &SpeedField,
    dom: &SignedDomain,
    x0: Point,
    t0: f64,
    opts: &TrajectoryOptions,
) -> Result<Trajectory> {
    let mut traj = Trajectory {
        t0,
        x0,
        ..Default::default()
    };
    let exit = integrate_optimal_with(vg, field, dom, x0, t0, opts, &mut Collect(&mut traj))?;
    let u = traj.controls.last().copied().unwrap_or([0.0, 0.0]);
    traj.times.push(t0 + exit.tau);
    traj.positions.push(exit.point);
    traj.controls.push(u);
    traj.exit = Some(exit);
    Ok(traj)
}

/// Start offsets tried in turn when a start lies on the ridge set: steps of
/// `h/4`, `h/2` and `h` along both axes in both directions.
pub fn ridge_offsets(h: f64, dim: usize) -> Vec<Point> {
    let mut out = Vec::new();
    for s in [0.25 * h, 0.5 * h, h] {
        out.push([s, 0.0]);
        out.push([-s, 0.0]);
        if dim == 2 {
            out.push([0.0, s]);
            out.push([0.0, -s]);
        }
    }
    out
}

/// Runs `f` from `x0`, then from the [`ridge_offsets`] while it reports a
/// ridge start. Returns the result and whether the start was moved.
pub fn retry_off_ridge<T>(
    x0: Point,
    h: f64,
    dim: usize,
    mut f: impl FnMut(Point) -> Result<T>,
) -> Result<(T, bool)> {
    let mut err = match f(x0) {
        Err(e @ Error::DegenerateStart { .. }) => e,
        other => return other.map(|t| (t, false)),
    };
    for d in ridge_offsets(h, dim) {
        let x1 = [x0[0] + d[0], x0[1] + d[1]];
        match f(x1) {
            Err(e @ Error::DegenerateStart { .. }) => err = e,
            other => {
                log::debug!("ridge start {x0:?} moved to {x1:?}");
                return other.map(|t| (t, true));
            }
        }
    }
    Err(err)
}

/// `integrate_optimal`, moved off the ridge set by [`retry_off_ridge`] when
/// needed.
pub fn integrate_optimal_perturbed(
    vg: &ValueGrid,
    field: &SpeedField,
    dom: &SignedDomain,
    x0: Point,
    t0: f64,
    opts: &TrajectoryOptions,
) -> Result<Trajectory> {
    let (mut traj, moved) = retry_off_ridge(x0, vg.grid().h, dom.dim(), |x| {
        integrate_optimal(vg, field, dom, x, t0, opts)
    })?;
    traj.perturbed = moved;
    Ok(traj)
}

/// Positive root of `μ² − 2 b μ + |∇g|² − 1/k² = 0`, `b = ∇g·n`, so that
/// `k |∇g − μ n| = 1`. Safeguarded Newton on `[0, 1/k + |∇g|]`.
pub fn transversality_multiplier(k: f64, grad_g: Point, normal: Point) -> f64 {
    let b = dot(grad_g, normal);
    let c = dot(grad_g, grad_g) - 1.0 / (k * k);
    let q = |m: f64| m * m - 2.0 * b * m + c;
    let (mut lo, mut hi) = (0.0f64, 1.0 / k + norm(grad_g));
    let mut m = hi;
    for _ in 0..100 {
        let f = q(m);
        if f.abs() < 1e-15 {
            break;
        }
        if f > 0.0 {
            hi = m;
        } else {
            lo = m;
        }
        let d = 2.0 * m - 2.0 * b;
        let next = if d != 0.0 { m - f / d } else { f64::NAN };
        m = if next.is_finite() && next > lo && next < hi {
            next
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < 1e-15 {
            break;
        }
    }
    m
}

/// Unit control that the transversality condition prescribes at `z`.
pub fn transversal_direction(
    field: &SpeedField,
    dom: &SignedDomain,
    g: &BoundaryCost,
    t: f64,
    z: Point,
) -> (Point, f64) {
    let n = dom.distance_gradient(z);
    let grad_g = g.gradient_at(dom, z);
    let k = field.speed(t, z);
    let mu = transversality_multiplier(k, grad_g, n);
    let w = sub(scale(n, mu), grad_g);
    (normalized(w, 0.0).unwrap_or(n), mu)
}

/// Integrates `γ′ = k u`, `u′ = −∇k + (u·∇k) u` from `(t₀, x₀, u₀)` until
/// exit, then the dual arc `p′ = −∇k (u·p)` backward from
/// `p(T) = ∇g(z) − μ n(z)`.
pub fn integrate_pontryagin(
    field: &SpeedField,
    dom: &SignedDomain,
    g: &BoundaryCost,
    x0: Point,
    t0: f64,
    u0: Point,
    opts: &TrajectoryOptions,
) -> Result<Trajectory> {
    let limit = 2.0 * terminal_horizon(field, dom, g)?;
    let dt = 0.5 * field.time().dt;
    let dim = dom.dim();
    let proj = |v: Point| if dim == 1 { [v[0], 0.0] } else { v };
    let mut u = normalized(proj(u0), 0.0).ok_or(Error::DegenerateStart { t0, x0 })?;
    let rhs = |t: f64, x: Point, u: Point| -> (Point, Point) {
        let k = field.speed(t, x);
        let gk = proj(field.gradient(t, x));
        let du = axpy(scale(gk, -1.0), dot(u, gk), u);
        (scale(u, k), du)
    };
    let mut traj = Trajectory {
        t0,
        x0,
        ..Default::default()
    };
    if dom.signed_distance(x0) >= 0.0 {
        let z = dom.project(x0);
        traj.times.push(t0);
        traj.positions.push(z);
        traj.controls.push(u);
        traj.exit = Some(Exit { tau: 0.0, point: z });
    } else {
        let (mut t, mut x) = (t0, x0);
        loop {
            let (v1, a1) = rhs(t, x, u);
            let xm = axpy(x, 0.5 * dt, v1);
            let um = axpy(u, 0.5 * dt, a1);
            let (v2, a2) = rhs(t + 0.5 * dt, xm, um);
            let xn = axpy(x, dt, v2);
            let un = axpy(u, dt, a2);
            let len = norm(un);
            traj.control_drift = traj.control_drift.max((len - 1.0).abs());
            traj.times.push(t);
            traj.positions.push(x);
            traj.controls.push(u);
            let un = scale(un, 1.0 / len);
            if dom.signed_distance(xn) >= 0.0 {
                let s = crossing(dom, x, xn, opts.exit_bisections);
                let z = dom.project(axpy(x, s, sub(xn, x)));
                let u_exit = normalized(axpy(u, s, sub(un, u)), 0.0).unwrap_or(un);
                traj.times.push(t + s * dt);
                traj.positions.push(z);
                traj.controls.push(u_exit);
                traj.exit = Some(Exit {
                    tau: t + s * dt - t0,
                    point: z,
                });
                break;
            }
            t += dt;
            x = xn;
            u = un;
            if t - t0 > limit {
                return Err(Error::NoExit { x0, horizon: limit });
            }
        }
    }
    attach_dual(&mut traj, field, dom, g);
    Ok(traj)
}

fn attach_dual(traj: &mut Trajectory, field: &SpeedField, dom: &SignedDomain, g: &BoundaryCost) {
    let Some(exit) = traj.exit else { return };
    let dim = dom.dim();
    let proj = |v: Point| if dim == 1 { [v[0], 0.0] } else { v };
    let t_exit = traj.t0 + exit.tau;
    let n = dom.distance_gradient(exit.point);
    let grad_g = g.gradient_at(dom, exit.point);
    let mu = transversality_multiplier(field.speed(t_exit, exit.point), grad_g, n);
    let p_end = proj(sub(grad_g, scale(n, mu)));
    let m = traj.times.len();
    let mut p = vec![[0.0; 2]; m];
    p[m - 1] = p_end;
    let f = |i: usize, p: Point| -> Point {
        let gk = proj(field.gradient(traj.times[i], traj.positions[i]));
        scale(gk, -dot(traj.controls[i], p))
    };
    for i in (0..m - 1).rev() {
        let h = traj.times[i + 1] - traj.times[i];
        // Heun's method backward in time
        let k1 = f(i + 1, p[i + 1]);
        let pred = axpy(p[i + 1], -h, k1);
        let k2 = f(i, pred);
        p[i] = axpy(p[i + 1], -0.5 * h, [k1[0] + k2[0], k1[1] + k2[1]]);
    }
    let end = norm(p_end);
    traj.dual_degenerate = p.iter().any(|q| norm(*q) < 1e-6 * end);
    if traj.dual_degenerate {
        log::warn!("dual arc from {:?} nearly vanishes", traj.x0);
    }
    traj.dual = Some(p);
}

fn signed_angle(a: Point, b: Point) -> f64 {
    (a[0] * b[1] - a[1] * b[0]).atan2(dot(a, b))
}

/// Signed angle from the exit control to the transversal direction.
fn exit_mismatch(
    traj: &Trajectory,
    field: &SpeedField,
    dom: &SignedDomain,
    g: &BoundaryCost,
) -> f64 {
    let exit = traj.exit.expect("exited");
    let (w, _) = transversal_direction(field, dom, g, traj.t0 + exit.tau, exit.point);
    let u = *traj.controls.last().expect("samples");
    if dom.dim() == 1 {
        return if dot(u, w) > 0.0 { 0.0 } else { std::f64::consts::PI };
    }
    signed_angle(u, w)
}

/// Shooting on the initial control for the two-point problem closed by the
/// transversality condition; among all matching extremals the cheapest wins.
pub fn shooting_match(
    field: &SpeedField,
    dom: &SignedDomain,
    g: &BoundaryCost,
    x0: Point,
    t0: f64,
    opts: &TrajectoryOptions,
) -> Result<Trajectory> {
    let shoot = |theta: f64| -> Result<(Trajectory, f64)> {
        let u0 = [theta.cos(), theta.sin()];
        let traj = integrate_pontryagin(field, dom, g, x0, t0, u0, opts)?;
        let m = exit_mismatch(&traj, field, dom, g);
        Ok((traj, m))
    };
    let mut best: Option<(Trajectory, f64, f64)> = None;
    let mut best_mismatch = f64::INFINITY;
    let mut accept = |traj: Trajectory, m: f64| -> Result<()> {
        best_mismatch = best_mismatch.min(m.abs());
        if m.abs() <= opts.shooting_tol {
            let cost = trajectory_cost(&traj, dom, g)?;
            if best.as_ref().is_none_or(|b| cost < b.2) {
                best = Some((traj, m, cost));
            }
        }
        Ok(())
    };
    if dom.dim() == 1 {
        for theta in [0.0, std::f64::consts::PI] {
            let (traj, m) = shoot(theta)?;
            accept(traj, m)?;
        }
    } else {
        let count = opts.shooting_samples;
        let thetas: Vec<f64> = (0..count)
            .map(|i| std::f64::consts::TAU * i as f64 / count as f64)
            .collect();
        let mut samples = Vec::with_capacity(count);
        for &th in &thetas {
            samples.push(shoot(th)?.1);
        }
        let half_pi = std::f64::consts::FRAC_PI_2;
        for i in 0..count {
            let j = (i + 1) % count;
            let (ma, mb) = (samples[i], samples[j]);
            if ma.abs() > half_pi || mb.abs() > half_pi {
                continue;
            }
            if ma == 0.0 {
                let (traj, m) = shoot(thetas[i])?;
                accept(traj, m)?;
                continue;
            }
            if ma.signum() == mb.signum() {
                continue;
            }
            let (mut lo, mut hi) = (thetas[i], thetas[i] + std::f64::consts::TAU / count as f64);
            let mut m_lo = ma;
            for _ in 0..opts.shooting_refinements {
                let mid = 0.5 * (lo + hi);
                let m_mid = shoot(mid)?.1;
                if m_mid.signum() == m_lo.signum() {
                    lo = mid;
                    m_lo = m_mid;
                } else {
                    hi = mid;
                }
            }
            let (traj, m) = shoot(0.5 * (lo + hi))?;
            accept(traj, m)?;
        }
    }
    match best {
        Some((mut traj, m, _)) => {
            traj.mismatch = Some(m);
            Ok(traj)
        }
        None => Err(Error::ShootingFailed {
            x0,
            mismatch: best_mismatch,
        }),
    }
}

/// Replays the controls of `traj` from another start `x1`, with the same
/// steps; stops when either path has exited.
pub fn replay_controls(
    field: &SpeedField,
    dom: &SignedDomain,
    traj: &Trajectory,
    x1: Point,
) -> Trajectory {
    let mut out = Trajectory {
        t0: traj.t0,
        x0: x1,
        ..Default::default()
    };
    let mut x = x1;
    for i in 0..traj.times.len().saturating_sub(1) {
        let (t, h) = (traj.times[i], traj.times[i + 1] - traj.times[i]);
        let u = traj.controls[i];
        out.times.push(t);
        out.positions.push(x);
        out.controls.push(u);
        let xm = axpy(x, 0.5 * h * field.speed(t, x), u);
        x = axpy(x, h * field.speed(t + 0.5 * h, xm), u);
        if dom.signed_distance(x) >= 0.0 {
            break;
        }
    }
    out
}

/// Minimum of `∇d±(γ(t))·u(t)` over samples within `band` of `∂Ω`, or
/// `None` when no sample lies there.
pub fn transversality_min(traj: &Trajectory, dom: &SignedDomain, band: f64) -> Option<f64> {
    traj.positions
        .iter()
        .zip(&traj.controls)
        .filter(|(x, u)| dom.signed_distance(**x) >= -band && norm(**u) > 0.0)
        .map(|(x, u)| dot(dom.distance_gradient(*x), *u))
        .reduce(f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Grid, TimeGrid};
    use crate::hjb::{solve_value_function, SolverParams};

    fn ball_setup(h: f64, k: impl Fn(f64, Point) -> f64 + Sync, k_max: f64) -> (SignedDomain, SpeedField) {
        let grid = Grid::covering(2, [-1.0, -1.0], [1.0, 1.0], h, 2);
        let f = SpeedField::from_fn(grid, TimeGrid::covering(1.5, 0.5 * h / k_max), k);
        (SignedDomain::unit_ball(), f)
    }

    #[test]
    fn radial_path_in_unit_ball() {
        let (dom, f) = ball_setup(1.0 / 32.0, |_, _| 1.0, 1.0);
        let vg = solve_value_function(&f, &dom, &BoundaryCost::Zero, &SolverParams::default()).unwrap();
        let opts = TrajectoryOptions::default();
        let tr = integrate_optimal(&vg, &f, &dom, [0.5, 0.0], 0.0, &opts).unwrap();
        let e = tr.exit.unwrap();
        assert!((e.tau - 0.5).abs() < 0.02, "{e:?}");
        assert!(norm(sub(e.point, [1.0, 0.0])) < 0.02);
        assert!(dom.signed_distance(e.point).abs() < 1e-9);
        assert!((trajectory_cost(&tr, &dom, &BoundaryCost::Zero).unwrap() - e.tau).abs() < 1e-15);
        let pm = integrate_pontryagin(&f, &dom, &BoundaryCost::Zero, [0.5, 0.0], 0.0, [1.0, 0.0], &opts).unwrap();
        assert!((pm.tau().unwrap() - 0.5).abs() < 1e-9);
        assert!((pm.tau().unwrap() - e.tau).abs() < 0.02);
        let sh = shooting_match(&f, &dom, &BoundaryCost::Zero, [0.5, 0.0], 0.0, &opts).unwrap();
        assert!(norm(sub(sh.exit_point().unwrap(), [1.0, 0.0])) < 1e-6);
        assert_eq!(transversality_min(&tr, &dom, 0.5).map(|v| v > 0.99), Some(true));
    }

    #[test]
    fn growing_speed_exit_time() {
        let (dom, f) = ball_setup(1.0 / 32.0, |t, _| 1.0 + t / 2.0, 1.75);
        let vg = solve_value_function(&f, &dom, &BoundaryCost::Zero, &SolverParams::default()).unwrap();
        let tr = integrate_optimal(&vg, &f, &dom, [0.0, 0.5], 0.0, &TrajectoryOptions::default()).unwrap();
        let exact = 2.0 * (1.5f64.sqrt() - 1.0);
        assert!((tr.tau().unwrap() - exact).abs() < 0.01);
    }

    #[test]
    fn two_exit_interval_paths() {
        let dom = SignedDomain::interval(0.0, 1.0).unwrap();
        let h = 1.0 / 64.0;
        let grid = Grid::covering(1, [0.0, 0.0], [1.0, 0.0], h, 2);
        let f = SpeedField::constant(grid, TimeGrid::covering(2.5, h / 2.0), 1.0);
        let g = BoundaryCost::Endpoints { left: 0.0, right: 0.4 };
        let vg = solve_value_function(&f, &dom, &g, &SolverParams::default()).unwrap();
        let opts = TrajectoryOptions::default();
        let tr = integrate_optimal(&vg, &f, &dom, [0.55, 0.0], 0.0, &opts).unwrap();
        assert!(tr.exit_point().unwrap()[0].abs() < 1e-9);
        assert!((trajectory_cost(&tr, &dom, &g).unwrap() - 0.55).abs() < 1e-6);
        let sh = shooting_match(&f, &dom, &g, [0.55, 0.0], 0.0, &opts).unwrap();
        assert!(sh.exit_point().unwrap()[0].abs() < 1e-9);
        assert!((sh.tau().unwrap() - 0.55).abs() < 1e-6);
        let wrong = integrate_pontryagin(&f, &dom, &g, [0.55, 0.0], 0.0, [1.0, 0.0], &opts).unwrap();
        assert!((trajectory_cost(&wrong, &dom, &g).unwrap() - 0.85).abs() < 1e-6);
    }

    #[test]
    fn cost_examples() {
        let dom = SignedDomain::unit_ball();
        let mk = |tau: f64| Trajectory {
            exit: Some(Exit { tau, point: [1.0, 0.0] }),
            ..Default::default()
        };
        assert_eq!(trajectory_cost(&mk(0.5), &dom, &BoundaryCost::Zero).unwrap(), 0.5);
        assert!(matches!(
            trajectory_cost(&Trajectory::default(), &dom, &BoundaryCost::Zero),
            Err(Error::NotExited)
        ));
        let iv = SignedDomain::interval(0.0, 1.0).unwrap();
        let g = BoundaryCost::Endpoints { left: 0.0, right: 0.4 };
        let right = Trajectory {
            exit: Some(Exit { tau: 0.45, point: [1.0, 0.0] }),
            ..Default::default()
        };
        assert!((trajectory_cost(&right, &iv, &g).unwrap() - 0.85).abs() < 1e-15);
    }

    #[test]
    fn multiplier_root() {
        let mu = transversality_multiplier(1.0, [0.4, 0.0], [0.0, 1.0]);
        assert!((mu - 0.84f64.sqrt()).abs() < 1e-12);
        assert!((transversality_multiplier(2.0, [0.0, 0.0], [1.0, 0.0]) - 0.5).abs() < 1e-12);
        let mu = transversality_multiplier(1.0, [0.3, 0.2], [0.0, 1.0]);
        assert!((norm(sub([0.3, 0.2], [0.0, mu])) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_gradient_field_single_step_matches_fine_integration() {
        let grid = Grid::covering(2, [-1.0, -1.0], [1.0, 1.0], 0.05, 2);
        let dom = SignedDomain::rounded_rect([0.0, 0.0], [1.0, 1.0], None).unwrap();
        let coarse = SpeedField::from_fn(grid.clone(), TimeGrid::covering(4.0, 0.04), |_, x| 1.0 + 0.3 * x[0]);
        let opts = TrajectoryOptions::default();
        let u0 = [0.0, 1.0];
        let tr = integrate_pontryagin(&coarse, &dom, &BoundaryCost::Zero, [0.0, 0.0], 0.0, u0, &opts).unwrap();
        // fine reference: 10 midpoint substeps across the first step
        let dt = tr.times[1] - tr.times[0];
        let (mut x, mut u) = ([0.0f64, 0.0f64], u0);
        let sub_dt = dt / 10.0;
        let g = [0.3, 0.0];
        let f = |x: Point, u: Point| -> (Point, Point) {
            let k = 1.0 + 0.3 * x[0];
            (scale(u, k), axpy(scale(g, -1.0), dot(u, g), u))
        };
        for _ in 0..10 {
            let (v1, a1) = f(x, u);
            let (v2, a2) = f(axpy(x, 0.5 * sub_dt, v1), axpy(u, 0.5 * sub_dt, a1));
            x = axpy(x, sub_dt, v2);
            u = axpy(u, sub_dt, a2);
        }
        assert!(norm(sub(tr.positions[1], x)) < 1e-5);
        assert!(norm(sub(tr.controls[1], scale(u, 1.0 / norm(u)))) < 1e-4);
    }
}
