//! Measurable diagnostics for the quantitative properties of the exit
//! problem, and the closed-form radial value function used as an oracle.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::SpeedField;
use crate::error::{Error, Result};
use crate::geometry::{BoundaryCost, SignedDomain};
use crate::grid::{axpy, norm, Point};
use crate::hjb::{exit_time_bound, upwind_gradient, ValueGrid};
use crate::trajectories::{transversality_min, Exit, Trajectory};
use crate::transport::FlowReport;

/// Time-only speed `ζ(t)` for radial problems on the unit ball.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeProfile {
    Constant { value: f64 },
    /// `ζ(t) = start + slope · t`.
    Linear { start: f64, slope: f64 },
    /// `ζ(t) = base + amplitude · cos(t / scale)`.
    Cosine { base: f64, amplitude: f64, scale: f64 },
}

impl TimeProfile {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            TimeProfile::Constant { value } => value,
            TimeProfile::Linear { start, slope } => start + slope * t,
            TimeProfile::Cosine { base, amplitude, scale } => base + amplitude * (t / scale).cos(),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            TimeProfile::Constant { .. } => 0.0,
            TimeProfile::Linear { slope, .. } => slope,
            TimeProfile::Cosine { amplitude, scale, .. } => -amplitude / scale * (t / scale).sin(),
        }
    }

    /// `∫_{t0}^{t1} ζ`.
    pub fn integral(&self, t0: f64, t1: f64) -> f64 {
        match *self {
            TimeProfile::Constant { value } => value * (t1 - t0),
            TimeProfile::Linear { start, slope } => {
                start * (t1 - t0) + 0.5 * slope * (t1 * t1 - t0 * t0)
            }
            TimeProfile::Cosine { base, amplitude, scale } => {
                base * (t1 - t0) + amplitude * scale * ((t1 / scale).sin() - (t0 / scale).sin())
            }
        }
    }

    /// Lower and upper bounds of `ζ` on `[0, horizon]`.
    pub fn bounds(&self, horizon: f64) -> (f64, f64) {
        match *self {
            TimeProfile::Constant { value } => (value, value),
            TimeProfile::Linear { .. } => {
                let (a, b) = (self.value(0.0), self.value(horizon));
                (a.min(b), a.max(b))
            }
            TimeProfile::Cosine { base, amplitude, .. } => {
                (base - amplitude.abs(), base + amplitude.abs())
            }
        }
    }

    pub fn validate(&self, horizon: f64) -> Result<()> {
        let (lo, hi) = self.bounds(horizon);
        if !(lo > 0.0) || !hi.is_finite() {
            return Err(Error::BadZeta(format!(
                "speed must stay in (0, ∞) on [0, {horizon}], got [{lo}, {hi}]"
            )));
        }
        if let TimeProfile::Cosine { scale, .. } = self {
            if !(*scale > 0.0) {
                return Err(Error::BadZeta(format!("cosine scale {scale} must be positive")));
            }
        }
        Ok(())
    }
}

/// Minimal exit time from `x` at `t0` on the unit ball with zero exit cost
/// and speed `ζ(t)`: the `T` with `∫_{t0}^{t0+T} ζ = 1 − |x|`.
pub fn radial_oracle(zeta: &TimeProfile, x: Point, t0: f64) -> Result<f64> {
    let s = (1.0 - norm(x)).max(0.0);
    if let TimeProfile::Constant { value } = *zeta {
        zeta.validate(0.0)?;
        return Ok(s / value);
    }
    if s == 0.0 {
        return Ok(0.0);
    }
    // ∫ ζ grows at least like ζ_min, so the root is below s / ζ_min as long
    // as ζ stays positive up to there
    let mut hi = s / zeta.bounds(t0).0.max(1e-300);
    let mut tries = 0;
    while zeta.integral(t0, t0 + hi) < s {
        hi *= 2.0;
        tries += 1;
        if tries > 60 {
            return Err(Error::BadZeta("cumulative speed never reaches the distance".into()));
        }
    }
    zeta.validate(t0 + hi)?;
    if let TimeProfile::Linear { start, slope } = *zeta {
        if slope != 0.0 {
            // slope/2 T² + ζ(t0) T − s = 0
            let a = start + slope * t0;
            let disc = a * a + 2.0 * slope * s;
            if disc >= 0.0 {
                return Ok(2.0 * s / (a + disc.sqrt()));
            }
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if zeta.integral(t0, t0 + mid) < s {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// One pass/fail record of a verification run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    pub pass: bool,
    /// The property the check certifies.
    pub reference: String,
}

impl Check {
    /// Passes when `measured ≤ bound`.
    pub fn at_most(name: &str, measured: f64, bound: f64, reference: &str) -> Self {
        Check {
            name: name.into(),
            measured,
            bound,
            pass: measured <= bound,
            reference: reference.into(),
        }
    }

    /// Passes when `measured ≥ bound`.
    pub fn at_least(name: &str, measured: f64, bound: f64, reference: &str) -> Self {
        Check {
            name: name.into(),
            measured,
            bound,
            pass: measured >= bound,
            reference: reference.into(),
        }
    }
}

/// Max-norm error of `φ(0, ·)` against the radial oracle over interior
/// nodes.
pub fn radial_error(vg: &ValueGrid, zeta: &TimeProfile) -> Result<f64> {
    let grid = vg.grid();
    let v = vg.slice(0);
    let mut err = 0.0f64;
    for m in 0..grid.len() {
        if vg.interior()[m] {
            let exact = radial_oracle(zeta, grid.node(m), 0.0)?;
            err = err.max((v[m] - exact).abs());
        }
    }
    Ok(err)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Semiconcavity {
    /// Over every fully interior triple.
    pub all: f64,
    /// Excluding triples centred on ridge nodes.
    pub off_ridge: f64,
}

/// Largest normalised second difference `(φ(x−s) + φ(x+s) − 2φ(x)) / |s|²`
/// of the slice nearest `t`, for steps of 1, 2 and 4 cells along the axes
/// and diagonals, clipped below at zero.
pub fn semiconcavity_constant(vg: &ValueGrid, t: f64) -> Semiconcavity {
    let (i0, i1, w) = vg.time().bracket(t);
    let slice = if w > 0.5 { i1 } else { i0 };
    let grid = vg.grid();
    let v = vg.slice(slice);
    let interior = vg.interior();
    let dirs: &[(isize, isize)] = if grid.dim == 1 {
        &[(1, 0)]
    } else {
        &[(1, 0), (0, 1), (1, 1), (1, -1)]
    };
    let (nx, ny) = (grid.n[0] as isize, grid.n[1] as isize);
    let best = (0..grid.len())
        .into_par_iter()
        .filter(|&m| interior[m])
        .map(|m| {
            let (i, j) = grid.coords(m);
            let (i, j) = (i as isize, j as isize);
            let ridge = vg.is_ridge(slice, m);
            let mut local = 0.0f64;
            for &(di, dj) in dirs {
                for step in [1isize, 2, 4] {
                    let (a, b) = (i - step * di, j - step * dj);
                    let (c, d) = (i + step * di, j + step * dj);
                    if a < 0 || c < 0 || a >= nx || c >= nx || b < 0 || d < 0 || b >= ny || d >= ny
                    {
                        continue;
                    }
                    let lo = grid.index(a as usize, b as usize);
                    let hi = grid.index(c as usize, d as usize);
                    if !interior[lo] || !interior[hi] {
                        continue;
                    }
                    let len2 = (step * step * (di * di + dj * dj)) as f64 * grid.h * grid.h;
                    local = local.max((v[lo] + v[hi] - 2.0 * v[m]) / len2);
                }
            }
            (local, if ridge { 0.0 } else { local })
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    Semiconcavity {
        all: best.0,
        off_ridge: best.1,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeMonotonicity {
    /// Smallest `(φ(t₁, x) − φ(t₀, x)) / (t₁ − t₀)` over interior nodes.
    pub min_quotient: f64,
    /// `1 + min_quotient`.
    pub implied_c: f64,
}

/// Consecutive-slice quotients bound every longer one from below, since the
/// latter are averages of the former.
pub fn time_monotonicity_check(vg: &ValueGrid) -> TimeMonotonicity {
    let q = vg.min_time_quotient();
    TimeMonotonicity {
        min_quotient: q,
        implied_c: 1.0 + q,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientBound {
    /// Smallest upwind `|∇φ|` over interior, non-ridge nodes and stored
    /// slices.
    pub min_gradient: f64,
    /// `c / k_max` from the monotonicity estimate.
    pub estimate: f64,
}

impl GradientBound {
    pub fn pass(&self) -> bool {
        self.min_gradient >= 0.5 * self.estimate
    }
}

pub fn gradient_lower_bound(vg: &ValueGrid) -> GradientBound {
    let grid = vg.grid();
    let interior = vg.interior();
    let min_gradient = (0..vg.slices().stored())
        .into_par_iter()
        .map(|i| {
            let v = vg.slice(i);
            (0..grid.len())
                .filter(|&m| interior[m] && !vg.is_ridge(i, m))
                .map(|m| norm(upwind_gradient(grid, v, m)))
                .fold(f64::INFINITY, f64::min)
        })
        .reduce(|| f64::INFINITY, f64::min);
    GradientBound {
        min_gradient,
        estimate: time_monotonicity_check(vg).implied_c / vg.k_max(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpBound {
    pub exponent: f64,
    /// `sup_t ‖ρ_t‖_p / ‖ρ₀‖_p`.
    pub ratio: f64,
    /// `exp((1 − 1/p) C_div T)`.
    pub envelope: f64,
}

impl LpBound {
    pub fn pass(&self, tol: f64) -> bool {
        self.ratio <= self.envelope * (1.0 + tol)
    }
}

/// `L^p` ratio of exponent index `e` against the envelope built from the
/// divergence constant `c_div` over the horizon `t_max`.
pub fn lp_bound_report(report: &FlowReport, e: usize, c_div: f64, t_max: f64) -> LpBound {
    let p = report.exponents[e];
    let q = if p.is_infinite() { 1.0 } else { 1.0 - 1.0 / p };
    LpBound {
        exponent: p,
        ratio: report.sup_ratio(e),
        envelope: (q * c_div * t_max).exp(),
    }
}

/// Largest `|φ(t₀, x₀) − (t − t₀) − φ(t, γ(t))|` over the samples of the
/// trajectories; the exit sample uses the exit cost in place of `φ`.
pub fn dpp_residual(
    vg: &ValueGrid,
    dom: &SignedDomain,
    g: &BoundaryCost,
    trajs: &[Trajectory],
) -> f64 {
    trajs
        .par_iter()
        .map(|tr| {
            dpp_gaps(vg, dom, g, tr)
                .into_iter()
                .map(f64::abs)
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
}

/// `(t − t₀) + φ(t, γ(t)) − φ(t₀, x₀)` at every sample; nonnegative up to
/// discretisation error for any admissible path, zero along optimal ones.
pub fn dpp_gaps(vg: &ValueGrid, dom: &SignedDomain, g: &BoundaryCost, tr: &Trajectory) -> Vec<f64> {
    let start = vg.value(tr.t0, tr.x0);
    let last = tr.times.len().saturating_sub(1);
    tr.times
        .iter()
        .zip(&tr.positions)
        .enumerate()
        .map(|(i, (&t, &x))| {
            let here = if i == last && tr.exit.is_some() {
                g.value_at(dom, dom.project(x))
            } else {
                vg.value(t, x)
            };
            (t - tr.t0) + here - start
        })
        .collect()
}

/// Smallest DPP slack over the samples after the start (see [`dpp_gaps`]).
pub fn dpp_min_slack(vg: &ValueGrid, dom: &SignedDomain, g: &BoundaryCost, tr: &Trajectory) -> f64 {
    dpp_gaps(vg, dom, g, tr)
        .into_iter()
        .skip(1)
        .fold(f64::INFINITY, f64::min)
}

/// Path moving at full speed in the fixed direction `u` until it leaves
/// `dom` or `limit` time has passed; a deliberately suboptimal competitor
/// for the DPP inequality. A zero `u` keeps the agent in place.
pub fn fixed_direction_path(
    field: &SpeedField,
    dom: &SignedDomain,
    x0: Point,
    t0: f64,
    u: Point,
    limit: f64,
) -> Trajectory {
    let dt = 0.5 * field.time().dt;
    let mut tr = Trajectory {
        t0,
        x0,
        ..Default::default()
    };
    let (mut t, mut x) = (t0, x0);
    let step = |t: f64, x: Point, h: f64| -> Point {
        let xm = axpy(x, 0.5 * h * field.speed(t, x), u);
        axpy(x, h * field.speed(t + 0.5 * h, xm), u)
    };
    while t - t0 < limit {
        tr.times.push(t);
        tr.positions.push(x);
        tr.controls.push(u);
        let xn = step(t, x, dt);
        if dom.signed_distance(xn) >= 0.0 {
            let (mut lo, mut hi) = (0.0, dt);
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                if dom.signed_distance(step(t, x, mid)) >= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let z = step(t, x, hi);
            tr.times.push(t + hi);
            tr.positions.push(z);
            tr.controls.push(u);
            tr.exit = Some(Exit {
                tau: t + hi - t0,
                point: z,
            });
            return tr;
        }
        t += dt;
        x = xn;
    }
    tr.times.push(t);
    tr.positions.push(x);
    tr.controls.push(u);
    tr
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transversality {
    /// `min ∇d±·u` over samples in the band, `None` if no sample got there.
    pub min_product: Option<f64>,
    /// `(k_min/4)(1/k_max − λ)`.
    pub bound: f64,
    /// Trajectories whose minimum fell below `0.9 · bound`.
    pub violations: usize,
    pub samples: usize,
}

/// Lower bound on the outward speed of optimal paths near the boundary.
pub fn transversality_constant(k_min: f64, k_max: f64, lipschitz: f64) -> f64 {
    0.25 * k_min * (1.0 / k_max - lipschitz)
}

pub fn transversality_report(
    trajs: &[Trajectory],
    dom: &SignedDomain,
    band: f64,
    k_min: f64,
    k_max: f64,
    lipschitz: f64,
) -> Transversality {
    let bound = transversality_constant(k_min, k_max, lipschitz);
    let mins: Vec<f64> = trajs
        .iter()
        .filter_map(|t| transversality_min(t, dom, band))
        .collect();
    Transversality {
        min_product: mins.iter().cloned().reduce(f64::min),
        bound,
        violations: mins.iter().filter(|&&m| m < 0.9 * bound).count(),
        samples: mins.len(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitTimeCheck {
    pub violations: usize,
    /// Largest `τ − bound` seen (negative when all are inside).
    pub worst_excess: f64,
    pub checked: usize,
}

/// Compares exit times with the a-priori bound plus `slack`.
pub fn exit_time_check(
    trajs: &[Trajectory],
    field: &SpeedField,
    dom: &SignedDomain,
    g: &BoundaryCost,
    slack: f64,
) -> ExitTimeCheck {
    let c = field.constants();
    let lam = g.lipschitz(dom);
    let mut out = ExitTimeCheck {
        violations: 0,
        worst_excess: f64::NEG_INFINITY,
        checked: 0,
    };
    for tr in trajs {
        let Some(tau) = tr.tau() else { continue };
        let bound = exit_time_bound(c.k_min, c.k_max, lam, -dom.signed_distance(tr.x0));
        let excess = tau - bound;
        out.checked += 1;
        out.worst_excess = out.worst_excess.max(excess);
        if excess > slack {
            out.violations += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Grid, TimeGrid};

    #[test]
    fn oracle_examples() {
        let one = TimeProfile::Constant { value: 1.0 };
        let two = TimeProfile::Constant { value: 2.0 };
        let lin = TimeProfile::Linear { start: 1.0, slope: 0.5 };
        assert!((radial_oracle(&one, [0.3, 0.0], 0.0).unwrap() - 0.7).abs() < 1e-12);
        assert!((radial_oracle(&two, [0.0, 0.3], 0.0).unwrap() - 0.35).abs() < 1e-12);
        let t = radial_oracle(&lin, [0.0, 0.0], 0.0).unwrap();
        assert!((t - 2.0 * (2f64.sqrt() - 1.0)).abs() < 1e-12, "{t}");
        let cos = TimeProfile::Cosine { base: 1.0, amplitude: 0.4, scale: 0.1 };
        let t = radial_oracle(&cos, [0.0, 0.0], 0.0).unwrap();
        assert!((cos.integral(0.0, t) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn oracle_rejects_vanishing_speed() {
        let bad = TimeProfile::Constant { value: 0.0 };
        assert!(matches!(radial_oracle(&bad, [0.0, 0.0], 0.0), Err(Error::BadZeta(_))));
        let dies = TimeProfile::Linear { start: 1.0, slope: -2.0 };
        assert!(radial_oracle(&dies, [0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn oracle_time_quotients_have_the_expected_sign() {
        let grow = TimeProfile::Linear { start: 1.0, slope: 0.5 };
        let x = [0.2, 0.0];
        let q = (radial_oracle(&grow, x, 0.2).unwrap() - radial_oracle(&grow, x, 0.0).unwrap()) / 0.2;
        assert!(q < 0.0 && q > -1.0, "{q}");
        let shrink = TimeProfile::Linear { start: 2.0, slope: -1.0 };
        let x = [0.5, 0.0];
        let q =
            (radial_oracle(&shrink, x, 0.2).unwrap() - radial_oracle(&shrink, x, 0.0).unwrap()) / 0.2;
        assert!(q > 0.0, "{q}");
    }

    fn slice_grid(f: impl Fn(Point) -> f64 + Sync) -> ValueGrid {
        let grid = Grid::covering(2, [-1.0, -1.0], [1.0, 1.0], 1.0 / 16.0, 0);
        let dom = SignedDomain::ball([0.0, 0.0], 2.0).unwrap();
        ValueGrid::from_fn(grid, TimeGrid::covering(0.1, 0.05), &dom, 1.0, 1.0, |_, x| f(x))
    }

    #[test]
    fn concave_slice_clips_to_zero() {
        let vg = slice_grid(|x| -(x[0] * x[0] + x[1] * x[1]));
        assert_eq!(semiconcavity_constant(&vg, 0.0).all, 0.0);
        let vg = slice_grid(norm);
        let s = semiconcavity_constant(&vg, 0.0);
        // the cone is convex: its largest second difference sits at the tip
        assert!(s.all > 1.0);
        let vg = slice_grid(|x| 0.5 * (x[0] * x[0] + x[1] * x[1]));
        assert!((semiconcavity_constant(&vg, 0.0).all - 1.0).abs() < 1e-9);
    }

    #[test]
    fn autonomous_value_has_unit_constant() {
        let vg = slice_grid(|x| 1.0 - norm(x));
        let m = time_monotonicity_check(&vg);
        assert_eq!(m.min_quotient, 0.0);
        assert_eq!(m.implied_c, 1.0);
    }

    #[test]
    fn transversality_bound_value() {
        assert!((transversality_constant(1.0, 1.0, 0.0) - 0.25).abs() < 1e-15);
    }
}
