//! Compact domains described by their signed distance `d±` (negative inside)
//! and the exit cost `g` on their boundary.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{axpy, dot, norm, normalized, scale, sub, Point};

pub type DistanceFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Shape {
    Ball { center: Point, radius: f64 },
    /// Axis-aligned rectangle with corners rounded to radius `corner`.
    RoundedRect { center: Point, half: Point, corner: f64 },
    Interval { lo: f64, hi: f64 },
    /// User-supplied signed distance; gradients by central differences.
    Custom(DistanceFn),
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Ball { center, radius } => write!(f, "Ball({center:?}, {radius})"),
            Shape::RoundedRect {
                center,
                half,
                corner,
            } => write!(f, "RoundedRect({center:?}, {half:?}, {corner})"),
            Shape::Interval { lo, hi } => write!(f, "Interval({lo}, {hi})"),
            Shape::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SignedDomain {
    dim: usize,
    shape: Shape,
    lo: Point,
    hi: Point,
    curvature: f64,
    tube: f64,
    inradius: f64,
    fd_step: f64,
}

impl SignedDomain {
    pub fn ball(center: Point, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidDomain(format!("ball radius {radius} must be positive")));
        }
        Ok(SignedDomain {
            dim: 2,
            shape: Shape::Ball { center, radius },
            lo: [center[0] - radius, center[1] - radius],
            hi: [center[0] + radius, center[1] + radius],
            curvature: 1.0 / radius,
            tube: 0.5 * radius,
            inradius: radius,
            fd_step: 2e-6 * radius,
        })
    }

    pub fn unit_ball() -> Self {
        Self::ball([0.0, 0.0], 1.0).expect("unit ball")
    }

    /// Rounded rectangle; `corner` defaults to a tenth of the shorter side.
    pub fn rounded_rect(center: Point, half: Point, corner: Option<f64>) -> Result<Self> {
        let short = half[0].min(half[1]);
        if !(short > 0.0) {
            return Err(Error::InvalidDomain("rectangle half-sides must be positive".into()));
        }
        let corner = corner.unwrap_or(0.2 * short);
        if !(corner > 0.0) {
            return Err(Error::InvalidDomain(
                "sharp corners are not C^{1,1}; corner radius must be positive".into(),
            ));
        }
        if corner > short {
            return Err(Error::InvalidDomain(format!(
                "corner radius {corner} exceeds half the shorter side {short}"
            )));
        }
        Ok(SignedDomain {
            dim: 2,
            shape: Shape::RoundedRect {
                center,
                half,
                corner,
            },
            lo: [center[0] - half[0], center[1] - half[1]],
            hi: [center[0] + half[0], center[1] + half[1]],
            curvature: 1.0 / corner,
            tube: corner,
            inradius: short,
            fd_step: 2e-6 * norm(half),
        })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        if !(hi > lo) {
            return Err(Error::InvalidDomain(format!("empty interval [{lo}, {hi}]")));
        }
        Ok(SignedDomain {
            dim: 1,
            shape: Shape::Interval { lo, hi },
            lo: [lo, 0.0],
            hi: [hi, 0.0],
            curvature: 0.0,
            tube: 0.25 * (hi - lo),
            inradius: 0.5 * (hi - lo),
            fd_step: 1e-6 * (hi - lo),
        })
    }

    /// Domain from an arbitrary signed-distance evaluator. The caller vouches
    /// for the curvature bound and the regular tube width.
    pub fn custom(
        dim: usize,
        distance: DistanceFn,
        lo: Point,
        hi: Point,
        curvature: f64,
        tube: f64,
    ) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidDomain(format!("unsupported dimension {dim}")));
        }
        if !(tube > 0.0) {
            return Err(Error::InvalidDomain("tube width must be positive".into()));
        }
        let diam = norm(sub(hi, lo));
        let mut dom = SignedDomain {
            dim,
            shape: Shape::Custom(distance),
            lo,
            hi,
            curvature,
            tube,
            inradius: 0.0,
            fd_step: 1e-6 * diam,
        };
        // sup of the interior depth, sampled
        let m = if dim == 1 { 2001 } else { 201 };
        let mut depth: f64 = 0.0;
        for i in 0..m {
            for j in 0..(if dim == 1 { 1 } else { m }) {
                let p = [
                    lo[0] + (hi[0] - lo[0]) * i as f64 / (m - 1) as f64,
                    if dim == 1 { 0.0 } else { lo[1] + (hi[1] - lo[1]) * j as f64 / (m - 1) as f64 },
                ];
                depth = depth.max(-dom.signed_distance(p));
            }
        }
        dom.inradius = depth;
        Ok(dom)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    /// Bounding box `(lo, hi)`.
    pub fn bbox(&self) -> (Point, Point) {
        (self.lo, self.hi)
    }

    pub fn curvature(&self) -> f64 {
        self.curvature
    }

    /// Width `δ₀` of the boundary tube on which `d±` is `C^{1,1}`.
    pub fn tube(&self) -> f64 {
        self.tube
    }

    /// `sup_x d(x, ∂Ω)` over the interior.
    pub fn inradius(&self) -> f64 {
        self.inradius
    }

    pub fn diameter(&self) -> f64 {
        norm(sub(self.hi, self.lo))
    }

    pub fn center(&self) -> Point {
        match &self.shape {
            Shape::Ball { center, .. } | Shape::RoundedRect { center, .. } => *center,
            _ => scale([self.lo[0] + self.hi[0], self.lo[1] + self.hi[1]], 0.5),
        }
    }

    #[inline]
    pub fn contains(&self, x: Point) -> bool {
        self.signed_distance(x) < 0.0
    }

    /// `d±(x)`: distance to the boundary, negative in the interior.
    #[inline]
    pub fn signed_distance(&self, x: Point) -> f64 {
        match &self.shape {
            Shape::Ball { center, radius } => norm(sub(x, *center)) - radius,
            Shape::RoundedRect {
                center,
                half,
                corner,
            } => {
                let q = [
                    (x[0] - center[0]).abs() - (half[0] - corner),
                    (x[1] - center[1]).abs() - (half[1] - corner),
                ];
                let outside = norm([q[0].max(0.0), q[1].max(0.0)]);
                outside + q[0].max(q[1]).min(0.0) - corner
            }
            Shape::Interval { lo, hi } => (lo - x[0]).max(x[0] - hi),
            Shape::Custom(f) => f(x),
        }
    }

    /// `∇d±(x)`; on the boundary this is the outward unit normal.
    pub fn distance_gradient(&self, x: Point) -> Point {
        match &self.shape {
            Shape::Ball { center, .. } => normalized(sub(x, *center), 0.0).unwrap_or([0.0, 0.0]),
            Shape::RoundedRect {
                center,
                half,
                corner,
            } => {
                let p = sub(x, *center);
                let s = [if p[0] < 0.0 { -1.0 } else { 1.0 }, if p[1] < 0.0 { -1.0 } else { 1.0 }];
                let q = [p[0].abs() - (half[0] - corner), p[1].abs() - (half[1] - corner)];
                if q[0] > 0.0 && q[1] > 0.0 {
                    let n = normalized(q, 0.0).unwrap_or([1.0, 0.0]);
                    [s[0] * n[0], s[1] * n[1]]
                } else if q[0] >= q[1] {
                    [s[0], 0.0]
                } else {
                    [0.0, s[1]]
                }
            }
            Shape::Interval { lo, hi } => {
                if x[0] < 0.5 * (lo + hi) {
                    [-1.0, 0.0]
                } else {
                    [1.0, 0.0]
                }
            }
            Shape::Custom(f) => {
                let e = self.fd_step;
                let mut g = [0.0; 2];
                for a in 0..self.dim {
                    let mut xp = x;
                    let mut xm = x;
                    xp[a] += e;
                    xm[a] -= e;
                    g[a] = (f(xp) - f(xm)) / (2.0 * e);
                }
                g
            }
        }
    }

    /// Outward unit normal at a boundary point.
    pub fn outward_normal(&self, z: Point, tol: f64) -> Result<Point> {
        let d = self.signed_distance(z);
        if d.abs() > tol {
            return Err(Error::NotOnBoundary {
                point: z,
                distance: d.abs(),
                tolerance: tol,
            });
        }
        let g = self.distance_gradient(z);
        Ok(normalized(g, 0.0).unwrap_or(g))
    }

    /// Closest boundary point `x − d±(x) ∇d±(x)` for `x` in the regular tube.
    pub fn project_to_boundary(&self, x: Point) -> Result<Point> {
        let d = self.signed_distance(x);
        if d.abs() > self.tube {
            return Err(Error::OutsideTube {
                point: x,
                distance: d.abs(),
                tube: self.tube,
            });
        }
        Ok(self.project(x))
    }

    /// Projection without the tube check. Points far inside may land on the
    /// wrong sheet of the boundary, which callers only use for ghost values.
    #[inline]
    pub fn project(&self, x: Point) -> Point {
        let d = self.signed_distance(x);
        let mut z = axpy(x, -d, self.distance_gradient(x));
        if let Shape::Custom(_) = self.shape {
            // one Newton correction for approximate gradients
            let d2 = self.signed_distance(z);
            z = axpy(z, -d2, self.distance_gradient(z));
        }
        if self.dim == 1 {
            z[1] = 0.0;
        }
        z
    }
}

/// Exit cost `g: ∂Ω → R⁺`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryCost {
    /// Minimal-time problem.
    Zero,
    /// `g(z) = a (1 − ẑ·e) / 2` with `ẑ` the direction of `z` from the domain
    /// centre and `e` a unit direction.
    Cosine { amplitude: f64, direction: Point },
    /// One-dimensional cost with values at the left and right endpoints.
    Endpoints { left: f64, right: f64 },
}

impl BoundaryCost {
    pub fn validate(&self, dom: &SignedDomain) -> Result<()> {
        match self {
            BoundaryCost::Zero => Ok(()),
            BoundaryCost::Cosine {
                amplitude,
                direction,
            } => {
                if dom.dim() != 2 || matches!(dom.shape(), Shape::Custom(_)) {
                    return Err(Error::InvalidDomain(
                        "cosine boundary cost needs a ball or rounded rectangle".into(),
                    ));
                }
                if *amplitude < 0.0 || norm(*direction) == 0.0 {
                    return Err(Error::InvalidDomain("cosine cost needs a >= 0 and e != 0".into()));
                }
                Ok(())
            }
            BoundaryCost::Endpoints { left, right } => {
                if dom.dim() != 1 {
                    return Err(Error::InvalidDomain("endpoint cost needs an interval".into()));
                }
                if *left < 0.0 || *right < 0.0 {
                    return Err(Error::InvalidDomain("boundary cost must be nonnegative".into()));
                }
                Ok(())
            }
        }
    }

    fn cosine_radius(dom: &SignedDomain) -> f64 {
        match dom.shape() {
            Shape::Ball { radius, .. } => *radius,
            Shape::RoundedRect { half, .. } => half[0].min(half[1]),
            _ => 1.0,
        }
    }

    /// `g(z)` after projecting `z` onto the boundary; no tolerance check.
    #[inline]
    pub fn value_at(&self, dom: &SignedDomain, z: Point) -> f64 {
        match self {
            BoundaryCost::Zero => 0.0,
            BoundaryCost::Cosine {
                amplitude,
                direction,
            } => {
                let e = normalized(*direction, 0.0).unwrap_or([1.0, 0.0]);
                let zhat = normalized(sub(z, dom.center()), 0.0).unwrap_or(e);
                0.5 * amplitude * (1.0 - dot(zhat, e))
            }
            BoundaryCost::Endpoints { left, right } => {
                let (lo, hi) = dom.bbox();
                if z[0] < 0.5 * (lo[0] + hi[0]) {
                    *left
                } else {
                    *right
                }
            }
        }
    }

    /// Tangential gradient of `g` at `z`.
    pub fn gradient_at(&self, dom: &SignedDomain, z: Point) -> Point {
        match self {
            BoundaryCost::Cosine {
                amplitude,
                direction,
            } => {
                let e = normalized(*direction, 0.0).unwrap_or([1.0, 0.0]);
                let rel = sub(z, dom.center());
                let r = norm(rel);
                if r == 0.0 {
                    return [0.0, 0.0];
                }
                let zhat = scale(rel, 1.0 / r);
                let amb = scale(axpy(e, -dot(zhat, e), zhat), -0.5 * amplitude / r);
                let n = normalized(dom.distance_gradient(z), 0.0).unwrap_or(zhat);
                axpy(amb, -dot(amb, n), n)
            }
            _ => [0.0, 0.0],
        }
    }

    pub fn value(&self, dom: &SignedDomain, z: Point, tol: f64) -> Result<f64> {
        check_on_boundary(dom, z, tol)?;
        Ok(self.value_at(dom, dom.project(z)))
    }

    pub fn gradient(&self, dom: &SignedDomain, z: Point, tol: f64) -> Result<Point> {
        check_on_boundary(dom, z, tol)?;
        Ok(self.gradient_at(dom, dom.project(z)))
    }

    /// Lipschitz constant `λ` of `g` along the boundary.
    pub fn lipschitz(&self, dom: &SignedDomain) -> f64 {
        match self {
            BoundaryCost::Zero => 0.0,
            BoundaryCost::Cosine { amplitude, .. } => 0.5 * amplitude / Self::cosine_radius(dom),
            BoundaryCost::Endpoints { left, right } => {
                let (lo, hi) = dom.bbox();
                (right - left).abs() / (hi[0] - lo[0])
            }
        }
    }

    /// Semi-concavity constant of `g` on the boundary.
    pub fn semiconcavity(&self, dom: &SignedDomain) -> f64 {
        match self {
            BoundaryCost::Cosine { amplitude, .. } => {
                0.5 * amplitude / Self::cosine_radius(dom).powi(2)
            }
            _ => 0.0,
        }
    }

    pub fn max_value(&self) -> f64 {
        match self {
            BoundaryCost::Zero => 0.0,
            BoundaryCost::Cosine { amplitude, .. } => *amplitude,
            BoundaryCost::Endpoints { left, right } => left.max(*right),
        }
    }

    /// Rejects `λ k_max ≥ 1`.
    pub fn check_against(&self, dom: &SignedDomain, k_max: f64) -> Result<()> {
        let product = self.lipschitz(dom) * k_max;
        if product >= 1.0 {
            return Err(Error::CostTooSteep { product });
        }
        Ok(())
    }
}

fn check_on_boundary(dom: &SignedDomain, z: Point, tol: f64) -> Result<()> {
    let d = dom.signed_distance(z);
    if d.abs() > tol {
        return Err(Error::NotOnBoundary {
            point: z,
            distance: d.abs(),
            tolerance: tol,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: Point, b: Point, tol: f64) -> bool {
        (a[0] - b[0]).abs() <= tol && (a[1] - b[1]).abs() <= tol
    }

    #[test]
    fn unit_ball_signed_distance() {
        let b = SignedDomain::unit_ball();
        assert_eq!(b.signed_distance([0.5, 0.0]), -0.5);
        assert_eq!(b.signed_distance([2.0, 0.0]), 1.0);
        assert_eq!(b.signed_distance([0.0, 1.0]), 0.0);
        assert_eq!(b.curvature(), 1.0);
    }

    #[test]
    fn normals_point_outward() {
        let b = SignedDomain::unit_ball();
        assert!(close(b.outward_normal([0.0, 1.0], 1e-9).unwrap(), [0.0, 1.0], 1e-15));
        assert!(close(b.outward_normal([-1.0, 0.0], 1e-9).unwrap(), [-1.0, 0.0], 1e-15));
        let i = SignedDomain::interval(0.0, 1.0).unwrap();
        assert_eq!(i.outward_normal([0.0, 0.0], 1e-9).unwrap(), [-1.0, 0.0]);
        assert!(matches!(
            b.outward_normal([0.5, 0.0], 0.01),
            Err(Error::NotOnBoundary { .. })
        ));
    }

    #[test]
    fn projection_examples() {
        let b = SignedDomain::unit_ball();
        assert!(close(b.project_to_boundary([0.5, 0.0]).unwrap(), [1.0, 0.0], 1e-15));
        assert!(close(b.project_to_boundary([0.0, -0.9]).unwrap(), [0.0, -1.0], 1e-15));
        let i = SignedDomain::interval(0.0, 1.0).unwrap();
        assert!(close(i.project_to_boundary([0.1, 0.0]).unwrap(), [0.0, 0.0], 1e-15));
        assert!(matches!(
            b.project_to_boundary([0.1, 0.0]),
            Err(Error::OutsideTube { .. })
        ));
    }

    #[test]
    fn sharp_or_oversized_corners_are_rejected() {
        assert!(SignedDomain::rounded_rect([0.0, 0.0], [1.0, 0.5], Some(0.0)).is_err());
        assert!(SignedDomain::rounded_rect([0.0, 0.0], [1.0, 0.5], Some(0.6)).is_err());
        let r = SignedDomain::rounded_rect([0.0, 0.0], [1.0, 0.5], None).unwrap();
        assert!((r.curvature() - 10.0).abs() < 1e-12);
        assert!((r.signed_distance([1.0, 0.0])).abs() < 1e-15);
        // corner arc centre (0.9, 0.4), radius 0.1
        let c = [0.9 + 0.1 / 2f64.sqrt(), 0.4 + 0.1 / 2f64.sqrt()];
        assert!(r.signed_distance(c).abs() < 1e-12);
    }

    #[test]
    fn boundary_cost_examples() {
        let b = SignedDomain::unit_ball();
        let g = BoundaryCost::Cosine {
            amplitude: 0.2,
            direction: [1.0, 0.0],
        };
        assert_eq!(g.value(&b, [1.0, 0.0], 1e-9).unwrap(), 0.0);
        assert!((g.value(&b, [-1.0, 0.0], 1e-9).unwrap() - 0.2).abs() < 1e-15);
        assert!(g.value(&b, [0.0, 0.0], 1e-3).is_err());
        let zero = BoundaryCost::Zero;
        assert_eq!(zero.value(&b, [0.0, 1.0], 1e-9).unwrap(), 0.0);
        assert_eq!(zero.gradient(&b, [0.0, 1.0], 1e-9).unwrap(), [0.0, 0.0]);
        // tangential gradient at (0,1): d/dθ of 0.1 (1 - cos θ) at θ = π/2 is 0.1
        let grad = g.gradient(&b, [0.0, 1.0], 1e-9).unwrap();
        assert!(close(grad, [-0.1, 0.0], 1e-12));
        assert!(g.check_against(&b, 1.0).is_ok());
        assert!(matches!(g.check_against(&b, 10.0), Err(Error::CostTooSteep { .. })));
    }

    #[test]
    fn custom_domain_matches_builtin_ball() {
        let f: DistanceFn = Arc::new(|x: Point| norm(x) - 1.0);
        let c = SignedDomain::custom(2, f, [-1.0, -1.0], [1.0, 1.0], 1.0, 0.5).unwrap();
        let b = SignedDomain::unit_ball();
        for x in [[0.3, 0.7], [-0.8, 0.1], [0.6, -0.75]] {
            assert!(close(c.distance_gradient(x), b.distance_gradient(x), 1e-6));
            assert!(close(c.project(x), b.project(x), 1e-6));
        }
        assert!((c.inradius() - 1.0).abs() < 1e-2);
    }

    fn domains() -> Vec<SignedDomain> {
        vec![
            SignedDomain::unit_ball(),
            SignedDomain::rounded_rect([0.1, -0.2], [1.0, 0.6], Some(0.15)).unwrap(),
            SignedDomain::interval(0.0, 1.0).unwrap(),
        ]
    }

    proptest! {
        #[test]
        fn signed_distance_is_one_lipschitz(
            which in 0usize..3,
            a in prop::array::uniform2(-2.0f64..2.0),
            b in prop::array::uniform2(-2.0f64..2.0),
        ) {
            let dom = &domains()[which];
            let (mut a, mut b) = (a, b);
            if dom.dim() == 1 { a[1] = 0.0; b[1] = 0.0; }
            let lhs = (dom.signed_distance(a) - dom.signed_distance(b)).abs();
            prop_assert!(lhs <= norm(sub(a, b)) + 1e-12);
        }

        #[test]
        fn projection_is_idempotent_in_the_tube(
            which in 0usize..3,
            x in prop::array::uniform2(-1.5f64..1.5),
        ) {
            let dom = &domains()[which];
            let mut x = x;
            if dom.dim() == 1 { x[1] = 0.0; }
            if let Ok(z) = dom.project_to_boundary(x) {
                let tol = 1e-9;
                prop_assert!(dom.signed_distance(z).abs() <= tol);
                let zz = dom.project_to_boundary(z).unwrap();
                prop_assert!(norm(sub(z, zz)) <= 2.0 * tol);
                prop_assert!((norm(sub(x, z)) - dom.signed_distance(x).abs()).abs() <= 1e-9);
            }
        }

        #[test]
        fn eikonal_property_in_the_tube(
            which in 0usize..2,
            x in prop::array::uniform2(-1.5f64..1.5),
        ) {
            let dom = &domains()[which];
            let h = 1e-4;
            if dom.signed_distance(x).abs() <= dom.tube() * 0.95 {
                let gx = (dom.signed_distance([x[0] + h, x[1]]) - dom.signed_distance([x[0] - h, x[1]])) / (2.0 * h);
                let gy = (dom.signed_distance([x[0], x[1] + h]) - dom.signed_distance([x[0], x[1] - h])) / (2.0 * h);
                prop_assert!((gx.hypot(gy) - 1.0).abs() <= 10.0 * h);
            }
        }

        #[test]
        fn boundary_cost_is_lambda_lipschitz(
            t1 in 0.0f64..std::f64::consts::TAU,
            t2 in 0.0f64..std::f64::consts::TAU,
            amp in 0.0f64..1.0,
        ) {
            let b = SignedDomain::unit_ball();
            let g = BoundaryCost::Cosine { amplitude: amp, direction: [0.3, -1.0] };
            let (x, y) = ([t1.cos(), t1.sin()], [t2.cos(), t2.sin()]);
            let lam = g.lipschitz(&b);
            prop_assert!((g.value_at(&b, x) - g.value_at(&b, y)).abs() <= lam * norm(sub(x, y)) + 1e-12);
            prop_assert!(norm(g.gradient_at(&b, x)) <= lam + 1e-12);
        }
    }
}
