//! The speed `k(t, x)`: either prescribed directly on a space-time grid or
//! generated by a crowd through the congestion kernel
//! `k(μ, x) = V(∫ χ(x − y) ψ(y) dμ(y))`.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::SignedDomain;
use crate::grid::{dist, norm, Grid, Point, Slices, TimeGrid};
use crate::transport::DensityPath;

/// Congestion response `V: R⁺ → (0, ∞)`, non-increasing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Congestion {
    Constant { value: f64 },
    /// `V(s) = scale / (1 + strength s)`.
    Rational { scale: f64, strength: f64 },
    /// `V(s) = scale · exp(−rate s)`.
    Exponential { scale: f64, rate: f64 },
}

impl Congestion {
    #[inline]
    pub fn value(&self, s: f64) -> f64 {
        match *self {
            Congestion::Constant { value } => value,
            Congestion::Rational { scale, strength } => scale / (1.0 + strength * s),
            Congestion::Exponential { scale, rate } => scale * (-rate * s).exp(),
        }
    }

    #[inline]
    pub fn derivative(&self, s: f64) -> f64 {
        match *self {
            Congestion::Constant { .. } => 0.0,
            Congestion::Rational { scale, strength } => {
                -scale * strength / (1.0 + strength * s).powi(2)
            }
            Congestion::Exponential { scale, rate } => -rate * scale * (-rate * s).exp(),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Congestion::Constant { .. })
            || matches!(self, Congestion::Rational { strength, .. } if *strength == 0.0)
            || matches!(self, Congestion::Exponential { rate, .. } if *rate == 0.0)
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Congestion::Constant { value } => value > 0.0,
            Congestion::Rational { scale, strength } => scale > 0.0 && strength >= 0.0,
            Congestion::Exponential { scale, rate } => scale > 0.0 && rate >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidKernel(format!(
                "{self:?}: V must be positive and non-increasing"
            )))
        }
    }
}

/// Interaction weight `χ`, radial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Interaction {
    One,
    /// Gaussian of width `sigma`, truncated at `radius` by subtracting the
    /// quadratic in `r` that matches value and slope there, so the result
    /// is nonnegative, `C^{1,1}`, and vanishes with its gradient at `radius`.
    Gaussian { sigma: f64, radius: f64 },
}

impl Interaction {
    #[inline]
    pub fn radial(&self, r: f64) -> f64 {
        match *self {
            Interaction::One => 1.0,
            Interaction::Gaussian { sigma, radius } => {
                if r >= radius {
                    return 0.0;
                }
                let s2 = sigma * sigma;
                let g = |r: f64| (-r * r / (2.0 * s2)).exp();
                let gr = g(radius);
                // G'(R)/(2R) = -G(R)/(2σ²)
                g(r) - gr + gr / (2.0 * s2) * (r * r - radius * radius)
            }
        }
    }

    #[inline]
    pub fn radial_derivative(&self, r: f64) -> f64 {
        match *self {
            Interaction::One => 0.0,
            Interaction::Gaussian { sigma, radius } => {
                if r >= radius {
                    return 0.0;
                }
                let s2 = sigma * sigma;
                let gr = (-radius * radius / (2.0 * s2)).exp();
                -r / s2 * (-r * r / (2.0 * s2)).exp() + gr * r / s2
            }
        }
    }

    #[inline]
    pub fn value(&self, x: Point) -> f64 {
        self.radial(norm(x))
    }

    /// Sup of `χ` and `|∇χ|` on `[0, reach]`, sampled.
    pub fn bounds(&self, reach: f64) -> (f64, f64) {
        let m = 4000;
        let mut sup = 0.0f64;
        let mut sup_grad = 0.0f64;
        for i in 0..=m {
            let r = reach * i as f64 / m as f64;
            sup = sup.max(self.radial(r));
            sup_grad = sup_grad.max(self.radial_derivative(r).abs());
        }
        (sup, sup_grad)
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Interaction::One => Ok(()),
            Interaction::Gaussian { sigma, radius } if sigma > 0.0 && radius > 0.0 => Ok(()),
            _ => Err(Error::InvalidKernel(format!("{self:?}: sigma and radius must be positive"))),
        }
    }
}

/// Cubic smoothstep bridge `α(s) = 1 − σ(1 + s/δ)` with `σ(r) = 3r² − 2r³`:
/// 1 for `s ≤ −δ`, 0 for `s ≥ 0`, flat at both ends.
#[inline]
pub fn cutoff_profile(s: f64, delta: f64) -> f64 {
    if s >= 0.0 {
        0.0
    } else if s <= -delta {
        1.0
    } else {
        let r = 1.0 + s / delta;
        1.0 - r * r * (3.0 - 2.0 * r)
    }
}

#[inline]
pub fn cutoff_profile_derivative(s: f64, delta: f64) -> f64 {
    if s >= 0.0 || s <= -delta {
        0.0
    } else {
        let r = 1.0 + s / delta;
        -6.0 * r * (1.0 - r) / delta
    }
}

/// Which agents count toward congestion: `ψ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Presence {
    One,
    /// Indicator of the open interior.
    Indicator,
    /// Member of the cutoff class: `ψ = α(d±)` with the smoothstep bridge.
    Cutoff { delta: f64 },
}

impl Presence {
    #[inline]
    pub fn value(&self, dom: &SignedDomain, y: Point) -> f64 {
        match *self {
            Presence::One => 1.0,
            Presence::Indicator => {
                if dom.signed_distance(y) < 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Presence::Cutoff { delta } => cutoff_profile(dom.signed_distance(y), delta),
        }
    }
}

/// A cutoff of width `delta` for `dom`.
pub fn cutoff_member(delta: f64, dom: &SignedDomain) -> Result<Presence> {
    if !(delta > 0.0) || delta > dom.tube() {
        return Err(Error::DeltaTooLarge {
            delta,
            tube: dom.tube(),
        });
    }
    Ok(Presence::Cutoff { delta })
}

#[derive(Clone, Debug)]
pub struct InteractionKernel {
    pub congestion: Congestion,
    pub interaction: Interaction,
    pub presence: Presence,
    domain: SignedDomain,
    chi_sup: f64,
    chi_grad_sup: f64,
}

impl InteractionKernel {
    pub fn new(
        congestion: Congestion,
        interaction: Interaction,
        presence: Presence,
        domain: SignedDomain,
    ) -> Result<Self> {
        congestion.validate()?;
        interaction.validate()?;
        if let Presence::Cutoff { delta } = presence {
            cutoff_member(delta, &domain)?;
        }
        let (chi_sup, chi_grad_sup) = interaction.bounds(domain.diameter());
        Ok(InteractionKernel {
            congestion,
            interaction,
            presence,
            domain,
            chi_sup,
            chi_grad_sup,
        })
    }

    /// Same kernel with a different `ψ`.
    pub fn with_presence(&self, presence: Presence) -> Result<Self> {
        Self::new(
            self.congestion.clone(),
            self.interaction.clone(),
            presence,
            self.domain.clone(),
        )
    }

    pub fn domain(&self) -> &SignedDomain {
        &self.domain
    }

    /// `M`: common bound on `χ` and `|∇χ|` over `Ω − Ω`.
    pub fn chi_bound(&self) -> f64 {
        self.chi_sup.max(self.chi_grad_sup)
    }

    /// A-priori speed range `[V(sup χ), V(0)]` for any sub-probability.
    pub fn speed_bounds(&self) -> (f64, f64) {
        (self.congestion.value(self.chi_sup), self.congestion.value(0.0))
    }

    pub fn is_interacting(&self) -> bool {
        !self.congestion.is_constant()
    }

    /// Uniform bound `M · V̄ · sup|V′|` on `−∂ₜk` along equilibria with a
    /// cutoff `ψ`.
    pub fn time_derivative_bound(&self) -> f64 {
        let m = self.chi_bound();
        let vbar = self.congestion.value(0.0);
        let n = 2000;
        let sup_dv = (0..=n)
            .map(|i| self.congestion.derivative(m * i as f64 / n as f64).abs())
            .fold(0.0, f64::max);
        m * vbar * sup_dv
    }

    /// `V(q)` with `q` the midpoint quadrature of `χ(x − ·) ψ(·)` against a
    /// cell-averaged density on `grid`.
    pub fn evaluate_speed(&self, grid: &Grid, density: &[f64], x: Point) -> Result<f64> {
        check_density(density)?;
        let vol = grid.cell_volume();
        let q: f64 = density
            .iter()
            .enumerate()
            .filter(|(_, &r)| r != 0.0)
            .map(|(m, &r)| {
                let y = grid.node(m);
                self.interaction.radial(dist(x, y)) * self.presence.value(&self.domain, y) * r * vol
            })
            .sum();
        Ok(self.congestion.value(q))
    }
}

fn check_density(density: &[f64]) -> Result<()> {
    if let Some((node, &value)) = density.iter().enumerate().find(|(_, &r)| r < -1e-12) {
        return Err(Error::NegativeDensity { node, value });
    }
    Ok(())
}

/// Discrete convolution on a node grid via zero-padded FFTs:
/// `out_j = Σ_m w(x_j − y_m) s_m`.
pub struct Convolver {
    n: [usize; 2],
    size: [usize; 2],
    kernel_hat: Vec<Complex<f64>>,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Option<Arc<dyn Fft<f64>>>,
    col_inv: Option<Arc<dyn Fft<f64>>>,
}

impl Convolver {
    /// Convolution with `χ`, weighted by the cell volume.
    pub fn new(grid: &Grid, interaction: &Interaction) -> Self {
        let vol = grid.cell_volume();
        Self::from_kernel(grid, |x| interaction.value(x) * vol)
    }

    /// Convolution with raw weights `w(offset)` at node offsets.
    pub fn from_kernel(grid: &Grid, weight: impl Fn(Point) -> f64) -> Self {
        let n = grid.n;
        let size = [2 * n[0], if grid.dim == 2 { 2 * n[1] } else { 1 }];
        let mut planner = FftPlanner::new();
        let row_fwd = planner.plan_fft_forward(size[0]);
        let row_inv = planner.plan_fft_inverse(size[0]);
        let (col_fwd, col_inv) = if size[1] > 1 {
            (
                Some(planner.plan_fft_forward(size[1])),
                Some(planner.plan_fft_inverse(size[1])),
            )
        } else {
            (None, None)
        };
        let offset = |k: usize, len: usize| -> f64 {
            if k < len / 2 {
                k as f64
            } else {
                k as f64 - len as f64
            }
        };
        let mut kernel = vec![Complex::new(0.0, 0.0); size[0] * size[1]];
        for b in 0..size[1] {
            for a in 0..size[0] {
                let x = [offset(a, size[0]) * grid.h, offset(b, size[1]) * grid.h];
                kernel[b * size[0] + a] = Complex::new(weight(x), 0.0);
            }
        }
        let mut conv = Convolver {
            n,
            size,
            kernel_hat: Vec::new(),
            row_fwd,
            row_inv,
            col_fwd,
            col_inv,
        };
        conv.transform(&mut kernel, false);
        conv.kernel_hat = kernel;
        conv
    }

    fn transform(&self, data: &mut [Complex<f64>], inverse: bool) {
        let (rows, cols) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        for row in data.chunks_mut(self.size[0]) {
            rows.process(row);
        }
        if let Some(col) = cols {
            let mut buf = vec![Complex::new(0.0, 0.0); self.size[1]];
            for a in 0..self.size[0] {
                for b in 0..self.size[1] {
                    buf[b] = data[b * self.size[0] + a];
                }
                col.process(&mut buf);
                for b in 0..self.size[1] {
                    data[b * self.size[0] + a] = buf[b];
                }
            }
        }
    }

    pub fn convolve(&self, source: &[f64]) -> Vec<f64> {
        let mut data = vec![Complex::new(0.0, 0.0); self.size[0] * self.size[1]];
        for j in 0..self.n[1] {
            for i in 0..self.n[0] {
                data[j * self.size[0] + i].re = source[j * self.n[0] + i];
            }
        }
        self.transform(&mut data, false);
        for (d, k) in data.iter_mut().zip(&self.kernel_hat) {
            *d *= k;
        }
        self.transform(&mut data, true);
        let norm = 1.0 / (self.size[0] * self.size[1]) as f64;
        let mut out = vec![0.0; self.n[0] * self.n[1]];
        for j in 0..self.n[1] {
            for i in 0..self.n[0] {
                out[j * self.n[0] + i] = data[j * self.size[0] + i].re * norm;
            }
        }
        out
    }
}

/// Empirical regularity constants of a tabulated speed field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldConstants {
    pub k_min: f64,
    pub k_max: f64,
    /// Spatial Lipschitz constant.
    pub l1: f64,
    /// Lipschitz constant of the spatial gradient.
    pub l2: f64,
    /// Lower bound `∂ₜk ≥ −ℓ`.
    pub ell: f64,
}

/// `k(tᵢ, xⱼ)` on a space-time grid; constant in time past its last stored
/// slice.
#[derive(Clone, Debug)]
pub struct SpeedField {
    grid: Grid,
    time: TimeGrid,
    slices: Slices,
    constants: FieldConstants,
}

impl SpeedField {
    pub fn from_slices(grid: Grid, time: TimeGrid, mut slices: Slices) -> Self {
        assert_eq!(slices.n_nodes(), grid.len());
        slices.compress_tail();
        let mut field = SpeedField {
            grid,
            time,
            slices,
            constants: FieldConstants {
                k_min: 0.0,
                k_max: 0.0,
                l1: 0.0,
                l2: 0.0,
                ell: 0.0,
            },
        };
        field.constants = estimate_field_constants(&field);
        field
    }

    pub fn from_fn(grid: Grid, time: TimeGrid, f: impl Fn(f64, Point) -> f64 + Sync) -> Self {
        let n = grid.len();
        let data: Vec<f64> = (0..time.n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let t = time.time(i);
                let grid = &grid;
                let f = &f;
                (0..n).map(move |k| f(t, grid.node(k)))
            })
            .collect();
        Self::from_slices(grid.clone(), time, Slices::from_vec(n, data))
    }

    pub fn constant(grid: Grid, time: TimeGrid, value: f64) -> Self {
        let mut s = Slices::new(grid.len());
        s.push(&vec![value; grid.len()]);
        Self::from_slices(grid, time, s)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn slices(&self) -> &Slices {
        &self.slices
    }

    pub fn constants(&self) -> &FieldConstants {
        &self.constants
    }

    /// Nodal values at time index `i`.
    #[inline]
    pub fn slice(&self, i: usize) -> &[f64] {
        self.slices.get(i)
    }

    /// Number of leading time slices that differ; later ones repeat.
    pub fn varying_slices(&self) -> usize {
        self.slices.stored()
    }

    #[inline]
    pub fn speed(&self, t: f64, x: Point) -> f64 {
        self.slices
            .at_time(&self.time, t, |v| self.grid.interpolate(v, x))
    }

    /// Interpolated central-difference gradient `∇ₓk(t, x)`.
    pub fn gradient(&self, t: f64, x: Point) -> Point {
        let (i0, i1, w) = self.time.bracket(t);
        let g0 = self.grid.interpolate_gradient(self.slice(i0), x);
        if w == 0.0 {
            return g0;
        }
        let g1 = self.grid.interpolate_gradient(self.slice(i1), x);
        [(1.0 - w) * g0[0] + w * g1[0], (1.0 - w) * g0[1] + w * g1[1]]
    }

    /// Content hash over grid, time grid and values.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&(&self.grid, &self.time)).unwrap_or_default());
        for v in self.slices.raw() {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Upper (resp. lower) envelopes of the field's constants over all nodes,
/// from grid differences. `ℓ` uses forward time differences.
pub fn estimate_field_constants(field: &SpeedField) -> FieldConstants {
    let grid = &field.grid;
    let stored = field.slices.stored();
    let mut c = FieldConstants {
        k_min: f64::INFINITY,
        k_max: f64::NEG_INFINITY,
        l1: 0.0,
        l2: 0.0,
        ell: 0.0,
    };
    let diag = std::f64::consts::SQRT_2 * grid.h;
    for i in 0..stored {
        let v = field.slices.get(i);
        let grads: Vec<Point> = (0..grid.len()).map(|k| grid.node_gradient(v, k)).collect();
        for k in 0..grid.len() {
            c.k_min = c.k_min.min(v[k]);
            c.k_max = c.k_max.max(v[k]);
            let (a, b) = grid.coords(k);
            let mut pairs = [(usize::MAX, grid.h); 3];
            if a + 1 < grid.n[0] {
                pairs[0] = (k + 1, grid.h);
            }
            if grid.dim == 2 && b + 1 < grid.n[1] {
                pairs[1] = (k + grid.n[0], grid.h);
                if a + 1 < grid.n[0] {
                    pairs[2] = (k + grid.n[0] + 1, diag);
                }
            }
            let interior = |k: usize| {
                let (a, b) = grid.coords(k);
                a > 0 && a + 1 < grid.n[0] && (grid.dim == 1 || (b > 0 && b + 1 < grid.n[1]))
            };
            for (m, len) in pairs {
                if m == usize::MAX {
                    continue;
                }
                c.l1 = c.l1.max((v[m] - v[k]).abs() / len);
                if interior(k) && interior(m) {
                    c.l2 = c.l2.max(norm([grads[m][0] - grads[k][0], grads[m][1] - grads[k][1]]) / len);
                }
            }
        }
        if i + 1 < stored {
            let next = field.slices.get(i + 1);
            for k in 0..grid.len() {
                c.ell = c.ell.max(-(next[k] - v[k]) / field.time.dt);
            }
        }
    }
    c
}

/// `k(tᵢ, ·) = k(ρ_{tᵢ}, ·)` for every stored slice of the density path.
pub fn speed_field_from_density_path(
    kernel: &InteractionKernel,
    path: &DensityPath,
) -> Result<SpeedField> {
    let grid = path.grid();
    if grid.dim != kernel.domain().dim() {
        return Err(Error::GridMismatch(format!(
            "density path is {}-dimensional, kernel domain is {}-dimensional",
            grid.dim,
            kernel.domain().dim()
        )));
    }
    let n = grid.len();
    let presence: Vec<f64> = (0..n)
        .map(|k| kernel.presence.value(kernel.domain(), grid.node(k)))
        .collect();
    let mut slices = Slices::new(n);
    if kernel.is_interacting() {
        let conv = Convolver::new(grid, &kernel.interaction);
        for i in 0..path.slices().stored() {
            let rho = path.slices().get(i);
            check_density(rho)?;
            let source: Vec<f64> = rho.iter().zip(&presence).map(|(r, p)| r * p).collect();
            let q = conv.convolve(&source);
            let k: Vec<f64> = q
                .iter()
                .map(|&q| kernel.congestion.value(q.max(0.0)))
                .collect();
            slices.push(&k);
        }
    } else {
        slices.push(&vec![kernel.congestion.value(0.0); n]);
    }
    Ok(SpeedField::from_slices(grid.clone(), *path.time(), slices))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_grid(h: f64) -> Grid {
        Grid::covering(2, [-1.0, -1.0], [1.0, 1.0], h, 2)
    }

    fn uniform_disk_density(grid: &Grid, dom: &SignedDomain) -> Vec<f64> {
        // area fraction of each cell inside the disk, 8x8 subsampling
        let s = 8;
        (0..grid.len())
            .map(|k| {
                let c = grid.node(k);
                let mut inside = 0;
                for a in 0..s {
                    for b in 0..s {
                        let p = [
                            c[0] + grid.h * ((a as f64 + 0.5) / s as f64 - 0.5),
                            c[1] + grid.h * ((b as f64 + 0.5) / s as f64 - 0.5),
                        ];
                        if dom.contains(p) {
                            inside += 1;
                        }
                    }
                }
                inside as f64 / (s * s) as f64 / std::f64::consts::PI
            })
            .collect()
    }

    #[test]
    fn empty_crowd_moves_at_full_speed() {
        let dom = SignedDomain::unit_ball();
        let k = InteractionKernel::new(
            Congestion::Rational { scale: 1.0, strength: 1.0 },
            Interaction::One,
            Presence::One,
            dom,
        )
        .unwrap();
        let g = unit_grid(0.1);
        assert_eq!(k.evaluate_speed(&g, &vec![0.0; g.len()], [0.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn unit_mass_with_flat_kernel_halves_the_speed() {
        let dom = SignedDomain::unit_ball();
        let k = InteractionKernel::new(
            Congestion::Rational { scale: 1.0, strength: 1.0 },
            Interaction::One,
            Presence::One,
            dom.clone(),
        )
        .unwrap();
        let g = unit_grid(1.0 / 16.0);
        let rho = uniform_disk_density(&g, &dom);
        let mass: f64 = rho.iter().sum::<f64>() * g.cell_volume();
        let rho: Vec<f64> = rho.iter().map(|r| r / mass).collect();
        let v = k.evaluate_speed(&g, &rho, [0.3, -0.2]).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn negative_density_is_rejected() {
        let dom = SignedDomain::unit_ball();
        let k = InteractionKernel::new(
            Congestion::Constant { value: 1.0 },
            Interaction::One,
            Presence::One,
            dom,
        )
        .unwrap();
        let g = unit_grid(0.5);
        let mut rho = vec![0.0; g.len()];
        rho[3] = -1e-6;
        assert!(matches!(
            k.evaluate_speed(&g, &rho, [0.0, 0.0]),
            Err(Error::NegativeDensity { node: 3, .. })
        ));
    }

    #[test]
    fn gaussian_kernel_against_radial_quadrature() {
        // q(0) = ∫_disk χ(|y|)/π dy = 2 ∫_0^min(R,1) χ(r) r dr, by composite Simpson
        let chi = Interaction::Gaussian { sigma: 0.2, radius: 0.6 };
        let m = 20000;
        let b = 0.6f64;
        let f = |r: f64| chi.radial(r) * r;
        let mut acc = f(0.0) + f(b);
        for i in 1..m {
            let r = b * i as f64 / m as f64;
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(r);
        }
        let q_exact = 2.0 * acc * b / (3.0 * m as f64);
        let oracle = 1.0 / (1.0 + q_exact);
        let dom = SignedDomain::unit_ball();
        let k = InteractionKernel::new(
            Congestion::Rational { scale: 1.0, strength: 1.0 },
            chi,
            Presence::One,
            dom.clone(),
        )
        .unwrap();
        let g = unit_grid(1.0 / 64.0);
        let rho = uniform_disk_density(&g, &dom);
        let v = k.evaluate_speed(&g, &rho, [0.0, 0.0]).unwrap();
        assert!((v - oracle).abs() < 2e-4, "{v} vs {oracle}");
    }

    #[test]
    fn truncated_gaussian_is_smooth_at_the_cut() {
        let chi = Interaction::Gaussian { sigma: 0.2, radius: 0.5 };
        assert!(chi.radial(0.5).abs() < 1e-15);
        assert!(chi.radial_derivative(0.5).abs() < 1e-12);
        assert!(chi.radial_derivative(0.0).abs() < 1e-15);
        for i in 1..100 {
            let r = 0.5 * i as f64 / 100.0;
            assert!(chi.radial(r) >= 0.0);
            let fd = (chi.radial(r + 1e-6) - chi.radial(r - 1e-6)) / 2e-6;
            assert!((fd - chi.radial_derivative(r)).abs() < 1e-5);
        }
    }

    #[test]
    fn cutoff_examples() {
        let dom = SignedDomain::unit_ball();
        let psi = cutoff_member(0.1, &dom).unwrap();
        assert_eq!(psi.value(&dom, [1.0, 0.0]), 0.0);
        assert_eq!(psi.value(&dom, [0.9, 0.0]), 1.0);
        assert!((psi.value(&dom, [0.95, 0.0]) - 0.5).abs() < 1e-12);
        assert_eq!(cutoff_profile_derivative(0.0, 0.1), 0.0);
        assert_eq!(cutoff_profile_derivative(-0.1, 0.1), 0.0);
        assert!(matches!(cutoff_member(0.9, &dom), Err(Error::DeltaTooLarge { .. })));
    }

    #[test]
    fn cutoff_derivative_is_lipschitz_and_flat_at_ends() {
        let delta = 0.1;
        let step = 1e-4;
        let mut prev = cutoff_profile_derivative(-0.2, delta);
        let mut lip: f64 = 0.0;
        let mut s = -0.2;
        while s < 0.05 {
            s += step;
            let d = cutoff_profile_derivative(s, delta);
            lip = lip.max((d - prev).abs() / step);
            prev = d;
            // numerical derivative agrees with the closed form
            let fd = (cutoff_profile(s + 1e-7, delta) - cutoff_profile(s - 1e-7, delta)) / 2e-7;
            assert!((fd - d).abs() < 1e-4);
            assert!(d <= 0.0 && d >= -1.5 / delta - 1e-9);
        }
        assert!(lip <= 6.0 / (delta * delta) * (1.0 + 1e-3));
        let near0 = cutoff_profile_derivative(-10.0 * step, delta).abs();
        let near_delta = cutoff_profile_derivative(-delta + 10.0 * step, delta).abs();
        assert!(near0 <= 6.0 / (delta * delta) * 10.0 * step);
        assert!(near_delta <= 6.0 / (delta * delta) * 10.0 * step);
    }

    #[test]
    fn field_constant_examples() {
        let g = unit_grid(0.25);
        let f = SpeedField::constant(g.clone(), TimeGrid::covering(1.0, 0.1), 1.0);
        assert_eq!(
            *f.constants(),
            FieldConstants { k_min: 1.0, k_max: 1.0, l1: 0.0, l2: 0.0, ell: 0.0 }
        );
        let f = SpeedField::from_fn(g.clone(), TimeGrid::covering(1.0, 0.1), |t, _| 1.0 + t / 2.0);
        assert_eq!(f.constants().ell, 0.0);
        assert_eq!(f.constants().k_min, 1.0);
        let f = SpeedField::from_fn(g.clone(), TimeGrid::covering(1.0, 0.1), |t, _| 2.0 - t);
        assert!((f.constants().ell - 1.0).abs() < 1e-9);
        let f = SpeedField::from_fn(g, TimeGrid::covering(1.0, 0.1), |_, x| 1.0 + 0.3 * x[0]);
        assert!((f.constants().l1 - 0.3).abs() < 1e-9);
        assert!(f.constants().l2 < 1e-9);
        assert_eq!(f.varying_slices(), 1);
    }

    #[test]
    fn fft_convolution_matches_direct_quadrature() {
        let dom = SignedDomain::unit_ball();
        let kernel = InteractionKernel::new(
            Congestion::Rational { scale: 1.0, strength: 2.0 },
            Interaction::Gaussian { sigma: 0.3, radius: 0.8 },
            Presence::Cutoff { delta: 0.2 },
            dom.clone(),
        )
        .unwrap();
        let g = unit_grid(1.0 / 16.0);
        let rho = uniform_disk_density(&g, &dom);
        let time = TimeGrid::covering(0.5, 0.25);
        let path = DensityPath::constant(g.clone(), time, &dom, rho.clone());
        let field = speed_field_from_density_path(&kernel, &path).unwrap();
        for k in [0, 17, g.len() / 2, g.len() / 3 + 5] {
            let direct = kernel.evaluate_speed(&g, &rho, g.node(k)).unwrap();
            assert!((field.slice(0)[k] - direct).abs() < 1e-12);
        }
        assert_eq!(field.constants().ell, 0.0);
    }

    #[test]
    fn constant_congestion_ignores_the_crowd() {
        let dom = SignedDomain::unit_ball();
        let kernel = InteractionKernel::new(
            Congestion::Constant { value: 0.7 },
            Interaction::Gaussian { sigma: 0.3, radius: 0.8 },
            Presence::One,
            dom.clone(),
        )
        .unwrap();
        let g = unit_grid(0.125);
        let rho = uniform_disk_density(&g, &dom);
        let path = DensityPath::constant(g.clone(), TimeGrid::covering(1.0, 0.1), &dom, rho);
        let field = speed_field_from_density_path(&kernel, &path).unwrap();
        let c = field.constants();
        assert_eq!((c.k_min, c.k_max, c.l1, c.ell), (0.7, 0.7, 0.0, 0.0));
    }

    proptest! {
        #[test]
        fn adding_mass_never_speeds_the_crowd_up(
            base in prop::collection::vec(0.0f64..2.0, 81),
            extra in prop::collection::vec(0.0f64..1.0, 81),
            x in prop::array::uniform2(-0.9f64..0.9),
        ) {
            let dom = SignedDomain::unit_ball();
            let kernel = InteractionKernel::new(
                Congestion::Exponential { scale: 1.0, rate: 0.5 },
                Interaction::Gaussian { sigma: 0.3, radius: 0.8 },
                Presence::Cutoff { delta: 0.3 },
                dom,
            ).unwrap();
            let g = Grid::covering(2, [-1.0, -1.0], [1.0, 1.0], 0.25, 0);
            let more: Vec<f64> = base.iter().zip(&extra).map(|(a, b)| a + b).collect();
            let k0 = kernel.evaluate_speed(&g, &base, x).unwrap();
            let k1 = kernel.evaluate_speed(&g, &more, x).unwrap();
            prop_assert!(k1 <= k0 + 1e-15);
            let (lo, hi) = kernel.speed_bounds();
            prop_assert!(hi <= 1.0 && lo > 0.0);
        }
    }
}
