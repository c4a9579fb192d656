//! 1-Wasserstein distances between nodal mass vectors.
//!
//! In one dimension the distance is exact: the `L¹` norm of the difference
//! of cumulative distributions. In two dimensions a dyadic (quadtree) bound
//! is used: the mass imbalance of every block is charged the diameter of its
//! parent, which upper-bounds the transport cost.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::transport::DensityPath;

/// `W₁` in one dimension. Unequal totals are compared by their cumulative
/// distributions as they stand.
pub fn w1_1d(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    let mut fa = 0.0;
    let mut fb = 0.0;
    let mut acc = 0.0;
    for k in 0..grid.n[0].saturating_sub(1) {
        fa += a[k];
        fb += b[k];
        acc += (fa - fb).abs() * grid.h;
    }
    acc
}

/// Dyadic upper bound on `W₁` for a two-dimensional grid; any total mass
/// difference is charged the diameter of the whole grid.
pub fn w1_dyadic(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    let (nx, ny) = (grid.n[0], grid.n[1]);
    let mut diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (mut w, mut hgt) = (nx, ny);
    let mut side = grid.h;
    let mut cost = 0.0;
    while w > 1 || hgt > 1 {
        let (pw, ph) = (w.div_ceil(2), hgt.div_ceil(2));
        let parent_diam = 2.0 * side * std::f64::consts::SQRT_2;
        let mut parent = vec![0.0; pw * ph];
        for j in 0..hgt {
            for i in 0..w {
                let d = diff[j * w + i];
                cost += d.abs() * parent_diam;
                parent[(j / 2) * pw + i / 2] += d;
            }
        }
        diff = parent;
        w = pw;
        hgt = ph;
        side *= 2.0;
    }
    let total = diff[0].abs();
    let diam = grid.h * ((nx as f64).powi(2) + (ny as f64).powi(2)).sqrt();
    cost + total * diam
}

/// `W₁` between nodal mass vectors on the same grid.
pub fn w1(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    if grid.dim == 1 {
        w1_1d(grid, a, b)
    } else {
        w1_dyadic(grid, a, b)
    }
}

/// `sup_t W₁(ρ_t, σ_t)` where each measure includes the mass that has
/// already exited, placed where it left.
pub fn sup_w1(p: &DensityPath, q: &DensityPath) -> Result<f64> {
    if p.grid() != q.grid() || p.time() != q.time() {
        return Err(Error::GridMismatch("density paths on different grids".into()));
    }
    let last = p.active_slices().max(q.active_slices());
    let mut worst = 0.0f64;
    for i in 0..last {
        worst = worst.max(w1(p.grid(), &p.total_masses(i), &q.total_masses(i)));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn shifting_a_point_mass_costs_the_shift() {
        let g = Grid::covering(1, [0.0, 0.0], [1.0, 0.0], 0.1, 0);
        let mut a = vec![0.0; g.len()];
        let mut b = vec![0.0; g.len()];
        a[2] = 1.0;
        b[5] = 1.0;
        assert!((w1_1d(&g, &a, &b) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn dyadic_bound_dominates_a_known_shift() {
        let g = Grid::covering(2, [0.0, 0.0], [1.0, 1.0], 1.0 / 16.0, 0);
        let mut a = vec![0.0; g.len()];
        let mut b = vec![0.0; g.len()];
        a[g.index(3, 3)] = 1.0;
        b[g.index(9, 3)] = 1.0;
        let bound = w1_dyadic(&g, &a, &b);
        assert!(bound >= 6.0 / 16.0 - 1e-12);
        assert!(bound <= 8.0);
        assert_eq!(w1_dyadic(&g, &a, &a), 0.0);
    }

    proptest! {
        #[test]
        fn distance_is_symmetric_and_zero_on_the_diagonal(
            a in prop::collection::vec(0.0f64..1.0, 25),
            b in prop::collection::vec(0.0f64..1.0, 25),
        ) {
            let g = Grid::covering(2, [0.0, 0.0], [1.0, 1.0], 0.25, 0);
            prop_assert!((w1(&g, &a, &b) - w1(&g, &b, &a)).abs() < 1e-12);
            prop_assert_eq!(w1(&g, &a, &a), 0.0);
            let g1 = Grid::covering(1, [0.0, 0.0], [1.0, 0.0], 1.0 / 24.0, 0);
            prop_assert!((w1(&g1, &a, &b) - w1(&g1, &b, &a)).abs() < 1e-12);
        }
    }
}
