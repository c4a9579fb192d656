//! Regular node grids in one or two space dimensions, time grids, and the
//! slice storage shared by speed fields, value functions and density paths.
//!
//! One-dimensional problems use the same `[f64; 2]` points with the second
//! coordinate pinned to zero and a single node along the second axis.

use serde::{Deserialize, Serialize};

pub type Point = [f64; 2];

#[inline]
pub fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn scale(a: Point, s: f64) -> Point {
    [a[0] * s, a[1] * s]
}

#[inline]
pub fn axpy(x: Point, s: f64, v: Point) -> Point {
    [x[0] + s * v[0], x[1] + s * v[1]]
}

#[inline]
pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

#[inline]
pub fn dist(a: Point, b: Point) -> f64 {
    norm(sub(a, b))
}

/// Unit vector along `a`, or `None` when `|a|` is below `floor`.
#[inline]
pub fn normalized(a: Point, floor: f64) -> Option<Point> {
    let n = norm(a);
    (n > floor).then(|| scale(a, 1.0 / n))
}

/// Node grid `origin + (i h, j h)`. Node `(i, j)` owns the cell of side `h`
/// centred on it; histograms and quadratures use these cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dim: usize,
    pub n: [usize; 2],
    pub origin: Point,
    pub h: f64,
}

impl Grid {
    /// Grid with spacing `h` whose nodes include `lo` and extend `pad` nodes
    /// beyond `[lo, hi]` on every side.
    pub fn covering(dim: usize, lo: Point, hi: Point, h: f64, pad: usize) -> Self {
        assert!(dim == 1 || dim == 2, "dimension must be 1 or 2");
        assert!(h > 0.0);
        let mut n = [1usize; 2];
        let mut origin = [0.0; 2];
        for a in 0..dim {
            let span = ((hi[a] - lo[a]) / h - 1e-9).ceil().max(1.0) as usize;
            n[a] = span + 1 + 2 * pad;
            origin[a] = lo[a] - pad as f64 * h;
        }
        Grid { dim, n, origin, h }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n[0] * self.n[1]
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.n[0] + i
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.n[0], idx / self.n[0])
    }

    #[inline]
    pub fn node(&self, idx: usize) -> Point {
        let (i, j) = self.coords(idx);
        if self.dim == 1 {
            [self.origin[0] + i as f64 * self.h, 0.0]
        } else {
            [
                self.origin[0] + i as f64 * self.h,
                self.origin[1] + j as f64 * self.h,
            ]
        }
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    pub fn upper(&self) -> Point {
        let mut hi = self.origin;
        for a in 0..self.dim {
            hi[a] += (self.n[a] - 1) as f64 * self.h;
        }
        hi
    }

    /// Same box, half the spacing.
    pub fn refined(&self) -> Self {
        let mut n = [1usize; 2];
        for a in 0..self.dim {
            n[a] = 2 * (self.n[a] - 1) + 1;
        }
        Grid {
            dim: self.dim,
            n,
            origin: self.origin,
            h: self.h / 2.0,
        }
    }

    /// Index of the node whose cell contains `x`, if `x` lies in the grid box.
    pub fn nearest(&self, x: Point) -> Option<usize> {
        let mut ij = [0usize; 2];
        for a in 0..self.dim {
            let s = ((x[a] - self.origin[a]) / self.h).round();
            if s < 0.0 || s > (self.n[a] - 1) as f64 {
                return None;
            }
            ij[a] = s as usize;
        }
        Some(self.index(ij[0], ij[1]))
    }

    #[inline]
    fn locate_axis(&self, a: usize, x: f64) -> (usize, f64) {
        if self.n[a] < 2 {
            return (0, 0.0);
        }
        let s = (x - self.origin[a]) / self.h;
        let i0 = (s.floor().max(0.0) as usize).min(self.n[a] - 2);
        let f = (s - i0 as f64).clamp(0.0, 1.0);
        (i0, f)
    }

    /// Corner indices and weights of the multilinear interpolation stencil
    /// (points outside the box are clamped to it).
    #[inline]
    pub fn stencil(&self, x: Point) -> ([usize; 4], [f64; 4]) {
        let (i0, fx) = self.locate_axis(0, x[0]);
        if self.dim == 1 {
            let a = self.index(i0, 0);
            return ([a, a + 1, a, a], [1.0 - fx, fx, 0.0, 0.0]);
        }
        let (j0, fy) = self.locate_axis(1, x[1]);
        let a = self.index(i0, j0);
        let nx = self.n[0];
        (
            [a, a + 1, a + nx, a + nx + 1],
            [
                (1.0 - fx) * (1.0 - fy),
                fx * (1.0 - fy),
                (1.0 - fx) * fy,
                fx * fy,
            ],
        )
    }

    #[inline]
    pub fn interpolate(&self, values: &[f64], x: Point) -> f64 {
        let (idx, w) = self.stencil(x);
        w[0] * values[idx[0]] + w[1] * values[idx[1]] + w[2] * values[idx[2]] + w[3] * values[idx[3]]
    }

    /// Central-difference gradient at a node, one-sided on the grid edge.
    #[inline]
    pub fn node_gradient(&self, values: &[f64], idx: usize) -> Point {
        let (i, j) = self.coords(idx);
        let mut g = [0.0; 2];
        for a in 0..self.dim {
            let (k, stride) = if a == 0 { (i, 1) } else { (j, self.n[0]) };
            let n = self.n[a];
            g[a] = if k == 0 {
                (values[idx + stride] - values[idx]) / self.h
            } else if k == n - 1 {
                (values[idx] - values[idx - stride]) / self.h
            } else {
                (values[idx + stride] - values[idx - stride]) / (2.0 * self.h)
            };
        }
        g
    }

    /// Multilinear interpolation of the nodal central-difference gradients.
    #[inline]
    pub fn interpolate_gradient(&self, values: &[f64], x: Point) -> Point {
        let (idx, w) = self.stencil(x);
        let mut g = [0.0; 2];
        let corners = if self.dim == 1 { 2 } else { 4 };
        for c in 0..corners {
            if w[c] != 0.0 {
                let gc = self.node_gradient(values, idx[c]);
                g[0] += w[c] * gc[0];
                g[1] += w[c] * gc[1];
            }
        }
        g
    }

    /// One-sided differences `(backward, forward)` along axis `a` at a node;
    /// `None` on the grid edge.
    #[inline]
    pub fn one_sided(&self, values: &[f64], idx: usize, a: usize) -> Option<(f64, f64)> {
        let (i, j) = self.coords(idx);
        let (k, stride) = if a == 0 { (i, 1) } else { (j, self.n[0]) };
        if k == 0 || k + 1 >= self.n[a] {
            return None;
        }
        let c = values[idx];
        Some((
            (c - values[idx - stride]) / self.h,
            (values[idx + stride] - c) / self.h,
        ))
    }

    /// Axis neighbours of a node (up to `2 dim`).
    pub fn neighbors(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        let (i, j) = self.coords(idx);
        let nx = self.n[0];
        let mut out = [usize::MAX; 4];
        if i > 0 {
            out[0] = idx - 1;
        }
        if i + 1 < nx {
            out[1] = idx + 1;
        }
        if self.dim == 2 {
            if j > 0 {
                out[2] = idx - nx;
            }
            if j + 1 < self.n[1] {
                out[3] = idx + nx;
            }
        }
        out.into_iter().filter(|&k| k != usize::MAX)
    }
}

/// Uniform time grid `t_i = i dt`, `i = 0..n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub dt: f64,
    pub n: usize,
}

impl TimeGrid {
    pub fn covering(t_end: f64, dt: f64) -> Self {
        let n = (t_end / dt - 1e-9).ceil().max(1.0) as usize + 1;
        TimeGrid { dt, n }
    }

    #[inline]
    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    pub fn end(&self) -> f64 {
        self.time(self.n - 1)
    }

    /// Bracketing slice indices and the weight of the upper one, clamped to
    /// the grid.
    #[inline]
    pub fn bracket(&self, t: f64) -> (usize, usize, f64) {
        if self.n == 1 || t <= 0.0 {
            return (0, 0, 0.0);
        }
        let s = t / self.dt;
        if s >= (self.n - 1) as f64 {
            return (self.n - 1, self.n - 1, 0.0);
        }
        let i0 = s.floor() as usize;
        (i0, i0 + 1, s - i0 as f64)
    }
}

/// Time slices of a nodal field. Slices past the last stored one repeat it,
/// so fields that stop changing keep a single copy of their tail.
#[derive(Clone, Debug, PartialEq)]
pub struct Slices {
    n_nodes: usize,
    data: Vec<f64>,
}

impl Slices {
    pub fn new(n_nodes: usize) -> Self {
        Slices {
            n_nodes,
            data: Vec::new(),
        }
    }

    pub fn from_vec(n_nodes: usize, data: Vec<f64>) -> Self {
        assert!(n_nodes > 0 && data.len().is_multiple_of(n_nodes));
        Slices { n_nodes, data }
    }

    pub fn push(&mut self, slice: &[f64]) {
        assert_eq!(slice.len(), self.n_nodes);
        self.data.extend_from_slice(slice);
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn stored(&self) -> usize {
        self.data.len() / self.n_nodes.max(1)
    }

    #[inline]
    pub fn get(&self, i: usize) -> &[f64] {
        let i = i.min(self.stored() - 1);
        &self.data[i * self.n_nodes..(i + 1) * self.n_nodes]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.n_nodes..(i + 1) * self.n_nodes]
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    /// Drops trailing slices identical to their predecessor.
    pub fn compress_tail(&mut self) {
        while self.stored() > 1 {
            let s = self.stored();
            let (head, last) = self.data.split_at((s - 1) * self.n_nodes);
            if head[(s - 2) * self.n_nodes..] != *last {
                break;
            }
            self.data.truncate((s - 1) * self.n_nodes);
        }
    }

    /// Interpolates linearly in time between stored slices.
    #[inline]
    pub fn at_time(&self, time: &TimeGrid, t: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        let (i0, i1, w) = time.bracket(t);
        let (i0, i1) = (i0.min(self.stored() - 1), i1.min(self.stored() - 1));
        if i0 == i1 || w == 0.0 {
            f(self.get(i0))
        } else {
            (1.0 - w) * f(self.get(i0)) + w * f(self.get(i1))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covering_grid_contains_box_corners_as_nodes() {
        let g = Grid::covering(2, [-1.0, -1.0], [1.0, 1.0], 0.25, 2);
        assert_eq!(g.n, [13, 13]);
        assert_eq!(g.node(g.index(2, 2)), [-1.0, -1.0]);
        assert_eq!(g.node(g.index(10, 10)), [1.0, 1.0]);
        assert_eq!(g.nearest([0.01, -0.01]), Some(g.index(6, 6)));
    }

    #[test]
    fn bilinear_is_exact_on_affine_functions() {
        let g = Grid::covering(2, [0.0, 0.0], [1.0, 1.0], 0.1, 1);
        let v: Vec<f64> = (0..g.len())
            .map(|k| {
                let p = g.node(k);
                2.0 * p[0] - 3.0 * p[1] + 1.0
            })
            .collect();
        let x = [0.437, 0.811];
        assert!((g.interpolate(&v, x) - (2.0 * x[0] - 3.0 * x[1] + 1.0)).abs() < 1e-12);
        let grad = g.interpolate_gradient(&v, x);
        assert!((grad[0] - 2.0).abs() < 1e-12 && (grad[1] + 3.0).abs() < 1e-12);
    }

    #[test]
    fn one_dimensional_grid_interpolates_linearly() {
        let g = Grid::covering(1, [0.0, 0.0], [1.0, 0.0], 0.125, 2);
        assert_eq!(g.n, [13, 1]);
        let v: Vec<f64> = (0..g.len()).map(|k| g.node(k)[0].powi(2)).collect();
        let y = g.interpolate(&v, [0.3, 0.0]);
        // chord between 0.25 and 0.375
        let expect = 0.0625 + (0.3 - 0.25) / 0.125 * (0.140625 - 0.0625);
        assert!((y - expect).abs() < 1e-12);
    }

    #[test]
    fn tail_compression_keeps_the_first_repeated_slice() {
        let mut s = Slices::new(2);
        s.push(&[1.0, 2.0]);
        s.push(&[3.0, 4.0]);
        s.push(&[3.0, 4.0]);
        s.push(&[3.0, 4.0]);
        s.compress_tail();
        assert_eq!(s.stored(), 2);
        assert_eq!(s.get(7), &[3.0, 4.0]);
        let tg = TimeGrid { dt: 0.5, n: 4 };
        assert_eq!(s.at_time(&tg, 0.25, |v| v[0]), 2.0);
    }
}
