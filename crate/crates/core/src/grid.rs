//! Periodic chart grids and the centered fourth-order difference stencil.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Smallest admissible node count per axis.
pub const MIN_DIM: usize = 8;

/// Node-count threshold above which nodewise loops run on the rayon pool.
const PAR_THRESHOLD: usize = 1 << 14;

/// A periodic box chart of the leaf space: `m` transverse axes, `dims[a]`
/// nodes along axis `a`, chart length `periods[a]`. Nodes are numbered
/// row-major (last axis fastest) and all index arithmetic wraps.
#[derive(Clone, Debug, PartialEq)]
pub struct ChartGrid<T> {
    dims: Vec<usize>,
    periods: Vec<T>,
    strides: Vec<usize>,
    len: usize,
}

impl<T: Real> ChartGrid<T> {
    pub fn new(dims: &[usize], periods: &[T]) -> Result<Self> {
        let m = dims.len();
        if !(2..=3).contains(&m) {
            return Err(Error::InvalidGrid(format!(
                "transverse dimension must be 2 or 3, got {m}"
            )));
        }
        if periods.len() != m {
            return Err(Error::InvalidGrid(format!(
                "{} periods given for {m} axes",
                periods.len()
            )));
        }
        if let Some(&n) = dims.iter().find(|&&n| n < MIN_DIM) {
            return Err(Error::InvalidGrid(format!(
                "every axis needs at least {MIN_DIM} nodes, got {n}"
            )));
        }
        if periods.iter().any(|&p| !(p > T::zero()) || !p.is_finite()) {
            return Err(Error::InvalidGrid("periods must be positive and finite".into()));
        }
        let mut strides = vec![1; m];
        for a in (0..m - 1).rev() {
            strides[a] = strides[a + 1] * dims[a + 1];
        }
        Ok(Self {
            dims: dims.to_vec(),
            periods: periods.to_vec(),
            strides,
            len: dims.iter().product(),
        })
    }

    /// `n` nodes on every axis of the unit torus.
    pub fn unit(m: usize, n: usize) -> Result<Self> {
        Self::new(&vec![n; m], &vec![T::one(); m])
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.dims.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn periods(&self) -> &[T] {
        &self.periods
    }

    #[inline]
    pub fn spacing(&self, axis: usize) -> T {
        self.periods[axis] / T::count(self.dims[axis])
    }

    pub fn min_spacing(&self) -> T {
        (0..self.m())
            .map(|a| self.spacing(a))
            .fold(T::infinity(), T::min)
    }

    /// Volume of one grid cell; the quadrature weight of every node.
    pub fn cell_volume(&self) -> T {
        (0..self.m()).fold(T::one(), |acc, a| acc * self.spacing(a))
    }

    /// Total chart volume (flat, unweighted).
    pub fn chart_volume(&self) -> T {
        self.periods.iter().fold(T::one(), |acc, &p| acc * p)
    }

    /// Index of `node` along `axis`.
    #[inline]
    pub fn index_along(&self, node: usize, axis: usize) -> usize {
        (node / self.strides[axis]) % self.dims[axis]
    }

    /// Coordinate `y^axis` of a node.
    #[inline]
    pub fn coordinate(&self, node: usize, axis: usize) -> T {
        T::count(self.index_along(node, axis)) * self.spacing(axis)
    }

    pub fn coordinates(&self, node: usize) -> Vec<T> {
        (0..self.m()).map(|a| self.coordinate(node, a)).collect()
    }

    /// Node reached from `node` by moving `offset` steps along `axis`, wrapping.
    #[inline]
    pub fn shifted(&self, node: usize, axis: usize, offset: isize) -> usize {
        let n = self.dims[axis] as isize;
        let i = self.index_along(node, axis) as isize;
        let j = (i + offset).rem_euclid(n);
        (node as isize + (j - i) * self.strides[axis] as isize) as usize
    }

    /// Samples a closure of the node coordinates.
    pub fn sample(&self, f: impl Fn(&[T]) -> T + Sync) -> Vec<T> {
        let mut out = vec![T::zero(); self.len];
        self.fill(&mut out, |node| f(&self.coordinates(node)));
        out
    }

    /// Fills `out[node] = f(node)`, in parallel for large grids.
    pub fn fill(&self, out: &mut [T], f: impl Fn(usize) -> T + Sync) {
        debug_assert_eq!(out.len(), self.len);
        if self.len >= PAR_THRESHOLD {
            out.par_iter_mut()
                .with_min_len(512)
                .enumerate()
                .for_each(|(node, o)| *o = f(node));
        } else {
            out.iter_mut().enumerate().for_each(|(node, o)| *o = f(node));
        }
    }

    /// Evaluates a per-node closure producing `k` values, written as `k` planes.
    pub fn fill_planes(&self, k: usize, f: impl Fn(usize, &mut [T]) + Sync) -> Vec<Vec<T>> {
        let mut packed = vec![T::zero(); self.len * k];
        if self.len >= PAR_THRESHOLD {
            packed
                .par_chunks_mut(k)
                .with_min_len(256)
                .enumerate()
                .for_each(|(node, chunk)| f(node, chunk));
        } else {
            packed
                .chunks_mut(k)
                .enumerate()
                .for_each(|(node, chunk)| f(node, chunk));
        }
        let mut planes = vec![vec![T::zero(); self.len]; k];
        for (node, chunk) in packed.chunks(k).enumerate() {
            for (c, &v) in chunk.iter().enumerate() {
                planes[c][node] = v;
            }
        }
        planes
    }

    /// Centered fourth-order periodic difference along `axis`:
    /// `(f[i-2] - 8 f[i-1] + 8 f[i+1] - f[i+2]) / (12 h)`.
    pub fn diff_into(&self, src: &[T], axis: usize, dst: &mut [T]) {
        debug_assert_eq!(src.len(), self.len);
        let n = self.dims[axis];
        let stride = self.strides[axis];
        let inv = T::one() / (T::lit(12.0) * self.spacing(axis));
        let eight = T::lit(8.0);
        if stride == 1 {
            for (s, d) in src.chunks_exact(n).zip(dst.chunks_exact_mut(n)) {
                for (w, o) in s.windows(5).zip(&mut d[2..n - 2]) {
                    *o = (w[0] - w[4] + eight * (w[3] - w[1])) * inv;
                }
                for i in [0, 1, n - 2, n - 1] {
                    let at = |k: usize| s[(i + k) % n];
                    d[i] = (at(n - 2) - at(2) + eight * (at(1) - at(n - 1))) * inv;
                }
            }
            return;
        }
        let offsets: Vec<[usize; 5]> = (0..n)
            .map(|i| [n - 2, n - 1, 0, 1, 2].map(|k| (i + k) % n * stride))
            .collect();
        for start in (0..self.len).step_by(n * stride) {
            for &[m2, m1, row, p1, p2] in &offsets {
                for j in start..start + stride {
                    dst[row + j] = (src[m2 + j] - src[p2 + j] + eight * (src[p1 + j] - src[m1 + j])) * inv;
                }
            }
        }
    }

    pub fn diff(&self, src: &[T], axis: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.len];
        self.diff_into(src, axis, &mut out);
        out
    }

    /// All first partials of a scalar plane: `out[a] = ∂_a src`.
    pub fn gradient(&self, src: &[T]) -> Vec<Vec<T>> {
        (0..self.m()).map(|a| self.diff(src, a)).collect()
    }

    /// Cyclic translation of a nodal field by whole grid steps.
    pub fn translate(&self, src: &[T], shifts: &[isize]) -> Vec<T> {
        let mut out = vec![T::zero(); self.len];
        for (node, v) in src.iter().enumerate() {
            let mut target = node;
            for (a, &s) in shifts.iter().enumerate() {
                target = self.shifted(target, a, s);
            }
            out[target] = *v;
        }
        out
    }

    /// Square of the largest symbol of the stencil along one axis, times `1/h²`.
    /// This is the spectral radius of `D_a^T D_a`.
    pub fn stencil_radius(&self, axis: usize) -> T {
        let h = self.spacing(axis);
        let s = T::lit(stencil_symbol_max());
        s * s / (h * h)
    }

    /// Symbol `σ(θ)·h` of the difference stencil at wavenumber index `k`
    /// (the stencil maps `e^{iθj}` to `i σ(θ) e^{iθj}`).
    pub fn stencil_symbol(&self, axis: usize, k: usize) -> T {
        let theta = T::TAU() * T::count(k) / T::count(self.dims[axis]);
        (T::lit(8.0) * theta.sin() - (theta + theta).sin()) / (T::lit(6.0) * self.spacing(axis))
    }
}

/// `max_θ (8 sin θ - sin 2θ)/6`, attained at `cos θ = 1 - √6/2`.
pub(crate) fn stencil_symbol_max() -> f64 {
    let c = 1.0 - 6f64.sqrt() / 2.0;
    (1.0 - c * c).sqrt() * (4.0 - c) / 3.0
}
