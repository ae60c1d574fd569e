//! Nodal fields on a chart grid: functions, 1-forms, symmetric 2-tensors and
//! the transverse metric.

use std::ops::{Deref, DerefMut};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::ChartGrid;
use crate::scalar::Real;

/// Number of independent components of a symmetric `m×m` tensor.
#[inline]
pub const fn sym_len(m: usize) -> usize {
    m * (m + 1) / 2
}

/// Packed upper-triangle position of `(i, j)`; symmetric in its arguments.
#[inline]
pub const fn sym(m: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * m - (i * i.saturating_sub(1)) / 2 + (j - i)
}

/// A basic function: one value per node.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField<T>(pub Vec<T>);

impl<T: Real> ScalarField<T> {
    pub fn zeros(len: usize) -> Self {
        Self(vec![T::zero(); len])
    }

    pub fn constant(len: usize, c: T) -> Self {
        Self(vec![c; len])
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self(self.0.iter().map(|&x| f(x)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn max_abs(&self) -> T {
        self.0.iter().fold(T::zero(), |acc, x| acc.max(x.abs()))
    }

    pub fn check_finite(&self, what: &'static str) -> Result<()> {
        match self.0.iter().position(|x| !x.is_finite()) {
            Some(node) => Err(Error::NonFinite { what, node }),
            None => Ok(()),
        }
    }
}

impl<T> Deref for ScalarField<T> {
    type Target = Vec<T>;
    fn deref(&self) -> &Vec<T> {
        &self.0
    }
}

impl<T> DerefMut for ScalarField<T> {
    fn deref_mut(&mut self) -> &mut Vec<T> {
        &mut self.0
    }
}

impl<T> From<Vec<T>> for ScalarField<T> {
    fn from(v: Vec<T>) -> Self {
        Self(v)
    }
}

/// A basic 1-form `α_i dy^i`, stored as one plane per component.
#[derive(Clone, Debug, PartialEq)]
pub struct OneForm<T> {
    pub comps: Vec<Vec<T>>,
}

impl<T: Real> OneForm<T> {
    pub fn zeros(m: usize, len: usize) -> Self {
        Self {
            comps: vec![vec![T::zero(); len]; m],
        }
    }

    pub fn m(&self) -> usize {
        self.comps.len()
    }

    pub fn len(&self) -> usize {
        self.comps.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn scaled(&self, c: T) -> Self {
        Self {
            comps: self
                .comps
                .iter()
                .map(|p| p.iter().map(|&x| x * c).collect())
                .collect(),
        }
    }

    pub fn max_abs(&self) -> T {
        self.comps
            .iter()
            .flatten()
            .fold(T::zero(), |acc, x| acc.max(x.abs()))
    }
}

/// A symmetric basic 2-tensor `v_ij`, packed upper triangle, one plane per
/// component. Symmetry is exact by storage.
#[derive(Clone, Debug, PartialEq)]
pub struct SymTensorField<T> {
    m: usize,
    pub comps: Vec<Vec<T>>,
}

impl<T: Real> SymTensorField<T> {
    pub fn zeros(m: usize, len: usize) -> Self {
        Self {
            m,
            comps: vec![vec![T::zero(); len]; sym_len(m)],
        }
    }

    pub fn from_planes(m: usize, comps: Vec<Vec<T>>) -> Result<Self> {
        if comps.len() != sym_len(m) {
            return Err(Error::InvalidField(format!(
                "symmetric {m}-tensor needs {} planes, got {}",
                sym_len(m),
                comps.len()
            )));
        }
        let len = comps[0].len();
        if comps.iter().any(|p| p.len() != len) {
            return Err(Error::InvalidField("ragged tensor planes".into()));
        }
        Ok(Self { m, comps })
    }

    /// Identity tensor `δ_ij` at every node.
    pub fn identity(m: usize, len: usize) -> Self {
        let mut t = Self::zeros(m, len);
        for i in 0..m {
            t.comps[sym(m, i, i)].fill(T::one());
        }
        t
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.comps[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> &[T] {
        &self.comps[sym(self.m, i, j)]
    }

    #[inline]
    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut Vec<T> {
        let k = sym(self.m, i, j);
        &mut self.comps[k]
    }

    #[inline]
    pub fn at(&self, node: usize, i: usize, j: usize) -> T {
        self.comps[sym(self.m, i, j)][node]
    }

    /// Packed components at one node.
    pub fn node_into(&self, node: usize, out: &mut [T]) {
        for (o, c) in out.iter_mut().zip(&self.comps) {
            *o = c[node];
        }
    }

    pub fn node(&self, node: usize) -> Vec<T> {
        self.comps.iter().map(|p| p[node]).collect()
    }

    pub fn scaled(&self, c: T) -> Self {
        Self {
            m: self.m,
            comps: self
                .comps
                .iter()
                .map(|p| p.iter().map(|&x| x * c).collect())
                .collect(),
        }
    }

    /// `self + c·other`.
    pub fn axpy(&self, c: T, other: &Self) -> Self {
        Self {
            m: self.m,
            comps: self
                .comps
                .iter()
                .zip(&other.comps)
                .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| x + c * y).collect())
                .collect(),
        }
    }

    pub fn max_abs(&self) -> T {
        self.comps
            .iter()
            .flatten()
            .fold(T::zero(), |acc, x| acc.max(x.abs()))
    }
}

/// Determinant and inverse of a packed symmetric `m×m` matrix (`m ∈ {2,3}`).
pub fn sym_det_inverse<T: Real>(m: usize, a: &[T], inv: &mut [T]) -> T {
    match m {
        2 => {
            let (a00, a01, a11) = (a[0], a[1], a[2]);
            let det = a00 * a11 - a01 * a01;
            inv[0] = a11 / det;
            inv[1] = -a01 / det;
            inv[2] = a00 / det;
            det
        }
        3 => {
            let (a00, a01, a02, a11, a12, a22) = (a[0], a[1], a[2], a[3], a[4], a[5]);
            let c00 = a11 * a22 - a12 * a12;
            let c01 = a02 * a12 - a01 * a22;
            let c02 = a01 * a12 - a02 * a11;
            let c11 = a00 * a22 - a02 * a02;
            let c12 = a01 * a02 - a00 * a12;
            let c22 = a00 * a11 - a01 * a01;
            let det = a00 * c00 + a01 * c01 + a02 * c02;
            inv[0] = c00 / det;
            inv[1] = c01 / det;
            inv[2] = c02 / det;
            inv[3] = c11 / det;
            inv[4] = c12 / det;
            inv[5] = c22 / det;
            det
        }
        _ => unreachable!("transverse dimension is 2 or 3"),
    }
}

/// Positive definiteness of a packed symmetric matrix by leading minors.
pub fn sym_is_positive_definite<T: Real>(m: usize, a: &[T]) -> bool {
    let mut inv = [T::zero(); 6];
    let minor1 = a[0];
    let minor2 = a[0] * a[sym(m, 1, 1)] - a[1] * a[1];
    let full = sym_det_inverse(m, a, &mut inv[..sym_len(m)]);
    minor1 > T::zero() && minor2 > T::zero() && full > T::zero()
}

/// Largest eigenvalue of a packed symmetric `m×m` matrix, `m ∈ {2, 3}`.
pub fn sym_max_eigenvalue<T: Real>(m: usize, a: &[T]) -> T {
    let half = T::lit(0.5);
    if m == 2 {
        let (p, q, r) = (a[0], a[1], a[2]);
        let mean = half * (p + r);
        let gap = half * (p - r);
        return mean + (gap * gap + q * q).sqrt();
    }
    // packed order: 00 01 02 11 12 22
    let (a00, a01, a02, a11, a12, a22) = (a[0], a[1], a[2], a[3], a[4], a[5]);
    let p1 = a01 * a01 + a02 * a02 + a12 * a12;
    let three = T::lit(3.0);
    let q = (a00 + a11 + a22) / three;
    let p2 = (a00 - q).powi(2) + (a11 - q).powi(2) + (a22 - q).powi(2) + T::lit(2.0) * p1;
    if p2.is_zero() {
        return q;
    }
    let p = (p2 / T::lit(6.0)).sqrt();
    let (b00, b11, b22) = ((a00 - q) / p, (a11 - q) / p, (a22 - q) / p);
    let (b01, b02, b12) = (a01 / p, a02 / p, a12 / p);
    let det = b00 * (b11 * b22 - b12 * b12) - b01 * (b01 * b22 - b12 * b02) + b02 * (b01 * b12 - b11 * b02);
    let r = (half * det).max(-T::one()).min(T::one());
    q + T::lit(2.0) * p * (r.acos() / three).cos()
}

/// Transverse metric `g^T_ij`: a symmetric positive-definite tensor per node.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricField<T> {
    grid: Arc<ChartGrid<T>>,
    g: SymTensorField<T>,
}

impl<T: Real> MetricField<T> {
    /// Validates finiteness and positive definiteness at every node.
    pub fn new(grid: Arc<ChartGrid<T>>, g: SymTensorField<T>) -> Result<Self> {
        if g.m() != grid.m() || g.len() != grid.len() {
            return Err(Error::InvalidField(format!(
                "metric shape ({} axes, {} nodes) does not match grid ({} axes, {} nodes)",
                g.m(),
                g.len(),
                grid.m(),
                grid.len()
            )));
        }
        let m = grid.m();
        for node in 0..grid.len() {
            let mut buf = [T::zero(); 6];
            let a = &mut buf[..sym_len(m)];
            g.node_into(node, a);
            if a.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    what: "metric",
                    node,
                });
            }
            if !sym_is_positive_definite(m, &a) {
                return Err(Error::InvalidField(format!(
                    "metric not positive definite at node {node}"
                )));
            }
        }
        Ok(Self { grid, g })
    }

    /// Builds without validation; the flow engine validates through the
    /// determinant floor instead.
    pub(crate) fn new_unchecked(grid: Arc<ChartGrid<T>>, g: SymTensorField<T>) -> Self {
        Self { grid, g }
    }

    pub fn identity(grid: Arc<ChartGrid<T>>) -> Self {
        let g = SymTensorField::identity(grid.m(), grid.len());
        Self { grid, g }
    }

    /// `e^{2u} δ_ij`.
    pub fn conformal(grid: Arc<ChartGrid<T>>, u: &[T]) -> Result<Self> {
        let m = grid.m();
        let mut g = SymTensorField::zeros(m, grid.len());
        for i in 0..m {
            let plane = g.get_mut(i, i);
            for (x, &ui) in plane.iter_mut().zip(u) {
                *x = (ui + ui).exp();
            }
        }
        Self::new(grid, g)
    }

    pub fn grid(&self) -> &Arc<ChartGrid<T>> {
        &self.grid
    }

    pub fn tensor(&self) -> &SymTensorField<T> {
        &self.g
    }

    pub fn into_tensor(self) -> SymTensorField<T> {
        self.g
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.grid.m()
    }

    /// `c·g`.
    pub fn scaled(&self, c: T) -> Result<Self> {
        Self::new(self.grid.clone(), self.g.scaled(c))
    }

    /// `g + c·v`, validated.
    pub fn perturbed(&self, c: T, v: &SymTensorField<T>) -> Result<Self> {
        Self::new(self.grid.clone(), self.g.axpy(c, v))
    }

    /// Re-imposes the storage invariant after an update; with packed storage
    /// this is only a finiteness check.
    pub fn check_finite(&self) -> Result<()> {
        for p in &self.g.comps {
            if let Some(node) = p.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    what: "metric",
                    node,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packed_index_layout() {
        assert_eq!([sym(2, 0, 0), sym(2, 0, 1), sym(2, 1, 0), sym(2, 1, 1)], [0, 1, 1, 2]);
        let idx: Vec<_> = (0..3)
            .flat_map(|i| (i..3).map(move |j| sym(3, i, j)))
            .collect();
        assert_eq!(idx, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(sym(3, 2, 1), 4);
    }

    #[test]
    fn inverse_of_3x3() {
        let a = [4.0, 1.0, 0.5, 3.0, 0.2, 2.0];
        let mut inv = [0.0; 6];
        let det = sym_det_inverse(3, &a, &mut inv);
        let full = |p: &[f64], i: usize, j: usize| p[sym(3, i, j)];
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = (0..3).map(|k| full(&a, i, k) * full(&inv, k, j)).sum();
                assert!((s - if i == j { 1.0 } else { 0.0 }).abs() < 1e-14);
            }
        }
        assert!((det - (4.0 * (6.0 - 0.04) - 1.0 * (2.0 - 0.1) + 0.5 * (0.2 - 1.5))).abs() < 1e-14);
    }

    #[test]
    fn rejects_indefinite_metric() {
        let grid = Arc::new(ChartGrid::<f64>::unit(2, 8).unwrap());
        let mut g = SymTensorField::identity(2, grid.len());
        g.get_mut(0, 1)[5] = 2.0;
        assert!(MetricField::new(grid.clone(), g).is_err());
        let mut g = SymTensorField::identity(2, grid.len());
        g.get_mut(1, 1)[3] = f64::NAN;
        assert!(matches!(
            MetricField::new(grid, g),
            Err(Error::NonFinite { node: 3, .. })
        ));
    }
}
