//! The foliation data carried by a leaf-space chart.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::OneForm;
use crate::grid::ChartGrid;
use crate::scalar::Real;

/// Leaf-space model of a Riemannian foliation: the chart, the leaf-volume
/// density `w > 0`, and the basic mean curvature form
/// `κ_b = dh + Σ c_α dy^α` with `h = −log w`.
///
/// `κ_b` is a fixed 1-form; flows change only the metric it is measured with.
#[derive(Clone, Debug, PartialEq)]
pub struct FoliationModel<T> {
    grid: Arc<ChartGrid<T>>,
    w: Vec<T>,
    h: Vec<T>,
    harmonic: Vec<T>,
    kappa: OneForm<T>,
}

impl<T: Real> FoliationModel<T> {
    /// Minimal leaves of constant volume: `w ≡ 1`, `κ_b = 0`.
    pub fn taut(grid: Arc<ChartGrid<T>>) -> Self {
        let n = grid.len();
        let m = grid.m();
        Self::assemble(grid, vec![T::one(); n], vec![T::zero(); n], vec![T::zero(); m])
    }

    /// Exact part given by its potential `h`; `w = e^{−h}`.
    pub fn from_potential(grid: Arc<ChartGrid<T>>, h: Vec<T>, harmonic: Vec<T>) -> Result<Self> {
        let w = h.iter().map(|&x| (-x).exp()).collect();
        Self::from_parts(grid, w, h, harmonic)
    }

    /// Exact part given by the density; `h = −log w`.
    pub fn from_density(grid: Arc<ChartGrid<T>>, w: Vec<T>, harmonic: Vec<T>) -> Result<Self> {
        if let Some(node) = w.iter().position(|&x| !(x > T::zero())) {
            return Err(Error::InvalidField(format!(
                "leaf density must be positive (node {node})"
            )));
        }
        let h = w.iter().map(|&x| -x.ln()).collect();
        Self::from_parts(grid, w, h, harmonic)
    }

    /// Builds from stored density and potential, checking `h = −log w`.
    pub fn from_parts(grid: Arc<ChartGrid<T>>, w: Vec<T>, h: Vec<T>, harmonic: Vec<T>) -> Result<Self> {
        let n = grid.len();
        if w.len() != n || h.len() != n {
            return Err(Error::InvalidField("density/potential length mismatch".into()));
        }
        if harmonic.len() != grid.m() {
            return Err(Error::InvalidField(format!(
                "{} harmonic coefficients for {} axes",
                harmonic.len(),
                grid.m()
            )));
        }
        if harmonic.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidField("non-finite harmonic coefficient".into()));
        }
        let tol = T::lit(1e-10).max(T::lit(64.0) * T::epsilon());
        for node in 0..n {
            if !(w[node] > T::zero()) || !w[node].is_finite() || !h[node].is_finite() {
                return Err(Error::InvalidField(format!(
                    "leaf density must be positive and finite (node {node})"
                )));
            }
            if (h[node] + w[node].ln()).abs() > tol * (T::one() + h[node].abs()) {
                return Err(Error::InvalidField(format!(
                    "potential is not -log of the density at node {node}"
                )));
            }
        }
        Ok(Self::assemble(grid, w, h, harmonic))
    }

    fn assemble(grid: Arc<ChartGrid<T>>, w: Vec<T>, h: Vec<T>, harmonic: Vec<T>) -> Self {
        let comps = (0..grid.m())
            .map(|a| grid.diff(&h, a).into_iter().map(|x| x + harmonic[a]).collect())
            .collect();
        Self {
            grid,
            w,
            h,
            harmonic,
            kappa: OneForm { comps },
        }
    }

    pub fn grid(&self) -> &Arc<ChartGrid<T>> {
        &self.grid
    }

    pub fn w(&self) -> &[T] {
        &self.w
    }

    /// Potential of the exact part of `κ_b`.
    pub fn h(&self) -> &[T] {
        &self.h
    }

    pub fn harmonic(&self) -> &[T] {
        &self.harmonic
    }

    /// `κ_b` as a nodal 1-form.
    pub fn kappa(&self) -> &OneForm<T> {
        &self.kappa
    }

    /// Taut exactly when the class `[κ_b]` is trivial, i.e. no harmonic part.
    pub fn is_taut(&self) -> bool {
        self.harmonic.iter().all(|c| c.is_zero())
    }

    /// `κ_b ≡ 0` identically (taut with constant leaf volume).
    pub fn kappa_vanishes(&self) -> bool {
        self.is_taut() && self.kappa.comps.iter().flatten().all(|x| x.is_zero())
    }

    /// Largest component of the discrete `dκ_b`, `∂_iκ_j − ∂_jκ_i`.
    pub fn closedness_residual(&self) -> T {
        let m = self.grid.m();
        let mut worst = T::zero();
        for i in 0..m {
            for j in i + 1..m {
                let a = self.grid.diff(&self.kappa.comps[j], i);
                let b = self.grid.diff(&self.kappa.comps[i], j);
                for (x, y) in a.iter().zip(&b) {
                    worst = worst.max((*x - *y).abs());
                }
            }
        }
        worst
    }

    /// Fails with [`Error::ModeUnsupported`] when `κ_b` has a harmonic part.
    pub fn require_taut(&self, what: &str) -> Result<()> {
        if self.is_taut() {
            Ok(())
        } else {
            Err(Error::ModeUnsupported(format!(
                "{what} requires a trivial mean-curvature class (harmonic part of kappa_b must vanish)"
            )))
        }
    }
}
