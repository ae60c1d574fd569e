//! First-order operators on basic forms in the `w`-weighted `L²` structure.
//!
//! `⟨f₁, f₂⟩_w = Σ w √det g f₁ f₂ · cell`. The codifferential is assembled as
//! the exact discrete adjoint of `d_b` in that pairing (the stencil is
//! antisymmetric under transposition), plus the twist by the harmonic part of
//! `κ_b` when it is present.

use crate::error::{Error, Result};
use crate::field::{sym, sym_len, MetricField, OneForm, ScalarField, SymTensorField};
use crate::geometry::{christoffel_with, dot_at, tensor_dot_at, Christoffel, MetricInfo};
use crate::grid::ChartGrid;
use crate::model::FoliationModel;
use crate::scalar::{ordered_sum, Real};

/// `(d_b f)_i = ∂_i f`.
pub fn d_b<T: Real>(grid: &ChartGrid<T>, f: &[T]) -> OneForm<T> {
    OneForm {
        comps: grid.gradient(f),
    }
}

/// Operator context for one metric/model pair. Holds the inverse metric,
/// volume density and connection so that repeated operator applications do
/// not recompute them.
#[derive(Clone, Debug)]
pub struct BasicCalculus<'a, T> {
    pub g: &'a MetricField<T>,
    pub model: &'a FoliationModel<T>,
    pub info: MetricInfo<T>,
    pub gamma: Christoffel<T>,
    /// `w √det g` per node.
    pub density: Vec<T>,
}

impl<'a, T: Real> BasicCalculus<'a, T> {
    pub fn new(g: &'a MetricField<T>, model: &'a FoliationModel<T>) -> Result<Self> {
        let info = MetricInfo::new(g)?;
        let gamma = christoffel_with(g, &info);
        Self::from_parts(g, model, info, gamma)
    }

    pub fn from_parts(
        g: &'a MetricField<T>,
        model: &'a FoliationModel<T>,
        info: MetricInfo<T>,
        gamma: Christoffel<T>,
    ) -> Result<Self> {
        if g.grid().as_ref() != model.grid().as_ref() {
            return Err(Error::InvalidField("metric and model live on different grids".into()));
        }
        let density = info
            .sqrt_det
            .iter()
            .zip(model.w())
            .map(|(&s, &w)| s * w)
            .collect();
        Ok(Self {
            g,
            model,
            info,
            gamma,
            density,
        })
    }

    #[inline]
    pub fn grid(&self) -> &ChartGrid<T> {
        self.g.grid()
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.g.m()
    }

    pub fn d(&self, f: &[T]) -> OneForm<T> {
        d_b(self.grid(), f)
    }

    /// Nodal `(α, β)_g`.
    pub fn dot(&self, a: &OneForm<T>, b: &OneForm<T>) -> Vec<T> {
        let ar: Vec<&[T]> = a.comps.iter().map(Vec::as_slice).collect();
        let br: Vec<&[T]> = b.comps.iter().map(Vec::as_slice).collect();
        let mut out = vec![T::zero(); self.grid().len()];
        self.grid().fill(&mut out, |node| dot_at(&self.info.inv, node, &ar, &br));
        out
    }

    /// `|κ_b|²_g` per node.
    pub fn kappa_norm2(&self) -> Vec<T> {
        self.dot(self.model.kappa(), self.model.kappa())
    }

    /// `⟨f₁, f₂⟩_w`.
    pub fn inner(&self, a: &[T], b: &[T]) -> T {
        ordered_sum(self.density.iter().zip(a).zip(b).map(|((&r, &x), &y)| r * x * y))
            * self.grid().cell_volume()
    }

    /// `⟨α, β⟩_w`.
    pub fn inner_forms(&self, a: &OneForm<T>, b: &OneForm<T>) -> T {
        let p = self.dot(a, b);
        ordered_sum(self.density.iter().zip(&p).map(|(&r, &x)| r * x)) * self.grid().cell_volume()
    }

    /// `∫ f w dvol`.
    pub fn integrate(&self, f: &[T]) -> T {
        ordered_sum(self.density.iter().zip(f).map(|(&r, &x)| r * x)) * self.grid().cell_volume()
    }

    /// `−(1/(w√g)) ∂_i(w √g g^{ij} α_j)`: the adjoint of `d_b` in `⟨·,·⟩_w`.
    pub fn weighted_divergence_adjoint(&self, a: &OneForm<T>) -> Vec<T> {
        let grid = self.grid();
        let m = self.m();
        let n = grid.len();
        let mut acc = vec![T::zero(); n];
        let mut flux = vec![T::zero(); n];
        for i in 0..m {
            grid.fill(&mut flux, |node| {
                let mut s = T::zero();
                for j in 0..m {
                    s += self.info.inv.at(node, i, j) * a.comps[j][node];
                }
                self.density[node] * s
            });
            let d = grid.diff(&flux, i);
            for (x, y) in acc.iter_mut().zip(&d) {
                *x += *y;
            }
        }
        for (x, &r) in acc.iter_mut().zip(&self.density) {
            *x = -*x / r;
        }
        acc
    }

    /// `δ_b α`: weighted adjoint of `d_b` plus `(κ_harmonic, α)_g`.
    pub fn codifferential(&self, a: &OneForm<T>) -> Vec<T> {
        let mut out = self.weighted_divergence_adjoint(a);
        if !self.model.is_taut() {
            let c = self.model.harmonic();
            let m = self.m();
            for (node, o) in out.iter_mut().enumerate() {
                let mut s = T::zero();
                for i in 0..m {
                    for j in 0..m {
                        s += self.info.inv.at(node, i, j) * c[i] * a.comps[j][node];
                    }
                }
                *o += s;
            }
        }
        out
    }

    /// `Δ_b f = δ_b d_b f` (positive operator).
    pub fn laplacian(&self, f: &[T]) -> Vec<T> {
        self.codifferential(&self.d(f))
    }

    /// `Δ'_b f = −Δ_b f + (κ_b, df)_g`.
    pub fn drift_laplacian(&self, f: &[T]) -> Vec<T> {
        let df = self.d(f);
        let lap = self.codifferential(&df);
        let drift = self.dot(self.model.kappa(), &df);
        lap.iter().zip(&drift).map(|(&l, &k)| k - l).collect()
    }

    /// `(Hess f)_ij = ∂_i∂_j f − Γ^k_ij ∂_k f`.
    pub fn hessian(&self, f: &[T]) -> SymTensorField<T> {
        let grid = self.grid();
        let m = self.m();
        let df = grid.gradient(f);
        let mut out = SymTensorField::zeros(m, grid.len());
        for i in 0..m {
            for j in i..m {
                let ddf = grid.diff(&df[j], i);
                let plane = out.get_mut(i, j);
                grid.fill(plane, |node| {
                    let mut s = ddf[node];
                    for k in 0..m {
                        s -= self.gamma.at(node, k, i, j) * df[k][node];
                    }
                    s
                });
            }
        }
        out
    }

    /// Full covariant derivative `(∇α)_ij = ∂_i α_j − Γ^k_ij α_k`, planes `i·m + j`.
    pub fn nabla(&self, a: &OneForm<T>) -> Vec<Vec<T>> {
        let grid = self.grid();
        let m = self.m();
        let mut out = Vec::with_capacity(m * m);
        for i in 0..m {
            for j in 0..m {
                let mut d = grid.diff(&a.comps[j], i);
                for (node, x) in d.iter_mut().enumerate() {
                    for k in 0..m {
                        *x -= self.gamma.at(node, k, i, j) * a.comps[k][node];
                    }
                }
                out.push(d);
            }
        }
        out
    }

    /// Symmetrized `½((∇α)_ij + (∇α)_ji)`.
    pub fn nabla_sym(&self, a: &OneForm<T>) -> SymTensorField<T> {
        let m = self.m();
        let full = self.nabla(a);
        symmetrize(m, &full)
    }

    /// `(div v)_j = g^{ik}(∂_i v_kj − Γ^p_ik v_pj − Γ^p_ij v_kp)`.
    pub fn div_sym(&self, v: &SymTensorField<T>) -> OneForm<T> {
        let grid = self.grid();
        let m = self.m();
        // dv[i * k + c] = ∂_i v_c
        let k = sym_len(m);
        let dv: Vec<Vec<T>> = (0..m)
            .flat_map(|i| v.comps.iter().map(move |c| (i, c)))
            .map(|(i, c)| grid.diff(c, i))
            .collect();
        let planes = grid.fill_planes(m, |node, out| {
            for (j, o) in out.iter_mut().enumerate() {
                let mut s = T::zero();
                for i in 0..m {
                    for kk in 0..m {
                        let mut t = dv[i * k + sym(m, kk, j)][node];
                        for p in 0..m {
                            t -= self.gamma.at(node, p, i, kk) * v.at(node, p, j)
                                + self.gamma.at(node, p, i, j) * v.at(node, kk, p);
                        }
                        s += self.info.inv.at(node, i, kk) * t;
                    }
                }
                *o = s;
            }
        });
        OneForm { comps: planes }
    }

    /// `δ^T κ_b = g^{ij}(∇κ_b)_ij`: plain trace divergence, no weight, no sign flip.
    pub fn delta_t_kappa(&self) -> Vec<T> {
        let m = self.m();
        let full = self.nabla(self.model.kappa());
        let mut out = vec![T::zero(); self.grid().len()];
        self.grid().fill(&mut out, |node| {
            let mut s = T::zero();
            for i in 0..m {
                for j in 0..m {
                    s += self.info.inv.at(node, i, j) * full[i * m + j][node];
                }
            }
            s
        });
        out
    }

    /// Nodal `(u, v)_g` of two symmetric tensors.
    pub fn tensor_dot(&self, u: &SymTensorField<T>, v: &SymTensorField<T>) -> Vec<T> {
        let mut out = vec![T::zero(); self.grid().len()];
        self.grid().fill(&mut out, |node| {
            tensor_dot_at(&self.info.inv, node, |i, j| u.at(node, i, j), |a, b| v.at(node, a, b))
        });
        out
    }

    /// `g^{ij} v_ij` per node.
    pub fn trace(&self, v: &SymTensorField<T>) -> Vec<T> {
        let m = self.m();
        let mut out = vec![T::zero(); self.grid().len()];
        self.grid().fill(&mut out, |node| {
            let mut s = T::zero();
            for i in 0..m {
                for j in 0..m {
                    s += self.info.inv.at(node, i, j) * v.at(node, i, j);
                }
            }
            s
        });
        out
    }

    /// Relative defect `|LHS − RHS| / (1 + |LHS|)` of the integration-by-parts
    /// identity `∫(div v, Y) = ∫(v, Y⊙κ_b) − ∫(v, ∇Y)`, all integrals weighted.
    pub fn ibp_residual(&self, v: &SymTensorField<T>, y: &OneForm<T>) -> Result<T> {
        self.model.require_taut("the integration-by-parts identity")?;
        let m = self.m();
        let lhs = self.inner_forms(&self.div_sym(v), y);
        let kappa = self.model.kappa();
        let half = T::lit(0.5);
        let mut odot = SymTensorField::zeros(m, self.grid().len());
        for i in 0..m {
            for j in i..m {
                let plane = odot.get_mut(i, j);
                for (node, x) in plane.iter_mut().enumerate() {
                    *x = half * (y.comps[i][node] * kappa.comps[j][node] + kappa.comps[i][node] * y.comps[j][node]);
                }
            }
        }
        let first = self.integrate(&self.tensor_dot(v, &odot));
        let second = self.integrate(&self.tensor_dot(v, &self.nabla_sym(y)));
        let rhs = first - second;
        Ok((lhs - rhs).abs() / (T::one() + lhs.abs()))
    }
}

/// Symmetric part of a full `m×m` plane set.
pub fn symmetrize<T: Real>(m: usize, full: &[Vec<T>]) -> SymTensorField<T> {
    let n = full[0].len();
    let half = T::lit(0.5);
    let mut out = SymTensorField::zeros(m, n);
    for i in 0..m {
        for j in i..m {
            let (a, b) = (&full[i * m + j], &full[j * m + i]);
            let plane = out.get_mut(i, j);
            for node in 0..n {
                plane[node] = if i == j { a[node] } else { half * (a[node] + b[node]) };
            }
        }
    }
    out
}

/// `δ_b α` for a metric/model pair.
pub fn delta_b<T: Real>(a: &OneForm<T>, g: &MetricField<T>, model: &FoliationModel<T>) -> Result<ScalarField<T>> {
    Ok(ScalarField(BasicCalculus::new(g, model)?.codifferential(a)))
}

/// `Δ_b f = δ_b d_b f`.
pub fn laplacian_b<T: Real>(f: &[T], g: &MetricField<T>, model: &FoliationModel<T>) -> Result<ScalarField<T>> {
    Ok(ScalarField(BasicCalculus::new(g, model)?.laplacian(f)))
}

/// `Δ'_b f = −Δ_b f + (κ_b, df)_g`.
pub fn drift_laplacian<T: Real>(
    f: &[T],
    g: &MetricField<T>,
    model: &FoliationModel<T>,
) -> Result<ScalarField<T>> {
    Ok(ScalarField(BasicCalculus::new(g, model)?.drift_laplacian(f)))
}

/// Covariant Hessian of a basic function.
pub fn hess_b<T: Real>(f: &[T], g: &MetricField<T>) -> Result<SymTensorField<T>> {
    let model = FoliationModel::taut(g.grid().clone());
    Ok(BasicCalculus::new(g, &model)?.hessian(f))
}

/// Divergence of a symmetric 2-tensor.
pub fn div_sym<T: Real>(v: &SymTensorField<T>, g: &MetricField<T>) -> Result<OneForm<T>> {
    let model = FoliationModel::taut(g.grid().clone());
    Ok(BasicCalculus::new(g, &model)?.div_sym(v))
}

/// Covariant derivative of a 1-form: `(symmetrized, full)`.
pub fn nabla_oneform<T: Real>(a: &OneForm<T>, g: &MetricField<T>) -> Result<(SymTensorField<T>, Vec<Vec<T>>)> {
    let model = FoliationModel::taut(g.grid().clone());
    let calc = BasicCalculus::new(g, &model)?;
    let full = calc.nabla(a);
    Ok((symmetrize(g.m(), &full), full))
}

/// `δ^T κ_b = g^{ij}(∇κ_b)_ij`.
pub fn delta_t_kappa<T: Real>(model: &FoliationModel<T>, g: &MetricField<T>) -> Result<ScalarField<T>> {
    Ok(ScalarField(BasicCalculus::new(g, model)?.delta_t_kappa()))
}

/// Integration-by-parts defect for `(v, Y)`; exact mode only.
pub fn ibp_residual<T: Real>(
    v: &SymTensorField<T>,
    y: &OneForm<T>,
    g: &MetricField<T>,
    model: &FoliationModel<T>,
) -> Result<T> {
    BasicCalculus::new(g, model)?.ibp_residual(v, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;
    use std::sync::Arc;

    fn setup(n: usize) -> (MetricField<f64>, FoliationModel<f64>) {
        let grid = Arc::new(ChartGrid::unit(2, n).unwrap());
        (MetricField::identity(grid.clone()), FoliationModel::taut(grid))
    }

    #[test]
    fn constants_are_annihilated() {
        let (g, model) = setup(16);
        let calc = BasicCalculus::new(&g, &model).unwrap();
        let f = vec![2.5; g.grid().len()];
        assert!(calc.d(&f).max_abs() == 0.0);
        assert!(calc.laplacian(&f).iter().all(|x| *x == 0.0));
        assert!(calc.drift_laplacian(&f).iter().all(|x| *x == 0.0));
        assert!(calc.hessian(&f).max_abs() == 0.0);
        assert!(calc.codifferential(&OneForm::zeros(2, g.grid().len())).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn flat_laplacian_of_sine_mode() {
        let (g, model) = setup(64);
        let calc = BasicCalculus::new(&g, &model).unwrap();
        let f = g.grid().sample(|y| (TAU * y[0]).sin());
        let lap = calc.laplacian(&f);
        let err = lap
            .iter()
            .zip(&f)
            .map(|(l, s)| (l - TAU * TAU * s).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3 * TAU * TAU, "err {err}");
    }

    #[test]
    fn untwisted_drift_is_minus_laplacian() {
        let (g, model) = setup(16);
        let calc = BasicCalculus::new(&g, &model).unwrap();
        let f = g.grid().sample(|y| (TAU * y[0]).sin() * (TAU * y[1]).cos());
        let a = calc.drift_laplacian(&f);
        let b = calc.laplacian(&f);
        assert!(a.iter().zip(&b).all(|(x, y)| *x == -*y));
    }

    #[test]
    fn metric_is_divergence_free() {
        let grid = Arc::new(ChartGrid::unit(2, 32).unwrap());
        let u = grid.sample(|y: &[f64]| 0.1 * (TAU * y[0]).sin() * (TAU * y[1]).cos());
        let g = MetricField::conformal(grid.clone(), &u).unwrap();
        let model = FoliationModel::taut(grid);
        let calc = BasicCalculus::new(&g, &model).unwrap();
        let div = calc.div_sym(&g.tensor().scaled(3.0));
        assert!(div.max_abs() < 1e-12, "{}", div.max_abs());
    }

    #[test]
    fn twisted_ibp_is_refused() {
        let grid = Arc::new(ChartGrid::unit(2, 8).unwrap());
        let g = MetricField::identity(grid.clone());
        let model = FoliationModel::from_potential(grid.clone(), vec![0.0; grid.len()], vec![0.5, 0.0]).unwrap();
        let v = SymTensorField::zeros(2, grid.len());
        let y = OneForm::zeros(2, grid.len());
        assert!(matches!(ibp_residual(&v, &y, &g, &model), Err(Error::ModeUnsupported(_))));
    }
}
