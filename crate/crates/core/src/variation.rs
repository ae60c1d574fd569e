//! First variations of the entropy and of the curvature, analytic against
//! finite-difference.

use serde::Serialize;

use crate::calculus::BasicCalculus;
use crate::entropy::f_t;
use crate::error::Result;
use crate::field::{MetricField, ScalarField, SymTensorField};
use crate::geometry::{ricci_from, MetricInfo};
use crate::model::FoliationModel;
use crate::scalar::Real;

/// A metric perturbation `∂g/∂t = v` and the step sizes used to difference along it.
#[derive(Clone, Debug)]
pub struct PerturbationSpec<T> {
    pub v: SymTensorField<T>,
    pub epsilons: Vec<T>,
}

impl<T: Real> PerturbationSpec<T> {
    pub fn new(v: SymTensorField<T>, epsilons: Vec<T>) -> Self {
        debug_assert!(epsilons.windows(2).all(|w| w[1] < w[0]));
        Self { v, epsilons }
    }

    /// The co-variation `h = ½ tr_g v` of the potential.
    pub fn coupled_h(&self, g: &MetricField<T>, model: &FoliationModel<T>) -> Result<Vec<T>> {
        let calc = BasicCalculus::new(g, model)?;
        let half = T::lit(0.5);
        Ok(calc.trace(&self.v).into_iter().map(|x| half * x).collect())
    }
}

/// `−∫ (v, Ric + Hess f + ∇κ_b)_g e^{−f} w dvol`, with `∇κ_b` symmetrized.
pub fn df_analytic<T: Real>(g: &MetricField<T>, f: &[T], v: &SymTensorField<T>, model: &FoliationModel<T>) -> Result<T> {
    let calc = BasicCalculus::new(g, model)?;
    let (ricci, _) = ricci_from(g, &calc.info, &calc.gamma);
    let target = ricci
        .axpy(T::one(), &calc.hessian(f))
        .axpy(T::one(), &calc.nabla_sym(model.kappa()));
    let pair = calc.tensor_dot(v, &target);
    let weight: Vec<T> = f.iter().zip(&pair).map(|(&x, &p)| p * (-x).exp()).collect();
    Ok(-calc.integrate(&weight))
}

/// Central difference of `ε ↦ F^T(g + εv, f + ε·½V)`, `V = tr_g v`.
pub fn df_numeric<T: Real>(g: &MetricField<T>, f: &[T], v: &SymTensorField<T>, model: &FoliationModel<T>, eps: T) -> Result<T> {
    let calc = BasicCalculus::new(g, model)?;
    let half = T::lit(0.5);
    let trace = calc.trace(v);
    let eval = |s: T| -> Result<T> {
        let gs = g.perturbed(s, v)?;
        let fs: Vec<T> = f.iter().zip(&trace).map(|(&x, &t)| x + s * half * t).collect();
        f_t(&gs, &fs, model)
    };
    Ok((eval(eps)? - eval(-eps)?) / (eps + eps))
}

/// `(∇v)_{kij} = ∂_k v_ij − Γ^p_ki v_pj − Γ^p_kj v_ip`, planes `(k·m + i)·m + j`.
fn nabla_tensor<T: Real>(calc: &BasicCalculus<'_, T>, v: &[Vec<T>], m: usize) -> Vec<Vec<T>> {
    let grid = calc.grid();
    let n = grid.len();
    let full = |c: &[Vec<T>], i: usize, j: usize, node: usize| c[i * m + j][node];
    let mut out = Vec::with_capacity(m * m * m);
    for k in 0..m {
        for i in 0..m {
            for j in 0..m {
                let mut d = grid.diff(&v[i * m + j], k);
                for (node, x) in d.iter_mut().enumerate().take(n) {
                    for p in 0..m {
                        *x -= calc.gamma.at(node, p, k, i) * full(v, p, j, node)
                            + calc.gamma.at(node, p, k, j) * full(v, i, p, node);
                    }
                }
                out.push(d);
            }
        }
    }
    out
}

/// Unpacks a symmetric tensor into `m²` full planes.
fn full_planes<T: Real>(v: &SymTensorField<T>) -> Vec<Vec<T>> {
    let m = v.m();
    (0..m * m).map(|c| v.get(c / m, c % m).to_vec()).collect()
}

/// `∂Ric_ij = ½ g^{pq}(∇_p∇_i v_jq + ∇_p∇_j v_iq − ∇_p∇_q v_ij) − ½ ∇_i∇_j V`.
pub fn d_ric_analytic<T: Real>(g: &MetricField<T>, v: &SymTensorField<T>) -> Result<SymTensorField<T>> {
    let model = FoliationModel::taut(g.grid().clone());
    let calc = BasicCalculus::new(g, &model)?;
    let m = g.m();
    let n = g.grid().len();
    let grid = calc.grid();
    let t = nabla_tensor(&calc, &full_planes(v), m);
    let tt = |k: usize, i: usize, j: usize, node: usize| t[(k * m + i) * m + j][node];
    // ∂_p T_{kij}, planes ((p·m + k)·m + i)·m + j
    let dt: Vec<Vec<T>> = (0..m)
        .flat_map(|p| (0..m * m * m).map(move |c| (p, c)))
        .map(|(p, c)| grid.diff(&t[c], p))
        .collect();
    let nabla2 = |p: usize, k: usize, i: usize, j: usize, node: usize| {
        let mut s = dt[((p * m + k) * m + i) * m + j][node];
        for q in 0..m {
            s -= calc.gamma.at(node, q, p, k) * tt(q, i, j, node)
                + calc.gamma.at(node, q, p, i) * tt(k, q, j, node)
                + calc.gamma.at(node, q, p, j) * tt(k, i, q, node);
        }
        s
    };
    let hess_v = calc.hessian(&calc.trace(v));
    let half = T::lit(0.5);
    let mut out = SymTensorField::zeros(m, n);
    for i in 0..m {
        for j in i..m {
            let plane = out.get_mut(i, j);
            for (node, o) in plane.iter_mut().enumerate() {
                let mut s = T::zero();
                for p in 0..m {
                    for q in 0..m {
                        let gpq = calc.info.inv.at(node, p, q);
                        s += gpq * (nabla2(p, i, j, q, node) + nabla2(p, j, i, q, node) - nabla2(p, q, i, j, node));
                    }
                }
                *o = half * s - half * hess_v.at(node, i, j);
            }
        }
    }
    Ok(out)
}

/// `∂Scal = div(div v) − Δ'_b V − (v, Ric)`.
pub fn d_scal_analytic<T: Real>(g: &MetricField<T>, v: &SymTensorField<T>, model: &FoliationModel<T>) -> Result<ScalarField<T>> {
    let calc = BasicCalculus::new(g, model)?;
    let (ricci, _) = ricci_from(g, &calc.info, &calc.gamma);
    let div = calc.div_sym(v);
    let m = g.m();
    let full = calc.nabla(&div);
    let n = g.grid().len();
    let divdiv: Vec<T> = (0..n)
        .map(|node| {
            let mut s = T::zero();
            for i in 0..m {
                for j in 0..m {
                    s += calc.info.inv.at(node, i, j) * full[i * m + j][node];
                }
            }
            s
        })
        .collect();
    let drift = calc.drift_laplacian(&calc.trace(v));
    let pair = calc.tensor_dot(v, &ricci);
    Ok(ScalarField((0..n).map(|i| divdiv[i] - drift[i] - pair[i]).collect()))
}

/// `(Scal(g + εv) − Scal(g − εv)) / 2ε`.
pub fn d_scal_numeric<T: Real>(g: &MetricField<T>, v: &SymTensorField<T>, eps: T) -> Result<ScalarField<T>> {
    let scal = |s: T| -> Result<Vec<T>> {
        let gs = g.perturbed(s, v)?;
        let info = MetricInfo::new(&gs)?;
        let gamma = crate::geometry::christoffel_with(&gs, &info);
        Ok(ricci_from(&gs, &info, &gamma).1 .0)
    };
    let (a, b) = (scal(eps)?, scal(-eps)?);
    Ok(ScalarField(a.iter().zip(&b).map(|(&x, &y)| (x - y) / (eps + eps)).collect()))
}

/// `(Ric(g + εv) − Ric(g − εv)) / 2ε`.
pub fn d_ric_numeric<T: Real>(g: &MetricField<T>, v: &SymTensorField<T>, eps: T) -> Result<SymTensorField<T>> {
    let ric = |s: T| -> Result<SymTensorField<T>> {
        let gs = g.perturbed(s, v)?;
        let info = MetricInfo::new(&gs)?;
        let gamma = crate::geometry::christoffel_with(&gs, &info);
        Ok(ricci_from(&gs, &info, &gamma).0)
    };
    let (a, b) = (ric(eps)?, ric(-eps)?);
    Ok(a.axpy(-T::one(), &b).scaled(T::one() / (eps + eps)))
}

/// `max |g^{ij} ∂Ric_ij − (v, Ric) − ∂Scal|`, all analytic.
pub fn trace_consistency<T: Real>(g: &MetricField<T>, v: &SymTensorField<T>, model: &FoliationModel<T>) -> Result<T> {
    let calc = BasicCalculus::new(g, model)?;
    let (ricci, _) = ricci_from(g, &calc.info, &calc.gamma);
    let tr = calc.trace(&d_ric_analytic(g, v)?);
    let pair = calc.tensor_dot(v, &ricci);
    let ds = d_scal_analytic(g, v, model)?;
    Ok((0..tr.len()).fold(T::zero(), |acc, i| acc.max((tr[i] - pair[i] - ds[i]).abs())))
}

/// One row of an ε-sweep.
#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub eps: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Analytic `dF` against central differences over a list of step sizes.
#[derive(Clone, Debug, Serialize)]
pub struct GradientCheck {
    pub analytic: f64,
    pub sweep: Vec<SweepRow>,
    /// Richardson estimate of the `ε → 0` limit of the central differences.
    pub limit: f64,
    /// Log-log slope of the truncation error `|numeric(ε) − limit|` over all
    /// but the smallest ε, whose error is zero by construction.
    pub slope: f64,
    /// Log-log slope of `rel_error` against ε over the whole sweep; flat once
    /// the spatial discretization floor dominates.
    pub slope_vs_analytic: f64,
    pub best_rel_error: f64,
}

pub fn gradient_check<T: Real>(g: &MetricField<T>, f: &[T], spec: &PerturbationSpec<T>, model: &FoliationModel<T>) -> Result<GradientCheck> {
    let analytic = df_analytic(g, f, &spec.v, model)?.to_f64_lossy();
    let mut sweep = Vec::with_capacity(spec.epsilons.len());
    for &eps in &spec.epsilons {
        let numeric = df_numeric(g, f, &spec.v, model, eps)?.to_f64_lossy();
        sweep.push(SweepRow {
            eps: eps.to_f64_lossy(),
            numeric,
            rel_error: (numeric - analytic).abs() / (1.0 + analytic.abs()),
        });
    }
    let limit = match sweep.as_slice() {
        [.., a, b] => b.numeric + (b.numeric - a.numeric) * b.eps * b.eps / (a.eps * a.eps - b.eps * b.eps),
        [b] => b.numeric,
        [] => f64::NAN,
    };
    let floor = f64::MIN_POSITIVE;
    let truncation: Vec<(f64, f64)> = sweep[..sweep.len().saturating_sub(1)]
        .iter()
        .map(|r| (r.eps.ln(), (r.numeric - limit).abs().max(floor).ln()))
        .collect();
    let against: Vec<(f64, f64)> = sweep.iter().map(|r| (r.eps.ln(), r.rel_error.max(floor).ln())).collect();
    let best_rel_error = sweep.iter().map(|r| r.rel_error).fold(f64::INFINITY, f64::min);
    Ok(GradientCheck {
        analytic,
        limit,
        slope: log_slope(&truncation),
        slope_vs_analytic: log_slope(&against),
        best_rel_error,
        sweep,
    })
}

/// Least-squares slope of `y` against `x`.
pub fn log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    if points.len() < 2 {
        return f64::NAN;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
