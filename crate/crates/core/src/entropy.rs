//! The transverse entropy functional and its minimum `λ^T`.
//!
//! Writing `Φ = e^{−f/2}` and `ρ = w √det g`, the functional becomes the
//! quadratic form
//!
//! `F(Φ) = Σ ρ [(Scal + |κ|²) Φ² + 4 (dΦ, dΦ)_g − 2 (κ, d(Φ²))_g] · cell`,
//!
//! which in exact mode equals `⟨Φ, (4Δ_b + S_b) Φ⟩_w` at the discrete level.
//! `λ^T` is computed two ways: inverse iteration on `4Δ_b + S_b`, and direct
//! constrained minimization of the quadratic form.

use serde::{Deserialize, Serialize};

use crate::calculus::BasicCalculus;
use crate::error::{Error, Result};
use crate::field::{MetricField, ScalarField};
use crate::geometry::{ricci_from, volume_with};
use crate::model::FoliationModel;
use crate::scalar::{ordered_sum, Real};
use crate::spectral::{dot, pcg, FourierPreconditioner};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Eigen,
    Minimize,
}

impl std::str::FromStr for Backend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eigen" => Ok(Backend::Eigen),
            "minimize" => Ok(Backend::Minimize),
            other => Err(Error::InvalidConfig {
                field: "backend".into(),
                reason: format!("expected `eigen` or `minimize`, got `{other}`"),
            }),
        }
    }
}

/// Result of a `λ^T` computation.
#[derive(Clone, Debug)]
pub struct EntropyReport<T> {
    /// `F^T(g, f_min)`.
    pub f_value: T,
    pub lambda: T,
    pub lambda_bar: T,
    pub volume: T,
    /// Minimizer, normalized so `∫ e^{−f} w dvol = 1`.
    pub f_min: ScalarField<T>,
    /// `Φ = e^{−f_min/2}`, unit in `⟨·,·⟩_w`.
    pub ground_state: Vec<T>,
    pub backend: Backend,
    /// Eigen: `‖HΦ − λΦ‖_w / max(1, |λ|)`. Minimize: the same quantity for
    /// the operator of the quadratic form.
    pub residual: T,
    pub iterations: usize,
}

/// Precomputed data of the quadratic form for one metric/model pair.
pub struct EntropyForm<'a, T: Real> {
    pub calc: BasicCalculus<'a, T>,
    pub scal: Vec<T>,
    kappa2: Vec<T>,
    /// `ρ (Scal + |κ|²)`.
    weight: Vec<T>,
    /// `ρ g^{ab}` as full row-major planes.
    coef: Vec<Vec<T>>,
    /// `Σ_b ∂_b(ρ g^{ab} κ_a)`.
    flux_div: Vec<T>,
}

impl<'a, T: Real> EntropyForm<'a, T> {
    pub fn new(g: &'a MetricField<T>, model: &'a FoliationModel<T>) -> Result<Self> {
        let calc = BasicCalculus::new(g, model)?;
        let scal = ricci_from(g, &calc.info, &calc.gamma).1 .0;
        Ok(Self::with_scal(calc, scal))
    }

    pub fn with_scal(calc: BasicCalculus<'a, T>, scal: Vec<T>) -> Self {
        let grid = calc.grid();
        let m = calc.m();
        let n = grid.len();
        let kappa2 = calc.kappa_norm2();
        let weight = (0..n).map(|i| calc.density[i] * (scal[i] + kappa2[i])).collect();
        let mut coef = Vec::with_capacity(m * m);
        for a in 0..m {
            for b in 0..m {
                let inv = calc.info.inv.get(a, b);
                coef.push(calc.density.iter().zip(inv).map(|(&r, &x)| r * x).collect::<Vec<T>>());
            }
        }
        let kappa = calc.model.kappa();
        let mut flux_div = vec![T::zero(); n];
        for b in 0..m {
            let flux: Vec<T> = (0..n)
                .map(|i| {
                    let mut s = T::zero();
                    for a in 0..m {
                        s += coef[a * m + b][i] * kappa.comps[a][i];
                    }
                    s
                })
                .collect();
            for (o, d) in flux_div.iter_mut().zip(grid.diff(&flux, b)) {
                *o += d;
            }
        }
        Self {
            calc,
            scal,
            kappa2,
            weight,
            coef,
            flux_div,
        }
    }

    pub fn density(&self) -> &[T] {
        &self.calc.density
    }

    /// `F` at `Φ`, by direct quadrature of the integrand.
    pub fn value(&self, phi: &[T]) -> T {
        let c = &self.calc;
        let dphi = c.d(phi);
        let grad2 = c.dot(&dphi, &dphi);
        let sq: Vec<T> = phi.iter().map(|&p| p * p).collect();
        let drift = c.dot(c.model.kappa(), &c.d(&sq));
        let four = T::lit(4.0);
        let two = T::lit(2.0);
        let terms = (0..phi.len()).map(|i| {
            c.density[i] * ((self.scal[i] + self.kappa2[i]) * sq[i] + four * grad2[i] - two * drift[i])
        });
        ordered_sum(terms) * c.grid().cell_volume()
    }

    /// Symmetric operator `L` with `F(Φ) = cell · Φ·LΦ`:
    /// `LΦ = ρ(Scal+|κ|²)Φ − 4 Σ ∂_a(ρ g^{ab} ∂_bΦ) + 2Φ Σ ∂_b(ρ g^{ab} κ_a)`.
    pub fn apply(&self, phi: &[T]) -> Vec<T> {
        let grid = self.calc.grid();
        let m = self.calc.m();
        let n = phi.len();
        let dphi = grid.gradient(phi);
        let two = T::lit(2.0);
        let four = T::lit(4.0);
        let mut out: Vec<T> = (0..n)
            .map(|i| (self.weight[i] + two * self.flux_div[i]) * phi[i])
            .collect();
        let mut flux = vec![T::zero(); n];
        for a in 0..m {
            grid.fill(&mut flux, |i| {
                let mut s = T::zero();
                for b in 0..m {
                    s += self.coef[a * m + b][i] * dphi[b][i];
                }
                s
            });
            for (o, d) in out.iter_mut().zip(grid.diff(&flux, a)) {
                *o -= four * d;
            }
        }
        out
    }

    /// Potential of `L/ρ`, equal to `S_b` in exact mode.
    pub fn effective_potential(&self) -> Vec<T> {
        let two = T::lit(2.0);
        (0..self.weight.len())
            .map(|i| (self.weight[i] + two * self.flux_div[i]) / self.calc.density[i])
            .collect()
    }

    /// Fourier preconditioner for `L + σρ`.
    fn preconditioner(&self, sigma: T, potential: &[T]) -> FourierPreconditioner<T> {
        let nn = T::count(potential.len());
        let coef: Vec<T> = self.coef.iter().map(|p| T::lit(4.0) * ordered_sum(p.iter().copied()) / nn).collect();
        let c0 = ordered_sum(
            self.calc
                .density
                .iter()
                .zip(potential)
                .map(|(&r, &s)| r * (s + sigma)),
        ) / nn;
        FourierPreconditioner::new(self.calc.grid(), &coef, c0)
    }

    fn mass(&self, phi: &[T]) -> T {
        ordered_sum(self.calc.density.iter().zip(phi).map(|(&r, &p)| r * p * p)) * self.calc.grid().cell_volume()
    }

    fn volume(&self) -> T {
        volume_with(self.calc.g, self.calc.model, &self.calc.info)
    }

    /// `‖(L − λρ)Φ / ρ‖_w / max(1, |λ|)` for unit `Φ`.
    fn form_residual(&self, phi: &[T], lambda: T) -> T {
        let lphi = self.apply(phi);
        let r2 = ordered_sum((0..phi.len()).map(|i| {
            let rho = self.calc.density[i];
            let r = lphi[i] - lambda * rho * phi[i];
            r * r / rho
        })) * self.calc.grid().cell_volume();
        r2.sqrt() / T::one().max(lambda.abs())
    }

    fn report(&self, mut phi: Vec<T>, lambda: T, backend: Backend, residual: T, iterations: usize) -> Result<EntropyReport<T>> {
        let total: T = ordered_sum(phi.iter().copied());
        if total < T::zero() {
            phi.iter_mut().for_each(|p| *p = -*p);
        }
        if let Some(node) = phi.iter().position(|&p| !(p > T::zero())) {
            return Err(Error::NonPositive {
                node,
                value: phi[node].to_f64_lossy(),
                t: 0.0,
            });
        }
        let scale = T::one() / self.mass(&phi).sqrt();
        phi.iter_mut().for_each(|p| *p *= scale);
        let two = T::lit(2.0);
        let mut f: Vec<T> = phi.iter().map(|&p| -two * p.ln()).collect();
        normalize_potential(&self.calc, &mut f);
        let f_value = self.value(&phi);
        let volume = self.volume();
        Ok(EntropyReport {
            f_value,
            lambda,
            lambda_bar: scale_invariant(lambda, volume, self.calc.m()),
            volume,
            f_min: ScalarField(f),
            ground_state: phi,
            backend,
            residual,
            iterations,
        })
    }
}

/// Shifts `f` additively so that `∫ e^{−f} w dvol = 1`.
pub fn normalize_potential<T: Real>(calc: &BasicCalculus<'_, T>, f: &mut [T]) {
    let e: Vec<T> = f.iter().map(|&x| (-x).exp()).collect();
    let shift = calc.integrate(&e).ln();
    f.iter_mut().for_each(|x| *x += shift);
}

fn scale_invariant<T: Real>(lambda: T, volume: T, m: usize) -> T {
    lambda * volume.powf(T::lit(2.0) / T::count(m))
}

/// `F^T(g, f)`.
pub fn f_t<T: Real>(g: &MetricField<T>, f: &[T], model: &FoliationModel<T>) -> Result<T> {
    let form = EntropyForm::new(g, model)?;
    let half = T::lit(0.5);
    let phi: Vec<T> = f.iter().map(|&x| (-half * x).exp()).collect();
    Ok(form.value(&phi))
}

/// `S_b = Scal + |κ|² − 2 δ_b κ`.
pub fn s_t_b<T: Real>(g: &MetricField<T>, model: &FoliationModel<T>) -> Result<ScalarField<T>> {
    let calc = BasicCalculus::new(g, model)?;
    let scal = ricci_from(g, &calc.info, &calc.gamma).1;
    Ok(schrodinger_potential(&calc, &scal))
}

pub(crate) fn schrodinger_potential<T: Real>(calc: &BasicCalculus<'_, T>, scal: &[T]) -> ScalarField<T> {
    let k2 = calc.kappa_norm2();
    let div = calc.codifferential(calc.model.kappa());
    let two = T::lit(2.0);
    ScalarField((0..scal.len()).map(|i| scal[i] + k2[i] - two * div[i]).collect())
}

/// Solver controls shared by both backends.
#[derive(Clone, Debug)]
pub struct SolverOptions<T> {
    /// Eigen: relative residual target.
    pub tol: T,
    /// Outer iteration cap.
    pub max_iter: usize,
    /// Starting `Φ` (eigen) or starting `f` (minimize).
    pub start: Option<Vec<T>>,
}

impl<T: Real> Default for SolverOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-10),
            max_iter: 10_000,
            start: None,
        }
    }
}

/// `λ^T` as the bottom eigenvalue of `H = 4Δ_b + S_b` by shift-and-invert
/// iteration with Fourier-preconditioned CG inner solves.
pub fn lambda_eigen<T: Real>(g: &MetricField<T>, model: &FoliationModel<T>) -> Result<EntropyReport<T>> {
    lambda_eigen_with(&EntropyForm::new(g, model)?, &SolverOptions::default())
}

pub fn lambda_eigen_with<T: Real>(form: &EntropyForm<'_, T>, opts: &SolverOptions<T>) -> Result<EntropyReport<T>> {
    let calc = &form.calc;
    calc.model.require_taut("the eigenvalue backend")?;
    let n = calc.grid().len();
    let s = schrodinger_potential(calc, &form.scal).0;
    let smin = s.iter().fold(T::infinity(), |a, &b| a.min(b));
    let sigma = smin.abs() + T::one();
    let four = T::lit(4.0);
    let rho = &calc.density;
    let h_apply = |x: &[T]| -> Vec<T> {
        let lap = calc.laplacian(x);
        (0..n).map(|i| four * lap[i] + s[i] * x[i]).collect()
    };
    let shifted = |x: &[T]| -> Vec<T> {
        let hx = h_apply(x);
        (0..n).map(|i| rho[i] * (hx[i] + sigma * x[i])).collect()
    };
    let pre = form.preconditioner(sigma, &s);
    let norm = |x: &[T]| form.mass(x).sqrt();

    let mut phi = opts.start.clone().unwrap_or_else(|| vec![T::one(); n]);
    let nm = norm(&phi);
    phi.iter_mut().for_each(|p| *p /= nm);
    let inner_tol = T::lit(1e-13).max(T::epsilon() * T::lit(1e3));
    let mut best = T::infinity();
    let mut since_best = 0usize;
    let mut residual = T::infinity();
    for it in 0..=opts.max_iter {
        let hphi = h_apply(&phi);
        let lambda = ordered_sum((0..n).map(|i| rho[i] * phi[i] * hphi[i])) * calc.grid().cell_volume();
        let r2 = ordered_sum((0..n).map(|i| {
            let r = hphi[i] - lambda * phi[i];
            rho[i] * r * r
        })) * calc.grid().cell_volume();
        residual = r2.sqrt() / T::one().max(lambda.abs());
        if residual <= opts.tol {
            return form.report(phi, lambda, Backend::Eigen, residual, it);
        }
        if residual < best * T::lit(0.9) {
            best = residual;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > 50 {
                // stalled at the rounding floor of the working precision
                if residual <= T::lit(100.0) * T::epsilon() * operator_norm(&h_apply, n) / T::one().max(lambda.abs()) {
                    return form.report(phi, lambda, Backend::Eigen, residual, it);
                }
                break;
            }
        }
        if it == opts.max_iter {
            break;
        }
        let b: Vec<T> = (0..n).map(|i| rho[i] * phi[i]).collect();
        let mut y = phi.clone();
        match pcg(shifted, |r: &[T]| pre.apply(r), &b, &mut y, inner_tol, 5000) {
            Ok(_) => {}
            // an inexact inner solve still advances the outer iteration
            Err(Error::NoConvergence { residual, .. }) if residual < 1e-8 => {}
            Err(e) => return Err(e),
        }
        let ny = norm(&y);
        phi = y.into_iter().map(|v| v / ny).collect();
    }
    Err(Error::NoConvergence {
        solver: "shift-and-invert eigensolver",
        iterations: opts.max_iter,
        residual: residual.to_f64_lossy(),
    })
}

/// Estimate of `‖H‖` by a few power iterations from a fixed start.
fn operator_norm<T: Real>(apply: impl Fn(&[T]) -> Vec<T>, n: usize) -> T {
    let mut x: Vec<T> = (0..n).map(|i| T::lit(((i * 7919) % 97) as f64 / 97.0 - 0.5)).collect();
    let mut estimate = T::zero();
    for _ in 0..30 {
        let nx = ordered_sum(x.iter().map(|&v| v * v)).sqrt();
        if nx.is_zero() {
            break;
        }
        x.iter_mut().for_each(|v| *v /= nx);
        x = apply(&x);
        estimate = ordered_sum(x.iter().map(|&v| v * v)).sqrt();
    }
    estimate
}

/// `λ^T` by minimizing `F` subject to `∫e^{−f} w dvol = 1`.
pub fn lambda_minimize<T: Real>(g: &MetricField<T>, model: &FoliationModel<T>) -> Result<EntropyReport<T>> {
    lambda_minimize_with(&EntropyForm::new(g, model)?, &SolverOptions::default())
}

/// Preconditioned nonlinear CG in `Φ = e^{−f/2}` (so the constraint is a
/// rescaling), with exact line search by Rayleigh–Ritz on `span{Φ, d}`.
pub fn lambda_minimize_with<T: Real>(form: &EntropyForm<'_, T>, opts: &SolverOptions<T>) -> Result<EntropyReport<T>> {
    let calc = &form.calc;
    let n = calc.grid().len();
    let rho = &calc.density;
    let cell = calc.grid().cell_volume();
    let potential = form.effective_potential();
    let pmin = potential.iter().fold(T::infinity(), |a, &b| a.min(b));
    let pre = form.preconditioner(pmin.abs() + T::one(), &potential);
    let wdot = |a: &[T], b: &[T]| ordered_sum((0..n).map(|i| rho[i] * a[i] * b[i])) * cell;

    let half = T::lit(0.5);
    let mut phi: Vec<T> = match &opts.start {
        Some(f) => f.iter().map(|&x| (-half * x).exp()).collect(),
        None => vec![T::one(); n],
    };
    let nm = wdot(&phi, &phi).sqrt();
    phi.iter_mut().for_each(|p| *p /= nm);
    let mut lphi = form.apply(&phi);
    let mut value = dot(&phi, &lphi) * cell;

    let stall_tol = T::lit(1e-12).max(T::epsilon() * T::lit(16.0));
    let mut stalled = 0usize;
    let mut d_prev: Option<Vec<T>> = None;
    let mut rz_prev = T::zero();
    let mut z_prev: Vec<T> = Vec::new();
    for it in 0..opts.max_iter {
        // gradient of the Rayleigh quotient (up to a factor), as nodal residual
        let r: Vec<T> = (0..n).map(|i| lphi[i] - value * rho[i] * phi[i]).collect();
        let z = pre.apply(&r);
        let rz = dot(&r, &z);
        let beta = match &d_prev {
            Some(_) if rz_prev > T::zero() => ((rz - dot(&r, &z_prev)) / rz_prev).max(T::zero()),
            _ => T::zero(),
        };
        let d: Vec<T> = match &d_prev {
            Some(dp) => (0..n).map(|i| -z[i] + beta * dp[i]).collect(),
            None => z.iter().map(|&x| -x).collect(),
        };
        // orthonormalize the direction against Φ in ⟨·,·⟩_w, twice so that
        // a direction nearly parallel to Φ leaves no Φ component behind
        let dn = wdot(&d, &d).sqrt();
        let mut q = d.clone();
        for _ in 0..2 {
            let along = wdot(&phi, &q);
            q.iter_mut().zip(&phi).for_each(|(x, &p)| *x -= along * p);
        }
        let qn = wdot(&q, &q).sqrt();
        if !qn.is_finite() {
            break;
        }
        if qn <= T::lit(1e-10) * dn || qn.is_zero() {
            // no descent direction left: Φ is already stationary
            stalled = 20;
        }
        if stalled >= 20 {
            let lambda = form.value(&phi);
            let residual = form.form_residual(&phi, lambda);
            return form.report(phi, lambda, Backend::Minimize, residual, it);
        }
        q.iter_mut().for_each(|x| *x /= qn);
        let lq = form.apply(&q);
        let a11 = value;
        let a12 = dot(&phi, &lq) * cell;
        let a22 = dot(&q, &lq) * cell;
        let mean = half * (a11 + a22);
        let gap = half * (a11 - a22);
        let mu = mean - (gap * gap + a12 * a12).sqrt();
        let (c1, c2) = if (a11 - mu).abs() >= (a22 - mu).abs() {
            (-a12, a11 - mu)
        } else {
            (a22 - mu, -a12)
        };
        let (c1, c2) = if c1 < T::zero() { (-c1, -c2) } else { (c1, c2) };
        let cn = (c1 * c1 + c2 * c2).sqrt();
        let (c1, c2) = (c1 / cn, c2 / cn);
        for i in 0..n {
            phi[i] = c1 * phi[i] + c2 * q[i];
            lphi[i] = c1 * lphi[i] + c2 * lq[i];
        }
        // refresh to keep rounding from accumulating in the recurrence
        if it % 20 == 19 {
            let nm = wdot(&phi, &phi).sqrt();
            phi.iter_mut().for_each(|p| *p /= nm);
            lphi = form.apply(&phi);
        }
        let new_value = dot(&phi, &lphi) * cell / wdot(&phi, &phi);
        d_prev = Some(d);
        if (new_value - value).abs() < stall_tol * (T::one() + new_value.abs()) {
            stalled += 1;
        } else {
            stalled = 0;
        }
        value = new_value;
        rz_prev = rz;
        z_prev = z;
        if stalled >= 20 {
            let nm = wdot(&phi, &phi).sqrt();
            phi.iter_mut().for_each(|p| *p /= nm);
            let lambda = form.value(&phi);
            let residual = form.form_residual(&phi, lambda);
            return form.report(phi, lambda, Backend::Minimize, residual, it + 1);
        }
    }
    Err(Error::NoConvergence {
        solver: "entropy minimizer",
        iterations: opts.max_iter,
        residual: value.to_f64_lossy(),
    })
}

/// `λ̄ = λ^T Vol^{2/m}` via the eigen backend where it applies, else by minimization.
pub fn lambda_bar<T: Real>(g: &MetricField<T>, model: &FoliationModel<T>) -> Result<T> {
    let form = EntropyForm::new(g, model)?;
    let report = if model.is_taut() {
        lambda_eigen_with(&form, &SolverOptions::default())?
    } else {
        lambda_minimize_with(&form, &SolverOptions::default())?
    };
    Ok(report.lambda_bar)
}
