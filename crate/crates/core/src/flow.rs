//! Transverse Ricci flow, the coupled gradient and gauged flows, the
//! conjugate heat equation and monotonicity monitoring.
//!
//! The three flows are stepped with classical RK4. The `f`-equations of the
//! coupled systems are backward parabolic, so forward integration of those is
//! meaningful only over short windows; the well-posed route to the gauged
//! flow is a forward Ricci run followed by [`solve_conjugate_heat`].

use serde::{Deserialize, Serialize};

use crate::calculus::BasicCalculus;
use crate::error::{Error, Result};
use crate::field::{sym_len, sym_max_eigenvalue, MetricField, SymTensorField};
use crate::geometry::{christoffel_with, ricci_from, MetricInfo, DET_FLOOR};
use crate::model::FoliationModel;
use crate::scalar::Real;
use crate::spectral::{pcg, FourierPreconditioner};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowKind {
    /// `∂g/∂t = −2 Ric`.
    Ricci,
    /// `∂g/∂t = −2(Ric + Hess f + ∇κ_b)`, `∂f/∂t = −Scal − Δ'_b f − δ^Tκ_b`.
    Gradient,
    /// `∂g/∂t = −2 Ric`, `∂f/∂t = −Scal − Δ'_b f + |∇f|² + τ_b f − δ^Tκ_b`.
    Gauged,
}

impl FlowKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FlowKind::Ricci => "ricci",
            FlowKind::Gradient => "gradient",
            FlowKind::Gauged => "gauged",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            FlowKind::Ricci => 0,
            FlowKind::Gradient => 1,
            FlowKind::Gauged => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(FlowKind::Ricci),
            1 => Ok(FlowKind::Gradient),
            2 => Ok(FlowKind::Gauged),
            c => Err(Error::Format(format!("unknown flow kind code {c}"))),
        }
    }

    pub fn is_coupled(self) -> bool {
        self != FlowKind::Ricci
    }
}

impl std::str::FromStr for FlowKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ricci" => Ok(FlowKind::Ricci),
            "gradient" => Ok(FlowKind::Gradient),
            "gauged" => Ok(FlowKind::Gauged),
            other => Err(Error::InvalidConfig {
                field: "flow".into(),
                reason: format!("expected ricci, gradient or gauged, got `{other}`"),
            }),
        }
    }
}

/// State of a flow at one accepted step.
#[derive(Clone, Debug)]
pub struct FlowState<T> {
    pub t: T,
    pub step: u64,
    pub g: MetricField<T>,
    pub f: Option<Vec<T>>,
    /// `e^{−f}`, kept alongside `f` in gauged mode.
    pub u: Option<Vec<T>>,
}

impl<T: Real> FlowState<T> {
    pub fn new(g: MetricField<T>, f: Option<Vec<T>>) -> Self {
        Self {
            t: T::zero(),
            step: 0,
            g,
            f,
            u: None,
        }
    }

    fn refresh_u(&mut self, kind: FlowKind) {
        self.u = match (kind, &self.f) {
            (FlowKind::Gauged, Some(f)) => Some(f.iter().map(|&x| (-x).exp()).collect()),
            _ => None,
        };
    }
}

/// Right-hand side of a flow at one state.
#[derive(Clone, Debug)]
pub struct Derivative<T> {
    pub dg: SymTensorField<T>,
    pub df: Option<Vec<T>>,
}

/// Evaluates the right-hand side of `kind` at `(g, f)`.
pub fn rhs<T: Real>(kind: FlowKind, g: &MetricField<T>, f: Option<&[T]>, model: &FoliationModel<T>) -> Result<Derivative<T>> {
    let two = T::lit(2.0);
    if kind == FlowKind::Ricci {
        let info = MetricInfo::new(g)?;
        let gamma = christoffel_with(g, &info);
        let (ricci, _) = ricci_from(g, &info, &gamma);
        return Ok(Derivative {
            dg: ricci.scaled(-two),
            df: None,
        });
    }
    let f = f.ok_or_else(|| Error::InvalidField(format!("{} flow needs a potential f", kind.as_str())))?;
    let calc = BasicCalculus::new(g, model)?;
    let (ricci, scal) = ricci_from(g, &calc.info, &calc.gamma);
    let drift = calc.drift_laplacian(f);
    let div_kappa = calc.delta_t_kappa();
    let n = f.len();
    match kind {
        FlowKind::Gradient => {
            let hess = calc.hessian(f);
            let nk = calc.nabla_sym(calc.model.kappa());
            let mut dg = ricci.axpy(T::one(), &hess).axpy(T::one(), &nk);
            dg = dg.scaled(-two);
            let df = (0..n).map(|i| -scal[i] - drift[i] - div_kappa[i]).collect();
            Ok(Derivative { dg, df: Some(df) })
        }
        FlowKind::Gauged => {
            let df_form = calc.d(f);
            let grad2 = calc.dot(&df_form, &df_form);
            let tau = calc.dot(calc.model.kappa(), &df_form);
            let df = (0..n)
                .map(|i| -scal[i] - drift[i] + grad2[i] + tau[i] - div_kappa[i])
                .collect();
            Ok(Derivative {
                dg: ricci.scaled(-two),
                df: Some(df),
            })
        }
        FlowKind::Ricci => unreachable!(),
    }
}

fn combine<T: Real>(base: &[Vec<T>], parts: &[(T, &[Vec<T>])]) -> Vec<Vec<T>> {
    base.iter()
        .enumerate()
        .map(|(c, plane)| {
            (0..plane.len())
                .map(|i| {
                    let mut v = plane[i];
                    for (w, p) in parts {
                        v += *w * p[c][i];
                    }
                    v
                })
                .collect()
        })
        .collect()
}

fn planes_of<T: Real>(d: &Derivative<T>) -> Vec<Vec<T>> {
    let mut out = d.dg.comps.clone();
    if let Some(df) = &d.df {
        out.push(df.clone());
    }
    out
}

fn split<T: Real>(g: &MetricField<T>, mut planes: Vec<Vec<T>>, coupled: bool) -> Result<(MetricField<T>, Option<Vec<T>>)> {
    let m = g.m();
    let f = if coupled { planes.pop() } else { None };
    debug_assert_eq!(planes.len(), sym_len(m));
    let tensor = SymTensorField::from_planes(m, planes)?;
    Ok((MetricField::new_unchecked(g.grid().clone(), tensor), f))
}

/// Checks an accepted metric: finite, above the determinant floor, positive definite.
fn accept<T: Real>(g: MetricField<T>) -> Result<MetricField<T>> {
    g.check_finite()?;
    let info = MetricInfo::new(&g)?;
    match MetricField::new(g.grid().clone(), g.into_tensor()) {
        Ok(g) => Ok(g),
        Err(Error::InvalidField(_)) => {
            let node = (0..info.det.len())
                .min_by(|&a, &b| info.det[a].partial_cmp(&info.det[b]).unwrap_or(std::cmp::Ordering::Equal))
                .unwrap_or(0);
            Err(Error::SingularMetric {
                node,
                det: info.det[node].to_f64_lossy(),
                floor: DET_FLOOR,
            })
        }
        Err(e) => Err(e),
    }
}

/// One classical RK4 step of `kind`.
pub fn step<T: Real>(kind: FlowKind, state: &FlowState<T>, dt: T, model: &FoliationModel<T>) -> Result<FlowState<T>> {
    let coupled = kind.is_coupled();
    if coupled && state.f.is_none() {
        return Err(Error::InvalidField(format!("{} flow needs a potential f", kind.as_str())));
    }
    let mut y0 = state.g.tensor().comps.clone();
    if let Some(f) = state.f.as_ref().filter(|_| coupled) {
        y0.push(f.clone());
    }
    let eval = |y: &[Vec<T>]| -> Result<Vec<Vec<T>>> {
        let (g, f) = split(&state.g, y.to_vec(), coupled)?;
        Ok(planes_of(&rhs(kind, &g, f.as_deref(), model)?))
    };
    let half = T::lit(0.5) * dt;
    let k1 = eval(&y0)?;
    let k2 = eval(&combine(&y0, &[(half, &k1)]))?;
    let k3 = eval(&combine(&y0, &[(half, &k2)]))?;
    let k4 = eval(&combine(&y0, &[(dt, &k3)]))?;
    let sixth = dt / T::lit(6.0);
    let third = dt / T::lit(3.0);
    let y1 = combine(&y0, &[(sixth, &k1), (third, &k2), (third, &k3), (sixth, &k4)]);
    let (g, f) = split(&state.g, y1, coupled)?;
    let g = accept(g)?;
    if let Some(f) = &f {
        if let Some(node) = f.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { what: "potential f", node });
        }
    }
    let mut next = FlowState {
        t: state.t + dt,
        step: state.step + 1,
        g,
        f: if coupled { f } else { state.f.clone() },
        u: None,
    };
    next.refresh_u(kind);
    Ok(next)
}

pub fn step_ricci<T: Real>(state: &FlowState<T>, dt: T, model: &FoliationModel<T>) -> Result<FlowState<T>> {
    step(FlowKind::Ricci, state, dt, model)
}

pub fn step_gradient<T: Real>(state: &FlowState<T>, dt: T, model: &FoliationModel<T>) -> Result<FlowState<T>> {
    step(FlowKind::Gradient, state, dt, model)
}

pub fn step_gauged<T: Real>(state: &FlowState<T>, dt: T, model: &FoliationModel<T>) -> Result<FlowState<T>> {
    step(FlowKind::Gauged, state, dt, model)
}

/// `dt = cfl · h_min² / max_node λ_max(g^{-1})`.
pub fn cfl_dt<T: Real>(g: &MetricField<T>, cfl: T) -> Result<T> {
    let info = MetricInfo::new(g)?;
    let m = g.m();
    let mut buf = [T::zero(); 6];
    let mut coef = T::zero();
    for node in 0..g.grid().len() {
        info.inv.node_into(node, &mut buf[..sym_len(m)]);
        coef = coef.max(sym_max_eigenvalue(m, &buf[..sym_len(m)]));
    }
    let h = g.grid().min_spacing();
    Ok(cfl * h * h / coef)
}

/// `Scal + δ^Tκ_b`, the potential of the conjugate heat equation.
pub fn conjugate_potential<T: Real>(g: &MetricField<T>, model: &FoliationModel<T>) -> Result<Vec<T>> {
    let calc = BasicCalculus::new(g, model)?;
    Ok(potential_with(&calc))
}

fn potential_with<T: Real>(calc: &BasicCalculus<'_, T>) -> Vec<T> {
    let (_, scal) = ricci_from(calc.g, &calc.info, &calc.gamma);
    let div = calc.delta_t_kappa();
    scal.iter().zip(&div).map(|(&s, &d)| s + d).collect()
}

/// `Δ_b u + (Scal + δ^Tκ_b) u`, the right side of the conjugate heat equation.
pub fn conjugate_heat_rhs<T: Real>(g: &MetricField<T>, u: &[T], model: &FoliationModel<T>) -> Result<Vec<T>> {
    let calc = BasicCalculus::new(g, model)?;
    let lap = calc.laplacian(u);
    let p = potential_with(&calc);
    Ok((0..u.len()).map(|i| lap[i] + p[i] * u[i]).collect())
}

/// Time-indexed metrics along a completed forward run.
pub trait MetricPath<T: Real> {
    /// Number of stored times (steps + 1).
    fn len(&self) -> usize;
    /// Time and metric at index `i`.
    fn at(&mut self, i: usize) -> Result<(T, MetricField<T>)>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<T: Real> MetricPath<T> for Vec<(T, MetricField<T>)> {
    fn len(&self) -> usize {
        <[_]>::len(self)
    }
    fn at(&mut self, i: usize) -> Result<(T, MetricField<T>)> {
        Ok(self[i].clone())
    }
}

/// One stored time of a conjugate heat solve.
#[derive(Clone, Debug)]
pub struct HeatSample<T> {
    pub index: usize,
    pub t: T,
    pub g: MetricField<T>,
    pub u: Vec<T>,
}

/// Solves `∂u/∂t = Δ_b u + (Scal + δ^Tκ_b) u` backward from `u(T) = u_final`
/// along `path`, forward in `s = T − t`.
///
/// Each interval uses Strang splitting: exact exponential half-steps in the
/// potential around a Crank–Nicolson diffusion step whose implicit half is
/// solved by preconditioned CG. Returns the samples at the indices where
/// `keep` holds, in increasing time.
pub fn solve_conjugate_heat<T: Real>(
    path: &mut dyn MetricPath<T>,
    u_final: &[T],
    model: &FoliationModel<T>,
    keep: impl Fn(usize) -> bool,
) -> Result<Vec<HeatSample<T>>> {
    let count = path.len();
    if count == 0 {
        return Ok(Vec::new());
    }
    let n = u_final.len();
    let mut u = u_final.to_vec();
    let mut out = Vec::new();
    let last = count - 1;
    let (mut t_hi, mut g_hi) = path.at(last)?;
    if keep(last) {
        out.push(HeatSample { index: last, t: t_hi, g: g_hi.clone(), u: u.clone() });
    }
    let half = T::lit(0.5);
    let tol = T::lit(1e-13).max(T::epsilon() * T::lit(1e3));
    for k in (0..last).rev() {
        let (t_lo, g_lo) = path.at(k)?;
        let ds = t_hi - t_lo;
        let calc_hi = BasicCalculus::new(&g_hi, model)?;
        let calc_lo = BasicCalculus::new(&g_lo, model)?;
        let p_hi = potential_with(&calc_hi);
        let p_lo = potential_with(&calc_lo);
        for i in 0..n {
            u[i] *= (-half * ds * p_hi[i]).exp();
        }
        let lap = calc_hi.laplacian(&u);
        let rho = &calc_lo.density;
        let b: Vec<T> = (0..n).map(|i| rho[i] * (u[i] - half * ds * lap[i])).collect();
        let apply = |x: &[T]| -> Vec<T> {
            let l = calc_lo.laplacian(x);
            (0..n).map(|i| rho[i] * (x[i] + half * ds * l[i])).collect()
        };
        let m = calc_lo.m();
        let nn = T::count(n);
        let mut coef = vec![T::zero(); m * m];
        for a in 0..m {
            for c in 0..m {
                let plane = calc_lo.info.inv.get(a, c);
                coef[a * m + c] = half * ds * rho.iter().zip(plane).fold(T::zero(), |s, (&r, &x)| s + r * x) / nn;
            }
        }
        let c0 = rho.iter().fold(T::zero(), |s, &r| s + r) / nn;
        let pre = FourierPreconditioner::new(calc_lo.grid(), &coef, c0);
        let mut x = u.clone();
        pcg(apply, |r: &[T]| pre.apply(r), &b, &mut x, tol, 2000)?;
        for i in 0..n {
            u[i] = x[i] * (-half * ds * p_lo[i]).exp();
        }
        if let Some(node) = u.iter().position(|&v| !(v > T::zero())) {
            return Err(Error::NonPositive {
                node,
                value: u[node].to_f64_lossy(),
                t: t_lo.to_f64_lossy(),
            });
        }
        if keep(k) {
            out.push(HeatSample { index: k, t: t_lo, g: g_lo.clone(), u: u.clone() });
        }
        t_hi = t_lo;
        g_hi = g_lo;
    }
    out.reverse();
    Ok(out)
}

/// A dense metric path regenerated from sparse snapshots of a deterministic
/// forward run. Replaying from a snapshot reproduces the stored run bit for
/// bit, so this is equivalent to keeping every step.
pub struct ReplayPath<'m, T: Real, L> {
    model: &'m FoliationModel<T>,
    cfl: T,
    horizon: T,
    /// Step indices of the available snapshots, ascending, starting at 0.
    snapshots: Vec<u64>,
    total_steps: u64,
    load: L,
    cached_from: Option<u64>,
    cache: Vec<(T, MetricField<T>)>,
}

impl<'m, T: Real, L: FnMut(u64) -> Result<FlowState<T>>> ReplayPath<'m, T, L> {
    pub fn new(model: &'m FoliationModel<T>, cfl: T, horizon: T, snapshots: Vec<u64>, total_steps: u64, load: L) -> Self {
        Self {
            model,
            cfl,
            horizon,
            snapshots,
            total_steps,
            load,
            cached_from: None,
            cache: Vec::new(),
        }
    }
}

/// The step size the run loop uses at `state`: the CFL step, shortened to land on `horizon`.
pub fn next_dt<T: Real>(state: &FlowState<T>, cfl: T, horizon: T) -> Result<T> {
    let dt = cfl_dt(&state.g, cfl)?;
    let remaining = horizon - state.t;
    Ok(if remaining <= dt * T::lit(1.000001) { remaining } else { dt })
}

impl<'m, T: Real, L: FnMut(u64) -> Result<FlowState<T>>> MetricPath<T> for ReplayPath<'m, T, L> {
    fn len(&self) -> usize {
        self.total_steps as usize + 1
    }

    fn at(&mut self, i: usize) -> Result<(T, MetricField<T>)> {
        let step_i = i as u64;
        let start = *self
            .snapshots
            .iter()
            .rev()
            .find(|&&s| s <= step_i)
            .ok_or_else(|| Error::Format(format!("no snapshot at or before step {i}")))?;
        if self.cached_from != Some(start) {
            let end = self
                .snapshots
                .iter()
                .find(|&&s| s > start)
                .copied()
                .unwrap_or(self.total_steps)
                .min(self.total_steps);
            let mut state = (self.load)(start)?;
            self.cache.clear();
            self.cache.push((state.t, state.g.clone()));
            while state.step < end {
                let dt = next_dt(&state, self.cfl, self.horizon)?;
                state = step_ricci(&state, dt, self.model)?;
                self.cache.push((state.t, state.g.clone()));
            }
            self.cached_from = Some(start);
        }
        Ok(self.cache[(step_i - start) as usize].clone())
    }
}

/// One diagnostic sample for [`monitor`].
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MonitorSample {
    pub t: f64,
    pub lambda: f64,
    pub lambda_bar: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MonotonicityReport {
    /// `λ_{i+1} − λ_i`.
    pub deltas: Vec<f64>,
    pub min_delta: f64,
    /// Indices `i` with `λ_{i+1} − λ_i < −1e−7(1 + |λ_i|)`.
    pub violations: Vec<usize>,
    /// `λ̄_{i+1} − λ̄_i`.
    pub bar_deltas: Vec<f64>,
    pub taut: bool,
    /// First index with `λ̄ ≤ 0`, if any.
    pub bar_nonpositive_from: Option<usize>,
    /// Indices from that point on with `λ̄_{i+1} − λ̄_i < −1e−7(1 + |λ̄_i|)`.
    pub bar_violations: Vec<usize>,
    /// The λ̄ predicate holds (taut, and no violations once `λ̄ ≤ 0`).
    /// In non-taut runs this is recorded but carries no claim.
    pub bar_predicate_holds: bool,
}

/// Relative tolerance of the monotonicity checks.
pub const MONOTONICITY_TOL: f64 = 1e-7;

pub fn monitor(series: &[MonitorSample], taut: bool) -> MonotonicityReport {
    let tol = |x: f64| -MONOTONICITY_TOL * (1.0 + x.abs());
    let deltas: Vec<f64> = series.windows(2).map(|w| w[1].lambda - w[0].lambda).collect();
    let bar_deltas: Vec<f64> = series.windows(2).map(|w| w[1].lambda_bar - w[0].lambda_bar).collect();
    let violations = deltas
        .iter()
        .enumerate()
        .filter(|&(i, &d)| d < tol(series[i].lambda))
        .map(|(i, _)| i)
        .collect();
    let from = series.iter().position(|s| s.lambda_bar <= 0.0);
    let bar_violations: Vec<usize> = match from {
        Some(start) => bar_deltas
            .iter()
            .enumerate()
            .skip(start)
            .filter(|&(i, &d)| d < tol(series[i].lambda_bar))
            .map(|(i, _)| i)
            .collect(),
        None => Vec::new(),
    };
    MonotonicityReport {
        min_delta: deltas.iter().copied().fold(f64::INFINITY, f64::min),
        deltas,
        violations,
        bar_deltas,
        taut,
        bar_nonpositive_from: from,
        bar_predicate_holds: bar_violations.is_empty(),
        bar_violations,
    }
}
