use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::DMatrix;
use transflow_core::calculus::BasicCalculus;
use transflow_core::checkpoint::Checkpoint;
use transflow_core::entropy::{f_t, lambda_eigen, lambda_minimize, lambda_minimize_with, EntropyForm, SolverOptions};
use transflow_core::flow::{conjugate_heat_rhs, monitor, next_dt, solve_conjugate_heat, step_ricci, FlowKind, FlowState, MonitorSample};
use transflow_core::random::FieldSampler;
use transflow_core::run::{self, read_series, RunConfig};
use transflow_core::scenario::{build, Scenario, CATALOG};
use transflow_core::variation::{gradient_check, PerturbationSpec};
use transflow_core::verify::{
    adjointness_defect, bianchi_residuals, conformal_scal_error, gradient_f_series, ibp_defect, observed_order, ricci_samples, M3_DIMS,
};
use transflow_core::Result;
use transflow_validation::{summarize, Verdict};

const DIMS: usize = 64;
const FINE_DIMS: usize = 128;
const SEED: u64 = 7;

const SCAL_RATIO_BAND: (f64, f64) = (3.0, 5.0);
const MIN_ORDER: f64 = 1.9;
const ROUNDING_TOL: f64 = 1e-12;
const ADJOINT_TOL: f64 = 1e-10;
const ADJOINT_PAIRS: usize = 100;
const IBP_FINE_TOL: f64 = 1e-6;
const BACKEND_TOL: f64 = 1e-6;
const RAYLEIGH_TOL: f64 = 1e-8;
const DENSE_DIMS: usize = 32;
const DENSE_TOL: f64 = 1e-8;
const SCALES: [f64; 3] = [0.5, 2.0, 10.0];
const SCALE_TOL: f64 = 1e-8;
const GRADIENT_EPS: [f64; 3] = [1e-2, 1e-3, 1e-4];
const GRADIENT_TOL: f64 = 1e-5;
const GRADIENT_SAMPLES: usize = 10;
const SLOPE_TARGET: f64 = 2.0;
const SLOPE_SLACK: f64 = 0.25;
const MONOTONICITY_TOL: f64 = 1e-7;
const RICCI_HORIZON: f64 = 0.1;
const RICCI_CFL: f64 = 0.1;
const RICCI_EVERY: u64 = 20;
const HEAT_DIMS: usize = 32;
const HEAT_HORIZON: f64 = 0.005;
const HEAT_CFL: f64 = 0.1;
const MASS_TOL: f64 = 1e-5;
const GRADIENT_STEPS: usize = 200;

fn main() -> ExitCode {
    let criteria: [(u32, &'static str, fn() -> Result<(bool, String)>); 14] = [
        (1, "scalar curvature oracle ratio", scal_oracle),
        (2, "bianchi identities", bianchi),
        (3, "d/delta adjointness", adjointness),
        (4, "divergence integration by parts", integration_by_parts),
        (5, "eigenvalue characterization", eigen_characterization),
        (6, "dense eigensolve", dense_eigen),
        (7, "lambda_bar scale invariance", scale_invariance),
        (8, "entropy gradient check", entropy_gradient),
        (9, "scalar curvature variation", scal_variation),
        (10, "lambda monotone under ricci", ricci_monotone),
        (11, "lambda_bar predicate", lambda_bar_predicate),
        (12, "conjugate heat consistency", conjugate_heat),
        (13, "F monotone under gradient flow", gradient_flow_monotone),
        (14, "resume and field files", persistence),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut verdicts = Vec::new();
    for (id, name, check) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
        let verdict = Verdict { id, name, pass, detail, elapsed: start.elapsed() };
        println!("{verdict}");
        verdicts.push(verdict);
    }
    println!();
    if summarize(&verdicts) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn scal_oracle() -> Result<(bool, String)> {
    let (coarse, fine) = (conformal_scal_error(DIMS)?, conformal_scal_error(FINE_DIMS)?);
    let ratio = coarse / fine;
    let pass = (SCAL_RATIO_BAND.0..=SCAL_RATIO_BAND.1).contains(&ratio);
    Ok((
        pass,
        format!(
            "errors {coarse:.3e} -> {fine:.3e}, ratio {ratio:.2} (band {:?}), order {:.2}",
            SCAL_RATIO_BAND,
            observed_order(coarse, fine)
        ),
    ))
}

fn bianchi() -> Result<(bool, String)> {
    let (first_c, contracted_c) = bianchi_residuals("conformal-taut", DIMS)?;
    let (first_f, contracted_f) = bianchi_residuals("conformal-taut", FINE_DIMS)?;
    let (first_3d, _) = bianchi_residuals("m3-conformal", M3_DIMS)?;
    let first = first_c.max(first_f).max(first_3d);
    let first_order = observed_order(first_c, first_f);
    let first_ok = first <= ROUNDING_TOL || first_order >= MIN_ORDER;
    let order = observed_order(contracted_c, contracted_f);
    Ok((
        first_ok && order >= MIN_ORDER,
        format!(
            "first {first:.2e} (rounding {ROUNDING_TOL:e}), contracted {contracted_c:.3e} -> {contracted_f:.3e} order {order:.2} (>= {MIN_ORDER})"
        ),
    ))
}

fn adjointness() -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for name in ["flat-taut", "conformal-taut", "weighted-exact", "anisotropic"] {
        let s = build::<f64>(name, DIMS)?;
        worst = worst.max(adjointness_defect(&s, SEED, ADJOINT_PAIRS)?);
    }
    Ok((worst < ADJOINT_TOL, format!("worst relative defect {worst:.2e} over {ADJOINT_PAIRS} pairs (< {ADJOINT_TOL:e})")))
}

fn integration_by_parts() -> Result<(bool, String)> {
    let mut worst_order = f64::INFINITY;
    let mut worst_fine = 0.0f64;
    for seed in SEED..SEED + 3 {
        let (c, f) = (ibp_defect("weighted-exact", DIMS, seed)?, ibp_defect("weighted-exact", FINE_DIMS, seed)?);
        worst_order = worst_order.min(observed_order(c, f));
        worst_fine = worst_fine.max(f);
    }
    Ok((
        worst_order >= MIN_ORDER && worst_fine < IBP_FINE_TOL,
        format!("order {worst_order:.2} (>= {MIN_ORDER}), residual at {FINE_DIMS} {worst_fine:.2e} (< {IBP_FINE_TOL:e})"),
    ))
}

fn eigen_characterization() -> Result<(bool, String)> {
    let s = build::<f64>("weighted-exact", DIMS)?;
    let eig = lambda_eigen(&s.g0, &s.model)?;
    let min = lambda_minimize(&s.g0, &s.model)?;
    let gap = (eig.lambda - min.lambda).abs() / (1.0 + eig.lambda.abs());
    let rayleigh = (f_t(&s.g0, &min.f_min, &s.model)? - min.lambda).abs() / (1.0 + min.lambda.abs());
    Ok((
        gap < BACKEND_TOL && rayleigh < RAYLEIGH_TOL,
        format!(
            "lambda {:.9e}, backend gap {gap:.2e} (< {BACKEND_TOL:e}), F(f_min) - lambda {rayleigh:.2e} (< {RAYLEIGH_TOL:e})",
            eig.lambda
        ),
    ))
}

/// Smallest generalized eigenvalue of `L Φ = λ ρ Φ`, with `L` assembled column
/// by column and reduced to a standard symmetric problem.
fn dense_lambda(s: &Scenario<f64>) -> Result<(f64, f64)> {
    let form = EntropyForm::new(&s.g0, &s.model)?;
    let n = s.grid().len();
    let scale: Vec<f64> = form.density().iter().map(|r| 1.0 / r.sqrt()).collect();
    let mut h = DMatrix::<f64>::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = form.apply(&e);
        e[j] = 0.0;
        for i in 0..n {
            h[(i, j)] = scale[i] * col[i] * scale[j];
        }
    }
    let asym = (&h - h.transpose()).abs().max();
    let sym = (&h + h.transpose()) * 0.5;
    let lambda = sym.symmetric_eigenvalues().min();
    Ok((lambda, asym))
}

fn dense_eigen() -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    let mut asym = 0.0f64;
    for name in ["conformal-taut", "weighted-exact", "anisotropic"] {
        let s = build::<f64>(name, DENSE_DIMS)?;
        let (dense, a) = dense_lambda(&s)?;
        let free = lambda_eigen(&s.g0, &s.model)?.lambda;
        worst = worst.max((dense - free).abs() / (1.0 + dense.abs()));
        asym = asym.max(a);
    }
    Ok((
        worst < DENSE_TOL,
        format!("worst gap {worst:.2e} at {DENSE_DIMS}^2 (< {DENSE_TOL:e}), assembled asymmetry {asym:.1e}"),
    ))
}

fn scale_invariance() -> Result<(bool, String)> {
    let opts = SolverOptions::default();
    let mut worst = 0.0f64;
    let mut worst_name = "";
    for &name in CATALOG {
        let dims = if name.starts_with("m3-") { M3_DIMS } else { DIMS };
        let s = build::<f64>(name, dims)?;
        let base = lambda_minimize_with(&EntropyForm::new(&s.g0, &s.model)?, &opts)?.lambda_bar;
        for c in SCALES {
            let g = s.g0.scaled(c)?;
            let bar = lambda_minimize_with(&EntropyForm::new(&g, &s.model)?, &opts)?.lambda_bar;
            let dev = (bar - base).abs() / (1.0 + base.abs());
            if dev >= worst {
                worst = dev;
                worst_name = name;
            }
        }
    }
    Ok((
        worst < SCALE_TOL,
        format!("worst deviation {worst:.2e} ({worst_name}) over {} scenarios, c in {SCALES:?} (< {SCALE_TOL:e})", CATALOG.len()),
    ))
}

fn entropy_gradient() -> Result<(bool, String)> {
    let smallest = *GRADIENT_EPS.last().expect("sweep");
    let mut parts = Vec::new();
    let mut pass = true;
    for name in ["conformal-taut", "weighted-exact"] {
        let s = build::<f64>(name, DIMS)?;
        let mut sampler = FieldSampler::new(SEED);
        let f = sampler.scalar(s.grid(), 0.2);
        let mut worst = 0.0f64;
        let mut slope_dev = 0.0f64;
        for _ in 0..GRADIENT_SAMPLES {
            let spec = PerturbationSpec::new(sampler.sym_tensor(s.grid(), 0.1), GRADIENT_EPS.to_vec());
            let gc = gradient_check(&s.g0, &f, &spec, &s.model)?;
            let at_smallest = gc.sweep.iter().find(|r| r.eps == smallest).expect("swept").rel_error;
            worst = worst.max(at_smallest);
            slope_dev = slope_dev.max((gc.slope - SLOPE_TARGET).abs());
        }
        pass &= worst < GRADIENT_TOL && slope_dev <= SLOPE_SLACK;
        parts.push(format!("{name} rel {worst:.2e} slope dev {slope_dev:.3}"));
    }
    Ok((
        pass,
        format!("{} (rel < {GRADIENT_TOL:e} at eps {smallest:e}, |slope - {SLOPE_TARGET}| <= {SLOPE_SLACK})", parts.join(", ")),
    ))
}

fn scal_variation() -> Result<(bool, String)> {
    use transflow_core::variation::{d_scal_analytic, d_scal_numeric};
    use transflow_core::verify::band_tensor;
    let mut errs = Vec::new();
    for dims in [DIMS, FINE_DIMS] {
        let s = build::<f64>("conformal-taut", dims)?;
        let v = band_tensor(&mut FieldSampler::new(SEED), &s, 0.1);
        let analytic = d_scal_analytic(&s.g0, &v, &s.model)?;
        let numeric = d_scal_numeric(&s.g0, &v, s.grid().min_spacing())?;
        errs.push(analytic.iter().zip(numeric.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    let order = observed_order(errs[0], errs[1]);
    Ok((order >= MIN_ORDER, format!("errors {:.3e} -> {:.3e} with eps = h, order {order:.2} (>= {MIN_ORDER})", errs[0], errs[1])))
}

type RicciRuns = Vec<(&'static str, Vec<MonitorSample>)>;

static RICCI_RUNS: OnceLock<RicciRuns> = OnceLock::new();

fn ricci_runs() -> Result<RicciRuns> {
    if let Some(runs) = RICCI_RUNS.get() {
        return Ok(runs.clone());
    }
    let mut out = Vec::new();
    for name in ["conformal-taut", "anisotropic", "weighted-exact"] {
        let s = build::<f64>(name, DIMS)?;
        out.push((name, ricci_samples(&s, RICCI_CFL, RICCI_HORIZON, RICCI_EVERY)?));
    }
    Ok(RICCI_RUNS.get_or_init(|| out).clone())
}

fn ricci_monotone() -> Result<(bool, String)> {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, samples) in ricci_runs()? {
        let worst = samples
            .windows(2)
            .map(|w| (w[1].lambda - w[0].lambda) / (1.0 + w[0].lambda.abs()))
            .fold(f64::INFINITY, f64::min);
        pass &= worst >= -MONOTONICITY_TOL;
        parts.push(format!("{name} {worst:.2e}"));
    }
    Ok((pass, format!("min relative delta: {} (>= -{MONOTONICITY_TOL:e}), T = {RICCI_HORIZON}", parts.join(", "))))
}

fn lambda_bar_predicate() -> Result<(bool, String)> {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, samples) in ricci_runs()? {
        let report = monitor(&samples, true);
        let from = samples.iter().position(|s| s.lambda_bar <= 0.0);
        let worst = match from {
            Some(k) => samples[k..]
                .windows(2)
                .map(|w| (w[1].lambda_bar - w[0].lambda_bar) / (1.0 + w[0].lambda_bar.abs()))
                .fold(f64::INFINITY, f64::min),
            None => f64::INFINITY,
        };
        pass &= worst >= -MONOTONICITY_TOL && report.bar_violations.is_empty();
        parts.push(match from {
            Some(k) => format!("{name} nonpositive from sample {k}, min delta {worst:.2e}"),
            None => format!("{name} never nonpositive"),
        });
    }
    Ok((pass, format!("{} (>= -{MONOTONICITY_TOL:e})", parts.join(", "))))
}

/// Largest trapezoidal residual of the conjugate heat equation along a
/// backward solve, and the largest mass drift, at one CFL factor.
fn heat_residual(s: &Scenario<f64>, cfl: f64) -> Result<(f64, f64)> {
    let mut state = FlowState::new(s.g0.clone(), None);
    let mut path = vec![(state.t, state.g.clone())];
    while state.t < HEAT_HORIZON {
        state = step_ricci(&state, next_dt(&state, cfl, HEAT_HORIZON)?, &s.model)?;
        path.push((state.t, state.g.clone()));
    }
    let terminal = lambda_eigen(&state.g, &s.model)?;
    let u_final: Vec<f64> = terminal.f_min.iter().map(|&f| (-f).exp()).collect();
    let samples = solve_conjugate_heat(&mut path, &u_final, &s.model, |_| true)?;
    let mut residual = 0.0f64;
    let mut drift = 0.0f64;
    let mut rhs_prev: Option<Vec<f64>> = None;
    for pair in samples.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let dt = b.t - a.t;
        let ra = match rhs_prev.take() {
            Some(r) => r,
            None => conjugate_heat_rhs(&a.g, &a.u, &s.model)?,
        };
        let rb = conjugate_heat_rhs(&b.g, &b.u, &s.model)?;
        let scale = a.u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for i in 0..a.u.len() {
            let r = (b.u[i] - a.u[i]) / dt - 0.5 * (ra[i] + rb[i]);
            residual = residual.max(r.abs() / scale);
        }
        rhs_prev = Some(rb);
    }
    for sample in &samples {
        let calc = BasicCalculus::new(&sample.g, &s.model)?;
        drift = drift.max((calc.integrate(&sample.u) - 1.0).abs());
    }
    Ok((residual, drift))
}

fn conjugate_heat() -> Result<(bool, String)> {
    let s = build::<f64>("conformal-taut", HEAT_DIMS)?;
    let (r1, d1) = heat_residual(&s, HEAT_CFL)?;
    let (r2, d2) = heat_residual(&s, HEAT_CFL / 2.0)?;
    let order = observed_order(r1, r2);
    let dir = tempfile::tempdir()?;
    let config = RunConfig {
        scenario: Some("conformal-taut".into()),
        input: None,
        dims: Some(HEAT_DIMS),
        flow: FlowKind::Gauged,
        horizon: HEAT_HORIZON,
        cfl: HEAT_CFL,
        lambda_every: 5,
        output: dir.path().join("gauged"),
        checkpoint_every: 10,
        seed: 0,
    };
    run::run(&config)?;
    let run_drift = read_series(&config.output.join(run::SERIES_FILE))?
        .iter()
        .map(|r| (r.mass - 1.0).abs())
        .fold(0.0, f64::max);
    let drift = d1.max(d2).max(run_drift);
    Ok((
        order >= MIN_ORDER && drift < MASS_TOL,
        format!(
            "residual {r1:.3e} -> {r2:.3e} under dt/2, order {order:.2} (>= {MIN_ORDER}), mass drift {drift:.2e} (< {MASS_TOL:e})"
        ),
    ))
}

fn gradient_flow_monotone() -> Result<(bool, String)> {
    let s = build::<f64>("weighted-exact", DIMS)?;
    let values = gradient_f_series(&s, RICCI_CFL, GRADIENT_STEPS)?;
    let worst = values
        .windows(2)
        .map(|w| (w[1] - w[0]) / (1.0 + w[0].abs()))
        .fold(f64::INFINITY, f64::min);
    Ok((
        worst >= -MONOTONICITY_TOL,
        format!(
            "min relative delta {worst:.2e} over {GRADIENT_STEPS} steps (>= -{MONOTONICITY_TOL:e}), F {:.6e} -> {:.6e}",
            values[0],
            values[values.len() - 1]
        ),
    ))
}

fn copy_dir(from: &Path, to: &Path) -> Result<()> {
    fs::create_dir_all(to)?;
    for entry in fs::read_dir(from)? {
        let entry = entry?;
        fs::copy(entry.path(), to.join(entry.file_name()))?;
    }
    Ok(())
}

fn persistence() -> Result<(bool, String)> {
    let dir = tempfile::tempdir()?;
    let whole = dir.path().join("whole");
    let config = RunConfig {
        scenario: Some("conformal-taut".into()),
        input: None,
        dims: Some(32),
        flow: FlowKind::Ricci,
        horizon: 0.01,
        cfl: 0.1,
        lambda_every: 5,
        output: whole.clone(),
        checkpoint_every: 20,
        seed: 0,
    };
    run::run(&config)?;
    let cut = dir.path().join("cut");
    copy_dir(&whole, &cut)?;
    let steps = run::checkpoint_steps(&cut)?;
    let keep = steps[steps.len() / 2];
    for &s in steps.iter().filter(|&&s| s > keep) {
        fs::remove_file(run::checkpoint_path(&cut, s))?;
    }
    run::resume(&cut)?;
    let series_same = fs::read(whole.join(run::SERIES_FILE))? == fs::read(cut.join(run::SERIES_FILE))?;
    let last = *steps.last().expect("checkpoints");
    let final_same = fs::read(run::checkpoint_path(&whole, last))? == fs::read(run::checkpoint_path(&cut, last))?;

    let s = build::<f64>("weighted-exact", 32)?;
    let f = FieldSampler::new(SEED).scalar(s.grid(), 0.3);
    let original = Checkpoint {
        kind: FlowKind::Ricci,
        run_hash: 0,
        rows: 0,
        state: FlowState::new(s.g0.clone(), Some(f.clone())),
        warm_start: None,
        model: Some(s.model.clone()),
    };
    let path = dir.path().join("field.bin");
    original.save(&path)?;
    let loaded = Checkpoint::<f64>::load(&path)?;
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let planes_same = s.g0.tensor().comps.iter().zip(&loaded.state.g.tensor().comps).all(|(a, b)| bits(a) == bits(b))
        && loaded.state.f.as_deref().map(bits) == Some(bits(&f))
        && loaded.model.as_ref().map(|m| bits(m.w())) == Some(bits(s.model.w()));
    let bytes_same = loaded.encode() == fs::read(&path)?;
    Ok((
        series_same && final_same && planes_same && bytes_same,
        format!(
            "resumed after step {keep} of {last}: series identical {series_same}, final checkpoint identical {final_same}; field file bit-exact {}",
            planes_same && bytes_same
        ),
    ))
}
