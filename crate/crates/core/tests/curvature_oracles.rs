mod common;

use std::f64::consts::TAU;

use common::{max_abs, max_abs_diff, metric_2d, skew_metric, unit_grid};
use nalgebra::Matrix2;
use transflow_core::calculus::BasicCalculus;
use transflow_core::field::{MetricField, SymTensorField};
use transflow_core::flow::{cfl_dt, step_ricci, FlowState};
use transflow_core::geometry::{christoffel, curvature};
use transflow_core::model::FoliationModel;
use transflow_core::random::FieldSampler;
use transflow_core::scenario::build;
use transflow_core::verify::observed_order;

fn christoffel_error(n: usize) -> f64 {
    let grid = unit_grid(2, n);
    let g = metric_2d(&grid, |x, y| skew_metric(x, y).0);
    let gamma = christoffel(&g).unwrap();
    let mut worst = 0.0f64;
    for node in 0..grid.len() {
        let y = grid.coordinates(node);
        let (c, d) = skew_metric(y[0], y[1]);
        let full = Matrix2::new(c[0], c[1], c[1], c[2]);
        let inv = full.try_inverse().unwrap();
        let dg = |i: usize, j: usize, k: usize| d[i][if j == k { 2 * j } else { 1 }];
        for l in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let oracle: f64 = (0..2)
                        .map(|i| 0.5 * inv[(l, i)] * (dg(j, i, k) + dg(k, i, j) - dg(i, j, k)))
                        .sum();
                    worst = worst.max((gamma.at(node, l, j, k) - oracle).abs());
                }
            }
        }
    }
    worst
}

#[test]
fn christoffel_symbols_match_koszul_formula() {
    let (coarse, fine) = (christoffel_error(64), christoffel_error(128));
    assert!(fine < 1e-6, "error at 128: {fine:e}");
    assert!(observed_order(coarse, fine) > 3.8, "errors {coarse:e} -> {fine:e}");
}

/// `‖Scal − 2K‖∞` on `g = e^{2u}δ`, `u = a sin 2πx cos 2πy`, where
/// `K = −e^{−2u}Δ₀u = 8π² u e^{−2u}`.
fn conformal_scal_error(n: usize) -> f64 {
    let grid = unit_grid(2, n);
    let a = 0.1;
    let u = |x: f64, y: f64| a * (TAU * x).sin() * (TAU * y).cos();
    let g = metric_2d(&grid, |x, y| {
        let e = (2.0 * u(x, y)).exp();
        [e, 0.0, e]
    });
    let scal = curvature(&g).unwrap().scal;
    let exact = grid.sample(|y| {
        let v = u(y[0], y[1]);
        2.0 * 2.0 * TAU * TAU * v * (-2.0 * v).exp()
    });
    max_abs_diff(&scal, &exact)
}

#[test]
fn conformal_scalar_curvature_converges_at_fourth_order() {
    let errs: Vec<f64> = [32, 64, 128].iter().map(|&n| conformal_scal_error(n)).collect();
    for w in errs.windows(2) {
        assert!(observed_order(w[0], w[1]) > 3.8, "errors {errs:?}");
    }
    assert!(errs[2] < 1e-4);
}

#[test]
fn two_dimensional_ricci_is_half_scalar_times_metric() {
    let residual = |n: usize| {
        let grid = unit_grid(2, n);
        let g = metric_2d(&grid, |x, y| skew_metric(x, y).0);
        let bundle = curvature(&g).unwrap();
        let mut worst = 0.0f64;
        for (c, (i, j)) in [(0, 0), (0, 1), (1, 1)].into_iter().enumerate() {
            let ric = bundle.ricci.get(i, j);
            let gp = &g.tensor().comps[c];
            for node in 0..grid.len() {
                worst = worst.max((ric[node] - 0.5 * bundle.scal[node] * gp[node]).abs());
            }
        }
        worst
    };
    let (coarse, fine) = (residual(32), residual(64));
    assert!(observed_order(coarse, fine) > 3.5, "residuals {coarse:e} -> {fine:e}");
}

#[test]
fn first_bianchi_identity_holds_to_rounding_in_three_dimensions() {
    let grid = unit_grid(3, 12);
    let mut sampler = FieldSampler::new(3);
    let mut planes = sampler.sym_tensor(&grid, 0.15).comps;
    for diag in [0, 3, 5] {
        planes[diag].iter_mut().for_each(|x| *x += 1.0);
    }
    let g = MetricField::new(grid.clone(), SymTensorField::from_planes(3, planes).unwrap()).unwrap();
    let bundle = curvature(&g).unwrap();
    assert!(bundle.first_bianchi_residual() < 1e-12);
    for node in (0..grid.len()).step_by(97) {
        for l in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    for k in 0..3 {
                        let a = bundle.riemann_at(node, l, i, j, k);
                        let b = bundle.riemann_at(node, l, j, i, k);
                        assert!((a + b).abs() < 1e-12, "antisymmetry in the differentiated pair");
                    }
                }
            }
        }
    }
}

#[test]
fn contracted_bianchi_identity_converges() {
    let residual = |n: usize| {
        let grid = unit_grid(2, n);
        let g = metric_2d(&grid, |x, y| skew_metric(x, y).0);
        let bundle = curvature(&g).unwrap();
        let model = FoliationModel::taut(grid.clone());
        let calc = BasicCalculus::new(&g, &model).unwrap();
        let div = calc.div_sym(&bundle.ricci);
        let ds = calc.d(&bundle.scal);
        (0..2)
            .map(|a| {
                let half: Vec<f64> = ds.comps[a].iter().map(|x| 0.5 * x).collect();
                max_abs_diff(&div.comps[a], &half)
            })
            .fold(0.0, f64::max)
    };
    let (coarse, fine) = (residual(32), residual(64));
    assert!(observed_order(coarse, fine) > 3.5, "residuals {coarse:e} -> {fine:e}");
}

#[test]
fn ricci_flow_keeps_a_surface_metric_conformal() {
    let s = build::<f64>("conformal-taut", 32).unwrap();
    let mut state = FlowState::new(s.g0.clone(), None);
    for _ in 0..20 {
        let dt = cfl_dt(&state.g, 0.1).unwrap();
        state = step_ricci(&state, dt, &s.model).unwrap();
    }
    let c = &state.g.tensor().comps;
    assert!(max_abs(&c[1]) < 1e-12, "off-diagonal {:e}", max_abs(&c[1]));
    assert!(max_abs_diff(&c[0], &c[2]) < 1e-12, "diagonal split {:e}", max_abs_diff(&c[0], &c[2]));
    assert!(max_abs_diff(&c[0], &s.g0.tensor().comps[0]) > 1e-6, "the metric should have moved");
}
