#![allow(dead_code)]

use std::f64::consts::TAU;
use std::sync::Arc;

use transflow_core::field::{MetricField, SymTensorField};
use transflow_core::grid::ChartGrid;

pub fn unit_grid(m: usize, n: usize) -> Arc<ChartGrid<f64>> {
    Arc::new(ChartGrid::unit(m, n).expect("grid"))
}

/// A 2D metric from closed-form components `(g00, g01, g11)`.
pub fn metric_2d(grid: &Arc<ChartGrid<f64>>, g: impl Fn(f64, f64) -> [f64; 3] + Sync) -> MetricField<f64> {
    let planes = (0..3).map(|c| grid.sample(|y| g(y[0], y[1])[c])).collect();
    MetricField::new(grid.clone(), SymTensorField::from_planes(2, planes).expect("planes")).expect("metric")
}

/// Anisotropic test metric with all components varying, and its first
/// derivatives `[∂_x, ∂_y]` of `(g00, g01, g11)`.
pub fn skew_metric(x: f64, y: f64) -> ([f64; 3], [[f64; 3]; 2]) {
    let (sx, cx) = (TAU * x).sin_cos();
    let (sy, cy) = (TAU * y).sin_cos();
    let g = [1.0 + 0.2 * sx * cy, 0.1 * sx * sy, 1.0 + 0.15 * cx];
    let dx = [0.2 * TAU * cx * cy, 0.1 * TAU * cx * sy, -0.15 * TAU * sx];
    let dy = [-0.2 * TAU * sx * sy, 0.1 * TAU * sx * cy, 0.0];
    (g, [dx, dy])
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}
