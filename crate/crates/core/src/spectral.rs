//! Fourier-diagonal preconditioning and a matrix-free conjugate-gradient solver.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::ChartGrid;
use crate::scalar::{ordered_sum, Real};

/// Multidimensional periodic FFT over a chart grid, applied axis by axis.
pub struct PeriodicFft<T: Real> {
    dims: Vec<usize>,
    strides: Vec<usize>,
    forward: Vec<Arc<dyn Fft<T>>>,
    inverse: Vec<Arc<dyn Fft<T>>>,
}

impl<T: Real> PeriodicFft<T> {
    pub fn new(grid: &ChartGrid<T>) -> Self {
        Self::from_dims(grid.dims())
    }

    pub fn from_dims(dims: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        let dims = dims.to_vec();
        let m = dims.len();
        let mut strides = vec![1; m];
        for a in (0..m - 1).rev() {
            strides[a] = strides[a + 1] * dims[a + 1];
        }
        Self {
            forward: dims.iter().map(|&n| planner.plan_fft_forward(n)).collect(),
            inverse: dims.iter().map(|&n| planner.plan_fft_inverse(n)).collect(),
            dims,
            strides,
        }
    }

    fn along_axes(&self, data: &mut [Complex<T>], plans: &[Arc<dyn Fft<T>>]) {
        let total = data.len();
        for (a, plan) in plans.iter().enumerate() {
            let n = self.dims[a];
            let stride = self.strides[a];
            let mut line = vec![Complex::new(T::zero(), T::zero()); n];
            let mut scratch = vec![Complex::new(T::zero(), T::zero()); plan.get_inplace_scratch_len()];
            for block in (0..total).step_by(n * stride) {
                for inner in 0..stride {
                    let base = block + inner;
                    for (i, c) in line.iter_mut().enumerate() {
                        *c = data[base + i * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (i, c) in line.iter().enumerate() {
                        data[base + i * stride] = *c;
                    }
                }
            }
        }
    }

    /// Applies the Fourier multiplier `symbol[k]` to a real field. The
    /// multiplier must be real and even in `k` so the result stays real.
    pub fn apply_multiplier(&self, field: &[T], symbol: &[T]) -> Vec<T> {
        let mut data: Vec<Complex<T>> = field.iter().map(|&x| Complex::new(x, T::zero())).collect();
        self.along_axes(&mut data, &self.forward);
        for (c, &s) in data.iter_mut().zip(symbol) {
            *c = *c * s;
        }
        self.along_axes(&mut data, &self.inverse);
        let scale = T::one() / T::count(field.len());
        data.iter().map(|c| c.re * scale).collect()
    }

    /// Real part of `Σ_k X_k e^{+2πi k·j/n}` at every node `j`, with the
    /// coefficients `X` stored at the wrapped wave-vector positions.
    pub fn synthesize(&self, mut spectrum: Vec<Complex<T>>) -> Vec<T> {
        self.along_axes(&mut spectrum, &self.inverse);
        spectrum.iter().map(|c| c.re).collect()
    }
}

/// Inverse of the constant-coefficient operator
/// `f ↦ Σ_ab D_a^T(c^{ab} D_b f) + c₀ f`, applied in Fourier space.
pub struct FourierPreconditioner<T: Real> {
    fft: PeriodicFft<T>,
    inv_symbol: Vec<T>,
}

impl<T: Real> FourierPreconditioner<T> {
    /// `coef` holds `c^{ab}` as a full row-major `m×m` matrix.
    pub fn new(grid: &ChartGrid<T>, coef: &[T], c0: T) -> Self {
        let m = grid.m();
        let symbols: Vec<Vec<T>> = (0..m)
            .map(|a| (0..grid.dims()[a]).map(|k| grid.stencil_symbol(a, k)).collect())
            .collect();
        let inv_symbol = (0..grid.len())
            .map(|node| {
                let s: Vec<T> = (0..m).map(|a| symbols[a][grid.index_along(node, a)]).collect();
                let mut q = c0;
                for a in 0..m {
                    for b in 0..m {
                        q += coef[a * m + b] * s[a] * s[b];
                    }
                }
                T::one() / q
            })
            .collect();
        Self {
            fft: PeriodicFft::new(grid),
            inv_symbol,
        }
    }

    pub fn apply(&self, r: &[T]) -> Vec<T> {
        self.fft.apply_multiplier(r, &self.inv_symbol)
    }
}

/// Euclidean dot product in node order.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    ordered_sum(a.iter().zip(b).map(|(&x, &y)| x * y))
}

/// Outcome of a linear solve.
#[derive(Clone, Copy, Debug)]
pub struct SolveStats<T> {
    pub iterations: usize,
    pub relative_residual: T,
}

/// Preconditioned conjugate gradients for a symmetric positive-definite
/// operator given matrix-free. `x` holds the initial guess on entry.
pub fn pcg<T: Real>(
    apply: impl Fn(&[T]) -> Vec<T>,
    precondition: impl Fn(&[T]) -> Vec<T>,
    b: &[T],
    x: &mut [T],
    tol: T,
    max_iter: usize,
) -> Result<SolveStats<T>> {
    let b_norm = dot(b, b).sqrt();
    if b_norm.is_zero() {
        x.iter_mut().for_each(|v| *v = T::zero());
        return Ok(SolveStats {
            iterations: 0,
            relative_residual: T::zero(),
        });
    }
    let ax = apply(x);
    let mut r: Vec<T> = b.iter().zip(&ax).map(|(&bi, &ai)| bi - ai).collect();
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 0..max_iter {
        let res = dot(&r, &r).sqrt() / b_norm;
        if res <= tol {
            return Ok(SolveStats {
                iterations: it,
                relative_residual: res,
            });
        }
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > T::zero()) {
            return Err(Error::NoConvergence {
                solver: "conjugate gradients (operator not positive definite)",
                iterations: it,
                residual: res.to_f64_lossy(),
            });
        }
        let alpha = rz / pap;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        z = precondition(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..p.len() {
            p[i] = z[i] + beta * p[i];
        }
    }
    let res = dot(&r, &r).sqrt() / b_norm;
    if res <= tol {
        Ok(SolveStats {
            iterations: max_iter,
            relative_residual: res,
        })
    } else {
        Err(Error::NoConvergence {
            solver: "conjugate gradients",
            iterations: max_iter,
            residual: res.to_f64_lossy(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preconditioner_inverts_constant_coefficient_operator() {
        let grid = ChartGrid::<f64>::new(&[12, 10], &[1.0, 2.0]).unwrap();
        let coef = [2.0, 0.3, 0.3, 1.0];
        let c0 = 1.5;
        let apply = |f: &[f64]| {
            let df: Vec<Vec<f64>> = (0..2).map(|a| grid.diff(f, a)).collect();
            let mut out: Vec<f64> = f.iter().map(|x| c0 * x).collect();
            for a in 0..2 {
                let flux: Vec<f64> = (0..f.len())
                    .map(|n| (0..2).map(|b| coef[a * 2 + b] * df[b][n]).sum())
                    .collect();
                let d = grid.diff(&flux, a);
                for (o, v) in out.iter_mut().zip(d) {
                    *o -= v;
                }
            }
            out
        };
        let f: Vec<f64> = (0..grid.len()).map(|i| ((i * 37 % 11) as f64).sin()).collect();
        let p = FourierPreconditioner::new(&grid, &coef, c0);
        let back = p.apply(&apply(&f));
        for (a, b) in f.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pcg_solves_spd_system() {
        let n = 50;
        let apply = |x: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    3.0 * x[i] - if i > 0 { x[i - 1] } else { 0.0 } - if i + 1 < n { x[i + 1] } else { 0.0 }
                })
                .collect()
        };
        let b: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let mut x = vec![0.0; n];
        let stats = pcg(apply, |r: &[f64]| r.to_vec(), &b, &mut x, 1e-13, 200).unwrap();
        assert!(stats.relative_residual <= 1e-13);
        let ax = apply(&x);
        assert!(ax.iter().zip(&b).all(|(a, b)| (a - b).abs() < 1e-11));
    }
}
