//! Seeded band-limited random fields for perturbations and solver starts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;

use crate::field::{sym_len, SymTensorField};
use crate::grid::ChartGrid;
use crate::scalar::Real;
use crate::spectral::PeriodicFft;

/// Deterministic source of smooth random fields.
pub struct FieldSampler {
    rng: ChaCha8Rng,
}

impl FieldSampler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Sum of Fourier modes with `|k_a| ≤ dims_a / 4`, coefficients uniform in
    /// `[−1, 1]` damped by `(1 + |k|²)^{-2}`, then scaled to max-norm `amplitude`.
    pub fn scalar<T: Real>(&mut self, grid: &ChartGrid<T>, amplitude: f64) -> Vec<T> {
        let cutoffs: Vec<i64> = grid.dims().iter().map(|&n| (n / 4) as i64).collect();
        self.scalar_band(grid, amplitude, &cutoffs)
    }

    /// As [`Self::scalar`] with explicit per-axis mode cutoffs, so the same
    /// seed gives the same continuum field on every grid resolving the band.
    pub fn scalar_band<T: Real>(&mut self, grid: &ChartGrid<T>, amplitude: f64, cutoffs: &[i64]) -> Vec<T> {
        let m = grid.m();
        let cutoffs = cutoffs.to_vec();
        let mut modes: Vec<(Vec<i64>, f64, f64)> = Vec::new();
        let mut k = vec![0i64; m];
        for (a, c) in k.iter_mut().zip(&cutoffs) {
            *a = -c;
        }
        loop {
            // half-space of wave vectors: first nonzero component positive
            let first = k.iter().find(|&&x| x != 0);
            if first.is_some_and(|&x| x > 0) {
                let k2: i64 = k.iter().map(|x| x * x).sum();
                let damp = 1.0 / ((1 + k2) as f64).powi(2);
                let a = self.rng.random_range(-1.0..1.0) * damp;
                let b = self.rng.random_range(-1.0..1.0) * damp;
                modes.push((k.clone(), a, b));
            }
            let mut axis = m;
            loop {
                if axis == 0 {
                    return self.synthesize(grid, &modes, amplitude);
                }
                axis -= 1;
                if k[axis] < cutoffs[axis] {
                    k[axis] += 1;
                    break;
                }
                k[axis] = -cutoffs[axis];
            }
        }
    }

    fn synthesize<T: Real>(&self, grid: &ChartGrid<T>, modes: &[(Vec<i64>, f64, f64)], amplitude: f64) -> Vec<T> {
        let dims = grid.dims();
        let mut spectrum = vec![Complex::new(0.0, 0.0); grid.len()];
        for (k, a, b) in modes {
            let idx = k
                .iter()
                .zip(dims)
                .fold(0, |acc, (&ki, &n)| acc * n + ki.rem_euclid(n as i64) as usize);
            spectrum[idx] = Complex::new(*a, -*b);
        }
        let raw = PeriodicFft::<f64>::from_dims(dims).synthesize(spectrum);
        let peak = raw.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        let scale = if peak > 0.0 { amplitude / peak } else { 0.0 };
        raw.into_iter().map(|x| T::lit(x * scale)).collect()
    }

    /// Symmetric tensor with independent band-limited components.
    pub fn sym_tensor<T: Real>(&mut self, grid: &ChartGrid<T>, amplitude: f64) -> SymTensorField<T> {
        let m = grid.m();
        let planes = (0..sym_len(m)).map(|_| self.scalar(grid, amplitude)).collect();
        SymTensorField::from_planes(m, planes).expect("component count matches")
    }

    /// One-form with independent band-limited components.
    pub fn one_form<T: Real>(&mut self, grid: &ChartGrid<T>, amplitude: f64) -> crate::field::OneForm<T> {
        crate::field::OneForm {
            comps: (0..grid.m()).map(|_| self.scalar(grid, amplitude)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampler_is_deterministic_and_scaled() {
        let grid = ChartGrid::<f64>::unit(2, 16).unwrap();
        let a = FieldSampler::new(3).scalar(&grid, 0.5);
        let b = FieldSampler::new(3).scalar(&grid, 0.5);
        assert_eq!(a, b);
        let peak = a.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        assert!((peak - 0.5).abs() < 1e-15);
    }
}
