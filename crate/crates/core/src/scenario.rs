//! Bundled, reproducible test geometries.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{MetricField, SymTensorField};
use crate::grid::ChartGrid;
use crate::model::FoliationModel;
use crate::scalar::Real;

/// Amplitude of the conformal factor `u` in the conformal scenarios.
pub const CONFORMAL_AMPLITUDE: f64 = 0.1;
/// Amplitude of the leaf-volume potential `h` in `weighted-exact`.
pub const WEIGHT_AMPLITUDE: f64 = 0.3;
/// Harmonic part of `κ_b` in `twisted-nontaut`.
pub const TWIST: [f64; 2] = [0.5, 0.0];
/// Amplitude of the stretch in `anisotropic`.
pub const ANISOTROPY: f64 = 0.3;

pub const CATALOG: &[&str] = &[
    "flat-taut",
    "conformal-taut",
    "weighted-exact",
    "twisted-nontaut",
    "anisotropic",
    "m3-flat",
    "m3-conformal",
];

/// How a reference value is known.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    /// Evaluated in closed form for the continuum problem.
    ClosedForm,
    /// Follows from a structural identity, independent of resolution.
    Identity,
}

#[derive(Clone, Debug, Serialize)]
pub struct Expected {
    pub name: &'static str,
    pub value: f64,
    pub provenance: Provenance,
}

/// A metric together with its foliation model.
#[derive(Clone, Debug)]
pub struct Scenario<T> {
    pub name: &'static str,
    pub description: &'static str,
    pub model: FoliationModel<T>,
    pub g0: MetricField<T>,
    pub expected: Vec<Expected>,
}

impl<T: Real> Scenario<T> {
    pub fn grid(&self) -> &Arc<ChartGrid<T>> {
        self.model.grid()
    }

    pub fn expected(&self, name: &str) -> Option<f64> {
        self.expected.iter().find(|e| e.name == name).map(|e| e.value)
    }
}

fn expect(name: &'static str, value: f64, provenance: Provenance) -> Expected {
    Expected { name, value, provenance }
}

/// `sin(2πy¹)·Π_{a>0} cos(2πyᵃ)` on unit periods.
fn product_mode<T: Real>(y: &[T]) -> T {
    let tau = T::TAU();
    let mut v = (tau * y[0]).sin();
    for &c in &y[1..] {
        v *= (tau * c).cos();
    }
    v
}

/// Builds a catalog scenario on a unit-period grid with `dims` nodes per axis.
pub fn build<T: Real>(name: &str, dims: usize) -> Result<Scenario<T>> {
    let m = if name.starts_with("m3-") { 3 } else { 2 };
    let grid = Arc::new(ChartGrid::unit(m, dims)?);
    let taut = || FoliationModel::taut(grid.clone());
    let flat = || MetricField::identity(grid.clone());
    let (name, description, model, g0, expected) = match name {
        "flat-taut" => (
            "flat-taut",
            "flat unit torus, constant leaf volume, minimal leaves",
            taut(),
            flat(),
            vec![
                expect("lambda", 0.0, Provenance::Identity),
                expect("volume", 1.0, Provenance::Identity),
            ],
        ),
        "conformal-taut" => {
            let a = T::lit(CONFORMAL_AMPLITUDE);
            let u = grid.sample(|y| a * product_mode(y));
            (
                "conformal-taut",
                "conformally flat torus e^{2u}δ, u = 0.1 sin(2πy¹)cos(2πy²), minimal leaves",
                taut(),
                MetricField::conformal(grid.clone(), &u)?,
                vec![],
            )
        }
        "weighted-exact" => {
            let a = T::lit(WEIGHT_AMPLITUDE);
            let tau = T::TAU();
            let h = grid.sample(|y| a * (tau * y[0]).cos());
            (
                "weighted-exact",
                "flat torus, leaf volume e^{−h}, h = 0.3 cos(2πy¹), κ_b = dh",
                FoliationModel::from_potential(grid.clone(), h, vec![T::zero(); m])?,
                flat(),
                vec![expect("lambda", 0.0, Provenance::ClosedForm)],
            )
        }
        "twisted-nontaut" => {
            let c: Vec<T> = TWIST.iter().map(|&x| T::lit(x)).collect();
            let c2 = TWIST.iter().map(|x| x * x).sum();
            (
                "twisted-nontaut",
                "flat torus, constant leaf volume, κ_b = 0.5 dy¹ (nontrivial class)",
                FoliationModel::from_potential(grid.clone(), vec![T::zero(); grid.len()], c)?,
                flat(),
                vec![expect("lambda", c2, Provenance::ClosedForm)],
            )
        }
        "anisotropic" => {
            let a = T::lit(ANISOTROPY);
            let tau = T::TAU();
            let stretch = grid.sample(|y| T::one() + a * (tau * y[0]).cos());
            let mut t = SymTensorField::identity(m, grid.len());
            for (x, s) in t.get_mut(1, 1).iter_mut().zip(&stretch) {
                *x = *s * *s;
            }
            (
                "anisotropic",
                "g = diag(1, (1 + 0.3 cos 2πy¹)²), minimal leaves",
                taut(),
                MetricField::new(grid.clone(), t)?,
                vec![expect("volume", 1.0, Provenance::ClosedForm)],
            )
        }
        "m3-flat" => (
            "m3-flat",
            "flat unit 3-torus, minimal leaves",
            taut(),
            flat(),
            vec![
                expect("lambda", 0.0, Provenance::Identity),
                expect("volume", 1.0, Provenance::Identity),
            ],
        ),
        "m3-conformal" => {
            let a = T::lit(CONFORMAL_AMPLITUDE);
            let u = grid.sample(|y| a * product_mode(y));
            (
                "m3-conformal",
                "conformally flat 3-torus, u = 0.1 sin(2πy¹)cos(2πy²)cos(2πy³)",
                taut(),
                MetricField::conformal(grid.clone(), &u)?,
                vec![],
            )
        }
        other => return Err(Error::UnknownScenario(other.to_string())),
    };
    Ok(Scenario {
        name,
        description,
        model,
        g0,
        expected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_entry_builds() {
        for name in CATALOG {
            let s = build::<f64>(name, 8).unwrap();
            assert_eq!(s.name, *name);
            assert_eq!(s.model.is_taut(), *name != "twisted-nontaut");
        }
        assert!(matches!(build::<f64>("sphere", 8), Err(Error::UnknownScenario(_))));
    }
}
