//! Numerical laboratory for transverse Ricci flow on Riemannian foliations.
//!
//! A foliation is modeled through its leaf space: a periodic chart carrying
//! the transverse metric `g^T`, a leaf-volume density `w` and the closed basic
//! mean-curvature form `κ_b`. On top of that sit the transverse curvature
//! ([`geometry`]), the weighted basic operators ([`calculus`]), the entropy
//! functional and its eigenvalue characterization ([`entropy`]), the flows
//! ([`flow`]) and first-variation checks ([`variation`]).
//!
//! Everything is generic over the scalar type; the `*64` aliases below are
//! what the command-line front end uses.

pub mod calculus;
pub mod checkpoint;
pub mod entropy;
pub mod error;
pub mod field;
pub mod flow;
pub mod geometry;
pub mod grid;
pub mod model;
pub mod scalar;
pub mod scenario;
pub mod random;
pub mod run;
pub mod spectral;
pub mod variation;
pub mod verify;

pub use error::{Error, Result};
pub use field::{MetricField, OneForm, ScalarField, SymTensorField};
pub use grid::ChartGrid;
pub use model::FoliationModel;
pub use scalar::Real;

pub type ChartGrid64 = ChartGrid<f64>;
pub type MetricField64 = MetricField<f64>;
pub type FoliationModel64 = FoliationModel<f64>;
pub type ScalarField64 = ScalarField<f64>;
pub type OneForm64 = OneForm<f64>;
pub type SymTensorField64 = SymTensorField<f64>;

pub type ChartGrid32 = ChartGrid<f32>;
pub type MetricField32 = MetricField<f32>;
pub type FoliationModel32 = FoliationModel<f32>;
