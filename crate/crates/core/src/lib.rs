//! Discrete operators, Helmholtz convolutions and static/low-frequency
//! solvers for verifying the time-harmonic Maxwell system on exterior and
//! bounded domains.
//!
//! The main entry points:
//! - [`grid::GridDomain`] and [`field::StaggeredField`] for the staggered grid,
//! - [`green::HelmholtzKernel`] and the convolutions in [`green`],
//! - [`whole_space`] for the representation formulas and their limits,
//! - [`maxwell`] for the assembled bounded-domain operator, its spectrum,
//!   resolvent and Neumann series,
//! - [`statics`] for static solutions with moment constraints,
//! - [`experiments`] for the configuration-driven verification runs.

pub mod data;
pub mod error;
pub mod experiments;
pub mod field;
pub mod green;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod material;
pub mod maxwell;
pub mod operators;
pub mod sparse;
pub mod statics;
pub mod whole_space;

pub use error::{Error, Result};
pub use experiments::{ExperimentConfig, ExperimentKind, SweepResult};
pub use field::StaggeredField;
pub use green::{HelmholtzKernel, Wave, C3};
pub use grid::{BoundaryLabel, FieldKind, GridDomain, Mask};
pub use material::{Gamma, MaterialLaw, WeightExponent};
pub use maxwell::{assemble, MaxwellOperatorMatrix, Side, SpectralData};
pub use num_complex::Complex64;
pub use statics::{BasisSetB, StaticSolver, StepsReport};
pub use whole_space::{IsotropicBlockConstants, WholeSpaceSolution};
