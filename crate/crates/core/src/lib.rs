//! Micromaser master equations with one- and two-atom events: generator
//! assembly, stationary photon statistics, the subleading relaxation rate and
//! θ-sweeps.

pub mod error;
pub mod generators;
pub mod oracle;
pub mod params;
pub mod quadrature;
pub mod spectral;
pub mod sweep;

pub use error::{Error, Result, SpectrumAnomaly};
pub use generators::{
    build_cavity_damping, build_generator, build_one_atom_op, build_two_atom_op,
    build_two_atom_op_flat, two_atom_coeffs, GeneratorMatrix, MatrixKind, MatrixMeta, Model,
    TwoAtomCoeffs,
};
pub use params::{EpsMode, ModelParams};
pub use quadrature::QuadratureSpec;
pub use spectral::{
    analyze, correlation_length, observables, stationary_nullspace, stationary_one_atom,
    subleading_eigenvalue, Eigenvalue, Observables, PhotonDistribution, SpectralOptions,
    SpectralSummary,
};
pub use sweep::{emit_markers, run_sweep, write_csv, SweepConfig, SweepRecord};
