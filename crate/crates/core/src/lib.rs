//! Pseudoclassical simulation of particle transport through a boundary-driven
//! Bose-Hubbard chain.
//!
//! The quantum chain is replaced by `L` coupled nonlinear oscillators whose
//! first and last sites feel friction and stochastic forcing. Ensembles of
//! Langevin trajectories give the single-particle density matrix (SPDM), the
//! particle current and per-site spectral densities. Two exact references keep
//! the Monte-Carlo honest: the linear (`g = 0`) chain, whose SPDM obeys a closed
//! linear system, and the single damped oscillator integrated as a Lindblad
//! master equation in a truncated Fock basis.

pub mod ensemble;
pub mod error;
pub mod langevin;
pub mod linear_oracle;
pub mod model;
pub mod quantum_oracle;
pub mod spectral;
pub mod stats;

pub use num_complex::Complex64 as C64;

pub use ensemble::{current_from_spdm, run_ensemble, spdm_estimate, EnsembleConfig, EnsembleStats};
pub use error::{Error, Result};
pub use langevin::{simulate, step, IntegratorConfig, NoiseStream, Trajectory};
pub use linear_oracle::{
    relaxation_time, single_site_action_reference, spdm_evolution, stationary_action_formula, stationary_current_formula,
    stationary_spdm, LinearSystemOperator,
};
pub use model::{
    ChainParams, Dynamics, OscState, SingleSiteParams, SpdmMatrix, TransportRegime,
};
pub use quantum_oracle::{
    classical_consistency, evolve_master, mean_number, steady_number, ConsistencyReport, FockDensityMatrix,
    MasterForm, OscillatorQuantumParams,
};
pub use spectral::{estimate_spectrum, lorentzian_reference, spectral_centroid, SpectrumEstimate};
pub use stats::Estimate;
