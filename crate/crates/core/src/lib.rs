//! Numerical laboratory for quantum-mechanics-free subsystems (QMFSs).
//!
//! A QMFS is a set of observables whose Heisenberg-picture operators commute
//! at every pair of measurement times, so they can be monitored without
//! measurement back action and behave as classical variables. The crate
//! builds such subsystems and checks them several independent ways:
//!
//! - [`phase_space`]: symplectic linear systems, exact two-time commutators
//!   and an algebraic QMFS verdict.
//! - [`model_library`]: the oscillator, positive/negative-mass pair,
//!   sideband and Holstein-Primakoff spin-pair models.
//! - [`conditional_gaussian`]: continuous measurement with back action,
//!   Riccati covariance flow, seeded trajectories and force estimation.
//! - [`fock_oracle`]: truncated Fock-space brute force for the general
//!   Koopman Hamiltonian.
//! - [`koopman_classical`]: the classical flow obeyed inside the QMFS and
//!   Liouville transport of ensembles.
//! - [`spin_exact`]: exact finite-`J0` spin-pair dynamics.
//! - [`stroboscopic`]: Pauli-Z propagation through reversible circuits.

pub mod conditional_gaussian;
pub mod error;
pub mod fixtures;
pub mod fock_oracle;
pub mod koopman_classical;
pub mod linalg;
pub mod model_library;
pub mod phase_space;
pub mod poly;
pub mod spin_exact;
pub mod stroboscopic;

pub use error::{QmfsError, Result};
pub use phase_space::{is_qmfs, two_time_commutator, LinearModel, ObservableSet, Verdict};
