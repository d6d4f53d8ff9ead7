//! Exact tools for preparing resonating-valence-bond (RVB) spin states by
//! conditioning collective emission on a null photon record.
//!
//! `M` excited qubits sit above a row of `N >= M` ground-state qubits, all
//! coupled to one lossy cavity mode.  Runs in which no photon is ever
//! detected collapse the register onto its unique subradiant component, an
//! equal-weight superposition of singlet dimer coverings between the rows.
//! The crate provides three independent constructions of that state, the
//! angular-momentum coefficients behind its closed form, a compressed
//! representation in the row-symmetric sector, and a quantum-trajectory
//! simulation of the conditional dynamics in both a full spin-photon model
//! and its adiabatically eliminated collective limit.

pub mod angular;
pub mod dynamics;
pub mod error;
pub mod numfmt;
pub mod rvb;
pub mod sector;
pub mod spin_basis;

pub use dynamics::{CavityParams, EnsembleStats, Model, TrajectoryConfig, TrajectoryRecord};
pub use error::{Error, Result};
pub use num_complex::Complex64;
pub use sector::{SchmidtSpectrum, SectorState};
pub use spin_basis::{BasisState, FullState, RowSplit, DEFAULT_Q_MAX};
