//! Dynamically-modified decoherence of singly-excited multipartite systems.
//!
//! A register of multi-level particles shares one excitation and couples to a
//! common zero-temperature bath. Local impulsive phase modulation reshapes
//! the decoherence matrix J(t); the crate computes J(t) in the time and
//! frequency domains, propagates amplitudes, scores the ICP/IIP/IIT
//! symmetries of J, and searches pulse parameters that impose them.
//!
//! - [`bath`]: channels, the Gaussian bath model, Φ(t) and G(ω)
//! - [`modulation`]: pulse trains, their spectra, Stark-shift schedules
//! - [`decoherence`]: rate matrix R(t), J(t), and the overlap route
//! - [`dynamics`]: propagation, fidelity factors, the discretized-bath oracle
//! - [`symmetry`]: deviations, cross suppression, pulse optimization
//! - [`runner`]: scenario files and the batch commands

// Validation uses `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bath;
pub mod decoherence;
pub mod dynamics;
pub mod linalg;
pub mod modulation;
pub mod quadrature;
pub mod runner;
pub mod symmetry;

pub use bath::{Bath, ChannelSet, GaussianBathModel};
pub use decoherence::{integrated_j, overlap_j, DecoherenceTrajectory, QuadratureConfig};
pub use dynamics::{fidelity, propagate, FidelityReport, PropagationMode};
pub use modulation::PulseSequence;
pub use runner::{RunError, Scenario};
pub use symmetry::{optimize_pulses, SymmetryKind};
