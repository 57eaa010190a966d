//! Pareto-optimal beamforming for multi-cell MISO interference channels.
//!
//! A rate-profile bisection reduces every boundary point to a sequence of
//! second-order cone feasibility problems. Each feasibility problem is split
//! into one convex set per cell and solved by repeated Euclidean projections,
//! either in parallel with a central averaging step ([`apb`]) or sequentially
//! around a ring of base stations ([`cpb`]).
//!
//! Module map:
//!
//! - [`model`]: scenario data, SINR/rate evaluation, Pareto dominance.
//! - [`transform`]: rate profile to SNR targets, stacked SOC instance, real lifting.
//! - [`projop`]: closed-form projectors, Dykstra, and the interior-point family projector.
//! - [`apb`] / [`cpb`]: the two distributed feasibility algorithms and their stopping rules.
//! - [`pareto`]: bisection over the sum rate and boundary sweeps.
//! - [`oracle`]: brute-force references used by the test suites.
//! - [`sim`]: message-passing simulation of the star and ring topologies.

pub mod apb;
pub mod cpb;
pub mod error;
pub mod model;
pub mod oracle;
pub mod pareto;
pub mod projop;
pub mod sim;
pub mod transform;

pub use error::{Error, Result};
pub use model::{BeamformerSet, LogBase, RateTuple, Scenario};
pub use transform::{FeasibilityTarget, LiftedInstance, RateProfile, StackedInstance};
