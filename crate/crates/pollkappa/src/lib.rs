//! Simulation and analysis toolkit for cyclic-service (polling) systems whose
//! service disciplines have the branching property and whose parameters are
//! redrawn at random every server cycle.
//!
//! The crate has two independent samplers of the same object — a
//! discrete-event polling simulator ([`polling`]) and a multitype branching
//! engine ([`branching`]) — plus exact mean-matrix computations ([`policy`]),
//! random matrix-product analytics ([`spectral`]) and tail/moment statistics
//! ([`tails`]). The `pollkappa` binary ties them together behind reproducible
//! seeded experiments ([`cli`]).

pub mod branching;
pub mod cli;
pub mod env;
pub mod mat;
pub mod policy;
pub mod polling;
pub mod report;
pub mod spectral;
pub mod stream;
pub mod tails;
