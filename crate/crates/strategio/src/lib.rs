//! Strategyproof intervention assignment on panel data.
//!
//! A principal observes units' pre-intervention outcome trajectories and must
//! commit to a policy mapping those trajectories to one of `k` interventions.
//! Units prefer higher-indexed interventions and may spend a bounded l2 effort
//! budget to manipulate their trajectories before the policy is applied. This
//! crate provides:
//!
//! - latent-factor panel generation with counterfactual ground truth
//!   ([`panel_model`]);
//! - principal rewards and their dual-space representation as per-intervention
//!   vectors over the pre-period ([`rewards`]);
//! - polyhedral type regions, cone projection, best-response balls, and the
//!   separation-of-types checker ([`geometry`]);
//! - the intervention-policy family with assignment and unit best response
//!   ([`policies`]);
//! - principal component regression and the policy-learning pipelines
//!   ([`estimation`]);
//! - end-to-end experiments, demos, and metrics ([`harness`]).

pub mod error;
pub mod estimation;
pub mod geometry;
pub mod harness;
pub mod panel_model;
pub mod policies;
pub mod rewards;

pub use error::{Error, Result};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
