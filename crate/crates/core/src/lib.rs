//! Coverage probability and local delay of K-tier cache-aided
//! heterogeneous networks.
//!
//! Two independent engines evaluate the same quantities:
//!
//! * [`analytic`] integrates the stochastic-geometry expressions (interference
//!   Laplace transforms over Poisson networks) with the adaptive routines in
//!   [`quadrature`].
//! * [`mc`] samples Poisson networks directly and averages the conditional
//!   success probability over realizations.
//!
//! Configurations are described by [`model::NetworkConfig`]. Indices of
//! tiers and files are 0-based throughout the library.

pub mod analytic;
pub mod mc;
pub mod model;
pub mod quadrature;

pub use analytic::{Analyzer, AnalyticError, CoverageBreakdown, DelayBreakdown, DelayValue, RhoKind};
pub use mc::{McEstimate, McError, McOptions, NetworkRealization, SimulationSummary};
pub use model::{validate_network, NetworkConfig, QueryParams, RawNetworkConfig, TierConfig};
pub use quadrature::{IntegrationResult, QuadratureError, Tolerance};
