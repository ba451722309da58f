//! Optimal execution timing for time series.
//!
//! Given Monte Carlo sample paths of future prices, a recurrent
//! soft-stopping network is trained to minimize expected execution cost.
//! Hard stopping times are extracted per path and aggregated by mode into
//! a single decision. Exact binomial-lattice oracles validate the learned
//! policy on small instances.

pub mod error;
pub mod evalharness;
pub mod oracle;
pub mod pathgen;
pub mod stopnet;
pub mod timing;

pub use error::{CoreError, Result};
pub use pathgen::{ArModel, GbmParams, PathSet, Provenance, SeriesHistory};
pub use stopnet::{NetworkParams, StopNetConfig, StopWeights};
pub use timing::{CostSpec, DecisionReport};
