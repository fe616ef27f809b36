//! Multi-agent value-decomposition ranking for search result diversification.
//!
//! Each candidate document is an agent that picks an integer score; a
//! monotonic mixing network combines the per-agent values into a team value
//! trained against the list-level diversity metric of the resulting ranking.

pub mod agentnet;
pub mod baselines;
pub mod datamodel;
pub mod diffcore;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod mixer;
pub mod ranker;
pub mod trainer;

pub use error::{Error, Result};
