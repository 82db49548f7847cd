//! Robustness evaluation: zone metrics, neighborhood summaries and the decoupled protocol.

mod metrics;
mod protocol;

pub use metrics::*;
pub use protocol::*;
