//! Sample-quality metrics and closed-form diagnostics.

mod assignment;
mod metrics;
mod theory;

pub use assignment::min_cost_assignment;
pub use metrics::*;
pub use theory::*;
