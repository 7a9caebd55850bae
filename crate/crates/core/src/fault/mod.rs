//! Fault injection: the site universe, single-fault runs and Monte-Carlo
//! campaigns.

mod campaign;
mod inject;
mod site;

pub use campaign::*;
pub use inject::*;
pub use site::*;
