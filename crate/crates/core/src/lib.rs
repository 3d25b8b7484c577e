//! Single-source capture-recapture: zero-truncated and one-inflated count
//! regression with Horvitz-Thompson population size estimation.

pub mod bootstrap;
pub mod dataset;
pub mod design;
pub mod diagnostics;
pub mod error;
pub mod families;
pub mod fitting;
pub mod formula;
pub mod jet;
pub mod linalg;
pub mod links;
pub mod model_frame;
pub mod parallel;
pub mod popsize;

pub use error::{Error, Result};
