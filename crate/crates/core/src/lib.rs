//! Neural surrogates for N-1 small-signal damping margins, closed-loop
//! dataset enrichment, and exact MILP verification of ReLU networks.

pub mod dataset;
pub mod embedding;
pub mod error;
pub mod harness;
pub mod loops;
pub mod milp;
pub mod net;
pub mod oracle;
pub mod sampling;
pub mod seeding;
pub mod walks;

pub use error::{Error, Result};
