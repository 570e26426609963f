//! Topology-specific mixture of experts for molecular property prediction.
//!
//! Molecules are parsed from SMILES ([`molio`]), encoded by a GIN ([`encoder`]), routed to
//! experts by a clustering gate ([`gating`], [`experts`]) and trained with classification,
//! clustering and scaffold-alignment objectives ([`losses`], [`trainer`]).

pub mod autodiff;
pub mod encoder;
pub mod error;
pub mod experts;
pub mod gating;
pub mod losses;
pub mod metrics;
pub mod molio;
pub mod nn;
pub mod rng;
pub mod scaffold;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
