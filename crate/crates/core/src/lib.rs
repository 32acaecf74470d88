//! Finite-width experiments on integrable, mean-field and NTK-style
//! parameterizations of deep fully-connected networks.
//!
//! The crate is organised bottom-up: [`params`] holds exponent tables,
//! [`net`] is the finite-width engine, [`oracle`] gives infinite-width
//! predictions, [`probes`] turns trained networks into measurements, and
//! [`runner`] wires everything into CSV-emitting experiments.

pub mod activation;
pub mod config;
pub mod data;
pub mod error;
pub mod net;
pub mod oracle;
pub mod params;
pub mod probes;
pub mod report;
pub mod rng;
pub mod runner;

pub use activation::Activation;
pub use error::{Error, Result};
pub use net::{Loss, Network, Sample, Target};
pub use params::{make_spec, BiasMode, Exponent, ParamName, ParamSpec, Slot, Variant};
