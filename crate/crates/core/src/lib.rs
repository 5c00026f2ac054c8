//! Federated neurosymbolic forecasting of vBS CPU load.
//!
//! Each client (a virtualized base station) fits a small MLP to its own
//! telemetry by maximising the satisfaction of a fuzzy-logic equality axiom.
//! A server averages client models weighted by sample count and broadcasts
//! the result. The same protocol can be run with an asymmetric
//! provisioning-cost loss for comparison, and [`metrics`] measures how much
//! CPU each model over- and under-provisions.
//!
//! ```
//! use flmr::logic::{loss_and_grad, FuzzyConfig};
//!
//! let (report, grad) = loss_and_grad(&[0.4, 0.7], &[0.5, 0.7], &FuzzyConfig::default()).unwrap();
//! assert_eq!(report.loss, 1.0 - report.phi);
//! assert!(grad[0] < 0.0); // under-prediction: raising it lowers the loss
//! assert_eq!(grad[1], 0.0);
//! ```
//!
//! The guide in `book/` walks through each piece; its code listings are
//! compiled and run as doctests of this crate.

pub mod data;
pub mod deepcog;
pub mod experiment;
pub mod federation;
pub mod logic;
pub mod metrics;
pub mod nn;
pub mod rng;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/satisfaction.md")]
    mod satisfaction {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/workload.md")]
    mod workload {}
    #[doc = include_str!("../../../book/src/federation.md")]
    mod federation {}
    #[doc = include_str!("../../../book/src/provisioning.md")]
    mod provisioning {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
