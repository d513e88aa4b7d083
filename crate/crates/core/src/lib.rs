//! Energy-flow simulation and action-ranking optimization for grid-connected,
//! PV-supplied, storage-augmented prosumer neighbourhoods.
//!
//! A neighbourhood's energy management strategy is a priority order over a
//! fixed set of energy-transfer actions. [`dispatch`] executes an order
//! greedily every timestep, [`objective`] scores the resulting ledger, and
//! [`optim`] searches for the best order with exhaustive enumeration,
//! adjacent-swap descent or simulated annealing over position variables.

pub mod cli;
pub mod dispatch;
pub mod error;
pub mod fmt;
pub mod model;
pub mod objective;
pub mod optim;
pub mod profiles;

pub use error::{Error, Result};
