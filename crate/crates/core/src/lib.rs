//! Hardware-free implementation of a sorting-assist trashcan: the session
//! controller, simulated devices, waste classifier port, reward ledger,
//! disposal-record store, analytics and a trace replay harness.

pub mod analytics;
pub mod classifier;
pub mod controller;
pub mod device;
pub mod domain;
pub mod item;
pub mod ledger;
pub mod replay;
pub mod runtime;
pub mod store;
