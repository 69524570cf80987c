pub mod checks;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod heads;
pub mod infer;
pub mod model;
pub mod numerics;
pub mod objective;
pub mod train;
pub mod postproc;
pub mod vss;
pub mod xgpn;

pub use error::{Error, Result};
