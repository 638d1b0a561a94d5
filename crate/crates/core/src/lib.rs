pub mod actions;
pub mod classify;
pub mod algebra;
pub mod config;
pub mod error;
pub mod homotopy;
pub mod invariants;
pub mod path;
pub mod random;
pub mod rohlin;
pub mod selftest;
pub mod uhf;
pub mod weyl;

pub use config::Config;
pub use error::{Error, Result};
