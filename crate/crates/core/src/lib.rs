pub mod bsd;
pub mod cli;
pub mod config;
pub mod data;
pub mod detect;
pub mod error;
pub mod fpa;
pub mod numerics;
pub mod schedule;
pub mod suc;

pub use error::{Error, Result};
