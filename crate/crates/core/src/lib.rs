pub mod cbgt;
pub mod cli;
pub mod env;
pub mod error;
pub mod eval;
pub mod models;
pub mod numerics;
pub mod train;

pub use error::{Error, Result};
