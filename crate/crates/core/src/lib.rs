pub mod chain;
pub mod cli;
pub mod error;
pub mod generate;
pub mod index;
pub mod material;
pub mod rules;
pub mod tablebase;
pub mod verify;

pub use error::{Error, Result};
