pub mod dynamics;
pub mod env;
pub mod error;
pub mod harness;
pub mod nn;
pub mod plasticity;
pub mod ppo;
pub mod recom;

pub use error::{Error, Result};
