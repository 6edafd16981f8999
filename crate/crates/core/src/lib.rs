pub mod batching;
pub mod cli;
pub mod data;
pub mod error;
pub mod estimators;
pub mod evaluate;
pub mod ipm;
pub mod model;
pub mod optimize;
pub mod oracle;
pub mod rng;
pub mod text;
pub mod verify;

pub use error::{Error, Result};
