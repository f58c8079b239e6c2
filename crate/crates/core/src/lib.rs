pub mod benchmark;
pub mod distributed;
pub mod error;
pub mod ltv;
pub mod network;
pub mod plant;
pub mod rfmpc;
pub mod scenario;
pub mod switching;
pub mod uncertainty;

pub use error::{Error, Result};
