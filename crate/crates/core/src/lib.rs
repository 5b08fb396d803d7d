pub mod analysis;
mod binio;
pub mod dataset;
pub mod error;
pub mod export;
pub mod finetune;
pub mod gather;
pub mod model;
pub mod numerics;
pub mod pretrain;
pub mod seisgen;
pub mod sweep;
pub mod train;

pub use error::{Error, Result};
