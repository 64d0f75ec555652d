pub mod autograd;
pub mod cmd;
pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod evalkit;
pub mod head;
pub mod ingest;
pub mod label_encoder;
pub mod model;
pub mod nn;
pub mod params;
pub mod pipeline;
pub mod selftest;
pub mod tensor;
pub mod train;
pub mod weights;

pub use error::{Error, Result};
