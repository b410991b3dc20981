pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod ctc;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod gradsuite;
pub mod eval;
pub mod kv;
pub mod lexdecode;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod train;

pub use error::{Error, Result};
