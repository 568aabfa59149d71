pub mod cli;
pub mod config;
pub mod diverge;
pub mod domain;
pub mod encode;
pub mod error;
pub mod eval;
pub mod export;
pub mod ground;
pub mod ingest;
pub mod kbase;
pub mod llm;
pub mod pipeline;
pub mod reason;
pub mod recommend;
pub mod synth;
pub mod verify;

pub use error::{Error, Result};
