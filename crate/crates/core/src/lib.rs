//! Self-supervised pretraining of graph encoders on relational-database
//! subgraphs, evaluated by frozen-encoder linear probing.

pub mod encoder;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod rdb;
pub mod seed;
pub mod ssl;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result, SchemaError};
