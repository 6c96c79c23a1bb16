pub mod backbone;
pub mod config;
pub mod data;
pub mod encoders;
pub mod executor;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod synth;
pub mod tokenizer;
