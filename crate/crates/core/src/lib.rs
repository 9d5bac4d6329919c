pub mod tensor;
pub mod models;
pub mod data;
pub mod metrics;
pub mod train;
pub mod transfer;
pub mod synth;
pub mod harness;
