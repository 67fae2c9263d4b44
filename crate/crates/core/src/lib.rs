pub mod marketdata;
pub mod nn;
pub mod epfilter;
pub mod gym;
pub mod kv;
pub mod agents;
pub mod synth;
pub mod dataset;
pub mod eval;
pub mod pipeline;
