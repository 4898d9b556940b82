pub mod blocking;
pub mod config;
pub mod hits;
pub mod ingest;
pub mod manifest;
pub mod metrics;
pub mod pipeline;
pub mod resolution;
pub mod scoring;
pub mod standardize;
pub mod synth;

#[cfg(test)]
mod testutil;
