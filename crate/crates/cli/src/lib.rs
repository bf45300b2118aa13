pub mod config;
pub mod fixture;
pub mod manifest;
pub mod pipeline;
pub mod sidecar;
