//! Shared fixtures for the pipeline benchmarks live in `benches/`.
