//! Benchmarks live under `benches/`; run them with `cargo bench -p faeclust-bench`.

pub use faeclust_core as core;
