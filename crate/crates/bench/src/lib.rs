//! Benchmark-only crate; see `benches/runtime_benches.rs`.
