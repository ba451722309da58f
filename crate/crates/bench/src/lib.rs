//! Benchmark-only crate; see `benches/core_bench.rs`.
