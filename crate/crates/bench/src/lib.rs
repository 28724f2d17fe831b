//! Criterion benchmarks for the hot loops; see `benches/kernels.rs`.
