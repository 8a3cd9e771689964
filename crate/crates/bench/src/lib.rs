//! Criterion benchmarks for maxlow-core; see `benches/`.
