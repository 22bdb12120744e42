//! Criterion benchmarks for forkfed; see `benches/`.
