//! Criterion benchmarks for the vocoder; see `benches/`.
