//! Criterion benchmarks for the flexstate hot paths live in `benches/`.
