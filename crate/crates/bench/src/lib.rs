//! Criterion benchmarks for the delegation protocol engine live in `benches/`.
