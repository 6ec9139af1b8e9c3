//! Criterion benchmarks for the model and detector; see `benches/`.
