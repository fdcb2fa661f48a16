//! Criterion benchmarks for the SemaType pipeline live in `benches/`.
