//! Criterion benchmarks for the numeric kernels and model passes live under `benches/`.
