//! Criterion benchmarks for `fractal-forms`; see `benches/`.
