//! Criterion benchmarks for robustcert; see `benches/`.
