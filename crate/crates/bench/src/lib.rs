//! Criterion benchmarks for the `pilotwave` crate; see `benches/`.
