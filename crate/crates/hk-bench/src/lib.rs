//! Criterion benchmarks for the LET solver, the Hopf-Lax grid operator and
//! convexity certification; see `benches/core.rs`.
