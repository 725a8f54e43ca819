//! Benchmark-only crate; see `benches/estimators.rs`. The library target
//! exists so the workspace member builds on its own.
