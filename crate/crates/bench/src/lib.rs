//! Shared helpers for the criterion micro-benchmarks live in the bench
//! targets themselves; this crate intentionally exports nothing.
