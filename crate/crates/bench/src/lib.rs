//! Criterion benchmarks for the simulator, classifier and learner hot paths.
//! See `benches/hot_paths.rs`.
