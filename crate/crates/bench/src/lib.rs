//! Criterion benchmarks for the pose-lifting models.
