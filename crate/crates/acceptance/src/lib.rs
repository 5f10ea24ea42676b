//! Host package for the `acceptance` test target in `crates/core/tests/acceptance.rs`.
//!
//! Cargo runs test targets package by package, so keeping the suite here lets
//! every `otground` test finish before the acceptance criteria are evaluated.
