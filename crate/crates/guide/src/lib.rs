//! The book's code listings, compiled and run as doc-tests.
//!
//! mdbook can't resolve crate dependencies when testing, so each chapter
//! is pulled in here as a module doc and `cargo test` exercises it.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/architectures.md")]
pub mod architectures {}

#[doc = include_str!("../../../book/src/scouts.md")]
pub mod scouts {}

#[doc = include_str!("../../../book/src/timing.md")]
pub mod timing {}

#[doc = include_str!("../../../book/src/configs.md")]
pub mod configs {}

#[doc = include_str!("../../../book/src/reports.md")]
pub mod reports {}
