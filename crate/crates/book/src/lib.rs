//! The guide in `book/`, compiled here so every snippet runs as a doc-test.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/schedule.md")]
pub mod schedule {}

#[doc = include_str!("../../../book/src/predictors.md")]
pub mod predictors {}

#[doc = include_str!("../../../book/src/inversion.md")]
pub mod inversion {}

#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}

#[doc = include_str!("../../../book/src/harness.md")]
pub mod harness {}

#[doc = include_str!("../../../book/src/file-formats.md")]
pub mod file_formats {}
