//! The mdbook guide's code samples, compiled and run by `cargo test --doc`.
//!
//! mdbook cannot execute snippets against this crate on its own, so each
//! chapter is attached here as a module doc; rustdoc then treats every
//! fenced code block as a doc-test.

#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}

#[doc = include_str!("../../../book/src/identification.md")]
pub mod identification {}

#[doc = include_str!("../../../book/src/controller.md")]
pub mod controller {}

#[doc = include_str!("../../../book/src/virtual-patients.md")]
pub mod virtual_patients {}

#[doc = include_str!("../../../book/src/protocols.md")]
pub mod protocols {}

#[doc = include_str!("../../../book/src/trials.md")]
pub mod trials {}

#[doc = include_str!("../../../book/src/retrospective.md")]
pub mod retrospective {}

#[doc = include_str!("../../../book/src/statistics.md")]
pub mod statistics {}
