//! Code listings of the guide in `book/`, compiled as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/instances.md")]
pub mod instances {}

#[doc = include_str!("../../../book/src/swm.md")]
pub mod swm {}

#[doc = include_str!("../../../book/src/cm.md")]
pub mod cm {}

#[doc = include_str!("../../../book/src/calibration.md")]
pub mod calibration {}

#[doc = include_str!("../../../book/src/harness.md")]
pub mod harness {}
