//! Doc-test harness for the guide. Each chapter is included as a module's
//! documentation, so `cargo test -p treetrack-book` compiles and runs every
//! snippet in it.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/geometry.md")]
pub mod geometry {}

#[doc = include_str!("../../../book/src/sampling.md")]
pub mod sampling {}

#[doc = include_str!("../../../book/src/features.md")]
pub mod features {}

#[doc = include_str!("../../../book/src/appearance.md")]
pub mod appearance {}

#[doc = include_str!("../../../book/src/model-tree.md")]
pub mod model_tree {}

#[doc = include_str!("../../../book/src/estimation.md")]
pub mod estimation {}

#[doc = include_str!("../../../book/src/regression.md")]
pub mod regression {}

#[doc = include_str!("../../../book/src/tracking.md")]
pub mod tracking {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
