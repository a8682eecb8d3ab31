//! One-to-few (o2f) label assignment for NMS-free dense detection.
//!
//! The crate is `no_std` (with `alloc`) and covers the whole algorithmic
//! pipeline: box geometry, the soft-label schedule, anchor assignment
//! strategies, classification/regression losses with analytic gradients,
//! post-processing, COCO-style AP and log-average miss rate, and a small
//! synthetic training harness that couples them end to end.
//!
//! File formats, the experiment runner and the CLI live in the `o2f` crate.
#![no_std]
// `!(x > 0.0)` style checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod anchor;
pub mod assignment;
pub mod error;
pub mod geometry;
pub mod head;
pub mod loss;
pub mod metrics;
pub mod postprocess;
pub mod schedule;
pub mod sim;

mod math;

pub use anchor::{Anchor, AnchorGrid, LevelSpec};
pub use assignment::{AnchorRole, AssignConfig, AssignMethod, AssignmentResult, Combine, Instance};
pub use error::{Error, Result};
pub use geometry::{BBox, CenterRegion};
pub use head::{Prediction, RawOutput};
pub use postprocess::Detection;
pub use schedule::{ScheduleConfig, ScheduleMode};
