//! Two-layer market clearing for prosumer energy sharing over a radial
//! distribution network.

// `!(a < b)` is used on purpose so that NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bestresp;
pub mod clearing;
pub mod conic;
pub mod model;
pub mod oracle;
pub mod tooling;
