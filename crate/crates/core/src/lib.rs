// NaN must fail comparisons, so `!(x > 0.0)` style checks are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod entropy;
pub mod error;
pub mod metric;
pub mod props;
pub mod random;
pub mod report;
pub mod spd;
