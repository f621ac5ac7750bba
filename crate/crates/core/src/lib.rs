// Validation uses `!(a < b)` so that NaN is rejected along with bad orderings.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod lipm;
pub mod qp;
pub mod swing;
pub mod gait_qp;
pub mod plant;
pub mod ilqr;
pub mod tracker;
pub mod gp;
pub mod bo;
pub mod closed_loop;
