// Negated comparisons are used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod checkpoint;
pub mod dann;
pub mod data;
pub mod eval;
pub mod linalg;
pub mod losses;
pub mod nn;
pub mod optim;
