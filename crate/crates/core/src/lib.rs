// `!(x >= y)` is used on purpose: it rejects NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod banach_stone;
pub mod bounds;
pub mod keps;
pub mod perturb;
pub mod quadrature;
pub mod spaces;
pub mod verify;
