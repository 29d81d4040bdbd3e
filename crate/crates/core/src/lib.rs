//! Kolmogorov-Sinai invariant of Hamiltonian systems through the Riccati
//! equation for the position Hessian of the action, with kicked-map and
//! quantum (Madelung-Bohm) counterparts and a tangent-space oracle.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod benettin;
pub mod integrate;
pub mod kicked;
pub mod matkernel;
pub mod quantum;
pub mod riccati;
pub mod systems;
