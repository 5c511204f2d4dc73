//! Stochastically controlled compositional gradient methods for
//! `min_x (1/n) Σᵢ Fᵢ((1/n) Σⱼ Gⱼ(x))`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod estimator;
pub mod ledger;
pub mod problem;
pub mod sampling;
pub mod schedule;
pub mod solver;
pub mod verify;
