#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod config;
pub mod error;
pub mod fock;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod quadrature;
pub mod rng;
pub mod sync_sim;
pub mod temporal_modes;
pub mod tomography;
pub mod wigner;
