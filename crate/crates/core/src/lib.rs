//! Simulator for a flux-tunable inductor-bridge single-sideband modulator
//! and the frequency-multiplexed readout chain built around it.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod guide;
pub mod interp;
pub mod planner;
pub mod predistort;
pub mod profile;
pub mod readout;
pub mod signals;
pub mod squid;
pub mod ssbm;
pub mod tib;
