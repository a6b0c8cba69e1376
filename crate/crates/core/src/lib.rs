//! Synthesis and scoring of 12-lead ECG heartbeats with the ECG dynamical
//! model: integrators, the simulator distance and its Euler loss, parameter
//! fitting, waveform refinement and record segmentation.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod edm;
pub mod error;
pub mod fidelity;
pub mod integrator;
pub mod leads;
pub mod optimize;
pub mod params;
pub mod segmentation;
