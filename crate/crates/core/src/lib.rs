//! Automatic collection of single-view relative-depth training data from two-view
//! structure from motion, filtered by a learned reconstruction quality ranker.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod geometry;
pub mod synth;

pub mod cues;
pub mod qanet;
pub mod eval;
pub mod forge;
pub mod io;
