//! Lattice-based MMI sequence training at desk scale.
//!
//! The crate is organised bottom-up:
//!
//! - [`lattice`]: frame-synchronous lattices, paths and score tables;
//! - [`algorithms`]: forward/backward, Viterbi, best-alignment
//!   determinization, ancestral sampling, occupancies and brute-force
//!   enumeration;
//! - [`objectives`]: the true, fixed-lattice and on-the-fly MMI objectives
//!   with gradients w.r.t. acoustic scores;
//! - [`theorem`]: the alignment measure and its inequalities, checked
//!   numerically on enumerable graphs;
//! - [`toy`]: synthetic HMM tasks, a log-softmax scorer, CE pretraining and the
//!   sequence-training loop;
//! - [`io`] and [`commands`]: file formats, configuration and the CLI verbs.

pub mod algorithms;
pub mod commands;
pub mod io;
pub mod lattice;
pub mod logmath;
pub mod objectives;
pub mod testgen;
pub mod theorem;
pub mod toy;
pub mod verify;
