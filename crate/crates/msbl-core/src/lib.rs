//! Multi-scale off-policy contextual bandit learning.
//!
//! Interactive systems observe feedback at several timescales: dense
//! short-term signals (clicks, per-response relevance) and sparse long-term
//! signals (return rate, retention). This crate trains a nested stack of
//! softmax bandit policies, one per timescale, where each upper level acts by
//! intervening on the level below it — rescaling its score temperature,
//! boosting a subset of its actions, or reweighting its multi-component
//! feedback. Lower levels are learned first from abundant logged data; each
//! learned level then becomes the (small) action space of the level above it,
//! so the scarce long-term data only has to pick between a handful of
//! already-plausible behaviors.
//!
//! The crate is organized around:
//!
//! - [`rng`]: counter-based splittable random streams, so every consumer
//!   draws from an independently labeled sub-stream and results do not
//!   depend on module call order.
//! - [`data`]: logged interaction tuples `(context, action, reward,
//!   propensity)` and dataset validation (full-support checks).
//! - [`net`] / [`train`]: small feed-forward scoring networks with
//!   hand-written backpropagation, and an adaptive-moment gradient-ascent
//!   trainer for the inverse-propensity objective.
//! - [`policy`]: softmax policies, macro interventions, and policy families.
//! - [`estimator`]: IPS and clipped IPS value estimates, their gradients,
//!   and brute-force oracles.
//! - [`env`]: three synthetic multi-level reward simulators.
//! - [`msbl`]: the recursive multi-scale learning procedure and top-down
//!   inference.
//! - [`baseline`]: uniform / fixed / oracle-skyline comparison policies and
//!   a tabular Q-learning baseline.
//! - [`pacbayes`]: exact multivariate Gaussian KL arithmetic and the
//!   informed-prior sample-savings calculator.
//!
//! Everything here is `no_std`-compatible (with `alloc`); IO, file formats,
//! and the experiment CLI live in the companion `msbl-cli` crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod baseline;
pub mod data;
pub mod env;
pub mod estimator;
pub mod msbl;
pub mod net;
pub mod pacbayes;
pub mod policy;
pub mod rng;
pub mod train;

pub use data::{ContextSample, LevelSpec, LoggedDataset, LoggedInteraction};
pub use policy::{MacroAction, PolicyFamily, SoftmaxPolicy};
pub use rng::RngStream;
