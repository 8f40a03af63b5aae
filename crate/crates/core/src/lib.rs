//! Attention-competition tipping dynamics.
//!
//! A coarse-grained model of how the output of an attention-based language
//! model drifts from a "good" basin `B` to a "bad" basin `D`. The crate
//! provides:
//!
//! * [`geometry`]: embedding vectors, basin centroids and alignment metrics;
//! * [`dynamics`]: the effective-head generation process (context vector,
//!   greedy or sampled symbol choice, rollouts and first-hit times);
//! * [`predictor`]: the closed-form tipping point and its classifications;
//! * [`multilayer`]: a toy residual-stream transformer that reduces to the
//!   effective head;
//! * [`logistic`]: the effective-force scalar and logistic-map reduction;
//! * [`stats`]: bootstrap intervals, exact binomial tests, Clopper-Pearson
//!   intervals and agreement bookkeeping;
//! * [`monitor`]: an O(d)-per-token streaming tipping monitor.
//!
//! The crate is `no_std` and only needs `alloc`. All transcendental
//! functions go through `libm`, so results do not depend on the platform
//! math library.

#![no_std]

extern crate alloc;

pub mod dynamics;
pub mod geometry;
pub mod logistic;
pub mod monitor;
pub mod multilayer;
pub mod predictor;
pub mod rng;
pub mod stats;

pub use dynamics::{Conversation, DynamicsConfig, Entry, RolloutStep, RolloutTrace};
pub use geometry::{AlignmentReport, Basin, BasinSet, Embedding, GeometryError, Label, Phrase};
pub use monitor::{monitor_init, AlertLevel, AlertStatus, ContextMode, MonitorConfig, MonitorState};
pub use predictor::{AttractorClass, NStar, TimingClass, TippingPrediction};
