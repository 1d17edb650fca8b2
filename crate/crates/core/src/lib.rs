//! Spread-dependent Hawkes model of best bid/ask price dynamics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod ingest;
pub mod intensity;
pub mod likelihood;
pub mod market;
pub mod optim;
pub mod simulator;
pub mod spread;

pub use error::{Error, Result};
pub use intensity::{replay, CoreParams, IntensityState, Kernel, ModelVariant, ParamSet, ParamWarning, Replay};
pub use market::{
    apply_event, classify_transition, EventKind, EventRecord, EventStream, MarketState, Price, SplitOrder, Transition,
};
