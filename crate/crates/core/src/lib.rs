//! Tensor-train (TT) factorized layers, a TT-LSTM recurrent cell, the stacked
//! mask-estimation network built from them, and the gammatone/MRCG audio
//! front end used to train it.

pub mod audio;
pub mod config;
pub mod error;
pub mod format;
pub mod grad;
pub mod gradcheck;
pub mod grid;
pub mod lstm;
pub mod synth;
pub mod tensornet;
pub mod tt;

pub use error::{Error, Result};
pub use grid::Grid;
pub use lstm::{CountConvention, TtLstmCell};
pub use tensornet::{Architecture, TensorNet, TrainConfig};
pub use tt::{TtLinear, TtShape};
