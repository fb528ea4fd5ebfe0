//! Battery energy arbitrage on single-price imbalance markets.
//!
//! The crate covers the whole pipeline: price ingestion and synthetic data
//! ([`market_data`]), the battery environment ([`battery_env`]), a small
//! dense-network toolkit ([`nn`]), DQN and distributional DQN agents
//! ([`agents`]), a threshold baseline ([`rbc`]), constrained policy
//! distillation ([`correction`]) and backtesting ([`eval`]).
//!
//! ```
//! use arbitrage_core::battery_env::{soc_transition, BatteryAction, BatteryParams};
//!
//! let params = BatteryParams::default();
//! let next = soc_transition(0.5, BatteryAction::Charge, &params);
//! assert!((next - (0.5 + 4.0 * 0.9f64.sqrt() * (2.0 / 60.0) / 8.0)).abs() < 1e-12);
//! ```

pub mod agents;
pub mod battery_env;
pub mod config;
pub mod controller;
pub mod correction;
pub mod error;
pub mod eval;
pub mod market_data;
pub mod model;
pub mod nn;
pub mod rbc;

pub use error::{Error, Result};
