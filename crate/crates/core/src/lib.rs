//! Supply function equilibrium markets: clearing, Nash bidding, inverse
//! cost estimation from observed bids, and randomized learning on top of it.

// `!(x > 0.0)` guards are kept on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datagen;
pub mod equilibrium;
pub mod error;
pub mod evaluation;
pub mod inverse;
pub mod io;
pub mod learning;
pub mod lp;
pub mod market;

pub use equilibrium::{best_response, nash_equilibrium, profit, profit_gradient, profit_hessian, CostParams, GameInstance, NashOptions};
pub use error::{Error, Result};
pub use market::{clear_islands, clear_market, BidVector, ClearingOutcome, IslandPartition, MarketConfig};
