//! Real-time electricity market with carbon emission allocation and
//! storage bidding.
//!
//! The crate is `no_std` (it needs `alloc`). Enabling the `std` feature only
//! turns on the `CARBOMARKET_LP_TRACE` pivot dump.

#![no_std]

extern crate alloc;

pub mod linalg;
pub mod lp;
pub mod curve;
pub mod network;
pub mod opf;
pub mod clearing;
pub mod units;
pub mod allocation;
pub mod cef;
pub mod storage;
pub mod simulator;
