// index loops mirror the matrix notation; `!(a > b)` tests also reject NaN
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod derivx;
pub mod dfsm;
pub mod dynsys;
pub mod errnet;
pub mod error;
pub mod linfit;
pub mod mat;
pub mod ocp;
pub mod subsample;
pub mod trajdata;
pub mod validate;

pub use error::{Error, Result};
