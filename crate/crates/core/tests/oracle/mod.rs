//! Naive reference implementations the optimized code is checked against.
//! Shared by this crate's tests and the workspace acceptance suite.

#![allow(dead_code)]

pub mod instances;
pub mod map;
pub mod nlm;
