//! Static taint analysis engine for detecting sensor data leaks in
//! Android-style programs given as a textual three-address IR.
//!
//! The pipeline: parse the IR ([`ir`]), load source/sink definitions
//! ([`config`]), build control-flow and call graphs ([`graphs`]), run the
//! forward taint analysis ([`taint`]), attribute each leak to a physical
//! sensor ([`sensor`]) and aggregate per-app reports ([`report`]).

pub mod config;
pub mod graphs;
pub mod ir;
pub mod report;
pub mod sensor;
pub mod taint;
