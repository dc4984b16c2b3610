//! Successor feature landmarks on discrete gridworlds.

pub mod encoder;
pub mod gridworld;
pub mod nn;
pub mod successor;
pub mod similarity;
pub mod landmarks;
pub mod planner;
pub mod agent;
pub mod config;
pub mod rng;

pub mod checkpoint;
pub mod metrics;
pub mod cli;
