//! Gomoku agent that picks a (strategy, analytical logic) pair with a deep
//! Q-network, asks an evaluator backend for a candidate move, and repairs
//! the candidate into a guaranteed-legal move by scoring its neighborhood.

pub mod catalog;
pub mod engine;
pub mod evaluation;
pub mod move_select;
pub mod persistence;
pub mod prompting;
pub mod qlearn;
pub mod selfplay;
