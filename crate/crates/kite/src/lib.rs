//! Kinodynamic motion planning with terminal costs, in deterministic state
//! space and in Gaussian belief space.
//!
//! The crate is organized bottom-up:
//!
//! - [`geometry`] — SE(2) group operations and pose distances;
//! - [`belief`] — Gaussian beliefs, 2-Wasserstein distances, goal-reaching
//!   probability lower bounds;
//! - [`systems`] — benchmark dynamical systems (Flappy, bicycle car,
//!   stochastic pusher) behind one search-space abstraction;
//! - [`planner`] — the anytime tree planner over augmented state-cost or
//!   belief-cost space;
//! - [`learning`] — a small mean/log-variance transition-model network with
//!   hand-rolled training, usable as belief dynamics for the pusher.

pub mod belief;
pub mod geometry;
pub mod learning;
pub mod planner;
pub mod systems;
