//! Adaptive assembly guidance: digital twin, sequencing, interaction
//! monitoring, replanning and stability scoring over a lattice of parts.

pub mod assembly;
pub mod catalog;
pub mod geometry;
pub mod monitor;
pub mod planner;
pub mod replanner;
pub mod service;
pub mod sim;
pub mod stability;
pub mod twin;
