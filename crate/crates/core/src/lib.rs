//! Simulation-based artificial theory of mind for a care robot in a 2D room.
//!
//! The robot attributes intentions to the people it perceives, enacts each of
//! them in a detached internal simulator under a sampled vertical gaze, and
//! when one of them ends in a collision searches for a `move_to` action of its
//! own that makes the simulated person change course.

pub mod agents;
pub mod config;
pub mod engine;
pub mod geometry;
pub mod harness;
pub mod live;
pub mod navigation;
pub mod perception;
pub mod walker;
pub mod wm;
pub mod world;

pub use geometry::{Footprint, Frustum, Pose2, Shape, Vec2};
