//! Desk-scale simulator of an autonomous dormant-pruning robot for UFO
//! cherry orchards: scene generation, an eye-in-hand camera oracle,
//! pruning-point detection, a 7-DoF arm, planning, a hybrid visual/force
//! approach controller and mission-level accounting.

pub mod geometry;
pub mod world;
pub mod raster;
pub mod camera;
pub mod arm;
pub mod plan;
pub mod percept;
pub mod detect;
pub mod control;
pub mod log;
pub mod mission;
