//! Minimum-time quadrotor trajectories through corridors.
//!
//! The vehicle state is expressed in transverse coordinates relative to an
//! arc-length parameterized reference path, which turns the free final time
//! into a fixed integration horizon `[0, L]`. Corridor and actuator limits are
//! handled with relaxed log barriers and the resulting problem is solved by a
//! projection-operator Newton method inside a barrier continuation.

pub mod app;
pub mod corridor;
pub mod cost;
pub mod dynamics;
pub mod flatness;
pub mod framepath;
pub mod problem;
pub mod pronto;
