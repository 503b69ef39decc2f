//! Co-simulation of a distribution grid, a local reactive-power market and a
//! communication network, with learning attacker agents, declarative
//! experiment design and structured run logs.

pub mod grid;
pub mod kernel;
pub mod telemetry;
pub mod net;
pub mod market;
pub mod design;
pub mod agent;
pub mod scenario;
pub mod world;
pub mod run;
