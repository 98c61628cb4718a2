//! Decentralized unlabeled multi-agent navigation in continuous grid
//! workspaces.
//!
//! The crate is layered bottom-up: [`workspace`] answers geometric questions
//! about the map, [`pathfinding`] builds reference paths and distance fields,
//! [`avoidance`] turns preferred velocities into safe ones, [`protocol`]
//! implements the per-agent goal exchange loop, [`central`] holds the
//! centralized solvers, and [`sim`] drives whole runs and scores them.

pub mod avoidance;
pub mod central;
pub mod error;
pub mod geometry;
pub mod pathfinding;
pub mod protocol;
pub mod sim;
pub mod workspace;

pub use error::{MapError, ScenarioError};
pub use geometry::{Point, Segment, Vec2};
pub use pathfinding::{construct_path, DistanceField, FieldCache, Path};
pub use workspace::{load_map, GridMap};
pub use protocol::{AgentId, AgentStatus, GoalId};
pub use sim::{run, Algorithm, Outcome, RunConfig, RunResult, ScenarioInstance};
