//! Distributed Nash equilibrium seeking for networked aggregative games,
//! with Laplace-perturbed consensus messages for differential privacy.
//!
//! Modules, bottom up:
//!
//! - [`game`]: quadratic aggregative games, their equilibrium and constants
//! - [`topology`]: doubly stochastic mixing matrices, fixed or switching
//! - [`privacy`]: keyed Laplace streams, privacy budget, sensitivity audit
//! - [`seeker`]: the iteration itself
//! - [`bounds`]: closed-form accuracy bounds and parameter tuning
//! - [`harness`]: scenarios, Monte Carlo statistics and output files

pub mod bounds;
pub mod error;
pub mod exec;
pub mod game;
pub mod harness;
pub mod privacy;
pub mod seeker;
pub mod topology;

pub use error::{Error, Result, TopologyViolation};
pub use exec::Execution;
pub use game::{AggregativeGame, BoundBox, GameConstants, QuadraticAggregativeGame};
pub use privacy::{NoiseParams, NoiseStream};
pub use seeker::{AlgorithmParams, Seeker, SeekerState, Trace};
pub use topology::{Mixing, Topology, TopologySchedule};
