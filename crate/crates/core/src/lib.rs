//! Multi-lane highway microsimulation with lane-change incentives that look
//! beyond the immediate neighbourhood.
//!
//! Connected vehicles receive (noisy) incident reports and weigh the speed of
//! the lane ahead of a jam, plus virtual stopped vehicles that encode an
//! off-ramp goal, against the local MOBIL incentive.

pub mod error;
pub mod experiment;
pub mod idm;
pub mod incident;
pub mod mobil;
pub mod neo;
pub mod rng;
pub mod road;
pub mod sim;

pub use error::{ConfigError, DynamicsError, IncidentError, OutputError, RoadError, SimError};
pub use idm::IdmParams;
pub use incident::{IncidentReport, JamThresholds, NoiseSpec};
pub use mobil::{IncentiveBreakdown, LaneDecision, MobilParams};
pub use neo::NeoParams;
pub use road::{HighwaySegment, Offramp, Route, VehicleClass, VehicleId, VehicleState, World};
pub use sim::{DriverModel, IncidentKind, IncidentSpec, LaneChangeParams, SimConfig, Simulation};
