use thiserror::Error;

use crate::road::VehicleId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoadError {
    #[error("unknown vehicle id {0}")]
    UnknownVehicle(VehicleId),
    #[error("invalid segment: {0}")]
    InvalidSegment(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("non-positive headway {0} m passed to car-following model")]
    NonPositiveHeadway(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IncidentError {
    #[error("lane {lane} outside reported speed vector of length {len}")]
    LaneOutOfRange { lane: usize, len: usize },
}

/// A simulation run aborted because the world reached an inconsistent state.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("step {step}: vehicles {follower} and {leader} overlap in lane {lane} (gap {gap:.3} m)")]
    Overlap {
        step: u64,
        lane: usize,
        leader: VehicleId,
        follower: VehicleId,
        gap: f64,
    },
    #[error("step {step}: {source}")]
    Dynamics {
        step: u64,
        #[source]
        source: DynamicsError,
    },
    #[error("step {step}: {source}")]
    Report {
        step: u64,
        #[source]
        source: IncidentError,
    },
    #[error("step {step}: conservation violated (injected {injected}, present {present}, exited {exited})")]
    Conservation {
        step: u64,
        injected: u64,
        present: u64,
        exited: u64,
    },
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
}

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("cannot write {path}: {source}")]
    Unwritable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
