//! Non-local lane-change incentives for connected vehicles.
//!
//! Two extra terms extend the MOBIL criterion:
//!
//! * a downstream gain, comparing the car-following response to virtual
//!   leaders parked at the reported jam tail and moving at each lane's
//!   near-tail speed;
//! * a mandatory gain, comparing the response to virtual *stopped* leaders
//!   that mark where each lane stops being useful for reaching the
//!   off-ramp. When the vehicle cannot overtake the jam before the ramp,
//!   those stopped leaders are pulled back to the jam tail.
//!
//! The weighted criterion is
//! `λs·g_ego + λp·g_neighbors + λd·g_downstream + λm·g_mandatory > Δa_th`.
//! Virtual vehicles only exist inside these evaluations; they never show
//! up in neighbor sets or safety checks.

use serde::{Deserialize, Serialize};

use crate::error::IncidentError;
use crate::idm::{follow_eval, follow_eval_or_brake, IdmParams};
use crate::incident::IncidentReport;
use crate::mobil::{ego_gain, neighbor_gain, safety_check, select, IncentiveBreakdown, LaneDecision};
use crate::road::{NeighborSet, Offramp, Route, VehicleState};

pub const DEFAULT_X_SAFE: f64 = 100.0;
pub const DEFAULT_ANNEAL_START: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeoParams {
    pub lambda_s: f64,
    pub lambda_p: f64,
    pub lambda_d: f64,
    pub lambda_m: f64,
    /// Spacing between successive mandatory virtual vehicles, m.
    pub x_safe: f64,
    /// Distance before the turning point at which selfishness starts to fade, m.
    pub anneal_start: f64,
    pub a_th: f64,
    pub b_safe: f64,
    /// Pull mandatory virtual vehicles back to the jam tail when the jam
    /// cannot be overtaken in time. Human drivers run with this off.
    pub realign: bool,
    /// Position compared against `x_int + x_safe` in the realignment test.
    /// `None` means the off-ramp turning point.
    pub realign_reference: Option<f64>,
}

impl Default for NeoParams {
    fn default() -> Self {
        NeoParams {
            lambda_s: 1.0,
            lambda_p: 0.0,
            lambda_d: 100.0,
            lambda_m: 100.0,
            x_safe: DEFAULT_X_SAFE,
            anneal_start: DEFAULT_ANNEAL_START,
            a_th: crate::mobil::DEFAULT_SWITCH_THRESHOLD,
            b_safe: crate::mobil::DEFAULT_SAFE_DECEL,
            realign: true,
            realign_reference: None,
        }
    }
}

/// Gain from the virtual jam-tail vehicles: the response to a leader at
/// `x_t` moving at the target lane's near-tail speed minus the same for the
/// current lane. Zero without a report or once the ego is past the tail.
pub fn downstream_gain(
    ego: &VehicleState,
    report: Option<&IncidentReport>,
    current_lane: usize,
    target_lane: usize,
    idm: &IdmParams,
) -> Result<f64, IncidentError> {
    let Some(report) = report else {
        return Ok(0.0);
    };
    let v_current = report.lane_speed(current_lane)?;
    let v_target = report.lane_speed(target_lane)?;
    if ego.position >= report.x_t {
        return Ok(0.0);
    }
    let h = report.x_t - ego.position;
    let before = follow_eval_or_brake(h, ego.speed, v_current, idm);
    let after = follow_eval_or_brake(h, ego.speed, v_target, idm);
    Ok(after - before)
}

/// Distance from the ego to the stopped virtual vehicle in `lane`; infinite
/// in the ramp's own lane.
pub fn mandatory_headway(ego: &VehicleState, offramp: &Offramp, lane: usize, x_safe: f64) -> f64 {
    if lane == offramp.target_lane {
        return f64::INFINITY;
    }
    let offset = lane.abs_diff(offramp.target_lane) as f64;
    offramp.position - ego.position - (offset - 1.0) * x_safe
}

/// Mandatory virtual-vehicle headways for every lane.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualHeadways {
    pub per_lane: Vec<f64>,
    /// Set once the virtual vehicles have been moved to the jam tail.
    pub realigned: bool,
}

impl VirtualHeadways {
    pub fn new(ego: &VehicleState, offramp: &Offramp, n_lanes: usize, x_safe: f64) -> Self {
        VirtualHeadways {
            per_lane: (0..n_lanes)
                .map(|lane| mandatory_headway(ego, offramp, lane, x_safe))
                .collect(),
            realigned: false,
        }
    }
}

/// Where an ego at `x_α` catches the jam head when passing in the fastest
/// non-incident lane. Infinite when that lane is no faster than the
/// incident lane.
pub fn intersection_point(ego: &VehicleState, report: &IncidentReport) -> f64 {
    let v_incident = report.v_avg.get(report.lane).copied().unwrap_or(0.0);
    let v_pass = report
        .v_avg
        .iter()
        .enumerate()
        .filter(|&(lane, _)| lane != report.lane)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if !(v_pass > v_incident) {
        return f64::INFINITY;
    }
    ego.position + v_pass * (report.x_h - ego.position) / (v_pass - v_incident)
}

/// Moves the virtual vehicles to the jam tail when the overtaking point
/// `x_int` leaves less than `x_safe` before the reference position.
pub fn realign_headways(
    headways: &VirtualHeadways,
    x_int: f64,
    report: &IncidentReport,
    offramp: &Offramp,
    params: &NeoParams,
) -> VirtualHeadways {
    let reference = params.realign_reference.unwrap_or(offramp.position);
    if headways.realigned || !(x_int + params.x_safe > reference) {
        return headways.clone();
    }
    let shift = report.x_t - offramp.position;
    VirtualHeadways {
        per_lane: headways
            .per_lane
            .iter()
            .map(|&h| if h.is_finite() { h + shift } else { h })
            .collect(),
        realigned: true,
    }
}

/// Headways at or behind the ego are floored here so a virtual vehicle that
/// has already been passed still reads as the most urgent one.
pub const MIN_VIRTUAL_HEADWAY: f64 = 0.1;

fn virtual_response(h: f64, v: f64, idm: &IdmParams) -> f64 {
    follow_eval(h.max(MIN_VIRTUAL_HEADWAY), v, 0.0, idm).expect("floored headway is positive")
}

/// Response to the target lane's stopped virtual vehicle minus the current
/// lane's.
pub fn mandatory_gain(ego: &VehicleState, h_current: f64, h_target: f64, idm: &IdmParams) -> f64 {
    virtual_response(h_target, ego.speed, idm) - virtual_response(h_current, ego.speed, idm)
}

pub fn anneal_selfishness(lambda_s: f64, distance_to_turn: f64, anneal_start: f64) -> f64 {
    lambda_s * (distance_to_turn / anneal_start).clamp(0.0, 1.0)
}

/// Full weighted decision for one vehicle.
///
/// `report` is whatever this vehicle received (possibly noisy); `offramp`
/// is consulted only for off-ramp-routed vehicles.
pub fn neo_decide(
    ego: &VehicleState,
    neighbors: &NeighborSet,
    report: Option<&IncidentReport>,
    offramp: Option<&Offramp>,
    n_lanes: usize,
    params: &NeoParams,
    idm: &IdmParams,
) -> Result<LaneDecision, IncidentError> {
    let routed = match offramp {
        Some(ramp) if ego.route == Route::Offramp => Some(ramp),
        _ => None,
    };

    let lambda_s = match routed {
        Some(ramp) => anneal_selfishness(params.lambda_s, ramp.position - ego.position, params.anneal_start),
        None => params.lambda_s,
    };

    let headways = routed.map(|ramp| {
        let local = VirtualHeadways::new(ego, ramp, n_lanes, params.x_safe);
        match report {
            // Realigning only makes sense while the jam tail is still ahead.
            Some(r) if params.realign && ego.position < r.x_t => {
                realign_headways(&local, intersection_point(ego, r), r, ramp, params)
            }
            _ => local,
        }
    });

    let mut candidates = Vec::with_capacity(2);
    for target in neighbors.adjacent_lanes() {
        let g_ego = ego_gain(ego, neighbors, target, idm);
        let g_neighbors = neighbor_gain(ego, neighbors, target, idm);
        let g_downstream = downstream_gain(ego, report, ego.lane, target, idm)?;
        let g_mandatory = match &headways {
            Some(h) => mandatory_gain(ego, h.per_lane[ego.lane], h.per_lane[target], idm),
            None => 0.0,
        };
        let weighted_total = lambda_s * g_ego
            + params.lambda_p * g_neighbors
            + params.lambda_d * g_downstream
            + params.lambda_m * g_mandatory;
        candidates.push(IncentiveBreakdown {
            target_lane: target,
            g_ego,
            g_neighbors,
            g_downstream,
            g_mandatory,
            weighted_total,
            safety_ok: safety_check(ego, neighbors, target, params.b_safe, idm),
        });
    }

    Ok(LaneDecision {
        target: select(&candidates, params.a_th),
        candidates,
    })
}
