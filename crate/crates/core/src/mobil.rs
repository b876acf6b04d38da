//! MOBIL lane-change incentives and the safety veto.
//!
//! These are the building blocks shared by the human driver model
//! (politeness 0), the altruistic CAV baseline (politeness 1) and the
//! ego/neighbor terms of the NEO criterion.

use serde::{Deserialize, Serialize};

use crate::idm::{follow_eval_or_brake, IdmParams, MAX_DECEL};
use crate::road::{gap, LaneNeighbors, NeighborSet, VehicleState};

pub const DEFAULT_SWITCH_THRESHOLD: f64 = 0.1;
pub const DEFAULT_SAFE_DECEL: f64 = -4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MobilParams {
    pub politeness: f64,
    /// Switching threshold Δa_th, m/s².
    pub a_th: f64,
    /// Most negative acceleration the new follower may be forced into, m/s².
    pub b_safe: f64,
}

impl MobilParams {
    pub fn with_politeness(politeness: f64) -> Self {
        MobilParams {
            politeness,
            a_th: DEFAULT_SWITCH_THRESHOLD,
            b_safe: DEFAULT_SAFE_DECEL,
        }
    }
}

/// Every incentive term evaluated for one candidate lane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IncentiveBreakdown {
    pub target_lane: usize,
    pub g_ego: f64,
    pub g_neighbors: f64,
    pub g_downstream: f64,
    pub g_mandatory: f64,
    pub weighted_total: f64,
    pub safety_ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaneDecision {
    pub target: Option<usize>,
    /// One entry per adjacent lane, right lane first.
    pub candidates: Vec<IncentiveBreakdown>,
}

impl LaneDecision {
    pub fn chosen(&self) -> Option<&IncentiveBreakdown> {
        let target = self.target?;
        self.candidates.iter().find(|c| c.target_lane == target)
    }
}

fn leader_accel(ego: &VehicleState, lane: &LaneNeighbors, idm: &IdmParams) -> f64 {
    match &lane.leader {
        Some(l) => follow_eval_or_brake(l.gap, ego.speed, l.vehicle.speed, idm),
        None => follow_eval_or_brake(f64::INFINITY, ego.speed, 0.0, idm),
    }
}

fn target_lane<'a>(neighbors: &'a NeighborSet, target: usize) -> &'a LaneNeighbors {
    neighbors
        .lane(target)
        .filter(|_| target != neighbors.lane)
        .unwrap_or_else(|| panic!("lane {target} is not adjacent to lane {}", neighbors.lane))
}

/// Acceleration change of the ego vehicle if it moved to `target`.
pub fn ego_gain(ego: &VehicleState, neighbors: &NeighborSet, target: usize, idm: &IdmParams) -> f64 {
    let after = leader_accel(ego, target_lane(neighbors, target), idm);
    let before = leader_accel(ego, &neighbors.current, idm);
    after - before
}

/// Summed acceleration change of the new follower (target lane) and the old
/// follower (current lane).
pub fn neighbor_gain(ego: &VehicleState, neighbors: &NeighborSet, target: usize, idm: &IdmParams) -> f64 {
    let lane = target_lane(neighbors, target);
    let mut total = 0.0;

    if let Some(n) = &lane.follower {
        let follower = &n.vehicle;
        let before = match &lane.leader {
            Some(l) => follow_eval_or_brake(gap(&l.vehicle, follower), follower.speed, l.vehicle.speed, idm),
            None => follow_eval_or_brake(f64::INFINITY, follower.speed, 0.0, idm),
        };
        let after = follow_eval_or_brake(n.gap, follower.speed, ego.speed, idm);
        total += after - before;
    }

    if let Some(o) = &neighbors.current.follower {
        let follower = &o.vehicle;
        let before = follow_eval_or_brake(o.gap, follower.speed, ego.speed, idm);
        let after = match &neighbors.current.leader {
            Some(l) => follow_eval_or_brake(gap(&l.vehicle, follower), follower.speed, l.vehicle.speed, idm),
            None => follow_eval_or_brake(f64::INFINITY, follower.speed, 0.0, idm),
        };
        total += after - before;
    }

    total
}

/// True iff both post-change gaps are positive and the new follower's
/// acceleration stays at or above `b_safe`.
pub fn safety_check(ego: &VehicleState, neighbors: &NeighborSet, target: usize, b_safe: f64, idm: &IdmParams) -> bool {
    let lane = target_lane(neighbors, target);
    if let Some(l) = &lane.leader {
        // Never cut in where the ego could not stop behind its new leader.
        if !(l.gap > 0.0) || follow_eval_or_brake(l.gap, ego.speed, l.vehicle.speed, idm) < -MAX_DECEL {
            return false;
        }
    }
    match &lane.follower {
        None => true,
        Some(n) => {
            if !(n.gap > 0.0) {
                return false;
            }
            follow_eval_or_brake(n.gap, n.vehicle.speed, ego.speed, idm) >= b_safe
        }
    }
}

/// Picks the candidate with the largest weighted total above `a_th`.
/// Candidates are visited right lane first and only a strictly larger total
/// replaces the incumbent, so ties go to the right lane.
pub(crate) fn select(candidates: &[IncentiveBreakdown], a_th: f64) -> Option<usize> {
    let mut best: Option<&IncentiveBreakdown> = None;
    for c in candidates.iter().filter(|c| c.safety_ok && c.weighted_total > a_th) {
        if best.map_or(true, |b| c.weighted_total > b.weighted_total) {
            best = Some(c);
        }
    }
    best.map(|c| c.target_lane)
}

pub fn mobil_decide(ego: &VehicleState, neighbors: &NeighborSet, params: &MobilParams, idm: &IdmParams) -> LaneDecision {
    let candidates: Vec<IncentiveBreakdown> = neighbors
        .adjacent_lanes()
        .map(|target| {
            let g_ego = ego_gain(ego, neighbors, target, idm);
            let g_neighbors = neighbor_gain(ego, neighbors, target, idm);
            IncentiveBreakdown {
                target_lane: target,
                g_ego,
                g_neighbors,
                g_downstream: 0.0,
                g_mandatory: 0.0,
                weighted_total: g_ego + params.politeness * g_neighbors,
                safety_ok: safety_check(ego, neighbors, target, params.b_safe, idm),
            }
        })
        .collect();
    LaneDecision {
        target: select(&candidates, params.a_th),
        candidates,
    }
}
