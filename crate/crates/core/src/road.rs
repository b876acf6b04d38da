//! Highway geometry, vehicle state and spatial neighbor queries.
//!
//! Lane 0 is the rightmost lane (the incident and off-ramp side). A vehicle's
//! `position` is its front bumper measured from the start of the segment, so
//! the bumper-to-bumper gap to a leader is
//! `leader.position - leader.length - follower.position`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::RoadError;

pub const DEFAULT_VEHICLE_LENGTH: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VehicleId(pub u64);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VehicleClass {
    Human,
    Cav,
    Incident,
}

impl VehicleClass {
    pub fn as_str(self) -> &'static str {
        match self {
            VehicleClass::Human => "human",
            VehicleClass::Cav => "cav",
            VehicleClass::Incident => "incident",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Mainline,
    Offramp,
}

impl Route {
    pub fn as_str(self) -> &'static str {
        match self {
            Route::Mainline => "mainline",
            Route::Offramp => "offramp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Offramp {
    /// Turning point, measured from the start of the segment.
    pub position: f64,
    /// Lane from which the ramp can be taken.
    pub target_lane: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HighwaySegment {
    pub length: f64,
    pub n_lanes: usize,
    #[serde(default)]
    pub offramp: Option<Offramp>,
}

impl HighwaySegment {
    pub fn new(length: f64, n_lanes: usize, offramp: Option<Offramp>) -> Result<Self, RoadError> {
        let segment = HighwaySegment {
            length,
            n_lanes,
            offramp,
        };
        segment.validate()?;
        Ok(segment)
    }

    pub fn validate(&self) -> Result<(), RoadError> {
        if !(self.length > 0.0) || !self.length.is_finite() {
            return Err(RoadError::InvalidSegment(format!(
                "length must be positive, got {}",
                self.length
            )));
        }
        if self.n_lanes < 2 {
            return Err(RoadError::InvalidSegment(format!(
                "at least 2 lanes required, got {}",
                self.n_lanes
            )));
        }
        if let Some(ramp) = &self.offramp {
            if !(ramp.position > 0.0 && ramp.position < self.length) {
                return Err(RoadError::InvalidSegment(format!(
                    "off-ramp position {} outside (0, {})",
                    ramp.position, self.length
                )));
            }
            if ramp.target_lane >= self.n_lanes {
                return Err(RoadError::InvalidSegment(format!(
                    "off-ramp target lane {} outside 0..{}",
                    ramp.target_lane, self.n_lanes
                )));
            }
        }
        Ok(())
    }

    /// Lanes directly adjacent to `lane`, right lane first.
    pub fn adjacent_lanes(&self, lane: usize) -> impl Iterator<Item = usize> {
        let right = lane.checked_sub(1);
        let left = (lane + 1 < self.n_lanes).then_some(lane + 1);
        right.into_iter().chain(left)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: VehicleId,
    pub lane: usize,
    pub position: f64,
    pub speed: f64,
    pub length: f64,
    pub class: VehicleClass,
    pub route: Route,
    /// Seconds until the vehicle may change lanes again.
    pub lc_cooldown: f64,
}

impl VehicleState {
    pub fn new(id: VehicleId, lane: usize, position: f64, speed: f64, class: VehicleClass) -> Self {
        VehicleState {
            id,
            lane,
            position,
            speed,
            length: DEFAULT_VEHICLE_LENGTH,
            class,
            route: Route::Mainline,
            lc_cooldown: 0.0,
        }
    }

    pub fn with_route(mut self, route: Route) -> Self {
        self.route = route;
        self
    }

    pub fn rear(&self) -> f64 {
        self.position - self.length
    }
}

/// Bumper-to-bumper distance from `follower`'s front to `leader`'s rear.
pub fn gap(leader: &VehicleState, follower: &VehicleState) -> f64 {
    leader.position - leader.length - follower.position
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub vehicle: VehicleState,
    /// Bumper-to-bumper gap between the neighbor and the ego vehicle.
    pub gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LaneNeighbors {
    pub leader: Option<Neighbor>,
    pub follower: Option<Neighbor>,
}

/// Nearest leader and follower of one vehicle in its own lane and each
/// adjacent lane.
///
/// Current-lane gaps are always non-negative in a consistent world. In an
/// adjacent lane a negative gap means the neighbor is alongside the ego
/// vehicle, which the safety check treats as a blocked lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborSet {
    pub lane: usize,
    pub current: LaneNeighbors,
    /// Lane `lane - 1`, if it exists.
    pub right: Option<LaneNeighbors>,
    /// Lane `lane + 1`, if it exists.
    pub left: Option<LaneNeighbors>,
}

impl NeighborSet {
    pub fn lane(&self, lane: usize) -> Option<&LaneNeighbors> {
        if lane == self.lane {
            Some(&self.current)
        } else if lane + 1 == self.lane {
            self.right.as_ref()
        } else if lane == self.lane + 1 {
            self.left.as_ref()
        } else {
            None
        }
    }

    /// Adjacent lanes that exist, right first.
    pub fn adjacent_lanes(&self) -> impl Iterator<Item = usize> + '_ {
        let right = self.right.map(|_| self.lane - 1);
        let left = self.left.map(|_| self.lane + 1);
        right.into_iter().chain(left)
    }
}

/// All vehicles on one segment plus a per-lane index sorted by position.
#[derive(Debug, Clone)]
pub struct World {
    segment: HighwaySegment,
    vehicles: Vec<VehicleState>,
    /// For each lane, indices into `vehicles` in ascending position order.
    lanes: Vec<Vec<usize>>,
}

impl World {
    pub fn new(segment: HighwaySegment) -> Self {
        let lanes = vec![Vec::new(); segment.n_lanes];
        World {
            segment,
            vehicles: Vec::new(),
            lanes,
        }
    }

    pub fn with_vehicles(segment: HighwaySegment, vehicles: Vec<VehicleState>) -> Self {
        let mut world = World {
            lanes: vec![Vec::new(); segment.n_lanes],
            segment,
            vehicles,
        };
        world.rebuild_index();
        world
    }

    pub fn segment(&self) -> &HighwaySegment {
        &self.segment
    }

    pub fn vehicles(&self) -> &[VehicleState] {
        &self.vehicles
    }

    pub fn len(&self) -> usize {
        self.vehicles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vehicles.is_empty()
    }

    pub fn vehicle(&self, index: usize) -> &VehicleState {
        &self.vehicles[index]
    }

    pub fn vehicle_mut(&mut self, index: usize) -> &mut VehicleState {
        &mut self.vehicles[index]
    }

    pub fn index_of(&self, id: VehicleId) -> Option<usize> {
        self.vehicles.iter().position(|v| v.id == id)
    }

    pub fn get(&self, id: VehicleId) -> Option<&VehicleState> {
        self.vehicles.iter().find(|v| v.id == id)
    }

    /// Vehicle indices in `lane`, upstream first.
    pub fn lane_order(&self, lane: usize) -> &[usize] {
        &self.lanes[lane]
    }

    pub fn push(&mut self, vehicle: VehicleState) -> usize {
        debug_assert!(vehicle.lane < self.segment.n_lanes);
        let index = self.vehicles.len();
        self.vehicles.push(vehicle);
        let order = &mut self.lanes[vehicle.lane];
        let at = order.partition_point(|&i| self.vehicles[i].position < vehicle.position);
        order.insert(at, index);
        index
    }

    /// Moves a vehicle to `lane`, keeping the lane index sorted.
    pub fn change_lane(&mut self, index: usize, lane: usize) {
        let old = self.vehicles[index].lane;
        if old == lane {
            return;
        }
        self.lanes[old].retain(|&i| i != index);
        self.vehicles[index].lane = lane;
        let position = self.vehicles[index].position;
        let order = &mut self.lanes[lane];
        let at = order.partition_point(|&i| self.vehicles[i].position < position);
        order.insert(at, index);
    }

    /// Drops every vehicle for which `keep` returns false and rebuilds the index.
    pub fn retain(&mut self, keep: impl FnMut(&VehicleState) -> bool) {
        self.vehicles.retain(keep);
        self.rebuild_index();
    }

    /// Re-sorts the lane index after positions changed.
    pub fn rebuild_index(&mut self) {
        for order in &mut self.lanes {
            order.clear();
        }
        for (i, v) in self.vehicles.iter().enumerate() {
            self.lanes[v.lane].push(i);
        }
        let vehicles = &self.vehicles;
        for order in &mut self.lanes {
            order.sort_by(|&a, &b| {
                vehicles[a]
                    .position
                    .total_cmp(&vehicles[b].position)
                    .then(vehicles[a].id.cmp(&vehicles[b].id))
            });
        }
    }

    pub fn neighbors(&self, ego: VehicleId) -> Result<NeighborSet, RoadError> {
        let index = self.index_of(ego).ok_or(RoadError::UnknownVehicle(ego))?;
        Ok(self.neighbors_of(index))
    }

    pub fn neighbors_of(&self, index: usize) -> NeighborSet {
        let ego = &self.vehicles[index];
        let lane = ego.lane;
        let mut set = NeighborSet {
            lane,
            current: self.lane_neighbors(index, lane),
            right: None,
            left: None,
        };
        if lane > 0 {
            set.right = Some(self.lane_neighbors(index, lane - 1));
        }
        if lane + 1 < self.segment.n_lanes {
            set.left = Some(self.lane_neighbors(index, lane + 1));
        }
        set
    }

    /// Nearest vehicles ahead (position >= ego) and behind (position < ego)
    /// of vehicle `index` in `lane`, skipping the vehicle itself.
    pub fn lane_neighbors(&self, index: usize, lane: usize) -> LaneNeighbors {
        let ego = &self.vehicles[index];
        let order = &self.lanes[lane];
        let mut split = order.partition_point(|&i| self.vehicles[i].position < ego.position);
        let mut follower_end = split;
        if lane == ego.lane {
            // The ego vehicle sits at `split` (ties are broken by id).
            while split < order.len() && order[split] != index {
                split += 1;
            }
            follower_end = split;
            split += 1;
        }
        let leader = order.get(split).map(|&i| {
            let v = self.vehicles[i];
            Neighbor {
                vehicle: v,
                gap: gap(&v, ego),
            }
        });
        let follower = follower_end.checked_sub(1).map(|k| {
            let v = self.vehicles[order[k]];
            Neighbor {
                vehicle: v,
                gap: gap(ego, &v),
            }
        });
        LaneNeighbors { leader, follower }
    }

    /// Leader of vehicle `index` in its own lane, if any.
    pub fn leader_of(&self, index: usize) -> Option<Neighbor> {
        self.lane_neighbors(index, self.vehicles[index].lane).leader
    }

    /// The first same-lane pair whose gap is not strictly positive.
    pub fn find_overlap(&self) -> Option<(usize, usize, usize, f64)> {
        for (lane, order) in self.lanes.iter().enumerate() {
            for pair in order.windows(2) {
                let follower = &self.vehicles[pair[0]];
                let leader = &self.vehicles[pair[1]];
                let g = gap(leader, follower);
                if g <= 0.0 {
                    return Some((lane, pair[1], pair[0], g));
                }
            }
        }
        None
    }
}
