//! Jam localization around the incident vehicle and the (optionally noisy)
//! broadcast of incident reports to connected vehicles.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::IncidentError;
use crate::idm::{desired_gap, IdmParams};
use crate::road::{gap, VehicleClass, World};

/// `(x_h, x_t, v_avg)` plus the lane the incident vehicle occupies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentReport {
    /// Jam head (front of the incident vehicle), m.
    pub x_h: f64,
    /// Jam tail (rear of the last queued vehicle), m.
    pub x_t: f64,
    /// Mean speed near the jam tail, one entry per lane.
    pub v_avg: Vec<f64>,
    pub lane: usize,
    pub timestamp: f64,
}

impl IncidentReport {
    pub fn lane_speed(&self, lane: usize) -> Result<f64, IncidentError> {
        self.v_avg.get(lane).copied().ok_or(IncidentError::LaneOutOfRange {
            lane,
            len: self.v_avg.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Std dev added to x_h and x_t, m.
    pub sigma_x: f64,
    /// Std dev added to each v_avg entry, m/s.
    pub sigma_v: f64,
}

impl NoiseSpec {
    pub fn is_zero(&self) -> bool {
        self.sigma_x == 0.0 && self.sigma_v == 0.0
    }
}

/// Thresholds deciding which vehicles behind the incident belong to its queue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JamThresholds {
    /// Queued vehicles drive slower than this fraction of v0.
    pub speed_fraction: f64,
    /// Queued vehicles sit closer than this multiple of s* to their leader.
    pub gap_factor: f64,
    /// Half-width of the speed-averaging window around the tail, m.
    pub window: f64,
}

impl Default for JamThresholds {
    fn default() -> Self {
        JamThresholds {
            speed_fraction: 0.6,
            gap_factor: 2.0,
            window: 50.0,
        }
    }
}

/// Locates the incident vehicle and its queue. Returns `(x_h, x_t, lane)`,
/// or `None` when no incident vehicle is on the segment.
pub fn detect_jam(world: &World, idm: &IdmParams, thresholds: &JamThresholds) -> Option<(f64, f64, usize)> {
    let head = world
        .vehicles()
        .iter()
        .position(|v| v.class == VehicleClass::Incident)?;
    let incident = world.vehicle(head);
    let order = world.lane_order(incident.lane);
    let at = order.iter().position(|&i| i == head)?;

    let speed_limit = thresholds.speed_fraction * idm.desired_speed;
    let mut tail = incident.rear();
    let mut leader = incident;
    for &i in order[..at].iter().rev() {
        let v = world.vehicle(i);
        let g = gap(leader, v);
        let close = g < thresholds.gap_factor * desired_gap(v.speed, leader.speed, idm);
        if v.speed >= speed_limit || !close {
            break;
        }
        tail = v.rear();
        leader = v;
    }
    Some((incident.position, tail, incident.lane))
}

/// Per-lane mean speed of vehicles within `window` of `x_t`; lanes with no
/// vehicle in the window report `v0`.
pub fn estimate_lane_speeds(world: &World, x_t: f64, v0: f64, window: f64) -> Vec<f64> {
    let n = world.segment().n_lanes;
    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    for v in world.vehicles() {
        if (v.position - x_t).abs() <= window {
            sum[v.lane] += v.speed;
            count[v.lane] += 1;
        }
    }
    sum.iter()
        .zip(&count)
        .map(|(&s, &c)| if c == 0 { v0 } else { s / c as f64 })
        .collect()
}

/// Ground-truth report for the current world, if an incident is present.
pub fn build_report(world: &World, idm: &IdmParams, thresholds: &JamThresholds, timestamp: f64) -> Option<IncidentReport> {
    let (x_h, x_t, lane) = detect_jam(world, idm, thresholds)?;
    Some(IncidentReport {
        x_h,
        x_t,
        v_avg: estimate_lane_speeds(world, x_t, idm.desired_speed, thresholds.window),
        lane,
        timestamp,
    })
}

/// Adds independent Gaussian errors to both positions and every lane speed,
/// then restores the report invariants.
pub fn perturb_report<R: Rng + ?Sized>(
    report: &IncidentReport,
    noise: &NoiseSpec,
    segment_length: f64,
    rng: &mut R,
) -> IncidentReport {
    if noise.is_zero() {
        return report.clone();
    }
    let mut out = report.clone();
    let position = Normal::new(0.0, noise.sigma_x).expect("sigma_x is validated non-negative");
    let speed = Normal::new(0.0, noise.sigma_v).expect("sigma_v is validated non-negative");

    out.x_h += position.sample(rng);
    out.x_t += position.sample(rng);
    for v in &mut out.v_avg {
        *v = (*v + speed.sample(rng)).max(0.0);
    }
    if out.x_t > out.x_h {
        std::mem::swap(&mut out.x_t, &mut out.x_h);
    }
    out.x_h = out.x_h.clamp(0.0, segment_length);
    out.x_t = out.x_t.clamp(0.0, segment_length);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::road::{HighwaySegment, VehicleId, VehicleState};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seg() -> HighwaySegment {
        HighwaySegment::new(2000.0, 3, None).unwrap()
    }

    fn veh(id: u64, lane: usize, position: f64, speed: f64, class: VehicleClass) -> VehicleState {
        VehicleState::new(VehicleId(id), lane, position, speed, class)
    }

    #[test]
    fn lone_incident_has_tail_at_its_rear() {
        let w = World::with_vehicles(seg(), vec![veh(0, 0, 1500.0, 0.0, VehicleClass::Incident)]);
        let (x_h, x_t, lane) = detect_jam(&w, &IdmParams::default(), &JamThresholds::default()).unwrap();
        assert_eq!((x_h, x_t, lane), (1500.0, 1495.0, 0));
    }

    #[test]
    fn queue_walk_stops_at_first_free_vehicle() {
        let idm = IdmParams::default();
        let vehicles = vec![
            veh(0, 0, 1500.0, 0.0, VehicleClass::Incident),
            veh(1, 0, 1493.0, 0.0, VehicleClass::Human),
            veh(2, 0, 1486.0, 0.5, VehicleClass::Human),
            veh(3, 0, 1478.0, 1.0, VehicleClass::Cav),
            // Free-flowing and far back: not part of the jam.
            veh(4, 0, 1300.0, 20.0, VehicleClass::Human),
            veh(5, 1, 1470.0, 1.0, VehicleClass::Human),
        ];
        let w = World::with_vehicles(seg(), vehicles);
        let (_, x_t, _) = detect_jam(&w, &idm, &JamThresholds::default()).unwrap();
        // Manual chain walk: gaps 2, 2, 3 m all below 2·s*; rear of #3.
        assert_eq!(x_t, 1473.0);
    }

    #[test]
    fn fast_follower_is_excluded() {
        let w = World::with_vehicles(
            seg(),
            vec![
                veh(0, 0, 1500.0, 0.0, VehicleClass::Incident),
                veh(1, 0, 1480.0, 15.0, VehicleClass::Human),
            ],
        );
        let (_, x_t, _) = detect_jam(&w, &IdmParams::default(), &JamThresholds::default()).unwrap();
        assert_eq!(x_t, 1495.0);
    }

    #[test]
    fn no_incident_no_report() {
        let w = World::with_vehicles(seg(), vec![veh(0, 0, 100.0, 10.0, VehicleClass::Human)]);
        assert!(build_report(&w, &IdmParams::default(), &JamThresholds::default(), 0.0).is_none());
    }

    #[test]
    fn lane_speed_examples() {
        let w = World::with_vehicles(
            seg(),
            vec![
                veh(0, 0, 1000.0, 2.0, VehicleClass::Human),
                veh(1, 1, 1040.0, 15.0, VehicleClass::Human),
                veh(2, 2, 970.0, 19.0, VehicleClass::Human),
                veh(3, 2, 1200.0, 5.0, VehicleClass::Human),
            ],
        );
        assert_eq!(estimate_lane_speeds(&w, 1000.0, 20.0, 50.0), vec![2.0, 15.0, 19.0]);
        assert_eq!(estimate_lane_speeds(&w, 500.0, 20.0, 50.0), vec![20.0, 20.0, 20.0]);
    }

    proptest! {
        #[test]
        fn lane_speeds_match_filter_and_average(
            cars in prop::collection::vec((0usize..3, 0u32..200, 0.0f64..25.0), 0..60),
            x_t in 0.0f64..2000.0,
        ) {
            let mut seen = std::collections::HashSet::new();
            let vehicles: Vec<_> = cars.into_iter().filter(|c| seen.insert((c.0, c.1))).enumerate()
                .map(|(i, (lane, slot, v))| veh(i as u64, lane, 5.0 + slot as f64 * 10.0, v, VehicleClass::Human))
                .collect();
            let w = World::with_vehicles(seg(), vehicles.clone());
            let got = estimate_lane_speeds(&w, x_t, 20.0, 50.0);
            prop_assert_eq!(got.len(), 3);
            for lane in 0..3 {
                let inside: Vec<f64> = vehicles.iter()
                    .filter(|v| v.lane == lane && v.position >= x_t - 50.0 && v.position <= x_t + 50.0)
                    .map(|v| v.speed).collect();
                let expected = if inside.is_empty() { 20.0 } else { inside.iter().sum::<f64>() / inside.len() as f64 };
                prop_assert!((got[lane] - expected).abs() < 1e-9);
            }
        }

        #[test]
        fn perturbed_reports_keep_invariants(seed in any::<u64>(), sx in 0.0f64..300.0, sv in 0.0f64..6.0) {
            let r = IncidentReport { x_h: 1500.0, x_t: 1450.0, v_avg: vec![1.0, 15.0, 18.0], lane: 0, timestamp: 3.0 };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = perturb_report(&r, &NoiseSpec { sigma_x: sx, sigma_v: sv }, 2000.0, &mut rng);
            prop_assert!(p.x_t <= p.x_h);
            prop_assert!(p.x_t >= 0.0 && p.x_h <= 2000.0);
            prop_assert_eq!(p.v_avg.len(), 3);
            prop_assert!(p.v_avg.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn zero_noise_is_identity() {
        let r = IncidentReport {
            x_h: 1500.0,
            x_t: 1450.0,
            v_avg: vec![1.0, 15.0, 18.0],
            lane: 0,
            timestamp: 3.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(perturb_report(&r, &NoiseSpec::default(), 2000.0, &mut rng), r);
    }

    #[test]
    fn perturbation_is_reproducible() {
        let r = IncidentReport {
            x_h: 1500.0,
            x_t: 1450.0,
            v_avg: vec![1.0, 15.0, 18.0],
            lane: 0,
            timestamp: 3.0,
        };
        let noise = NoiseSpec {
            sigma_x: 50.0,
            sigma_v: 1.0,
        };
        let a = perturb_report(&r, &noise, 2000.0, &mut ChaCha8Rng::seed_from_u64(7));
        let b = perturb_report(&r, &noise, 2000.0, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
        assert_ne!(a, r);
    }

    #[test]
    fn speed_noise_has_requested_spread() {
        // Speeds far from zero so the clamp never engages.
        let r = IncidentReport {
            x_h: 1000.0,
            x_t: 1000.0,
            v_avg: vec![1000.0],
            lane: 0,
            timestamp: 0.0,
        };
        let noise = NoiseSpec {
            sigma_x: 0.0,
            sigma_v: 5.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| perturb_report(&r, &noise, 1e9, &mut rng).v_avg[0] - 1000.0)
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var.sqrt() - 5.0).abs() < 0.02 * 5.0, "{}", var.sqrt());
    }
}
