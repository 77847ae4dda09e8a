//! Scripted evaluation scenarios and the other drivers on the road.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cumulants::SafetyZoneParams;
use crate::error::{Error, Result};
use crate::sim::{SimConfig, VehicleState, WorldState};

pub const KMH: f64 = 1.0 / 3.6;

pub const PRESET_NAMES: [&str; 4] = ["emergency_stop", "follow_and_stop", "rear_approach", "free_drive"];

/// Piecewise-constant acceleration: each `(start_time, accel)` holds until the
/// next start. Zero before the first segment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccelProfile {
    pub segments: Vec<(f64, f64)>,
}

impl AccelProfile {
    pub fn constant(accel: f64) -> Self {
        Self {
            segments: vec![(0.0, accel)],
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        self.segments
            .iter()
            .take_while(|&&(start, _)| start <= t + 1e-9)
            .last()
            .map_or(0.0, |&(_, a)| a)
    }
}

/// Delayed proportional gap tracker used for following traffic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerParams {
    pub time_headway: f64,
    pub standstill: f64,
    pub k_gap: f64,
    pub k_rel: f64,
    pub k_speed: f64,
    pub desired_speed: f64,
    pub reaction_delay: f64,
    pub max_accel: f64,
    pub max_decel: f64,
    /// Seconds at the start during which the driver holds its speed.
    pub inattentive_for: f64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            time_headway: 2.0,
            standstill: 4.0,
            k_gap: 0.2,
            k_rel: 0.6,
            k_speed: 0.4,
            desired_speed: 100.0 * KMH,
            reaction_delay: 0.6,
            max_accel: 2.5,
            max_decel: 8.0,
            inattentive_for: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverModel {
    Scripted(AccelProfile),
    Tracker(TrackerParams),
}

impl Default for DriverModel {
    fn default() -> Self {
        Self::Scripted(AccelProfile::default())
    }
}

/// Running state of a following driver that reacts to the vehicle ahead of it.
#[derive(Debug, Clone)]
pub struct FollowerState {
    model: DriverModel,
    /// (gap, speed of the vehicle ahead) observations, oldest first.
    history: VecDeque<(f64, f64)>,
    delay_steps: usize,
}

impl FollowerState {
    pub fn new(model: DriverModel, dt: f64) -> Self {
        let delay_steps = match &model {
            DriverModel::Tracker(p) => (p.reaction_delay / dt).round() as usize,
            DriverModel::Scripted(_) => 0,
        };
        Self {
            model,
            history: VecDeque::with_capacity(delay_steps + 1),
            delay_steps,
        }
    }

    /// Acceleration at time `t` given the current gap to the vehicle ahead.
    pub fn accel(&mut self, t: f64, gap: f64, own_speed: f64, ahead_speed: f64) -> f64 {
        match &self.model {
            DriverModel::Scripted(profile) => profile.at(t),
            DriverModel::Tracker(p) => {
                if self.history.is_empty() {
                    self.history.extend(std::iter::repeat_n((gap, ahead_speed), self.delay_steps + 1));
                } else {
                    self.history.push_back((gap, ahead_speed));
                }
                while self.history.len() > self.delay_steps + 1 {
                    self.history.pop_front();
                }
                if t < p.inattentive_for {
                    return 0.0;
                }
                let (seen_gap, seen_speed) = self.history[0];
                let desired_gap = p.standstill + p.time_headway * own_speed;
                let follow = p.k_gap * (seen_gap - desired_gap) + p.k_rel * (seen_speed - own_speed);
                let cruise = p.k_speed * (p.desired_speed - own_speed);
                follow.min(cruise).clamp(-p.max_decel, p.max_accel)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleInit {
    /// Bumper-to-bumper distance to the ego vehicle.
    pub gap: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub ego_speed: f64,
    pub lead: Option<VehicleInit>,
    pub rear: Option<VehicleInit>,
    pub lead_driver: DriverModel,
    pub rear_driver: DriverModel,
    pub duration: f64,
    pub zone: SafetyZoneParams,
    pub v_target: f64,
}

impl ScenarioSpec {
    pub fn preset(name: &str) -> Result<Self> {
        let v100 = 100.0 * KMH;
        let v80 = 80.0 * KMH;
        let zone = SafetyZoneParams::highway();
        let follower = DriverModel::Tracker(TrackerParams::default());
        let spec = match name {
            // Stopped vehicle far ahead of an ego cruising at 100 km/h.
            "emergency_stop" => Self {
                name: name.into(),
                ego_speed: v100,
                lead: Some(VehicleInit { gap: 250.0, speed: 0.0 }),
                rear: Some(VehicleInit { gap: 95.0, speed: v100 }),
                lead_driver: DriverModel::default(),
                rear_driver: follower,
                duration: 30.0,
                zone,
                v_target: v100,
            },
            // Lead holds 80 km/h for 10 s, then brakes hard to a stop.
            "follow_and_stop" => Self {
                name: name.into(),
                ego_speed: v80,
                lead: Some(VehicleInit { gap: 80.0, speed: v80 }),
                rear: Some(VehicleInit { gap: 75.0, speed: v80 }),
                lead_driver: DriverModel::Scripted(AccelProfile {
                    segments: vec![(0.0, 0.0), (10.0, -6.0)],
                }),
                rear_driver: follower,
                duration: 40.0,
                zone,
                v_target: v100,
            },
            // Rear vehicle closes in at +5 m/s and does not react.
            "rear_approach" => Self {
                name: name.into(),
                ego_speed: 20.0,
                lead: None,
                rear: Some(VehicleInit { gap: 120.0, speed: 25.0 }),
                lead_driver: DriverModel::default(),
                rear_driver: DriverModel::Scripted(AccelProfile::constant(0.0)),
                duration: 15.0,
                zone,
                v_target: 20.0,
            },
            "free_drive" => Self {
                name: name.into(),
                ego_speed: 15.0,
                lead: None,
                rear: None,
                lead_driver: DriverModel::default(),
                rear_driver: DriverModel::default(),
                duration: 30.0,
                zone,
                v_target: v100,
            },
            other => {
                return Err(Error::UnknownScenario {
                    name: other.into(),
                    valid: PRESET_NAMES.join(", "),
                })
            }
        };
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "scenario duration must be >= 0, got {}",
                self.duration
            )));
        }
        if !(self.ego_speed >= 0.0 && self.v_target >= 0.0) {
            return Err(Error::InvalidParameter("scenario speeds must be >= 0".into()));
        }
        for v in self.lead.iter().chain(self.rear.iter()) {
            if !(v.speed >= 0.0 && v.gap.is_finite()) {
                return Err(Error::InvalidParameter("vehicle init must have speed >= 0 and finite gap".into()));
            }
        }
        self.zone.validate()
    }

    /// Small seeded perturbation of the initial conditions.
    pub fn jittered(&self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = self.clone();
        out.ego_speed = (out.ego_speed + rng.random_range(-1.0..=1.0)).max(0.0);
        if let Some(lead) = &mut out.lead {
            lead.gap *= rng.random_range(0.9..=1.1);
        }
        if let Some(rear) = &mut out.rear {
            rear.gap *= rng.random_range(0.9..=1.1);
        }
        out
    }

    pub fn num_steps(&self, dt: f64) -> usize {
        (self.duration / dt).round() as usize
    }
}

/// Initial world for a scenario: ego at the origin, flat gap history, zero last action.
pub fn reset_scenario(spec: &ScenarioSpec, cfg: &SimConfig) -> Result<WorldState> {
    spec.validate()?;
    let ego = VehicleState::new(0.0, spec.ego_speed, cfg.ego_length);
    let lead = spec
        .lead
        .map(|l| VehicleState::new(l.gap + cfg.lead_length, l.speed, cfg.lead_length));
    let rear = spec
        .rear
        .map(|r| VehicleState::new(-cfg.ego_length - r.gap, r.speed, cfg.rear_length));
    Ok(WorldState::new(ego, lead, rear, &cfg.features))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_described_speeds() {
        let cfg = SimConfig::default();
        let es = reset_scenario(&ScenarioSpec::preset("emergency_stop").unwrap(), &cfg).unwrap();
        assert!((es.ego.speed - 27.78).abs() < 0.01);
        assert_eq!(es.lead.unwrap().speed, 0.0);
        let fs = reset_scenario(&ScenarioSpec::preset("follow_and_stop").unwrap(), &cfg).unwrap();
        assert!((fs.lead.unwrap().speed - 22.22).abs() < 0.01);
        for name in PRESET_NAMES {
            let w = reset_scenario(&ScenarioSpec::preset(name).unwrap(), &cfg).unwrap();
            assert_eq!(w.last_action, 0.0);
            let f = crate::sim::extract_features(&w, &cfg);
            assert_eq!((f.d_gap, f.d_gap_prev), (0.0, 0.0));
        }
    }

    #[test]
    fn unknown_preset_lists_valid_names() {
        let err = ScenarioSpec::preset("nope").unwrap_err().to_string();
        assert!(err.contains("emergency_stop") && err.contains("free_drive"));
    }

    #[test]
    fn initial_gaps_are_bumper_to_bumper() {
        let cfg = SimConfig::default();
        let w = reset_scenario(&ScenarioSpec::preset("follow_and_stop").unwrap(), &cfg).unwrap();
        assert!((w.front_gap().unwrap() - 80.0).abs() < 1e-12);
        assert!((w.rear_gap().unwrap() - 75.0).abs() < 1e-12);
    }

    #[test]
    fn profile_is_piecewise_constant() {
        let p = AccelProfile {
            segments: vec![(0.0, 0.0), (10.0, -6.0)],
        };
        assert_eq!(p.at(9.99), 0.0);
        assert_eq!(p.at(10.0), -6.0);
        assert_eq!(p.at(100.0), -6.0);
        assert_eq!(AccelProfile::default().at(3.0), 0.0);
    }

    #[test]
    fn tracker_reacts_after_its_delay() {
        let params = TrackerParams {
            reaction_delay: 0.1,
            ..TrackerParams::default()
        };
        let mut f = FollowerState::new(DriverModel::Tracker(params), 0.05);
        // Comfortable gap first, then a sudden close gap; the reaction lags two steps.
        let a0 = f.accel(0.0, 100.0, 20.0, 20.0);
        let a1 = f.accel(0.05, 0.5, 20.0, 20.0);
        let a2 = f.accel(0.10, 0.5, 20.0, 20.0);
        let a3 = f.accel(0.15, 0.5, 20.0, 20.0);
        assert_eq!(a0, a1);
        assert_eq!(a1, a2);
        assert_eq!(a3, -params.max_decel);
    }

    #[test]
    fn jitter_is_seeded() {
        let s = ScenarioSpec::preset("emergency_stop").unwrap();
        assert_eq!(s.jittered(3), s.jittered(3));
        assert_ne!(s.jittered(3), s.jittered(4));
    }
}
