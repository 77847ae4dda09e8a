//! Predictive-question signals: safety and speed cumulants, the headway
//! model that sizes the safety zones, and the continuation function.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{StepOutcome, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SafetyZoneParams {
    /// Desired time headway, seconds.
    pub tau: f64,
    /// Stand-still distance, meters.
    pub d_min: f64,
    /// Number of intruding points tolerated before the zone counts as unsafe.
    pub beta_f: u32,
}

impl Default for SafetyZoneParams {
    fn default() -> Self {
        Self::highway()
    }
}

impl SafetyZoneParams {
    pub fn highway() -> Self {
        Self {
            tau: 3.0,
            d_min: 4.0,
            beta_f: 0,
        }
    }

    /// Small-robot preset.
    pub fn robot() -> Self {
        Self {
            tau: 1.5,
            d_min: 0.4,
            beta_f: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidParameter(format!("zone.tau must be > 0, got {}", self.tau)));
        }
        if !(self.d_min.is_finite() && self.d_min >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "zone.d_min must be >= 0, got {}",
                self.d_min
            )));
        }
        Ok(())
    }

    fn zone_length(&self, speed: f64) -> f64 {
        self.d_min + speed.max(0.0) * self.tau
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuationParams {
    pub gamma_const: f64,
}

impl ContinuationParams {
    pub fn new(gamma_const: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma_const) {
            return Err(Error::InvalidParameter(format!("gamma {gamma_const} outside [0, 1)")));
        }
        Ok(Self { gamma_const })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CumulantKind {
    FrontSafety,
    RearSafety,
    Speed,
}

impl CumulantKind {
    pub const ALL: [CumulantKind; 3] = [Self::FrontSafety, Self::RearSafety, Self::Speed];

    pub fn is_safety(self) -> bool {
        !matches!(self, Self::Speed)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::FrontSafety => "front_safety",
            Self::RearSafety => "rear_safety",
            Self::Speed => "speed",
        }
    }
}

impl std::fmt::Display for CumulantKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for CumulantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "front" | "front_safety" => Ok(Self::FrontSafety),
            "rear" | "rear_safety" => Ok(Self::RearSafety),
            "speed" => Ok(Self::Speed),
            other => Err(Error::InvalidParameter(format!(
                "unknown question `{other}` (valid: front, rear, speed)"
            ))),
        }
    }
}

/// Speed-proportional safety distance `d_min + v·tau`.
pub fn headway(speed: f64, params: &SafetyZoneParams) -> Result<f64> {
    if !(speed >= 0.0) {
        return Err(Error::InvalidParameter(format!("negative speed {speed}")));
    }
    Ok(params.zone_length(speed))
}

fn zone_cumulant(gap: f64, speed: f64, params: &SafetyZoneParams) -> f64 {
    // Single lane: the only point that can intrude is the other vehicle's face.
    let intruding = u32::from(gap < params.zone_length(speed));
    if intruding > params.beta_f {
        0.0
    } else {
        1.0
    }
}

/// 1 when the front zone is clear, 0 when the lead vehicle intrudes.
pub fn front_safety_cumulant(front_gap: f64, ego_speed: f64, params: &SafetyZoneParams) -> f64 {
    debug_assert!(ego_speed >= 0.0);
    zone_cumulant(front_gap, ego_speed, params)
}

/// Mirror of the front cumulant, sized by the rear vehicle's speed.
pub fn rear_safety_cumulant(rear_gap: f64, rear_speed: f64, params: &SafetyZoneParams) -> f64 {
    debug_assert!(rear_speed >= 0.0);
    zone_cumulant(rear_gap, rear_speed, params)
}

pub fn speed_cumulant(ego_speed: f64) -> f64 {
    ego_speed
}

/// Raw (unscaled) cumulant of `kind` observed in `state`. Absent vehicles are safe.
pub fn raw_cumulant(kind: CumulantKind, state: &WorldState, params: &SafetyZoneParams) -> f64 {
    match kind {
        CumulantKind::FrontSafety => match state.front_gap() {
            Some(gap) => front_safety_cumulant(gap, state.ego.speed, params),
            None => 1.0,
        },
        CumulantKind::RearSafety => match (state.rear_gap(), state.rear) {
            (Some(gap), Some(rear)) => rear_safety_cumulant(gap, rear.speed, params),
            _ => 1.0,
        },
        CumulantKind::Speed => speed_cumulant(state.ego.speed),
    }
}

/// Discount for the step that produced `outcome`; zero on the matching collision.
pub fn continuation(outcome: &StepOutcome, which: CumulantKind, params: &ContinuationParams) -> f64 {
    let terminated = match which {
        CumulantKind::FrontSafety => outcome.front_collision,
        CumulantKind::RearSafety => outcome.rear_collision,
        CumulantKind::Speed => false,
    };
    if terminated {
        0.0
    } else {
        params.gamma_const
    }
}

pub fn scale_cumulant(c_raw: f64, gamma_next: f64) -> f64 {
    (1.0 - gamma_next) * c_raw
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{extract_features, SimConfig, VehicleState};
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn headway_examples() {
        let hw = SafetyZoneParams::highway();
        assert!((headway(100.0 / 3.6, &hw).unwrap() - 87.33).abs() < 5e-3);
        assert_eq!(headway(0.0, &hw).unwrap(), 4.0);
        assert!(close(headway(1.0, &SafetyZoneParams::robot()).unwrap(), 1.9));
        assert!(headway(-0.1, &hw).is_err());
    }

    #[test]
    fn front_safety_examples() {
        let hw = SafetyZoneParams::highway();
        assert_eq!(front_safety_cumulant(50.0, 27.78, &hw), 0.0);
        assert_eq!(front_safety_cumulant(100.0, 27.78, &hw), 1.0);
        let h = headway(27.78, &hw).unwrap();
        assert_eq!(front_safety_cumulant(h, 27.78, &hw), 1.0);
    }

    #[test]
    fn beta_tolerates_single_intrusion() {
        let lax = SafetyZoneParams {
            beta_f: 1,
            ..SafetyZoneParams::highway()
        };
        assert_eq!(front_safety_cumulant(10.0, 27.78, &lax), 1.0);
    }

    #[test]
    fn rear_safety_examples() {
        let hw = SafetyZoneParams::highway();
        assert_eq!(rear_safety_cumulant(10.0, 5.0, &hw), 0.0);
        assert_eq!(rear_safety_cumulant(25.0, 5.0, &hw), 1.0);
        assert_eq!(rear_safety_cumulant(4.0, 0.0, &hw), 1.0);
    }

    #[test]
    fn speed_cumulant_is_identity() {
        assert_eq!(speed_cumulant(0.0), 0.0);
        assert_eq!(speed_cumulant(27.78), 27.78);
    }

    #[test]
    fn constant_speed_return_equals_speed() {
        // Direct summation of the normalised series, independent of any learner code.
        let (v, gamma) = (27.78_f64, 0.95_f64);
        let total: f64 = (0..2000).map(|k| gamma.powi(k) * scale_cumulant(v, gamma)).sum();
        assert!(close(total, v));
    }

    fn outcome(front: bool, rear: bool) -> StepOutcome {
        let cfg = SimConfig::default();
        let state = WorldState::new(VehicleState::new(0.0, 0.0, 4.0), None, None, &cfg.features);
        StepOutcome {
            features: extract_features(&state, &cfg),
            next_state: state,
            front_collision: front,
            rear_collision: rear,
        }
    }

    #[test]
    fn continuation_terminates_on_matching_collision() {
        let p = ContinuationParams::new(0.95).unwrap();
        assert_eq!(continuation(&outcome(true, false), CumulantKind::FrontSafety, &p), 0.0);
        assert_eq!(continuation(&outcome(false, false), CumulantKind::FrontSafety, &p), 0.95);
        assert_eq!(continuation(&outcome(true, false), CumulantKind::Speed, &p), 0.95);
        assert_eq!(continuation(&outcome(true, false), CumulantKind::RearSafety, &p), 0.95);
        assert_eq!(continuation(&outcome(false, true), CumulantKind::RearSafety, &p), 0.0);
        assert!(ContinuationParams::new(1.0).is_err());
    }

    #[test]
    fn scaling_examples() {
        assert!(close(scale_cumulant(1.0, 0.95), 0.05));
        assert_eq!(scale_cumulant(1.0, 0.0), 1.0);
        assert_eq!(scale_cumulant(0.0, 0.983), 0.0);
    }

    #[test]
    fn raw_cumulant_treats_absent_vehicles_as_safe() {
        let cfg = SimConfig::default();
        let state = WorldState::new(VehicleState::new(0.0, 30.0, 4.0), None, None, &cfg.features);
        let hw = SafetyZoneParams::highway();
        assert_eq!(raw_cumulant(CumulantKind::FrontSafety, &state, &hw), 1.0);
        assert_eq!(raw_cumulant(CumulantKind::RearSafety, &state, &hw), 1.0);
        assert_eq!(raw_cumulant(CumulantKind::Speed, &state, &hw), 30.0);
    }

    proptest! {
        #[test]
        fn safety_is_binary_and_monotone_in_gap(
            gap in -10.0f64..300.0, extra in 0.0f64..100.0, v in 0.0f64..40.0,
            tau in 0.1f64..4.0, d_min in 0.0f64..10.0, beta in 0u32..2,
        ) {
            let p = SafetyZoneParams { tau, d_min, beta_f: beta };
            let c = front_safety_cumulant(gap, v, &p);
            prop_assert!(c == 0.0 || c == 1.0);
            if c == 1.0 {
                prop_assert_eq!(front_safety_cumulant(gap + extra, v, &p), 1.0);
            }
        }

        #[test]
        fn headway_is_affine(v1 in 0.0f64..40.0, v2 in 0.0f64..40.0) {
            let p = SafetyZoneParams::highway();
            let lhs = headway(v1, &p).unwrap() + headway(v2, &p).unwrap() - p.d_min;
            prop_assert!((lhs - headway(v1 + v2, &p).unwrap()).abs() < 1e-9);
        }
    }
}
