//! Fixed-step longitudinal traffic simulator.
//!
//! Vehicles are point masses with a length. `position` is the front bumper,
//! so a vehicle occupies `[position - length, position]` on the road. The ego
//! vehicle is driven by a unitless command in `[-1, 1]` (negative brakes,
//! positive throttles through a speed-dependent engine curve); lead and rear
//! vehicles are driven by scripted accelerations.

use serde::{Deserialize, Serialize};

use crate::cumulants::CumulantKind;
use crate::error::{ensure_finite, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: f64,
    pub speed: f64,
    pub length: f64,
}

impl VehicleState {
    pub fn new(position: f64, speed: f64, length: f64) -> Self {
        Self {
            position,
            speed,
            length,
        }
    }

    pub fn rear_face(&self) -> f64 {
        self.position - self.length
    }
}

/// Ego throttle/brake command.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Action(f64);

impl Action {
    pub const MIN: f64 = -1.0;
    pub const MAX: f64 = 1.0;

    pub fn new(command: f64) -> Result<Self> {
        ensure_finite("action", command)?;
        if !(Self::MIN..=Self::MAX).contains(&command) {
            return Err(Error::ActionOutOfBounds(command));
        }
        Ok(Self(command))
    }

    /// Clamps into bounds. NaN maps to zero.
    pub fn clamped(command: f64) -> Self {
        if command.is_nan() {
            return Self(0.0);
        }
        Self(command.clamp(Self::MIN, Self::MAX))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Fixed affine ranges used to scale raw observations into roughly `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureScaling {
    /// Sensor range in meters; gaps beyond it (or no vehicle) read as the range.
    pub gap_range: f64,
    /// Gap change per step that maps to 1.0.
    pub gap_delta_range: f64,
    /// Speed that maps to +1.0.
    pub speed_range: f64,
}

impl Default for FeatureScaling {
    fn default() -> Self {
        Self {
            gap_range: 200.0,
            gap_delta_range: 2.0,
            speed_range: 40.0,
        }
    }
}

impl FeatureScaling {
    pub fn scale_gap(&self, sensed_gap: f64) -> f64 {
        sensed_gap / self.gap_range * 2.0 - 1.0
    }

    pub fn scale_gap_delta(&self, delta: f64) -> f64 {
        delta / self.gap_delta_range
    }

    pub fn scale_speed(&self, speed: f64) -> f64 {
        speed / self.speed_range * 2.0 - 1.0
    }

    /// What the range sensor reports for a raw gap (`None` = no vehicle).
    pub fn sense(&self, gap: Option<f64>) -> f64 {
        match gap {
            Some(g) => g.min(self.gap_range),
            None => self.gap_range,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gap_range", self.gap_range),
            ("gap_delta_range", self.gap_delta_range),
            ("speed_range", self.speed_range),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("features.{name} must be > 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub dt: f64,
    pub a_max_throttle: f64,
    /// Peak braking deceleration, positive magnitude.
    pub a_max_brake: f64,
    pub v_max: f64,
    /// (speed m/s, throttle scale) knots, piecewise linear, clamped at the ends.
    pub engine_curve_knots: Vec<(f64, f64)>,
    pub ego_length: f64,
    pub lead_length: f64,
    pub rear_length: f64,
    pub features: FeatureScaling,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            a_max_throttle: 3.0,
            a_max_brake: 6.0,
            v_max: 40.0,
            engine_curve_knots: vec![(0.0, 1.0), (15.0, 0.7), (30.0, 0.4)],
            ego_length: 4.0,
            lead_length: 4.0,
            rear_length: 4.0,
            features: FeatureScaling::default(),
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("a_max_throttle", self.a_max_throttle),
            ("a_max_brake", self.a_max_brake),
            ("v_max", self.v_max),
            ("ego_length", self.ego_length),
            ("lead_length", self.lead_length),
            ("rear_length", self.rear_length),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("sim.{name} must be > 0, got {v}")));
            }
        }
        if self.engine_curve_knots.is_empty() {
            return Err(Error::InvalidParameter("sim.engine_curve_knots is empty".into()));
        }
        for w in self.engine_curve_knots.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::InvalidParameter(
                    "sim.engine_curve_knots speeds must be strictly increasing".into(),
                ));
            }
        }
        for &(_, scale) in &self.engine_curve_knots {
            if !(scale > 0.0 && scale <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "sim.engine_curve_knots scale {scale} outside (0, 1]"
                )));
            }
        }
        self.features.validate()
    }

    pub fn engine_curve(&self, speed: f64) -> f64 {
        interpolate(&self.engine_curve_knots, speed)
    }

    /// Longitudinal acceleration produced by an ego command at `speed`.
    pub fn ego_accel(&self, command: f64, speed: f64) -> f64 {
        if command >= 0.0 {
            command * self.a_max_throttle * self.engine_curve(speed)
        } else {
            command * self.a_max_brake
        }
    }
}

/// Piecewise-linear interpolation through sorted knots, clamped at both ends.
pub(crate) fn interpolate(knots: &[(f64, f64)], x: f64) -> f64 {
    let (first, last) = (knots[0], knots[knots.len() - 1]);
    if x <= first.0 {
        return first.1;
    }
    if x >= last.0 {
        return last.1;
    }
    let i = knots.partition_point(|&(k, _)| k <= x);
    let (x0, y0) = knots[i - 1];
    let (x1, y1) = knots[i];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub ego: VehicleState,
    pub lead: Option<VehicleState>,
    pub rear: Option<VehicleState>,
    pub last_action: f64,
    /// Sensed front gap one and two steps ago.
    pub prev_front_gap: f64,
    pub prev_prev_front_gap: f64,
    pub prev_rear_gap: f64,
    pub prev_prev_rear_gap: f64,
    pub time_step_index: u64,
}

impl WorldState {
    /// Fresh state with a flat gap history and a zero last action.
    pub fn new(
        ego: VehicleState,
        lead: Option<VehicleState>,
        rear: Option<VehicleState>,
        scaling: &FeatureScaling,
    ) -> Self {
        let mut state = Self {
            ego,
            lead,
            rear,
            last_action: 0.0,
            prev_front_gap: 0.0,
            prev_prev_front_gap: 0.0,
            prev_rear_gap: 0.0,
            prev_prev_rear_gap: 0.0,
            time_step_index: 0,
        };
        let front = scaling.sense(state.front_gap());
        let rear = scaling.sense(state.rear_gap());
        state.prev_front_gap = front;
        state.prev_prev_front_gap = front;
        state.prev_rear_gap = rear;
        state.prev_prev_rear_gap = rear;
        state
    }

    /// Bumper-to-bumper distance to the lead vehicle.
    pub fn front_gap(&self) -> Option<f64> {
        self.lead.map(|l| l.rear_face() - self.ego.position)
    }

    /// Bumper-to-bumper distance from the rear vehicle.
    pub fn rear_gap(&self) -> Option<f64> {
        self.rear.map(|r| self.ego.rear_face() - r.position)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub front_gap: f64,
    pub d_gap: f64,
    pub d_gap_prev: f64,
    pub ego_speed: f64,
    pub last_command: f64,
    pub rear_gap: f64,
    pub rear_d_gap: f64,
    pub rear_d_gap_prev: f64,
}

impl FeatureVector {
    /// Observation a GVF of the given kind consumes (action excluded).
    ///
    /// Front safety sees the front channels, rear safety the rear channels,
    /// and the speed predictor only ego speed and the last command.
    pub fn observation(&self, kind: CumulantKind) -> Vec<f64> {
        match kind {
            CumulantKind::FrontSafety => vec![
                self.front_gap,
                self.d_gap,
                self.d_gap_prev,
                self.ego_speed,
                self.last_command,
            ],
            CumulantKind::RearSafety => vec![
                self.rear_gap,
                self.rear_d_gap,
                self.rear_d_gap_prev,
                self.ego_speed,
                self.last_command,
            ],
            CumulantKind::Speed => vec![self.ego_speed, self.last_command],
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.front_gap,
            self.d_gap,
            self.d_gap_prev,
            self.ego_speed,
            self.last_command,
            self.rear_gap,
            self.rear_d_gap,
            self.rear_d_gap_prev,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

pub fn observation_width(kind: CumulantKind) -> usize {
    match kind {
        CumulantKind::FrontSafety | CumulantKind::RearSafety => 5,
        CumulantKind::Speed => 2,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: WorldState,
    pub front_collision: bool,
    pub rear_collision: bool,
    pub features: FeatureVector,
}

pub fn extract_features(state: &WorldState, cfg: &SimConfig) -> FeatureVector {
    let sc = &cfg.features;
    let front = sc.sense(state.front_gap());
    let rear = sc.sense(state.rear_gap());
    FeatureVector {
        front_gap: sc.scale_gap(front),
        d_gap: sc.scale_gap_delta(front - state.prev_front_gap),
        d_gap_prev: sc.scale_gap_delta(state.prev_front_gap - state.prev_prev_front_gap),
        ego_speed: sc.scale_speed(state.ego.speed),
        last_command: state.last_action,
        rear_gap: sc.scale_gap(rear),
        rear_d_gap: sc.scale_gap_delta(rear - state.prev_rear_gap),
        rear_d_gap_prev: sc.scale_gap_delta(state.prev_rear_gap - state.prev_prev_rear_gap),
    }
}

fn integrate(vehicle: &VehicleState, accel: f64, cfg: &SimConfig) -> VehicleState {
    let speed = (vehicle.speed + accel * cfg.dt).clamp(0.0, cfg.v_max);
    VehicleState {
        position: vehicle.position + speed * cfg.dt,
        speed,
        length: vehicle.length,
    }
}

/// Advances the world one step with semi-implicit Euler.
pub fn step(
    state: &WorldState,
    ego_action: Action,
    lead_script_accel: f64,
    rear_script_accel: f64,
    cfg: &SimConfig,
) -> Result<StepOutcome> {
    let command = ensure_finite("ego action", ego_action.value())?;
    ensure_finite("lead acceleration", lead_script_accel)?;
    ensure_finite("rear acceleration", rear_script_accel)?;

    let sc = &cfg.features;
    let old_front = sc.sense(state.front_gap());
    let old_rear = sc.sense(state.rear_gap());

    let accel = cfg.ego_accel(command, state.ego.speed);
    let next_state = WorldState {
        ego: integrate(&state.ego, accel, cfg),
        lead: state.lead.map(|v| integrate(&v, lead_script_accel, cfg)),
        rear: state.rear.map(|v| integrate(&v, rear_script_accel, cfg)),
        last_action: command,
        prev_front_gap: old_front,
        prev_prev_front_gap: state.prev_front_gap,
        prev_rear_gap: old_rear,
        prev_prev_rear_gap: state.prev_rear_gap,
        time_step_index: state.time_step_index + 1,
    };
    let front_collision = next_state.front_gap().is_some_and(|g| g <= 0.0);
    let rear_collision = next_state.rear_gap().is_some_and(|g| g <= 0.0);
    let features = extract_features(&next_state, cfg);
    Ok(StepOutcome {
        next_state,
        front_collision,
        rear_collision,
        features,
    })
}
