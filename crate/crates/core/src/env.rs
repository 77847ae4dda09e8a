//! Randomised traffic episodes for training GVFs, and on-policy rollouts
//! from a snapshot of such an episode.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::approximator::OutputActivation;
use crate::cumulants::{continuation, headway, raw_cumulant, ContinuationParams, CumulantKind, SafetyZoneParams};
use crate::error::{Error, Result};
use crate::learner::{
    sample_target_action, train_network, EnvStep, LearnerConfig, NetSpec, PredictionEnv, TargetPolicy, TrainingLog,
};
use crate::model::{GvfModel, Question};
use crate::scenario::{DriverModel, FollowerState, TrackerParams};
use crate::sim::{extract_features, step, Action, FeatureVector, SimConfig, VehicleState, WorldState};

/// Ranges the training episodes are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingPool {
    pub lead_probability: f64,
    pub rear_probability: f64,
    pub ego_speed: (f64, f64),
    pub gap: (f64, f64),
    /// Probability an initial gap is instead drawn as a multiple of the
    /// current headway, and the range of that multiple. Keeps the boundary
    /// of the safety zone well sampled at every speed.
    pub near_headway_probability: f64,
    pub near_headway: (f64, f64),
    pub other_speed: (f64, f64),
    /// Fraction of leads that are parked for the whole episode.
    pub parked_lead_probability: f64,
    /// Scripted lead segments: duration range (s) and braking/accelerating bounds (m/s²).
    pub lead_segment: (f64, f64),
    pub lead_brake: (f64, f64),
    pub lead_accel: (f64, f64),
    /// Followers' desired time headway range (s).
    pub follower_headway: (f64, f64),
    /// Probability a follower starts out not reacting, and for how long at most (s).
    pub inattentive_probability: f64,
    pub inattentive_max: f64,
}

impl Default for TrainingPool {
    fn default() -> Self {
        Self {
            lead_probability: 0.95,
            rear_probability: 0.95,
            ego_speed: (0.0, 36.0),
            gap: (0.5, 220.0),
            near_headway_probability: 0.5,
            near_headway: (0.1, 2.5),
            other_speed: (0.0, 36.0),
            parked_lead_probability: 0.25,
            lead_segment: (0.5, 6.0),
            lead_brake: (-6.0, -0.5),
            lead_accel: (-0.5, 2.0),
            follower_headway: (0.5, 3.5),
            inattentive_probability: 0.3,
            inattentive_max: 10.0,
        }
    }
}

impl TrainingPool {
    /// Empty road, as used for the speed predictor.
    pub fn solo() -> Self {
        Self {
            lead_probability: 0.0,
            rear_probability: 0.0,
            ..Self::default()
        }
    }

    /// The pool actually used for `kind`: only the vehicle that matters to
    /// the question is kept on the road.
    pub fn for_question(&self, kind: CumulantKind) -> Self {
        match kind {
            CumulantKind::FrontSafety => Self {
                rear_probability: 0.0,
                ..self.clone()
            },
            CumulantKind::RearSafety => Self {
                lead_probability: 0.0,
                ..self.clone()
            },
            CumulantKind::Speed => Self {
                lead_probability: 0.0,
                rear_probability: 0.0,
                ..self.clone()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probabilities = [
            self.lead_probability,
            self.rear_probability,
            self.parked_lead_probability,
            self.near_headway_probability,
            self.inattentive_probability,
        ];
        if probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidParameter("pool probabilities must lie in [0, 1]".into()));
        }
        let ranges = [
            self.ego_speed,
            self.gap,
            self.near_headway,
            self.other_speed,
            self.lead_segment,
            self.lead_brake,
            self.lead_accel,
            self.follower_headway,
        ];
        if ranges.iter().any(|&(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi)) {
            return Err(Error::InvalidParameter("pool ranges must be finite with lo <= hi".into()));
        }
        if self.ego_speed.0 < 0.0 || self.other_speed.0 < 0.0 || self.lead_segment.0 <= 0.0 {
            return Err(Error::InvalidParameter(
                "pool speeds must be >= 0 and lead segments > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn check_pairing(&self, kind: CumulantKind) -> Result<()> {
        let ok = match kind {
            CumulantKind::FrontSafety => self.lead_probability > 0.0,
            CumulantKind::RearSafety => self.rear_probability > 0.0,
            CumulantKind::Speed => self.lead_probability == 0.0 && self.rear_probability == 0.0,
        };
        if ok {
            Ok(())
        } else if kind.is_safety() {
            Err(Error::InvalidParameter(format!(
                "{kind} training needs other vehicles on the road"
            )))
        } else {
            Err(Error::InvalidParameter("speed training must not include other vehicles".into()))
        }
    }
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Lead driver that draws random piecewise-constant accelerations.
#[derive(Debug, Clone)]
struct RandomLead {
    parked: bool,
    accel: f64,
    steps_left: usize,
}

impl RandomLead {
    fn accel<R: Rng>(&mut self, pool: &TrainingPool, dt: f64, rng: &mut R) -> f64 {
        if self.parked {
            return 0.0;
        }
        if self.steps_left == 0 {
            self.steps_left = (uniform(rng, pool.lead_segment) / dt).ceil().max(1.0) as usize;
            let u: f64 = rng.random();
            self.accel = if u < 0.35 {
                0.0
            } else if u < 0.7 {
                uniform(rng, pool.lead_brake)
            } else {
                uniform(rng, pool.lead_accel)
            };
        }
        self.steps_left -= 1;
        self.accel
    }
}

/// Episodic environment for one predictive question.
#[derive(Debug, Clone)]
pub struct TrafficEnv {
    kind: CumulantKind,
    cfg: SimConfig,
    zone: SafetyZoneParams,
    continuation: ContinuationParams,
    pool: TrainingPool,
    max_episode_steps: usize,
    rng: ChaCha8Rng,
    world: WorldState,
    lead: RandomLead,
    rear: Option<FollowerState>,
    steps: usize,
    time: f64,
}

impl TrafficEnv {
    pub fn new(
        kind: CumulantKind,
        gamma: f64,
        cfg: &SimConfig,
        zone: &SafetyZoneParams,
        pool: &TrainingPool,
        max_episode_steps: usize,
        seed: u64,
    ) -> Result<Self> {
        pool.validate()?;
        pool.check_pairing(kind)?;
        cfg.validate()?;
        zone.validate()?;
        let mut env = Self {
            kind,
            cfg: cfg.clone(),
            zone: *zone,
            continuation: ContinuationParams::new(gamma)?,
            pool: pool.clone(),
            max_episode_steps,
            rng: ChaCha8Rng::seed_from_u64(seed),
            world: WorldState::new(VehicleState::new(0.0, 0.0, cfg.ego_length), None, None, &cfg.features),
            lead: RandomLead {
                parked: true,
                accel: 0.0,
                steps_left: 0,
            },
            rear: None,
            steps: 0,
            time: 0.0,
        };
        env.reset();
        Ok(env)
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn features(&self) -> FeatureVector {
        extract_features(&self.world, &self.cfg)
    }

    pub fn kind(&self) -> CumulantKind {
        self.kind
    }

    /// Replaces the random stream driving the other vehicles.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }
}

impl PredictionEnv for TrafficEnv {
    fn observation(&self) -> Vec<f64> {
        self.features().observation(self.kind)
    }

    fn reset(&mut self) {
        let cfg = &self.cfg;
        let pool = &self.pool;
        let zone = &self.zone;
        let rng = &mut self.rng;
        let ego = VehicleState::new(0.0, uniform(rng, pool.ego_speed), cfg.ego_length);
        let draw_gap = |rng: &mut ChaCha8Rng, speed: f64| {
            if rng.random_bool(pool.near_headway_probability) {
                let h = headway(speed, zone).unwrap_or(zone.d_min);
                (h * uniform(rng, pool.near_headway)).max(pool.gap.0)
            } else {
                uniform(rng, pool.gap)
            }
        };
        let lead = rng.random_bool(pool.lead_probability).then(|| {
            let parked = rng.random_bool(pool.parked_lead_probability);
            let speed = if parked { 0.0 } else { uniform(rng, pool.other_speed) };
            self.lead = RandomLead {
                parked,
                accel: 0.0,
                steps_left: 0,
            };
            VehicleState::new(draw_gap(rng, ego.speed) + cfg.lead_length, speed, cfg.lead_length)
        });
        let rear = rng.random_bool(pool.rear_probability).then(|| {
            let params = TrackerParams {
                time_headway: uniform(rng, pool.follower_headway),
                standstill: uniform(rng, (2.0, 8.0)),
                k_gap: uniform(rng, (0.05, 0.4)),
                k_rel: uniform(rng, (0.2, 1.0)),
                desired_speed: uniform(rng, pool.other_speed),
                max_decel: uniform(rng, (4.0, 8.0)),
                inattentive_for: if rng.random_bool(pool.inattentive_probability) {
                    uniform(rng, (0.0, pool.inattentive_max))
                } else {
                    0.0
                },
                ..TrackerParams::default()
            };
            self.rear = Some(FollowerState::new(DriverModel::Tracker(params), cfg.dt));
            let speed = uniform(rng, pool.other_speed);
            VehicleState::new(-cfg.ego_length - draw_gap(rng, speed), speed, cfg.rear_length)
        });
        if rear.is_none() {
            self.rear = None;
        }
        self.world = WorldState::new(ego, lead, rear, &cfg.features);
        self.steps = 0;
        self.time = 0.0;
    }

    fn step(&mut self, action: Action) -> Result<EnvStep> {
        let lead_accel = if self.world.lead.is_some() {
            self.lead.accel(&self.pool, self.cfg.dt, &mut self.rng)
        } else {
            0.0
        };
        let rear_accel = match (&mut self.rear, self.world.rear, self.world.rear_gap()) {
            (Some(driver), Some(rear), Some(gap)) => driver.accel(self.time, gap, rear.speed, self.world.ego.speed),
            _ => 0.0,
        };
        let outcome = step(&self.world, action, lead_accel, rear_accel, &self.cfg)?;
        let gamma = continuation(&outcome, self.kind, &self.continuation);
        let cumulant = raw_cumulant(self.kind, &outcome.next_state, &self.zone);
        let terminal = match self.kind {
            CumulantKind::FrontSafety => outcome.front_collision,
            CumulantKind::RearSafety => outcome.rear_collision,
            CumulantKind::Speed => false,
        };
        self.world = outcome.next_state;
        self.steps += 1;
        self.time += self.cfg.dt;
        Ok(EnvStep {
            cumulant,
            continuation: gamma,
            terminal,
            truncated: self.steps >= self.max_episode_steps,
        })
    }
}

/// Network head and cumulant normalisation for a question.
pub fn net_spec(kind: CumulantKind, cfg: &SimConfig) -> NetSpec {
    let (output, cumulant_scale) = if kind.is_safety() {
        (OutputActivation::Sigmoid, 1.0)
    } else {
        (OutputActivation::Identity, cfg.v_max)
    };
    NetSpec {
        input_width: GvfModel::input_width(kind),
        output,
        cumulant_scale,
    }
}

/// Trains one GVF in randomised traffic and packages it with its question.
pub fn train_gvf(
    kind: CumulantKind,
    cfg: &SimConfig,
    zone: &SafetyZoneParams,
    settings: &LearnerConfig,
    pool: &TrainingPool,
) -> Result<(GvfModel, TrainingLog)> {
    settings.validate()?;
    let mut env = TrafficEnv::new(
        kind,
        settings.gamma,
        cfg,
        zone,
        pool,
        settings.max_episode_steps,
        settings.seed ^ 0x5EED_0F_E4F,
    )?;
    let spec = net_spec(kind, cfg);
    let (net, log) = train_network(&mut env, settings, &spec)?;
    let model = GvfModel {
        net,
        question: Question {
            cumulant: kind,
            gamma: settings.gamma,
            sigma: settings.sigma,
        },
        feature_scaling: cfg.features,
        zone: *zone,
        output_scale: spec.cumulant_scale,
    };
    Ok((model, log))
}

/// Follows the target policy from `env`'s current state after taking
/// `first_action`, returning the (scaled cumulant, continuation) sequence
/// until termination or until the discount product drops below `residual`.
pub fn target_rollout<R: Rng>(
    env: &TrafficEnv,
    first_action: Action,
    policy: &TargetPolicy,
    cumulant_scale: f64,
    residual: f64,
    max_steps: usize,
    rng: &mut R,
) -> Result<Vec<(f64, f64)>> {
    let mut env = env.clone();
    let mut out = Vec::new();
    let mut discount = 1.0;
    let mut action = first_action;
    for _ in 0..max_steps {
        let s = env.step(action)?;
        out.push(((1.0 - s.continuation) * s.cumulant / cumulant_scale, s.continuation));
        discount *= s.continuation;
        if s.terminal || discount < residual {
            break;
        }
        action = sample_target_action(policy, action, rng);
    }
    Ok(out)
}
