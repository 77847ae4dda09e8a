//! Closed-loop scenario runs, trajectory metrics, and the reference
//! computations predictions are scored against.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controllers::{
    baseline_act, fuzzy_act, rule_act_with_speed, rule_act_without_speed, track_setpoint, ControllerKind,
    ControllersConfig, CountingPredictor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cumulants::{headway, raw_cumulant, CumulantKind};
use crate::env::{target_rollout, TrafficEnv, TrainingPool};
use crate::learner::{sample_behavior_action, BehaviorPolicy, PredictionEnv, TargetPolicy};
use crate::error::{Error, Result};
use crate::model::{GvfModel, Predictor};
use crate::scenario::{reset_scenario, FollowerState, ScenarioSpec};
use crate::sim::{extract_features, step, Action, SimConfig};

/// Residual discount below which a rollout counts as complete.
pub const MC_RESIDUAL: f64 = 1e-6;

/// Speed at or below which the ego counts as stopped (m/s).
pub const REST_SPEED: f64 = 0.1;

/// Discounted sum of a `(scaled cumulant, continuation)` sequence.
///
/// Entry `k` is weighted by the product of the continuations before it; the
/// sequence must either contain a zero continuation or drive the discount
/// product below [`MC_RESIDUAL`].
pub fn mc_return(rollout: &[(f64, f64)]) -> Result<f64> {
    let mut total = 0.0;
    let mut discount = 1.0;
    for &(c, gamma) in rollout {
        if !c.is_finite() || !gamma.is_finite() {
            return Err(Error::NonFinite {
                what: "rollout entry",
                value: if c.is_finite() { gamma } else { c },
            });
        }
        total += discount * c;
        discount *= gamma;
        if discount == 0.0 {
            return Ok(total);
        }
    }
    if discount < MC_RESIDUAL {
        Ok(total)
    } else {
        Err(Error::RolloutTooShort { residual: discount })
    }
}

/// Exact values of a deterministic left-to-right chain.
///
/// Transition `i` leaves state `i` with scaled cumulant `c[i]` and discount
/// `gamma`. With `terminal`, leaving the last state ends the episode;
/// otherwise the last state loops onto itself.
pub fn build_tabular_oracle(gamma: f64, c: &[f64], terminal: bool) -> Result<Vec<f64>> {
    if c.len() < 2 {
        return Err(Error::InvalidParameter("tabular chain needs at least 2 states".into()));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidParameter(format!("chain gamma {gamma} outside [0, 1)")));
    }
    let n = c.len();
    let mut v = vec![0.0; n];
    v[n - 1] = if terminal { c[n - 1] } else { c[n - 1] / (1.0 - gamma) };
    for i in (0..n - 1).rev() {
        v[i] = c[i] + gamma * v[i + 1];
    }
    Ok(v)
}

/// Models available to a scenario run. Rear safety is only ever logged.
#[derive(Debug, Clone, Copy, Default)]
pub struct ModelSet<'a> {
    pub front: Option<&'a GvfModel>,
    pub rear: Option<&'a GvfModel>,
    pub speed: Option<&'a GvfModel>,
}

impl<'a> ModelSet<'a> {
    pub fn get(&self, kind: CumulantKind) -> Option<&'a GvfModel> {
        match kind {
            CumulantKind::FrontSafety => self.front,
            CumulantKind::RearSafety => self.rear,
            CumulantKind::Speed => self.speed,
        }
    }

    /// Checks each supplied model answers the question its slot expects and
    /// uses the simulator's feature scaling.
    pub fn validate(&self, cfg: &SimConfig) -> Result<()> {
        for kind in CumulantKind::ALL {
            if let Some(m) = self.get(kind) {
                m.expect_kind(kind)?;
                m.check_scaling(&cfg.features)?;
            }
        }
        Ok(())
    }
}

/// One row of a scenario trajectory. Vehicle-dependent fields are empty when
/// that vehicle is absent; `action` is empty on the final record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub x_ego: f64,
    pub v_ego: f64,
    pub x_lead: Option<f64>,
    pub v_lead: Option<f64>,
    pub x_rear: Option<f64>,
    pub v_rear: Option<f64>,
    pub action: Option<f64>,
    pub c_front: f64,
    pub c_rear: f64,
    pub pred_front: Option<f64>,
    pub pred_rear: Option<f64>,
    pub pred_speed: Option<f64>,
    pub gap_front: Option<f64>,
    pub gap_rear: Option<f64>,
    pub h_front: f64,
    pub h_rear: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub scenario: String,
    pub controller: ControllerKind,
    pub steps: usize,
    /// Only the initial record exists; the remaining fields carry no information.
    pub empty: bool,
    pub collided: bool,
    pub front_collision: bool,
    pub rear_collision: bool,
    pub min_front_gap: Option<f64>,
    pub final_speed: f64,
    pub at_rest: bool,
    pub final_gap_at_rest: Option<f64>,
    /// Largest deceleration magnitude of the ego (m/s²).
    pub max_decel: f64,
    pub safety_violation_time: f64,
    pub speed_rmse_to_target: f64,
    pub rear_warning_lead_time: Option<f64>,
    /// Rear-safety queries issued while computing actions; always zero.
    pub rear_queries_in_control: usize,
    /// Fewest and most front-safety queries issued in a single control step.
    pub front_queries_per_step: Option<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub records: Vec<StepRecord>,
    pub metrics: Metrics,
}

pub const RESULT_COLUMNS: [&str; 17] = [
    "t", "x_ego", "v_ego", "x_lead", "v_lead", "x_rear", "v_rear", "action", "c_front", "c_rear", "pred_front",
    "pred_rear", "pred_speed", "gap_front", "gap_rear", "h_front", "h_rear",
];

impl ScenarioResult {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        w.write_record(RESULT_COLUMNS)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Vec<StepRecord>> {
        let mut r = csv::Reader::from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        if header != RESULT_COLUMNS {
            return Err(Error::ModelFormat(format!("unexpected result columns: {}", header.join(","))));
        }
        Ok(r.deserialize().collect::<std::result::Result<Vec<StepRecord>, _>>()?)
    }

    /// Writes `<stem>.csv` and `<stem>.metrics.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{stem}.csv")))?);
        self.write_csv(file)?;
        std::fs::write(dir.join(format!("{stem}.metrics.json")), self.metrics_json()?)?;
        Ok(())
    }

    pub fn metrics_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.metrics)? + "\n")
    }
}

/// Time from the rear prediction first falling below `threshold` to the
/// rear cumulant first reading unsafe. `None` if either never happens.
pub fn rear_warning_lead_time(records: &[StepRecord], threshold: f64) -> Option<f64> {
    let warned = records.iter().find(|r| r.pred_rear.is_some_and(|p| p < threshold))?;
    let realised = records.iter().find(|r| r.c_rear == 0.0)?;
    Some(realised.t - warned.t)
}

/// First time the front prediction falls below `threshold`.
pub fn front_crossing_time(records: &[StepRecord], threshold: f64) -> Option<f64> {
    records
        .iter()
        .find(|r| r.pred_front.is_some_and(|p| p < threshold))
        .map(|r| r.t)
}

/// First time the front cumulant reads unsafe.
pub fn front_intrusion_time(records: &[StepRecord]) -> Option<f64> {
    records.iter().find(|r| r.c_front == 0.0).map(|r| r.t)
}

fn compute_metrics(
    spec: &ScenarioSpec,
    controller: ControllerKind,
    records: &[StepRecord],
    cfg: &SimConfig,
    collisions: (bool, bool),
    rear_queries_in_control: usize,
) -> Metrics {
    let last = records.last().expect("a run always logs its initial state");
    let min_front_gap = records.iter().filter_map(|r| r.gap_front).reduce(f64::min);
    let at_rest = last.v_ego <= REST_SPEED;
    let max_decel = records
        .windows(2)
        .map(|w| (w[0].v_ego - w[1].v_ego) / cfg.dt)
        .fold(0.0, f64::max);
    let violations = records
        .iter()
        .filter(|r| r.gap_front.is_some() && r.c_front == 0.0)
        .count();
    let sq_err: f64 = records.iter().map(|r| (r.v_ego - spec.v_target).powi(2)).sum();
    Metrics {
        scenario: spec.name.clone(),
        controller,
        steps: records.len() - 1,
        empty: records.len() == 1,
        collided: collisions.0 || collisions.1,
        front_collision: collisions.0,
        rear_collision: collisions.1,
        min_front_gap,
        final_speed: last.v_ego,
        at_rest,
        final_gap_at_rest: if at_rest { last.gap_front } else { None },
        max_decel,
        safety_violation_time: violations as f64 * cfg.dt,
        speed_rmse_to_target: (sq_err / records.len() as f64).sqrt(),
        rear_warning_lead_time: rear_warning_lead_time(records, 0.5),
        rear_queries_in_control,
        front_queries_per_step: None,
    }
}

/// Closed-loop rollout of `spec` under `controller`.
///
/// The run stops early on any collision. Predictions are logged for the
/// command applied at each step (the last command on the final record).
pub fn run_scenario(
    spec: &ScenarioSpec,
    controller: ControllerKind,
    models: ModelSet<'_>,
    controllers: &ControllersConfig,
    cfg: &SimConfig,
) -> Result<ScenarioResult> {
    cfg.validate()?;
    controllers.validate()?;
    models.validate(cfg)?;
    for &kind in controller.required_models() {
        if models.get(kind).is_none() {
            return Err(Error::ModelMismatch(format!(
                "controller `{}` needs a {kind} model",
                controller.name()
            )));
        }
    }
    let ctl = controllers.with_target(spec.v_target);
    let zone = &spec.zone;
    let mut world = reset_scenario(spec, cfg)?;
    let mut lead_driver = FollowerState::new(spec.lead_driver.clone(), cfg.dt);
    let mut rear_driver = FollowerState::new(spec.rear_driver.clone(), cfg.dt);
    let mut setpoint = spec.ego_speed;

    let rear_counter = models.rear.map(|m| CountingPredictor::new(m));
    let front_counter = models.front.map(|m| CountingPredictor::new(m));
    let mut rear_queries_in_control = 0;
    let mut front_queries: Option<[usize; 2]> = None;

    let n = spec.num_steps(cfg.dt);
    let mut records = Vec::with_capacity(n + 1);
    let mut collisions = (false, false);
    for k in 0..=n {
        let t = k as f64 * cfg.dt;
        let features = extract_features(&world, cfg);
        let done = k == n || collisions.0 || collisions.1;

        let action = if done {
            None
        } else {
            let before = rear_counter.as_ref().map_or(0, |c| c.count());
            let front_before = front_counter.as_ref().map_or(0, |c| c.count());
            let front = front_counter.as_ref().map(|c| c as &dyn Predictor);
            let a = match controller {
                ControllerKind::Fuzzy => fuzzy_act(
                    &ctl.fuzzy,
                    front.expect("checked above"),
                    models.speed.expect("checked above"),
                    &features,
                ),
                ControllerKind::RuleWithSpeed => rule_act_with_speed(
                    &ctl.rule_with_speed,
                    front.expect("checked above"),
                    models.speed.expect("checked above"),
                    &features,
                    Action::clamped(world.last_action),
                ),
                ControllerKind::RuleWithoutSpeed => {
                    setpoint = rule_act_without_speed(
                        &ctl.rule_without_speed,
                        front.expect("checked above"),
                        &features,
                        setpoint,
                    );
                    track_setpoint(setpoint, world.ego.speed, ctl.setpoint_gain)
                }
                ControllerKind::Baseline => baseline_act(&ctl.baseline, &world),
            };
            rear_queries_in_control += rear_counter.as_ref().map_or(0, |c| c.count()) - before;
            if let Some(c) = &front_counter {
                let q = c.count() - front_before;
                front_queries = Some(front_queries.map_or([q, q], |[lo, hi]| [lo.min(q), hi.max(q)]));
            }
            Some(a)
        };

        let logged_action = action.map_or(world.last_action, Action::value);
        let predict = |m: Option<&dyn Predictor>| m.map(|m| m.predict(&features, logged_action));
        records.push(StepRecord {
            t,
            x_ego: world.ego.position,
            v_ego: world.ego.speed,
            x_lead: world.lead.map(|v| v.position),
            v_lead: world.lead.map(|v| v.speed),
            x_rear: world.rear.map(|v| v.position),
            v_rear: world.rear.map(|v| v.speed),
            action: action.map(Action::value),
            c_front: raw_cumulant(CumulantKind::FrontSafety, &world, zone),
            c_rear: raw_cumulant(CumulantKind::RearSafety, &world, zone),
            pred_front: predict(models.front.map(|m| m as &dyn Predictor)),
            pred_rear: predict(rear_counter.as_ref().map(|c| c as &dyn Predictor)),
            pred_speed: predict(models.speed.map(|m| m as &dyn Predictor)),
            gap_front: world.front_gap(),
            gap_rear: world.rear_gap(),
            h_front: headway(world.ego.speed, zone)?,
            h_rear: world.rear.map(|v| headway(v.speed, zone)).transpose()?,
        });
        let Some(action) = action else { break };

        let lead_accel = match world.lead {
            Some(lead) => lead_driver.accel(t, f64::INFINITY, lead.speed, lead.speed),
            None => 0.0,
        };
        let rear_accel = match (world.rear, world.rear_gap()) {
            (Some(rear), Some(gap)) => rear_driver.accel(t, gap, rear.speed, world.ego.speed),
            _ => 0.0,
        };
        let outcome = step(&world, action, lead_accel, rear_accel, cfg)?;
        collisions = (outcome.front_collision, outcome.rear_collision);
        world = outcome.next_state;
    }

    let mut metrics = compute_metrics(spec, controller, &records, cfg, collisions, rear_queries_in_control);
    metrics.front_queries_per_step = front_queries;
    Ok(ScenarioResult { records, metrics })
}

/// Predictions paired with Monte-Carlo returns, in normalised units.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnScore {
    /// `(prediction, mean return)` per evaluated point.
    pub points: Vec<(f64, f64)>,
    /// Every individual rollout return, for range checks.
    pub returns: Vec<f64>,
}

impl ReturnScore {
    pub fn mse(&self) -> f64 {
        let n = self.points.len().max(1) as f64;
        self.points.iter().map(|(p, g)| (p - g).powi(2)).sum::<f64>() / n
    }

    pub fn max_abs_error(&self) -> f64 {
        self.points.iter().map(|(p, g)| (p - g).abs()).fold(0.0, f64::max)
    }
}

/// Scores `model` against returns of its own target policy.
///
/// States come from fresh behavior-policy episodes seeded with `seed`, one
/// every `stride` steps. At each, the model is queried for the action about
/// to be taken, and `rollouts` target-policy continuations (each with its
/// own traffic randomness) are averaged into the reference return.
pub fn score_against_returns(
    model: &GvfModel,
    cfg: &SimConfig,
    pool: &TrainingPool,
    n_points: usize,
    rollouts: usize,
    stride: usize,
    seed: u64,
) -> Result<ReturnScore> {
    let kind = model.kind();
    let q = &model.question;
    let mut env = TrafficEnv::new(kind, q.gamma, cfg, &model.zone, &pool.for_question(kind), 600, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let behavior = BehaviorPolicy {
        sigma: q.sigma,
        reset_probability: 0.01,
    };
    let target = TargetPolicy { sigma: q.sigma };
    let max_steps = rollout_budget(q.gamma);

    let mut points = Vec::with_capacity(n_points);
    let mut returns = Vec::with_capacity(n_points * rollouts);
    let mut action = sample_behavior_action(&behavior, Action::default(), &mut rng);
    let mut k = 0usize;
    while points.len() < n_points {
        if k % stride.max(1) == 0 {
            let pred = model.predict(&env.features(), action.value()) / model.output_scale;
            let mut total = 0.0;
            for _ in 0..rollouts.max(1) {
                let mut branch = env.clone();
                branch.reseed(rng.random());
                let r = target_rollout(&branch, action, &target, model.output_scale, MC_RESIDUAL, max_steps, &mut rng)?;
                let g = mc_return(&r)?;
                returns.push(g);
                total += g;
            }
            points.push((pred, total / rollouts.max(1) as f64));
        }
        k += 1;
        let s = env.step(action)?;
        if s.terminal || s.truncated {
            env.reset();
            action = sample_behavior_action(&behavior, Action::default(), &mut rng);
        } else {
            action = sample_behavior_action(&behavior, action, &mut rng);
        }
    }
    Ok(ReturnScore { points, returns })
}

/// Steps until `gamma^k` falls below [`MC_RESIDUAL`], with margin.
fn rollout_budget(gamma: f64) -> usize {
    if gamma <= 0.0 {
        return 2;
    }
    (MC_RESIDUAL.ln() / gamma.ln()).ceil() as usize + 2
}

/// One point of a model's prediction surface under steady conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    /// Gap to the vehicle the question concerns; empty for speed.
    pub gap: Option<f64>,
    pub speed: f64,
    pub action: f64,
    pub prediction: f64,
}

/// Evaluates `model` over a grid of gaps, ego speeds and actions.
///
/// The other vehicle (ahead for front safety, behind for rear safety) moves
/// at the ego's speed, so the gap history is flat.
pub fn prediction_grid(
    model: &GvfModel,
    cfg: &SimConfig,
    gaps: &[f64],
    speeds: &[f64],
    actions: &[f64],
) -> Result<Vec<GridPoint>> {
    use crate::sim::{VehicleState, WorldState};
    let kind = model.kind();
    let gaps: Vec<Option<f64>> = match kind {
        CumulantKind::Speed => vec![None],
        _ => gaps.iter().copied().map(Some).collect(),
    };
    let mut out = Vec::with_capacity(gaps.len() * speeds.len() * actions.len());
    for &gap in &gaps {
        for &speed in speeds {
            let ego = VehicleState::new(0.0, speed, cfg.ego_length);
            let other = |g: f64, behind: bool| {
                if behind {
                    VehicleState::new(-cfg.ego_length - g, speed, cfg.rear_length)
                } else {
                    VehicleState::new(g + cfg.lead_length, speed, cfg.lead_length)
                }
            };
            let (lead, rear) = match (kind, gap) {
                (CumulantKind::FrontSafety, Some(g)) => (Some(other(g, false)), None),
                (CumulantKind::RearSafety, Some(g)) => (None, Some(other(g, true))),
                _ => (None, None),
            };
            for &action in actions {
                let mut world = WorldState::new(ego, lead, rear, &cfg.features);
                world.last_action = action;
                let features = extract_features(&world, cfg);
                let prediction = model.try_predict(&features, Action::new(action)?)?;
                out.push(GridPoint {
                    gap,
                    speed,
                    action,
                    prediction,
                });
            }
        }
    }
    Ok(out)
}

pub fn write_grid_csv<W: Write>(points: &[GridPoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingRow {
    pub gamma: f64,
    /// First time the front prediction drops below 0.5.
    pub crossing_time: Option<f64>,
    /// First time the front cumulant reads unsafe.
    pub intrusion_time: Option<f64>,
    /// `intrusion_time - crossing_time`.
    pub lead_time: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct HorizonSweep {
    pub results: Vec<(f64, ScenarioResult)>,
    pub table: Vec<CrossingRow>,
}

impl HorizonSweep {
    /// Crossing times are non-increasing as γ grows (rows sorted by γ).
    pub fn ordering_holds(&self) -> bool {
        let mut rows: Vec<&CrossingRow> = self.table.iter().collect();
        rows.sort_by(|a, b| a.gamma.total_cmp(&b.gamma));
        rows.windows(2).all(|w| match (w[0].crossing_time, w[1].crossing_time) {
            (Some(a), Some(b)) => b <= a,
            (None, _) => true,
            (Some(_), None) => false,
        })
    }

    pub fn write_table<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.table {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs `spec` once per γ with the given front model logged passively,
/// under `controller` (which must not need models beyond that front model
/// and `speed`).
pub fn horizon_sweep(
    spec: &ScenarioSpec,
    gammas: &[f64],
    front_models: &[&GvfModel],
    speed: Option<&GvfModel>,
    controller: ControllerKind,
    controllers: &ControllersConfig,
    cfg: &SimConfig,
) -> Result<HorizonSweep> {
    let mut results = Vec::with_capacity(gammas.len());
    let mut table = Vec::with_capacity(gammas.len());
    for &gamma in gammas {
        let model = front_models
            .iter()
            .find(|m| (m.question.gamma - gamma).abs() < 1e-9)
            .ok_or_else(|| Error::ModelMismatch(format!("no front-safety model for gamma {gamma}")))?;
        let models = ModelSet {
            front: Some(model),
            rear: None,
            speed,
        };
        let result = run_scenario(spec, controller, models, controllers, cfg)?;
        let crossing_time = front_crossing_time(&result.records, 0.5);
        let intrusion_time = front_intrusion_time(&result.records);
        table.push(CrossingRow {
            gamma,
            crossing_time,
            intrusion_time,
            lead_time: crossing_time.zip(intrusion_time).map(|(c, i)| i - c),
        });
        results.push((gamma, result));
    }
    Ok(HorizonSweep { results, table })
}
