//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line to
//! stderr (uncaptured) and then asserts.
//!
//! Models are trained once and shared; tests serialise on a lock so the
//! timed criteria measure an otherwise idle process.

use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use gvf_core::approximator::{DenseNet, OptimizerKind, OutputActivation};
use gvf_core::env::train_gvf;
use gvf_core::evaluation::{
    build_tabular_oracle, horizon_sweep, run_scenario, score_against_returns, ModelSet, ScenarioResult,
};
use gvf_core::gradcheck;
use gvf_core::learner::{train_network, EnvStep, LearnerConfig, NetSpec, PredictionEnv};
use gvf_core::scenario::ScenarioSpec;
use gvf_core::{Action, ControllerKind, CumulantKind, GvfModel, RunConfig};

const GAMMAS: [f64; 3] = [0.95, 0.975, 0.983];
const TRAIN_STEPS: usize = 100_000;
/// Rear safety depends on a hidden driver and needs a longer run to settle.
const REAR_TRAIN_STEPS: usize = 200_000;
fn seeds() -> std::ops::RangeInclusive<u64> {
    1..=10
}
const GVF_CONTROLLERS: [ControllerKind; 3] = [
    ControllerKind::Fuzzy,
    ControllerKind::RuleWithSpeed,
    ControllerKind::RuleWithoutSpeed,
];

fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(criterion: u32, name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "{verdict} criterion {criterion:>2} ({name}): {detail}");
}

fn config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.learner.steps = TRAIN_STEPS;
    cfg
}

fn train(cfg: &RunConfig, kind: CumulantKind, gamma: f64) -> GvfModel {
    let settings = cfg.learner_for(kind, gamma);
    train_gvf(kind, &cfg.sim, &cfg.zone, &settings, &cfg.pool_for(kind))
        .expect("training")
        .0
}

struct Trained {
    cfg: RunConfig,
    front: Vec<GvfModel>,
    rear: GvfModel,
    speed: GvfModel,
    front_095_training: Duration,
}

impl Trained {
    fn models(&self) -> ModelSet<'_> {
        ModelSet {
            front: Some(&self.front[0]),
            rear: Some(&self.rear),
            speed: Some(&self.speed),
        }
    }
}

fn trained() -> &'static Trained {
    static MODELS: OnceLock<Trained> = OnceLock::new();
    MODELS.get_or_init(|| {
        let cfg = config();
        let t0 = Instant::now();
        let first = train(&cfg, CumulantKind::FrontSafety, GAMMAS[0]);
        let front_095_training = t0.elapsed();
        let mut front = vec![first];
        front.extend(GAMMAS[1..].iter().map(|&g| train(&cfg, CumulantKind::FrontSafety, g)));
        let mut rear_cfg = cfg.clone();
        rear_cfg.learner.steps = REAR_TRAIN_STEPS;
        let rear = train(&rear_cfg, CumulantKind::RearSafety, cfg.learner.gamma);
        let speed = train(&cfg, CumulantKind::Speed, cfg.learner.gamma);
        Trained {
            cfg,
            front,
            rear,
            speed,
            front_095_training,
        }
    })
}

fn run(t: &Trained, scenario: &str, seed: u64, controller: ControllerKind) -> ScenarioResult {
    let spec = ScenarioSpec::preset(scenario).unwrap().jittered(seed);
    run_scenario(&spec, controller, t.models(), &t.cfg.controllers, &t.cfg.sim).unwrap()
}

#[test]
fn c01_gradient_correctness() {
    let _g = serial();
    let t0 = Instant::now();
    let r = gradcheck::run(100, 7, None).unwrap();
    let elapsed = t0.elapsed();
    let pass = r.trials == 100 && !r.vacuous() && r.max_rel_error < 1e-5 && elapsed < Duration::from_secs(5);
    report(
        1,
        "gradient check",
        pass,
        format!("100 nets, max rel err {:.2e} (< 1e-5), {:.2?} (< 5 s)", r.max_rel_error, elapsed),
    );
    assert!(pass);
}

/// Deterministic 5-state chain: state `i` moves to `i + 1`; leaving the last
/// state terminates. Actions are ignored.
struct Chain {
    state: usize,
    rewards: [f64; 5],
    gamma: f64,
}

impl PredictionEnv for Chain {
    fn observation(&self) -> Vec<f64> {
        let mut x = vec![0.0; 5];
        x[self.state] = 1.0;
        x
    }
    fn reset(&mut self) {
        self.state = 0;
    }
    fn step(&mut self, _action: Action) -> gvf_core::Result<EnvStep> {
        let c = self.rewards[self.state];
        let terminal = self.state == 4;
        self.state = (self.state + 1).min(4);
        Ok(EnvStep {
            cumulant: c,
            continuation: if terminal { 0.0 } else { self.gamma },
            terminal,
            truncated: false,
        })
    }
}

const CHAIN_REWARDS: [f64; 5] = [0.0, 1.0, 1.0, 0.0, 1.0];
const CHAIN_GAMMA: f64 = 0.9;
const CHAIN_UPDATES: usize = 200_000;

fn train_chain() -> DenseNet {
    let mut env = Chain {
        state: 0,
        rewards: CHAIN_REWARDS,
        gamma: CHAIN_GAMMA,
    };
    let settings = LearnerConfig {
        gamma: CHAIN_GAMMA,
        sigma: 0.0,
        reset_probability: 0.0,
        replay_capacity: 1_000,
        minibatch: 64,
        steps: CHAIN_UPDATES,
        hidden_layers: vec![],
        optimizer: OptimizerKind::Sgd,
        learning_rate: 0.05,
        seed: 11,
        ..LearnerConfig::default()
    };
    let spec = NetSpec {
        input_width: 6,
        output: OutputActivation::Identity,
        cumulant_scale: 1.0,
    };
    train_network(&mut env, &settings, &spec).unwrap().0
}

#[test]
fn c02_tabular_td_oracle() {
    let _g = serial();
    let t0 = Instant::now();
    let net = train_chain();
    let elapsed = t0.elapsed();
    // Transitions out of non-terminal states carry (1 - γ)-scaled cumulants;
    // the terminal one carries the raw cumulant.
    let scaled: Vec<f64> = CHAIN_REWARDS
        .iter()
        .enumerate()
        .map(|(i, r)| if i == 4 { *r } else { (1.0 - CHAIN_GAMMA) * r })
        .collect();
    let oracle = build_tabular_oracle(CHAIN_GAMMA, &scaled, true).unwrap();
    let mut max_err: f64 = 0.0;
    for (i, v) in oracle.iter().enumerate() {
        let mut x = vec![0.0; 6];
        x[i] = 1.0;
        max_err = max_err.max((net.forward(&x).unwrap() - v).abs());
    }
    let pass = max_err < 1e-3 && elapsed < Duration::from_secs(30);
    report(
        2,
        "tabular TD oracle",
        pass,
        format!("max abs err {max_err:.2e} (< 1e-3) after {CHAIN_UPDATES} updates, {elapsed:.2?} (< 30 s)"),
    );
    assert!(pass);
}

#[test]
fn c03_normalization_bound() {
    let _g = serial();
    let t = trained();
    let mut returns_ok = true;
    let mut preds_ok = true;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut plo, mut phi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut rollouts = 0;
    for model in t.front.iter().chain([&t.rear]) {
        let score = score_against_returns(model, &t.cfg.sim, &t.cfg.pool, 1_000, 1, 5, 2024).unwrap();
        rollouts += score.returns.len();
        for &g in &score.returns {
            returns_ok &= (0.0..=1.0).contains(&g);
            lo = lo.min(g);
            hi = hi.max(g);
        }
        for &(p, _) in &score.points {
            preds_ok &= p > 0.0 && p < 1.0;
            plo = plo.min(p);
            phi = phi.max(p);
        }
    }
    let pass = returns_ok && preds_ok;
    report(
        3,
        "normalization bound",
        pass,
        format!(
            "{rollouts} rollouts over γ {GAMMAS:?} + rear: returns in [{lo:.4}, {hi:.4}], predictions in [{plo:.2e}, 1 - {:.2e}]",
            1.0 - phi
        ),
    );
    assert!(pass);
}

#[test]
fn c04_prediction_quality() {
    let _g = serial();
    let t = trained();
    let t0 = Instant::now();
    let score = score_against_returns(&t.front[0], &t.cfg.sim, &t.cfg.pool, 1_000, 8, 7, 99).unwrap();
    let runtime = t.front_095_training + t0.elapsed();
    let mse = score.mse();
    let pass = mse < 0.02 && runtime <= Duration::from_secs(15 * 60);
    report(
        4,
        "prediction quality",
        pass,
        format!(
            "front γ=0.95 after {TRAIN_STEPS} steps: MSE {mse:.5} (< 0.02) on 1000 held-out points, train+score {runtime:.1?} (<= 15 min)"
        ),
    );
    assert!(pass);
}

#[test]
fn c05_horizon_ordering() {
    let _g = serial();
    let t = trained();
    let spec = ScenarioSpec::preset("emergency_stop").unwrap();
    let fronts: Vec<&GvfModel> = t.front.iter().collect();
    let sweep = horizon_sweep(
        &spec,
        &GAMMAS,
        &fronts,
        Some(&t.speed),
        ControllerKind::Baseline,
        &t.cfg.controllers,
        &t.cfg.sim,
    )
    .unwrap();
    let crossings: Vec<Option<f64>> = sweep.table.iter().map(|r| r.crossing_time).collect();
    let pass = sweep.ordering_holds() && crossings.iter().all(Option::is_some);
    report(
        5,
        "horizon ordering",
        pass,
        format!("0.5-crossing times for γ {GAMMAS:?}: {crossings:?} (non-increasing)"),
    );
    assert!(pass);
}

#[test]
fn c06_emergency_stop() {
    let _g = serial();
    let t = trained();
    let d_min = t.cfg.zone.d_min;
    let mut failures = Vec::new();
    let mut worst_gap = f64::INFINITY;
    for controller in GVF_CONTROLLERS {
        for seed in seeds() {
            let m = run(t, "emergency_stop", seed, controller).metrics;
            let gap = m.final_gap_at_rest.unwrap_or(f64::NEG_INFINITY);
            worst_gap = worst_gap.min(gap);
            if m.collided || !m.at_rest || gap < d_min {
                failures.push(format!("{}#{seed}", controller.name()));
            }
        }
    }
    let pass = failures.is_empty();
    report(
        6,
        "emergency stop",
        pass,
        format!(
            "3 controllers x 10 seeds: at rest, no collisions, smallest final gap {worst_gap:.2} m (>= {d_min} m); failures {failures:?}"
        ),
    );
    assert!(pass);
}

#[test]
fn c07_follow_and_stop() {
    let _g = serial();
    let t = trained();
    let limit = t.cfg.sim.a_max_brake;
    let mut failures = Vec::new();
    let mut worst_decel: f64 = 0.0;
    for controller in ControllerKind::ALL {
        for seed in seeds() {
            let m = run(t, "follow_and_stop", seed, controller).metrics;
            worst_decel = worst_decel.max(m.max_decel);
            // Speed differencing leaves ~1e-13 of rounding on a full-brake step.
            if m.collided || m.max_decel > limit + 1e-9 {
                failures.push(format!("{}#{seed}", controller.name()));
            }
        }
    }
    let pass = failures.is_empty();
    report(
        7,
        "follow and stop",
        pass,
        format!(
            "4 controllers x 10 seeds: no collisions, max decel {worst_decel:.2} m/s² (<= {limit}); failures {failures:?}"
        ),
    );
    assert!(pass);
}

#[test]
fn c08_query_budget() {
    let _g = serial();
    let t = trained();
    let mut ranges = Vec::new();
    for scenario in ["emergency_stop", "follow_and_stop", "free_drive"] {
        let m = run(t, scenario, 1, ControllerKind::Fuzzy).metrics;
        ranges.push(m.front_queries_per_step);
    }
    let pass = t.cfg.controllers.fuzzy.action_sweep.len() == 21 && ranges.iter().all(|r| *r == Some([21, 21]));
    report(
        8,
        "query budget",
        pass,
        format!("fuzzy front-safety queries per step (min, max) over 3 scenarios: {ranges:?} (exactly 21)"),
    );
    assert!(pass);
}

#[test]
fn c09_rear_warning() {
    let _g = serial();
    let t = trained();
    let mut leads = Vec::new();
    for controller in ControllerKind::ALL {
        for seed in seeds() {
            leads.push(run(t, "rear_approach", seed, controller).metrics.rear_warning_lead_time);
        }
    }
    let pass = leads.iter().all(|l| l.is_some_and(|l| l > 0.0));
    let min = leads.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let misses = leads.iter().filter(|l| !l.is_some_and(|l| l > 0.0)).count();
    report(
        9,
        "rear warning",
        pass,
        format!("40 runs, smallest lead time {min:.2} s (> 0), {misses} without positive lead"),
    );
    assert!(pass);
}

fn export(r: &ScenarioResult) -> (Vec<u8>, String) {
    let mut csv = Vec::new();
    r.write_csv(&mut csv).unwrap();
    (csv, r.metrics_json().unwrap())
}

#[test]
fn c10_determinism() {
    let _g = serial();
    let t = trained();
    let chain_same = serde_json::to_string(&train_chain()).unwrap() == serde_json::to_string(&train_chain()).unwrap();
    let again = train(&t.cfg, CumulantKind::FrontSafety, GAMMAS[0]);
    let model_same = again.to_json().unwrap() == t.front[0].to_json().unwrap();
    let exports_same = GVF_CONTROLLERS.iter().all(|&c| {
        seeds().all(|seed| export(&run(t, "emergency_stop", seed, c)) == export(&run(t, "emergency_stop", seed, c)))
    });
    let pass = chain_same && model_same && exports_same;
    report(
        10,
        "determinism",
        pass,
        format!(
            "chain model identical: {chain_same}, front γ=0.95 model file identical: {model_same}, emergency-stop exports identical: {exports_same}"
        ),
    );
    assert!(pass);
}

/// A zero-discount predictor only has to learn the immediate cumulant.
#[test]
fn myopic_gvf_learns_immediate_cumulant() {
    let _g = serial();
    let mut env = Chain {
        state: 0,
        rewards: CHAIN_REWARDS,
        gamma: 0.0,
    };
    let settings = LearnerConfig {
        gamma: 0.0,
        sigma: 0.0,
        reset_probability: 0.0,
        replay_capacity: 500,
        steps: 20_000,
        hidden_layers: vec![],
        optimizer: OptimizerKind::Sgd,
        learning_rate: 0.05,
        ..LearnerConfig::default()
    };
    let spec = NetSpec {
        input_width: 6,
        output: OutputActivation::Identity,
        cumulant_scale: 1.0,
    };
    let net = train_network(&mut env, &settings, &spec).unwrap().0;
    for (i, r) in CHAIN_REWARDS.iter().enumerate() {
        let mut x = vec![0.0; 6];
        x[i] = 1.0;
        assert!((net.forward(&x).unwrap() - r).abs() < 1e-3);
    }
}

/// Every safety prediction the controllers see during a run stays a probability.
#[test]
fn logged_predictions_stay_in_range() {
    let _g = serial();
    let t = trained();
    for scenario in ["emergency_stop", "follow_and_stop", "rear_approach"] {
        let r = run(t, scenario, 3, ControllerKind::Fuzzy);
        for rec in &r.records {
            for p in [rec.pred_front, rec.pred_rear].into_iter().flatten() {
                assert!(p > 0.0 && p < 1.0, "{scenario}: {p}");
            }
        }
        assert_eq!(r.metrics.rear_queries_in_control, 0);
    }
}
