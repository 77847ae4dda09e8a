//! TD(0) learning of action-conditioned GVFs from an experience replay buffer.
//!
//! The agent behaves with a Wiener-process policy that occasionally jumps to
//! a uniformly random action, while the predictions are about a target policy
//! that keeps the last action up to Gaussian noise. Each environment step
//! stores `(s, a, c, γ, s', a')` and performs one minibatch update on the
//! squared TD error, with the bootstrap target held fixed.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::approximator::{apply_update, DenseNet, OptimizerKind, OptimizerState, OutputActivation, Workspace};
use crate::cumulants::scale_cumulant;
use crate::error::{Error, Result};
use crate::sim::Action;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetPolicy {
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BehaviorPolicy {
    pub sigma: f64,
    pub reset_probability: f64,
}

/// `clamp(last + N(0, σ²))`.
pub fn sample_target_action<R: Rng + ?Sized>(policy: &TargetPolicy, last_action: Action, rng: &mut R) -> Action {
    let z: f64 = rng.sample(StandardNormal);
    Action::clamped(last_action.value() + policy.sigma * z)
}

/// Wiener step from the last action, or a uniform jump with `reset_probability`.
pub fn sample_behavior_action<R: Rng + ?Sized>(
    policy: &BehaviorPolicy,
    last_action: Action,
    rng: &mut R,
) -> Action {
    if policy.reset_probability > 0.0 && rng.random::<f64>() < policy.reset_probability {
        return Action::clamped(rng.random_range(Action::MIN..=Action::MAX));
    }
    let target = TargetPolicy { sigma: policy.sigma };
    sample_target_action(&target, last_action, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: f64,
    /// Scaled cumulant.
    pub c: f64,
    pub gamma: f64,
    pub s_next: Vec<f64>,
    pub a_next: f64,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    records: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidParameter("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            records: VecDeque::with_capacity(capacity.min(1 << 20)),
        })
    }

    pub fn push(&mut self, t: Transition) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.records.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.records.iter()
    }

    /// Uniform index with replacement.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<usize> {
        if self.records.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        Ok(rng.random_range(0..self.records.len()))
    }
}

fn fill_input(input: &mut Vec<f64>, state: &[f64], action: f64) {
    input.clear();
    input.extend_from_slice(state);
    input.push(action);
}

/// `c + γ q(s', a')`; the bootstrap is a plain forward pass, never differentiated.
pub fn td_target(transition: &Transition, net: &DenseNet) -> Result<f64> {
    if transition.gamma == 0.0 {
        return Ok(transition.c);
    }
    let mut input = Vec::with_capacity(transition.s_next.len() + 1);
    fill_input(&mut input, &transition.s_next, transition.a_next);
    Ok(transition.c + transition.gamma * net.forward(&input)?)
}

/// Network, optimizer and the scratch space one training step needs.
#[derive(Debug, Clone)]
pub struct TdLearner {
    pub net: DenseNet,
    pub opt: OptimizerState,
    ws: Workspace,
    grad: Vec<f64>,
    input: Vec<f64>,
    batch: Vec<(usize, f64)>,
}

impl TdLearner {
    pub fn new(net: DenseNet, opt: OptimizerState) -> Self {
        let ws = net.workspace();
        let grad = vec![0.0; net.num_params()];
        Self {
            net,
            opt,
            ws,
            grad,
            input: Vec::new(),
            batch: Vec::new(),
        }
    }

    /// One minibatch update; returns the mean squared TD error before the update.
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        buffer: &ReplayBuffer,
        minibatch: usize,
        rng: &mut R,
    ) -> Result<f64> {
        if minibatch == 0 {
            return Err(Error::InvalidParameter("minibatch size must be >= 1".into()));
        }
        // Targets for the whole batch first, all with the pre-update parameters.
        self.batch.clear();
        for _ in 0..minibatch {
            let i = buffer.sample_index(rng)?;
            let t = &buffer.records[i];
            let y = if t.gamma == 0.0 {
                t.c
            } else {
                fill_input(&mut self.input, &t.s_next, t.a_next);
                t.c + t.gamma * self.net.forward_with(&self.input, &mut self.ws)?
            };
            self.batch.push((i, y));
        }

        self.grad.iter_mut().for_each(|g| *g = 0.0);
        let inv_m = 1.0 / minibatch as f64;
        let mut loss = 0.0;
        for &(i, y) in &self.batch {
            let t = &buffer.records[i];
            fill_input(&mut self.input, &t.s, t.a);
            let q = self.net.forward_with(&self.input, &mut self.ws)?;
            let delta = y - q;
            loss += delta * delta;
            if delta != 0.0 {
                self.net.backprop(q, delta * inv_m, &mut self.grad, &mut self.ws)?;
            }
        }
        let loss = loss * inv_m;
        if !loss.is_finite() {
            return Ok(loss);
        }
        apply_update(&mut self.net, &mut self.opt, &self.grad, 1.0)?;
        Ok(loss)
    }
}

/// Free-function form of [`TdLearner::train_step`].
pub fn train_step<R: Rng + ?Sized>(
    net: &mut DenseNet,
    opt: &mut OptimizerState,
    buffer: &ReplayBuffer,
    minibatch: usize,
    rng: &mut R,
) -> Result<f64> {
    let mut learner = TdLearner::new(net.clone(), opt.clone());
    let loss = learner.train_step(buffer, minibatch, rng)?;
    *net = learner.net;
    *opt = learner.opt;
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    pub gamma: f64,
    /// Target-policy standard deviation; the behavior policy uses the same σ.
    pub sigma: f64,
    pub reset_probability: f64,
    pub replay_capacity: usize,
    pub minibatch: usize,
    pub steps: usize,
    pub hidden_layers: Vec<usize>,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Store the action actually taken next as `a'` instead of a fresh target sample.
    pub on_policy_next_action: bool,
    /// Episodes are truncated (not terminated) after this many steps.
    pub max_episode_steps: usize,
    pub seed: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            sigma: 0.05,
            reset_probability: 0.01,
            replay_capacity: 100_000,
            minibatch: 64,
            steps: 500_000,
            hidden_layers: vec![64, 64],
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            on_policy_next_action: false,
            max_episode_steps: 600,
            seed: 0,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidParameter(format!("learner.gamma {} outside [0, 1)", self.gamma)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter("learner.sigma must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.reset_probability) {
            return Err(Error::InvalidParameter("learner.reset_probability outside [0, 1]".into()));
        }
        if self.minibatch == 0 || self.replay_capacity == 0 {
            return Err(Error::InvalidParameter("learner.minibatch and replay_capacity must be >= 1".into()));
        }
        if self.hidden_layers.iter().any(|&h| h == 0) {
            return Err(Error::InvalidParameter("learner.hidden_layers entries must be >= 1".into()));
        }
        if self.max_episode_steps == 0 {
            return Err(Error::InvalidParameter("learner.max_episode_steps must be >= 1".into()));
        }
        Ok(())
    }

    pub fn target_policy(&self) -> TargetPolicy {
        TargetPolicy { sigma: self.sigma }
    }

    pub fn behavior_policy(&self) -> BehaviorPolicy {
        BehaviorPolicy {
            sigma: self.sigma,
            reset_probability: self.reset_probability,
        }
    }

    fn optimizer(&self, net: &DenseNet) -> Result<OptimizerState> {
        OptimizerState::new(
            self.optimizer,
            net,
            self.learning_rate,
            self.beta1,
            self.beta2,
            self.epsilon,
        )
    }
}

/// What the environment reports after executing one action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvStep {
    /// Unscaled cumulant observed on arrival in the next state.
    pub cumulant: f64,
    pub continuation: f64,
    /// The episode ended in a terminal event (continuation forced to zero).
    pub terminal: bool,
    /// The episode was cut short without terminating; bootstrapping still applies.
    pub truncated: bool,
}

/// An environment a GVF can be trained in.
pub trait PredictionEnv {
    /// Observation of the current state, without the action.
    fn observation(&self) -> Vec<f64>;
    fn reset(&mut self);
    fn step(&mut self, action: Action) -> Result<EnvStep>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub td_loss: f64,
    pub cumulant: f64,
    pub gamma: f64,
    pub episode_id: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
}

impl TrainingLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.rows.last().map(|r| r.td_loss)
    }

    /// Mean TD loss over the last `n` rows.
    pub fn recent_loss(&self, n: usize) -> Option<f64> {
        let tail = &self.rows[self.rows.len().saturating_sub(n)..];
        (!tail.is_empty()).then(|| tail.iter().map(|r| r.td_loss).sum::<f64>() / tail.len() as f64)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row)?;
        }
        if self.rows.is_empty() {
            w.write_record(["step", "td_loss", "cumulant", "gamma", "episode_id"])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(file)
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let rows = r.deserialize().collect::<std::result::Result<Vec<LogRow>, _>>()?;
        Ok(Self { rows })
    }
}

/// Network shape and output head for a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct NetSpec {
    pub input_width: usize,
    pub output: OutputActivation,
    /// Raw cumulants are divided by this before learning.
    pub cumulant_scale: f64,
}

/// Runs the GVF training loop in `env` for `settings.steps` steps.
pub fn train_network<E: PredictionEnv>(
    env: &mut E,
    settings: &LearnerConfig,
    spec: &NetSpec,
) -> Result<(DenseNet, TrainingLog)> {
    settings.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut sizes = vec![spec.input_width];
    sizes.extend(&settings.hidden_layers);
    sizes.push(1);
    let net = DenseNet::random(&sizes, spec.output, &mut rng)?;
    let opt = settings.optimizer(&net)?;
    train_from(env, settings, spec, TdLearner::new(net, opt), &mut rng)
}

/// Training loop starting from an existing learner.
pub fn train_from<E: PredictionEnv, R: Rng>(
    env: &mut E,
    settings: &LearnerConfig,
    spec: &NetSpec,
    mut learner: TdLearner,
    rng: &mut R,
) -> Result<(DenseNet, TrainingLog)> {
    let target = settings.target_policy();
    let behavior = settings.behavior_policy();
    let mut buffer = ReplayBuffer::new(settings.replay_capacity)?;
    let mut log = TrainingLog::default();
    log.rows.reserve(settings.steps);

    let mut episode = 0u64;
    env.reset();
    let mut s = env.observation();
    let mut a = sample_behavior_action(&behavior, Action::default(), rng);
    for t in 0..settings.steps {
        let out = env.step(a)?;
        let s_next = env.observation();
        let c = scale_cumulant(out.cumulant, out.continuation) / spec.cumulant_scale;
        let a_follow = sample_behavior_action(&behavior, a, rng);
        let a_prime = if settings.on_policy_next_action {
            a_follow
        } else {
            sample_target_action(&target, a, rng)
        };
        buffer.push(Transition {
            s: std::mem::take(&mut s),
            a: a.value(),
            c,
            gamma: out.continuation,
            s_next: s_next.clone(),
            a_next: a_prime.value(),
        });
        let loss = learner.train_step(&buffer, settings.minibatch, rng)?;
        if !loss.is_finite() || learner.net.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence { step: t, loss });
        }
        log.rows.push(LogRow {
            step: t,
            td_loss: loss,
            cumulant: c,
            gamma: out.continuation,
            episode_id: episode,
        });
        if out.terminal || out.truncated {
            env.reset();
            s = env.observation();
            a = sample_behavior_action(&behavior, Action::default(), rng);
            episode += 1;
        } else {
            s = s_next;
            a = a_follow;
        }
    }
    Ok((learner.net, log))
}
