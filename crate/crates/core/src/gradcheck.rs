//! Randomised comparison of analytic backprop against central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::approximator::{DenseNet, OutputActivation};
use crate::error::Result;

pub const TOLERANCE: f64 = 1e-5;
const STEP: f64 = 1e-5;
/// Denominator floor; below it the comparison is effectively absolute.
const FLOOR: f64 = 1e-6;

/// Test hook: perturbs the analytic gradient of one layer before comparison.
#[derive(Debug, Clone, Copy)]
pub struct Corruption {
    pub layer: usize,
    pub factor: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub trials: usize,
    pub max_rel_error: f64,
    /// Layer holding the parameter with the largest error.
    pub worst_layer: Option<usize>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }

    pub fn vacuous(&self) -> bool {
        self.trials == 0
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Largest relative error over all parameters of `net` at `input`, with the
/// flat index where it occurs.
pub fn check_net(net: &DenseNet, input: &[f64], corruption: Option<Corruption>) -> Result<(f64, usize)> {
    let mut analytic = net.backward(input)?;
    if let Some(c) = corruption {
        if c.layer < net.num_layers() {
            let (start, end) = net.layer_range(c.layer);
            for g in &mut analytic[start..end] {
                *g = *g * c.factor + 1e-3;
            }
        }
    }
    let mut probe = net.clone();
    let mut worst = (0.0, 0);
    for i in 0..net.num_params() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + STEP;
        let plus = probe.forward(input)?;
        probe.params_mut()[i] = orig - STEP;
        let minus = probe.forward(input)?;
        probe.params_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * STEP);
        let err = relative_error(analytic[i], numeric);
        if err > worst.0 {
            worst = (err, i);
        }
    }
    Ok(worst)
}

/// Checks `trials` random two-hidden-layer networks.
pub fn run(trials: usize, seed: u64, corruption: Option<Corruption>) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        trials,
        max_rel_error: 0.0,
        worst_layer: None,
    };
    for _ in 0..trials {
        let n_in = rng.random_range(2..=8);
        let sizes = [n_in, rng.random_range(3..=24), rng.random_range(3..=24), 1];
        let output = if rng.random_bool(0.5) {
            OutputActivation::Sigmoid
        } else {
            OutputActivation::Identity
        };
        let net = DenseNet::random(&sizes, output, &mut rng)?;
        let input: Vec<f64> = (0..n_in).map(|_| rng.random_range(-1.5..1.5)).collect();
        let (err, index) = check_net(&net, &input, corruption)?;
        if err >= report.max_rel_error {
            report.max_rel_error = err;
            report.worst_layer = Some(net.layer_of(index));
        }
    }
    Ok(report)
}
