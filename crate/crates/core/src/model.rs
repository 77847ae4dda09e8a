//! Trained GVF: network plus the predictive question it answers, and its
//! on-disk JSON document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::approximator::{DenseNet, OutputActivation};
use crate::cumulants::{CumulantKind, SafetyZoneParams};
use crate::error::{Error, Result};
use crate::sim::{observation_width, Action, FeatureScaling, FeatureVector};

pub const MODEL_FORMAT: &str = "gvf-model";
pub const MODEL_VERSION: u32 = 1;

/// The (cumulant, continuation, target policy) triple a model answers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Question {
    pub cumulant: CumulantKind,
    pub gamma: f64,
    /// Standard deviation of the target policy's action random walk.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GvfModel {
    pub net: DenseNet,
    pub question: Question,
    pub feature_scaling: FeatureScaling,
    pub zone: SafetyZoneParams,
    /// Network output is multiplied by this to get cumulant units.
    pub output_scale: f64,
}

/// Anything that can answer "what happens if I take `action` now and keep
/// doing roughly that".
pub trait Predictor {
    fn kind(&self) -> CumulantKind;
    fn predict(&self, features: &FeatureVector, action: f64) -> f64;
}

impl GvfModel {
    pub fn input_width(kind: CumulantKind) -> usize {
        observation_width(kind) + 1
    }

    pub fn input(&self, features: &FeatureVector, action: f64) -> Vec<f64> {
        let mut x = features.observation(self.question.cumulant);
        x.push(action);
        x
    }

    pub fn try_predict(&self, features: &FeatureVector, action: Action) -> Result<f64> {
        let q = self.net.forward(&self.input(features, action.value()))?;
        Ok(q * self.output_scale)
    }

    pub fn kind(&self) -> CumulantKind {
        self.question.cumulant
    }

    pub fn check_scaling(&self, scaling: &FeatureScaling) -> Result<()> {
        if &self.feature_scaling != scaling {
            return Err(Error::ModelMismatch(format!(
                "{} model was trained with feature scaling {:?}, run uses {:?}",
                self.question.cumulant, self.feature_scaling, scaling
            )));
        }
        Ok(())
    }

    pub fn expect_kind(&self, kind: CumulantKind) -> Result<()> {
        if self.question.cumulant != kind {
            return Err(Error::ModelMismatch(format!(
                "expected a {kind} model, got a {} model",
                self.question.cumulant
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDocument::from_model(self);
        Ok(serde_json::to_string_pretty(&doc)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::ModelFormat(e.to_string()))?;
        match value.get("format").and_then(|f| f.as_str()) {
            Some(MODEL_FORMAT) => {}
            other => {
                return Err(Error::ModelFormat(format!(
                    "bad magic header {other:?}, expected {MODEL_FORMAT:?}"
                )))
            }
        }
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::ModelFormat("missing version".into()))?;
        if version != u64::from(MODEL_VERSION) {
            return Err(Error::ModelVersion {
                found: version as u32,
                expected: MODEL_VERSION,
            });
        }
        let doc: ModelDocument =
            serde_json::from_value(value).map_err(|e| Error::ModelFormat(e.to_string()))?;
        doc.into_model()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl Predictor for GvfModel {
    fn kind(&self) -> CumulantKind {
        self.question.cumulant
    }

    /// Panics on a dimension mismatch, which `GvfModel` construction rules out.
    fn predict(&self, features: &FeatureVector, action: f64) -> f64 {
        self.try_predict(features, Action::clamped(action))
            .expect("model input width is fixed by its question")
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    format: String,
    version: u32,
    question: Question,
    feature_scaling: FeatureScaling,
    zone: SafetyZoneParams,
    output_scale: f64,
    network: NetworkDocument,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDocument {
    layer_sizes: Vec<usize>,
    output_activation: OutputActivation,
    hidden_activation: String,
    layers: Vec<LayerDocument>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDocument {
    /// Row-major, one row per output unit.
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl ModelDocument {
    fn from_model(m: &GvfModel) -> Self {
        let net = &m.net;
        let layers = (0..net.num_layers())
            .map(|l| {
                let (start, end) = net.layer_range(l);
                let n_w = net.layer_sizes()[l] * net.layer_sizes()[l + 1];
                LayerDocument {
                    weights: net.params()[start..start + n_w].to_vec(),
                    biases: net.params()[start + n_w..end].to_vec(),
                }
            })
            .collect();
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            question: m.question,
            feature_scaling: m.feature_scaling,
            zone: m.zone,
            output_scale: m.output_scale,
            network: NetworkDocument {
                layer_sizes: net.layer_sizes().to_vec(),
                output_activation: net.output_activation(),
                hidden_activation: "tanh".into(),
                layers,
            },
        }
    }

    fn into_model(self) -> Result<GvfModel> {
        let n = self.network;
        if n.hidden_activation != "tanh" {
            return Err(Error::ModelFormat(format!(
                "unsupported hidden activation {:?}",
                n.hidden_activation
            )));
        }
        let expected_input = GvfModel::input_width(self.question.cumulant);
        if n.layer_sizes.first() != Some(&expected_input) {
            return Err(Error::ModelFormat(format!(
                "{} model must take {expected_input} inputs, document declares {:?}",
                self.question.cumulant,
                n.layer_sizes.first()
            )));
        }
        if n.layers.len() + 1 != n.layer_sizes.len() {
            return Err(Error::ModelFormat("layer count does not match layer_sizes".into()));
        }
        let mut params = Vec::new();
        for (l, layer) in n.layers.into_iter().enumerate() {
            let (i, o) = (n.layer_sizes[l], n.layer_sizes[l + 1]);
            if layer.weights.len() != i * o || layer.biases.len() != o {
                return Err(Error::ModelFormat(format!("layer {l} has the wrong shape")));
            }
            params.extend(layer.weights);
            params.extend(layer.biases);
        }
        let net = DenseNet::from_parts(&n.layer_sizes, n.output_activation, params)
            .map_err(|e| Error::ModelFormat(e.to_string()))?;
        if !(0.0..1.0).contains(&self.question.gamma) || !(self.question.sigma >= 0.0) {
            return Err(Error::ModelFormat("question gamma/sigma out of range".into()));
        }
        Ok(GvfModel {
            net,
            question: self.question,
            feature_scaling: self.feature_scaling,
            zone: self.zone,
            output_scale: self.output_scale,
        })
    }
}
