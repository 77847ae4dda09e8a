//! Browser bindings for the demo page in `www/`.
//!
//! Each export is a thin wrapper over a plain function so the logic can be
//! tested natively.

use gvf_core::controllers::{centroid, ControllersConfig};
use gvf_core::cumulants::{front_safety_cumulant, headway};
use gvf_core::evaluation::{run_scenario, ModelSet};
use gvf_core::scenario::ScenarioSpec;
use gvf_core::{ControllerKind, Error, Result, SafetyZoneParams, SimConfig};
use serde_json::json;
use wasm_bindgen::prelude::*;

const KMH: f64 = 1.0 / 3.6;

/// Runs a preset scenario under the gap-control baseline (it needs no trained
/// models) and returns the trajectory columns plus the run metrics as JSON.
pub fn baseline_run(scenario: &str, seed: u32) -> Result<String> {
    let mut spec = ScenarioSpec::preset(scenario)?;
    if seed > 0 {
        spec = spec.jittered(seed as u64);
    }
    let r = run_scenario(
        &spec,
        ControllerKind::Baseline,
        ModelSet::default(),
        &ControllersConfig::default(),
        &SimConfig::default(),
    )?;
    let col = |f: fn(&gvf_core::evaluation::StepRecord) -> Option<f64>| r.records.iter().map(f).collect::<Vec<_>>();
    let doc = json!({
        "t": col(|s| Some(s.t)),
        "v_ego": col(|s| Some(s.v_ego)),
        "v_lead": col(|s| s.v_lead),
        "gap_front": col(|s| s.gap_front),
        "h_front": col(|s| Some(s.h_front)),
        "gap_rear": col(|s| s.gap_rear),
        "c_front": col(|s| Some(s.c_front)),
        "action": col(|s| s.action),
        "metrics": r.metrics,
    });
    Ok(doc.to_string())
}

/// Greediness-weighted centroid of a candidate set, or `None` when every
/// membership is zero.
pub fn fuzzy_centroid(actions: &[f64], memberships: &[f64], greediness: f64) -> Result<Option<f64>> {
    if actions.len() != memberships.len() || actions.is_empty() {
        return Err(Error::InvalidParameter(
            "actions and memberships must be non-empty and the same length".into(),
        ));
    }
    if !(greediness >= 1.0) {
        return Err(Error::InvalidParameter("greediness must be >= 1".into()));
    }
    if memberships.iter().any(|g| !(0.0..=1.0).contains(g)) {
        return Err(Error::InvalidParameter("memberships must lie in [0, 1]".into()));
    }
    let pairs: Vec<(f64, f64)> = actions.iter().copied().zip(memberships.iter().copied()).collect();
    Ok(centroid(&pairs, greediness))
}

/// Headway and the resulting front-safety cumulant for a speed and gap.
pub fn safety_zone(speed_kmh: f64, gap: f64, tau: f64, d_min: f64) -> Result<(f64, f64)> {
    let params = SafetyZoneParams {
        tau,
        d_min,
        ..SafetyZoneParams::highway()
    };
    params.validate()?;
    let v = speed_kmh * KMH;
    Ok((headway(v, &params)?, front_safety_cumulant(gap, v, &params)))
}

fn js_err(e: Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

#[wasm_bindgen(js_name = baselineRun)]
pub fn baseline_run_js(scenario: &str, seed: u32) -> std::result::Result<String, JsValue> {
    baseline_run(scenario, seed).map_err(js_err)
}

/// Returns `NaN` when no candidate has any membership (the controller would brake fully).
#[wasm_bindgen(js_name = fuzzyCentroid)]
pub fn fuzzy_centroid_js(actions: &[f64], memberships: &[f64], greediness: f64) -> std::result::Result<f64, JsValue> {
    fuzzy_centroid(actions, memberships, greediness)
        .map(|c| c.unwrap_or(f64::NAN))
        .map_err(js_err)
}

/// `[headway, cumulant]`.
#[wasm_bindgen(js_name = safetyZone)]
pub fn safety_zone_js(speed_kmh: f64, gap: f64, tau: f64, d_min: f64) -> std::result::Result<Vec<f64>, JsValue> {
    safety_zone(speed_kmh, gap, tau, d_min)
        .map(|(h, c)| vec![h, c])
        .map_err(js_err)
}
