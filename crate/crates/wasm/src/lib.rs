//! Browser bindings: boundary curves, the optimizer and the xi0 check.
//! Every export returns a JSON string.

use rasch_design::optimality::{boundary_curve, kw_certify, lemma1_check, pair_slack, theorem1_check, DEFAULT_KW_TOL};
use rasch_design::{optimize, xi0, ItemVector, OptimizeOptions, StandardizedParams};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct Curve {
    b: f64,
    v: Vec<f64>,
    u_min: Vec<f64>,
}

#[derive(Serialize)]
struct WeightRow {
    item: ItemVector,
    weight: f64,
    sensitivity: f64,
}

#[derive(Serialize)]
struct OptimizeView {
    converged: bool,
    iterations: usize,
    log_det: f64,
    max_sensitivity: f64,
    /// Every vertex, zero weights included.
    rows: Vec<WeightRow>,
    xi0_log_det: Option<f64>,
}

#[derive(Serialize)]
struct PairView {
    j: usize,
    k: usize,
    slack: f64,
}

#[derive(Serialize)]
struct CheckView {
    pairwise_hold: bool,
    pairs: Vec<PairView>,
    vertex_conditions_hold: bool,
    max_sensitivity: f64,
    worst_item: ItemVector,
    threshold: f64,
    optimal: bool,
}

fn json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

fn params(effects: Vec<f64>, b: f64) -> Result<StandardizedParams, String> {
    StandardizedParams::new(effects, b).map_err(|e| e.to_string())
}

/// `u_min(v)` curves for each `b` on `v = lo, lo + step, ..., hi`.
pub fn boundary_json(bs: &[f64], lo: f64, hi: f64, step: f64) -> Result<String, String> {
    if !(lo > 1.0 && hi >= lo && step > 0.0) {
        return Err(format!("need 1 < lo <= hi and step > 0, got {lo}:{hi} step {step}"));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize;
    let v: Vec<f64> = (0..=count).map(|i| lo + i as f64 * step).collect();
    let curves = bs
        .iter()
        .map(|&b| {
            let pts = boundary_curve(b, &v).map_err(|e| e.to_string())?;
            Ok(Curve { b, v: v.clone(), u_min: pts.iter().map(|p| p.u_min).collect() })
        })
        .collect::<Result<Vec<_>, String>>()?;
    json(&curves)
}

/// Optimal design for standardized effects and scale `b`.
pub fn optimize_json(effects: Vec<f64>, b: f64) -> Result<String, String> {
    let s = params(effects, b)?;
    let k = s.k();
    if k > 10 {
        return Err(format!("the demo handles up to 10 features, got {k}"));
    }
    let m = s.to_model().map_err(|e| e.to_string())?;
    let r = optimize(&m, &OptimizeOptions::default()).map_err(|e| e.to_string())?;
    let info = rasch_design::info_matrix(&r.design, &m).map_err(|e| e.to_string())?;
    let rows = ItemVector::all(k)
        .map_err(|e| e.to_string())?
        .map(|x| {
            let sensitivity = rasch_design::fisher::sensitivity_with(&x, &info, &m).map_err(|e| e.to_string())?;
            Ok(WeightRow { item: x, weight: r.design.weight_of(&x), sensitivity })
        })
        .collect::<Result<Vec<_>, String>>()?;
    let xi0_log_det = xi0(k).and_then(|d| rasch_design::info_matrix(&d, &m)).ok().and_then(|i| i.log_det());
    json(&OptimizeView {
        converged: r.converged,
        iterations: r.iterations,
        log_det: r.final_log_det,
        max_sensitivity: r.certification.max_sensitivity,
        rows,
        xi0_log_det,
    })
}

/// Pairwise and vertex conditions plus the equivalence-theorem check of
/// xi0.
pub fn check_json(effects: Vec<f64>, b: f64) -> Result<String, String> {
    let s = params(effects, b)?;
    let k = s.k();
    let t1 = theorem1_check(&s).map_err(|e| e.to_string())?;
    let l1 = lemma1_check(&s).map_err(|e| e.to_string())?;
    let m = s.to_model().map_err(|e| e.to_string())?;
    let cert = kw_certify(&xi0(k).map_err(|e| e.to_string())?, &m, DEFAULT_KW_TOL).map_err(|e| e.to_string())?;
    let pairs = (1..=k).flat_map(|j| (j + 1..=k).map(move |l| (j, l))).map(|(j, l)| PairView { j, k: l, slack: pair_slack(&s, j, l) }).collect();
    json(&CheckView {
        pairwise_hold: t1.holds,
        pairs,
        vertex_conditions_hold: l1.holds,
        max_sensitivity: cert.max_sensitivity,
        worst_item: cert.worst_item,
        threshold: cert.threshold,
        optimal: cert.optimal,
    })
}

#[wasm_bindgen(js_name = boundaryCurves)]
pub fn boundary_curves(bs: Vec<f64>, lo: f64, hi: f64, step: f64) -> Result<String, JsError> {
    boundary_json(&bs, lo, hi, step).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = optimizeDesign)]
pub fn optimize_design(effects: Vec<f64>, b: f64) -> Result<String, JsError> {
    optimize_json(effects, b).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = checkXi0)]
pub fn check_xi0(effects: Vec<f64>, b: f64) -> Result<String, JsError> {
    check_json(effects, b).map_err(|e| JsError::new(&e))
}
