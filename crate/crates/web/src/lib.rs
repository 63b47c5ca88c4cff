//! WebAssembly bindings for the browser demo.
//!
//! Every export takes plain strings and numbers and returns a JSON string,
//! so the page needs no bundler and the same functions run natively in tests.
//! Errors come back as the message string (a rejected promise-free `throw`).

use gem_core::baselines::youden_threshold;
use gem_core::gmm::{
    classify_distance, density, id_intervals, nearest_component, BicSweep, FitConfig, GmmModel,
};
use gem_core::metrics::{fpr95, roc_curve, scored};
use gem_core::Class;
use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Largest sample the page will fit; keeps the tab responsive.
pub const MAX_POINTS: usize = 20_000;
const CURVE_POINTS: usize = 200;

/// Numbers separated by whitespace, commas or semicolons.
pub fn parse_numbers(text: &str) -> Result<Vec<f64>, String> {
    let values = text
        .split(|c: char| c.is_whitespace() || c == ',' || c == ';')
        .filter(|t| !t.is_empty())
        .enumerate()
        .map(|(i, t)| match t.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(format!("value {} ({t:?}) is not a finite number", i + 1)),
        })
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err("no numbers given".into());
    }
    if values.len() > MAX_POINTS {
        return Err(format!("{} values; the demo accepts at most {MAX_POINTS}", values.len()));
    }
    Ok(values)
}

#[derive(Serialize)]
struct SweepRow {
    m: usize,
    bic: f64,
    log_likelihood: f64,
}

/// Fits mixtures of 1..=`max_components` to the distances and keeps the BIC minimiser.
///
/// Returns `{model, sweep, curve}`; `curve` samples the fitted density over the
/// data range for plotting.
#[wasm_bindgen]
pub fn fit_mixture(distances: &str, max_components: usize, seed: u64) -> Result<String, String> {
    let d = parse_numbers(distances)?;
    let cfg = FitConfig {
        max_components,
        seed,
        ..FitConfig::default()
    };
    let sweep = BicSweep::run(&d, &cfg).map_err(|e| e.to_string())?;
    let model = sweep.best();
    let rows: Vec<SweepRow> = sweep
        .models
        .iter()
        .map(|m| SweepRow {
            m: m.n_components(),
            bic: m.bic,
            log_likelihood: m.log_likelihood,
        })
        .collect();

    let (lo, hi) = d.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
        (lo.min(x), hi.max(x))
    });
    let pad = 0.1 * (hi - lo).max(1e-9);
    let (lo, hi) = (lo - pad, hi + pad);
    let curve: Vec<[f64; 2]> = (0..CURVE_POINTS)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / (CURVE_POINTS - 1) as f64;
            [x, density(x, model)]
        })
        .collect();

    Ok(json!({ "model": model, "sweep": rows, "curve": curve }).to_string())
}

/// Classifies distances against a fitted model (as returned in `fit_mixture`'s
/// `model` field) with intervals of `n_sigma` component deviations.
#[wasm_bindgen]
pub fn classify(model: &str, distances: &str, n_sigma: f64) -> Result<String, String> {
    let model: GmmModel = serde_json::from_str(model).map_err(|e| format!("model: {e}"))?;
    model.validate().map_err(|e| e.to_string())?;
    let intervals = id_intervals(&model, n_sigma).map_err(|e| e.to_string())?;
    let d = parse_numbers(distances)?;
    let verdicts: Vec<_> = d
        .iter()
        .map(|&x| {
            let (component, z) = nearest_component(x, &model);
            json!({
                "distance": x,
                "z": z,
                "component": component,
                "is_ood": classify_distance(x, &intervals) == Class::Ood,
            })
        })
        .collect();
    let ood = verdicts.iter().filter(|v| v["is_ood"] == true).count();
    Ok(json!({
        "intervals": intervals.intervals,
        "verdicts": verdicts,
        "ood_count": ood,
        "id_count": d.len() - ood,
    })
    .to_string())
}

/// ROC curve, AUROC, FPR95 and the Youden threshold for ID vs OOD scores
/// (higher score = more OOD). Infinite sentinel thresholds serialise as null.
#[wasm_bindgen]
pub fn roc(id_scores: &str, ood_scores: &str) -> Result<String, String> {
    let samples = scored(&parse_numbers(id_scores)?, &parse_numbers(ood_scores)?);
    let curve = roc_curve(&samples).map_err(|e| e.to_string())?;
    let youden = youden_threshold(&samples).map_err(|e| e.to_string())?;
    let fpr95 = fpr95(&samples).map_err(|e| e.to_string())?;
    Ok(json!({
        "points": curve.points,
        "auroc": curve.area(),
        "fpr95": fpr95,
        "youden": youden,
    })
    .to_string())
}
