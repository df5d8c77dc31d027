//! Browser demo: simulate and clean a CTG trace with its detected events,
//! track ARMA pole magnitudes across windows, and draw ROC curves.
//!
//! The plain functions return serializable structs so they can be tested
//! natively; the `#[wasm_bindgen]` wrappers hand JSON to the page.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use wasm_bindgen::prelude::*;

use ctg_core::arma::{arma_pipeline, ArmaConfig};
use ctg_core::events::{DecelClass, EventAnalysis, EventConfig};
use ctg_core::ingest::{synth_record, RegimeSwitch, SynthConfig};
use ctg_core::ml::{auc, mcc, roc_curve, Confusion};
use ctg_core::preprocess::{clean_fhr, clean_uc, PreprocessConfig};
use ctg_core::render::{roc_svg, scatter_svg, trace_svg, ScatterPoint};
use ctg_core::SAMPLE_RATE_HZ;

#[derive(Debug, Clone, Serialize)]
pub struct TraceDemo {
    pub svg: String,
    pub quality: f64,
    pub masked_outliers: usize,
    pub masked_spikes: usize,
    pub interpolated: usize,
    pub accels: usize,
    pub decels: usize,
    pub contractions: usize,
    pub early: usize,
    pub late: usize,
    pub unpaired: usize,
}

/// Simulates a trace with decelerations trailing each contraction, damages
/// `artifact_pct` percent of it with dropouts and half-rate spikes, then
/// cleans it and detects events.
pub fn trace_demo(seed: u64, duration_min: f64, decel_depth: f64, decel_lag_s: f64, artifact_pct: f64) -> Result<TraceDemo, String> {
    let cfg = SynthConfig {
        duration_s: duration_min * 60.0,
        decel_depth_bpm: decel_depth,
        decel_lag_s,
        alpha: vec![0.9, -0.1],
        seed,
        ..SynthConfig::default()
    };
    let rec = synth_record(&cfg).map_err(|e| e.to_string())?;
    let mut fhr = rec.fhr().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let target = (fhr.len() as f64 * artifact_pct.clamp(0.0, 50.0) / 100.0) as usize;
    let mut damaged = 0;
    while damaged < target && !fhr.is_empty() {
        let start = rng.random_range(0..fhr.len());
        let run = rng.random_range(4..40usize).min(fhr.len() - start);
        let spike = rng.random_bool(0.4);
        for v in &mut fhr[start..start + run] {
            *v = if spike { v.map(|x| x * 0.5) } else { None };
        }
        damaged += run;
    }
    let pcfg = PreprocessConfig::default();
    let (clean, report) = clean_fhr(&fhr, &pcfg).map_err(|e| e.to_string())?;
    let uc = clean_uc(rec.uc(), &pcfg).map_err(|e| e.to_string())?;
    let events = EventAnalysis::compute(&clean, &uc, &EventConfig::default()).ok();
    let count = |c: DecelClass| events.as_ref().map_or(0, |e| e.timings.iter().filter(|t| t.class == c).count());
    Ok(TraceDemo {
        svg: trace_svg(&format!("simulated trace, quality {:.2}", report.quality), &clean, &uc, events.as_ref()),
        quality: report.quality,
        masked_outliers: report.outliers,
        masked_spikes: report.spikes,
        interpolated: report.interpolated,
        accels: events.as_ref().map_or(0, |e| e.accels.len()),
        decels: events.as_ref().map_or(0, |e| e.decels.len()),
        contractions: events.as_ref().map_or(0, |e| e.contractions.len()),
        early: count(DecelClass::Early),
        late: count(DecelClass::Late),
        unpaired: count(DecelClass::Unpaired),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ArmaDemo {
    pub svg: String,
    /// Pole magnitudes per fitted window, descending.
    pub windows: Vec<Vec<f64>>,
    pub delta_r: Vec<f64>,
    pub skipped: usize,
}

/// Two-pole dynamics that switch to `after` half-way through an hour-long
/// trace; ARMA(2,1) fits per window recover the pole magnitudes.
pub fn arma_demo(seed: u64, before: [f64; 2], after: [f64; 2], window_s: f64, noise_sd: f64) -> Result<ArmaDemo, String> {
    let alpha = |p: [f64; 2]| vec![p[0] + p[1], -p[0] * p[1]];
    let duration_s = 3600.0;
    let cfg = SynthConfig {
        duration_s,
        alpha: alpha(before),
        regime_switch: Some(RegimeSwitch { at_s: duration_s / 2.0, alpha: alpha(after) }),
        noise_sd,
        seed,
        ..SynthConfig::default()
    };
    let rec = synth_record(&cfg).map_err(|e| e.to_string())?;
    let pcfg = PreprocessConfig::default();
    let (fhr, _) = clean_fhr(rec.fhr(), &pcfg).map_err(|e| e.to_string())?;
    let uc = clean_uc(rec.uc(), &pcfg).map_err(|e| e.to_string())?;
    let acfg = ArmaConfig { window_len: (window_s * SAMPLE_RATE_HZ).round() as usize, ..ArmaConfig::default() };
    let run = arma_pipeline(&fhr, &uc, &acfg).map_err(|e| e.to_string())?;
    let switch_window = duration_s / window_s / 2.0;
    let points: Vec<ScatterPoint> = run
        .windows
        .iter()
        .map(|w| ScatterPoint { x: w.pole_mags[0], y: w.pole_mags[1], class: u8::from(w.p as f64 >= switch_window) })
        .collect();
    Ok(ArmaDemo {
        svg: scatter_svg("pole magnitudes per window (squares: after the switch)", "|pole 1|", "|pole 2|", &points, None),
        windows: run.windows.iter().map(|w| w.pole_mags.clone()).collect(),
        delta_r: run.features.map(|f| f.delta_r).unwrap_or_default(),
        skipped: run.skipped.len(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RocDemo {
    pub svg: String,
    pub auc: Option<f64>,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub mcc: f64,
}

/// Scores for two unit-variance Gaussian classes `separation` apart; the
/// confusion matrix uses threshold `separation / 2`.
pub fn roc_demo(seed: u64, n_pos: usize, n_neg: usize, separation: f64) -> RocDemo {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut scores = Vec::with_capacity(n_pos + n_neg);
    let mut truth = Vec::with_capacity(n_pos + n_neg);
    for k in 0..n_pos + n_neg {
        let positive = k < n_pos;
        scores.push(unit.sample(&mut rng) + if positive { separation } else { 0.0 });
        truth.push(u8::from(positive));
    }
    let cut = separation / 2.0;
    let predicted: Vec<u8> = scores.iter().map(|s| u8::from(*s >= cut)).collect();
    let conf = Confusion::from_predictions(&predicted, &truth);
    let auc = auc(&scores, &truth);
    let label = format!("separation {separation:.2}, AUC {}", auc.map_or("n/a".into(), |a| format!("{a:.3}")));
    RocDemo {
        svg: roc_svg("ROC", &[(label, roc_curve(&scores, &truth))]),
        auc,
        tpr: conf.tpr(),
        fpr: conf.fpr(),
        mcc: mcc(&conf),
    }
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string())).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = traceDemo)]
pub fn trace_demo_js(seed: u32, duration_min: f64, decel_depth: f64, decel_lag_s: f64, artifact_pct: f64) -> Result<String, JsValue> {
    to_js(trace_demo(seed.into(), duration_min, decel_depth, decel_lag_s, artifact_pct))
}

#[wasm_bindgen(js_name = armaDemo)]
pub fn arma_demo_js(seed: u32, b1: f64, b2: f64, a1: f64, a2: f64, window_s: f64, noise_sd: f64) -> Result<String, JsValue> {
    to_js(arma_demo(seed.into(), [b1, b2], [a1, a2], window_s, noise_sd))
}

#[wasm_bindgen(js_name = rocDemo)]
pub fn roc_demo_js(seed: u32, n_pos: u32, n_neg: u32, separation: f64) -> Result<String, JsValue> {
    to_js(Ok(roc_demo(seed.into(), n_pos as usize, n_neg as usize, separation)))
}
