//! FHR baseline, event detection (accelerations, decelerations,
//! contractions), deceleration timing and FIGO component flags.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::preprocess::CleanSignal;
use crate::rolling::{centered_mean, centered_quantile, fill_nearest};
use crate::{seconds_to_samples, SAMPLE_RATE_HZ};

#[derive(Debug, thiserror::Error)]
pub enum EventsError {
    #[error("trace has no valid samples to estimate a reference level from")]
    NoValidData,
}

pub const BASELINE_WINDOW_S: f64 = 600.0;
pub const BASELINE_SMOOTH_S: f64 = 60.0;
pub const BASELINE_MAX_SLOPE: f64 = 0.5;
pub const UC_TONE_QUANTILE: f64 = 0.10;
pub const PAIRING_WINDOW_S: f64 = 120.0;
pub const LATE_DECEL_LAG_S: f64 = 20.0;
pub const PROLONGED_DECEL_S: f64 = 180.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub values: Vec<f64>,
}

impl Baseline {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Median of valid FHR over a centered 10-minute window, smoothed with a
/// 60 s moving average and slope-clamped to 0.5 bpm per sample.
pub fn estimate_baseline(fhr: &CleanSignal) -> Result<Baseline, EventsError> {
    estimate_baseline_masked(&fhr.samples, &fhr.valid)
}

pub fn estimate_baseline_masked(values: &[f64], valid: &[bool]) -> Result<Baseline, EventsError> {
    let mask: Vec<bool> = valid.iter().zip(values).map(|(ok, v)| *ok && v.is_finite()).collect();
    if !mask.iter().any(|v| *v) {
        return Err(EventsError::NoValidData);
    }
    let mut median = centered_quantile(values, &mask, seconds_to_samples(BASELINE_WINDOW_S), 0.5);
    fill_nearest(&mut median);
    let mut smooth = centered_mean(&median, seconds_to_samples(BASELINE_SMOOTH_S));
    for k in 1..smooth.len() {
        let prev = smooth[k - 1];
        smooth[k] = smooth[k].clamp(prev - BASELINE_MAX_SLOPE, prev + BASELINE_MAX_SLOPE);
    }
    Ok(Baseline { values: smooth })
}

/// Resting uterine tone: 10th percentile of valid UC over a centered
/// 10-minute window.
pub fn uc_tone(uc: &CleanSignal) -> Result<Vec<f64>, EventsError> {
    if uc.valid_count() == 0 {
        return Err(EventsError::NoValidData);
    }
    let mut tone = centered_quantile(&uc.samples, &uc.valid, seconds_to_samples(BASELINE_WINDOW_S), UC_TONE_QUANTILE);
    fill_nearest(&mut tone);
    Ok(tone)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventKind {
    Accel,
    Decel,
    Contraction,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::Accel => "accel",
            EventKind::Decel => "decel",
            EventKind::Contraction => "contraction",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub kind: EventKind,
    pub start_idx: usize,
    pub end_idx: usize,
    pub peak_idx: usize,
    pub duration_s: f64,
    /// Signal minus reference at the peak (negative for decelerations).
    pub height: f64,
    /// Unsigned excursion from the reference at the peak.
    pub prominence: f64,
}

impl Event {
    pub fn start_s(&self) -> f64 {
        self.start_idx as f64 / SAMPLE_RATE_HZ
    }

    pub fn end_s(&self) -> f64 {
        (self.end_idx + 1) as f64 / SAMPLE_RATE_HZ
    }

    pub fn peak_s(&self) -> f64 {
        self.peak_idx as f64 / SAMPLE_RATE_HZ
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventConfig {
    pub min_duration_s: f64,
    /// Prominence must exceed this fraction of the reference level.
    pub min_prominence_ratio: f64,
    /// Event extent is the run where the excursion exceeds this fraction of
    /// the prominence threshold.
    pub edge_fraction: f64,
    /// Floor on the contraction prominence threshold, in UC units.
    pub uc_min_prominence: f64,
}

impl Default for EventConfig {
    fn default() -> Self {
        Self { min_duration_s: 10.0, min_prominence_ratio: 0.20, edge_fraction: 0.5, uc_min_prominence: 5.0 }
    }
}

/// Detects events of one kind against a per-sample reference (FHR baseline
/// for accelerations/decelerations, UC tone for contractions).
///
/// A candidate is a maximal run of valid samples whose excursion toward the
/// event direction exceeds `edge_fraction` of the local prominence
/// threshold. It is kept when it lasts at least `min_duration_s`, its peak
/// excursion exceeds `min_prominence_ratio` times the reference at the peak,
/// and it does not border an invalid region.
pub fn detect_events(signal: &CleanSignal, reference: &[f64], kind: EventKind, config: &EventConfig) -> Vec<Event> {
    let n = signal.len().min(reference.len());
    let sign = if kind == EventKind::Decel { -1.0 } else { 1.0 };
    let threshold = |k: usize| {
        let t = config.min_prominence_ratio * reference[k].abs();
        if kind == EventKind::Contraction {
            t.max(config.uc_min_prominence)
        } else {
            t
        }
    };
    let excursion = |k: usize| sign * (signal.samples[k] - reference[k]);
    let usable = |k: usize| signal.valid[k] && signal.samples[k].is_finite() && reference[k].is_finite();
    let in_event = |k: usize| usable(k) && excursion(k) > config.edge_fraction * threshold(k);
    let min_len = (config.min_duration_s * SAMPLE_RATE_HZ).ceil() as usize;

    let mut events = Vec::new();
    let mut k = 0;
    while k < n {
        if !in_event(k) {
            k += 1;
            continue;
        }
        let start = k;
        while k < n && in_event(k) {
            k += 1;
        }
        let end = k - 1;
        let borders_gap = (start > 0 && !signal.valid[start - 1]) || (k < n && !signal.valid[k]);
        if borders_gap || end + 1 - start < min_len {
            continue;
        }
        let peak = (start..=end)
            .max_by(|&a, &b| excursion(a).total_cmp(&excursion(b)).then(b.cmp(&a)))
            .expect("non-empty run");
        let prominence = excursion(peak);
        if prominence > threshold(peak) {
            events.push(Event {
                kind,
                start_idx: start,
                end_idx: end,
                peak_idx: peak,
                duration_s: (end + 1 - start) as f64 / SAMPLE_RATE_HZ,
                height: signal.samples[peak] - reference[peak],
                prominence,
            });
        }
    }
    events
}

/// Count, mean/max duration, height and prominence, and the fraction of
/// the trace covered by events. With no events only the count is present.
/// `max_height` is the signed height of largest magnitude.
pub fn event_summary(events: &[Event], trace_len_s: f64, prefix: &str) -> BTreeMap<String, Option<f64>> {
    let mut out = BTreeMap::new();
    let key = |s: &str| format!("{prefix}_{s}");
    out.insert(key("count"), Some(events.len() as f64));
    let n = events.len() as f64;
    let stats = |f: &dyn Fn(&Event) -> f64| -> (Option<f64>, Option<f64>) {
        if events.is_empty() {
            return (None, None);
        }
        let mean = events.iter().map(f).sum::<f64>() / n;
        let max = events.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        (Some(mean), Some(max))
    };
    let (mean_d, max_d) = stats(&|e| e.duration_s);
    let (mean_p, max_p) = stats(&|e| e.prominence);
    let mean_h = (!events.is_empty()).then(|| events.iter().map(|e| e.height).sum::<f64>() / n);
    let max_h = events
        .iter()
        .map(|e| e.height)
        .max_by(|a, b| a.abs().total_cmp(&b.abs()));
    let total: f64 = events.iter().map(|e| e.duration_s).sum();
    out.insert(key("mean_duration"), mean_d);
    out.insert(key("max_duration"), max_d);
    out.insert(key("mean_height"), mean_h);
    out.insert(key("max_height"), max_h);
    out.insert(key("mean_prominence"), mean_p);
    out.insert(key("max_prominence"), max_p);
    out.insert(
        key("ratio"),
        (!events.is_empty() && trace_len_s > 0.0).then(|| total / trace_len_s),
    );
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecelClass {
    Early,
    Late,
    Unpaired,
}

impl DecelClass {
    pub fn name(self) -> &'static str {
        match self {
            DecelClass::Early => "early",
            DecelClass::Late => "late",
            DecelClass::Unpaired => "unpaired",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecelTiming {
    /// Decel onset minus contraction peak; `None` when unpaired.
    pub lag_s: Option<f64>,
    pub class: DecelClass,
    /// Index into the contraction list.
    pub contraction: Option<usize>,
}

/// Pairs each deceleration with the latest contraction whose peak lies at
/// or before the deceleration onset and no more than `window_s` earlier.
pub fn pair_decels(decels: &[Event], contractions: &[Event], window_s: f64) -> Vec<DecelTiming> {
    decels
        .iter()
        .map(|d| {
            let onset = d.start_s();
            // contractions are sorted by start, and disjoint, so peaks ascend
            let upto = contractions.partition_point(|c| c.peak_s() <= onset);
            let candidate = upto.checked_sub(1).filter(|&i| onset - contractions[i].peak_s() <= window_s);
            match candidate {
                Some(i) => {
                    let lag = onset - contractions[i].peak_s();
                    let class = if lag > LATE_DECEL_LAG_S { DecelClass::Late } else { DecelClass::Early };
                    DecelTiming { lag_s: Some(lag), class, contraction: Some(i) }
                }
                None => DecelTiming { lag_s: None, class: DecelClass::Unpaired, contraction: None },
            }
        })
        .collect()
}

/// FIGO non-reassuring component flags.
pub fn figo_flags(
    mean_baseline: f64,
    variability: Option<f64>,
    timings: &[DecelTiming],
    contraction_count: usize,
    decel_durations_s: &[f64],
) -> BTreeMap<String, bool> {
    let paired = timings.iter().filter(|t| t.class != DecelClass::Unpaired).count();
    let mut flags = BTreeMap::new();
    flags.insert("baseline_nonreassuring".into(), !(110.0..=160.0).contains(&mean_baseline));
    flags.insert(
        "variability_nonreassuring".into(),
        variability.is_some_and(|v| !(5.0..=25.0).contains(&v)),
    );
    flags.insert("any_late_decel".into(), timings.iter().any(|t| t.class == DecelClass::Late));
    flags.insert(
        "any_prolonged_decel".into(),
        decel_durations_s.iter().any(|d| *d > PROLONGED_DECEL_S),
    );
    flags.insert(
        "repetitive_decels".into(),
        contraction_count >= 1 && paired as f64 / contraction_count as f64 > 0.5,
    );
    flags
}

/// Mean over whole minutes (at least half valid) of the max-min range of
/// the baseline-detrended valid FHR.
pub fn variability(fhr: &CleanSignal, baseline: &Baseline) -> Option<f64> {
    let minute = seconds_to_samples(60.0);
    let ranges: Vec<f64> = fhr
        .samples
        .chunks_exact(minute)
        .zip(fhr.valid.chunks_exact(minute))
        .zip(baseline.values.chunks_exact(minute))
        .filter_map(|((s, v), b)| {
            let d: Vec<f64> = s.iter().zip(v).zip(b).filter(|((_, ok), _)| **ok).map(|((x, _), b)| x - b).collect();
            if d.len() * 2 < minute {
                return None;
            }
            let max = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = d.iter().copied().fold(f64::INFINITY, f64::min);
            Some(max - min)
        })
        .collect();
    (!ranges.is_empty()).then(|| ranges.iter().sum::<f64>() / ranges.len() as f64)
}

/// Everything the event stage produces for one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventAnalysis {
    pub baseline: Baseline,
    pub uc_tone: Vec<f64>,
    pub accels: Vec<Event>,
    pub decels: Vec<Event>,
    pub contractions: Vec<Event>,
    pub timings: Vec<DecelTiming>,
    pub variability: Option<f64>,
    pub flags: BTreeMap<String, bool>,
}

impl EventAnalysis {
    pub fn compute(fhr: &CleanSignal, uc: &CleanSignal, config: &EventConfig) -> Result<Self, EventsError> {
        let baseline = estimate_baseline(fhr)?;
        let tone = match uc_tone(uc) {
            Ok(t) => t,
            Err(_) => vec![f64::NAN; uc.len()],
        };
        let accels = detect_events(fhr, &baseline.values, EventKind::Accel, config);
        let decels = detect_events(fhr, &baseline.values, EventKind::Decel, config);
        let contractions = detect_events(uc, &tone, EventKind::Contraction, config);
        let timings = pair_decels(&decels, &contractions, PAIRING_WINDOW_S);
        let variability = variability(fhr, &baseline);
        let durations: Vec<f64> = decels.iter().map(|d| d.duration_s).collect();
        let flags = figo_flags(baseline.mean(), variability, &timings, contractions.len(), &durations);
        Ok(Self { baseline, uc_tone: tone, accels, decels, contractions, timings, variability, flags })
    }

    /// Summary features for all three kinds plus decel timing counts.
    pub fn summary(&self, trace_len_s: f64) -> BTreeMap<String, Option<f64>> {
        let mut out = BTreeMap::new();
        out.extend(event_summary(&self.accels, trace_len_s, "accel"));
        out.extend(event_summary(&self.decels, trace_len_s, "decel"));
        out.extend(event_summary(&self.contractions, trace_len_s, "contraction"));
        let late = self.timings.iter().filter(|t| t.class == DecelClass::Late).count();
        let early = self.timings.iter().filter(|t| t.class == DecelClass::Early).count();
        out.insert("decel_late_count".into(), Some(late as f64));
        out.insert("decel_early_count".into(), Some(early as f64));
        let lags: Vec<f64> = self.timings.iter().filter_map(|t| t.lag_s).collect();
        out.insert(
            "decel_mean_lag".into(),
            (!lags.is_empty()).then(|| lags.iter().sum::<f64>() / lags.len() as f64),
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clean(samples: Vec<f64>) -> CleanSignal {
        let n = samples.len();
        CleanSignal { samples, valid: vec![true; n], quality: 1.0 }
    }

    fn naive_window_median(x: &[f64], k: usize) -> f64 {
        let half = seconds_to_samples(BASELINE_WINDOW_S) / 2;
        let lo = k.saturating_sub(half);
        let hi = (k + half + 1).min(x.len());
        let mut w = x[lo..hi].to_vec();
        w.sort_by(f64::total_cmp);
        let m = w.len();
        if m % 2 == 1 {
            w[m / 2]
        } else {
            0.5 * (w[m / 2 - 1] + w[m / 2])
        }
    }

    #[test]
    fn constant_baseline() {
        let b = estimate_baseline(&clean(vec![140.0; 5000])).unwrap();
        assert!(b.values.iter().all(|v| (v - 140.0).abs() < 1e-12));
    }

    #[test]
    fn baseline_ignores_single_deceleration() {
        let mut x = vec![140.0; 14400];
        for v in &mut x[6000..6240] {
            *v = 100.0;
        }
        let b = estimate_baseline(&clean(x.clone())).unwrap();
        for k in (0..x.len()).step_by(97) {
            assert!((naive_window_median(&x, k) - 140.0).abs() <= 2.0);
            assert!((b.values[k] - 140.0).abs() <= 2.0, "k={k} {}", b.values[k]);
        }
    }

    #[test]
    fn baseline_tracks_linear_drift() {
        let n = 14400;
        let x: Vec<f64> = (0..n).map(|k| 130.0 + 20.0 * k as f64 / (n - 1) as f64).collect();
        let b = estimate_baseline(&clean(x.clone())).unwrap();
        for k in (0..n).step_by(101) {
            assert!((naive_window_median(&x, k) - x[k]).abs() <= 3.0);
            assert!((b.values[k] - x[k]).abs() <= 3.0, "k={k}");
        }
        assert!(b.values.windows(2).all(|w| (w[1] - w[0]).abs() <= BASELINE_MAX_SLOPE + 1e-12));
    }

    #[test]
    fn all_invalid_baseline_is_error() {
        let s = CleanSignal { samples: vec![f64::NAN; 10], valid: vec![false; 10], quality: 0.0 };
        assert!(estimate_baseline(&s).is_err());
    }

    #[test]
    fn flat_trace_has_no_events() {
        let s = clean(vec![140.0; 2000]);
        let base = vec![140.0; 2000];
        for kind in [EventKind::Accel, EventKind::Decel] {
            assert!(detect_events(&s, &base, kind, &EventConfig::default()).is_empty());
        }
    }

    #[test]
    fn sixty_second_dip_is_one_decel() {
        let mut x = vec![140.0; 2000];
        for v in &mut x[800..1040] {
            *v = 100.0;
        }
        let ev = detect_events(&clean(x), &[140.0; 2000], EventKind::Decel, &EventConfig::default());
        assert_eq!(ev.len(), 1);
        let e = &ev[0];
        assert_eq!((e.start_idx, e.end_idx), (800, 1039));
        assert_eq!(e.duration_s, 60.0);
        assert_eq!(e.height, -40.0);
        assert_eq!(e.prominence, 40.0);
        assert!(e.prominence > 0.2 * 140.0);
    }

    #[test]
    fn eight_second_dip_is_ignored() {
        let mut x = vec![140.0; 2000];
        for v in &mut x[800..832] {
            *v = 60.0;
        }
        assert!(detect_events(&clean(x), &[140.0; 2000], EventKind::Decel, &EventConfig::default()).is_empty());
    }

    #[test]
    fn duration_and_prominence_boundaries() {
        let cfg = EventConfig::default();
        // exactly 10 s (40 samples) counts
        let mut x = vec![140.0; 1000];
        for v in &mut x[300..340] {
            *v = 100.0;
        }
        assert_eq!(detect_events(&clean(x), &[140.0; 1000], EventKind::Decel, &cfg).len(), 1);
        // 39 samples does not
        let mut x = vec![140.0; 1000];
        for v in &mut x[300..339] {
            *v = 100.0;
        }
        assert!(detect_events(&clean(x), &[140.0; 1000], EventKind::Decel, &cfg).is_empty());
        // prominence exactly 20% (28 bpm) is not "> 20%"
        let mut x = vec![140.0; 1000];
        for v in &mut x[300..400] {
            *v = 112.0;
        }
        assert!(detect_events(&clean(x), &[140.0; 1000], EventKind::Decel, &cfg).is_empty());
        let mut x = vec![140.0; 1000];
        for v in &mut x[300..400] {
            *v = 111.9;
        }
        assert_eq!(detect_events(&clean(x), &[140.0; 1000], EventKind::Decel, &cfg).len(), 1);
    }

    #[test]
    fn accel_and_contraction_polarity() {
        let mut x = vec![140.0; 1000];
        for v in &mut x[100..200] {
            *v = 175.0;
        }
        let ev = detect_events(&clean(x), &[140.0; 1000], EventKind::Accel, &EventConfig::default());
        assert_eq!(ev.len(), 1);
        assert!(ev[0].height > 0.0);

        let mut u = vec![10.0; 1000];
        for (i, v) in u[400..560].iter_mut().enumerate() {
            *v = 10.0 + 40.0 * (std::f64::consts::PI * i as f64 / 160.0).sin();
        }
        let ev = detect_events(&clean(u), &[10.0; 1000], EventKind::Contraction, &EventConfig::default());
        assert_eq!(ev.len(), 1);
        assert!(ev[0].prominence > 0.0 && ev[0].height > 0.0);
    }

    #[test]
    fn events_bordering_gaps_are_dropped() {
        let mut x = vec![140.0; 1000];
        for v in &mut x[300..400] {
            *v = 100.0;
        }
        let mut s = clean(x);
        for k in 400..420 {
            s.valid[k] = false;
            s.samples[k] = f64::NAN;
        }
        assert!(detect_events(&s, &[140.0; 1000], EventKind::Decel, &EventConfig::default()).is_empty());
    }

    fn ev(kind: EventKind, start_s: f64, peak_s: f64, dur_s: f64) -> Event {
        let s = (start_s * 4.0) as usize;
        Event {
            kind,
            start_idx: s,
            end_idx: s + (dur_s * 4.0) as usize - 1,
            peak_idx: (peak_s * 4.0) as usize,
            duration_s: dur_s,
            height: -30.0,
            prominence: 30.0,
        }
    }

    #[test]
    fn early_late_unpaired() {
        let uc = vec![ev(EventKind::Contraction, 80.0, 100.0, 40.0), ev(EventKind::Contraction, 480.0, 500.0, 40.0)];
        let decels = vec![
            ev(EventKind::Decel, 110.0, 130.0, 30.0),
            ev(EventKind::Decel, 530.0, 550.0, 30.0),
            ev(EventKind::Decel, 900.0, 910.0, 30.0),
        ];
        let t = pair_decels(&decels, &uc, PAIRING_WINDOW_S);
        assert_eq!(t[0].class, DecelClass::Early);
        assert_eq!(t[0].lag_s, Some(10.0));
        assert_eq!(t[1].class, DecelClass::Late);
        assert_eq!(t[1].lag_s, Some(30.0));
        assert_eq!(t[2].class, DecelClass::Unpaired);
        assert_eq!(t[2].contraction, None);
    }

    #[test]
    fn lag_of_exactly_twenty_is_early() {
        let uc = vec![ev(EventKind::Contraction, 80.0, 100.0, 40.0)];
        let t = pair_decels(&[ev(EventKind::Decel, 120.0, 130.0, 20.0)], &uc, PAIRING_WINDOW_S);
        assert_eq!(t[0].class, DecelClass::Early);
    }

    #[test]
    fn summary_arithmetic() {
        let events = vec![ev(EventKind::Decel, 10.0, 20.0, 30.0), ev(EventKind::Decel, 300.0, 320.0, 60.0)];
        let s = event_summary(&events, 900.0, "decel");
        assert_eq!(s["decel_count"], Some(2.0));
        assert_eq!(s["decel_mean_duration"], Some(45.0));
        assert_eq!(s["decel_max_duration"], Some(60.0));
        assert!((s["decel_ratio"].unwrap() - 0.1).abs() < 1e-15);

        let empty = event_summary(&[], 900.0, "decel");
        assert_eq!(empty["decel_count"], Some(0.0));
        assert!(empty.iter().filter(|(k, _)| *k != "decel_count").all(|(_, v)| v.is_none()));

        let one = event_summary(&events[..1], 900.0, "decel");
        for stat in ["duration", "height", "prominence"] {
            assert_eq!(one[&format!("decel_mean_{stat}")], one[&format!("decel_max_{stat}")]);
        }
    }

    #[test]
    fn figo_examples() {
        let f = figo_flags(100.0, Some(12.0), &[], 0, &[]);
        assert!(f["baseline_nonreassuring"]);
        assert!(!f["variability_nonreassuring"]);
        let paired = DecelTiming { lag_s: Some(5.0), class: DecelClass::Early, contraction: Some(0) };
        let f = figo_flags(140.0, Some(3.0), &[paired; 3], 4, &[200.0]);
        assert!(f["repetitive_decels"]);
        assert!(f["variability_nonreassuring"]);
        assert!(f["any_prolonged_decel"]);
        assert!(!f["any_late_decel"]);
        let f = figo_flags(140.0, None, &[paired; 2], 4, &[180.0]);
        assert!(!f["repetitive_decels"], "exactly half is not more than half");
        assert!(!f["any_prolonged_decel"]);
    }

    #[test]
    fn variability_of_square_wave() {
        let x: Vec<f64> = (0..2400).map(|k| if (k / 20) % 2 == 0 { 145.0 } else { 135.0 }).collect();
        let s = clean(x);
        let b = Baseline { values: vec![140.0; 2400] };
        assert_eq!(variability(&s, &b), Some(10.0));
    }
}
