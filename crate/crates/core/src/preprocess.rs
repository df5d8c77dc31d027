//! Artifact masking, short-gap interpolation and signal quality.
//!
//! FHR passes through a fixed chain: range outliers, spikes against a
//! trailing moving average, maternal-heart-rate runs, then gap filling.
//! Every stage only clears validity; `fill_gaps` is the one place samples
//! become valid again (by interpolation). UC only gets gap handling.

use serde::{Deserialize, Serialize};

use crate::events::estimate_baseline_masked;
use crate::{seconds_to_samples, SAMPLE_RATE_HZ};

#[derive(Debug, thiserror::Error)]
pub enum PreprocessError {
    #[error("trace has no valid samples")]
    NoValidSamples,
    #[error("mask length {mask} does not match trace length {trace}")]
    LengthMismatch { mask: usize, trace: usize },
}

pub const OUTLIER_LOW_BPM: f64 = 50.0;
pub const OUTLIER_HIGH_BPM: f64 = 210.0;
/// Patients whose FHR quality falls below this are removed.
pub const MIN_QUALITY: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub spike_window_s: f64,
    pub spike_ratio: f64,
    pub max_interp_s: f64,
    pub mhr_step_bpm: f64,
    pub mhr_drop_bpm: f64,
    pub mhr_min_run_s: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            spike_window_s: 60.0,
            spike_ratio: 0.30,
            max_interp_s: 15.0,
            mhr_step_bpm: 25.0,
            mhr_drop_bpm: 35.0,
            mhr_min_run_s: 10.0,
        }
    }
}

/// A cleaned trace. Invalid samples hold NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanSignal {
    pub samples: Vec<f64>,
    pub valid: Vec<bool>,
    /// Fraction of samples valid before interpolation.
    pub quality: f64,
}

impl CleanSignal {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn valid_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().zip(&self.valid).filter(|(_, ok)| **ok).map(|(v, _)| *v)
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Back to the raw representation: invalid samples become missing.
    pub fn to_raw(&self) -> Vec<Option<f64>> {
        self.samples.iter().zip(&self.valid).map(|(v, ok)| ok.then_some(*v)).collect()
    }
}

/// Counts of what each stage removed, for diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub missing: usize,
    pub outliers: usize,
    pub spikes: usize,
    pub unjudged: usize,
    pub mhr: usize,
    pub interpolated: usize,
    pub quality: f64,
    /// Cleaning passes until the output was stable.
    pub passes: usize,
}

/// Valid iff present and within [50, 210] bpm (both bounds inclusive).
pub fn mask_outliers(raw: &[Option<f64>]) -> Vec<bool> {
    raw.iter()
        .map(|v| matches!(v, Some(x) if (OUTLIER_LOW_BPM..=OUTLIER_HIGH_BPM).contains(x)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpikeMask {
    pub valid: Vec<bool>,
    /// Samples whose trailing window had no valid data; they stay valid.
    pub unjudged: usize,
}

/// Marks invalid every valid sample that deviates from the trailing moving
/// average of the previous `window` samples by more than `ratio` of that
/// average. Only samples still valid after earlier spike decisions enter
/// the average, so a run of artifact cannot drag its own reference along;
/// a sample with no valid history is left unjudged, which lets a sustained
/// level change back in once the window has emptied.
pub fn mask_spikes(raw: &[Option<f64>], valid: &[bool], window: usize, ratio: f64) -> SpikeMask {
    let n = raw.len();
    let mut out = valid.to_vec();
    let mut unjudged = 0;
    let value = |k: usize, out: &[bool]| raw[k].filter(|_| out[k]);
    let (mut sum, mut count) = (0.0, 0usize);
    for k in 0..n {
        if k > 0 {
            if let Some(v) = value(k - 1, &out) {
                sum += v;
                count += 1;
            }
        }
        if k > window {
            if let Some(v) = value(k - 1 - window, &out) {
                sum -= v;
                count -= 1;
            }
        }
        if count == 0 {
            // drop accumulated rounding whenever the window empties
            sum = 0.0;
        }
        let Some(x) = value(k, &out) else { continue };
        if count == 0 {
            unjudged += 1;
            continue;
        }
        let ma = sum / count as f64;
        if (x - ma).abs() > ratio * ma.abs() {
            out[k] = false;
        }
    }
    SpikeMask { valid: out, unjudged }
}

/// Masks runs of valid samples bounded on both sides by abrupt jumps
/// (`|step| > step_bpm` between consecutive valid samples) whose median sits
/// more than `drop_bpm` below the baseline median over the run and which
/// last at least `min_run_s`.
pub fn mask_mhr(
    raw: &[Option<f64>],
    valid: &[bool],
    baseline: &[f64],
    step_bpm: f64,
    drop_bpm: f64,
    min_run_s: f64,
) -> Vec<bool> {
    let idx: Vec<usize> = (0..raw.len()).filter(|&k| valid[k] && raw[k].is_some()).collect();
    let mut out = valid.to_vec();
    if idx.len() < 2 {
        return out;
    }
    let value = |k: usize| raw[k].expect("filtered to present samples");
    // Segment starts, as positions into `idx`; position 0 is not a boundary.
    let mut cuts = vec![0usize];
    for p in 1..idx.len() {
        if (value(idx[p]) - value(idx[p - 1])).abs() > step_bpm {
            cuts.push(p);
        }
    }
    cuts.push(idx.len());
    // Interior segments only: both ends must be abrupt jumps.
    for w in 1..cuts.len().saturating_sub(2) {
        let seg = &idx[cuts[w]..cuts[w + 1]];
        let (first, last) = (seg[0], seg[seg.len() - 1]);
        let duration_s = (last - first + 1) as f64 / SAMPLE_RATE_HZ;
        if duration_s < min_run_s {
            continue;
        }
        let vals: Vec<f64> = seg.iter().map(|&k| value(k)).collect();
        let base: Vec<f64> = seg.iter().map(|&k| baseline[k]).filter(|b| b.is_finite()).collect();
        let (Some(m), Some(b)) = (crate::rolling::quantile(&vals, 0.5), crate::rolling::quantile(&base, 0.5))
        else {
            continue;
        };
        if m < b - drop_bpm {
            for &k in seg {
                out[k] = false;
            }
        }
    }
    out
}

/// Linearly interpolates interior gaps of at most `max_gap` samples; longer
/// gaps and gaps touching either end of the trace stay invalid.
pub fn fill_gaps(raw: &[Option<f64>], valid: &[bool], max_gap: usize) -> Result<CleanSignal, PreprocessError> {
    if raw.len() != valid.len() {
        return Err(PreprocessError::LengthMismatch { mask: valid.len(), trace: raw.len() });
    }
    let n = raw.len();
    let usable = |k: usize| valid[k] && raw[k].is_some_and(f64::is_finite);
    let mut samples: Vec<f64> = (0..n).map(|k| if usable(k) { raw[k].unwrap() } else { f64::NAN }).collect();
    let mut out_valid: Vec<bool> = (0..n).map(usable).collect();
    let originally_valid = out_valid.iter().filter(|v| **v).count();
    if originally_valid == 0 {
        return Err(PreprocessError::NoValidSamples);
    }
    let mut k = 0;
    while k < n {
        if out_valid[k] {
            k += 1;
            continue;
        }
        let start = k;
        while k < n && !out_valid[k] {
            k += 1;
        }
        let len = k - start;
        if start == 0 || k == n || len > max_gap {
            continue;
        }
        let (a, b) = (samples[start - 1], samples[k]);
        let span = (len + 1) as f64;
        for (i, j) in (start..k).enumerate() {
            let t = (i + 1) as f64 / span;
            samples[j] = a + t * (b - a);
            out_valid[j] = true;
        }
    }
    Ok(CleanSignal { samples, valid: out_valid, quality: originally_valid as f64 / n as f64 })
}

/// Removal rule: more than 30% of the trace missing.
pub fn exclude_patient(fhr_quality: f64) -> bool {
    fhr_quality < MIN_QUALITY
}

pub fn quality_tier(fhr_quality: f64, threshold: f64) -> bool {
    fhr_quality >= threshold
}

/// Most passes [`clean_fhr`] makes before giving up on a fixed point.
pub const MAX_CLEAN_PASSES: usize = 8;

/// One pass of outliers, spikes, MHR (against a provisional baseline of the
/// samples surviving the first two rules), then gaps. Also returns the mask
/// just before interpolation.
fn clean_pass(raw: &[Option<f64>], config: &PreprocessConfig) -> Result<(CleanSignal, PreprocessReport, Vec<bool>), PreprocessError> {
    let count_false = |m: &[bool]| m.iter().filter(|v| !**v).count();
    let present = raw.iter().filter(|v| v.is_some()).count();
    let mut report = PreprocessReport { missing: raw.len() - present, passes: 1, ..Default::default() };

    let after_outliers = mask_outliers(raw);
    report.outliers = count_false(&after_outliers) - report.missing;

    let spikes = mask_spikes(raw, &after_outliers, seconds_to_samples(config.spike_window_s), config.spike_ratio);
    report.spikes = count_false(&spikes.valid) - count_false(&after_outliers);
    report.unjudged = spikes.unjudged;

    let values: Vec<f64> = raw.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
    let after_mhr = match estimate_baseline_masked(&values, &spikes.valid) {
        Ok(baseline) => mask_mhr(
            raw,
            &spikes.valid,
            &baseline.values,
            config.mhr_step_bpm,
            config.mhr_drop_bpm,
            config.mhr_min_run_s,
        ),
        Err(_) => spikes.valid.clone(),
    };
    report.mhr = count_false(&after_mhr) - count_false(&spikes.valid);

    let clean = fill_gaps(raw, &after_mhr, seconds_to_samples(config.max_interp_s))?;
    report.interpolated = clean.valid_count() - (raw.len() - count_false(&after_mhr));
    report.quality = clean.quality;
    Ok((clean, report, after_mhr))
}

/// Full FHR cleaning. Interpolated samples shift the moving average and
/// baseline that the masking rules read, so a single pass is not always
/// stable; passes repeat on their own output until nothing changes, which
/// makes cleaning idempotent. Quality counts the samples that stayed valid
/// before interpolation in every pass; the per-rule counts are summed.
pub fn clean_fhr(
    raw: &[Option<f64>],
    config: &PreprocessConfig,
) -> Result<(CleanSignal, PreprocessReport), PreprocessError> {
    let (mut clean, mut report, mut kept) = clean_pass(raw, config)?;
    let mut input = raw.to_vec();
    loop {
        let output = clean.to_raw();
        if output == input || report.passes >= MAX_CLEAN_PASSES {
            break;
        }
        let (next, r, mask) = clean_pass(&output, config)?;
        report.outliers += r.outliers;
        report.spikes += r.spikes;
        report.mhr += r.mhr;
        report.passes += 1;
        for (k, m) in kept.iter_mut().zip(&mask) {
            *k &= *m;
        }
        input = output;
        clean = next;
    }
    let originally_valid = kept.iter().filter(|v| **v).count();
    report.interpolated = clean.valid_count() - originally_valid;
    clean.quality = originally_valid as f64 / raw.len() as f64;
    report.quality = clean.quality;
    Ok((clean, report))
}

/// UC only gets gap handling; the bpm thresholds do not apply.
pub fn clean_uc(raw: &[Option<f64>], config: &PreprocessConfig) -> Result<CleanSignal, PreprocessError> {
    let present: Vec<bool> = raw.iter().map(|v| v.is_some()).collect();
    fill_gaps(raw, &present, seconds_to_samples(config.max_interp_s))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn some(v: &[f64]) -> Vec<Option<f64>> {
        v.iter().copied().map(Some).collect()
    }

    #[test]
    fn outlier_thresholds() {
        assert_eq!(mask_outliers(&some(&[120.0, 45.0, 130.0])), vec![true, false, true]);
        assert_eq!(mask_outliers(&some(&[50.0, 210.0])), vec![true, true]);
        assert_eq!(mask_outliers(&some(&[49.999, 210.001])), vec![false, false]);
        assert_eq!(mask_outliers(&[None, Some(140.0)]), vec![false, true]);
        let in_range: Vec<f64> = (50..=210).map(f64::from).collect();
        assert!(mask_outliers(&some(&in_range)).into_iter().all(|v| v));
    }

    #[test]
    fn spike_rule_at_thirty_percent() {
        let mut x = vec![140.0; 400];
        x[300] = 200.0;
        x[350] = 150.0;
        let raw = some(&x);
        let m = mask_spikes(&raw, &vec![true; 400], 240, 0.3);
        assert!(!m.valid[300], "43% above must be masked");
        assert!(m.valid[350], "7% above must stay");
        assert_eq!(m.valid.iter().filter(|v| !**v).count(), 1);
        // 140 * 1.3 = 182: just under stays, just over goes.
        for (v, keep) in [(181.9, true), (182.1, false), (98.1, true), (97.9, false)] {
            let mut y = vec![140.0; 300];
            y[280] = v;
            let m = mask_spikes(&some(&y), &vec![true; 300], 240, 0.3);
            assert_eq!(m.valid[280], keep, "{v}");
        }
    }

    #[test]
    fn constant_signal_unchanged_by_spike_rule() {
        let raw = some(&[140.0; 500]);
        let m = mask_spikes(&raw, &vec![true; 500], 240, 0.3);
        assert!(m.valid.iter().all(|v| *v));
        // only the very first sample lacks history
        assert_eq!(m.unjudged, 1);
    }

    #[test]
    fn spike_window_without_valid_history_is_unjudged() {
        let mut raw = some(&[140.0; 600]);
        let mut valid = vec![true; 600];
        for k in 100..400 {
            valid[k] = false;
        }
        raw[400] = Some(60.0);
        let m = mask_spikes(&raw, &valid, 240, 0.3);
        assert!(m.valid[400], "no history means no judgement");
        assert_eq!(m.unjudged, 2);
    }

    #[test]
    fn mhr_run_between_abrupt_steps_is_masked() {
        let mut x = vec![140.0; 2400];
        for v in &mut x[1000..1240] {
            *v = 95.0;
        }
        let raw = some(&x);
        let valid = vec![true; x.len()];
        let base = vec![140.0; x.len()];
        let m = mask_mhr(&raw, &valid, &base, 25.0, 35.0, 10.0);
        assert!(m[999] && m[1240]);
        assert!(m[1000..1240].iter().all(|v| !v));
        assert_eq!(m.iter().filter(|v| !**v).count(), 240);
    }

    #[test]
    fn gradual_dip_not_mhr() {
        let x: Vec<f64> = (0..2400)
            .map(|k| 140.0 - 10.0 * (std::f64::consts::PI * k as f64 / 2400.0).sin())
            .collect();
        let m = mask_mhr(&some(&x), &vec![true; 2400], &vec![140.0; 2400], 25.0, 35.0, 10.0);
        assert!(m.iter().all(|v| *v));
    }

    #[test]
    fn low_trace_without_boundaries_not_mhr() {
        let x = vec![90.0; 1200];
        let m = mask_mhr(&some(&x), &vec![true; 1200], &vec![140.0; 1200], 25.0, 35.0, 10.0);
        assert!(m.iter().all(|v| *v));
    }

    #[test]
    fn short_mhr_run_kept() {
        let mut x = vec![140.0; 1200];
        for v in &mut x[500..530] {
            *v = 90.0;
        }
        let m = mask_mhr(&some(&x), &vec![true; 1200], &vec![140.0; 1200], 25.0, 35.0, 10.0);
        assert!(m.iter().all(|v| *v), "7.5 s run is below the minimum length");
    }

    #[test]
    fn short_gap_on_ramp_is_interpolated() {
        let ramp: Vec<f64> = (0..100).map(|k| 100.0 + 0.5 * k as f64).collect();
        let mut raw = some(&ramp);
        for v in &mut raw[40..48] {
            *v = None;
        }
        let valid: Vec<bool> = raw.iter().map(|v| v.is_some()).collect();
        let c = fill_gaps(&raw, &valid, 60).unwrap();
        for k in 40..48 {
            assert!(c.valid[k]);
            assert!((c.samples[k] - ramp[k]).abs() < 1e-12);
        }
        assert!((c.quality - 92.0 / 100.0).abs() < 1e-15);
    }

    #[test]
    fn long_gap_stays_invalid() {
        let mut raw = some(&[140.0; 3000]);
        for v in &mut raw[1000..2200] {
            *v = None;
        }
        let valid: Vec<bool> = raw.iter().map(|v| v.is_some()).collect();
        let c = fill_gaps(&raw, &valid, seconds_to_samples(15.0)).unwrap();
        assert!(c.valid[1000..2200].iter().all(|v| !v));
        assert!(c.samples[1500].is_nan());
    }

    #[test]
    fn edge_gaps_are_not_extrapolated() {
        let raw = vec![None, None, Some(140.0), Some(141.0), None];
        let c = fill_gaps(&raw, &[false, false, true, true, false], 60).unwrap();
        assert_eq!(c.valid, vec![false, false, true, true, false]);
    }

    #[test]
    fn no_gaps_is_identity() {
        let x: Vec<f64> = (0..50).map(|k| 130.0 + k as f64).collect();
        let c = fill_gaps(&some(&x), &[true; 50], 60).unwrap();
        assert_eq!(c.samples, x);
        assert_eq!(c.quality, 1.0);
    }

    #[test]
    fn all_invalid_is_error() {
        let err = fill_gaps(&[None, None], &[false, false], 60).unwrap_err();
        assert!(matches!(err, PreprocessError::NoValidSamples));
    }

    #[test]
    fn exclusion_and_tiers() {
        assert!(exclude_patient(0.69));
        assert!(!exclude_patient(0.70));
        assert!(!exclude_patient(7.0 / 10.0));
        assert!(!exclude_patient(1.0));
        assert!(quality_tier(0.78, 0.75));
        assert!(!quality_tier(0.78, 0.80));
        assert!(quality_tier(0.0, 0.0));
    }

    #[test]
    fn clean_fhr_counts_stages() {
        let mut x = some(&[140.0; 4000]);
        x[100] = Some(30.0);
        x[200] = Some(220.0);
        x[300] = Some(195.0);
        x[400] = None;
        let (clean, report) = clean_fhr(&x, &PreprocessConfig::default()).unwrap();
        assert_eq!(report.missing, 1);
        assert_eq!(report.outliers, 2);
        assert_eq!(report.spikes, 1);
        assert_eq!(report.interpolated, 4);
        assert!((clean.quality - 3996.0 / 4000.0).abs() < 1e-15);
        assert!(clean.valid.iter().all(|v| *v));
    }
}
