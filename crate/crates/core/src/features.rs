//! Per-patient features and the nested feature sets FS1 ⊂ FS2 ⊂ FS3 ⊂ FS4.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::arma::ArmaFeatures;
use crate::events::{variability, Baseline, EventAnalysis};
use crate::ingest::CtgRecord;
use crate::preprocess::CleanSignal;
use crate::SAMPLE_RATE_HZ;

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("feature '{0}' is named in the feature set but was never computed")]
    NotComputed(String),
    #[error("feature set: {0}")]
    BadSpec(String),
}

/// Computed features for one patient, before selection. `None` marks a
/// feature that could not be computed for this patient.
pub type FeatureBag = BTreeMap<String, Option<f64>>;

pub const MIN_STAT_SAMPLES: usize = 100;
pub const MIN_ENTROPY_SAMPLES: usize = 200;
pub const AUTOCORR_LAG: usize = 50;

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// tsfresh-style autocorrelation: lag covariance over the series variance.
pub fn autocorrelation(x: &[f64], lag: usize) -> Option<f64> {
    let n = x.len();
    if n <= lag {
        return None;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if var == 0.0 {
        return None;
    }
    let cov: f64 = x[..n - lag].iter().zip(&x[lag..]).map(|(a, b)| (a - mean) * (b - mean)).sum();
    finite(cov / ((n - lag) as f64 * var))
}

/// Range, extremes, median, mean, std, baseline level, variability and
/// lag-50 autocorrelation over the valid samples.
pub fn stat_features(fhr: &CleanSignal, baseline: &Baseline) -> FeatureBag {
    let names = [
        "fhr_range", "fhr_max", "fhr_min", "fhr_median", "fhr_mean", "fhr_std", "fhr_baseline",
        "fhr_variability", "fhr_autocorr50",
    ];
    let mut out: FeatureBag = names.iter().map(|n| (n.to_string(), None)).collect();
    let x: Vec<f64> = fhr.valid_values().collect();
    if x.len() < MIN_STAT_SAMPLES {
        return out;
    }
    let n = x.len() as f64;
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = x.iter().sum::<f64>() / n;
    let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let base: Vec<f64> = baseline
        .values
        .iter()
        .zip(&fhr.valid)
        .filter(|(b, ok)| **ok && b.is_finite())
        .map(|(b, _)| *b)
        .collect();
    out.insert("fhr_range".into(), finite(max - min));
    out.insert("fhr_max".into(), finite(max));
    out.insert("fhr_min".into(), finite(min));
    out.insert("fhr_median".into(), crate::rolling::quantile(&x, 0.5));
    out.insert("fhr_mean".into(), finite(mean));
    out.insert("fhr_std".into(), finite(std));
    out.insert(
        "fhr_baseline".into(),
        (!base.is_empty()).then(|| base.iter().sum::<f64>() / base.len() as f64),
    );
    out.insert("fhr_variability".into(), variability(fhr, baseline));
    out.insert("fhr_autocorr50".into(), autocorrelation(&x, AUTOCORR_LAG));
    out
}

/// Frequency bands in Hz: `[lf.0, lf.1)`, `[mf.0, mf.1)`, `[hf.0, hf.1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralBands {
    pub lf: (f64, f64),
    pub mf: (f64, f64),
    pub hf: (f64, f64),
}

impl Default for SpectralBands {
    fn default() -> Self {
        Self { lf: (0.03, 0.15), mf: (0.15, 0.5), hf: (0.5, 1.0) }
    }
}

/// Builds a contiguous series from the first to the last valid sample,
/// bridging invalid stretches linearly between valid neighbours.
fn bridged_series(sig: &CleanSignal) -> Vec<f64> {
    let idx: Vec<usize> = (0..sig.len()).filter(|&k| sig.valid[k] && sig.samples[k].is_finite()).collect();
    let (Some(&first), Some(&last)) = (idx.first(), idx.last()) else {
        return Vec::new();
    };
    let mut out = Vec::with_capacity(last - first + 1);
    for w in idx.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (va, vb) = (sig.samples[a], sig.samples[b]);
        for k in a..b {
            out.push(va + (vb - va) * (k - a) as f64 / (b - a) as f64);
        }
    }
    out.push(sig.samples[last]);
    out
}

fn detrend(x: &mut [f64]) {
    let n = x.len() as f64;
    let tm = (n - 1.0) / 2.0;
    let xm = x.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, v) in x.iter().enumerate() {
        let dt = t as f64 - tm;
        sxy += dt * (v - xm);
        sxx += dt * dt;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    for (t, v) in x.iter_mut().enumerate() {
        *v -= xm + slope * (t as f64 - tm);
    }
}

/// One-sided Hann-windowed periodogram (power spectral density) of a
/// linearly detrended series. Returns `(frequencies, density)`.
pub fn periodogram(x: &[f64], fs: f64) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    if n < 2 {
        return (Vec::new(), Vec::new());
    }
    let mut y = x.to_vec();
    detrend(&mut y);
    let w: Vec<f64> = (0..n)
        .map(|k| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos())
        .collect();
    let wss: f64 = w.iter().map(|v| v * v).sum();
    let mut buf: Vec<Complex<f64>> = y.iter().zip(&w).map(|(v, w)| Complex::new(v * w, 0.0)).collect();
    let fft: Arc<dyn rustfft::Fft<f64>> = FftPlanner::new().plan_fft_forward(n);
    fft.process(&mut buf);
    let bins = n / 2 + 1;
    let freqs = (0..bins).map(|j| j as f64 * fs / n as f64).collect();
    let psd = (0..bins)
        .map(|j| {
            let p = buf[j].norm_sqr() / (fs * wss);
            let edge = j == 0 || (n.is_multiple_of(2) && j == n / 2);
            if edge {
                p
            } else {
                2.0 * p
            }
        })
        .collect();
    (freqs, psd)
}

/// LF/MF/HF band powers of the detrended, gap-bridged FHR and the
/// LF/(MF+HF) ratio. Needs 10 minutes of valid data.
pub fn freq_features(fhr: &CleanSignal, bands: &SpectralBands) -> FeatureBag {
    let mut out: FeatureBag = ["fhr_lf_power", "fhr_mf_power", "fhr_hf_power", "fhr_lf_mfhf_ratio"]
        .iter()
        .map(|n| (n.to_string(), None))
        .collect();
    if (fhr.valid_count() as f64) < 600.0 * SAMPLE_RATE_HZ {
        return out;
    }
    let x = bridged_series(fhr);
    let (freqs, psd) = periodogram(&x, SAMPLE_RATE_HZ);
    let df = SAMPLE_RATE_HZ / x.len() as f64;
    let power = |lo: f64, hi: f64, closed: bool| -> f64 {
        freqs
            .iter()
            .zip(&psd)
            .filter(|(f, _)| **f >= lo && (**f < hi || (closed && **f <= hi)))
            .map(|(_, p)| p * df)
            .sum()
    };
    let lf = power(bands.lf.0, bands.lf.1, false);
    let mf = power(bands.mf.0, bands.mf.1, false);
    let hf = power(bands.hf.0, bands.hf.1, true);
    out.insert("fhr_lf_power".into(), finite(lf));
    out.insert("fhr_mf_power".into(), finite(mf));
    out.insert("fhr_hf_power".into(), finite(hf));
    out.insert("fhr_lf_mfhf_ratio".into(), (mf + hf > 0.0).then(|| lf / (mf + hf)).and_then(finite));
    out
}

/// Sample entropy with template length `m` and Chebyshev tolerance `r`.
/// Templates are compared over start indices `0..len-m` for both lengths.
/// Bucketing templates on a grid of side `r` limits comparisons to
/// neighbouring cells, which keeps long traces tractable.
pub fn sample_entropy(x: &[f64], m: usize, r: f64) -> Option<f64> {
    let n = x.len();
    if m == 0 || n <= m + 1 || !(r >= 0.0) {
        return None;
    }
    let count = n - m;
    // Templates are bucketed on their first one or two coordinates with a
    // cell slightly wider than r, so every matching pair sits in the same
    // or an adjacent cell even when |a - b| == r exactly.
    let cell = if r > 0.0 { r * (1.0 + 1e-9) } else { f64::MIN_POSITIVE };
    let key_dims = m.min(2);
    let key = |i: usize| {
        let c = |v: f64| (v / cell).floor() as i64;
        (c(x[i]), if key_dims == 2 { c(x[i + 1]) } else { 0 })
    };
    // Each cell holds its templates' m + 1 values back to back.
    let dim = m + 1;
    let mut grid: HashMap<(i64, i64), Vec<f64>> = HashMap::new();
    for i in 0..count {
        grid.entry(key(i)).or_default().extend_from_slice(&x[i..i + dim]);
    }
    let (mut b_pairs, mut a_pairs) = (0u64, 0u64);
    let mut tally = |u: &[f64], v: &[f64]| {
        if u[..m].iter().zip(&v[..m]).all(|(a, b)| (a - b).abs() <= r) {
            b_pairs += 1;
            a_pairs += u64::from((u[m] - v[m]).abs() <= r);
        }
    };
    // Half of the 3x3 neighbourhood, so each pair of cells is visited once.
    let forward: &[(i64, i64)] = if key_dims == 2 { &[(0, 1), (1, -1), (1, 0), (1, 1)] } else { &[(1, 0)] };
    for (&(cx, cy), members) in &grid {
        for (p, u) in members.chunks_exact(dim).enumerate() {
            for v in members[(p + 1) * dim..].chunks_exact(dim) {
                tally(u, v);
            }
        }
        for (dx, dy) in forward {
            if let Some(other) = grid.get(&(cx + dx, cy + dy)) {
                for u in members.chunks_exact(dim) {
                    for v in other.chunks_exact(dim) {
                        tally(u, v);
                    }
                }
            }
        }
    }
    (a_pairs > 0 && b_pairs > 0).then(|| -((a_pairs as f64) / (b_pairs as f64)).ln())
}

/// Sample entropy (m = 2, r = 0.2 * std) of the valid FHR samples.
pub fn entropy_feature(fhr: &CleanSignal) -> Option<f64> {
    let x: Vec<f64> = fhr.valid_values().collect();
    if x.len() < MIN_ENTROPY_SAMPLES {
        return None;
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
    if std == 0.0 {
        return None;
    }
    sample_entropy(&x, 2, 0.2 * std)
}

fn clinical_features(record: &CtgRecord) -> FeatureBag {
    let c = &record.clinical;
    let mut out = FeatureBag::new();
    out.insert("maternal_age".into(), c.maternal_age);
    out.insert("parity".into(), c.parity.map(f64::from));
    out.insert("gravidity".into(), c.gravidity.map(f64::from));
    out.insert("gestation".into(), c.gestation_weeks);
    out.insert("hypertension".into(), c.hypertension.map(|h| if h { 1.0 } else { 0.0 }));
    out.insert("stage1_min".into(), c.stage1_min);
    out.insert("stage2_min".into(), c.stage2_min);
    out
}

/// `delta_r1..delta_rn` plus the fitted window count; absent when no window
/// could be fitted.
pub fn arma_features(arma: Option<&ArmaFeatures>, n: usize) -> FeatureBag {
    let mut out = FeatureBag::new();
    for i in 0..n {
        out.insert(format!("delta_r{}", i + 1), arma.and_then(|a| a.delta_r.get(i).copied()).and_then(finite));
    }
    out.insert("arma_windows".into(), Some(arma.map_or(0.0, |a| a.window_count as f64)));
    out
}

/// Every feature this crate computes for one patient.
pub fn compute_feature_bag(
    record: &CtgRecord,
    fhr: &CleanSignal,
    events: &EventAnalysis,
    arma: Option<&ArmaFeatures>,
    arma_order: usize,
    bands: &SpectralBands,
) -> FeatureBag {
    let mut bag = FeatureBag::new();
    bag.insert("fhr_quality".into(), Some(fhr.quality));
    bag.extend(stat_features(fhr, &events.baseline));
    bag.extend(freq_features(fhr, bands));
    bag.insert("fhr_sample_entropy".into(), entropy_feature(fhr));
    bag.extend(events.summary(record.duration_s()));
    for (name, flag) in &events.flags {
        bag.insert(format!("figo_{name}"), Some(if *flag { 1.0 } else { 0.0 }));
    }
    bag.extend(arma_features(arma, arma_order));
    bag.extend(clinical_features(record));
    for v in bag.values_mut() {
        *v = v.and_then(finite);
    }
    bag
}

pub const FS1: [&str; 7] = [
    "fhr_range",
    "fhr_max",
    "fhr_median",
    "fhr_autocorr50",
    "contraction_mean_prominence",
    "delta_r1",
    "delta_r2",
];
pub const FS2_EXTRA: [&str; 3] = ["parity", "gestation", "hypertension"];
pub const FS3_EXTRA: [&str; 1] = ["stage1_min"];
pub const FS4_EXTRA: [&str; 1] = ["stage2_min"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSetSpec {
    pub name: String,
    pub features: Vec<String>,
}

impl FeatureSetSpec {
    /// FS1..FS4 for `level` in 1..=4.
    pub fn standard(level: usize) -> Result<Self, FeatureError> {
        if !(1..=4).contains(&level) {
            return Err(FeatureError::BadSpec(format!("no standard feature set fs{level}")));
        }
        let mut features: Vec<String> = FS1.iter().map(|s| s.to_string()).collect();
        let extras: [&[&str]; 3] = [&FS2_EXTRA, &FS3_EXTRA, &FS4_EXTRA];
        for extra in extras.iter().take(level - 1) {
            features.extend(extra.iter().map(|s| s.to_string()));
        }
        Ok(Self { name: format!("fs{level}"), features })
    }

    /// `fs1`..`fs4`, or `file:<path>` listing one feature name per line
    /// (`#` comments allowed).
    pub fn parse(spec: &str) -> Result<Self, FeatureError> {
        if let Some(path) = spec.strip_prefix("file:") {
            let text = std::fs::read_to_string(path)
                .map_err(|e| FeatureError::BadSpec(format!("{path}: {e}")))?;
            return Self::from_list(path, &text);
        }
        match spec.to_ascii_lowercase().as_str() {
            "fs1" => Self::standard(1),
            "fs2" => Self::standard(2),
            "fs3" => Self::standard(3),
            "fs4" => Self::standard(4),
            other => Err(FeatureError::BadSpec(format!("unknown feature set '{other}'"))),
        }
    }

    pub fn from_list(name: &str, text: &str) -> Result<Self, FeatureError> {
        let mut features = Vec::new();
        for line in text.lines() {
            let f = line.split('#').next().unwrap_or("").trim();
            if f.is_empty() {
                continue;
            }
            if features.iter().any(|x| x == f) {
                return Err(FeatureError::BadSpec(format!("duplicate feature '{f}'")));
            }
            features.push(f.to_string());
        }
        if features.is_empty() {
            return Err(FeatureError::BadSpec(format!("{name}: no features listed")));
        }
        Ok(Self { name: name.to_string(), features })
    }

    pub fn is_subset_of(&self, other: &FeatureSetSpec) -> bool {
        self.features.iter().all(|f| other.features.contains(f))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub patient_id: String,
    pub names: Vec<String>,
    pub values: Vec<Option<f64>>,
}

impl FeatureVector {
    pub fn get(&self, name: &str) -> Option<Option<f64>> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }
}

/// Selects the features of `spec` from a computed bag, in spec order.
pub fn assemble(patient_id: &str, bag: &FeatureBag, spec: &FeatureSetSpec) -> Result<FeatureVector, FeatureError> {
    let values = spec
        .features
        .iter()
        .map(|f| bag.get(f).copied().ok_or_else(|| FeatureError::NotComputed(f.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FeatureVector { patient_id: patient_id.to_string(), names: spec.features.clone(), values })
}

/// Writes `patient_id,<features...>` with absent values as empty cells.
pub fn features_csv(vectors: &[FeatureVector], spec: &FeatureSetSpec) -> String {
    let mut out = String::from("patient_id");
    for f in &spec.features {
        out.push(',');
        out.push_str(f);
    }
    out.push('\n');
    for v in vectors {
        out.push_str(&v.patient_id);
        for x in &v.values {
            out.push(',');
            if let Some(x) = x {
                out.push_str(&x.to_string());
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn clean(x: Vec<f64>) -> CleanSignal {
        let n = x.len();
        CleanSignal { samples: x, valid: vec![true; n], quality: 1.0 }
    }

    fn flat_baseline(n: usize, v: f64) -> Baseline {
        Baseline { values: vec![v; n] }
    }

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, 1.0).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn constant_signal_stats() {
        let s = stat_features(&clean(vec![140.0; 500]), &flat_baseline(500, 140.0));
        assert_eq!(s["fhr_range"], Some(0.0));
        assert_eq!(s["fhr_std"], Some(0.0));
        assert_eq!(s["fhr_autocorr50"], None);
    }

    #[test]
    fn linear_ramp_stats() {
        let x: Vec<f64> = (100..=200).map(f64::from).collect();
        let s = stat_features(&clean(x.clone()), &flat_baseline(x.len(), 150.0));
        assert_eq!(s["fhr_range"], Some(100.0));
        assert_eq!(s["fhr_median"], s["fhr_mean"]);
        assert_eq!(s["fhr_range"].unwrap(), s["fhr_max"].unwrap() - s["fhr_min"].unwrap());
    }

    #[test]
    fn too_few_samples_all_absent() {
        let s = stat_features(&clean(vec![140.0; 99]), &flat_baseline(99, 140.0));
        assert!(s.values().all(|v| v.is_none()));
    }

    #[test]
    fn alternation_autocorrelation_matches_formula() {
        // period 4: 1, 0, -1, 0; lag 50 = 2 mod 4, so the lag product is -x^2
        let x: Vec<f64> = (0..1000).map(|k| [1.0, 0.0, -1.0, 0.0][k % 4]).collect();
        let direct = {
            let n = x.len();
            let mean = x.iter().sum::<f64>() / n as f64;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let cov: f64 = (0..n - 50).map(|t| (x[t] - mean) * (x[t + 50] - mean)).sum();
            cov / ((n - 50) as f64 * var)
        };
        let got = autocorrelation(&x, 50).unwrap();
        assert!((got - direct).abs() < 1e-12);
        assert!((got - (-1.0)).abs() < 0.01, "≈ autocorrelation at lag 2: {got}");
    }

    #[test]
    fn sinusoid_power_sits_in_lf() {
        let x: Vec<f64> = (0..4800)
            .map(|k| 140.0 + 5.0 * (2.0 * std::f64::consts::PI * 0.1 * k as f64 / SAMPLE_RATE_HZ).sin())
            .collect();
        let f = freq_features(&clean(x), &SpectralBands::default());
        let (lf, mf, hf) = (f["fhr_lf_power"].unwrap(), f["fhr_mf_power"].unwrap(), f["fhr_hf_power"].unwrap());
        assert!(lf / (lf + mf + hf) > 0.95);
        // Parseval-style sanity: a 5 bpm sine carries 12.5 bpm^2
        assert!((lf + mf + hf - 12.5).abs() < 0.5, "{}", lf + mf + hf);
    }

    #[test]
    fn white_noise_power_tracks_bandwidth() {
        let bands = SpectralBands::default();
        let (mut lf, mut mf, mut hf) = (0.0, 0.0, 0.0);
        for seed in 0..50 {
            let f = freq_features(&clean(noise(4800, seed)), &bands);
            lf += f["fhr_lf_power"].unwrap();
            mf += f["fhr_mf_power"].unwrap();
            hf += f["fhr_hf_power"].unwrap();
        }
        let density = [lf / 0.12, mf / 0.35, hf / 0.5];
        let mean = density.iter().sum::<f64>() / 3.0;
        for d in density {
            assert!((d / mean - 1.0).abs() < 0.1, "{density:?}");
        }
    }

    #[test]
    fn zero_signal_zero_power_and_short_signal_absent() {
        let f = freq_features(&clean(vec![0.0; 2400]), &SpectralBands::default());
        assert_eq!(f["fhr_lf_power"], Some(0.0));
        assert_eq!(f["fhr_mf_power"], Some(0.0));
        assert_eq!(f["fhr_hf_power"], Some(0.0));
        assert_eq!(f["fhr_lf_mfhf_ratio"], None);
        let f = freq_features(&clean(vec![0.0; 2399]), &SpectralBands::default());
        assert!(f.values().all(|v| v.is_none()));
    }

    fn naive_sampen(x: &[f64], m: usize, r: f64) -> Option<f64> {
        let count = x.len() - m;
        let close = |i: usize, j: usize, len: usize| (0..len).all(|l| (x[i + l] - x[j + l]).abs() <= r);
        let (mut a, mut b) = (0u64, 0u64);
        for i in 0..count {
            for j in i + 1..count {
                if close(i, j, m) {
                    b += 1;
                }
                if close(i, j, m + 1) {
                    a += 1;
                }
            }
        }
        (a > 0 && b > 0).then(|| -(a as f64 / b as f64).ln())
    }

    #[test]
    fn sample_entropy_matches_quadratic_oracle() {
        for seed in 0..5 {
            let x: Vec<f64> = noise(400, seed).iter().map(|v| (v * 4.0).round() / 4.0).collect();
            for r in [0.2, 0.5] {
                assert_eq!(sample_entropy(&x, 2, r), naive_sampen(&x, 2, r));
            }
        }
    }

    #[test]
    fn periodic_signal_less_entropic_than_noise() {
        let periodic: Vec<f64> = (0..1000).map(|k| (2.0 * std::f64::consts::PI * k as f64 / 25.0).sin()).collect();
        let std = (0.5f64).sqrt();
        let white: Vec<f64> = noise(1000, 9).iter().map(|v| v * std).collect();
        let p = entropy_feature(&clean(periodic)).unwrap();
        let w = entropy_feature(&clean(white)).unwrap();
        assert!(p < w, "{p} vs {w}");
    }

    #[test]
    fn noise_entropy_is_stable_across_seeds() {
        let a = entropy_feature(&clean(noise(2000, 1))).unwrap();
        let b = entropy_feature(&clean(noise(2000, 2))).unwrap();
        assert!((a - b).abs() / a.max(b) < 0.10, "{a} {b}");
    }

    #[test]
    fn constant_signal_has_no_entropy() {
        assert_eq!(entropy_feature(&clean(vec![140.0; 500])), None);
    }

    #[test]
    fn feature_sets_nest() {
        let sets: Vec<_> = (1..=4).map(|l| FeatureSetSpec::standard(l).unwrap()).collect();
        assert_eq!(sets[0].features.len(), 7);
        for w in sets.windows(2) {
            assert!(w[0].is_subset_of(&w[1]));
        }
        let diff: Vec<_> = sets[3].features.iter().filter(|f| !sets[2].features.contains(f)).collect();
        assert_eq!(diff, vec!["stage2_min"]);
        assert!(FeatureSetSpec::parse("fs5").is_err());
    }

    #[test]
    fn assemble_propagates_absent_and_rejects_unknown() {
        let mut bag = FeatureBag::new();
        for f in FeatureSetSpec::standard(2).unwrap().features {
            bag.insert(f, Some(1.0));
        }
        bag.insert("gestation".into(), None);
        let v = assemble("p1", &bag, &FeatureSetSpec::standard(2).unwrap()).unwrap();
        assert_eq!(v.get("gestation"), Some(None));
        assert_eq!(v.values.len(), 10);
        let err = assemble("p1", &bag, &FeatureSetSpec::standard(3).unwrap()).unwrap_err();
        assert!(matches!(err, FeatureError::NotComputed(ref f) if f == "stage1_min"));
    }

    #[test]
    fn list_spec_parsing() {
        let s = FeatureSetSpec::from_list("x", "delta_r1\n# comment\n  parity  # inline\n\n").unwrap();
        assert_eq!(s.features, vec!["delta_r1", "parity"]);
        assert!(FeatureSetSpec::from_list("x", "a\na\n").is_err());
    }
}
