//! Synthetic CTG generation with known ARMA dynamics.
//!
//! The FHR deviation from baseline follows
//! `x(k) = sum_i alpha_i x(k-i) + sum_j beta_j UC(k-j) + noise(k)`, so a
//! noise-free record with zero baseline obeys the ARMA recursion exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ClinicalVars, CtgRecord, DeliveryType, IngestError, Outcomes};
use crate::SAMPLE_RATE_HZ;

/// Switches the AR coefficients part-way through a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSwitch {
    pub at_s: f64,
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub patient_id: String,
    pub duration_s: f64,
    pub baseline_bpm: f64,
    /// Mean spacing between contraction peaks.
    pub contraction_interval_s: f64,
    /// Uniform jitter (+/-) applied to each contraction peak time.
    pub contraction_jitter_s: f64,
    pub contraction_amplitude: f64,
    /// Gaussian width (sigma) of each contraction bump.
    pub contraction_width_s: f64,
    pub uc_tone: f64,
    pub uc_noise_sd: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub regime_switch: Option<RegimeSwitch>,
    /// Depth of an added deceleration template following each contraction.
    pub decel_depth_bpm: f64,
    /// Delay from contraction peak to the deceleration template's onset.
    pub decel_lag_s: f64,
    pub decel_width_s: f64,
    /// Standard deviation of the equation noise driving the ARMA recursion.
    pub noise_sd: f64,
    pub seed: u64,
    pub clinical: ClinicalVars,
    pub outcomes: Outcomes,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            patient_id: "synth".into(),
            duration_s: 3600.0,
            baseline_bpm: 140.0,
            contraction_interval_s: 180.0,
            contraction_jitter_s: 20.0,
            contraction_amplitude: 40.0,
            contraction_width_s: 20.0,
            uc_tone: 10.0,
            uc_noise_sd: 1.0,
            alpha: vec![1.1, -0.28],
            beta: vec![-0.05],
            regime_switch: None,
            decel_depth_bpm: 0.0,
            decel_lag_s: 0.0,
            decel_width_s: 15.0,
            noise_sd: 1.0,
            seed: 0,
            clinical: ClinicalVars::default(),
            outcomes: Outcomes::default(),
        }
    }
}

/// Derives an independent seed for a named substream of a run seed
/// (splitmix64 over the seed, an FNV-1a hash of the name, and an index).
pub fn substream_seed(seed: u64, name: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for _ in 0..2 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

fn gaussian_bump(t: f64, center: f64, width: f64) -> f64 {
    let z = (t - center) / width;
    (-0.5 * z * z).exp()
}

pub fn synth_record(config: &SynthConfig) -> Result<CtgRecord, IngestError> {
    let c = config;
    if !(c.duration_s > 0.0) {
        return Err(IngestError::Config(format!("duration_s must be positive, got {}", c.duration_s)));
    }
    if c.alpha.is_empty() || c.beta.is_empty() {
        return Err(IngestError::Config("alpha and beta need at least one coefficient".into()));
    }
    if let Some(sw) = &c.regime_switch {
        if sw.alpha.len() != c.alpha.len() {
            return Err(IngestError::Config("regime switch must keep the AR order".into()));
        }
    }
    let len = (c.duration_s * SAMPLE_RATE_HZ).round() as usize;
    if len == 0 {
        return Err(IngestError::Config("duration shorter than one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut peaks = Vec::new();
    let mut amps = Vec::new();
    if c.contraction_interval_s > 0.0 {
        let mut t = 0.5 * c.contraction_interval_s;
        while t < c.duration_s {
            let jitter = if c.contraction_jitter_s > 0.0 {
                rng.random_range(-c.contraction_jitter_s..=c.contraction_jitter_s)
            } else {
                0.0
            };
            peaks.push(t + jitter);
            amps.push(c.contraction_amplitude * rng.random_range(0.8..=1.2));
            t += c.contraction_interval_s;
        }
    }

    let times: Vec<f64> = (0..len).map(|k| k as f64 / SAMPLE_RATE_HZ).collect();
    let uc: Vec<f64> = times
        .iter()
        .map(|&t| {
            let bumps: f64 = peaks
                .iter()
                .zip(&amps)
                .filter(|(p, _)| (t - **p).abs() < 6.0 * c.contraction_width_s)
                .map(|(p, a)| a * gaussian_bump(t, *p, c.contraction_width_s))
                .sum();
            let noise = if c.uc_noise_sd > 0.0 { c.uc_noise_sd * std_normal.sample(&mut rng) } else { 0.0 };
            c.uc_tone + bumps + noise
        })
        .collect();

    let order = c.alpha.len().max(c.beta.len());
    let switch_at = c
        .regime_switch
        .as_ref()
        .map(|s| ((s.at_s * SAMPLE_RATE_HZ).round() as usize, s.alpha.as_slice()));
    let mut x = vec![0.0; len];
    for k in order..len {
        let alpha = match switch_at {
            Some((at, a)) if k >= at => a,
            _ => c.alpha.as_slice(),
        };
        let ar: f64 = alpha.iter().enumerate().map(|(i, a)| a * x[k - i - 1]).sum();
        let ex: f64 = c.beta.iter().enumerate().map(|(j, b)| b * uc[k - j - 1]).sum();
        let noise = if c.noise_sd > 0.0 { c.noise_sd * std_normal.sample(&mut rng) } else { 0.0 };
        x[k] = ar + ex + noise;
    }

    let fhr: Vec<Option<f64>> = times
        .iter()
        .zip(&x)
        .map(|(&t, &dev)| {
            let decel = if c.decel_depth_bpm != 0.0 {
                peaks
                    .iter()
                    .map(|p| p + c.decel_lag_s + 2.0 * c.decel_width_s)
                    .filter(|centre| (t - centre).abs() < 6.0 * c.decel_width_s)
                    .map(|centre| c.decel_depth_bpm * gaussian_bump(t, centre, c.decel_width_s))
                    .sum::<f64>()
            } else {
                0.0
            };
            Some(c.baseline_bpm + dev - decel)
        })
        .collect();

    CtgRecord::new(
        c.patient_id.clone(),
        fhr,
        uc.into_iter().map(Some).collect(),
        c.clinical.clone(),
        c.outcomes,
    )
}

/// Parameters for a synthetic labelled cohort. At-risk patients carry an
/// AR regime switch half-way through the record; normal patients are
/// stationary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortConfig {
    pub patients: usize,
    pub at_risk_fraction: f64,
    /// Fraction of patients whose outcomes fall between the label rules.
    pub ambiguous_fraction: f64,
    pub duration_s: f64,
    /// Pole magnitudes (real, distinct) of the stationary dynamics.
    pub normal_poles: [f64; 2],
    /// Pole magnitudes after the regime switch for at-risk patients.
    pub at_risk_poles: [f64; 2],
    pub beta: f64,
    pub noise_sd: f64,
    /// Upper bound on the fraction of FHR samples dropped as artifacts.
    pub max_missing_fraction: f64,
    pub seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            patients: 40,
            at_risk_fraction: 0.3,
            ambiguous_fraction: 0.1,
            duration_s: 5400.0,
            normal_poles: [0.7, 0.4],
            at_risk_poles: [0.4, 0.1],
            beta: -0.05,
            noise_sd: 1.0,
            max_missing_fraction: 0.0,
            seed: 0,
        }
    }
}

fn alpha_from_poles(p: [f64; 2]) -> Vec<f64> {
    vec![p[0] + p[1], -p[0] * p[1]]
}

#[derive(Clone, Copy, PartialEq)]
enum CohortClass {
    Normal,
    AtRisk,
    Ambiguous,
}

/// Generates a labelled cohort. Patient ids are zero-padded so that string
/// order equals generation order.
pub fn synth_cohort(config: &CohortConfig) -> Result<Vec<CtgRecord>, IngestError> {
    let c = config;
    if c.patients == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(c.seed, "cohort", 0));
    let n_risk = ((c.patients as f64) * c.at_risk_fraction).round() as usize;
    let n_amb = ((c.patients as f64) * c.ambiguous_fraction).round() as usize;
    let mut classes: Vec<CohortClass> = (0..c.patients)
        .map(|i| {
            if i < n_risk {
                CohortClass::AtRisk
            } else if i < n_risk + n_amb {
                CohortClass::Ambiguous
            } else {
                CohortClass::Normal
            }
        })
        .collect();
    // Fisher-Yates so classes are interleaved over ids.
    for i in (1..classes.len()).rev() {
        let j = rng.random_range(0..=i);
        classes.swap(i, j);
    }

    let mut out = Vec::with_capacity(c.patients);
    for (i, class) in classes.into_iter().enumerate() {
        let seed = substream_seed(c.seed, "patient", i as u64);
        let mut prng = ChaCha8Rng::seed_from_u64(substream_seed(seed, "meta", 0));
        let (ph, apgar5): (f64, u8) = match class {
            CohortClass::Normal => (prng.random_range(7.15..7.40), prng.random_range(9..=10)),
            CohortClass::AtRisk => (prng.random_range(6.85..=7.0), prng.random_range(4..=9)),
            CohortClass::Ambiguous => (prng.random_range(7.05..7.14), prng.random_range(7..=8)),
        };
        let at_risk = class == CohortClass::AtRisk;
        let clinical = ClinicalVars {
            maternal_age: Some(prng.random_range(18.0f64..42.0).round()),
            parity: Some(prng.random_range(0..=3)),
            gravidity: Some(prng.random_range(1..=4)),
            gestation_weeks: Some(prng.random_range(37.0f64..42.0).round()),
            hypertension: Some(prng.random_bool(if at_risk { 0.25 } else { 0.08 })),
            delivery_type: Some(if prng.random_bool(0.2) { DeliveryType::Operative } else { DeliveryType::Vaginal }),
            stage1_min: Some(prng.random_range(60.0f64..600.0).round()),
            stage2_min: Some(
                (prng.random_range(5.0f64..40.0) + if at_risk { 15.0 } else { 0.0 }).round(),
            ),
        };
        let regime_switch = at_risk.then(|| RegimeSwitch {
            at_s: c.duration_s / 2.0,
            alpha: alpha_from_poles(c.at_risk_poles),
        });
        let cfg = SynthConfig {
            patient_id: format!("p{i:05}"),
            duration_s: c.duration_s,
            baseline_bpm: prng.random_range(120.0..150.0),
            alpha: alpha_from_poles(c.normal_poles),
            beta: vec![c.beta],
            regime_switch,
            noise_sd: c.noise_sd,
            seed: substream_seed(seed, "signal", 0),
            clinical,
            outcomes: Outcomes { ph: Some((ph * 100.0).round() / 100.0), apgar5: Some(apgar5) },
            ..SynthConfig::default()
        };
        let rec = synth_record(&cfg)?;
        out.push(if c.max_missing_fraction > 0.0 {
            inject_artifacts(rec, c.max_missing_fraction, &mut prng)?
        } else {
            rec
        });
    }
    Ok(out)
}

/// Drops random FHR segments until a drawn missing fraction is reached, and
/// sprinkles a few out-of-range spikes.
fn inject_artifacts(
    rec: CtgRecord,
    max_missing: f64,
    rng: &mut ChaCha8Rng,
) -> Result<CtgRecord, IngestError> {
    let len = rec.len();
    let mut fhr = rec.fhr().to_vec();
    let target = (rng.random_range(0.0..max_missing) * len as f64) as usize;
    let mut missing = 0usize;
    while missing < target {
        let seg = rng.random_range(8usize..480).min(target - missing).max(1);
        let start = rng.random_range(0..len.saturating_sub(seg).max(1));
        for v in &mut fhr[start..start + seg] {
            if v.take().is_some() {
                missing += 1;
            }
        }
    }
    for _ in 0..rng.random_range(0..5) {
        let k = rng.random_range(0..len);
        if fhr[k].is_some() {
            fhr[k] = Some(if rng.random_bool(0.5) { 30.0 } else { 230.0 });
        }
    }
    CtgRecord::new(rec.patient_id().to_string(), fhr, rec.uc().to_vec(), rec.clinical.clone(), rec.outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_response_is_flat_baseline() {
        let cfg = SynthConfig {
            alpha: vec![0.0, 0.0],
            beta: vec![0.0],
            noise_sd: 0.0,
            duration_s: 600.0,
            ..SynthConfig::default()
        };
        let rec = synth_record(&cfg).unwrap();
        assert!(rec.fhr().iter().all(|v| *v == Some(140.0)));
    }

    #[test]
    fn noise_free_record_obeys_recursion() {
        let cfg = SynthConfig {
            baseline_bpm: 0.0,
            noise_sd: 0.0,
            alpha: vec![1.1, -0.28],
            beta: vec![-0.05],
            duration_s: 900.0,
            ..SynthConfig::default()
        };
        let rec = synth_record(&cfg).unwrap();
        let f: Vec<f64> = rec.fhr().iter().map(|v| v.unwrap()).collect();
        let u: Vec<f64> = rec.uc().iter().map(|v| v.unwrap()).collect();
        for k in 2..f.len() {
            let pred = 1.1 * f[k - 1] - 0.28 * f[k - 2] - 0.05 * u[k - 1];
            assert!((f[k] - pred).abs() <= 1e-12 * (1.0 + f[k].abs()), "k={k}");
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = SynthConfig { seed: 42, duration_s: 300.0, ..SynthConfig::default() };
        assert_eq!(synth_record(&cfg).unwrap(), synth_record(&cfg).unwrap());
        let other = SynthConfig { seed: 43, ..cfg.clone() };
        assert_ne!(synth_record(&cfg).unwrap(), synth_record(&other).unwrap());
    }

    #[test]
    fn non_positive_duration_is_config_error() {
        let cfg = SynthConfig { duration_s: 0.0, ..SynthConfig::default() };
        assert!(matches!(synth_record(&cfg), Err(IngestError::Config(_))));
    }

    #[test]
    fn cohort_is_deterministic_and_sized() {
        let cfg = CohortConfig { patients: 6, duration_s: 600.0, seed: 3, ..CohortConfig::default() };
        let a = synth_cohort(&cfg).unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(a, synth_cohort(&cfg).unwrap());
        let ids: Vec<_> = a.iter().map(|r| r.patient_id().to_string()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
    }
}
