//! Windowed least-squares ARMA model of the FHR response to UC.
//!
//! For each window the model
//!
//! ```text
//! FHR(k) = a_1 FHR(k-1) + ... + a_n FHR(k-n) + b_1 UC(k-1) + ... + b_m UC(k-m) + e(k)
//! ```
//!
//! is fitted by least squares. The poles are the roots of
//! `z^n - a_1 z^(n-1) - ... - a_n` (so an AR(1) with `a_1 = 0.9` has its pole
//! at 0.9); [`PoleConvention::Literal`] switches to `z^n + a_1 z^(n-1) + ...`
//! instead. Pole magnitudes are sorted descending in every window, and
//! `delta_r[i]` is the range of the i-th magnitude across windows.

use std::ops::Range;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::preprocess::CleanSignal;

#[derive(Debug, thiserror::Error)]
pub enum ArmaError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("window has {have} usable rows, needs {need}")]
    InsufficientRows { have: usize, need: usize },
    #[error("regressor matrix is rank deficient at column {column} ({name}): {detail}")]
    Singular { column: usize, name: String, detail: String },
    #[error("fhr has {fhr} samples but uc has {uc}")]
    LengthMismatch { fhr: usize, uc: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PoleConvention {
    /// `z^n - a_1 z^(n-1) - ... - a_n`, consistent with the recursion.
    #[default]
    Dynamics,
    /// `z^n + a_1 z^(n-1) + ... + a_n`.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmaConfig {
    /// AR order.
    pub n: usize,
    /// Exogenous (UC) order.
    pub m: usize,
    pub window_len: usize,
    pub ridge: f64,
    /// Fraction of `window_len` shared by consecutive windows.
    pub overlap: f64,
    pub convention: PoleConvention,
    /// A window needs at least `min_rows_factor * (n + m)` usable rows.
    pub min_rows_factor: usize,
}

impl Default for ArmaConfig {
    fn default() -> Self {
        Self {
            n: 2,
            m: 1,
            window_len: 5000,
            ridge: 0.0,
            overlap: 0.0,
            convention: PoleConvention::Dynamics,
            min_rows_factor: 10,
        }
    }
}

impl ArmaConfig {
    pub fn validate(&self) -> Result<(), ArmaError> {
        if self.n == 0 || self.m == 0 {
            return Err(ArmaError::Config(format!("orders must be >= 1 (n={}, m={})", self.n, self.m)));
        }
        if self.window_len <= self.n + self.m {
            return Err(ArmaError::Config(format!(
                "window_len {} must exceed n + m = {}",
                self.window_len,
                self.n + self.m
            )));
        }
        if !(self.ridge >= 0.0) {
            return Err(ArmaError::Config(format!("ridge must be >= 0, got {}", self.ridge)));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(ArmaError::Config(format!("overlap must lie in [0, 1), got {}", self.overlap)));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.n + self.m
    }

    fn column_name(&self, column: usize) -> String {
        if column < self.n {
            format!("fhr lag {}", column + 1)
        } else {
            format!("uc lag {}", column - self.n + 1)
        }
    }

    /// Start indices of every full window in a trace of `len` samples.
    pub fn window_starts(&self, len: usize) -> Vec<usize> {
        let step = ((self.window_len as f64) * (1.0 - self.overlap)).round().max(1.0) as usize;
        let mut starts = Vec::new();
        let mut s = 0;
        while s + self.window_len <= len {
            starts.push(s);
            s += step;
        }
        starts
    }
}

/// Regressor matrix and target for one window. `rows[r]` is the sample
/// index `k` that row `r` predicts.
#[derive(Debug, Clone, PartialEq)]
pub struct Regression {
    pub phi: DMatrix<f64>,
    pub y: DVector<f64>,
    pub rows: Vec<usize>,
}

impl Regression {
    /// Subtracts each column mean (and the target mean). Fitting the result
    /// is equivalent to fitting the original with a free intercept.
    pub fn centered(&self) -> Regression {
        let mut phi = self.phi.clone();
        for mut col in phi.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        let mean = self.y.mean();
        Regression { phi, y: self.y.add_scalar(-mean), rows: self.rows.clone() }
    }
}

/// Builds the rows `[FHR(k-1)..FHR(k-n), UC(k-1)..UC(k-m)] -> FHR(k)` for
/// every `k` in the window whose lags also fall in the window and whose
/// samples are all valid.
pub fn build_regressor(
    fhr: &CleanSignal,
    uc: &CleanSignal,
    window: Range<usize>,
    config: &ArmaConfig,
) -> Result<Regression, ArmaError> {
    if fhr.len() != uc.len() {
        return Err(ArmaError::LengthMismatch { fhr: fhr.len(), uc: uc.len() });
    }
    let (n, m) = (config.n, config.m);
    let p = n + m;
    let lag = n.max(m);
    let end = window.end.min(fhr.len());
    let ok_f = |k: usize| fhr.valid[k] && fhr.samples[k].is_finite();
    let ok_u = |k: usize| uc.valid[k] && uc.samples[k].is_finite();

    let mut rows = Vec::new();
    for k in (window.start + lag)..end {
        if ok_f(k) && (1..=n).all(|i| ok_f(k - i)) && (1..=m).all(|j| ok_u(k - j)) {
            rows.push(k);
        }
    }
    let need = config.min_rows_factor * p;
    if rows.len() < need.max(p) {
        return Err(ArmaError::InsufficientRows { have: rows.len(), need: need.max(p) });
    }
    let phi = DMatrix::from_fn(rows.len(), p, |r, c| {
        let k = rows[r];
        if c < n {
            fhr.samples[k - c - 1]
        } else {
            uc.samples[k - (c - n) - 1]
        }
    });
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|&k| fhr.samples[k]));
    Ok(Regression { phi, y, rows })
}

const RANK_TOL: f64 = 1e-10;

/// Least-squares solve of `phi * theta ~ y` (plus `ridge * |theta|^2`)
/// through a Householder QR factorization.
pub fn fit_window(phi: &DMatrix<f64>, y: &DVector<f64>, ridge: f64) -> Result<DVector<f64>, ArmaError> {
    fit_window_named(phi, y, ridge, &|c| format!("column {c}"))
}

fn fit_window_named(
    phi: &DMatrix<f64>,
    y: &DVector<f64>,
    ridge: f64,
    name: &dyn Fn(usize) -> String,
) -> Result<DVector<f64>, ArmaError> {
    let p = phi.ncols();
    if phi.nrows() < p {
        return Err(ArmaError::InsufficientRows { have: phi.nrows(), need: p });
    }
    let (a, mut b) = if ridge > 0.0 {
        let rows = phi.nrows();
        let mut a = DMatrix::zeros(rows + p, p);
        a.view_mut((0, 0), (rows, p)).copy_from(phi);
        let s = ridge.sqrt();
        for i in 0..p {
            a[(rows + i, i)] = s;
        }
        let mut b = DVector::zeros(rows + p);
        b.rows_mut(0, rows).copy_from(y);
        (a, b)
    } else {
        (phi.clone(), y.clone())
    };

    let scale = a.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    if let Some(c) = a.column_iter().position(|c| c.norm() == 0.0) {
        return Err(ArmaError::Singular { column: c, name: name(c), detail: "column is identically zero".into() });
    }
    let qr = a.qr();
    let r = qr.r();
    for i in 0..p {
        if r[(i, i)].abs() <= RANK_TOL * scale {
            return Err(ArmaError::Singular {
                column: i,
                name: name(i),
                detail: format!(
                    "collinear with earlier columns (|R[{i},{i}]| = {:.3e}, largest column norm {scale:.3e})",
                    r[(i, i)].abs()
                ),
            });
        }
    }
    qr.q_tr_mul(&mut b);
    let rhs = b.rows(0, p).into_owned();
    r.solve_upper_triangular(&rhs).ok_or_else(|| ArmaError::Singular {
        column: 0,
        name: name(0),
        detail: "triangular solve failed".into(),
    })
}

/// Roots of the characteristic polynomial built from the first `n`
/// coefficients of `theta`, via the eigenvalues of its companion matrix.
pub fn pole_roots(theta: &[f64], n: usize, convention: PoleConvention) -> Vec<Complex<f64>> {
    assert!(theta.len() >= n, "theta has {} entries, need at least {n}", theta.len());
    if n == 0 {
        return Vec::new();
    }
    let sign = match convention {
        PoleConvention::Dynamics => 1.0,
        PoleConvention::Literal => -1.0,
    };
    let mut companion = DMatrix::zeros(n, n);
    for i in 0..n {
        companion[(0, i)] = sign * theta[i];
    }
    for i in 1..n {
        companion[(i, i - 1)] = 1.0;
    }
    companion.complex_eigenvalues().iter().copied().collect()
}

/// Pole magnitudes, sorted descending.
pub fn poles(theta: &[f64], n: usize, convention: PoleConvention) -> Vec<f64> {
    let mut mags: Vec<f64> = pole_roots(theta, n, convention).iter().map(|z| z.norm()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    mags
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowModel {
    /// Window index within the trace.
    pub p: usize,
    /// `[a_1..a_n, b_1..b_m]`.
    pub theta: Vec<f64>,
    /// Pole magnitudes, descending.
    pub pole_mags: Vec<f64>,
    pub residual_var: f64,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmaFeatures {
    pub delta_r: Vec<f64>,
    pub window_count: usize,
}

/// Range of each sorted pole magnitude across windows; `None` for an empty
/// model list.
pub fn delta_r(models: &[WindowModel], n: usize) -> Option<ArmaFeatures> {
    if models.is_empty() {
        return None;
    }
    let delta_r = (0..n)
        .map(|i| {
            let (lo, hi) = models.iter().map(|m| m.pole_mags[i]).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
            hi - lo
        })
        .collect();
    Some(ArmaFeatures { delta_r, window_count: models.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedWindow {
    pub p: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmaRun {
    pub attempted: usize,
    pub windows: Vec<WindowModel>,
    pub skipped: Vec<SkippedWindow>,
    pub features: Option<ArmaFeatures>,
}

/// Fits one window: regressor, per-window centering, QR solve, poles.
pub fn fit_one_window(
    fhr: &CleanSignal,
    uc: &CleanSignal,
    p: usize,
    start: usize,
    config: &ArmaConfig,
) -> Result<WindowModel, ArmaError> {
    let reg = build_regressor(fhr, uc, start..start + config.window_len, config)?.centered();
    let theta = fit_window_named(&reg.phi, &reg.y, config.ridge, &|c| config.column_name(c))?;
    let resid = &reg.y - &reg.phi * &theta;
    let residual_var = resid.norm_squared() / reg.rows.len() as f64;
    let theta: Vec<f64> = theta.iter().copied().collect();
    let pole_mags = poles(&theta, config.n, config.convention);
    Ok(WindowModel { p, theta, pole_mags, residual_var, rows: reg.rows.len() })
}

/// Partitions the trace into full windows, fits each, and aggregates the
/// pole-magnitude ranges over the windows that could be fitted.
pub fn arma_pipeline(fhr: &CleanSignal, uc: &CleanSignal, config: &ArmaConfig) -> Result<ArmaRun, ArmaError> {
    config.validate()?;
    if fhr.len() != uc.len() {
        return Err(ArmaError::LengthMismatch { fhr: fhr.len(), uc: uc.len() });
    }
    let starts = config.window_starts(fhr.len());
    let fit = |(p, start): (usize, &usize)| (p, fit_one_window(fhr, uc, p, *start, config));

    #[cfg(feature = "parallel")]
    let results: Vec<_> = {
        use rayon::prelude::*;
        starts.par_iter().enumerate().map(fit).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<_> = starts.iter().enumerate().map(fit).collect();

    let mut windows = Vec::new();
    let mut skipped = Vec::new();
    for (p, r) in results {
        match r {
            Ok(w) => windows.push(w),
            Err(e) => skipped.push(SkippedWindow { p, reason: e.to_string() }),
        }
    }
    let features = delta_r(&windows, config.n);
    Ok(ArmaRun { attempted: starts.len(), windows, skipped, features })
}
