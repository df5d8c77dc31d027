//! Run configuration and its flat `key = value` text form.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::arma::{ArmaConfig, PoleConvention};
use crate::events::EventConfig;
use crate::features::{FeatureSetSpec, SpectralBands};
use crate::ml::{EnsembleMethod, EvalConfig, Kernel, LogRegConfig, ModelConfig, SelectionConfig, SvmConfig};
use crate::preprocess::PreprocessConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    #[default]
    Loo,
    #[serde(rename = "5fold")]
    FiveFold,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Loo => "loo",
            EvalMode::FiveFold => "5fold",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Logreg,
    Svm,
}

/// Everything that determines a run. Persisted in the manifest; loading it
/// back reproduces the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub preprocess: PreprocessConfig,
    pub events: EventConfig,
    pub arma: ArmaConfig,
    pub bands: SpectralBands,
    /// `fs1`..`fs4` or `file:<path>`.
    pub features: String,
    pub model: ModelKind,
    pub logreg: LogRegConfig,
    pub svm: SvmConfig,
    pub mode: EvalMode,
    pub ensemble: EnsembleMethod,
    pub inner_folds: usize,
    pub outer_folds: usize,
    /// Patients below this FHR quality are left out of evaluation.
    pub quality_min: f64,
    /// Prune and forward-select inside every training set.
    pub select: bool,
    pub prune_threshold: f64,
    /// Size of the SVM training set for the quality-tier table.
    pub table_ii_train: usize,
    pub table_ii_min_at_risk: usize,
    pub table_ii_tiers: Vec<f64>,
    pub seed: u64,
    /// Worker threads; 0 lets the runtime decide.
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data"),
            out: PathBuf::from("run"),
            preprocess: PreprocessConfig::default(),
            events: EventConfig::default(),
            arma: ArmaConfig::default(),
            bands: SpectralBands::default(),
            features: "fs1".into(),
            model: ModelKind::Logreg,
            logreg: LogRegConfig::default(),
            svm: SvmConfig::default(),
            mode: EvalMode::Loo,
            ensemble: EnsembleMethod::AverageProb,
            inner_folds: 5,
            outer_folds: 5,
            quality_min: 0.0,
            select: false,
            prune_threshold: 0.88,
            table_ii_train: 35,
            table_ii_min_at_risk: 5,
            table_ii_tiers: vec![0.0, 0.75, 0.80],
            seed: 0,
            jobs: 0,
        }
    }
}

/// Every configuration key with a one-line description. The CLI exposes
/// each as `--<key with dashes>`.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("dataset", "dataset directory (clinical.csv plus one <id>.csv per patient)"),
    ("out", "output directory"),
    ("spike_window_s", "trailing moving-average window for the spike rule, seconds"),
    ("spike_ratio", "relative deviation from the moving average that marks a spike"),
    ("max_interp_s", "longest gap bridged by linear interpolation, seconds"),
    ("mhr_step_bpm", "jump between consecutive samples that bounds a maternal segment"),
    ("mhr_drop_bpm", "drop below the baseline median that marks a maternal segment"),
    ("mhr_min_run_s", "minimum maternal segment length, seconds"),
    ("event_min_duration_s", "minimum event duration, seconds"),
    ("event_min_prominence_ratio", "prominence threshold as a fraction of the reference level"),
    ("event_edge_fraction", "fraction of the prominence threshold that delimits an event"),
    ("uc_min_prominence", "floor on the contraction prominence threshold"),
    ("arma_n", "AR order"),
    ("arma_m", "UC input order"),
    ("arma_window", "ARMA window length, samples"),
    ("arma_ridge", "ridge penalty for the ARMA least squares"),
    ("arma_overlap", "fraction of the window shared by consecutive windows"),
    ("arma_convention", "pole polynomial sign convention: dynamics or literal"),
    ("arma_min_rows_factor", "a window needs this many rows per parameter"),
    ("features", "feature set: fs1, fs2, fs3, fs4 or file:<path>"),
    ("model", "classifier: logreg or svm"),
    ("l2", "logistic-regression L2 strength"),
    ("class_weights", "balanced or none"),
    ("svm_c", "SVM penalty C"),
    ("svm_kernel", "linear or rbf"),
    ("svm_gamma", "RBF gamma, or auto"),
    ("mode", "evaluation protocol: loo or 5fold"),
    ("ensemble", "LOO ensemble rule: avg or vote"),
    ("inner_folds", "inner stratified folds (LOO ensemble size)"),
    ("outer_folds", "outer folds in 5fold mode"),
    ("quality_min", "minimum FHR quality for evaluation"),
    ("select", "prune and forward-select features inside each training set"),
    ("prune_threshold", "absolute correlation above which a feature is pruned"),
    ("table_ii_train", "SVM training-set size for the quality-tier table"),
    ("table_ii_min_at_risk", "minimum at-risk patients in that training set"),
    ("table_ii_tiers", "comma-separated quality thresholds for the tier table"),
    ("seed", "run seed"),
    ("jobs", "worker threads (0 = all cores)"),
];

fn bad(key: &str, value: &str, why: impl std::fmt::Display) -> PipelineError {
    PipelineError::Config(format!("{key} = {value}: {why}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, PipelineError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e| bad(key, value, e))
}

fn flag(key: &str, value: &str) -> Result<bool, PipelineError> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(bad(key, value, "expected true or false")),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        let v = value.trim();
        match key {
            "dataset" => self.dataset = PathBuf::from(v),
            "out" => self.out = PathBuf::from(v),
            "spike_window_s" => self.preprocess.spike_window_s = num(key, v)?,
            "spike_ratio" => self.preprocess.spike_ratio = num(key, v)?,
            "max_interp_s" => self.preprocess.max_interp_s = num(key, v)?,
            "mhr_step_bpm" => self.preprocess.mhr_step_bpm = num(key, v)?,
            "mhr_drop_bpm" => self.preprocess.mhr_drop_bpm = num(key, v)?,
            "mhr_min_run_s" => self.preprocess.mhr_min_run_s = num(key, v)?,
            "event_min_duration_s" => self.events.min_duration_s = num(key, v)?,
            "event_min_prominence_ratio" => self.events.min_prominence_ratio = num(key, v)?,
            "event_edge_fraction" => self.events.edge_fraction = num(key, v)?,
            "uc_min_prominence" => self.events.uc_min_prominence = num(key, v)?,
            "arma_n" => self.arma.n = num(key, v)?,
            "arma_m" => self.arma.m = num(key, v)?,
            "arma_window" => self.arma.window_len = num(key, v)?,
            "arma_ridge" => self.arma.ridge = num(key, v)?,
            "arma_overlap" => self.arma.overlap = num(key, v)?,
            "arma_convention" => {
                self.arma.convention = match v {
                    "dynamics" => PoleConvention::Dynamics,
                    "literal" => PoleConvention::Literal,
                    _ => return Err(bad(key, v, "expected dynamics or literal")),
                }
            }
            "arma_min_rows_factor" => self.arma.min_rows_factor = num(key, v)?,
            "features" => self.features = v.to_string(),
            "model" => {
                self.model = match v {
                    "logreg" => ModelKind::Logreg,
                    "svm" => ModelKind::Svm,
                    _ => return Err(bad(key, v, "expected logreg or svm")),
                }
            }
            "l2" => self.logreg.l2 = num(key, v)?,
            "class_weights" => {
                let balanced = match v {
                    "balanced" => true,
                    "none" => false,
                    _ => return Err(bad(key, v, "expected balanced or none")),
                };
                self.logreg.balanced = balanced;
                self.svm.balanced = balanced;
            }
            "svm_c" => self.svm.c = num(key, v)?,
            "svm_kernel" => {
                self.svm.kernel = match (v, self.svm.kernel) {
                    ("linear", _) => Kernel::Linear,
                    ("rbf", Kernel::Rbf { gamma }) => Kernel::Rbf { gamma },
                    ("rbf", Kernel::Linear) => Kernel::Rbf { gamma: None },
                    _ => return Err(bad(key, v, "expected linear or rbf")),
                }
            }
            "svm_gamma" => {
                let gamma = if v == "auto" { None } else { Some(num(key, v)?) };
                self.svm.kernel = Kernel::Rbf { gamma };
            }
            "mode" => {
                self.mode = match v {
                    "loo" => EvalMode::Loo,
                    "5fold" => EvalMode::FiveFold,
                    _ => return Err(bad(key, v, "expected loo or 5fold")),
                }
            }
            "ensemble" => {
                self.ensemble = match v {
                    "avg" => EnsembleMethod::AverageProb,
                    "vote" => EnsembleMethod::MajorityVote,
                    _ => return Err(bad(key, v, "expected avg or vote")),
                }
            }
            "inner_folds" => self.inner_folds = num(key, v)?,
            "outer_folds" => self.outer_folds = num(key, v)?,
            "quality_min" => self.quality_min = num(key, v)?,
            "select" => self.select = flag(key, v)?,
            "prune_threshold" => self.prune_threshold = num(key, v)?,
            "table_ii_train" => self.table_ii_train = num(key, v)?,
            "table_ii_min_at_risk" => self.table_ii_min_at_risk = num(key, v)?,
            "table_ii_tiers" => {
                self.table_ii_tiers = v.split(',').map(|t| num::<f64>(key, t)).collect::<Result<_, _>>()?;
            }
            "seed" => self.seed = num(key, v)?,
            "jobs" => self.jobs = num(key, v)?,
            _ => return Err(PipelineError::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), PipelineError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| PipelineError::Config(format!("line {}: expected key = value, got '{line}'", i + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, PipelineError> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    /// The value of `key` in the text form.
    pub fn get(&self, key: &str) -> Option<String> {
        let s = |v: &dyn ToString| Some(v.to_string());
        match key {
            "dataset" => s(&self.dataset.display()),
            "out" => s(&self.out.display()),
            "spike_window_s" => s(&self.preprocess.spike_window_s),
            "spike_ratio" => s(&self.preprocess.spike_ratio),
            "max_interp_s" => s(&self.preprocess.max_interp_s),
            "mhr_step_bpm" => s(&self.preprocess.mhr_step_bpm),
            "mhr_drop_bpm" => s(&self.preprocess.mhr_drop_bpm),
            "mhr_min_run_s" => s(&self.preprocess.mhr_min_run_s),
            "event_min_duration_s" => s(&self.events.min_duration_s),
            "event_min_prominence_ratio" => s(&self.events.min_prominence_ratio),
            "event_edge_fraction" => s(&self.events.edge_fraction),
            "uc_min_prominence" => s(&self.events.uc_min_prominence),
            "arma_n" => s(&self.arma.n),
            "arma_m" => s(&self.arma.m),
            "arma_window" => s(&self.arma.window_len),
            "arma_ridge" => s(&self.arma.ridge),
            "arma_overlap" => s(&self.arma.overlap),
            "arma_convention" => s(&match self.arma.convention {
                PoleConvention::Dynamics => "dynamics",
                PoleConvention::Literal => "literal",
            }),
            "arma_min_rows_factor" => s(&self.arma.min_rows_factor),
            "features" => s(&self.features),
            "model" => s(&match self.model {
                ModelKind::Logreg => "logreg",
                ModelKind::Svm => "svm",
            }),
            "l2" => s(&self.logreg.l2),
            "class_weights" => s(&if self.logreg.balanced { "balanced" } else { "none" }),
            "svm_c" => s(&self.svm.c),
            "svm_kernel" => s(&match self.svm.kernel {
                Kernel::Linear => "linear",
                Kernel::Rbf { .. } => "rbf",
            }),
            "svm_gamma" => match self.svm.kernel {
                Kernel::Rbf { gamma: Some(g) } => s(&g),
                _ => s(&"auto"),
            },
            "mode" => s(&self.mode.name()),
            "ensemble" => s(&match self.ensemble {
                EnsembleMethod::AverageProb => "avg",
                EnsembleMethod::MajorityVote => "vote",
            }),
            "inner_folds" => s(&self.inner_folds),
            "outer_folds" => s(&self.outer_folds),
            "quality_min" => s(&self.quality_min),
            "select" => s(&self.select),
            "prune_threshold" => s(&self.prune_threshold),
            "table_ii_train" => s(&self.table_ii_train),
            "table_ii_min_at_risk" => s(&self.table_ii_min_at_risk),
            "table_ii_tiers" => s(&self.table_ii_tiers.iter().map(f64::to_string).collect::<Vec<_>>().join(",")),
            "seed" => s(&self.seed),
            "jobs" => s(&self.jobs),
            _ => None,
        }
    }

    /// Every key in text form; `from_text(to_text())` round-trips. The
    /// kernel is written before gamma so a fixed gamma survives.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, _) in CONFIG_KEYS {
            if *k == "svm_gamma" && matches!(self.svm.kernel, Kernel::Linear) {
                continue;
            }
            out.push_str(&format!("{k} = {}\n", self.get(k).unwrap_or_default()));
        }
        out
    }

    pub fn feature_spec(&self) -> Result<FeatureSetSpec, PipelineError> {
        FeatureSetSpec::parse(&self.features).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn model_config(&self) -> ModelConfig {
        match self.model {
            ModelKind::Logreg => ModelConfig::Logreg(self.logreg.clone()),
            ModelKind::Svm => ModelConfig::Svm(self.svm.clone()),
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            model: self.model_config(),
            inner_folds: self.inner_folds,
            outer_folds: self.outer_folds,
            ensemble: self.ensemble,
            seed: self.seed,
            selection: self.select.then_some(SelectionConfig { prune_threshold: self.prune_threshold, forward: true }),
            ..EvalConfig::default()
        }
    }

    /// Rejects values no stage could run with.
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.arma.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.feature_spec()?;
        let p = &self.preprocess;
        let positive = [
            ("spike_window_s", p.spike_window_s),
            ("spike_ratio", p.spike_ratio),
            ("mhr_min_run_s", p.mhr_min_run_s),
            ("event_min_duration_s", self.events.min_duration_s),
        ];
        for (k, v) in positive {
            if !(v > 0.0) {
                return Err(PipelineError::Config(format!("{k} must be positive, got {v}")));
            }
        }
        if !(p.max_interp_s >= 0.0) {
            return Err(PipelineError::Config(format!("max_interp_s must be >= 0, got {}", p.max_interp_s)));
        }
        if self.inner_folds < 2 || self.outer_folds < 2 {
            return Err(PipelineError::Config("fold counts must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.quality_min) {
            return Err(PipelineError::Config(format!("quality_min must lie in [0, 1], got {}", self.quality_min)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.apply_text("seed = 7\nmodel = svm # comment\nsvm_gamma = 0.25\nmode=5fold\ntable_ii_tiers = 0,0.5\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.svm.kernel, Kernel::Rbf { gamma: Some(0.25) });
        assert_eq!(c.mode, EvalMode::FiveFold);
        assert_eq!(RunConfig::from_text(&c.to_text()).unwrap(), c);
        let mut lin = RunConfig::default();
        lin.set("svm_kernel", "linear").unwrap();
        assert_eq!(RunConfig::from_text(&lin.to_text()).unwrap(), lin);
    }

    #[test]
    fn every_key_is_settable_and_readable() {
        let c = RunConfig::default();
        for (k, _) in CONFIG_KEYS {
            let v = c.get(k).unwrap_or_else(|| panic!("{k} has no getter"));
            let mut d = RunConfig::default();
            d.set(k, &v).unwrap_or_else(|e| panic!("{k}: {e}"));
        }
    }

    #[test]
    fn errors_name_the_key() {
        let err = RunConfig::from_text("seed = abc").unwrap_err().to_string();
        assert!(err.contains("seed"), "{err}");
        assert!(RunConfig::from_text("nonsense = 1").is_err());
        assert!(RunConfig::from_text("just text").is_err());
        let mut c = RunConfig::default();
        c.set("arma_window", "2").unwrap();
        assert!(c.validate().is_err());
    }
}
