//! End-to-end runs: per-patient processing, evaluation and the two summary
//! tables.

mod artifacts;
mod config;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use artifacts::{cleaned_trace_csv, events_csv, write_run, Manifest, PatientResult, RunOutcome, RunReport, Stage, EVENTS_HEADER};
pub use config::{EvalMode, ModelKind, RunConfig, CONFIG_KEYS};

use crate::arma::{arma_pipeline, ArmaRun};
use crate::events::EventAnalysis;
use crate::features::{assemble, compute_feature_bag, FeatureBag, FeatureSetSpec};
use crate::ingest::{load_dataset, CtgRecord, Diagnostic, IngestError};
use crate::labels::{assign_label, cohort_summary, CohortSummary, Label};
use crate::ml::{
    compute_metrics, five_fold_evaluate, loo_evaluate, train_svm, EvalReport, FiveFoldResult, LooResult, MlError,
    Normalizer,
};
use crate::preprocess::{clean_fhr, clean_uc, exclude_patient, CleanSignal, PreprocessReport};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("dataset not found: {}", .0.display())]
    MissingDataset(PathBuf),
    #[error("ingest: {0}")]
    Ingest(#[from] IngestError),
    #[error("no patients left for evaluation: {0}")]
    NoPatients(String),
    #[error("ml: {0}")]
    Ml(#[from] MlError),
    #[error("writing {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    /// 2 for problems the user can fix (config, paths, data), 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::MissingDataset(_) | PipelineError::NoPatients(_) => 2,
            PipelineError::Ingest(IngestError::Io { .. } | IngestError::Parse { .. } | IngestError::Structural(_)) => 2,
            _ => 1,
        }
    }
}

/// Everything computed for one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientOutput {
    pub patient_id: String,
    pub label: Label,
    pub quality: f64,
    /// Removed for low FHR quality; downstream stages were not run.
    pub quality_excluded: bool,
    pub preprocess: PreprocessReport,
    pub fhr: CleanSignal,
    pub uc: CleanSignal,
    pub events: Option<EventAnalysis>,
    pub arma: Option<ArmaRun>,
    pub features: FeatureBag,
    /// Stage failures that left this patient without some outputs.
    pub errors: Vec<String>,
}

impl PatientOutput {
    /// Labelled, quality-passing and fully processed.
    pub fn usable(&self) -> bool {
        self.label != Label::Excluded && !self.quality_excluded && self.errors.is_empty()
    }
}

/// Runs preprocessing, events, ARMA and feature extraction for one record.
/// Stage failures are recorded on the output rather than aborting the run.
pub fn process_patient(record: &CtgRecord, cfg: &RunConfig, upto: Stage) -> PatientOutput {
    let mut errors = Vec::new();
    let label = assign_label(&record.outcomes);
    let empty = || CleanSignal { samples: vec![f64::NAN; record.len()], valid: vec![false; record.len()], quality: 0.0 };
    let (fhr, report) = match clean_fhr(record.fhr(), &cfg.preprocess) {
        Ok(v) => v,
        Err(e) => {
            errors.push(format!("preprocess fhr: {e}"));
            (empty(), PreprocessReport::default())
        }
    };
    let uc = match clean_uc(record.uc(), &cfg.preprocess) {
        Ok(v) => v,
        Err(e) => {
            errors.push(format!("preprocess uc: {e}"));
            empty()
        }
    };
    let quality = fhr.quality;
    let quality_excluded = errors.is_empty() && exclude_patient(quality);
    let mut out = PatientOutput {
        patient_id: record.patient_id().to_string(),
        label,
        quality,
        quality_excluded,
        preprocess: report,
        fhr,
        uc,
        events: None,
        arma: None,
        features: FeatureBag::new(),
        errors,
    };
    if !out.errors.is_empty() || quality_excluded || upto < Stage::Events {
        return out;
    }
    match EventAnalysis::compute(&out.fhr, &out.uc, &cfg.events) {
        Ok(ev) => out.events = Some(ev),
        Err(e) => {
            out.errors.push(format!("events: {e}"));
            return out;
        }
    }
    if upto < Stage::Arma {
        return out;
    }
    match arma_pipeline(&out.fhr, &out.uc, &cfg.arma) {
        Ok(run) => out.arma = Some(run),
        Err(e) => {
            out.errors.push(format!("arma: {e}"));
            return out;
        }
    }
    if upto < Stage::Features {
        return out;
    }
    let ev = out.events.as_ref().expect("events computed above");
    let arma_features = out.arma.as_ref().and_then(|a| a.features.as_ref());
    out.features = compute_feature_bag(record, &out.fhr, ev, arma_features, cfg.arma.n, &cfg.bands);
    out
}

/// Processes every record, in parallel when the `parallel` feature is on.
/// Output order follows input order.
pub fn process_cohort(records: &[CtgRecord], cfg: &RunConfig, upto: Stage) -> Vec<PatientOutput> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let run = || records.par_iter().map(|r| process_patient(r, cfg, upto)).collect();
        let pool = (cfg.jobs > 0).then(|| rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build().ok()).flatten();
        match pool {
            Some(pool) => pool.install(run),
            None => run(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        records.iter().map(|r| process_patient(r, cfg, upto)).collect()
    }
}

pub fn load(cfg: &RunConfig) -> Result<(Vec<CtgRecord>, Vec<Diagnostic>), PipelineError> {
    if !cfg.dataset.is_dir() {
        return Err(PipelineError::MissingDataset(cfg.dataset.clone()));
    }
    let ds = load_dataset(&cfg.dataset)?;
    Ok((ds.records, ds.diagnostics))
}

pub fn summarize(outputs: &[PatientOutput]) -> CohortSummary {
    let kept: Vec<Label> = outputs.iter().filter(|o| !o.quality_excluded).map(|o| o.label).collect();
    let mut s = cohort_summary(&kept);
    s.quality_excluded = outputs.iter().filter(|o| o.quality_excluded).count();
    s
}

/// Rows of the evaluation matrix for one feature set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub patient_ids: Vec<String>,
    pub names: Vec<String>,
    pub x: Vec<Vec<Option<f64>>>,
    pub y: Vec<u8>,
    pub quality: Vec<f64>,
}

/// Usable patients with quality at least `quality_min`, in input order.
pub fn design(outputs: &[PatientOutput], spec: &FeatureSetSpec, quality_min: f64) -> Result<Design, PipelineError> {
    let mut d = Design { patient_ids: vec![], names: spec.features.clone(), x: vec![], y: vec![], quality: vec![] };
    for o in outputs.iter().filter(|o| o.usable() && o.quality >= quality_min) {
        let v = assemble(&o.patient_id, &o.features, spec).map_err(|e| PipelineError::Config(e.to_string()))?;
        d.patient_ids.push(o.patient_id.clone());
        d.x.push(v.values);
        d.y.push(o.label.target().expect("usable patients are labelled"));
        d.quality.push(o.quality);
    }
    if d.y.is_empty() {
        return Err(PipelineError::NoPatients("no labelled patient passed the quality filter".into()));
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode")]
pub enum Evaluation {
    #[serde(rename = "loo")]
    Loo(LooResult),
    #[serde(rename = "5fold")]
    FiveFold(FiveFoldResult),
}

impl Evaluation {
    /// The report whose scores feed the ROC export.
    pub fn report(&self) -> &EvalReport {
        match self {
            Evaluation::Loo(r) => &r.report,
            Evaluation::FiveFold(r) => &r.pooled,
        }
    }

    /// Headline numbers: pooled for LOO, fold means for 5-fold.
    pub fn headline(&self) -> (Option<f64>, Option<f64>, Option<f64>, f64) {
        match self {
            Evaluation::Loo(r) => (r.report.auc, r.report.tpr, r.report.fpr, r.report.mcc),
            Evaluation::FiveFold(r) => (r.mean.auc, r.mean.tpr, r.mean.fpr, r.mean.mcc),
        }
    }

    /// `(score, class)` per design row.
    pub fn per_patient(&self) -> Vec<(f64, u8)> {
        match self {
            Evaluation::Loo(r) => r.per_patient.iter().map(|p| (p.score, p.class)).collect(),
            Evaluation::FiveFold(r) => r.scores.iter().copied().zip(r.classes.iter().copied()).collect(),
        }
    }

    pub fn audit_clean(&self) -> bool {
        match self {
            Evaluation::Loo(r) => r.audit_clean(),
            Evaluation::FiveFold(r) => r.audit.iter().all(|a| a.is_clean()),
        }
    }
}

pub fn evaluate(d: &Design, cfg: &RunConfig, mode: EvalMode) -> Result<Evaluation, PipelineError> {
    let ec = cfg.eval_config();
    Ok(match mode {
        EvalMode::Loo => Evaluation::Loo(loo_evaluate(&d.x, &d.y, &ec)?),
        EvalMode::FiveFold => Evaluation::FiveFold(five_fold_evaluate(&d.x, &d.y, &ec)?),
    })
}

/// One row of the quality-tier table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierRow {
    pub quality_min: f64,
    pub n_normal: usize,
    pub n_at_risk: usize,
    /// `None` when the tier has fewer than two patients of either class.
    pub report: Option<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableII {
    pub train_ids: Vec<String>,
    pub rows: Vec<TierRow>,
}

/// Picks the training set: the highest-quality patients, with at least
/// `min_at_risk` at-risk patients swapped in for the lowest-quality normals
/// if needed. Returns design row indices.
pub fn pick_training_set(d: &Design, size: usize, min_at_risk: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..d.y.len()).collect();
    order.sort_by(|&a, &b| d.quality[b].total_cmp(&d.quality[a]).then_with(|| d.patient_ids[a].cmp(&d.patient_ids[b])));
    let mut train: Vec<usize> = order.iter().copied().take(size).collect();
    let have = train.iter().filter(|&&i| d.y[i] == 1).count();
    if have < min_at_risk {
        let extra: Vec<usize> = order.iter().copied().skip(size).filter(|&i| d.y[i] == 1).take(min_at_risk - have).collect();
        for e in extra {
            if let Some(pos) = train.iter().rposition(|&i| d.y[i] == 0) {
                train.remove(pos);
                train.push(e);
            }
        }
    }
    train.sort_unstable();
    train
}

/// SVM on the pole-magnitude ranges, trained on a high-quality subset and
/// tested on the remaining patients at several quality thresholds.
pub fn table_ii(outputs: &[PatientOutput], cfg: &RunConfig) -> Result<TableII, PipelineError> {
    let names: Vec<String> = (1..=cfg.arma.n.min(2)).map(|i| format!("delta_r{i}")).collect();
    let spec = FeatureSetSpec { name: "delta_r".into(), features: names };
    let d = design(outputs, &spec, 0.0)?;
    let train = pick_training_set(&d, cfg.table_ii_train, cfg.table_ii_min_at_risk);
    let raw: Vec<Vec<Option<f64>>> = train.iter().map(|&i| d.x[i].clone()).collect();
    let yt: Vec<u8> = train.iter().map(|&i| d.y[i]).collect();
    let norm = Normalizer::fit(&raw)?;
    let model = train_svm(&norm.apply_all(&raw), &yt, &cfg.svm)?;
    let test: Vec<usize> = (0..d.y.len()).filter(|i| !train.contains(i)).collect();
    let mut rows = Vec::new();
    for &t in &cfg.table_ii_tiers {
        let tier: Vec<usize> = test.iter().copied().filter(|&i| d.quality[i] >= t).collect();
        let truth: Vec<u8> = tier.iter().map(|&i| d.y[i]).collect();
        let n_at_risk = truth.iter().filter(|v| **v == 1).count();
        let n_normal = truth.len() - n_at_risk;
        let report = (n_at_risk >= 2 && n_normal >= 2).then(|| {
            let scores: Vec<f64> = tier.iter().map(|&i| model.predict_proba(&norm.apply(&d.x[i]))).collect();
            let classes: Vec<u8> = scores.iter().map(|s| (*s >= 0.5) as u8).collect();
            compute_metrics(&scores, &classes, &truth)
        });
        rows.push(TierRow { quality_min: t, n_normal, n_at_risk, report });
    }
    Ok(TableII { train_ids: train.iter().map(|&i| d.patient_ids[i].clone()).collect(), rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableIIIRow {
    pub feature_set: String,
    pub mode: EvalMode,
    pub n: usize,
    pub auc: Option<f64>,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub mcc: f64,
}

/// FS1..FS4, each under 5-fold and LOO, with the configured classifier.
pub fn table_iii(outputs: &[PatientOutput], cfg: &RunConfig) -> Result<Vec<TableIIIRow>, PipelineError> {
    let mut rows = Vec::new();
    for level in 1..=4 {
        let spec = FeatureSetSpec::standard(level).map_err(|e| PipelineError::Config(e.to_string()))?;
        let d = design(outputs, &spec, cfg.quality_min)?;
        for mode in [EvalMode::FiveFold, EvalMode::Loo] {
            let ev = evaluate(&d, cfg, mode)?;
            let (auc, tpr, fpr, mcc) = ev.headline();
            rows.push(TableIIIRow { feature_set: spec.name.clone(), mode, n: d.y.len(), auc, tpr, fpr, mcc });
        }
    }
    Ok(rows)
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{synth_cohort, CohortConfig};

    fn cohort(n: usize) -> Vec<CtgRecord> {
        synth_cohort(&CohortConfig { patients: n, duration_s: 2400.0, seed: 3, ..CohortConfig::default() }).unwrap()
    }

    fn small_cfg() -> RunConfig {
        let mut c = RunConfig::default();
        c.arma.window_len = 2400;
        c
    }

    #[test]
    fn exit_codes() {
        assert_eq!(PipelineError::MissingDataset("x".into()).exit_code(), 2);
        assert_eq!(PipelineError::Config("x".into()).exit_code(), 2);
        assert_eq!(PipelineError::Ml(MlError::SingleClass).exit_code(), 1);
    }

    #[test]
    fn patient_reaches_every_stage() {
        let recs = cohort(3);
        let out = process_patient(&recs[0], &small_cfg(), Stage::Features);
        assert!(out.errors.is_empty(), "{:?}", out.errors);
        assert!(out.events.is_some());
        assert_eq!(out.arma.as_ref().unwrap().windows.len(), 4);
        for f in FeatureSetSpec::standard(4).unwrap().features {
            assert!(out.features.contains_key(&f), "{f}");
        }
        let early = process_patient(&recs[0], &small_cfg(), Stage::Preprocess);
        assert!(early.events.is_none() && early.features.is_empty());
    }

    #[test]
    fn training_set_gets_enough_at_risk() {
        let d = Design {
            patient_ids: (0..10).map(|i| format!("p{i}")).collect(),
            names: vec![],
            x: vec![vec![]; 10],
            y: vec![0, 0, 0, 0, 0, 0, 1, 1, 1, 0],
            quality: vec![1.0, 0.99, 0.98, 0.97, 0.96, 0.95, 0.8, 0.79, 0.78, 0.7],
        };
        let t = pick_training_set(&d, 4, 2);
        assert_eq!(t, vec![0, 1, 6, 7]);
        assert_eq!(pick_training_set(&d, 4, 0), vec![0, 1, 2, 3]);
    }

    #[test]
    fn design_skips_excluded_and_low_quality() {
        let recs = cohort(12);
        let cfg = small_cfg();
        let mut outs = process_cohort(&recs, &cfg, Stage::Features);
        outs[0].quality = 0.75;
        let spec = FeatureSetSpec::standard(1).unwrap();
        let all = design(&outs, &spec, 0.0).unwrap();
        let usable = outs.iter().filter(|o| o.usable()).count();
        assert_eq!(all.y.len(), usable);
        let high = design(&outs, &spec, 0.8).unwrap();
        assert_eq!(high.y.len(), usable - outs[0].usable() as usize);
    }
}
