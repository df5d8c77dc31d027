//! Output files for each stage and the run manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    design, evaluate, io_err, load, process_cohort, summarize, table_ii, table_iii, Evaluation, PatientOutput,
    PipelineError, RunConfig, TableII, TableIIIRow,
};
use crate::events::{DecelClass, Event};
use crate::features::{features_csv, FeatureVector};
use crate::ingest::{CtgRecord, Diagnostic};
use crate::labels::CohortSummary;
use crate::ml::{roc_csv, Confusion, EvalReport, MeanMetrics};
use crate::SAMPLE_RATE_HZ;

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Ingest,
    Preprocess,
    Events,
    Arma,
    Features,
    Labels,
    Eval,
    TableIi,
    TableIii,
}

impl Stage {
    /// How far per-patient processing must go for this stage's outputs.
    fn depth(self) -> Stage {
        match self {
            Stage::Labels => Stage::Preprocess,
            Stage::Eval | Stage::TableIi | Stage::TableIii => Stage::Features,
            s => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientErrors {
    pub patient_id: String,
    pub errors: Vec<String>,
}

/// Written last; echoes the resolved config so the run can be repeated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub stage: Stage,
    pub config: RunConfig,
    /// The same config in `key = value` form, loadable with `--config`.
    pub config_text: String,
    pub seed: u64,
    pub patients_loaded: usize,
    pub cohort: CohortSummary,
    pub diagnostics: Vec<Diagnostic>,
    pub patient_errors: Vec<PatientErrors>,
    /// True when some patients lost outputs to stage errors.
    pub partial: bool,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientResult {
    pub patient_id: String,
    pub truth: u8,
    pub score: f64,
    pub class: u8,
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: String,
    pub model: String,
    pub feature_set: String,
    pub features: Vec<String>,
    pub n_patients: usize,
    pub n_at_risk: usize,
    pub auc: Option<f64>,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub mcc: f64,
    /// Confusion over the pooled per-patient classes.
    pub confusion: Confusion,
    /// Per-fold metrics and their mean (5fold mode only).
    pub folds: Option<Vec<EvalReport>>,
    pub fold_mean: Option<MeanMetrics>,
    pub audit_clean: bool,
    pub per_patient: Vec<PatientResult>,
}

struct Writer {
    root: PathBuf,
    written: Vec<String>,
}

impl Writer {
    fn new(root: &Path) -> Result<Self, PipelineError> {
        fs::create_dir_all(root).map_err(io_err(root))?;
        Ok(Self { root: root.to_path_buf(), written: Vec::new() })
    }

    fn put(&mut self, rel: &str, contents: &str) -> Result<(), PipelineError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        fs::write(&path, contents).map_err(io_err(&path))?;
        self.written.push(rel.to_string());
        Ok(())
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn ingest_csv(records: &[CtgRecord]) -> String {
    let mut s = String::from("patient_id,samples,duration_s,fhr_missing,uc_missing,ph,apgar5\n");
    for r in records {
        let miss = |v: &[Option<f64>]| v.iter().filter(|x| x.is_none()).count();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.patient_id(),
            r.len(),
            r.duration_s(),
            miss(r.fhr()),
            miss(r.uc()),
            opt(r.outcomes.ph),
            r.outcomes.apgar5.map(|a| a.to_string()).unwrap_or_default()
        );
    }
    s
}

fn clean_summary_csv(outputs: &[PatientOutput]) -> String {
    let mut s = String::from("patient_id,samples,quality,missing,outliers,spikes,unjudged,mhr,interpolated,excluded\n");
    for o in outputs {
        let p = &o.preprocess;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            o.patient_id,
            o.fhr.len(),
            o.quality,
            p.missing,
            p.outliers,
            p.spikes,
            p.unjudged,
            p.mhr,
            p.interpolated,
            o.quality_excluded
        );
    }
    s
}

/// Cleaned trace with validity flags; invalid samples are empty cells.
pub fn cleaned_trace_csv(o: &PatientOutput) -> String {
    let mut s = String::from("t_s,fhr_bpm,uc,fhr_valid,uc_valid\n");
    let cell = |v: f64, ok: bool| if ok { v.to_string() } else { String::new() };
    for k in 0..o.fhr.len() {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            k as f64 / SAMPLE_RATE_HZ,
            cell(o.fhr.samples[k], o.fhr.valid[k]),
            cell(o.uc.samples[k], o.uc.valid[k]),
            o.fhr.valid[k] as u8,
            o.uc.valid[k] as u8
        );
    }
    s
}

pub const EVENTS_HEADER: &str = "kind,start_s,end_s,duration_s,height,prominence,lag_s,class";

pub fn events_csv(o: &PatientOutput) -> String {
    let mut s = format!("{EVENTS_HEADER}\n");
    let Some(ev) = &o.events else { return s };
    let row = |s: &mut String, e: &Event, lag: &str, class: &str| {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{lag},{class}",
            e.kind.name(),
            e.start_s(),
            e.end_s(),
            e.duration_s,
            e.height,
            e.prominence
        );
    };
    for e in &ev.accels {
        row(&mut s, e, "", "");
    }
    for (e, t) in ev.decels.iter().zip(&ev.timings) {
        let class = match t.class {
            DecelClass::Unpaired => "unpaired",
            c => c.name(),
        };
        row(&mut s, e, &opt(t.lag_s), class);
    }
    for e in &ev.contractions {
        row(&mut s, e, "", "");
    }
    s
}

fn arma_csvs(outputs: &[PatientOutput], cfg: &RunConfig) -> (String, String) {
    let (n, m) = (cfg.arma.n, cfg.arma.m);
    let mut win = String::from("patient_id,p");
    for i in 1..=n {
        let _ = write!(win, ",alpha{i}");
    }
    for j in 1..=m {
        let _ = write!(win, ",beta{j}");
    }
    for i in 1..=n {
        let _ = write!(win, ",polemag{i}");
    }
    win.push_str(",residual_var,rows\n");
    let mut sum = String::from("patient_id");
    for i in 1..=n {
        let _ = write!(sum, ",delta_r{i}");
    }
    sum.push_str(",windows,attempted,skipped\n");
    for o in outputs {
        let Some(run) = &o.arma else { continue };
        for w in &run.windows {
            let _ = write!(win, "{},{}", o.patient_id, w.p);
            for v in w.theta.iter().chain(&w.pole_mags) {
                let _ = write!(win, ",{v}");
            }
            let _ = writeln!(win, ",{},{}", w.residual_var, w.rows);
        }
        let _ = write!(sum, "{}", o.patient_id);
        for i in 0..n {
            let _ = write!(sum, ",{}", opt(run.features.as_ref().map(|f| f.delta_r[i])));
        }
        let _ = writeln!(sum, ",{},{},{}", run.windows.len(), run.attempted, run.skipped.len());
    }
    (win, sum)
}

fn features_all_csv(outputs: &[PatientOutput]) -> String {
    let names: Vec<String> = outputs.iter().find(|o| !o.features.is_empty()).map(|o| o.features.keys().cloned().collect()).unwrap_or_default();
    let mut s = String::from("patient_id");
    for n in &names {
        let _ = write!(s, ",{n}");
    }
    s.push('\n');
    for o in outputs.iter().filter(|o| !o.features.is_empty()) {
        s.push_str(&o.patient_id);
        for n in &names {
            let _ = write!(s, ",{}", opt(o.features.get(n).copied().flatten()));
        }
        s.push('\n');
    }
    s
}

fn labels_csv(outputs: &[PatientOutput]) -> String {
    let mut s = String::from("patient_id,class\n");
    for o in outputs {
        let _ = writeln!(s, "{},{}", o.patient_id, o.label.name());
    }
    s
}

fn table_ii_csv(t: &TableII) -> String {
    let mut s = String::from("quality_min,n_normal,n_at_risk,auc,tpr,fpr,available\n");
    for r in &t.rows {
        let rep = r.report.as_ref();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.quality_min,
            r.n_normal,
            r.n_at_risk,
            opt(rep.and_then(|x| x.auc)),
            opt(rep.and_then(|x| x.tpr)),
            opt(rep.and_then(|x| x.fpr)),
            rep.is_some()
        );
    }
    s
}

fn table_iii_csv(rows: &[TableIIIRow]) -> String {
    let mut s = String::from("feature_set,mode,n,auc,tpr,fpr,mcc\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{},{},{}", r.feature_set, r.mode.name(), r.n, opt(r.auc), opt(r.tpr), opt(r.fpr), r.mcc);
    }
    s
}

fn run_report(ev: &Evaluation, d: &super::Design, cfg: &RunConfig, spec_name: &str) -> RunReport {
    let (auc, tpr, fpr, mcc) = ev.headline();
    let (folds, fold_mean) = match ev {
        Evaluation::FiveFold(r) => (Some(r.folds.clone()), Some(r.mean.clone())),
        Evaluation::Loo(_) => (None, None),
    };
    let per_patient = ev
        .per_patient()
        .into_iter()
        .enumerate()
        .map(|(i, (score, class))| PatientResult { patient_id: d.patient_ids[i].clone(), truth: d.y[i], score, class })
        .collect();
    RunReport {
        mode: cfg.mode.name().into(),
        model: cfg.get("model").unwrap_or_default(),
        feature_set: spec_name.into(),
        features: d.names.clone(),
        n_patients: d.y.len(),
        n_at_risk: d.y.iter().filter(|v| **v == 1).count(),
        auc,
        tpr,
        fpr,
        mcc,
        confusion: ev.report().confusion,
        folds,
        fold_mean,
        audit_clean: ev.audit_clean(),
        per_patient,
    }
}

/// Outcome of [`write_run`], for callers that print a summary.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: Manifest,
    pub report: Option<RunReport>,
    pub table_ii: Option<TableII>,
    pub table_iii: Option<Vec<TableIIIRow>>,
}

/// Runs the pipeline up to `stage` and writes that stage's outputs (and
/// those of the stages it depends on) under `cfg.out`.
pub fn write_run(cfg: &RunConfig, stage: Stage) -> Result<RunOutcome, PipelineError> {
    cfg.validate()?;
    let (records, diagnostics) = load(cfg)?;
    if records.is_empty() {
        return Err(PipelineError::NoPatients(format!("no readable records in {}", cfg.dataset.display())));
    }
    let mut w = Writer::new(&cfg.out)?;
    let depth = stage.depth();
    let outputs = if depth >= Stage::Preprocess { process_cohort(&records, cfg, depth) } else { Vec::new() };
    let spec = cfg.feature_spec()?;

    w.put("ingest_summary.csv", &ingest_csv(&records))?;
    if depth >= Stage::Preprocess {
        w.put("clean_summary.csv", &clean_summary_csv(&outputs))?;
    }
    if stage == Stage::Preprocess {
        for o in &outputs {
            w.put(&format!("cleaned/{}.csv", o.patient_id), &cleaned_trace_csv(o))?;
        }
    }
    if depth >= Stage::Events {
        for o in outputs.iter().filter(|o| o.events.is_some()) {
            w.put(&format!("events/{}.csv", o.patient_id), &events_csv(o))?;
        }
    }
    if depth >= Stage::Arma {
        let (win, sum) = arma_csvs(&outputs, cfg);
        w.put("arma_windows.csv", &win)?;
        w.put("arma_summary.csv", &sum)?;
    }
    if depth >= Stage::Features {
        let vectors: Vec<FeatureVector> = outputs
            .iter()
            .filter(|o| !o.features.is_empty())
            .map(|o| crate::features::assemble(&o.patient_id, &o.features, &spec))
            .collect::<Result<_, _>>()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        w.put("features.csv", &features_csv(&vectors, &spec))?;
        w.put("features_all.csv", &features_all_csv(&outputs))?;
    }
    if stage >= Stage::Labels {
        w.put("labels.csv", &labels_csv(&outputs))?;
    }

    let mut outcome = RunOutcome { manifest: placeholder_manifest(cfg, stage), report: None, table_ii: None, table_iii: None };
    match stage {
        Stage::Eval => {
            let d = design(&outputs, &spec, cfg.quality_min)?;
            let ev = evaluate(&d, cfg, cfg.mode)?;
            let report = run_report(&ev, &d, cfg, &spec.name);
            w.put("report.json", &serde_json::to_string_pretty(&report)?)?;
            w.put("roc.csv", &roc_csv(&ev.report().roc))?;
            outcome.report = Some(report);
        }
        Stage::TableIi => {
            let t = table_ii(&outputs, cfg)?;
            w.put("table_ii.csv", &table_ii_csv(&t))?;
            w.put("table_ii.json", &serde_json::to_string_pretty(&t)?)?;
            outcome.table_ii = Some(t);
        }
        Stage::TableIii => {
            let t = table_iii(&outputs, cfg)?;
            w.put("table_iii.csv", &table_iii_csv(&t))?;
            outcome.table_iii = Some(t);
        }
        _ => {}
    }

    let patient_errors: Vec<PatientErrors> = outputs
        .iter()
        .filter(|o| !o.errors.is_empty())
        .map(|o| PatientErrors { patient_id: o.patient_id.clone(), errors: o.errors.clone() })
        .collect();
    let mut manifest = Manifest {
        patients_loaded: records.len(),
        cohort: summarize(&outputs),
        diagnostics,
        partial: !patient_errors.is_empty(),
        patient_errors,
        ..outcome.manifest
    };
    manifest.outputs = w.written.clone();
    manifest.outputs.push("manifest.json".into());
    w.put("manifest.json", &serde_json::to_string_pretty(&manifest)?)?;
    outcome.manifest = manifest;
    Ok(outcome)
}

fn placeholder_manifest(cfg: &RunConfig, stage: Stage) -> Manifest {
    Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        stage,
        config: cfg.clone(),
        config_text: cfg.to_text(),
        seed: cfg.seed,
        patients_loaded: 0,
        cohort: CohortSummary::default(),
        diagnostics: Vec::new(),
        patient_errors: Vec::new(),
        partial: false,
        outputs: Vec::new(),
    }
}
