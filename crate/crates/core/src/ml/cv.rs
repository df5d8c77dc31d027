use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::select::{forward_select, pearson_prune, SelectionTrace};
use super::{check_xy, class_counts, compute_metrics, mean_metrics, EvalReport, MeanMetrics, MlError, Model, ModelConfig, Normalizer, RawMatrix};
use crate::ingest::substream_seed;

/// `k` disjoint folds of row indices covering every row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    /// Every index outside fold `f`, ascending.
    pub fn train_indices(&self, f: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self.folds.iter().enumerate().filter(|(g, _)| *g != f).flat_map(|(_, x)| x.iter().copied()).collect();
        v.sort_unstable();
        v
    }
}

/// Shuffles each class separately and deals its members round-robin over
/// the folds, continuing where the previous class stopped, so per-class and
/// total fold sizes each differ by at most one.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<FoldPlan, MlError> {
    if k < 2 {
        return Err(MlError::Config(format!("need at least 2 folds, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut pos = 0;
    for class in [0u8, 1] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        for i in members {
            folds[pos % k].push(i);
            pos += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(FoldPlan { k, seed, folds })
}

/// Out-of-fold probabilities: row `i` is scored by the model trained
/// without its fold.
pub(crate) fn cv_predictions(x: &[Vec<f64>], y: &[u8], plan: &FoldPlan, model: &ModelConfig) -> Result<Vec<f64>, MlError> {
    let mut out = vec![f64::NAN; y.len()];
    for (f, test) in plan.folds.iter().enumerate() {
        if test.is_empty() {
            continue;
        }
        let train = plan.train_indices(f);
        let xt: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
        let yt: Vec<u8> = train.iter().map(|&i| y[i]).collect();
        let m = Model::fit(model, &xt, &yt)?;
        for &i in test {
            out[i] = m.predict_proba(&x[i]);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMethod {
    #[default]
    AverageProb,
    MajorityVote,
}

pub const DECISION_THRESHOLD: f64 = 0.5;

/// Combines per-model probabilities into a class. Averaging compares the
/// mean to 0.5; voting binarizes each model at 0.5 and takes the majority
/// (a tie, only possible with an even model count, goes to class 1).
pub fn ensemble_predict(probs: &[f64], method: EnsembleMethod) -> u8 {
    match method {
        EnsembleMethod::AverageProb => {
            (probs.iter().sum::<f64>() / probs.len() as f64 >= DECISION_THRESHOLD) as u8
        }
        EnsembleMethod::MajorityVote => {
            let votes = probs.iter().filter(|p| **p >= DECISION_THRESHOLD).count();
            (2 * votes >= probs.len()) as u8
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub prune_threshold: f64,
    /// Run greedy forward selection after pruning.
    pub forward: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { prune_threshold: 0.88, forward: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub model: ModelConfig,
    pub inner_folds: usize,
    pub outer_folds: usize,
    pub ensemble: EnsembleMethod,
    pub seed: u64,
    /// Pruning/selection redone inside every training set; `None` uses all
    /// columns.
    pub selection: Option<SelectionConfig>,
    pub max_fold_retries: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            inner_folds: 5,
            outer_folds: 5,
            ensemble: EnsembleMethod::AverageProb,
            seed: 0,
            selection: None,
            max_fold_retries: 20,
        }
    }
}

/// One fitted statistic and the rows it saw.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    /// Rows evaluated by the models this statistic feeds.
    pub held_out: Vec<usize>,
    pub stage: String,
    pub fitted_on: Vec<usize>,
}

impl AuditEntry {
    pub fn is_clean(&self) -> bool {
        self.held_out.iter().all(|h| !self.fitted_on.contains(h))
    }
}

/// Everything fitted on one training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Fitted {
    pub normalizer: Normalizer,
    pub columns: Vec<usize>,
    pub selection: Option<SelectionTrace>,
    pub models: Vec<Model>,
}

impl Fitted {
    fn probabilities(&self, row: &[Option<f64>]) -> Vec<f64> {
        let z = self.normalizer.apply(row);
        let x: Vec<f64> = self.columns.iter().map(|&c| z[c]).collect();
        self.models.iter().map(|m| m.predict_proba(&x)).collect()
    }
}

fn project(x: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> Vec<Vec<f64>> {
    rows.iter().map(|&i| cols.iter().map(|&c| x[i][c]).collect()).collect()
}

/// Fits normalizer, optional pruning/selection and either one model
/// (`inner_folds == None`) or an inner-fold ensemble on the `train` rows.
fn fit_training_set(
    x: &RawMatrix,
    y: &[u8],
    train: &[usize],
    held_out: &[usize],
    cfg: &EvalConfig,
    seed: u64,
    inner_folds: Option<usize>,
    audit: &mut Vec<AuditEntry>,
) -> Result<Fitted, MlError> {
    let mut log = |stage: &str, rows: &[usize]| {
        audit.push(AuditEntry { held_out: held_out.to_vec(), stage: stage.to_string(), fitted_on: rows.to_vec() });
    };
    let raw: Vec<Vec<Option<f64>>> = train.iter().map(|&i| x[i].clone()).collect();
    let yt: Vec<u8> = train.iter().map(|&i| y[i]).collect();
    let normalizer = Normalizer::fit(&raw)?;
    log("normalizer", train);
    let xn = normalizer.apply_all(&raw);
    let d = normalizer.mean.len();

    let (columns, selection) = match &cfg.selection {
        None => ((0..d).collect(), None),
        Some(sel) => {
            let pruned = pearson_prune(&xn, sel.prune_threshold);
            log("prune", train);
            if sel.forward {
                let trace = forward_select(&xn, &yt, &pruned.retained, &cfg.model, substream_seed(seed, "select", 0))?;
                log("select", train);
                // An empty selection would leave an intercept-only model;
                // keep the pruned set instead.
                let cols = if trace.selected.is_empty() { pruned.retained.clone() } else { trace.selected.clone() };
                (cols, Some(trace))
            } else {
                (pruned.retained, None)
            }
        }
    };

    let all: Vec<usize> = (0..train.len()).collect();
    let models = match inner_folds {
        None => {
            log("model", train);
            vec![Model::fit(&cfg.model, &project(&xn, &all, &columns), &yt)?]
        }
        Some(k) => {
            let mut plan = None;
            for attempt in 0..cfg.max_fold_retries.max(1) {
                let p = stratified_kfold(&yt, k, substream_seed(seed, "inner", attempt as u64))?;
                let ok = (0..k).all(|f| {
                    let t: Vec<u8> = p.train_indices(f).iter().map(|&i| yt[i]).collect();
                    !class_counts(&t).contains(&0)
                });
                if ok {
                    plan = Some(p);
                    break;
                }
            }
            let plan = plan.ok_or(MlError::FoldFailure(cfg.max_fold_retries.max(1)))?;
            let mut models = Vec::with_capacity(k);
            for f in 0..k {
                let local = plan.train_indices(f);
                let global: Vec<usize> = local.iter().map(|&i| train[i]).collect();
                log(&format!("inner_model_{f}"), &global);
                let yl: Vec<u8> = local.iter().map(|&i| yt[i]).collect();
                models.push(Model::fit(&cfg.model, &project(&xn, &local, &columns), &yl)?);
            }
            models
        }
    };
    Ok(Fitted { normalizer, columns, selection, models })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientScore {
    pub index: usize,
    pub truth: u8,
    /// One probability per inner-fold model.
    pub fold_probs: Vec<f64>,
    /// Mean of `fold_probs`.
    pub score: f64,
    pub class: u8,
    /// Statistics fitted without this patient, kept for auditing.
    pub normalizer: Normalizer,
    pub columns: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooResult {
    pub report: EvalReport,
    pub ensemble: EnsembleMethod,
    pub per_patient: Vec<PatientScore>,
    pub audit: Vec<AuditEntry>,
}

impl LooResult {
    /// Re-binarizes the same per-patient probabilities with another method.
    pub fn report_with(&self, method: EnsembleMethod) -> EvalReport {
        let scores: Vec<f64> = self.per_patient.iter().map(|p| p.score).collect();
        let classes: Vec<u8> = self.per_patient.iter().map(|p| ensemble_predict(&p.fold_probs, method)).collect();
        let truth: Vec<u8> = self.per_patient.iter().map(|p| p.truth).collect();
        compute_metrics(&scores, &classes, &truth)
    }

    pub fn audit_clean(&self) -> bool {
        self.audit.iter().all(AuditEntry::is_clean)
    }
}

fn check_cohort(x: &RawMatrix, y: &[u8], min: usize) -> Result<(), MlError> {
    check_xy(x, y)?;
    if y.len() < min {
        return Err(MlError::TooFewRows(y.len()));
    }
    if class_counts(y).contains(&0) {
        return Err(MlError::SingleClass);
    }
    Ok(())
}

#[cfg(feature = "parallel")]
fn map_indices<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_indices<T>(n: usize, f: impl Fn(usize) -> T) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Leave-one-patient-out: for every patient, fit normalizer, selection and
/// an inner-fold ensemble on the others, then score the held-out patient.
/// Scores and classes are pooled over the cohort before computing metrics.
pub fn loo_evaluate(x: &RawMatrix, y: &[u8], cfg: &EvalConfig) -> Result<LooResult, MlError> {
    check_cohort(x, y, 10)?;
    let results = map_indices(y.len(), |i| {
        let train: Vec<usize> = (0..y.len()).filter(|&j| j != i).collect();
        let mut audit = Vec::new();
        let seed = substream_seed(cfg.seed, "loo", i as u64);
        let fitted = fit_training_set(x, y, &train, &[i], cfg, seed, Some(cfg.inner_folds), &mut audit)?;
        let fold_probs = fitted.probabilities(&x[i]);
        let score = fold_probs.iter().sum::<f64>() / fold_probs.len() as f64;
        let class = ensemble_predict(&fold_probs, cfg.ensemble);
        Ok::<_, MlError>((
            PatientScore { index: i, truth: y[i], fold_probs, score, class, normalizer: fitted.normalizer, columns: fitted.columns },
            audit,
        ))
    });
    let mut per_patient = Vec::with_capacity(y.len());
    let mut audit = Vec::new();
    for r in results {
        let (p, a) = r?;
        per_patient.push(p);
        audit.extend(a);
    }
    let scores: Vec<f64> = per_patient.iter().map(|p| p.score).collect();
    let classes: Vec<u8> = per_patient.iter().map(|p| p.class).collect();
    let report = compute_metrics(&scores, &classes, y);
    Ok(LooResult { report, ensemble: cfg.ensemble, per_patient, audit })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiveFoldResult {
    pub plan: FoldPlan,
    pub folds: Vec<EvalReport>,
    /// Per-fold metrics averaged.
    pub mean: MeanMetrics,
    /// Metrics over the pooled out-of-fold scores, for the ROC export.
    pub pooled: EvalReport,
    pub scores: Vec<f64>,
    pub classes: Vec<u8>,
    pub columns: Vec<Vec<usize>>,
    pub audit: Vec<AuditEntry>,
}

/// Stratified k-fold (default 5) with one model per outer fold and metrics
/// averaged over folds.
pub fn five_fold_evaluate(x: &RawMatrix, y: &[u8], cfg: &EvalConfig) -> Result<FiveFoldResult, MlError> {
    check_cohort(x, y, cfg.outer_folds)?;
    let plan = stratified_kfold(y, cfg.outer_folds, substream_seed(cfg.seed, "outer", 0))?;
    let mut scores = vec![f64::NAN; y.len()];
    let mut classes = vec![0u8; y.len()];
    let mut folds = Vec::new();
    let mut columns = Vec::new();
    let mut audit = Vec::new();
    for (f, test) in plan.folds.iter().enumerate() {
        let train = plan.train_indices(f);
        let seed = substream_seed(cfg.seed, "fold", f as u64);
        let fitted = fit_training_set(x, y, &train, test, cfg, seed, None, &mut audit)?;
        let (mut s, mut c, mut t) = (Vec::new(), Vec::new(), Vec::new());
        for &i in test {
            let p = fitted.probabilities(&x[i])[0];
            scores[i] = p;
            classes[i] = (p >= DECISION_THRESHOLD) as u8;
            s.push(p);
            c.push(classes[i]);
            t.push(y[i]);
        }
        folds.push(compute_metrics(&s, &c, &t));
        columns.push(fitted.columns);
    }
    let mean = mean_metrics(&folds);
    let pooled = compute_metrics(&scores, &classes, y);
    Ok(FiveFoldResult { plan, folds, mean, pooled, scores, classes, columns, audit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ml::{LogRegConfig, SvmConfig};

    fn per_class_counts(plan: &FoldPlan, y: &[u8]) -> Vec<[usize; 2]> {
        plan.folds.iter().map(|f| class_counts(&f.iter().map(|&i| y[i]).collect::<Vec<_>>())).collect()
    }

    #[test]
    fn exact_division() {
        let y: Vec<u8> = (0..10).map(|i| (i < 5) as u8).collect();
        let plan = stratified_kfold(&y, 5, 3).unwrap();
        assert!(per_class_counts(&plan, &y).iter().all(|c| *c == [1, 1]));
    }

    #[test]
    fn twenty_three_positives_over_five_folds() {
        let y: Vec<u8> = (0..333).map(|i| (i < 23) as u8).collect();
        let plan = stratified_kfold(&y, 5, 1).unwrap();
        for c in per_class_counts(&plan, &y) {
            assert!((4..=5).contains(&c[1]));
        }
        let mut all: Vec<usize> = plan.folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..333).collect::<Vec<_>>());
        assert_eq!(plan, stratified_kfold(&y, 5, 1).unwrap());
        assert!(stratified_kfold(&y, 1, 1).is_err());
    }

    #[test]
    fn ensemble_rules() {
        let p = [0.6, 0.6, 0.6, 0.2, 0.2];
        assert_eq!(ensemble_predict(&p, EnsembleMethod::AverageProb), 0);
        assert_eq!(ensemble_predict(&p, EnsembleMethod::MajorityVote), 1);
        for m in [EnsembleMethod::AverageProb, EnsembleMethod::MajorityVote] {
            assert_eq!(ensemble_predict(&[0.9; 5], m), 1);
            assert_eq!(ensemble_predict(&[0.5; 5], m), 1);
        }
    }

    fn separable(n: usize) -> (Vec<Vec<Option<f64>>>, Vec<u8>) {
        let y: Vec<u8> = (0..n).map(|i| (i % 4 == 0) as u8).collect();
        let x = y.iter().enumerate().map(|(i, t)| vec![Some(*t as f64 * 4.0 + (i as f64 * 0.37).sin()), Some((i as f64).cos())]).collect();
        (x, y)
    }

    #[test]
    fn loo_on_separable_cohort() {
        let (x, y) = separable(24);
        let r = loo_evaluate(&x, &y, &EvalConfig::default()).unwrap();
        assert_eq!(r.report.auc, Some(1.0));
        assert_eq!(r.report.tpr, Some(1.0));
        assert_eq!(r.report.fpr, Some(0.0));
        assert!(r.audit_clean());
        // one normalizer plus five inner models per held-out patient
        assert_eq!(r.audit.len(), 24 * 6);
        assert_eq!(r.report_with(EnsembleMethod::AverageProb), r.report);
    }

    #[test]
    fn loo_with_selection_and_svm() {
        let (x, y) = separable(20);
        let cfg = EvalConfig {
            model: ModelConfig::Svm(SvmConfig::default()),
            selection: Some(SelectionConfig::default()),
            ..EvalConfig::default()
        };
        let r = loo_evaluate(&x, &y, &cfg).unwrap();
        assert!(r.audit_clean());
        assert!(r.audit.iter().any(|a| a.stage == "select"));
        assert!(r.report.auc.unwrap() > 0.9);
    }

    #[test]
    fn five_fold_shapes() {
        let (x, y) = separable(30);
        let cfg = EvalConfig { model: ModelConfig::Logreg(LogRegConfig::default()), ..EvalConfig::default() };
        let r = five_fold_evaluate(&x, &y, &cfg).unwrap();
        assert_eq!(r.folds.len(), 5);
        assert_eq!(r.mean.auc, Some(1.0));
        assert!(r.scores.iter().all(|s| s.is_finite()));
        assert!(r.audit.iter().all(AuditEntry::is_clean));
    }

    #[test]
    fn loo_preconditions() {
        let (x, y) = separable(8);
        assert!(matches!(loo_evaluate(&x, &y, &EvalConfig::default()), Err(MlError::TooFewRows(8))));
        let (x, _) = separable(12);
        assert!(matches!(loo_evaluate(&x, &[0; 12], &EvalConfig::default()), Err(MlError::SingleClass)));
    }

    #[test]
    fn lone_positive_cannot_be_folded() {
        // With the only other positive held out, some inner training split
        // is always single-class.
        let (x, mut y) = separable(12);
        y.iter_mut().for_each(|t| *t = 0);
        y[0] = 1;
        y[1] = 1;
        let err = loo_evaluate(&x, &y, &EvalConfig { max_fold_retries: 3, ..EvalConfig::default() }).unwrap_err();
        assert!(matches!(err, MlError::FoldFailure(3)));
    }
}
