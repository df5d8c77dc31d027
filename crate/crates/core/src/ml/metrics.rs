use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(predicted: &[u8], truth: &[u8]) -> Self {
        let mut c = Confusion::default();
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p, t) {
                (1, 1) => c.tp += 1,
                (1, _) => c.fp += 1,
                (_, 1) => c.fn_ += 1,
                _ => c.tn += 1,
            }
        }
        c
    }

    pub fn tpr(&self) -> Option<f64> {
        let d = self.tp + self.fn_;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    pub fn fpr(&self) -> Option<f64> {
        let d = self.fp + self.tn;
        (d > 0).then(|| self.fp as f64 / d as f64)
    }
}

/// Matthews correlation coefficient; 0 when any marginal is empty.
pub fn mcc(c: &Confusion) -> f64 {
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if den == 0.0 {
        0.0
    } else {
        (tp * tn - fp * fn_) / den.sqrt()
    }
}

/// Area under the ROC curve from the rank-sum statistic with midranks, so
/// tied positive/negative pairs count one half. `None` without both classes.
pub fn auc(scores: &[f64], truth: &[u8]) -> Option<f64> {
    let n_pos = truth.iter().filter(|t| **t == 1).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Ranks are doubled so midranks stay integral.
    let mut rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid2 = (i + 1 + j + 1) as u64;
        rank_sum2 += mid2 * order[i..=j].iter().filter(|&&k| truth[k] == 1).count() as u64;
        i = j + 1;
    }
    let (p, n) = (n_pos as u64, n_neg as u64);
    let u2 = rank_sum2 - p * (p + 1);
    Some(u2 as f64 / 2.0 / (p * n) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC points for "positive iff score >= threshold" over every distinct
/// score, preceded by the empty classifier at threshold +inf.
pub fn roc_curve(scores: &[f64], truth: &[u8]) -> Vec<RocPoint> {
    let n_pos = truth.iter().filter(|t| **t == 1).count() as f64;
    let n_neg = truth.len() as f64 - n_pos;
    let rate = |c: usize, n: f64| if n > 0.0 { c as f64 / n } else { 0.0 };
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if truth[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push(RocPoint { threshold: t, fpr: rate(fp, n_neg), tpr: rate(tp, n_pos) });
    }
    out
}

pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut s = String::from("threshold,fpr,tpr\n");
    for p in points {
        let t = if p.threshold.is_infinite() { "inf".to_string() } else { p.threshold.to_string() };
        s.push_str(&format!("{t},{},{}\n", p.fpr, p.tpr));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: Option<f64>,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub mcc: f64,
    pub confusion: Confusion,
    pub roc: Vec<RocPoint>,
}

/// Metrics for aligned scores, hard predictions and true labels.
pub fn compute_metrics(scores: &[f64], predicted: &[u8], truth: &[u8]) -> EvalReport {
    assert_eq!(scores.len(), truth.len(), "scores and labels must align");
    assert_eq!(predicted.len(), truth.len(), "predictions and labels must align");
    let confusion = Confusion::from_predictions(predicted, truth);
    EvalReport {
        auc: auc(scores, truth),
        tpr: confusion.tpr(),
        fpr: confusion.fpr(),
        mcc: mcc(&confusion),
        confusion,
        roc: roc_curve(scores, truth),
    }
}

/// Per-fold metrics averaged over the folds where each is defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub auc: Option<f64>,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub mcc: f64,
    pub folds: usize,
}

pub fn mean_metrics(reports: &[EvalReport]) -> MeanMetrics {
    let avg = |vals: Vec<f64>| (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
    MeanMetrics {
        auc: avg(reports.iter().filter_map(|r| r.auc).collect()),
        tpr: avg(reports.iter().filter_map(|r| r.tpr).collect()),
        fpr: avg(reports.iter().filter_map(|r| r.fpr).collect()),
        mcc: avg(reports.iter().map(|r| r.mcc).collect()).unwrap_or(0.0),
        folds: reports.len(),
    }
}
