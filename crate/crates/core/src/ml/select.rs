use serde::{Deserialize, Serialize};

use super::cv::{cv_predictions, stratified_kfold};
use super::{mcc, Confusion, MlError, ModelConfig};

/// Pearson correlation of two columns; `None` if either has zero variance.
/// Clamped to [-1, 1] against round-off.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneResult {
    /// Column indices kept, in scan order.
    pub retained: Vec<usize>,
    /// `(dropped, retained column it collided with, correlation)`.
    pub dropped: Vec<(usize, usize, f64)>,
    /// Retained columns with zero variance, whose correlation is undefined.
    pub zero_variance: Vec<usize>,
}

fn column(x: &[Vec<f64>], j: usize) -> Vec<f64> {
    x.iter().map(|r| r[j]).collect()
}

/// Greedy scan in column order: a column is dropped when it exactly
/// duplicates a retained one, or when `|rho|` with any retained column
/// exceeds `threshold`.
pub fn pearson_prune(x: &[Vec<f64>], threshold: f64) -> PruneResult {
    let d = x.first().map_or(0, Vec::len);
    let cols: Vec<Vec<f64>> = (0..d).map(|j| column(x, j)).collect();
    let mut out = PruneResult { retained: Vec::new(), dropped: Vec::new(), zero_variance: Vec::new() };
    'scan: for j in 0..d {
        for &r in &out.retained {
            if cols[j] == cols[r] {
                out.dropped.push((j, r, 1.0));
                continue 'scan;
            }
        }
        let var_zero = cols[j].iter().all(|v| *v == cols[j][0]);
        if !var_zero {
            for &r in &out.retained {
                if let Some(rho) = pearson(&cols[j], &cols[r]) {
                    if rho.abs() > threshold {
                        out.dropped.push((j, r, rho));
                        continue 'scan;
                    }
                }
            }
        } else {
            out.zero_variance.push(j);
        }
        out.retained.push(j);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub feature: usize,
    pub mcc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub selected: Vec<usize>,
    pub steps: Vec<SelectionStep>,
}

pub const MIN_IMPROVEMENT: f64 = 1e-4;

/// Mean MCC over the folds of a fixed stratified 5-fold plan.
fn cv_mcc(x: &[Vec<f64>], y: &[u8], cols: &[usize], model: &ModelConfig, seed: u64) -> Result<f64, MlError> {
    let sub: Vec<Vec<f64>> = x.iter().map(|r| cols.iter().map(|&c| r[c]).collect()).collect();
    let plan = stratified_kfold(y, 5, seed)?;
    let probs = cv_predictions(&sub, y, &plan, model)?;
    let mut total = 0.0;
    for fold in &plan.folds {
        let pred: Vec<u8> = fold.iter().map(|&i| (probs[i] >= 0.5) as u8).collect();
        let truth: Vec<u8> = fold.iter().map(|&i| y[i]).collect();
        total += mcc(&Confusion::from_predictions(&pred, &truth));
    }
    Ok(total / plan.folds.len() as f64)
}

/// Greedy forward selection over `candidates` (column indices of the
/// already-normalized `x`), maximizing mean 5-fold MCC. Stops when the best
/// addition improves by no more than 1e-4; ties go to the earlier candidate.
pub fn forward_select(
    x: &[Vec<f64>],
    y: &[u8],
    candidates: &[usize],
    model: &ModelConfig,
    seed: u64,
) -> Result<SelectionTrace, MlError> {
    let mut selected: Vec<usize> = Vec::new();
    let mut steps = Vec::new();
    let mut current = 0.0;
    loop {
        let mut best: Option<(usize, f64)> = None;
        for &c in candidates.iter().filter(|c| !selected.contains(c)) {
            let mut cols = selected.clone();
            cols.push(c);
            let score = cv_mcc(x, y, &cols, model, seed)?;
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((c, score));
            }
        }
        match best {
            Some((c, score)) if score > current + MIN_IMPROVEMENT => {
                selected.push(c);
                steps.push(SelectionStep { feature: c, mcc: score });
                current = score;
            }
            _ => break,
        }
    }
    Ok(SelectionTrace { selected, steps })
}
