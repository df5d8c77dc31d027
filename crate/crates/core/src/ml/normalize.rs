use serde::{Deserialize, Serialize};

use super::{MlError, RawMatrix};

/// Median imputation followed by z-scoring, with every statistic taken from
/// the training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub median: Vec<f64>,
    pub mean: Vec<f64>,
    /// Population standard deviation after imputation; 0 marks a feature
    /// that is only centered.
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(rows: &RawMatrix) -> Result<Self, MlError> {
        if rows.len() < 2 {
            return Err(MlError::TooFewRows(rows.len()));
        }
        let d = rows[0].len();
        let mut median = Vec::with_capacity(d);
        let mut mean = Vec::with_capacity(d);
        let mut std = Vec::with_capacity(d);
        for j in 0..d {
            let present: Vec<f64> = rows.iter().filter_map(|r| r[j]).filter(|v| v.is_finite()).collect();
            let med = crate::rolling::quantile(&present, 0.5).unwrap_or(0.0);
            let col: Vec<f64> = rows.iter().map(|r| r[j].filter(|v| v.is_finite()).unwrap_or(med)).collect();
            let n = col.len() as f64;
            let mu = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
            median.push(med);
            mean.push(mu);
            // Treat round-off-level spread as constant.
            std.push(if var.sqrt() > 1e-12 * mu.abs().max(1.0) { var.sqrt() } else { 0.0 });
        }
        Ok(Self { median, mean, std })
    }

    pub fn apply(&self, row: &[Option<f64>]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, v)| {
                let v = v.filter(|v| v.is_finite()).unwrap_or(self.median[j]) - self.mean[j];
                if self.std[j] > 0.0 {
                    v / self.std[j]
                } else {
                    v
                }
            })
            .collect()
    }

    pub fn apply_all(&self, rows: &RawMatrix) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.apply(r)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_z_score() {
        let rows = vec![vec![Some(0.0)], vec![Some(10.0)]];
        let n = Normalizer::fit(&rows).unwrap();
        assert_eq!(n.apply_all(&rows), vec![vec![-1.0], vec![1.0]]);
    }

    #[test]
    fn constant_feature_centered_only() {
        let rows = vec![vec![Some(5.0)], vec![Some(5.0)], vec![Some(5.0)]];
        let n = Normalizer::fit(&rows).unwrap();
        assert_eq!(n.std, vec![0.0]);
        assert_eq!(n.apply(&[Some(7.0)]), vec![2.0]);
    }

    #[test]
    fn absent_value_imputed_with_training_median() {
        let rows = vec![vec![Some(1.0)], vec![Some(2.0)], vec![Some(3.0)]];
        let n = Normalizer::fit(&rows).unwrap();
        assert_eq!(n.apply(&[None]), vec![0.0]);
        // absent training values are imputed before the mean is taken
        let rows = vec![vec![Some(1.0)], vec![None], vec![Some(5.0)], vec![Some(3.0)]];
        let n = Normalizer::fit(&rows).unwrap();
        assert_eq!(n.median, vec![3.0]);
        assert_eq!(n.mean, vec![3.0]);
    }

    #[test]
    fn training_output_is_standardized() {
        let rows: Vec<Vec<Option<f64>>> = (0..50).map(|i| vec![Some((i * i) as f64), Some(3.0 * i as f64 - 7.0)]).collect();
        let n = Normalizer::fit(&rows).unwrap();
        let t = n.apply_all(&rows);
        for j in 0..2 {
            let m = t.iter().map(|r| r[j]).sum::<f64>() / 50.0;
            let v = t.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / 50.0;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn needs_two_rows() {
        assert!(Normalizer::fit(&[vec![Some(1.0)]]).is_err());
    }
}
