use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{balanced_class_weights, check_xy, class_counts, sigmoid, MlError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    /// Penalty `l2 / 2 * |w|^2`; the bias is not penalized.
    pub l2: f64,
    pub balanced: bool,
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self { l2: 1.0, balanced: true, grad_tol: 1e-6, max_iter: 5000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2: f64,
    pub class_weights: [f64; 2],
    /// Objective after each accepted iteration, starting from the zero model.
    pub loss_history: Vec<f64>,
    pub converged: bool,
}

impl LogRegModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.decision(x))
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Class-weighted penalized log loss. `theta` holds the weights followed by
/// the bias.
pub(crate) fn objective(theta: &[f64], x: &[Vec<f64>], y: &[u8], cw: [f64; 2], l2: f64) -> f64 {
    let d = theta.len() - 1;
    let mut loss = 0.0;
    for (row, &t) in x.iter().zip(y) {
        let z = theta[d] + row.iter().zip(theta).map(|(v, w)| v * w).sum::<f64>();
        loss += cw[t as usize] * (softplus(z) - t as f64 * z);
    }
    loss + 0.5 * l2 * theta[..d].iter().map(|w| w * w).sum::<f64>()
}

pub(crate) fn gradient(theta: &[f64], x: &[Vec<f64>], y: &[u8], cw: [f64; 2], l2: f64) -> Vec<f64> {
    let d = theta.len() - 1;
    let mut g = vec![0.0; d + 1];
    for (row, &t) in x.iter().zip(y) {
        let z = theta[d] + row.iter().zip(theta).map(|(v, w)| v * w).sum::<f64>();
        let r = cw[t as usize] * (sigmoid(z) - t as f64);
        for (gj, v) in g.iter_mut().zip(row) {
            *gj += r * v;
        }
        g[d] += r;
    }
    for j in 0..d {
        g[j] += l2 * theta[j];
    }
    g
}

fn hessian(theta: &[f64], x: &[Vec<f64>], y: &[u8], cw: [f64; 2], l2: f64) -> DMatrix<f64> {
    let d = theta.len() - 1;
    let mut h = DMatrix::zeros(d + 1, d + 1);
    let mut a = DVector::zeros(d + 1);
    for (row, &t) in x.iter().zip(y) {
        let z = theta[d] + row.iter().zip(theta).map(|(v, w)| v * w).sum::<f64>();
        let p = sigmoid(z);
        let s = cw[t as usize] * p * (1.0 - p);
        for (j, v) in row.iter().enumerate() {
            a[j] = *v;
        }
        a[d] = 1.0;
        h.ger(s, &a, &a, 1.0);
    }
    for j in 0..d {
        h[(j, j)] += l2;
    }
    h
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Damped Newton iterations with an Armijo backtracking line search, falling
/// back to a gradient step when the Hessian is not positive definite. Starts
/// from the zero model, so the result is deterministic.
pub fn train_logreg(x: &[Vec<f64>], y: &[u8], config: &LogRegConfig) -> Result<LogRegModel, MlError> {
    let d = check_xy(x, y)?;
    if x.is_empty() {
        return Err(MlError::TooFewRows(0));
    }
    if class_counts(y).contains(&0) {
        return Err(MlError::SingleClass);
    }
    if !(config.l2 >= 0.0) {
        return Err(MlError::Config(format!("l2 must be non-negative, got {}", config.l2)));
    }
    let cw = if config.balanced { balanced_class_weights(y) } else { [1.0, 1.0] };
    let l2 = config.l2;
    let mut theta = vec![0.0; d + 1];
    let mut f = objective(&theta, x, y, cw, l2);
    let mut history = vec![f];
    let mut converged = false;
    for _ in 0..config.max_iter {
        let g = gradient(&theta, x, y, cw, l2);
        if norm(&g) < config.grad_tol {
            converged = true;
            break;
        }
        let h = hessian(&theta, x, y, cw, l2);
        let gv = DVector::from_column_slice(&g);
        let step: Vec<f64> = match h.cholesky() {
            Some(c) => (-c.solve(&gv)).iter().copied().collect(),
            None => g.iter().map(|v| -v).collect(),
        };
        let slope: f64 = step.iter().zip(&g).map(|(s, g)| s * g).sum();
        let (step, slope) = if slope < 0.0 { (step, slope) } else { (g.iter().map(|v| -v).collect(), -norm(&g).powi(2)) };
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-12 {
            let cand: Vec<f64> = theta.iter().zip(&step).map(|(a, s)| a + t * s).collect();
            let fc = objective(&cand, x, y, cw, l2);
            if fc <= f + 1e-4 * t * slope {
                theta = cand;
                f = fc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // No representable decrease left: we are at the optimum to
            // machine precision.
            converged = norm(&g) < config.grad_tol.sqrt();
            break;
        }
        history.push(f);
    }
    Ok(LogRegModel { weights: theta[..d].to_vec(), bias: theta[d], l2, class_weights: cw, loss_history: history, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy(seed: u64, n: usize, shift: f64) -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let t = (i % 2) as u8;
            let c = if t == 1 { shift } else { -shift };
            x.push(vec![c + rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            y.push(t);
        }
        (x, y)
    }

    #[test]
    fn separable_training_accuracy() {
        let (x, y) = toy(1, 40, 2.0);
        let m = train_logreg(&x, &y, &LogRegConfig::default()).unwrap();
        assert!(m.converged);
        for (r, t) in x.iter().zip(&y) {
            assert_eq!((m.predict_proba(r) >= 0.5) as u8, *t);
        }
    }

    #[test]
    fn zero_features_give_intercept_only() {
        let x = vec![vec![0.0, 0.0]; 8];
        let y = [0, 0, 0, 0, 0, 0, 1, 1];
        let m = train_logreg(&x, &y, &LogRegConfig { balanced: false, ..LogRegConfig::default() }).unwrap();
        assert!(m.weights.iter().all(|w| w.abs() < 1e-9));
        // unweighted optimum is the log-odds of the prior
        assert!((m.predict_proba(&[0.0, 0.0]) - 0.25).abs() < 1e-7);
        assert!((m.predict_proba(&[0.0, 0.0]) - sigmoid(m.bias)).abs() < 1e-15);
        let m = train_logreg(&x, &y, &LogRegConfig::default()).unwrap();
        assert!((m.predict_proba(&[0.0, 0.0]) - 0.5).abs() < 1e-7);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (x, y) = toy(3, 30, 0.5);
        let cw = balanced_class_weights(&y);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let theta: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let g = gradient(&theta, &x, &y, cw, 1.0);
            for j in 0..3 {
                let h = 1e-5;
                let (mut a, mut b) = (theta.clone(), theta.clone());
                a[j] += h;
                b[j] -= h;
                let fd = (objective(&a, &x, &y, cw, 1.0) - objective(&b, &x, &y, cw, 1.0)) / (2.0 * h);
                assert!((fd - g[j]).abs() < 1e-5, "{fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn loss_never_increases() {
        let (x, y) = toy(5, 60, 0.3);
        let m = train_logreg(&x, &y, &LogRegConfig { l2: 0.01, ..LogRegConfig::default() }).unwrap();
        assert!(m.loss_history.windows(2).all(|w| w[1] <= w[0]));
        let g = gradient(&[m.weights.clone(), vec![m.bias]].concat(), &x, &y, m.class_weights, 0.01);
        assert!(norm(&g) < 1e-6);
    }

    #[test]
    fn single_class_rejected() {
        assert!(matches!(train_logreg(&[vec![1.0], vec![2.0]], &[1, 1], &LogRegConfig::default()), Err(MlError::SingleClass)));
    }
}
