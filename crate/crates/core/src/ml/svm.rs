use serde::{Deserialize, Serialize};

use super::{balanced_class_weights, check_xy, class_counts, sigmoid, MlError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    /// `exp(-gamma |a - b|^2)`; `None` picks `1 / (d * var(X))`.
    Rbf { gamma: Option<f64> },
}

impl Kernel {
    fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma.unwrap_or(1.0) * d2).exp()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub kernel: Kernel,
    pub c: f64,
    pub balanced: bool,
    /// Maximal KKT violation accepted at termination.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self { kernel: Kernel::Rbf { gamma: None }, c: 1.0, balanced: true, tol: 1e-4, max_iter: 1_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    /// Kernel with any automatic gamma resolved.
    pub kernel: Kernel,
    pub c: f64,
    pub class_weights: [f64; 2],
    /// Training points with non-zero dual coefficient.
    pub support: Vec<Vec<f64>>,
    /// `alpha_i * y_i` for each support vector, `y` in {-1, +1}.
    pub coef: Vec<f64>,
    pub bias: f64,
    /// All dual variables, aligned with the training rows.
    pub alpha: Vec<f64>,
    /// Dual objective `1/2 a'Qa - sum(a)` at the solution.
    pub dual_objective: f64,
    pub iterations: usize,
}

impl SvmModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.bias + self.support.iter().zip(&self.coef).map(|(s, c)| c * self.kernel.eval(s, x)).sum::<f64>()
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.decision(x))
    }
}

const TAU: f64 = 1e-12;

/// Soft-margin dual solved by SMO with second-order working-set selection.
/// Upper bounds are `C` times the class weight of each point.
pub fn train_svm(x: &[Vec<f64>], y: &[u8], config: &SvmConfig) -> Result<SvmModel, MlError> {
    let d = check_xy(x, y)?;
    if class_counts(y).contains(&0) {
        return Err(MlError::SingleClass);
    }
    if !(config.c > 0.0) {
        return Err(MlError::Config(format!("C must be positive, got {}", config.c)));
    }
    let kernel = match config.kernel {
        Kernel::Rbf { gamma: None } => {
            let all: Vec<f64> = x.iter().flatten().copied().collect();
            let m = all.iter().sum::<f64>() / all.len().max(1) as f64;
            let var = all.iter().map(|v| (v - m).powi(2)).sum::<f64>() / all.len().max(1) as f64;
            let gamma = if var > 0.0 && d > 0 { 1.0 / (d as f64 * var) } else { 1.0 };
            Kernel::Rbf { gamma: Some(gamma) }
        }
        k => k,
    };
    let n = x.len();
    let cw = if config.balanced { balanced_class_weights(y) } else { [1.0, 1.0] };
    let ys: Vec<f64> = y.iter().map(|&t| if t == 1 { 1.0 } else { -1.0 }).collect();
    let bound: Vec<f64> = y.iter().map(|&t| config.c * cw[t as usize]).collect();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.eval(&x[i], &x[j]);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    let q = |i: usize, j: usize| ys[i] * ys[j] * k[i * n + j];

    let mut alpha = vec![0.0; n];
    let mut g = vec![-1.0; n];
    let is_up = |a: f64, i: usize| (ys[i] > 0.0 && a < bound[i]) || (ys[i] < 0.0 && a > 0.0);
    let is_low = |a: f64, i: usize| (ys[i] < 0.0 && a < bound[i]) || (ys[i] > 0.0 && a > 0.0);

    let mut iterations = 0;
    loop {
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            if is_up(alpha[t], t) && -ys[t] * g[t] >= gmax && (-ys[t] * g[t] > gmax || i_sel == usize::MAX) {
                gmax = -ys[t] * g[t];
                i_sel = t;
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j_sel = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !is_low(alpha[t], t) {
                continue;
            }
            let v = -ys[t] * g[t];
            gmin = gmin.min(v);
            if i_sel != usize::MAX && v < gmax {
                let b = gmax - v;
                let mut a = k[i_sel * n + i_sel] + k[t * n + t] - 2.0 * k[i_sel * n + t];
                if a <= 0.0 {
                    a = TAU;
                }
                let obj = -(b * b) / a;
                if obj < best {
                    best = obj;
                    j_sel = t;
                }
            }
        }
        if i_sel == usize::MAX || j_sel == usize::MAX || gmax - gmin < config.tol || iterations >= config.max_iter {
            break;
        }
        iterations += 1;
        let (i, j) = (i_sel, j_sel);
        let (ci, cj) = (bound[i], bound[j]);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if ys[i] != ys[j] {
            let mut quad = k[i * n + i] + k[j * n + j] + 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-g[i] - g[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let mut quad = k[i * n + i] + k[j * n + j] - 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (g[i] - g[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            g[t] += q(i, t) * di + q(j, t) * dj;
        }
    }

    // Offset from free vectors, or the midpoint of the feasible interval.
    let (mut ub, mut lb, mut sum_free, mut n_free) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for t in 0..n {
        let yg = ys[t] * g[t];
        let at_upper = alpha[t] >= bound[t];
        let at_lower = alpha[t] <= 0.0;
        if at_upper {
            if ys[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if at_lower {
            if ys[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 { sum_free / n_free as f64 } else { (ub + lb) / 2.0 };
    let dual_objective = 0.5 * alpha.iter().zip(&g).map(|(a, g)| a * (g - 1.0)).sum::<f64>();
    let (support, coef) = (0..n).filter(|&t| alpha[t] > 0.0).map(|t| (x[t].clone(), alpha[t] * ys[t])).unzip();
    Ok(SvmModel {
        kernel,
        c: config.c,
        class_weights: cw,
        support,
        coef,
        bias: -rho,
        alpha,
        dual_objective,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(c: f64) -> SvmConfig {
        SvmConfig { kernel: Kernel::Linear, c, balanced: false, ..SvmConfig::default() }
    }

    #[test]
    fn two_points_give_perpendicular_bisector() {
        let x = vec![vec![1.0, 1.0], vec![3.0, 2.0]];
        let m = train_svm(&x, &[0, 1], &linear(100.0)).unwrap();
        let mid = [2.0, 1.5];
        assert!(m.decision(&mid).abs() < 1e-6);
        // moving along the bisector keeps the decision at zero
        assert!(m.decision(&[2.0 + 1.0, 1.5 - 2.0]).abs() < 1e-6);
        assert!((m.decision(&x[1]) - 1.0).abs() < 1e-6);
        assert!((m.decision(&x[0]) + 1.0).abs() < 1e-6);
    }

    #[test]
    fn rbf_separates_xor() {
        let x = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]];
        let y = [0, 0, 1, 1];
        let cfg = SvmConfig { kernel: Kernel::Rbf { gamma: Some(2.0) }, c: 10.0, ..SvmConfig::default() };
        let m = train_svm(&x, &y, &cfg).unwrap();
        for (r, t) in x.iter().zip(&y) {
            assert_eq!((m.decision(r) > 0.0) as u8, *t);
        }
    }

    fn gram(x: &[Vec<f64>], ys: &[f64], k: Kernel) -> [[f64; 4]; 4] {
        let mut q = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                q[i][j] = ys[i] * ys[j] * k.eval(&x[i], &x[j]);
            }
        }
        q
    }

    fn dual(alpha: &[f64], q: &[[f64; 4]; 4]) -> f64 {
        let mut v = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                v += 0.5 * alpha[i] * alpha[j] * q[i][j];
            }
        }
        v - alpha.iter().sum::<f64>()
    }

    /// Grid over three duals with the fourth fixed by the equality
    /// constraint, refined around the best coarse point.
    fn grid_min(ys: &[f64], c: f64, q: &[[f64; 4]; 4]) -> f64 {
        let mut best = (f64::INFINITY, [0.0; 3]);
        let search = |center: [f64; 3], half: f64, step: f64, best: &mut (f64, [f64; 3])| {
            let steps = (2.0 * half / step).round() as i64;
            for a in 0..=steps {
                for b in 0..=steps {
                    for cc in 0..=steps {
                        let v = [
                            center[0] - half + a as f64 * step,
                            center[1] - half + b as f64 * step,
                            center[2] - half + cc as f64 * step,
                        ];
                        if v.iter().any(|t| *t < 0.0 || *t > c) {
                            continue;
                        }
                        let a4 = -(v[0] * ys[0] + v[1] * ys[1] + v[2] * ys[2]) * ys[3];
                        if !(0.0..=c).contains(&a4) {
                            continue;
                        }
                        let f = dual(&[v[0], v[1], v[2], a4], q);
                        if f < best.0 {
                            *best = (f, v);
                        }
                    }
                }
            }
        };
        search([c / 2.0; 3], c / 2.0, c / 50.0, &mut best);
        let center = best.1;
        search(center, c / 25.0, c / 2000.0, &mut best);
        best.0
    }

    #[test]
    fn objective_matches_brute_force_dual() {
        let x = vec![vec![0.0, 0.0], vec![1.0, 0.5], vec![0.8, 1.2], vec![0.3, 0.9]];
        let y = [0u8, 1, 1, 0];
        let ys: Vec<f64> = y.iter().map(|&t| if t == 1 { 1.0 } else { -1.0 }).collect();
        for k in [Kernel::Linear, Kernel::Rbf { gamma: Some(1.5) }] {
            let cfg = SvmConfig { kernel: k, c: 1.0, balanced: false, ..SvmConfig::default() };
            let m = train_svm(&x, &y, &cfg).unwrap();
            let q = gram(&x, &ys, k);
            let grid = grid_min(&ys, 1.0, &q);
            assert!((m.dual_objective - dual(&m.alpha, &q)).abs() < 1e-9);
            assert!((m.dual_objective - grid).abs() < 1e-3, "{k:?}: {} vs {grid}", m.dual_objective);
            assert!(m.dual_objective <= grid + 1e-9);
        }
    }

    #[test]
    fn duals_respect_class_weighted_bounds() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64 * 0.7).sin(), (i as f64 * 1.3).cos()]).collect();
        let y: Vec<u8> = (0..30).map(|i| (i % 5 == 0) as u8).collect();
        let m = train_svm(&x, &y, &SvmConfig::default()).unwrap();
        for (a, t) in m.alpha.iter().zip(&y) {
            assert!(*a >= 0.0 && *a <= m.c * m.class_weights[*t as usize] + 1e-12);
        }
        let balance: f64 = m.alpha.iter().zip(&y).map(|(a, t)| if *t == 1 { *a } else { -*a }).sum();
        assert!(balance.abs() < 1e-9);
    }

    #[test]
    fn single_class_rejected() {
        assert!(matches!(train_svm(&[vec![0.0], vec![1.0]], &[0, 0], &linear(1.0)), Err(MlError::SingleClass)));
    }
}
