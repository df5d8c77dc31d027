//! Sliding-window helpers shared by preprocessing and event detection.

/// Linear-interpolated quantile of an ascending slice (numpy's default).
pub(crate) fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub(crate) fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(sorted_quantile(&v, q))
}

/// For every index, the `q` quantile of the valid values inside the centered
/// window `[k - window/2, k + window/2]`. NaN where that window holds no
/// valid sample.
pub(crate) fn centered_quantile(values: &[f64], valid: &[bool], window: usize, q: f64) -> Vec<f64> {
    let n = values.len();
    let half = window / 2;
    let mut sorted: Vec<f64> = Vec::with_capacity(window + 1);
    let mut out = vec![f64::NAN; n];
    let insert = |s: &mut Vec<f64>, v: f64| {
        let at = s.partition_point(|x| x.total_cmp(&v).is_lt());
        s.insert(at, v);
    };
    let remove = |s: &mut Vec<f64>, v: f64| {
        let at = s.partition_point(|x| x.total_cmp(&v).is_lt());
        debug_assert!(at < s.len() && s[at] == v);
        s.remove(at);
    };
    // Window for k covers [k - half, k + half]; grow the right edge first.
    for j in 0..half.min(n) {
        if valid[j] {
            insert(&mut sorted, values[j]);
        }
    }
    for k in 0..n {
        let enter = k + half;
        if enter < n && valid[enter] {
            insert(&mut sorted, values[enter]);
        }
        if k > half {
            let leave = k - half - 1;
            if valid[leave] {
                remove(&mut sorted, values[leave]);
            }
        }
        if !sorted.is_empty() {
            out[k] = sorted_quantile(&sorted, q);
        }
    }
    out
}

/// Centered moving average over finite values; NaN entries are skipped and
/// a window with none yields NaN.
pub(crate) fn centered_mean(values: &[f64], window: usize) -> Vec<f64> {
    let n = values.len();
    let half = window / 2;
    let mut prefix = vec![0.0; n + 1];
    let mut count = vec![0usize; n + 1];
    for (i, v) in values.iter().enumerate() {
        let ok = v.is_finite();
        prefix[i + 1] = prefix[i] + if ok { *v } else { 0.0 };
        count[i + 1] = count[i] + ok as usize;
    }
    (0..n)
        .map(|k| {
            let lo = k.saturating_sub(half);
            let hi = (k + half + 1).min(n);
            let c = count[hi] - count[lo];
            if c == 0 {
                f64::NAN
            } else {
                (prefix[hi] - prefix[lo]) / c as f64
            }
        })
        .collect()
}

/// Replaces NaN entries by the nearest finite neighbour (earlier one on a
/// tie). All-NaN input is returned unchanged.
pub(crate) fn fill_nearest(values: &mut [f64]) {
    let n = values.len();
    let mut last: Option<usize> = None;
    let mut prev = vec![None; n];
    for k in 0..n {
        if values[k].is_finite() {
            last = Some(k);
        }
        prev[k] = last;
    }
    let mut next: Option<usize> = None;
    let mut fill = vec![f64::NAN; n];
    for k in (0..n).rev() {
        if values[k].is_finite() {
            next = Some(k);
        }
        fill[k] = match (prev[k], next) {
            (Some(p), Some(q)) => values[if k - p <= q - k { p } else { q }],
            (Some(p), None) => values[p],
            (None, Some(q)) => values[q],
            (None, None) => f64::NAN,
        };
    }
    values.copy_from_slice(&fill);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(values: &[f64], valid: &[bool], window: usize, q: f64) -> Vec<f64> {
        let half = window / 2;
        (0..values.len())
            .map(|k| {
                let lo = k.saturating_sub(half);
                let hi = (k + half + 1).min(values.len());
                let w: Vec<f64> = (lo..hi).filter(|&i| valid[i]).map(|i| values[i]).collect();
                quantile(&w, q).unwrap_or(f64::NAN)
            })
            .collect()
    }

    #[test]
    fn matches_naive_window_quantile() {
        let values: Vec<f64> = (0..300).map(|i| ((i * 37 % 101) as f64).sin() * 10.0 + i as f64 * 0.1).collect();
        let valid: Vec<bool> = (0..300).map(|i| i % 7 != 3 && !(100..140).contains(&i)).collect();
        for &(w, q) in &[(20, 0.5), (41, 0.1), (7, 0.9), (600, 0.5)] {
            let fast = centered_quantile(&values, &valid, w, q);
            let slow = naive(&values, &valid, w, q);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12 || (a.is_nan() && b.is_nan()));
            }
        }
    }

    #[test]
    fn fill_nearest_prefers_closest() {
        let mut v = vec![f64::NAN, 1.0, f64::NAN, f64::NAN, f64::NAN, 5.0, f64::NAN];
        fill_nearest(&mut v);
        assert_eq!(v, vec![1.0, 1.0, 1.0, 1.0, 5.0, 5.0, 5.0]);
    }
}
