//! Coefficient-of-variation loss weighting and the acceleration curriculum.

use std::collections::VecDeque;

/// Weights always sum to this.
pub const WEIGHT_SUM: f64 = 3.0;
pub const WEIGHT_FLOOR: f64 = 0.01;
pub const MEAN_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::uniform()
    }
}

impl LossWeights {
    pub fn uniform() -> Self {
        Self { lambda1: 1.0, lambda2: 1.0, lambda3: 1.0 }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.lambda1, self.lambda2, self.lambda3]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self { lambda1: a[0], lambda2: a[1], lambda3: a[2] }
    }
}

/// Population coefficient of variation, `std / max(mean, MEAN_FLOOR)`.
pub fn coefficient_of_variation(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean.max(MEAN_FLOOR)
}

/// Proportional split of [`WEIGHT_SUM`] with every weight at least
/// [`WEIGHT_FLOOR`]. Floored entries are pinned and the rest rescaled until
/// nothing else falls below the floor.
pub fn weights_from_cv(cv: [f64; 3]) -> LossWeights {
    let total: f64 = cv.iter().sum();
    if !total.is_finite() || total <= 0.0 || cv.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return LossWeights::uniform();
    }
    let mut w = cv.map(|c| WEIGHT_SUM * c / total);
    let mut pinned = [false; 3];
    loop {
        let mut changed = false;
        for i in 0..3 {
            if !pinned[i] && w[i] < WEIGHT_FLOOR {
                pinned[i] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let free_cv: f64 = (0..3).filter(|&i| !pinned[i]).map(|i| cv[i]).sum();
        let budget = WEIGHT_SUM - WEIGHT_FLOOR * pinned.iter().filter(|p| **p).count() as f64;
        for i in 0..3 {
            w[i] = if pinned[i] { WEIGHT_FLOOR } else { budget * cv[i] / free_cv };
        }
    }
    // absorb rounding so the sum is exact to the last bit we can manage
    let free: Vec<usize> = (0..3).filter(|&i| !pinned[i]).collect();
    let drift = WEIGHT_SUM - w.iter().sum::<f64>();
    if let Some(&i) = free.iter().max_by(|&&a, &&b| w[a].total_cmp(&w[b])) {
        w[i] += drift;
    }
    LossWeights::from_array(w)
}

/// λ from the trailing histories, or `current` while any history has fewer
/// than two values.
pub fn cov_update_weights(histories: [&[f64]; 3], current: LossWeights) -> LossWeights {
    if histories.iter().any(|h| h.len() < 2) {
        return current;
    }
    weights_from_cv(histories.map(coefficient_of_variation))
}

/// Trailing per-loss history with the window applied on insertion.
#[derive(Debug, Clone, PartialEq)]
pub struct CovHistory {
    pub window: usize,
    pub series: [VecDeque<f64>; 3],
}

impl CovHistory {
    pub fn new(window: usize) -> Self {
        Self { window, series: Default::default() }
    }

    pub fn push(&mut self, values: [f64; 3]) {
        for (s, v) in self.series.iter_mut().zip(values) {
            if s.len() == self.window {
                s.pop_front();
            }
            s.push_back(v);
        }
    }

    pub fn update(&self, current: LossWeights) -> LossWeights {
        let v: Vec<Vec<f64>> = self.series.iter().map(|s| s.iter().copied().collect()).collect();
        cov_update_weights([&v[0], &v[1], &v[2]], current)
    }
}

/// Acceleration factors enabled at `epoch`: the epochs are split into
/// `accelerations.len()` equal phases and phase `p` enables the first
/// `p + 1` factors.
pub fn curriculum_schedule(epoch: usize, epochs: usize, accelerations: &[usize]) -> &[usize] {
    let phases = accelerations.len();
    if phases == 0 {
        return accelerations;
    }
    let phase = (epoch * phases / epochs.max(1)).min(phases - 1);
    &accelerations[..=phase]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series_with_cv(cv: f64) -> Vec<f64> {
        // mean 1, population std = cv
        vec![1.0 - cv, 1.0 + cv]
    }

    #[test]
    fn constant_histories_are_uniform() {
        let h = vec![2.0; 10];
        let w = cov_update_weights([&h, &h, &h], LossWeights::from_array([2.0, 0.5, 0.5]));
        assert_eq!(w, LossWeights::uniform());
    }

    #[test]
    fn proportional_weights() {
        let (a, b, c) = (series_with_cv(0.2), series_with_cv(0.1), series_with_cv(0.1));
        let w = cov_update_weights([&a, &b, &c], LossWeights::uniform());
        for (got, want) in w.as_array().iter().zip([1.5, 0.75, 0.75]) {
            assert!((got - want).abs() < 1e-12, "{w:?}");
        }
    }

    #[test]
    fn too_short_keeps_current() {
        let cur = LossWeights::from_array([1.2, 0.9, 0.9]);
        assert_eq!(cov_update_weights([&[1.0], &[1.0, 2.0], &[1.0, 2.0]], cur), cur);
    }

    #[test]
    fn floor_is_enforced_with_exact_sum() {
        let w = weights_from_cv([1.0, 1e-6, 0.0]);
        let a = w.as_array();
        assert!(a.iter().all(|&v| v >= WEIGHT_FLOOR));
        assert!((a.iter().sum::<f64>() - WEIGHT_SUM).abs() < 1e-12);
        assert_eq!(a[1], WEIGHT_FLOOR);
        assert_eq!(a[2], WEIGHT_FLOOR);
    }

    #[test]
    fn history_window() {
        let mut h = CovHistory::new(3);
        for i in 0..5 {
            h.push([i as f64; 3]);
        }
        assert_eq!(h.series[0].iter().copied().collect::<Vec<_>>(), vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn curriculum_phases() {
        let acc = [8, 16, 24];
        assert_eq!(curriculum_schedule(0, 20, &acc), &[8]);
        assert_eq!(curriculum_schedule(7, 20, &acc), &[8, 16]);
        assert_eq!(curriculum_schedule(19, 20, &acc), &[8, 16, 24]);
        let mut last = 0;
        for e in 0..20 {
            let n = curriculum_schedule(e, 20, &acc).len();
            assert!(n >= last);
            last = n;
        }
        assert_eq!(curriculum_schedule(0, 2, &[4, 8]), &[4]);
        assert_eq!(curriculum_schedule(1, 2, &[4, 8]), &[4, 8]);
    }
}
