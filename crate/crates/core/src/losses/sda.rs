//! Cross-domain feature alignment: diagonal-Gaussian summaries of windowed
//! per-domain feature banks compared with the symmetric KL divergence.

use std::collections::VecDeque;

use crate::error::{shape, Result};

pub const VAR_FLOOR: f64 = 1e-5;

/// Diagonal Gaussian (`var` floored at [`VAR_FLOOR`]).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary {
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
}

impl GaussianSummary {
    pub fn new(mu: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mu.len() != var.len() {
            return Err(shape(format!("mu has {} entries, var {}", mu.len(), var.len())));
        }
        let var = var.into_iter().map(|v| v.max(VAR_FLOOR)).collect();
        Ok(Self { mu, var })
    }

    /// Sample mean and (biased) sample variance of the vectors.
    pub fn fit<'a>(vectors: impl IntoIterator<Item = &'a Vec<f64>>) -> Self {
        let vs: Vec<&Vec<f64>> = vectors.into_iter().collect();
        let n = vs.len() as f64;
        let d = vs.first().map_or(0, |v| v.len());
        let mut mu = vec![0.0; d];
        for v in &vs {
            for (m, x) in mu.iter_mut().zip(v.iter()) {
                *m += x;
            }
        }
        mu.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for v in &vs {
            for ((s, x), m) in var.iter_mut().zip(v.iter()).zip(mu.iter()) {
                *s += (x - m) * (x - m);
            }
        }
        let var = var.into_iter().map(|s| (s / n).max(VAR_FLOOR)).collect();
        Self { mu, var }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// `KL(a‖b) + KL(b‖a)` for diagonal Gaussians.
pub fn sym_kl(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(shape(format!("summaries of dimension {} and {}", a.dim(), b.dim())));
    }
    let mut total = 0.0;
    for k in 0..a.dim() {
        let (va, vb) = (a.var[k], b.var[k]);
        let dm = a.mu[k] - b.mu[k];
        total += 0.5 * (va / vb + vb / va - 2.0 + dm * dm * (1.0 / va + 1.0 / vb));
    }
    Ok(total)
}

/// One-sided KL(a‖b), used as an independent reference.
pub fn kl(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(shape(format!("summaries of dimension {} and {}", a.dim(), b.dim())));
    }
    Ok((0..a.dim())
        .map(|k| {
            let (va, vb) = (a.var[k], b.var[k]);
            let dm = a.mu[k] - b.mu[k];
            0.5 * (va / vb + dm * dm / vb - 1.0 + (vb / va).ln())
        })
        .sum())
}

/// Partial derivatives of `sym_kl(a, b)` with respect to `a.mu` and `a.var`.
fn sym_kl_grad_a(a: &GaussianSummary, b: &GaussianSummary) -> (Vec<f64>, Vec<f64>) {
    let mut dmu = Vec::with_capacity(a.dim());
    let mut dvar = Vec::with_capacity(a.dim());
    for k in 0..a.dim() {
        let (va, vb) = (a.var[k], b.var[k]);
        let dm = a.mu[k] - b.mu[k];
        dmu.push(dm * (1.0 / va + 1.0 / vb));
        dvar.push(0.5 * (1.0 / vb - vb / (va * va) - dm * dm / (va * va)));
    }
    (dmu, dvar)
}

/// Ring buffers of pooled feature vectors, one per (unroll step, domain).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    pub capacity: usize,
    buffers: Vec<Vec<VecDeque<Vec<f64>>>>,
}

impl FeatureBank {
    pub fn new(steps: usize, domains: usize, capacity: usize) -> Self {
        Self {
            capacity,
            buffers: vec![vec![VecDeque::with_capacity(capacity); domains]; steps],
        }
    }

    pub fn steps(&self) -> usize {
        self.buffers.len()
    }

    pub fn domains(&self) -> usize {
        self.buffers.first().map_or(0, |d| d.len())
    }

    pub fn get(&self, step: usize, domain: usize) -> &VecDeque<Vec<f64>> {
        &self.buffers[step][domain]
    }

    /// Oldest-first eviction once `capacity` is reached.
    pub fn push(&mut self, step: usize, domain: usize, z: Vec<f64>) {
        let buf = &mut self.buffers[step][domain];
        if buf.len() == self.capacity {
            buf.pop_front();
        }
        buf.push_back(z);
    }

    pub fn clear(&mut self) {
        for step in self.buffers.iter_mut() {
            for b in step.iter_mut() {
                b.clear();
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdaLayer {
    pub value: f64,
    pub pairs: usize,
    /// Gradient with respect to the newest vector of the queried domain.
    pub grad_newest: Option<Vec<f64>>,
}

/// Mean symmetric KL over eligible domain pairs of one layer. A domain is
/// eligible with at least two stored vectors. When `current` names an
/// eligible domain, the gradient with respect to its newest vector is
/// returned (older bank entries are constants).
pub fn sda_layer_loss(bank: &FeatureBank, layer: usize, current: Option<usize>) -> Result<SdaLayer> {
    let eligible: Vec<usize> = (0..bank.domains())
        .filter(|&d| bank.get(layer, d).len() >= 2)
        .collect();
    let summaries: Vec<GaussianSummary> = eligible
        .iter()
        .map(|&d| GaussianSummary::fit(bank.get(layer, d).iter()))
        .collect();
    let mut value = 0.0;
    let mut pairs = 0;
    for i in 0..eligible.len() {
        for j in i + 1..eligible.len() {
            value += sym_kl(&summaries[i], &summaries[j])?;
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Ok(SdaLayer { value: 0.0, pairs: 0, grad_newest: None });
    }
    let value = value / pairs as f64;

    let grad_newest = current.and_then(|c| eligible.iter().position(|&d| d == c)).map(|ci| {
        let me = &summaries[ci];
        let d = me.dim();
        let mut dmu = vec![0.0; d];
        let mut dvar = vec![0.0; d];
        for (oj, other) in summaries.iter().enumerate() {
            if oj == ci {
                continue;
            }
            let (gm, gv) = sym_kl_grad_a(me, other);
            for k in 0..d {
                dmu[k] += gm[k] / pairs as f64;
                dvar[k] += gv[k] / pairs as f64;
            }
        }
        let buf = bank.get(layer, eligible[ci]);
        let n = buf.len() as f64;
        let newest = buf.back().expect("eligible buffer is non-empty");
        // recompute the unfloored variance to know where the floor is active
        let raw = GaussianSummary::fit(buf.iter());
        (0..d)
            .map(|k| {
                let unfloored: f64 = buf.iter().map(|v| (v[k] - raw.mu[k]).powi(2)).sum::<f64>() / n;
                let dv = if unfloored > VAR_FLOOR { dvar[k] } else { 0.0 };
                dmu[k] / n + dv * 2.0 * (newest[k] - me.mu[k]) / n
            })
            .collect()
    });
    Ok(SdaLayer { value, pairs, grad_newest })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdaLoss {
    pub total: f64,
    pub per_layer: Vec<f64>,
    /// False when no layer had an eligible domain pair.
    pub enough_samples: bool,
}

/// Sum over layers of [`sda_layer_loss`].
pub fn sda_loss(bank: &FeatureBank) -> Result<SdaLoss> {
    let mut per_layer = Vec::with_capacity(bank.steps());
    let mut any = false;
    for l in 0..bank.steps() {
        let layer = sda_layer_loss(bank, l, None)?;
        any |= layer.pairs > 0;
        per_layer.push(layer.value);
    }
    Ok(SdaLoss {
        total: per_layer.iter().sum(),
        per_layer,
        enough_samples: any,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::grad_check;
    use crate::numerics::Rng;

    #[test]
    fn closed_form_one_dimensional() {
        let a = GaussianSummary::new(vec![0.0], vec![1.0]).unwrap();
        let b = GaussianSummary::new(vec![1.0], vec![1.0]).unwrap();
        assert!((sym_kl(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(sym_kl(&a, &a).unwrap(), 0.0);
        let c = GaussianSummary::new(vec![0.0, 1.0], vec![1.0, 1.0]).unwrap();
        assert!(sym_kl(&a, &c).is_err());
    }

    #[test]
    fn symmetric_and_matches_two_kls() {
        let a = GaussianSummary::new(vec![0.3, -1.0], vec![0.5, 2.0]).unwrap();
        let b = GaussianSummary::new(vec![-0.2, 0.4], vec![1.5, 0.7]).unwrap();
        let s = sym_kl(&a, &b).unwrap();
        assert!((s - sym_kl(&b, &a).unwrap()).abs() < 1e-15);
        assert!((s - kl(&a, &b).unwrap() - kl(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn bank_ring_behaviour() {
        let mut bank = FeatureBank::new(2, 3, 4);
        for i in 0..6 {
            bank.push(0, 0, vec![i as f64]);
        }
        let got: Vec<f64> = bank.get(0, 0).iter().map(|v| v[0]).collect();
        assert_eq!(got, vec![2.0, 3.0, 4.0, 5.0]);
        assert!(bank.get(0, 1).is_empty());
        assert!(bank.get(1, 0).is_empty());
    }

    #[test]
    fn not_enough_samples() {
        let mut bank = FeatureBank::new(1, 5, 4);
        bank.push(0, 0, vec![1.0]);
        bank.push(0, 1, vec![2.0]);
        let l = sda_loss(&bank).unwrap();
        assert!(!l.enough_samples);
        assert_eq!(l.total, 0.0);
    }

    #[test]
    fn newest_vector_gradient() {
        let mut rng = Rng::new(3);
        let mut bank = FeatureBank::new(1, 3, 4);
        for d in 0..3 {
            for _ in 0..4 {
                bank.push(0, d, (0..3).map(|_| rng.normal() + d as f64).collect());
            }
        }
        let layer = sda_layer_loss(&bank, 0, Some(1)).unwrap();
        let newest = bank.get(0, 1).back().unwrap().clone();
        let err = grad_check(
            |v| {
                let mut moved = bank.clone();
                let buf = &mut moved.buffers[0][1];
                buf.pop_back();
                buf.push_back(v.to_vec());
                sda_layer_loss(&moved, 0, None).unwrap().value
            },
            &newest,
            layer.grad_newest.as_ref().unwrap(),
            1e-6,
            None,
        );
        assert!(err < 1e-6, "{err}");
    }
}
