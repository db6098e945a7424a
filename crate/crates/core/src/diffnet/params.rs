//! Named parameter storage, AdamW, global-norm clipping and the step
//! learning-rate schedule.

use ndarray::{Array1, Array4, ArrayD, Ix1, Ix4};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
    /// First and second AdamW moments.
    pub m: ArrayD<f64>,
    pub v: ArrayD<f64>,
    /// Whether weight decay applies.
    pub decay: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
    /// Number of optimizer steps taken.
    pub step: u64,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<f64>, decay: bool) -> ParamId {
        let zeros = ArrayD::zeros(value.raw_dim());
        self.params.push(Param {
            name: name.into(),
            grad: zeros.clone(),
            m: zeros.clone(),
            v: zeros,
            value,
            decay,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn w4(&self, id: ParamId) -> Array4<f64> {
        self.params[id.0]
            .value
            .clone()
            .into_dimensionality::<Ix4>()
            .expect("parameter is not 4-D")
    }

    pub fn v1(&self, id: ParamId) -> Array1<f64> {
        self.params[id.0]
            .value
            .clone()
            .into_dimensionality::<Ix1>()
            .expect("parameter is not 1-D")
    }

    pub fn scalar(&self, id: ParamId) -> f64 {
        self.params[id.0].value.iter().next().copied().unwrap_or(0.0)
    }

    pub fn accumulate(&mut self, id: ParamId, g: &ArrayD<f64>) {
        self.params[id.0].grad += g;
    }

    pub fn accumulate4(&mut self, id: ParamId, g: &Array4<f64>) {
        self.accumulate(id, &g.clone().into_dyn());
    }

    pub fn accumulate1(&mut self, id: ParamId, g: &Array1<f64>) {
        self.accumulate(id, &g.clone().into_dyn());
    }

    pub fn accumulate_scalar(&mut self, id: ParamId, g: f64) {
        self.params[id.0].grad.iter_mut().for_each(|v| *v += g);
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.iter_mut() {
            p.grad.fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Flattened copy of all values (in insertion order).
    pub fn flat_values(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.value.iter().copied()).collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.grad.iter().copied()).collect()
    }

    pub fn set_flat_values(&mut self, values: &[f64]) {
        let mut it = values.iter();
        for p in self.params.iter_mut() {
            for v in p.value.iter_mut() {
                *v = *it.next().expect("too few values");
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            lr: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.1,
        }
    }
}

impl AdamW {
    /// One decoupled-weight-decay Adam step at learning rate `lr`.
    /// Refuses to touch the parameters if any gradient is NaN.
    pub fn step(&self, params: &mut ParamSet, lr: f64) -> Result<()> {
        if let Some(p) = params.iter().find(|p| p.grad.iter().any(|g| g.is_nan())) {
            return Err(Error::Diverged {
                what: format!("gradient of {}", p.name),
                iteration: params.step,
            });
        }
        params.step += 1;
        let t = params.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for p in params.iter_mut() {
            let decay = if p.decay { lr * self.weight_decay } else { 0.0 };
            ndarray::Zip::from(&mut p.value)
                .and(&p.grad)
                .and(&mut p.m)
                .and(&mut p.v)
                .for_each(|x, &g, m, v| {
                    *x -= decay * *x;
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *x -= lr * mhat / (vhat.sqrt() + self.eps);
                });
        }
        Ok(())
    }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the applied factor.
pub fn clip_grad_norm(params: &mut ParamSet, max_norm: f64) -> f64 {
    let norm = params.grad_norm();
    if norm <= max_norm || norm == 0.0 {
        return 1.0;
    }
    let scale = max_norm / norm;
    for p in params.iter_mut() {
        p.grad.mapv_inplace(|g| g * scale);
    }
    scale
}

/// Same as [`clip_grad_norm`] over several sets sharing one global norm.
pub fn clip_grad_norm_multi(sets: &mut [&mut ParamSet], max_norm: f64) -> f64 {
    let norm = sets
        .iter()
        .map(|s| s.grad_norm().powi(2))
        .sum::<f64>()
        .sqrt();
    if norm <= max_norm || norm == 0.0 {
        return 1.0;
    }
    let scale = max_norm / norm;
    for s in sets.iter_mut() {
        for p in s.iter_mut() {
            p.grad.mapv_inplace(|g| g * scale);
        }
    }
    scale
}

pub const LR_STEP_EPOCHS: u64 = 11;
pub const LR_GAMMA: f64 = 0.1;

/// `base_lr · 0.1^⌊epoch/11⌋`.
pub fn lr_schedule(epoch: u64, base_lr: f64) -> f64 {
    base_lr * LR_GAMMA.powi((epoch / LR_STEP_EPOCHS) as i32)
}

pub fn check_lr(lr: f64) -> Result<()> {
    if lr > 0.0 && lr.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("learning rate must be positive, got {lr}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    fn scalar_set(x: f64, decay: bool) -> (ParamSet, ParamId) {
        let mut ps = ParamSet::new();
        let id = ps.add("x", arr1(&[x]).into_dyn(), decay);
        (ps, id)
    }

    #[test]
    fn zero_gradient_zero_decay_is_noop() {
        let (mut ps, id) = scalar_set(1.25, true);
        let opt = AdamW { weight_decay: 0.0, ..AdamW::default() };
        opt.step(&mut ps, 0.002).unwrap();
        assert_eq!(ps.scalar(id), 1.25);
    }

    #[test]
    fn matches_hand_recurrence() {
        let (mut ps, id) = scalar_set(0.5, true);
        let opt = AdamW::default();
        let grads = [0.3, -0.1, 0.25];
        // hand evaluation of the recurrence
        let (mut x, mut m, mut v) = (0.5_f64, 0.0_f64, 0.0_f64);
        let (b1, b2, lr, wd, eps) = (0.9_f64, 0.999_f64, 0.002, 0.1, 1e-8);
        for (t, g) in grads.iter().enumerate() {
            let t = (t + 1) as i32;
            x -= lr * wd * x;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);

            ps.get_mut(id).grad.fill(*g);
            opt.step(&mut ps, lr).unwrap();
            assert!((ps.scalar(id) - x).abs() < 1e-12);
        }
        assert_eq!(ps.step, 3);
    }

    #[test]
    fn nan_gradient_rejected() {
        let (mut ps, id) = scalar_set(1.0, false);
        ps.get_mut(id).grad.fill(f64::NAN);
        assert!(AdamW::default().step(&mut ps, 0.002).is_err());
        assert_eq!(ps.scalar(id), 1.0);
    }

    #[test]
    fn clipping() {
        let mut ps = ParamSet::new();
        let a = ps.add("a", arr1(&[0.03, 0.04]).into_dyn(), false);
        assert_eq!(clip_grad_norm(&mut ps, 0.1), 1.0);
        ps.get_mut(a).grad = arr1(&[0.6, 0.8]).into_dyn();
        let s = clip_grad_norm(&mut ps, 0.1);
        assert!((s - 0.1).abs() < 1e-15);
        assert!((ps.grad_norm() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn schedule() {
        assert_eq!(lr_schedule(0, 0.002), 0.002);
        assert_eq!(lr_schedule(10, 0.002), 0.002);
        assert!((lr_schedule(11, 0.002) - 0.0002).abs() < 1e-18);
        assert!((lr_schedule(22, 0.002) - 0.00002).abs() < 1e-18);
    }
}
