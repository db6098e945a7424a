//! A deliberately small reverse-mode operator stack: each layer has an
//! explicit forward and backward and every one is checked against central
//! finite differences. Parameters live in a [`ParamSet`] and are updated by
//! [`AdamW`].

pub mod gradcheck;
pub mod ops;
pub mod params;

use ndarray::{Array1, Array4};

use crate::error::{invalid, Result};
use crate::numerics::Rng;

pub use gradcheck::grad_check;
pub use ops::*;
pub use params::{
    clip_grad_norm, clip_grad_norm_multi, lr_schedule, AdamW, Param, ParamId, ParamSet,
};

/// Data with a same-shaped gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    pub data: Array4<f64>,
    pub grad: Array4<f64>,
}

impl Tensor4 {
    pub fn new(data: Array4<f64>) -> Self {
        let grad = Array4::zeros(data.raw_dim());
        Self { data, grad }
    }
}

/// He-style initialization for a `cout × cin × k × k` kernel.
pub fn init_conv_weight(rng: &mut Rng, cout: usize, cin: usize, k: usize, gain: f64) -> Array4<f64> {
    let std = gain * (2.0 / (cin * k * k) as f64).sqrt();
    Array4::from_shape_fn((cout, cin, k, k), |_| rng.normal() * std)
}

/// A convolution whose weight and bias live in a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut Rng,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        gain: f64,
    ) -> Self {
        let w = ps.add(format!("{name}.w"), init_conv_weight(rng, cout, cin, k, gain).into_dyn(), true);
        let b = ps.add(format!("{name}.b"), Array1::<f64>::zeros(cout).into_dyn(), false);
        Self { w, b, stride, pad: k / 2 }
    }

    pub fn forward(&self, ps: &ParamSet, x: &Array4<f64>) -> Result<(Array4<f64>, ConvCache)> {
        conv_forward(x, &ps.w4(self.w), &ps.v1(self.b), self.stride, self.pad)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&self, ps: &mut ParamSet, cache: &ConvCache, g: &Array4<f64>) -> Array4<f64> {
        let (gx, gw, gb) = conv_backward(cache, &ps.w4(self.w), g);
        ps.accumulate4(self.w, &gw);
        ps.accumulate1(self.b, &gb);
        gx
    }
}

/// Learnable per-step prompt vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTable {
    pub ids: Vec<ParamId>,
    pub channels: usize,
}

impl PromptTable {
    pub fn new(ps: &mut ParamSet, rng: &mut Rng, steps: usize, channels: usize) -> Self {
        let ids = (0..steps)
            .map(|t| {
                let v = Array1::from_shape_fn(channels, |_| 0.1 * rng.normal());
                ps.add(format!("prompt.{t}"), v.into_dyn(), false)
            })
            .collect();
        Self { ids, channels }
    }

    fn id(&self, step: usize) -> Result<ParamId> {
        self.ids
            .get(step)
            .copied()
            .ok_or_else(|| invalid(format!("prompt step {step} out of range 0..{}", self.ids.len())))
    }

    /// Step `step`'s vector broadcast to `1 × channels × h × w`.
    pub fn embed(&self, step: usize, ps: &ParamSet, h: usize, w: usize) -> Result<Array4<f64>> {
        Ok(prompt_broadcast(&ps.v1(self.id(step)?), h, w))
    }

    pub fn backward(&self, step: usize, ps: &mut ParamSet, g: &Array4<f64>) -> Result<()> {
        let id = self.id(step)?;
        ps.accumulate1(id, &prompt_broadcast_backward(g));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompts_are_per_step() {
        let mut ps = ParamSet::new();
        let mut rng = Rng::new(0);
        let table = PromptTable::new(&mut ps, &mut rng, 3, 4);
        assert_eq!(table.channels, 4);
        let a = table.embed(0, &ps, 2, 2).unwrap();
        let b = table.embed(1, &ps, 2, 2).unwrap();
        assert_ne!(a, b);
        assert!(table.embed(3, &ps, 2, 2).is_err());

        let g = Array4::from_elem((1, 4, 2, 2), 1.0);
        table.backward(1, &mut ps, &g).unwrap();
        for (t, id) in table.ids.iter().enumerate() {
            let nonzero = ps.get(*id).grad.iter().any(|&v| v != 0.0);
            assert_eq!(nonzero, t == 1);
        }
        assert!(ps.get(table.ids[1]).grad.iter().all(|&v| v == 4.0));
    }

    #[test]
    fn conv_layer_zero_weights_gives_bias() {
        let mut ps = ParamSet::new();
        let mut rng = Rng::new(0);
        let conv = Conv2d::new(&mut ps, &mut rng, "c", 2, 3, 3, 1, 1.0);
        ps.get_mut(conv.w).value.fill(0.0);
        ps.get_mut(conv.b).value.fill(0.25);
        let x = Array4::from_elem((1, 2, 5, 5), 3.0);
        let (y, _) = conv.forward(&ps, &x).unwrap();
        assert!(y.iter().all(|&v| v == 0.25));
    }
}
