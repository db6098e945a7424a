//! Two-scale encoder–decoder used at every unroll step, and the small
//! residual refiner applied to the calibration sensitivity estimate.

use ndarray::{Array3, Array4};

use crate::diffnet::{
    concat_channels, leaky_relu_backward, leaky_relu_forward, split_channels, upsample2, upsample2_backward,
    Conv2d, ConvCache, ParamSet, LEAKY_SLOPE,
};
use crate::error::Result;
use crate::numerics::{Rng, C64};

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstructor {
    conv_in: Conv2d,
    conv_enc: Conv2d,
    conv_down: Conv2d,
    conv_mid: Conv2d,
    conv_dec: Conv2d,
    conv_out: Conv2d,
    pub channels: usize,
}

pub struct ReconCache {
    c_in: ConvCache,
    a_in: Array4<f64>,
    c_enc: ConvCache,
    a_enc: Array4<f64>,
    c_down: ConvCache,
    a_down: Array4<f64>,
    c_mid: ConvCache,
    a_mid: Array4<f64>,
    c_dec: ConvCache,
    a_dec: Array4<f64>,
    c_out: ConvCache,
}

impl Reconstructor {
    pub fn new(ps: &mut ParamSet, rng: &mut Rng, name: &str, cin: usize, c: usize) -> Self {
        Self {
            conv_in: Conv2d::new(ps, rng, &format!("{name}.in"), cin, c, 3, 1, 1.0),
            conv_enc: Conv2d::new(ps, rng, &format!("{name}.enc"), c, c, 3, 1, 1.0),
            conv_down: Conv2d::new(ps, rng, &format!("{name}.down"), c, 2 * c, 3, 2, 1.0),
            conv_mid: Conv2d::new(ps, rng, &format!("{name}.mid"), 2 * c, 2 * c, 3, 1, 1.0),
            conv_dec: Conv2d::new(ps, rng, &format!("{name}.dec"), 3 * c, c, 3, 1, 1.0),
            conv_out: Conv2d::new(ps, rng, &format!("{name}.out"), c, c, 3, 1, 0.1),
            channels: c,
        }
    }

    pub fn layers(&self) -> [&Conv2d; 6] {
        [&self.conv_in, &self.conv_enc, &self.conv_down, &self.conv_mid, &self.conv_dec, &self.conv_out]
    }

    /// Input `1 × cin × h × w` (h, w even) to features `1 × c × h × w`.
    pub fn forward(&self, ps: &ParamSet, x: &Array4<f64>) -> Result<(Array4<f64>, ReconCache)> {
        let (z, c_in) = self.conv_in.forward(ps, x)?;
        let a_in = leaky_relu_forward(&z, LEAKY_SLOPE);
        let (z, c_enc) = self.conv_enc.forward(ps, &a_in)?;
        let a_enc = leaky_relu_forward(&z, LEAKY_SLOPE);
        let (z, c_down) = self.conv_down.forward(ps, &a_enc)?;
        let a_down = leaky_relu_forward(&z, LEAKY_SLOPE);
        let (z, c_mid) = self.conv_mid.forward(ps, &a_down)?;
        let a_mid = leaky_relu_forward(&z, LEAKY_SLOPE);
        let cat = concat_channels(&[&upsample2(&a_mid), &a_enc])?;
        let (z, c_dec) = self.conv_dec.forward(ps, &cat)?;
        let a_dec = leaky_relu_forward(&z, LEAKY_SLOPE);
        let (out, c_out) = self.conv_out.forward(ps, &a_dec)?;
        Ok((
            out,
            ReconCache { c_in, a_in, c_enc, a_enc, c_down, a_down, c_mid, a_mid, c_dec, a_dec, c_out },
        ))
    }

    /// Leaky-ReLU backward from the activation: for slope > 0 the sign of
    /// the output equals the sign of the input.
    fn act_back(a: &Array4<f64>, g: &Array4<f64>) -> Array4<f64> {
        leaky_relu_backward(a, g, LEAKY_SLOPE)
    }

    pub fn backward(&self, ps: &mut ParamSet, cache: &ReconCache, g_out: &Array4<f64>) -> Array4<f64> {
        let c = self.channels;
        let g = self.conv_out.backward(ps, &cache.c_out, g_out);
        let g = Self::act_back(&cache.a_dec, &g);
        let g_cat = self.conv_dec.backward(ps, &cache.c_dec, &g);
        let parts = split_channels(&g_cat, &[2 * c, c]);
        let g_mid = upsample2_backward(&parts[0]);
        let g = Self::act_back(&cache.a_mid, &g_mid);
        let g = self.conv_mid.backward(ps, &cache.c_mid, &g);
        let g = Self::act_back(&cache.a_down, &g);
        let mut g_enc = self.conv_down.backward(ps, &cache.c_down, &g);
        g_enc += &parts[1];
        let g = Self::act_back(&cache.a_enc, &g_enc);
        let g = self.conv_enc.backward(ps, &cache.c_enc, &g);
        let g = Self::act_back(&cache.a_in, &g);
        self.conv_in.backward(ps, &cache.c_in, &g)
    }
}

/// Complex coil stack to `1 × 2·coils × h × w` (real parts, then imaginary).
pub fn complex_to_channels(maps: &Array3<C64>) -> Array4<f64> {
    let (c, h, w) = maps.dim();
    Array4::from_shape_fn((1, 2 * c, h, w), |(_, ch, y, x)| {
        let z = maps[[ch % c, y, x]];
        if ch < c {
            z.re
        } else {
            z.im
        }
    })
}

pub fn channels_to_complex(t: &Array4<f64>) -> Array3<C64> {
    let (_, c2, h, w) = t.dim();
    let c = c2 / 2;
    Array3::from_shape_fn((c, h, w), |(ci, y, x)| C64::new(t[[0, ci, y, x]], t[[0, ci + c, y, x]]))
}

/// Learned residual correction of the sensitivity maps.
#[derive(Debug, Clone, PartialEq)]
pub struct SmeRefiner {
    conv_a: Conv2d,
    conv_b: Conv2d,
}

pub struct SmeCache {
    c_a: ConvCache,
    a: Array4<f64>,
    c_b: ConvCache,
}

impl SmeRefiner {
    /// The output layer starts at zero so the refiner is initially the
    /// identity.
    pub fn new(ps: &mut ParamSet, rng: &mut Rng, coils: usize, hidden: usize) -> Self {
        let conv_a = Conv2d::new(ps, rng, "sme.a", 2 * coils, hidden, 3, 1, 1.0);
        let conv_b = Conv2d::new(ps, rng, "sme.b", hidden, 2 * coils, 3, 1, 1.0);
        ps.get_mut(conv_b.w).value.fill(0.0);
        Self { conv_a, conv_b }
    }

    pub fn layers(&self) -> [&Conv2d; 2] {
        [&self.conv_a, &self.conv_b]
    }

    /// Returns `maps + r(maps)` (unnormalized).
    pub fn forward(&self, ps: &ParamSet, maps: &Array3<C64>) -> Result<(Array3<C64>, SmeCache)> {
        let x = complex_to_channels(maps);
        let (z, c_a) = self.conv_a.forward(ps, &x)?;
        let a = leaky_relu_forward(&z, LEAKY_SLOPE);
        let (r, c_b) = self.conv_b.forward(ps, &a)?;
        let mut out = maps.clone();
        out += &channels_to_complex(&r);
        Ok((out, SmeCache { c_a, a, c_b }))
    }

    /// Accumulates parameter gradients given the gradient on the output.
    pub fn backward(&self, ps: &mut ParamSet, cache: &SmeCache, g_out: &Array3<C64>) {
        let g = complex_to_channels(g_out);
        let g = self.conv_b.backward(ps, &cache.c_b, &g);
        let g = leaky_relu_backward(&cache.a, &g, LEAKY_SLOPE);
        self.conv_a.backward(ps, &cache.c_a, &g);
    }
}


