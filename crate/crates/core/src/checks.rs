//! Self-contained verification suites: numerical identities, finite-difference
//! gradient checks and closed-form loss/mask oracles. Each returns one
//! [`Check`] per property so callers can print or assert on them.

use std::f64::consts::PI;
use std::fmt;

use ndarray::{s, Array1, Array2, Array3, Array4};

use crate::diffnet::ops::{
    conv_backward, conv_forward, global_avg_pool, global_avg_pool_backward, leaky_relu_backward, leaky_relu_forward,
    upsample2, upsample2_backward,
};
use crate::diffnet::grad_check;
use crate::error::Result;
use crate::losses::fidelity::{fidelity_loss_central, fidelity_loss_target};
use crate::losses::{
    bce_loss, ear_loss, ear_mask, magnitude, magnitude_backward, sda_layer_loss, ssim, ssim_with_grad, sym_kl,
    FeatureBank, GaussianSummary, LABEL_FAKE,
};
use crate::mri::{
    adjoint_operator, coil_combine, coils_fft, data_consistency, forward_operator, normalize_maps, KSpaceVolume,
    SensitivityMaps,
};
use crate::numerics::{fft2c, ifft2c, ComplexImage, RealImage, Rng, C64};
use crate::sampling::{
    acs_rows, effective_acceleration, gaussian_line_budget, radial_kt_mask, radial_spoke_angles, radial_spoke_count,
    rasterize_spoke, uniform_kt_mask, SamplingMask, Trajectory,
};
use crate::unroll::{normalize_maps_backward, Discriminator, Generator, GeneratorConfig, StepGrad};

/// Outcome of one property: `value` compared against `tol` (`value <= tol`
/// passes).
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tol: f64,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, tol: f64) -> Self {
        Self { name: name.into(), value, tol }
    }

    /// An exact property: 0 when it holds, 1 otherwise.
    pub fn exact(name: impl Into<String>, holds: bool) -> Self {
        Self::new(name, if holds { 0.0 } else { 1.0 }, 0.0)
    }

    pub fn pass(&self) -> bool {
        self.value.is_finite() && self.value <= self.tol
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.pass() { "ok" } else { "FAILED" };
        write!(f, "{:<48} {:>11.3e} <= {:.0e}  {status}", self.name, self.value, self.tol)
    }
}

pub fn all_pass(checks: &[Check]) -> bool {
    checks.iter().all(Check::pass)
}

fn rand_c(rng: &mut Rng) -> C64 {
    C64::new(rng.normal(), rng.normal())
}

fn rand_image(rng: &mut Rng, h: usize, w: usize) -> ComplexImage {
    ComplexImage::from_shape_fn((h, w), |_| rand_c(rng))
}

fn max_abs_diff<'a>(a: impl IntoIterator<Item = &'a C64>, b: impl IntoIterator<Item = &'a C64>) -> f64 {
    a.into_iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).norm()))
}

fn random_maps(rng: &mut Rng, c: usize, h: usize, w: usize) -> SensitivityMaps {
    SensitivityMaps::new(normalize_maps(&Array3::from_shape_fn((c, h, w), |_| rand_c(rng))))
}

/// FFT round trip and unitarity, operator adjointness and the elementwise
/// data-consistency oracle.
pub fn numerics_suite() -> Result<Vec<Check>> {
    let mut rng = Rng::new(0x5eed);
    let mut out = Vec::new();
    for (h, w) in [(64, 64), (37, 50)] {
        let x = rand_image(&mut rng, h, w);
        let k = fft2c(&x)?;
        let back = ifft2c(&k)?;
        out.push(Check::new(format!("fft round trip {h}x{w}"), max_abs_diff(&back, &x), 1e-10));
        let ex: f64 = x.iter().map(|z| z.norm_sqr()).sum();
        let ek: f64 = k.iter().map(|z| z.norm_sqr()).sum();
        out.push(Check::new(format!("fft energy preserved {h}x{w}"), (ek - ex).abs() / ex, 1e-10));
    }

    let (c, h, w) = (4, 32, 32);
    let sens = random_maps(&mut rng, c, h, w);
    let mask = uniform_kt_mask(h, w, 1, 4, 8, &mut rng)?;
    let m = mask.frame(0);
    let x = rand_image(&mut rng, h, w);
    let y = Array3::from_shape_fn((c, h, w), |_| rand_c(&mut rng));
    let ax = forward_operator(x.view(), &sens, m.view())?;
    let ahy = adjoint_operator(y.view(), &sens, m.view())?;
    let lhs: C64 = ax.iter().zip(y.iter()).map(|(a, b)| a * b.conj()).sum();
    let rhs: C64 = x.iter().zip(ahy.iter()).map(|(a, b)| a * b.conj()).sum();
    out.push(Check::new("operator adjoint identity", (lhs - rhs).norm() / lhs.norm().max(1e-300), 1e-10));

    let (a, c, h, w) = (3, 2, 16, 16);
    let vol = |rng: &mut Rng| KSpaceVolume::new(Array4::from_shape_fn((a, c, h, w), |_| rand_c(rng)));
    let (kt, k0, g) = (vol(&mut rng)?, vol(&mut rng)?, vol(&mut rng)?);
    let mask = SamplingMask::generate(Trajectory::Gaussian, h, w, a, 4, 4, false, &mut rng)?;
    let eta = 0.7;
    let dc = data_consistency(&kt, &k0, &mask, eta, &g)?;
    let mut worst = 0.0_f64;
    for ((f, ci, yy, xx), v) in dc.data.indexed_iter() {
        let mv = mask.array()[[f, yy, xx]] as f64;
        let i = [f, ci, yy, xx];
        let oracle = kt.data[i] - (kt.data[i] - k0.data[i]) * (eta * mv) + g.data[i];
        worst = worst.max((v - oracle).norm());
    }
    out.push(Check::new("data consistency vs elementwise oracle", worst, 1e-12));
    Ok(out)
}

fn rand4(rng: &mut Rng, dim: (usize, usize, usize, usize)) -> Array4<f64> {
    Array4::from_shape_fn(dim, |_| rng.normal())
}

fn complex_flat(a: &[C64]) -> Vec<f64> {
    a.iter().flat_map(|z| [z.re, z.im]).collect()
}

fn unflat<Sh: ndarray::ShapeBuilder>(v: &[f64], dim: Sh) -> ndarray::Array<C64, Sh::Dim> {
    let z: Vec<C64> = v.chunks(2).map(|p| C64::new(p[0], p[1])).collect();
    ndarray::Array::from_shape_vec(dim, z).expect("matching length")
}

fn op_checks(rng: &mut Rng, out: &mut Vec<Check>) -> Result<()> {
    for (stride, pad) in [(1, 1), (2, 1)] {
        let x = rand4(rng, (1, 3, 7, 6));
        let w = rand4(rng, (4, 3, 3, 3));
        let b = Array1::from_shape_fn(4, |_| rng.normal());
        let (y, cache) = conv_forward(&x, &w, &b, stride, pad)?;
        let probe = rand4(rng, y.dim());
        let (gx, gw, gb) = conv_backward(&cache, &w, &probe);
        let loss = |x: &Array4<f64>, w: &Array4<f64>, b: &Array1<f64>| {
            (&conv_forward(x, w, b, stride, pad).expect("valid shapes").0 * &probe).sum()
        };
        let ex = grad_check(|v| loss(&Array4::from_shape_vec(x.dim(), v.to_vec()).unwrap(), &w, &b), x.as_slice().unwrap(), gx.as_slice().unwrap(), 1e-6, None);
        let ew = grad_check(|v| loss(&x, &Array4::from_shape_vec(w.dim(), v.to_vec()).unwrap(), &b), w.as_slice().unwrap(), gw.as_slice().unwrap(), 1e-6, None);
        let eb = grad_check(|v| loss(&x, &w, &Array1::from(v.to_vec())), b.as_slice().unwrap(), gb.as_slice().unwrap(), 1e-6, None);
        out.push(Check::new(format!("conv2d stride {stride} (input, weight, bias)"), ex.max(ew).max(eb), 1e-6));
    }

    let x = rand4(rng, (1, 2, 4, 4)).mapv(|v| if v.abs() < 0.1 { v + 0.3 } else { v });
    let probe = rand4(rng, x.dim());
    let g = leaky_relu_backward(&x, &probe, 0.2);
    let e = grad_check(
        |v| (&leaky_relu_forward(&Array4::from_shape_vec(x.dim(), v.to_vec()).unwrap(), 0.2) * &probe).sum(),
        x.as_slice().unwrap(),
        g.as_slice().unwrap(),
        1e-6,
        None,
    );
    out.push(Check::new("leaky relu", e, 1e-6));

    let x = rand4(rng, (1, 3, 4, 5));
    let probe = Array2::from_shape_fn((1, 3), |_| rng.normal());
    let g = global_avg_pool_backward(&probe, 4, 5);
    let e = grad_check(
        |v| (&global_avg_pool(&Array4::from_shape_vec(x.dim(), v.to_vec()).unwrap()).unwrap() * &probe).sum(),
        x.as_slice().unwrap(),
        g.as_slice().unwrap(),
        1e-4,
        None,
    );
    out.push(Check::new("global average pool", e, 1e-6));

    let x = rand4(rng, (1, 2, 3, 3));
    let probe = rand4(rng, (1, 2, 6, 6));
    let g = upsample2_backward(&probe);
    let e = grad_check(
        |v| (&upsample2(&Array4::from_shape_vec(x.dim(), v.to_vec()).unwrap()) * &probe).sum(),
        x.as_slice().unwrap(),
        g.as_slice().unwrap(),
        1e-4,
        None,
    );
    out.push(Check::new("nearest upsampling", e, 1e-6));

    let x = Array1::from_shape_fn(8, |_| 3.0 * rng.normal());
    let (_, g) = bce_loss(&x, LABEL_FAKE);
    let e = grad_check(|v| bce_loss(&Array1::from(v.to_vec()), LABEL_FAKE).0, x.as_slice().unwrap(), g.as_slice().unwrap(), 1e-5, None);
    out.push(Check::new("binary cross-entropy", e, 1e-6));

    let z = rand_image(rng, 5, 4);
    let probe = RealImage::from_shape_fn((5, 4), |_| rng.normal());
    let g = magnitude_backward(&z, &probe);
    let e = grad_check(
        |v| (&magnitude(&unflat(v, (5, 4))) * &probe).sum(),
        &complex_flat(z.as_slice().unwrap()),
        &complex_flat(g.as_slice().unwrap()),
        1e-6,
        None,
    );
    out.push(Check::new("complex magnitude", e, 1e-6));

    let u = Array3::from_shape_fn((3, 4, 4), |_| rand_c(rng));
    let wv = Array3::from_shape_fn((3, 4, 4), |_| rand_c(rng));
    let g = normalize_maps_backward(&u, &wv);
    let e = grad_check(
        |v| normalize_maps(&unflat(v, (3, 4, 4))).iter().zip(wv.iter()).map(|(a, b)| (a.conj() * b).re).sum(),
        &complex_flat(u.as_slice().unwrap()),
        &complex_flat(g.as_slice().unwrap()),
        1e-6,
        None,
    );
    out.push(Check::new("sensitivity normalization", e, 1e-6));
    Ok(())
}

fn loss_grad_checks(rng: &mut Rng, out: &mut Vec<Check>) -> Result<()> {
    let x = RealImage::from_shape_fn((12, 10), |_| rng.uniform());
    let y = RealImage::from_shape_fn((12, 10), |_| rng.uniform());
    let (_, g) = ssim_with_grad(&x, &y, 1.0)?;
    let e = grad_check(
        |v| ssim(&RealImage::from_shape_vec((12, 10), v.to_vec()).unwrap(), &y, 1.0).unwrap(),
        x.as_slice().unwrap(),
        g.as_slice().unwrap(),
        1e-6,
        None,
    );
    out.push(Check::new("ssim", e, 1e-5));

    let gt = RealImage::from_shape_fn((14, 14), |(i, j)| if i + j > 12 { 0.8 } else { 0.1 });
    let rec = gt.mapv(|v| v + 0.05 * rng.normal());
    let l = ear_loss(&rec, &gt)?;
    let e = grad_check(
        |v| ear_loss(&RealImage::from_shape_vec((14, 14), v.to_vec()).unwrap(), &gt).unwrap().value,
        rec.as_slice().unwrap(),
        l.grad.as_slice().unwrap(),
        1e-6,
        None,
    );
    out.push(Check::new("edge-aware ssim loss", e, 1e-5));

    let dim = (2, 10, 10);
    let kg = Array3::from_shape_fn(dim, |_| rand_c(rng));
    let kp = kg.mapv(|z| z + C64::new(0.3 * rng.normal(), 0.3 * rng.normal()));
    let sens = random_maps(rng, 2, 10, 10);
    let l = fidelity_loss_central(kp.view(), kg.view(), &sens)?;
    let e = grad_check(
        |v| fidelity_loss_central(unflat(v, dim).view(), kg.view(), &sens).unwrap().total,
        &complex_flat(kp.as_slice().unwrap()),
        &complex_flat(l.grad_k.as_slice().unwrap()),
        1e-6,
        None,
    );
    out.push(Check::new("fidelity loss (k-space)", e, 1e-5));

    let vectors: Vec<Vec<Vec<f64>>> =
        (0..3).map(|d| (0..4).map(|_| (0..3).map(|_| rng.normal() + d as f64).collect()).collect()).collect();
    let bank_with = |newest: &[f64]| {
        let mut bank = FeatureBank::new(1, 3, 4);
        for (d, vs) in vectors.iter().enumerate() {
            for (i, v) in vs.iter().enumerate() {
                if d == 1 && i == vs.len() - 1 {
                    bank.push(0, d, newest.to_vec());
                } else {
                    bank.push(0, d, v.clone());
                }
            }
        }
        bank
    };
    let newest = vectors[1][3].clone();
    let layer = sda_layer_loss(&bank_with(&newest), 0, Some(1))?;
    let e = grad_check(
        |v| sda_layer_loss(&bank_with(v), 0, None).unwrap().value,
        &newest,
        layer.grad_newest.as_deref().unwrap_or(&[]),
        1e-6,
        None,
    );
    out.push(Check::new("feature alignment (newest vector)", e, 1e-6));

    let mut d = Discriminator::new(rng, 4);
    let cand = RealImage::from_shape_fn((16, 16), |_| rng.uniform());
    let cond = RealImage::from_shape_fn((16, 16), |_| rng.uniform());
    let (logits, cache) = d.forward(&cand, &cond)?;
    let (_, g) = bce_loss(&logits, LABEL_FAKE);
    d.params.zero_grad();
    let g_cand = d.backward(&cache, &g);
    let x = d.params.flat_values();
    let analytic = d.params.flat_grads();
    let mut p = d.clone();
    let ep = grad_check(
        |v| {
            p.params.set_flat_values(v);
            bce_loss(&p.logits(&cand, &cond).unwrap(), LABEL_FAKE).0
        },
        &x,
        &analytic,
        1e-6,
        None,
    );
    let ei = grad_check(
        |v| bce_loss(&d.logits(&RealImage::from_shape_vec((16, 16), v.to_vec()).unwrap(), &cond).unwrap(), LABEL_FAKE).0,
        cand.as_slice().unwrap(),
        g_cand.as_slice().unwrap(),
        1e-6,
        None,
    );
    out.push(Check::new("patch discriminator (weights, input)", ep.max(ei), 1e-5));
    Ok(())
}

/// Smooth random 16×16 two-coil k-space over three frames with a 4× uniform mask.
fn unroll_problem(seed: u64) -> Result<(KSpaceVolume, KSpaceVolume, SamplingMask)> {
    let mut rng = Rng::new(seed);
    let (a, c, h, w) = (3, 2, 16, 16);
    let mut data = Array4::<C64>::zeros((a, c, h, w));
    for f in 0..a {
        for ci in 0..c {
            let img = ComplexImage::from_shape_fn((h, w), |(y, x)| {
                let r = ((y as f64 - 8.0).powi(2) + (x as f64 - 7.0).powi(2)).sqrt();
                let base = C64::new((1.0 - r / 10.0).max(0.05), 0.1 * (x as f64 / 16.0));
                let coil = 0.6 + 0.4 * ((ci as f64 + 1.0) * (y as f64 + x as f64) / 20.0).cos();
                base * coil * (1.0 + 0.05 * f as f64) + C64::new(0.01 * rng.normal(), 0.01 * rng.normal())
            });
            data.slice_mut(s![f, ci, .., ..]).assign(&fft2c(&img)?);
        }
    }
    let kg = KSpaceVolume::new(data)?;
    let mask = SamplingMask::generate(Trajectory::Uniform, h, w, a, 4, 4, false, &mut rng)?;
    Ok((kg.masked(&mask)?, kg, mask))
}

/// `1 − SSIM` of the final image, plus fidelity on step 0 and a linear probe
/// on step 1's pooled features, so every gradient entry point is exercised.
fn unroll_objective(
    gen: &Generator,
    k0: &KSpaceVolume,
    kg: &KSpaceVolume,
    gt: &RealImage,
    mask: &SamplingMask,
    probe: &[f64],
) -> Result<(f64, Vec<StepGrad>, crate::unroll::UnrollTrace, crate::unroll::UnrollCache)> {
    let (trace, cache) = gen.forward(k0, mask)?;
    let rec = trace.final_image().clone();
    let (s, g) = ssim_with_grad(&magnitude(&rec), gt, 1.0)?;
    let mut grads = vec![StepGrad::default(); gen.config.unrolls];
    grads.last_mut().expect("unrolls > 0").image = Some(magnitude_backward(&rec, &(-g)));
    let fid = fidelity_loss_target(trace.steps[0].k_out.central(), kg.central(), gt, &trace.sens)?;
    grads[0].k_central = Some(fid.grad_k.clone());
    grads[0].sens = Some(fid.grad_sens.clone());
    let pooled: f64 = trace.steps[1].pooled.iter().zip(probe).map(|(a, b)| a * b).sum();
    grads[1].pooled = Some(probe.to_vec());
    Ok((1.0 - s + fid.total + pooled, grads, trace, cache))
}

/// End-to-end check of a two-step generator at 16×16: `coords` random
/// parameters plus one weight of every convolution.
pub fn unrolled_generator_check(residual: bool, coords: usize) -> Result<Check> {
    let (k0, kg, mask) = unroll_problem(7)?;
    let config = GeneratorConfig {
        unrolls: 2,
        base_channels: 4,
        prompt_channels: 2,
        adjacent: 3,
        acs_lines: 4,
        coils: 2,
        residual,
        sme_refiner: true,
    };
    let mut gen = Generator::new(config, &mut Rng::new(8))?;
    // move the refiner off its zero initialization so its gradient is exercised
    for p in gen.params.iter_mut().filter(|p| p.name.starts_with("sme.")) {
        p.value.mapv_inplace(|v| v + 0.02);
    }
    gen.set_eta(0, 0.8);
    let sens = gen.sensitivities(&k0)?;
    let gt = magnitude(&coil_combine(coils_fft(&kg.central().to_owned(), true).view(), &sens)?);
    let probe = [0.3, -0.2, 0.5, 0.1];
    let (_, grads, trace, cache) = unroll_objective(&gen, &k0, &kg, &gt, &mask, &probe)?;
    gen.params.zero_grad();
    gen.backward(&trace, &cache, &grads)?;
    let analytic = gen.params.flat_grads();
    let x = gen.params.flat_values();
    let mut p = gen.clone();
    let mut worst = grad_check(
        |v| {
            p.params.set_flat_values(v);
            unroll_objective(&p, &k0, &kg, &gt, &mask, &probe).map(|r| r.0).unwrap_or(f64::NAN)
        },
        &x,
        &analytic,
        1e-5,
        Some((coords, &mut Rng::new(9))),
    );
    let scale = analytic.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut rng = Rng::new(10);
    for id in gen.conv_weight_ids() {
        let i = rng.below(gen.params.get(id).value.len());
        let g = gen.params.get(id).grad.as_slice().expect("contiguous")[i];
        // a leaky-relu kink can sit within 1e-5 of the probe point
        let h = 1e-6;
        let eval = |d: f64| -> Result<f64> {
            let mut q = gen.clone();
            q.params.get_mut(id).value.as_slice_mut().expect("contiguous")[i] += d;
            Ok(unroll_objective(&q, &k0, &kg, &gt, &mask, &probe)?.0)
        };
        let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
        worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()).max(1e-3 * scale));
    }
    let label = if residual { "" } else { ", no residual" };
    Ok(Check::new(format!("unrolled generator T=2 16x16{label}"), worst, 1e-4))
}

/// Finite-difference checks of every differentiable operation, loss and the
/// end-to-end generator.
pub fn gradient_suite() -> Result<Vec<Check>> {
    let mut rng = Rng::new(0x9_4ad);
    let mut out = Vec::new();
    op_checks(&mut rng, &mut out)?;
    loss_grad_checks(&mut rng, &mut out)?;
    out.push(unrolled_generator_check(true, 60)?);
    out.push(unrolled_generator_check(false, 30)?);
    Ok(out)
}

/// Monte-Carlo estimate of the symmetric KL divergence of two diagonal
/// Gaussians from `draws` samples of each.
pub fn sym_kl_monte_carlo(a: &GaussianSummary, b: &GaussianSummary, draws: usize, rng: &mut Rng) -> f64 {
    let log_pdf = |g: &GaussianSummary, x: &[f64]| -> f64 {
        x.iter()
            .zip(g.mu.iter().zip(&g.var))
            .map(|(&xi, (&m, &v))| -0.5 * ((xi - m).powi(2) / v + (2.0 * PI * v).ln()))
            .sum()
    };
    let mut total = 0.0;
    for (p, q) in [(a, b), (b, a)] {
        let mut acc = 0.0;
        let mut x = vec![0.0; p.mu.len()];
        for _ in 0..draws {
            for (k, xi) in x.iter_mut().enumerate() {
                *xi = p.mu[k] + p.var[k].sqrt() * rng.normal();
            }
            acc += log_pdf(p, &x) - log_pdf(q, &x);
        }
        total += acc / draws as f64;
    }
    total
}

/// Closed-form and Monte-Carlo KL, the step-edge mask band, `ear(x, x) = 0`
/// and the empty mask of a constant image.
pub fn loss_oracles() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let n01 = GaussianSummary::new(vec![0.0], vec![1.0])?;
    let n11 = GaussianSummary::new(vec![1.0], vec![1.0])?;
    out.push(Check::new("sym_kl N(0,1) vs N(1,1) = 1", (sym_kl(&n01, &n11)? - 1.0).abs(), 1e-12));

    let a = GaussianSummary::new(vec![0.0, 0.5], vec![1.0, 2.0])?;
    let b = GaussianSummary::new(vec![1.0, -0.5], vec![1.5, 0.7])?;
    let exact = sym_kl(&a, &b)?;
    let mc = sym_kl_monte_carlo(&a, &b, 1_000_000, &mut Rng::new(41));
    out.push(Check::new("sym_kl vs Monte-Carlo (d=2, 1e6 draws), rel", (mc - exact).abs() / exact, 0.02));

    let (h, w, c) = (16, 20, 10);
    let step = RealImage::from_shape_fn((h, w), |(_, j)| if j >= c { 1.0 } else { 0.0 });
    let mask = ear_mask(&step, 0.0);
    let band = mask.b.indexed_iter().all(|((_, j), &v)| (v == 1) == (c - 3..=c + 2).contains(&j));
    out.push(Check::exact(format!("step-edge mask = columns {}..={}", c - 3, c + 2), band));

    let mut rng = Rng::new(3);
    let x = RealImage::from_shape_fn((16, 16), |(i, j)| ((i * j) as f64 / 40.0).sin() + 0.1 * rng.uniform());
    out.push(Check::new("ear_loss(x, x)", ear_loss(&x, &x)?.value.abs(), 0.0));
    out.push(Check::exact("constant image gives empty edge mask", ear_mask(&RealImage::from_elem((16, 16), 0.7), 0.0).is_empty()));
    Ok(out)
}

fn acs_on(m: &SamplingMask, h: usize, acs: usize) -> bool {
    (0..m.frames()).all(|f| acs_rows(h, acs).all(|y| (0..m.dim().2).all(|x| m.is_sampled(f, y, x))))
}

/// Line and spoke counts against their formulas, and the calibration band.
pub fn mask_oracles() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let mut rng = Rng::new(11);
    let m = uniform_kt_mask(128, 32, 4, 8, 16, &mut rng)?;
    let lines_ok = (0..4).all(|f| m.sampled_rows(f).len() == 30);
    out.push(Check::exact("uniform 128/8/acs16: 30 lines per frame", lines_ok));
    let eff = effective_acceleration(&m.select_frames(&[0]));
    out.push(Check::new("uniform effective acceleration 4.267", (eff - 4.267).abs(), 0.01));

    let mut exact_gauss = true;
    for (h, accel, acs) in [(64, 4, 16), (64, 8, 16), (128, 16, 16), (96, 24, 8)] {
        let m = SamplingMask::generate(Trajectory::Gaussian, h, 16, 4, accel, acs, false, &mut rng)?;
        exact_gauss &= (0..4).all(|f| m.sampled_rows(f).len() == acs + gaussian_line_budget(h, accel));
        exact_gauss &= gaussian_line_budget(h, accel) == (h as f64 / accel as f64).round() as usize;
    }
    out.push(Check::exact("gaussian lines = round(h/accel) + acs", exact_gauss));

    let mut exact_radial = true;
    for (h, accel) in [(64, 4), (64, 8), (128, 16), (96, 24)] {
        let n = (PI / 2.0 * h as f64 / accel as f64).round() as usize;
        exact_radial &= radial_spoke_count(h, accel) == n;
        let m = radial_kt_mask(h, h, 3, accel, &mut rng)?;
        for f in 0..3 {
            let angles = radial_spoke_angles(h, accel, f);
            exact_radial &= angles.len() == n;
            let mut spokes = Array2::<u8>::zeros((h, h));
            for a in angles {
                rasterize_spoke(&mut spokes, a);
            }
            exact_radial &= spokes == m.frame(f);
        }
    }
    out.push(Check::exact("radial spokes = round(pi/2 h/accel), rasterized exactly", exact_radial));

    let mut acs_ok = true;
    for traj in Trajectory::ALL {
        for accel in [4, 8, 16, 24] {
            let m = SamplingMask::generate(traj, 64, 64, 5, accel, 16, false, &mut rng)?;
            acs_ok &= acs_on(&m, 64, 16);
        }
    }
    out.push(Check::exact("calibration band sampled in every frame", acs_ok));
    Ok(out)
}
