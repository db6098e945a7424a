//! Mean local SSIM over all 7×7 windows fully inside the image, with the
//! exact gradient with respect to the first argument.

use ndarray::Array2;

use crate::error::{invalid, shape, Result};
use crate::numerics::RealImage;

pub const WINDOW: usize = 7;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;

fn check(x: &RealImage, y: &RealImage, data_range: f64) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(shape(format!("ssim inputs {:?} vs {:?}", x.dim(), y.dim())));
    }
    let (h, w) = x.dim();
    if h < WINDOW || w < WINDOW {
        return Err(invalid(format!("ssim needs at least {WINDOW}x{WINDOW}, got {h}x{w}")));
    }
    if data_range.is_nan() || data_range <= 0.0 {
        return Err(invalid(format!("data range must be positive, got {data_range}")));
    }
    Ok(())
}

/// Sums of every `WINDOW × WINDOW` valid window.
fn box_sum(a: &Array2<f64>) -> Array2<f64> {
    let (h, w) = a.dim();
    let (ho, wo) = (h - WINDOW + 1, w - WINDOW + 1);
    let mut rows = Array2::zeros((h, wo));
    for i in 0..h {
        for j in 0..wo {
            let mut s = 0.0;
            for d in 0..WINDOW {
                s += a[[i, j + d]];
            }
            rows[[i, j]] = s;
        }
    }
    let mut out = Array2::zeros((ho, wo));
    for i in 0..ho {
        for j in 0..wo {
            let mut s = 0.0;
            for d in 0..WINDOW {
                s += rows[[i + d, j]];
            }
            out[[i, j]] = s;
        }
    }
    out
}

/// Adjoint of [`box_sum`]: scatters each window value over its pixels.
fn box_scatter(c: &Array2<f64>, h: usize, w: usize) -> Array2<f64> {
    let (ho, wo) = c.dim();
    let mut cols = Array2::<f64>::zeros((h, wo));
    for i in 0..ho {
        for j in 0..wo {
            for d in 0..WINDOW {
                cols[[i + d, j]] += c[[i, j]];
            }
        }
    }
    let mut out = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..wo {
            for d in 0..WINDOW {
                out[[i, j + d]] += cols[[i, j]];
            }
        }
    }
    out
}

struct WindowStats {
    mx: Array2<f64>,
    my: Array2<f64>,
    vx: Array2<f64>,
    vy: Array2<f64>,
    cxy: Array2<f64>,
}

fn stats(x: &RealImage, y: &RealImage) -> WindowStats {
    let n = (WINDOW * WINDOW) as f64;
    let mx = box_sum(x) / n;
    let my = box_sum(y) / n;
    let sxx = box_sum(&(x * x)) / n;
    let syy = box_sum(&(y * y)) / n;
    let sxy = box_sum(&(x * y)) / n;
    let vx = &sxx - &(&mx * &mx);
    let vy = &syy - &(&my * &my);
    let cxy = &sxy - &(&mx * &my);
    WindowStats { mx, my, vx, vy, cxy }
}

pub fn ssim(x: &RealImage, y: &RealImage, data_range: f64) -> Result<f64> {
    ssim_with_grad(x, y, data_range).map(|(v, _)| v)
}

/// SSIM and its gradient with respect to `x`.
pub fn ssim_with_grad(x: &RealImage, y: &RealImage, data_range: f64) -> Result<(f64, RealImage)> {
    check(x, y, data_range)?;
    let (h, w) = x.dim();
    let c1 = (K1 * data_range).powi(2);
    let c2 = (K2 * data_range).powi(2);
    let n = (WINDOW * WINDOW) as f64;
    let st = stats(x, y);
    let nwin = st.mx.len() as f64;

    let mut alpha = Array2::zeros(st.mx.dim());
    let mut beta = Array2::zeros(st.mx.dim());
    let mut gamma = Array2::zeros(st.mx.dim());
    let mut total = 0.0;
    for (idx, &mx) in st.mx.indexed_iter() {
        let my = st.my[idx];
        let a1 = 2.0 * mx * my + c1;
        let a2 = 2.0 * st.cxy[idx] + c2;
        let b1 = mx * mx + my * my + c1;
        let b2 = st.vx[idx] + st.vy[idx] + c2;
        let s = a1 * a2 / (b1 * b2);
        total += s;
        let bb = b1 * b2;
        alpha[idx] = (2.0 / n) * (my * a2 / bb - a1 * my / bb - s * mx / b1 + s * mx / b2);
        beta[idx] = -(2.0 / n) * s / b2;
        gamma[idx] = (2.0 / n) * a1 / bb;
    }
    let value = total / nwin;
    let ga = box_scatter(&alpha, h, w);
    let gb = box_scatter(&beta, h, w);
    let gc = box_scatter(&gamma, h, w);
    let grad = (&ga + &(&gb * x) + &(&gc * y)) / nwin;
    Ok((value, grad))
}
