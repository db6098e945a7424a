//! Forward/backward pairs for the layers the networks are built from. All
//! tensors are `batch × channels × height × width`.

use ndarray::{s, Array1, Array2, Array4, ArrayView4, Axis};

use crate::error::{invalid, shape, Result};

pub const LEAKY_SLOPE: f64 = 0.1;

/// What a convolution needs to remember for its backward pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    cols: Vec<Array2<f64>>,
    in_dim: (usize, usize, usize, usize),
    out_hw: (usize, usize),
    stride: usize,
    pad: usize,
}

pub fn conv_out_size(n: usize, k: usize, stride: usize, pad: usize) -> usize {
    (n + 2 * pad - k) / stride + 1
}

fn im2col(x: ArrayView4<'_, f64>, n: usize, k: usize, stride: usize, pad: usize, ho: usize, wo: usize) -> Array2<f64> {
    let (_, c, h, w) = x.dim();
    let mut cols = Array2::zeros((c * k * k, ho * wo));
    for ci in 0..c {
        let plane = x.slice(s![n, ci, .., ..]);
        for a in 0..k {
            for b in 0..k {
                let row = (ci * k + a) * k + b;
                let mut dst = cols.row_mut(row);
                for yo in 0..ho {
                    let y = (yo * stride + a) as isize - pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    for xo in 0..wo {
                        let xx = (xo * stride + b) as isize - pad as isize;
                        if xx >= 0 && xx < w as isize {
                            dst[yo * wo + xo] = plane[[y as usize, xx as usize]];
                        }
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im(cols: &Array2<f64>, out: &mut Array4<f64>, n: usize, k: usize, stride: usize, pad: usize, ho: usize, wo: usize) {
    let (_, c, h, w) = out.dim();
    for ci in 0..c {
        for a in 0..k {
            for b in 0..k {
                let row = cols.row((ci * k + a) * k + b);
                for yo in 0..ho {
                    let y = (yo * stride + a) as isize - pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    for xo in 0..wo {
                        let xx = (xo * stride + b) as isize - pad as isize;
                        if xx >= 0 && xx < w as isize {
                            out[[n, ci, y as usize, xx as usize]] += row[yo * wo + xo];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation with square odd kernels, `w: cout × cin × k × k`.
pub fn conv_forward(
    x: &Array4<f64>,
    w: &Array4<f64>,
    b: &Array1<f64>,
    stride: usize,
    pad: usize,
) -> Result<(Array4<f64>, ConvCache)> {
    let (batch, cin, h, wd) = x.dim();
    let (cout, wcin, k, k2) = w.dim();
    if k != k2 || k % 2 == 0 {
        return Err(invalid(format!("kernel must be square and odd, got {k}x{k2}")));
    }
    if wcin != cin || b.len() != cout {
        return Err(shape(format!("conv input {cin} ch, weight {:?}, bias {}", w.dim(), b.len())));
    }
    if stride == 0 || h + 2 * pad < k || wd + 2 * pad < k {
        return Err(shape(format!("conv of {h}x{wd} with k={k}, pad={pad}")));
    }
    let (ho, wo) = (conv_out_size(h, k, stride, pad), conv_out_size(wd, k, stride, pad));
    let wmat = w.view().into_shape_with_order((cout, cin * k * k)).expect("contiguous weight");
    let mut out = Array4::zeros((batch, cout, ho, wo));
    let mut cache_cols = Vec::with_capacity(batch);
    for n in 0..batch {
        let cols = im2col(x.view(), n, k, stride, pad, ho, wo);
        let y = wmat.dot(&cols);
        for (co, row) in y.outer_iter().enumerate() {
            let mut dst = out.slice_mut(s![n, co, .., ..]);
            for (d, v) in dst.iter_mut().zip(row.iter()) {
                *d = v + b[co];
            }
        }
        cache_cols.push(cols);
    }
    Ok((
        out,
        ConvCache {
            cols: cache_cols,
            in_dim: (batch, cin, h, wd),
            out_hw: (ho, wo),
            stride,
            pad,
        },
    ))
}

/// Returns `(grad_x, grad_w, grad_b)`.
pub fn conv_backward(
    cache: &ConvCache,
    w: &Array4<f64>,
    grad_out: &Array4<f64>,
) -> (Array4<f64>, Array4<f64>, Array1<f64>) {
    let (batch, cin, _, _) = cache.in_dim;
    let (cout, _, k, _) = w.dim();
    let (ho, wo) = cache.out_hw;
    let wmat = w.view().into_shape_with_order((cout, cin * k * k)).expect("contiguous weight");
    let mut gx = Array4::zeros(cache.in_dim);
    let mut gw = Array2::<f64>::zeros((cout, cin * k * k));
    let mut gb = Array1::zeros(cout);
    for n in 0..batch {
        let g = grad_out
            .slice(s![n, .., .., ..])
            .to_owned()
            .into_shape_with_order((cout, ho * wo))
            .expect("contiguous grad");
        gw += &g.dot(&cache.cols[n].t());
        gb += &g.sum_axis(Axis(1));
        let gcols = wmat.t().dot(&g);
        col2im(&gcols, &mut gx, n, k, cache.stride, cache.pad, ho, wo);
    }
    let gw = gw.into_shape_with_order((cout, cin, k, k)).expect("weight shape");
    (gx, gw, gb)
}

pub fn leaky_relu_forward(x: &Array4<f64>, slope: f64) -> Array4<f64> {
    x.mapv(|v| if v >= 0.0 { v } else { slope * v })
}

/// Subgradient at 0 is taken as `slope`.
pub fn leaky_relu_backward(x: &Array4<f64>, grad_out: &Array4<f64>, slope: f64) -> Array4<f64> {
    let mut g = grad_out.clone();
    g.zip_mut_with(x, |g, &v| {
        if v <= 0.0 {
            *g *= slope;
        }
    });
    g
}

/// Channelwise spatial mean, `batch × channels`.
pub fn global_avg_pool(x: &Array4<f64>) -> Result<Array2<f64>> {
    let (b, c, h, w) = x.dim();
    if h * w == 0 {
        return Err(invalid("global pooling over an empty map"));
    }
    Ok(Array2::from_shape_fn((b, c), |(n, ci)| {
        x.slice(s![n, ci, .., ..]).sum() / (h * w) as f64
    }))
}

pub fn global_avg_pool_backward(grad_out: &Array2<f64>, h: usize, w: usize) -> Array4<f64> {
    let (b, c) = grad_out.dim();
    let scale = 1.0 / (h * w) as f64;
    Array4::from_shape_fn((b, c, h, w), |(n, ci, _, _)| grad_out[[n, ci]] * scale)
}

/// Nearest-neighbour ×2 upsampling.
pub fn upsample2(x: &Array4<f64>) -> Array4<f64> {
    let (b, c, h, w) = x.dim();
    Array4::from_shape_fn((b, c, 2 * h, 2 * w), |(n, ci, y, xx)| x[[n, ci, y / 2, xx / 2]])
}

pub fn upsample2_backward(grad_out: &Array4<f64>) -> Array4<f64> {
    let (b, c, h2, w2) = grad_out.dim();
    let mut g = Array4::zeros((b, c, h2 / 2, w2 / 2));
    for ((n, ci, y, x), v) in grad_out.indexed_iter() {
        g[[n, ci, y / 2, x / 2]] += v;
    }
    g
}

/// Concatenates along channels.
pub fn concat_channels(parts: &[&Array4<f64>]) -> Result<Array4<f64>> {
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(1), &views).map_err(|e| shape(format!("channel concat: {e}")))
}

/// Splits a channel gradient back into pieces of the given widths.
pub fn split_channels(g: &Array4<f64>, widths: &[usize]) -> Vec<Array4<f64>> {
    let mut start = 0;
    widths
        .iter()
        .map(|&c| {
            let part = g.slice(s![.., start..start + c, .., ..]).to_owned();
            start += c;
            part
        })
        .collect()
}

/// Broadcasts a per-step prompt vector to `1 × len × h × w`.
pub fn prompt_broadcast(prompt: &Array1<f64>, h: usize, w: usize) -> Array4<f64> {
    Array4::from_shape_fn((1, prompt.len(), h, w), |(_, c, _, _)| prompt[c])
}

pub fn prompt_broadcast_backward(grad_out: &Array4<f64>) -> Array1<f64> {
    grad_out.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0))
}
