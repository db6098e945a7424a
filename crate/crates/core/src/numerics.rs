//! Complex 2-D arrays, the centered orthonormal FFT pair, same-size
//! convolution and the seeded random stream shared by every other module.

use std::cell::RefCell;
use std::sync::Arc;

use ndarray::{Array2, ArrayViewMut2, Axis};
use num_complex::Complex64;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Error, Result};

pub type C64 = Complex64;
pub type ComplexImage = Array2<C64>;
pub type RealImage = Array2<f64>;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

pub fn all_finite_c(a: impl IntoIterator<Item = C64>) -> bool {
    a.into_iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Rolls `line` so that element `i` lands at `(i + shift) % n`.
fn roll(line: &mut [C64], shift: usize) {
    let n = line.len();
    if n > 0 {
        line.rotate_right(shift % n);
    }
}

fn transform_axis(mut img: ArrayViewMut2<'_, C64>, axis: Axis, inverse: bool) {
    let n = img.len_of(axis);
    let fft = plan(n, inverse);
    let mut buf = vec![C64::new(0.0, 0.0); n];
    let mut scratch = vec![C64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let (pre, post) = (n - n / 2, n / 2);
    for mut lane in img.lanes_mut(axis) {
        for (b, v) in buf.iter_mut().zip(lane.iter()) {
            *b = *v;
        }
        // ifftshift, transform, fftshift
        roll(&mut buf, pre);
        fft.process_with_scratch(&mut buf, &mut scratch);
        roll(&mut buf, post);
        for (v, b) in lane.iter_mut().zip(buf.iter()) {
            *v = *b;
        }
    }
}

/// Centered orthonormal 2-D DFT in place over the last two axes of `img`.
pub(crate) fn fft2c_inplace(mut img: ArrayViewMut2<'_, C64>, inverse: bool) {
    let n = img.len() as f64;
    transform_axis(img.view_mut(), Axis(1), inverse);
    transform_axis(img.view_mut(), Axis(0), inverse);
    let scale = 1.0 / n.sqrt();
    img.mapv_inplace(|z| z * scale);
}

fn check_fft_input(img: &ComplexImage) -> Result<()> {
    let (h, w) = img.dim();
    if h < 2 || w < 2 {
        return Err(invalid(format!("fft needs at least 2x2, got {h}x{w}")));
    }
    if !all_finite_c(img.iter().copied()) {
        return Err(Error::NonFinite("fft input"));
    }
    Ok(())
}

/// Centered (DC at `(h/2, w/2)`), unitary 2-D Fourier transform.
pub fn fft2c(img: &ComplexImage) -> Result<ComplexImage> {
    check_fft_input(img)?;
    let mut out = img.clone();
    fft2c_inplace(out.view_mut(), false);
    Ok(out)
}

/// Inverse of [`fft2c`]; also its adjoint.
pub fn ifft2c(k: &ComplexImage) -> Result<ComplexImage> {
    check_fft_input(k)?;
    let mut out = k.clone();
    fft2c_inplace(out.view_mut(), true);
    Ok(out)
}

/// Border handling for [`conv2d_same_padded`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Zero,
    Replicate,
}

/// Same-size 2-D convolution (kernel flipped) with zero padding.
pub fn conv2d_same(img: &RealImage, kernel: &RealImage) -> Result<RealImage> {
    conv2d_same_padded(img, kernel, Padding::Zero)
}

pub fn conv2d_same_padded(
    img: &RealImage,
    kernel: &RealImage,
    padding: Padding,
) -> Result<RealImage> {
    let (kh, kw) = kernel.dim();
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(invalid(format!("kernel sides must be odd, got {kh}x{kw}")));
    }
    let (h, w) = img.dim();
    let (rh, rw) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut out = RealImage::zeros((h, w));
    for i in 0..h as isize {
        for j in 0..w as isize {
            let mut acc = 0.0;
            for a in -rh..=rh {
                for b in -rw..=rw {
                    let (mut y, mut x) = (i - a, j - b);
                    let inside = y >= 0 && y < h as isize && x >= 0 && x < w as isize;
                    if !inside {
                        match padding {
                            Padding::Zero => continue,
                            Padding::Replicate => {
                                y = y.clamp(0, h as isize - 1);
                                x = x.clamp(0, w as isize - 1);
                            }
                        }
                    }
                    acc += kernel[[(a + rh) as usize, (b + rw) as usize]]
                        * img[[y as usize, x as usize]];
                }
            }
            out[[i as usize, j as usize]] = acc;
        }
    }
    Ok(out)
}

/// Seeded ChaCha8 stream. The state is `(seed, word position)` so it can be
/// checkpointed and restored exactly.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub word_pos: u128,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream; the same `(seed, stream)` always gives the
    /// same child.
    pub fn fork(&self, stream: u64) -> Rng {
        Rng::new(splitmix64(self.seed ^ splitmix64(stream.wrapping_add(1))))
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            word_pos: self.inner.get_word_pos(),
        }
    }

    pub fn from_state(state: RngState) -> Self {
        let mut rng = Rng::new(state.seed);
        rng.inner.set_word_pos(state.word_pos);
        rng
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        self.inner.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

impl PartialEq for Rng {
    fn eq(&self, other: &Self) -> bool {
        self.state() == other.state()
    }
}
