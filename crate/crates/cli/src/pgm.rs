//! Grayscale PGM output.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use genre_core::RealImage;
use image::codecs::pnm::{GraymapHeader, PnmEncoder, SampleEncoding};
use image::ExtendedColorType;
use ndarray::{concatenate, Array2, Axis};

use crate::error::{usage, Result};

/// Writes `img` mapped linearly from `[lo, hi]` to the full 8- or 16-bit range
/// (values outside are clipped).
pub fn write_pgm(path: &Path, img: &RealImage, lo: f64, hi: f64, bits: u8) -> Result<()> {
    let (h, w) = img.dim();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let scaled = img.mapv(|v| ((v - lo) / span).clamp(0.0, 1.0));
    let maxwhite = match bits {
        8 => 255,
        16 => 65535,
        b => return Err(usage(format!("unsupported bit depth {b} (expected 8 or 16)"))),
    };
    let header = GraymapHeader { encoding: SampleEncoding::Binary, width: w as u32, height: h as u32, maxwhite };
    let mut enc = PnmEncoder::new(BufWriter::new(File::create(path)?)).with_header(header.into());
    match bits {
        8 => {
            let px: Vec<u8> = scaled.iter().map(|v| (v * 255.0).round() as u8).collect();
            enc.encode(px.as_slice(), w as u32, h as u32, ExtendedColorType::L8)?;
        }
        16 => {
            let px: Vec<u16> = scaled.iter().map(|v| (v * 65535.0).round() as u16).collect();
            enc.encode(px.as_slice(), w as u32, h as u32, ExtendedColorType::L16)?;
        }
        _ => unreachable!("bit depth checked above"),
    }
    Ok(())
}

/// Reads an 8- or 16-bit PGM back as values in `[0, 1]`.
pub fn read_pgm(path: &Path) -> Result<RealImage> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let px = img.into_luma16();
    Ok(Array2::from_shape_fn((h, w), |(y, x)| px.get_pixel(x as u32, y as u32)[0] as f64 / 65535.0))
}

/// Side-by-side concatenation of equally tall images.
pub fn hstack(tiles: &[RealImage]) -> Result<RealImage> {
    let views: Vec<_> = tiles.iter().map(|t| t.view()).collect();
    concatenate(Axis(1), &views).map_err(|e| usage(format!("panel tiles differ in height: {e}")))
}

/// Line chart of several series on a white canvas: one gray level per
/// series, consecutive points joined, y-range `[0, y_max]`.
pub fn line_chart(series: &[Vec<f64>], width: usize, height: usize, y_max: f64) -> RealImage {
    let mut img = Array2::from_elem((height, width), 1.0);
    let n = series.iter().map(Vec::len).max().unwrap_or(0);
    if n == 0 || width < 2 || height < 2 {
        return img;
    }
    let to_px = |i: usize, v: f64| -> (f64, f64) {
        let x = if n > 1 { i as f64 * (width - 1) as f64 / (n - 1) as f64 } else { 0.0 };
        let y = (1.0 - (v / y_max).clamp(0.0, 1.0)) * (height - 1) as f64;
        (x, y)
    };
    for (s, values) in series.iter().enumerate() {
        let level = 0.6 * s as f64 / series.len().max(1) as f64;
        for i in 1..values.len() {
            let (x0, y0) = to_px(i - 1, values[i - 1]);
            let (x1, y1) = to_px(i, values[i]);
            let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
            for k in 0..=steps {
                let t = k as f64 / steps as f64;
                let x = (x0 + t * (x1 - x0)).round() as usize;
                let y = (y0 + t * (y1 - y0)).round() as usize;
                img[(y.min(height - 1), x.min(width - 1))] = level;
            }
        }
        if values.len() == 1 {
            let (x, y) = to_px(0, values[0]);
            img[(y.round() as usize, x.round() as usize)] = level;
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixteen_bit_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        let img = Array2::from_shape_fn((5, 7), |(y, x)| (y * 7 + x) as f64 / 34.0);
        write_pgm(&p, &img, 0.0, 1.0, 16).unwrap();
        let back = read_pgm(&p).unwrap();
        assert_eq!(back.dim(), (5, 7));
        for (a, b) in img.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn eight_bit_clips_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.pgm");
        let img = Array2::from_shape_vec((1, 3), vec![-1.0, 0.5, 2.0]).unwrap();
        write_pgm(&p, &img, 0.0, 1.0, 8).unwrap();
        let back = read_pgm(&p).unwrap();
        assert_eq!(back[(0, 0)], 0.0);
        assert_eq!(back[(0, 2)], 1.0);
    }

    #[test]
    fn chart_segments_are_connected() {
        let img = line_chart(&[vec![0.0, 3.0]], 10, 10, 3.0);
        // Every column between the endpoints carries ink.
        for x in 0..10 {
            assert!(img.column(x).iter().any(|&v| v < 1.0), "gap at column {x}");
        }
    }
}
