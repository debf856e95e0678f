//! 28x28 scatter rasters: the image representation the network consumes.

use std::io::Write;

use crate::error::{Error, Result};
use crate::pairs::VariablePair;

pub const GRID: usize = 28;
pub const PIXELS: usize = GRID * GRID;

/// Bin used for every point when an axis has zero range.
const DEGENERATE_BIN: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Intensity {
    /// `log(1 + c) / log(1 + c_max)` for a cell holding `c` points.
    #[default]
    LogCount,
    /// 1.0 for any occupied cell.
    Binary,
}

/// Row-major 28x28 grayscale image, row 0 at the top, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    pixels: Vec<f64>,
    source_id: u64,
}

impl RasterImage {
    pub fn from_pixels(pixels: Vec<f64>, source_id: u64) -> Result<Self> {
        if pixels.len() != PIXELS {
            return Err(Error::shape(format!(
                "raster needs {PIXELS} pixels, got {}",
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("raster pixels must lie in [0, 1]"));
        }
        Ok(RasterImage { pixels, source_id })
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn source_id(&self) -> u64 {
        self.source_id
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * GRID + col]
    }

    /// Binary PGM (P5, maxval 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(PIXELS + 16);
        let _ = write!(out, "P5\n{GRID} {GRID}\n255\n");
        out.extend(self.pixels.iter().map(|&p| (p * 255.0).round() as u8));
        out
    }
}

/// Bin index of `v` on an axis spanning `[min, max]`: half-open bins of width
/// `(max - min) / 28`, with `max` itself in the last bin.
fn bin(v: f64, min: f64, max: f64) -> usize {
    if max <= min {
        return DEGENERATE_BIN;
    }
    let t = (v - min) / (max - min) * GRID as f64;
    // Points that sit on a bin edge up to rounding belong to the upper bin.
    let k = if (t - t.round()).abs() < 1e-9 {
        t.round()
    } else {
        t.floor()
    };
    (k.max(0.0) as usize).min(GRID - 1)
}

fn range(values: &[f64]) -> (f64, f64) {
    values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    })
}

pub fn rasterize(pair: &VariablePair) -> Result<RasterImage> {
    rasterize_with(pair, Intensity::LogCount)
}

/// Min-max normalizes each axis independently onto the grid, A along columns
/// and B along rows with B increasing upwards.
pub fn rasterize_with(pair: &VariablePair, mode: Intensity) -> Result<RasterImage> {
    let (a, b) = (pair.values_a(), pair.values_b());
    if a.len() < 2 || a.len() != b.len() {
        return Err(Error::InvalidPair {
            id: pair.id(),
            message: "rasterizing needs at least two paired observations".into(),
        });
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidPair {
            id: pair.id(),
            message: "non-finite value".into(),
        });
    }
    let (a_lo, a_hi) = range(a);
    let (b_lo, b_hi) = range(b);
    let mut counts = vec![0u32; PIXELS];
    for (&x, &y) in a.iter().zip(b) {
        let col = bin(x, a_lo, a_hi);
        let row = GRID - 1 - bin(y, b_lo, b_hi);
        counts[row * GRID + col] += 1;
    }
    let c_max = *counts.iter().max().expect("non-empty grid");
    let pixels = match mode {
        Intensity::LogCount => {
            let denom = (c_max as f64).ln_1p();
            counts
                .iter()
                .map(|&c| if c == 0 { 0.0 } else { (c as f64).ln_1p() / denom })
                .collect()
        }
        Intensity::Binary => counts.iter().map(|&c| if c > 0 { 1.0 } else { 0.0 }).collect(),
    };
    Ok(RasterImage {
        pixels,
        source_id: pair.id(),
    })
}

/// Full-resolution `(a, b)` points for client-side plotting.
pub fn export_points(pair: &VariablePair) -> Vec<(f64, f64)> {
    pair.points()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pairs::Direction;

    fn pair(a: Vec<f64>, b: Vec<f64>) -> VariablePair {
        VariablePair::new(1, a, b, Some(Direction::Forward)).unwrap()
    }

    fn lit(img: &RasterImage) -> Vec<(usize, usize, f64)> {
        (0..GRID)
            .flat_map(|r| (0..GRID).map(move |c| (r, c)))
            .filter(|&(r, c)| img.at(r, c) > 0.0)
            .map(|(r, c)| (c, r, img.at(r, c)))
            .collect()
    }

    #[test]
    fn two_extreme_points() {
        let img = rasterize(&pair(vec![0.0, 1.0], vec![0.0, 1.0])).unwrap();
        assert_eq!(lit(&img), vec![(27, 0, 1.0), (0, 27, 1.0)]);
    }

    #[test]
    fn degenerate_axes_use_centre_bin() {
        let img = rasterize(&pair(vec![2.5; 100], vec![-1.0; 100])).unwrap();
        assert_eq!(lit(&img), vec![(14, 13, 1.0)]);
    }

    #[test]
    fn affine_map_of_a_is_absorbed() {
        let a: Vec<f64> = (0..50).map(|i| ((i * 37) % 50) as f64 * 0.13).collect();
        let b: Vec<f64> = (0..50).map(|i| ((i * 11) % 17) as f64).collect();
        let a2: Vec<f64> = a.iter().map(|v| 5.0 * v + 3.0).collect();
        assert_eq!(
            rasterize(&pair(a, b.clone())).unwrap().pixels(),
            rasterize(&pair(a2, b)).unwrap().pixels()
        );
    }

    #[test]
    fn log_intensity_scaling() {
        // Three points in one cell, one in another.
        let img = rasterize(&pair(vec![0.0, 0.0, 0.0, 1.0], vec![0.0, 0.0, 0.0, 1.0])).unwrap();
        assert_eq!(img.at(27, 0), 1.0);
        assert!((img.at(0, 27) - 2f64.ln() / 4f64.ln()).abs() < 1e-15);
        let bin = rasterize_with(
            &pair(vec![0.0, 0.0, 0.0, 1.0], vec![0.0, 0.0, 0.0, 1.0]),
            Intensity::Binary,
        )
        .unwrap();
        assert_eq!(bin.at(0, 27), 1.0);
    }

    #[test]
    fn export_preserves_points() {
        let p = pair(vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]);
        let pts = export_points(&p);
        assert_eq!(pts, vec![(1.0, 4.0), (2.0, 5.0), (3.0, 6.0)]);
        assert_eq!(VariablePair::from_points(1, &pts, p.label()).unwrap(), p);
    }

    #[test]
    fn pgm_header_and_size() {
        let img = rasterize(&pair(vec![0.0, 1.0], vec![0.0, 1.0])).unwrap();
        let pgm = img.to_pgm();
        assert!(pgm.starts_with(b"P5\n28 28\n255\n"));
        assert_eq!(pgm.len(), 13 + PIXELS);
        assert_eq!(pgm[13 + 27 * GRID], 255);
    }
}
