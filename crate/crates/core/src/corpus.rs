//! Deterministic synthetic photographs.
//!
//! No image files ship with the crate, so experiments run on generated
//! covers with the ingredients that matter to the methods here: smooth
//! shading, object boundaries, multi-scale texture and sensor grain. The
//! histogram of such an image is irregular, like a real photograph's, rather
//! than flat.

use crate::prng::prng_mix;
use crate::sparse_coding::gaussian;
use crate::{GrayImage, KeyedPrng};

/// Knobs for one generated image. [`CoverStyle::from_seed`] draws them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoverStyle {
    /// Octave gain of the fractal texture.
    pub persistence: f64,
    /// Amplitude of the finest octaves relative to the coarse ones.
    pub fine_texture: f64,
    pub regions: usize,
    pub grain_sigma: f64,
    pub mean: f64,
    pub contrast: f64,
}

impl CoverStyle {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = KeyedPrng::new(prng_mix(seed, 0x5eed));
        Self {
            persistence: 0.5 + 0.2 * rng.next_f64(),
            fine_texture: 0.6 + 0.8 * rng.next_f64(),
            regions: 3 + rng.below(6) as usize,
            grain_sigma: 1.5 + 2.5 * rng.next_f64(),
            mean: 100.0 + 50.0 * rng.next_f64(),
            contrast: 35.0 + 20.0 * rng.next_f64(),
        }
    }
}

struct Lattice {
    cell: f64,
    cols: usize,
    values: Vec<f64>,
}

impl Lattice {
    fn new(width: usize, height: usize, cell: usize, rng: &mut KeyedPrng) -> Self {
        let cols = width / cell + 3;
        let rows = height / cell + 3;
        let values = (0..cols * rows).map(|_| 2.0 * rng.next_f64() - 1.0).collect();
        Self {
            cell: cell as f64,
            cols,
            values,
        }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        let (gx, gy) = (x / self.cell, y / self.cell);
        let (ix, iy) = (gx.floor() as usize, gy.floor() as usize);
        let (tx, ty) = (smooth(gx.fract()), smooth(gy.fract()));
        let v = |i: usize, j: usize| self.values[j * self.cols + i];
        let top = v(ix, iy) * (1.0 - tx) + v(ix + 1, iy) * tx;
        let bottom = v(ix, iy + 1) * (1.0 - tx) + v(ix + 1, iy + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

fn smooth(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

struct Region {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    cos: f64,
    sin: f64,
    offset: f64,
}

impl Region {
    /// Soft membership, about one pixel of edge blur.
    fn weight(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * self.cos + dy * self.sin) / self.rx;
        let v = (-dx * self.sin + dy * self.cos) / self.ry;
        let d = (u * u + v * v).sqrt();
        let edge = (1.0 - d) * self.rx.min(self.ry);
        (edge + 0.5).clamp(0.0, 1.0)
    }
}

pub fn synthetic_cover(width: usize, height: usize, seed: u64) -> GrayImage {
    synthetic_cover_with(width, height, seed, CoverStyle::from_seed(seed))
}

pub fn synthetic_cover_with(width: usize, height: usize, seed: u64, style: CoverStyle) -> GrayImage {
    let mut rng = KeyedPrng::new(seed);
    let scale = width.max(height).max(1);
    let mut octaves = Vec::new();
    let mut cell = (scale / 4).max(2);
    let mut amp = 1.0;
    while cell >= 2 {
        let gain = if cell <= 8 { amp * style.fine_texture } else { amp };
        octaves.push((Lattice::new(width, height, cell, &mut rng), gain));
        amp *= style.persistence;
        cell /= 2;
    }
    let norm: f64 = octaves.iter().map(|(_, g)| g * g).sum::<f64>().sqrt();

    let regions: Vec<Region> = (0..style.regions)
        .map(|_| {
            let angle = std::f64::consts::PI * rng.next_f64();
            Region {
                cx: width as f64 * rng.next_f64(),
                cy: height as f64 * rng.next_f64(),
                rx: scale as f64 * (0.08 + 0.25 * rng.next_f64()),
                ry: scale as f64 * (0.08 + 0.25 * rng.next_f64()),
                cos: angle.cos(),
                sin: angle.sin(),
                offset: if rng.next_bit() == 1 { 1.0 } else { -1.0 } * (0.6 + 0.8 * rng.next_f64()),
            }
        })
        .collect();

    let tilt = (2.0 * rng.next_f64() - 1.0, 2.0 * rng.next_f64() - 1.0);
    let grain: Vec<f64> = (0..width * height).map(|_| gaussian(&mut rng)).collect();

    GrayImage::from_fn(width, height, |x, y| {
        let (fx, fy) = (x as f64, y as f64);
        let texture: f64 = octaves.iter().map(|(l, g)| g * l.at(fx, fy)).sum::<f64>() / norm;
        let shading = 0.5 * (tilt.0 * fx + tilt.1 * fy) / scale as f64;
        let objects: f64 = regions.iter().map(|r| r.offset * r.weight(fx, fy)).sum();
        let v = style.mean
            + style.contrast * (1.6 * texture + shading + 0.6 * objects)
            + style.grain_sigma * grain[y * width + x];
        v.round().clamp(0.0, 255.0) as u8
    })
}

/// `count` covers with seeds derived from `seed`.
pub fn corpus(count: usize, width: usize, height: usize, seed: u64) -> Vec<GrayImage> {
    crate::par::map_range(count, |i| synthetic_cover(width, height, prng_mix(seed, i as u64)))
}
