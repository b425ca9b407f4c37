//! Quality and detection metrics shared by every method.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::prng::prng_mix;
use crate::{Error, GrayImage, Result};

/// Per-intensity pixel counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Histogram(pub [u64; 256]);

impl Histogram {
    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn pair(&self, unit: usize) -> (u64, u64) {
        (self.0[2 * unit], self.0[2 * unit + 1])
    }

    pub fn as_f64(&self) -> [f64; 256] {
        self.0.map(|c| c as f64)
    }
}

pub fn histogram(img: &GrayImage) -> Histogram {
    let mut h = [0u64; 256];
    for &p in img.pixels() {
        h[p as usize] += 1;
    }
    Histogram(h)
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` for identical images.
pub fn psnr(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::DimensionMismatch("psnr of differently sized images".into()));
    }
    let sse: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum();
    if sse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let mse = sse / a.len() as f64;
    Ok(10.0 * (255.0f64 * 255.0 / mse).log10())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChiSquare {
    pub chi2: f64,
    pub dof: usize,
    /// Upper tail probability. Values near 1 mean the pairs of values are
    /// suspiciously balanced, as after LSB replacement.
    pub p_value: f64,
}

pub const DEFAULT_MIN_EXPECTED: f64 = 4.0;

/// Pair-of-values chi-square test on an image.
pub fn chi_square_attack(img: &GrayImage, min_expected: f64) -> Result<ChiSquare> {
    chi_square_from_histogram(&histogram(img), min_expected)
}

/// Pair-of-values chi-square test. Pairs whose expected count falls below
/// `min_expected` are pooled with their neighbours until the pool reaches it;
/// a short pool left at the top of the range is dropped.
pub fn chi_square_from_histogram(h: &Histogram, min_expected: f64) -> Result<ChiSquare> {
    let mut categories: Vec<(f64, f64)> = Vec::new();
    let (mut obs, mut exp) = (0.0, 0.0);
    for unit in 0..128 {
        let (even, odd) = h.pair(unit);
        obs += even as f64;
        exp += (even + odd) as f64 / 2.0;
        if exp >= min_expected && exp > 0.0 {
            categories.push((obs, exp));
            obs = 0.0;
            exp = 0.0;
        }
    }
    if categories.len() < 2 {
        return Err(Error::InsufficientStatistics(format!(
            "{} usable pairs after pooling",
            categories.len()
        )));
    }
    let chi2: f64 = categories.iter().map(|&(o, e)| (o - e).powi(2) / e).sum();
    let dof = categories.len() - 1;
    let dist = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    Ok(ChiSquare {
        chi2,
        dof,
        p_value: dist.sf(chi2),
    })
}

/// 256x256 gray-level co-occurrence counts at offset `(dx, dy)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cooccurrence {
    counts: Vec<u64>,
}

impl Cooccurrence {
    pub fn get(&self, i: u8, j: u8) -> u64 {
        self.counts[i as usize * 256 + j as usize]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// 256 lines of 256 comma-separated counts, row `i` first.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(256 * 256 * 2);
        for row in self.counts.chunks(256) {
            let line: Vec<String> = row.iter().map(u64::to_string).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// Counts `[g(x,y)=i] and [g(x+dx, y+dy)=j]` over in-bounds pairs; no
/// wraparound.
pub fn cooccurrence(img: &GrayImage, dx: isize, dy: isize) -> Result<Cooccurrence> {
    let (w, h) = (img.width() as isize, img.height() as isize);
    if dx.abs() >= w || dy.abs() >= h {
        return Err(Error::InvalidParameter(format!("offset ({dx},{dy}) too large for {w}x{h} image")));
    }
    let mut counts = vec![0u64; 256 * 256];
    let xs = 0.max(-dx)..w.min(w - dx);
    let ys = 0.max(-dy)..h.min(h - dy);
    let px = img.pixels();
    for y in ys {
        for x in xs.clone() {
            let a = px[(y * w + x) as usize] as usize;
            let b = px[((y + dy) * w + x + dx) as usize] as usize;
            counts[a * 256 + b] += 1;
        }
    }
    Ok(Cooccurrence { counts })
}

/// Mean absolute per-entry difference of two co-occurrence matrices.
pub fn cooccurrence_change(a: &GrayImage, b: &GrayImage, dx: isize, dy: isize) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::DimensionMismatch("co-occurrence of differently sized images".into()));
    }
    let ca = cooccurrence(a, dx, dy)?;
    let cb = cooccurrence(b, dx, dy)?;
    let total: u64 = ca.counts.iter().zip(&cb.counts).map(|(&x, &y)| x.abs_diff(y)).sum();
    Ok(total as f64 / (256.0 * 256.0))
}

/// `Σᵢ |h₂ᵢ₊₁ − h₂ᵢ|`.
pub fn hist_change(img: &GrayImage) -> u64 {
    hist_change_of(&histogram(img))
}

pub fn hist_change_of(h: &Histogram) -> u64 {
    (0..128).map(|u| h.0[2 * u].abs_diff(h.0[2 * u + 1])).sum()
}

/// Salt-and-pepper output with the realized SNR.
#[derive(Clone, Debug)]
pub struct Noisy {
    pub image: GrayImage,
    /// `10·log10(Σ cover² / Σ (noisy − cover)²)`, infinite when unchanged.
    pub snr_db: f64,
}

/// Replaces each pixel with 0 or 255 (equally likely) with probability
/// `density`. Each pixel's draws are keyed by its index, so noise sets are
/// nested in `density` for a fixed seed.
pub fn salt_pepper(img: &GrayImage, density: f64, seed: u64) -> Result<Noisy> {
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::InvalidParameter(format!("density {density} outside [0, 1]")));
    }
    let mut out = img.clone();
    for (p, px) in out.pixels_mut().iter_mut().enumerate() {
        let u = (prng_mix(seed, 2 * p as u64) >> 11) as f64 / (1u64 << 53) as f64;
        if u < density {
            *px = if prng_mix(seed, 2 * p as u64 + 1) >> 63 == 1 { 255 } else { 0 };
        }
    }
    let snr_db = snr_db(img, &out)?;
    Ok(Noisy { image: out, snr_db })
}

pub fn snr_db(clean: &GrayImage, noisy: &GrayImage) -> Result<f64> {
    if !clean.same_dims(noisy) {
        return Err(Error::DimensionMismatch("snr of differently sized images".into()));
    }
    let signal: f64 = clean.pixels().iter().map(|&v| f64::from(v).powi(2)).sum();
    let noise: f64 = clean
        .pixels()
        .iter()
        .zip(noisy.pixels())
        .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
        .sum();
    Ok(if noise == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (signal / noise).log10()
    })
}

/// Bisects the salt-and-pepper density whose realized SNR is closest to
/// `target_db` for this image and seed.
pub fn calibrate_salt_pepper(img: &GrayImage, target_db: f64, seed: u64) -> Result<(f64, Noisy)> {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if salt_pepper(img, mid, seed)?.snr_db > target_db {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let a = salt_pepper(img, lo, seed)?;
    let b = salt_pepper(img, hi, seed)?;
    Ok(if (a.snr_db - target_db).abs() <= (b.snr_db - target_db).abs() {
        (lo, a)
    } else {
        (hi, b)
    })
}

/// Fraction of positions where the bit streams differ.
pub fn ber(a: &[u8], b: &[u8]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("bit streams of length {} and {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let diff = a.iter().zip(b).filter(|(x, y)| (*x & 1) != (*y & 1)).count();
    Ok(diff as f64 / a.len() as f64)
}
