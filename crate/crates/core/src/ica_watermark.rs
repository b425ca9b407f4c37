//! Watermarking in ICA coordinates and ICA attacks on spread spectrum.
//!
//! The first half is a quantization watermark: an ICA basis is learned from
//! the cover's own blocks, one coefficient per block is snapped to one of two
//! interleaved lattices, and a nearest-neighbour detector reads it back.
//!
//! The second half models spread-spectrum embedding `Y = X + U·S` over a
//! batch of feature vectors and the blind (watermarked-only) and
//! known-original attacks that recover the secret carriers `U` with ICA.

use nalgebra::{DMatrix, DVector};

use crate::ica::{center_whiten, fastica_symmetric, Contrast, IcaOptions};
use crate::imageio::{from_blocks, quantize_pixel, to_blocks};
use crate::prng::prng_mix;
use crate::sparse_coding::{gaussian, read_f64s, split_header};
use crate::steganalysis::psnr;
use crate::{par, Error, GrayImage, KeyedPrng, Result};

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameter(format!("quantization step {delta} must be positive")));
    }
    Ok(())
}

/// `Δ⌊x/Δ⌋` for `m = 0`, `Δ⌊x/Δ⌋ + Δ/2` for `m = 1`.
pub fn quantize_embed(x: f64, m: u8, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    let base = delta * (x / delta).floor();
    Ok(if m & 1 == 1 { base + delta / 2.0 } else { base })
}

/// Nearest coset: 0 when `x mod Δ` is circularly at least as close to 0 as
/// to `Δ/2`.
pub fn nn_detect(x: f64, delta: f64) -> Result<u8> {
    check_delta(delta)?;
    let r = x - delta * (x / delta).floor();
    let d0 = r.min(delta - r);
    let d1 = (r - delta / 2.0).abs();
    Ok(u8::from(d1 < d0))
}

pub fn normalized_correlation(u: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch(format!("vectors of length {} and {}", u.len(), v.len())));
    }
    let d = u.norm() * v.norm();
    if d == 0.0 {
        return Err(Error::DegenerateData("zero vector".into()));
    }
    Ok((u.dot(v) / d).clamp(-1.0, 1.0))
}

/// Per-block analysis and synthesis vectors of the designated component.
#[derive(Clone, Debug, PartialEq)]
pub struct IcaBasisKey {
    pub block_side: usize,
    /// Component index within the learned basis, kept for diagnostics.
    pub component: usize,
    pub delta: f64,
    pub mean: DVector<f64>,
    /// Row of `W·V`: block to coefficient.
    pub analysis: DVector<f64>,
    /// Column of the mixing matrix: coefficient to block.
    pub synthesis: DVector<f64>,
}

impl IcaBasisKey {
    /// `ICAKEY1` file: magic line, ASCII `n component` line, then
    /// little-endian f64 `delta`, `mean`, `analysis`, `synthesis`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("ICAKEY1\n{} {}\n", self.block_side, self.component).into_bytes();
        out.extend_from_slice(&self.delta.to_le_bytes());
        for v in self.mean.iter().chain(self.analysis.iter()).chain(self.synthesis.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (dims, body) = split_header(bytes, b"ICAKEY1\n", 2)?;
        let n2 = dims[0] * dims[0];
        if n2 == 0 {
            return Err(Error::KeyFormat("zero block side".into()));
        }
        let v = read_f64s(body, 1 + 3 * n2)?;
        let key = Self {
            block_side: dims[0],
            component: dims[1],
            delta: v[0],
            mean: DVector::from_column_slice(&v[1..1 + n2]),
            analysis: DVector::from_column_slice(&v[1 + n2..1 + 2 * n2]),
            synthesis: DVector::from_column_slice(&v[1 + 2 * n2..]),
        };
        check_delta(key.delta).map_err(|_| Error::KeyFormat("non-positive step".into()))?;
        Ok(key)
    }

    fn coefficient(&self, block: &DVector<f64>) -> f64 {
        self.analysis.dot(&(block - &self.mean))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QimParams {
    pub block_side: usize,
    /// PCA dimension the ICA basis is learned in.
    pub components: usize,
    /// `None` picks the step for the target PSNR.
    pub delta: Option<f64>,
    pub target_psnr_db: f64,
    pub seed: u64,
}

impl Default for QimParams {
    fn default() -> Self {
        Self {
            block_side: 16,
            components: 16,
            delta: None,
            target_psnr_db: 44.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QimReport {
    pub capacity_bits: usize,
    pub used_bits: usize,
    pub delta: f64,
    pub psnr_db: f64,
    pub ica_converged: bool,
}

/// Step whose expected embedding MSE, plus pixel rounding, meets `psnr_db`.
///
/// Over uniformly distributed coefficients the squared shift averages
/// `Δ²/3` for `m = 0` and `Δ²/12` for `m = 1`, i.e. `5Δ²/24`, spread over
/// the block through the synthesis vector.
pub fn delta_for_psnr(synthesis: &DVector<f64>, psnr_db: f64) -> f64 {
    let n2 = synthesis.len() as f64;
    let mse = (255.0f64 * 255.0 / 10f64.powf(psnr_db / 10.0) - 1.0 / 12.0).max(1e-6);
    (24.0 * n2 * mse / (5.0 * synthesis.norm_squared())).sqrt()
}

/// Learns the block basis of `cover` and picks the component whose
/// synthesis vector has median energy.
pub fn learn_basis(cover: &GrayImage, p: &QimParams) -> Result<(IcaBasisKey, bool)> {
    let blocks = to_blocks(cover, p.block_side)?;
    let comps = p.components.min(blocks.rows()).min(blocks.cols().saturating_sub(1));
    let (z, model) = center_whiten(&blocks.data, comps)?;
    let opts = IcaOptions {
        contrast: Contrast::Gauss,
        seed: p.seed,
        ..IcaOptions::default()
    };
    let fit = fastica_symmetric(&z, comps, &opts)?;
    let analysis = &fit.unmixing * &model.whitener;
    let mixing = &model.dewhitener * fit.unmixing.transpose();
    let mut by_energy: Vec<(f64, usize)> = (0..comps).map(|k| (mixing.column(k).norm_squared(), k)).collect();
    by_energy.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let component = by_energy[comps / 2].1;
    let synthesis = mixing.column(component).into_owned();
    let delta = match p.delta {
        Some(d) => {
            check_delta(d)?;
            d
        }
        None => delta_for_psnr(&synthesis, p.target_psnr_db),
    };
    Ok((
        IcaBasisKey {
            block_side: p.block_side,
            component,
            delta,
            mean: model.mean,
            analysis: analysis.row(component).transpose(),
            synthesis,
        },
        fit.all_converged(),
    ))
}

/// One bit per block, in block raster order, written into the designated
/// ICA coefficient.
pub fn ica_block_watermark_embed(cover: &GrayImage, bits: &[u8], p: &QimParams) -> Result<(GrayImage, IcaBasisKey, QimReport)> {
    let (key, converged) = learn_basis(cover, p)?;
    let stego = embed_with_key(cover, bits, &key)?;
    let report = QimReport {
        capacity_bits: (cover.width() / p.block_side) * (cover.height() / p.block_side),
        used_bits: bits.len(),
        delta: key.delta,
        psnr_db: psnr(cover, &stego)?,
        ica_converged: converged,
    };
    Ok((stego, key, report))
}

const ROUNDING_PASSES: usize = 8;

pub fn embed_with_key(cover: &GrayImage, bits: &[u8], key: &IcaBasisKey) -> Result<GrayImage> {
    let mut blocks = to_blocks(cover, key.block_side)?;
    if key.mean.len() != blocks.rows() {
        return Err(Error::DimensionMismatch("basis key does not match block size".into()));
    }
    if bits.len() > blocks.cols() {
        return Err(Error::CapacityExceeded {
            capacity: blocks.cols(),
            required: bits.len(),
        });
    }
    // analysis · synthesis = 1, so moving along the synthesis vector shifts
    // this coefficient alone.
    let gain = key.analysis.dot(&key.synthesis);
    for (j, &bit) in bits.iter().enumerate() {
        let block = blocks.data.column(j).into_owned();
        let s = key.coefficient(&block);
        let target = quantize_embed(s, bit, key.delta)?;
        // Pixel rounding perturbs the coefficient; aim off by the observed
        // error until the rounded block reads back correctly.
        let mut aim = target;
        let mut rounded = block.clone();
        for _ in 0..ROUNDING_PASSES {
            let moved = &block + &key.synthesis * ((aim - s) / gain);
            rounded = moved.map(|v| f64::from(quantize_pixel(v)));
            let got = key.coefficient(&rounded);
            if nn_detect(got, key.delta)? == bit {
                break;
            }
            aim += target - got;
        }
        blocks.data.set_column(j, &rounded);
    }
    from_blocks(&blocks)
}

pub fn ica_block_watermark_extract(stego: &GrayImage, key: &IcaBasisKey, nbits: usize) -> Result<Vec<u8>> {
    let blocks = to_blocks(stego, key.block_side)?;
    if key.mean.len() != blocks.rows() {
        return Err(Error::DimensionMismatch("basis key does not match block size".into()));
    }
    if nbits > blocks.cols() {
        return Err(Error::CapacityExceeded {
            capacity: blocks.cols(),
            required: nbits,
        });
    }
    (0..nbits)
        .map(|j| nn_detect(key.coefficient(&blocks.data.column(j).into_owned()), key.delta))
        .collect()
}

fn check_carriers(x: &DMatrix<f64>, u: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if u.nrows() != x.nrows() || b.nrows() != u.ncols() || b.ncols() != x.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "X {:?}, U {:?}, B {:?}",
            x.shape(),
            u.shape(),
            b.shape()
        )));
    }
    if u.column_iter().any(|c| (c.norm() - 1.0).abs() > 1e-9) {
        return Err(Error::InvalidParameter("carrier columns must be unit norm".into()));
    }
    Ok(())
}

/// `Y = X + U·B`.
pub fn ss_embed(x: &DMatrix<f64>, u: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_carriers(x, u, b)?;
    Ok(x + u * b)
}

/// `y = x + Σᵢ (α·b(i) − λ·⟨x, uᵢ⟩/‖uᵢ‖) uᵢ` column by column.
pub fn iss_embed(x: &DMatrix<f64>, u: &DMatrix<f64>, b: &DMatrix<f64>, alpha: f64, lambda: f64) -> Result<DMatrix<f64>> {
    check_carriers(x, u, b)?;
    let norms = DVector::from_iterator(u.ncols(), u.column_iter().map(|c| c.norm()));
    let z = u.tr_mul(x);
    let mut coef = b * alpha;
    for i in 0..u.ncols() {
        let mut row = coef.row_mut(i);
        row -= z.row(i) * (lambda / norms[i]);
    }
    Ok(x + u * coef)
}

/// Watermark-to-content ratio `10·log10(‖W‖²/‖X‖²)`.
pub fn wcr_db(x: &DMatrix<f64>, watermark: &DMatrix<f64>) -> f64 {
    10.0 * (watermark.norm_squared() / x.norm_squared()).log10()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackResult {
    /// `N_v x n_carriers`, unit columns, order and sign arbitrary.
    pub carriers: DMatrix<f64>,
    pub converged: bool,
}

fn ica_carriers(data: &DMatrix<f64>, n_carriers: usize, opts: &IcaOptions) -> Result<(DMatrix<f64>, DMatrix<f64>, bool)> {
    if data.ncols() <= n_carriers {
        return Err(Error::InsufficientStatistics(format!(
            "{} vectors for {n_carriers} carriers",
            data.ncols()
        )));
    }
    let (z, model) = center_whiten(data, n_carriers)?;
    let fit = fastica_symmetric(&z, n_carriers, opts)?;
    let mut mixing = &model.dewhitener * fit.unmixing.transpose();
    for mut c in mixing.column_iter_mut() {
        let n = c.norm();
        c /= n;
    }
    Ok((mixing, fit.sources(&z), fit.all_converged()))
}

/// Watermarked-only attack: the host is treated as noise and the carriers
/// are read off the ICA mixing matrix of `Y` restricted to its top principal
/// subspace.
pub fn woa_attack(y: &DMatrix<f64>, n_carriers: usize, opts: &IcaOptions) -> Result<AttackResult> {
    let (carriers, _, converged) = ica_carriers(y, n_carriers, opts)?;
    Ok(AttackResult { carriers, converged })
}

#[derive(Clone, Debug, PartialEq)]
pub struct KoaResult {
    pub carriers: DMatrix<f64>,
    /// `n_carriers x N₀` of ±1, each row matching the same-index carrier up
    /// to a shared sign.
    pub messages: DMatrix<f64>,
    pub converged: bool,
}

/// Known-original attack: ICA on the noise-free `D = Y − X = U·S`, then
/// a least-squares refit of the carriers on the sign-decided messages.
pub fn koa_attack(y: &DMatrix<f64>, x: &DMatrix<f64>, n_carriers: usize, opts: &IcaOptions) -> Result<KoaResult> {
    if y.shape() != x.shape() {
        return Err(Error::DimensionMismatch(format!("Y {:?} and X {:?}", y.shape(), x.shape())));
    }
    let d = y - x;
    let (carriers, sources, converged) = ica_carriers(&d, n_carriers, opts)?;
    let messages = sources.map(|v| if v < 0.0 { -1.0 } else { 1.0 });
    let gram = &messages * messages.transpose();
    let refit = match gram.clone().try_inverse() {
        Some(inv) => &d * messages.transpose() * inv,
        None => carriers.clone(),
    };
    // Keep the ICA sign convention so carriers and messages stay paired.
    let mut out = refit;
    for (k, mut c) in out.column_iter_mut().enumerate() {
        let n = c.norm();
        if n > 0.0 {
            c /= n;
        }
        if c.dot(&carriers.column(k)) < 0.0 {
            c.neg_mut();
        }
    }
    let messages = DMatrix::from_fn(n_carriers, d.ncols(), |k, t| {
        let s = out.column(k).dot(&d.column(t));
        if s < 0.0 {
            -1.0
        } else {
            1.0
        }
    });
    Ok(KoaResult {
        carriers: out,
        messages,
        converged,
    })
}

/// `max_j |corr(uᵢ, ûⱼ)|` for each true carrier `uᵢ`.
pub fn best_carrier_correlations(truth: &DMatrix<f64>, estimate: &DMatrix<f64>) -> Vec<f64> {
    truth
        .column_iter()
        .map(|u| {
            estimate
                .column_iter()
                .map(|e| normalized_correlation(&u.into_owned(), &e.into_owned()).map_or(0.0, f64::abs))
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Random `rows x cols` matrix with orthonormal columns.
pub fn random_orthonormal(rows: usize, cols: usize, rng: &mut KeyedPrng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(rows, cols, |_, _| gaussian(rng));
    g.qr().q()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpreadMethod {
    Ss,
    Iss { lambda: f64 },
}

impl SpreadMethod {
    pub fn name(self) -> &'static str {
        match self {
            SpreadMethod::Ss => "ss",
            SpreadMethod::Iss { .. } => "iss",
        }
    }
}

/// Synthetic spread-spectrum population: Gaussian host features of unit
/// variance and `α` set so that SS would land exactly on `wcr_db`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpreadSetup {
    pub vector_len: usize,
    pub vectors: usize,
    pub carriers: usize,
    pub wcr_db: f64,
    pub contrast: Contrast,
}

impl Default for SpreadSetup {
    fn default() -> Self {
        Self {
            vector_len: 512,
            vectors: 1000,
            carriers: 2,
            wcr_db: -21.0,
            contrast: Contrast::Quartic,
        }
    }
}

impl SpreadSetup {
    /// `α` with `N_c·α² / (N_v·σ²) = 10^(WCR/10)` at `σ² = 1`.
    pub fn alpha(&self) -> f64 {
        (self.vector_len as f64 * 10f64.powf(self.wcr_db / 10.0) / self.carriers as f64).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpreadTrial {
    pub host: DMatrix<f64>,
    pub carriers: DMatrix<f64>,
    pub bits: DMatrix<f64>,
    pub marked: DMatrix<f64>,
}

pub fn spread_trial(setup: &SpreadSetup, method: SpreadMethod, seed: u64) -> Result<SpreadTrial> {
    let mut rng = KeyedPrng::new(seed);
    let host = DMatrix::from_fn(setup.vector_len, setup.vectors, |_, _| gaussian(&mut rng));
    let carriers = random_orthonormal(setup.vector_len, setup.carriers, &mut rng);
    let bits = DMatrix::from_fn(setup.carriers, setup.vectors, |_, _| if rng.next_bit() == 1 { 1.0 } else { -1.0 });
    let alpha = setup.alpha();
    let marked = match method {
        SpreadMethod::Ss => ss_embed(&host, &carriers, &(&bits * alpha))?,
        SpreadMethod::Iss { lambda } => iss_embed(&host, &carriers, &bits, alpha, lambda)?,
    };
    Ok(SpreadTrial {
        host,
        carriers,
        bits,
        marked,
    })
}

/// One point set of the carrier-recovery scatter.
#[derive(Clone, Debug, PartialEq)]
pub struct WoaOutcome {
    pub trial: usize,
    pub method: SpreadMethod,
    pub wcr_db: f64,
    /// Best |correlation| per true carrier.
    pub best: Vec<f64>,
    /// Signed correlations of each estimate against every true carrier.
    pub scatter: Vec<Vec<f64>>,
    pub converged: bool,
}

/// Runs `trials` independent WOA attacks, trial `t` seeded with
/// `prng_mix(seed, t)`.
pub fn woa_experiment(setup: &SpreadSetup, method: SpreadMethod, trials: usize, seed: u64) -> Result<Vec<WoaOutcome>> {
    par::map_range(trials, |t| {
        let trial_seed = prng_mix(seed, t as u64);
        let data = spread_trial(setup, method, trial_seed)?;
        let opts = IcaOptions {
            contrast: setup.contrast,
            seed: trial_seed,
            ..IcaOptions::default()
        };
        let attack = woa_attack(&data.marked, setup.carriers, &opts)?;
        let scatter = attack
            .carriers
            .column_iter()
            .map(|e| {
                data.carriers
                    .column_iter()
                    .map(|u| normalized_correlation(&u.into_owned(), &e.into_owned()))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(WoaOutcome {
            trial: t,
            method,
            wcr_db: wcr_db(&data.host, &(&data.marked - &data.host)),
            best: best_carrier_correlations(&data.carriers, &attack.carriers),
            scatter,
            converged: attack.converged,
        })
    })
    .into_iter()
    .collect()
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic_cover;
    use proptest::prelude::*;

    #[test]
    fn quantizer_examples() {
        assert_eq!(quantize_embed(7.3, 0, 2.0).unwrap(), 6.0);
        assert_eq!(quantize_embed(7.3, 1, 2.0).unwrap(), 7.0);
        assert_eq!(quantize_embed(-0.1, 0, 2.0).unwrap(), -2.0);
        assert!(quantize_embed(1.0, 0, 0.0).is_err());
        assert!(nn_detect(1.0, -1.0).is_err());
    }

    #[test]
    fn detector_tie_goes_to_zero() {
        assert_eq!(nn_detect(0.5, 2.0).unwrap(), 0);
        assert_eq!(nn_detect(1.5, 2.0).unwrap(), 0);
        assert_eq!(nn_detect(1.0, 2.0).unwrap(), 1);
    }

    proptest! {
        #[test]
        fn qim_round_trip(x in -1e4f64..1e4, m in 0u8..2, delta in 1e-3f64..100.0) {
            let q = quantize_embed(x, m, delta).unwrap();
            prop_assert_eq!(nn_detect(q, delta).unwrap(), m);
        }

        #[test]
        fn qim_survives_small_noise(x in -1e3f64..1e3, m in 0u8..2, delta in 0.1f64..50.0, e in -0.249f64..0.249) {
            let q = quantize_embed(x, m, delta).unwrap();
            prop_assert_eq!(nn_detect(q + e * delta, delta).unwrap(), m);
        }
    }

    #[test]
    fn correlation_examples() {
        let u = DVector::from_vec(vec![1.0, 2.0, -1.0]);
        assert!((normalized_correlation(&u, &u).unwrap() - 1.0).abs() < 1e-15);
        assert!((normalized_correlation(&u, &(-&u)).unwrap() + 1.0).abs() < 1e-15);
        let v = DVector::from_vec(vec![2.0, -1.0, 0.0]);
        assert_eq!(normalized_correlation(&u, &v).unwrap(), 0.0);
        assert!(normalized_correlation(&u, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn ss_single_carrier_adds_the_carrier() {
        let mut rng = KeyedPrng::new(1);
        let x = DMatrix::from_fn(8, 5, |_, _| gaussian(&mut rng));
        let u = random_orthonormal(8, 1, &mut rng);
        let b = DMatrix::from_element(1, 5, 1.0);
        let y = ss_embed(&x, &u, &b).unwrap();
        for c in 0..5 {
            assert!(((y.column(c) - x.column(c)) - u.column(0)).norm() < 1e-15);
        }
        assert!(ss_embed(&x, &(u * 2.0), &b).is_err());
    }

    #[test]
    fn ss_distortion_closed_form() {
        let mut rng = KeyedPrng::new(2);
        let x = DMatrix::from_fn(32, 40, |_, _| gaussian(&mut rng));
        let u = random_orthonormal(32, 3, &mut rng);
        let alpha = 0.7;
        let b = DMatrix::from_fn(3, 40, |_, _| if rng.next_bit() == 1 { alpha } else { -alpha });
        let y = ss_embed(&x, &u, &b).unwrap();
        assert!(((&y - &x).norm_squared() - 40.0 * 3.0 * alpha * alpha).abs() < 1e-9);
        // Superposition over message matrices.
        let b2 = DMatrix::from_fn(3, 40, |_, _| gaussian(&mut rng));
        let lhs = ss_embed(&x, &u, &(&b + &b2)).unwrap();
        let rhs = ss_embed(&x, &u, &b).unwrap() + &u * &b2;
        assert!((lhs - rhs).abs().max() < 1e-12);
    }

    #[test]
    fn iss_reductions() {
        let mut rng = KeyedPrng::new(3);
        let x = DMatrix::from_fn(16, 20, |_, _| gaussian(&mut rng));
        let u = random_orthonormal(16, 2, &mut rng);
        let b = DMatrix::from_fn(2, 20, |_, _| if rng.next_bit() == 1 { 1.0 } else { -1.0 });
        let ss = ss_embed(&x, &u, &b).unwrap();
        assert!((iss_embed(&x, &u, &b, 1.0, 0.0).unwrap() - ss).abs().max() < 1e-12);
        let alpha = 0.8;
        let y = iss_embed(&x, &u, &b, alpha, 1.0).unwrap();
        let proj = u.tr_mul(&y);
        assert!((proj - &b * alpha).abs().max() < 1e-12);
    }

    #[test]
    fn wcr_of_the_default_setup() {
        let setup = SpreadSetup::default();
        let t = spread_trial(&setup, SpreadMethod::Ss, 4).unwrap();
        let w = wcr_db(&t.host, &(&t.marked - &t.host));
        assert!((w + 21.0).abs() < 0.1, "{w}");
    }

    #[test]
    fn iss_carries_less_watermark_variance() {
        let setup = SpreadSetup::default();
        let ss = spread_trial(&setup, SpreadMethod::Ss, 5).unwrap();
        let iss = spread_trial(&setup, SpreadMethod::Iss { lambda: 0.5 }, 5).unwrap();
        let var = |t: &SpreadTrial| {
            let p = t.carriers.tr_mul(&t.marked);
            let m = p.mean();
            p.map(|v| (v - m).powi(2)).mean()
        };
        assert!(var(&iss) < var(&ss));
    }

    #[test]
    fn woa_on_noiseless_rank_one_data_is_exact() {
        let mut rng = KeyedPrng::new(6);
        let u = random_orthonormal(20, 1, &mut rng);
        let b = DMatrix::from_fn(1, 200, |_, _| if rng.next_bit() == 1 { 1.0 } else { -1.0 });
        let y = ss_embed(&DMatrix::zeros(20, 200), &u, &b).unwrap();
        let out = woa_attack(&y, 1, &IcaOptions::default()).unwrap();
        let c = normalized_correlation(&u.column(0).into_owned(), &out.carriers.column(0).into_owned()).unwrap();
        assert!((c.abs() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn koa_recovers_carriers_and_messages() {
        let setup = SpreadSetup {
            vector_len: 64,
            vectors: 300,
            ..SpreadSetup::default()
        };
        let t = spread_trial(&setup, SpreadMethod::Ss, 7).unwrap();
        let out = koa_attack(&t.marked, &t.host, 2, &IcaOptions::default()).unwrap();
        let best = best_carrier_correlations(&t.carriers, &out.carriers);
        assert!(best.iter().all(|&c| c >= 0.999), "{best:?}");
        for i in 0..2 {
            let matches = (0..2).any(|k| {
                let agree = (0..300).filter(|&s| out.messages[(k, s)] == t.bits[(i, s)]).count();
                agree == 0 || agree == 300
            });
            assert!(matches, "message {i} not recovered up to sign");
        }
    }

    #[test]
    fn koa_single_carrier_is_normalization() {
        let mut rng = KeyedPrng::new(8);
        let x = DMatrix::from_fn(10, 50, |_, _| gaussian(&mut rng));
        let u = random_orthonormal(10, 1, &mut rng);
        let b = DMatrix::from_fn(1, 50, |_, _| if rng.next_bit() == 1 { 2.0 } else { -2.0 });
        let y = ss_embed(&x, &u, &b).unwrap();
        let out = koa_attack(&y, &x, 1, &IcaOptions::default()).unwrap();
        let c = normalized_correlation(&u.column(0).into_owned(), &out.carriers.column(0).into_owned()).unwrap();
        assert!((c.abs() - 1.0).abs() < 1e-9);
        assert!(koa_attack(&y, &y, 1, &IcaOptions::default()).is_err());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn block_watermark_round_trip() {
        let cover = synthetic_cover(128, 128, 3);
        let bits: Vec<u8> = KeyedPrng::new(9).bits(64);
        let p = QimParams::default();
        let (stego, key, report) = ica_block_watermark_embed(&cover, &bits, &p).unwrap();
        assert_eq!(report.capacity_bits, 64);
        assert!(report.psnr_db >= 40.0, "{}", report.psnr_db);
        let got = ica_block_watermark_extract(&stego, &key, 64).unwrap();
        let errors = got.iter().zip(&bits).filter(|(a, b)| a != b).count();
        assert!(errors as f64 / 64.0 < 0.05);
        let key2 = IcaBasisKey::from_bytes(&key.to_bytes()).unwrap();
        assert_eq!(key2, key);
        assert!(ica_block_watermark_embed(&cover, &[0; 65], &p).is_err());
    }

    #[test]
    fn rounding_correction_makes_round_trips_exact() {
        for seed in 0..4u64 {
            let cover = synthetic_cover(128, 128, seed);
            let bits = KeyedPrng::new(seed + 50).bits(64);
            let p = QimParams { seed, ..QimParams::default() };
            let (stego, key, report) = ica_block_watermark_embed(&cover, &bits, &p).unwrap();
            assert!(report.psnr_db >= 40.0, "{}", report.psnr_db);
            assert_eq!(ica_block_watermark_extract(&stego, &key, 64).unwrap(), bits, "seed {seed}");
        }
    }

    #[test]
    fn no_bits_leaves_cover_alone() {
        let cover = synthetic_cover(64, 64, 4);
        let (stego, _, _) = ica_block_watermark_embed(&cover, &[], &QimParams::default()).unwrap();
        assert!(stego.pixels().iter().zip(cover.pixels()).all(|(&a, &b)| a.abs_diff(b) <= 1));
    }
}
