//! Payload bits in the low fractional bits of sparse block coefficients.
//!
//! The cover is cut into `n x n` blocks, a dictionary is learned on them with
//! KSVD, and every support coefficient of the resulting code carries one bit,
//! replicated over the lowest `embed_bits` bits of a `frac_bits` fixed-point
//! fraction. The dictionary is the key.

use crate::imageio::{from_blocks, to_blocks};
use crate::sparse_coding::{ksvd, omp_batch, reconstruct, Dictionary, SparseCode};
use crate::steganalysis::psnr;
use crate::{bits_to_bytes, frame_message, read_u32_bits, Error, GrayImage, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SparseStegoParams {
    pub block_side: usize,
    pub atom_count: usize,
    pub sparsity: usize,
    pub ksvd_iters: usize,
    pub frac_bits: u32,
    pub embed_bits: u32,
    pub seed: u64,
}

impl Default for SparseStegoParams {
    fn default() -> Self {
        Self {
            block_side: 8,
            atom_count: 129,
            sparsity: 31,
            ksvd_iters: 10,
            frac_bits: 16,
            embed_bits: 4,
            seed: 0,
        }
    }
}

impl SparseStegoParams {
    pub fn validate(&self) -> Result<()> {
        let n2 = self.block_side * self.block_side;
        if self.block_side == 0 {
            return Err(Error::InvalidParameter("block side must be positive".into()));
        }
        if 2 * self.sparsity >= n2 {
            return Err(Error::InvalidParameter(format!(
                "sparsity {} must be below n²/2 = {}",
                self.sparsity,
                n2 as f64 / 2.0
            )));
        }
        check_codec(self.frac_bits, self.embed_bits)
    }
}

fn check_codec(frac_bits: u32, embed_bits: u32) -> Result<()> {
    if frac_bits == 0 || frac_bits > 52 {
        return Err(Error::InvalidParameter(format!("fraction depth {frac_bits} must be in 1..=52")));
    }
    if embed_bits == 0 || embed_bits > frac_bits {
        return Err(Error::InvalidParameter(format!(
            "embed bits {embed_bits} must be in 1..={frac_bits}"
        )));
    }
    Ok(())
}

fn fixed_fraction(m: f64, frac_bits: u32) -> (f64, u64) {
    let int = m.floor();
    let scale = (1u64 << frac_bits) as f64;
    let q = (((m - int) * scale).floor() as u64).min((1u64 << frac_bits) - 1);
    (int, q)
}

fn write_bit(c: f64, bit: u8, frac_bits: u32, embed_bits: u32) -> f64 {
    let sign = if c < 0.0 { -1.0 } else { 1.0 };
    let (int, q) = fixed_fraction(c.abs(), frac_bits);
    let mask = (1u64 << embed_bits) - 1;
    let q = if bit & 1 == 1 { q | mask } else { q & !mask };
    sign * (int + q as f64 / (1u64 << frac_bits) as f64)
}

fn read_bit(c: f64, frac_bits: u32, embed_bits: u32) -> u8 {
    let (_, q) = fixed_fraction(c.abs(), frac_bits);
    let ones = (q & ((1u64 << embed_bits) - 1)).count_ones();
    u8::from(2 * ones > embed_bits)
}

/// Replaces the low `embed_bits` bits of the `frac_bits`-bit fraction of `|c|`
/// with `bit` repeated. Sign and integer part are kept.
pub fn embed_bit_in_coeff(c: f64, bit: u8, frac_bits: u32, embed_bits: u32) -> Result<f64> {
    check_codec(frac_bits, embed_bits)?;
    if c == 0.0 {
        return Err(Error::ZeroCoefficient);
    }
    Ok(write_bit(c, bit, frac_bits, embed_bits))
}

/// Majority vote over the low `embed_bits` fraction bits; a tie reads as 0.
pub fn extract_bit_from_coeff(c: f64, frac_bits: u32, embed_bits: u32) -> Result<u8> {
    check_codec(frac_bits, embed_bits)?;
    if c == 0.0 {
        return Err(Error::ZeroCoefficient);
    }
    Ok(read_bit(c, frac_bits, embed_bits))
}

/// `(J·t0, J·n²/2)`: the sparsity ceiling and the uniqueness bound.
pub fn capacity(p: &SparseStegoParams, blocks: usize) -> (usize, usize) {
    let n2 = p.block_side * p.block_side;
    (blocks * p.sparsity, blocks * n2 / 2)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseReport {
    /// `J·t0`.
    pub capacity_bits: usize,
    /// `J·n²/2`.
    pub capacity_bound: usize,
    /// Support entries actually available, at most `capacity_bits`.
    pub nnz: usize,
    /// Framed bits written, header included.
    pub used_bits: usize,
    pub psnr_db: f64,
    pub ksvd_objective: f64,
}

#[derive(Clone, Debug)]
pub struct SparseEmbedding {
    pub stego: GrayImage,
    pub dictionary: Dictionary,
    /// The modified code, for oracle-mode extraction.
    pub code: SparseCode,
    pub report: SparseReport,
}

pub fn sparse_embed(cover: &GrayImage, msg: &[u8], p: &SparseStegoParams) -> Result<SparseEmbedding> {
    p.validate()?;
    let blocks = to_blocks(cover, p.block_side)?;
    let learned = ksvd(&blocks.data, p.atom_count, p.sparsity, p.ksvd_iters, p.seed)?;
    let bits = frame_message(msg);
    let mut code = learned.code;
    let nnz = code.nnz();
    if bits.len() > nnz {
        return Err(Error::CapacityExceeded {
            capacity: nnz,
            required: bits.len(),
        });
    }
    let carriers: Vec<(usize, usize)> = code.carriers().take(bits.len()).collect();
    for (&(atom, col), &bit) in carriers.iter().zip(&bits) {
        let c = &mut code.coeffs[(atom, col)];
        *c = write_bit(*c, bit, p.frac_bits, p.embed_bits);
    }
    let stego = from_blocks(&blocks.with_data(reconstruct(&learned.dictionary, &code)?))?;
    let (capacity_bits, capacity_bound) = capacity(p, blocks.cols());
    let report = SparseReport {
        capacity_bits,
        capacity_bound,
        nnz,
        used_bits: bits.len(),
        psnr_db: psnr(cover, &stego)?,
        ksvd_objective: learned.objective,
    };
    Ok(SparseEmbedding {
        stego,
        dictionary: learned.dictionary,
        code,
        report,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseExtraction {
    pub message: Vec<u8>,
    pub oracle: bool,
    pub nnz: usize,
    pub message_bits: usize,
}

fn check_key(key: &Dictionary, p: &SparseStegoParams) -> Result<()> {
    if key.atom_dim() != p.block_side * p.block_side || key.atom_count() != p.atom_count {
        return Err(Error::DimensionMismatch(format!(
            "dictionary is {}x{}, parameters expect {}x{}",
            key.atom_dim(),
            key.atom_count(),
            p.block_side * p.block_side,
            p.atom_count
        )));
    }
    Ok(())
}

/// The code the extractor reads from: the supplied oracle code, or a fresh
/// OMP code of the stego blocks.
fn carrier_code(
    stego: &GrayImage,
    key: &Dictionary,
    p: &SparseStegoParams,
    oracle_code: Option<&SparseCode>,
) -> Result<SparseCode> {
    p.validate()?;
    check_key(key, p)?;
    let blocks = to_blocks(stego, p.block_side)?;
    match oracle_code {
        Some(code) => {
            if code.atom_count() != key.atom_count() || code.cols() != blocks.cols() {
                return Err(Error::DimensionMismatch(format!(
                    "oracle code is {}x{}, expected {}x{}",
                    code.atom_count(),
                    code.cols(),
                    key.atom_count(),
                    blocks.cols()
                )));
            }
            Ok(code.clone())
        }
        None => omp_batch(key, &blocks.data, p.sparsity, 0.0),
    }
}

fn read_bits(code: &SparseCode, p: &SparseStegoParams, limit: usize) -> Vec<u8> {
    code.carriers()
        .take(limit)
        .map(|(atom, col)| read_bit(code.coeffs[(atom, col)], p.frac_bits, p.embed_bits))
        .collect()
}

pub fn sparse_extract(
    stego: &GrayImage,
    key: &Dictionary,
    p: &SparseStegoParams,
    oracle_code: Option<&SparseCode>,
) -> Result<SparseExtraction> {
    let code = carrier_code(stego, key, p, oracle_code)?;
    let nnz = code.nnz();
    if nnz < 32 {
        return Err(Error::TruncatedStream {
            announced: 32,
            available: nnz,
        });
    }
    let bits = read_bits(&code, p, nnz);
    let announced = read_u32_bits(&bits) as usize;
    if announced > nnz - 32 {
        return Err(Error::TruncatedStream {
            announced,
            available: nnz - 32,
        });
    }
    Ok(SparseExtraction {
        message: bits_to_bytes(&bits[32..32 + announced]),
        oracle: oracle_code.is_some(),
        nnz,
        message_bits: announced,
    })
}

/// The first `nbits` carried bits, header included, without interpreting the
/// header. Used to measure blind bit error rates against a known stream.
pub fn sparse_extract_raw(
    stego: &GrayImage,
    key: &Dictionary,
    p: &SparseStegoParams,
    oracle_code: Option<&SparseCode>,
    nbits: usize,
) -> Result<Vec<u8>> {
    let code = carrier_code(stego, key, p, oracle_code)?;
    let mut bits = read_bits(&code, p, nbits);
    bits.resize(nbits, 0);
    Ok(bits)
}

/// Bit error rate of the framed stream of `msg` as read back blind.
pub fn blind_ber(stego: &GrayImage, key: &Dictionary, p: &SparseStegoParams, msg: &[u8]) -> Result<f64> {
    let sent = frame_message(msg);
    let got = sparse_extract_raw(stego, key, p, None, sent.len())?;
    crate::steganalysis::ber(&sent, &got)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::KeyedPrng;
    use proptest::prelude::*;

    const B: u32 = 16;
    const E: u32 = 4;

    #[test]
    fn frozen_codec_values() {
        assert_eq!(embed_bit_in_coeff(5.25, 0, B, E).unwrap(), 5.25);
        assert_eq!(embed_bit_in_coeff(1.0, 1, B, E).unwrap(), 1.0002288818359375);
        assert_eq!(embed_bit_in_coeff(-2.5, 1, B, E).unwrap(), -(2.5 + 15.0 / 65536.0));
    }

    #[test]
    fn majority_and_tie() {
        // q = 0b1101 and q = 0b0110 with no integer part.
        assert_eq!(extract_bit_from_coeff(13.0 / 65536.0, B, E).unwrap(), 1);
        assert_eq!(extract_bit_from_coeff(6.0 / 65536.0, B, E).unwrap(), 0);
        assert_eq!(extract_bit_from_coeff(3.0 + 14.0 / 65536.0, B, E).unwrap(), 1);
    }

    #[test]
    fn zero_coefficient_rejected() {
        assert!(matches!(embed_bit_in_coeff(0.0, 1, B, E), Err(Error::ZeroCoefficient)));
        assert!(matches!(extract_bit_from_coeff(0.0, B, E), Err(Error::ZeroCoefficient)));
        assert!(embed_bit_in_coeff(1.0, 1, 16, 17).is_err());
    }

    #[test]
    fn single_coefficient_inverse() {
        for &c in &[0.1, -0.1, 1.7, -1.7, 3.99] {
            for bit in 0..2 {
                let e = embed_bit_in_coeff(c, bit, B, E).unwrap();
                assert_eq!(extract_bit_from_coeff(e, B, E).unwrap(), bit);
                assert_eq!(e.signum(), c.signum());
                assert_eq!(e.abs().floor(), c.abs().floor());
            }
        }
    }

    #[test]
    fn fraction_saturates_below_one() {
        let c = 2.0 - 1e-12;
        let e = embed_bit_in_coeff(c, 1, B, E).unwrap();
        assert_eq!(e, 1.0 + 65535.0 / 65536.0);
    }

    proptest! {
        #[test]
        fn codec_perturbation_is_bounded(c in -500.0f64..500.0, bit in 0u8..2) {
            prop_assume!(c != 0.0);
            let e = embed_bit_in_coeff(c, bit, B, E).unwrap();
            prop_assert!((e - c).abs() < 2f64.powi(E as i32 - B as i32));
            prop_assert_eq!(extract_bit_from_coeff(e, B, E).unwrap(), bit);
        }
    }

    #[test]
    fn capacity_numbers() {
        let p = SparseStegoParams::default();
        assert_eq!(capacity(&p, 1024), (31744, 32768));
        let zero = SparseStegoParams { sparsity: 0, ..p };
        assert_eq!(capacity(&zero, 1).0, 0);
    }

    #[test]
    fn params_enforce_uniqueness_bound() {
        let p = SparseStegoParams::default();
        assert!(p.validate().is_ok());
        assert!(SparseStegoParams { sparsity: 32, ..p }.validate().is_err());
        assert!(SparseStegoParams { embed_bits: 17, ..p }.validate().is_err());
    }

    fn textured(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = KeyedPrng::new(seed);
        let noise: Vec<f64> = (0..w * h).map(|_| rng.next_f64()).collect();
        GrayImage::from_fn(w, h, |x, y| {
            let base = 120.0 + 60.0 * ((x as f64) / 9.0).sin() * ((y as f64) / 13.0).cos();
            (base + 20.0 * noise[y * w + x]).clamp(0.0, 255.0) as u8
        })
    }

    fn small_params(seed: u64) -> SparseStegoParams {
        SparseStegoParams {
            block_side: 4,
            atom_count: 20,
            sparsity: 5,
            ksvd_iters: 3,
            seed,
            ..SparseStegoParams::default()
        }
    }

    #[test]
    fn oracle_round_trip_and_report() {
        let cover = textured(32, 32, 3);
        let p = small_params(9);
        let msg = b"sparse payload";
        let out = sparse_embed(&cover, msg, &p).unwrap();
        assert_eq!(out.report.capacity_bits, 64 * 5);
        assert_eq!(out.report.capacity_bound, 64 * 8);
        assert!(out.report.nnz <= out.report.capacity_bits);
        assert_eq!(out.report.used_bits, 32 + 8 * msg.len());
        let back = sparse_extract(&out.stego, &out.dictionary, &p, Some(&out.code)).unwrap();
        assert_eq!(back.message, msg);
        assert!(back.oracle);
    }

    #[test]
    fn oracle_round_trip_survives_code_file() {
        let cover = textured(32, 32, 4);
        let p = small_params(1);
        let out = sparse_embed(&cover, b"xy", &p).unwrap();
        let code = SparseCode::from_bytes(&out.code.to_bytes()).unwrap();
        let key = Dictionary::from_bytes(&out.dictionary.to_bytes()).unwrap();
        let back = sparse_extract(&out.stego, &key, &p, Some(&code)).unwrap();
        assert_eq!(back.message, b"xy");
    }

    #[test]
    fn empty_message_is_header_only() {
        let cover = textured(32, 32, 5);
        let p = small_params(2);
        let out = sparse_embed(&cover, &[], &p).unwrap();
        assert_eq!(out.report.used_bits, 32);
        let learned = ksvd(&to_blocks(&cover, 4).unwrap().data, 20, 5, 3, 2).unwrap();
        let changed = out.code.coeffs.iter().zip(learned.code.coeffs.iter()).filter(|(a, b)| a != b).count();
        assert!(changed <= 32);
        let back = sparse_extract(&out.stego, &out.dictionary, &p, Some(&out.code)).unwrap();
        assert!(back.message.is_empty());
    }

    #[test]
    fn oversized_message_reports_capacity() {
        let cover = textured(32, 32, 6);
        let p = small_params(3);
        match sparse_embed(&cover, &[0u8; 64], &p) {
            Err(Error::CapacityExceeded { capacity, required }) => {
                assert!(capacity <= 320);
                assert_eq!(required, 32 + 512);
            }
            other => panic!("expected capacity error, got {other:?}"),
        }
    }

    #[test]
    fn key_shape_is_checked() {
        let cover = textured(32, 32, 7);
        let p = small_params(4);
        let out = sparse_embed(&cover, b"a", &p).unwrap();
        let wrong = SparseStegoParams { atom_count: 21, ..p };
        assert!(matches!(
            sparse_extract(&out.stego, &out.dictionary, &wrong, None),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn embedding_is_deterministic() {
        let cover = textured(32, 32, 8);
        let p = small_params(5);
        let a = sparse_embed(&cover, b"same", &p).unwrap();
        let b = sparse_embed(&cover, b"same", &p).unwrap();
        assert_eq!(a.stego, b.stego);
        assert_eq!(a.dictionary.to_bytes(), b.dictionary.to_bytes());
        assert_eq!(a.code.to_bytes(), b.code.to_bytes());
    }

    #[test]
    fn blind_raw_read_has_requested_length() {
        let cover = textured(32, 32, 9);
        let p = small_params(6);
        let out = sparse_embed(&cover, b"hi", &p).unwrap();
        let raw = sparse_extract_raw(&out.stego, &out.dictionary, &p, None, 48).unwrap();
        assert_eq!(raw.len(), 48);
        let ber = blind_ber(&out.stego, &out.dictionary, &p, b"hi").unwrap();
        assert!((0.0..=1.0).contains(&ber));
    }
}
