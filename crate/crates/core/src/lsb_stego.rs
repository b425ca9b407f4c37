//! LSB replacement and its histogram-preserving descendants.
//!
//! A unit is the pair of intensities `{2i, 2i+1}`; rewriting an LSB keeps a
//! pixel inside its unit. LSB⁺ embeds into each unit until one of its two
//! bins is used up and then writes filler bits so the histogram comes out
//! exactly as it went in. The improved method first locks, per unit, a keyed
//! prefix of pixels that holds the bin imbalance, so the free pixels start
//! out balanced and far less filler is needed.

use crate::prng::{prng_mix, priority_order};
use crate::steganalysis::{hist_change, histogram, psnr, Histogram};
use crate::{bits_to_bytes, frame_message, read_u32_bits, Error, GrayImage, KeyedPrng, Result};

pub const UNITS: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KeySet {
    /// Message encryption.
    pub key1: u64,
    /// Lock priorities.
    pub key2: u64,
    /// Traversal order.
    pub key3: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LsbMethod {
    Lsb,
    LsbPlus,
    Improved,
}

impl LsbMethod {
    pub fn name(self) -> &'static str {
        match self {
            LsbMethod::Lsb => "lsb",
            LsbMethod::LsbPlus => "lsbplus",
            LsbMethod::Improved => "lsbplus-improved",
        }
    }
}

fn xor_keystream(bits: &mut [u8], key1: u64) {
    let mut rng = KeyedPrng::new(key1);
    for b in bits {
        *b ^= rng.next_bit();
    }
}

/// Framed message XORed with the `key1` bit stream. Applying the same
/// keystream again restores the framed message.
pub fn keystream_encrypt(msg: &[u8], key1: u64) -> Vec<u8> {
    let mut bits = frame_message(msg);
    xor_keystream(&mut bits, key1);
    bits
}

/// Expected histogram after flipping each LSB independently with
/// probability `p`.
pub fn predict_histogram(h: &[f64; 256], p: f64) -> Result<[f64; 256]> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("flip probability {p} outside [0, 1]")));
    }
    let mut out = [0.0; 256];
    for i in 0..UNITS {
        let (e, o) = (h[2 * i], h[2 * i + 1]);
        out[2 * i] = p * o + (1.0 - p) * e;
        out[2 * i + 1] = p * e + (1.0 - p) * o;
    }
    Ok(out)
}

/// Plain LSB replacement along the `key3` order.
pub fn lsb_embed(cover: &GrayImage, bits: &[u8], key3: u64) -> Result<GrayImage> {
    if bits.len() > cover.len() {
        return Err(Error::CapacityExceeded {
            capacity: cover.len(),
            required: bits.len(),
        });
    }
    let mut stego = cover.clone();
    let pixels = stego.pixels_mut();
    for (&p, &b) in priority_order(key3, pixels.len()).iter().zip(bits) {
        pixels[p] = (pixels[p] & !1) | (b & 1);
    }
    Ok(stego)
}

pub fn lsb_extract(stego: &GrayImage, key3: u64, nbits: usize) -> Result<Vec<u8>> {
    if nbits > stego.len() {
        return Err(Error::CapacityExceeded {
            capacity: stego.len(),
            required: nbits,
        });
    }
    let pixels = stego.pixels();
    Ok(priority_order(key3, pixels.len())
        .iter()
        .take(nbits)
        .map(|&p| pixels[p] & 1)
        .collect())
}

/// Per-unit bookkeeping for the locked and unlocked schemes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct UnitStats {
    pub h_even: u64,
    pub h_odd: u64,
    /// `|h_even − h_odd|`.
    pub imbalance: u64,
    /// LSB of the larger bin; even on a tie.
    pub majority: u8,
    pub skipped_majority: u64,
    /// Minority pixels caught inside the skipped prefix.
    pub skipped_minority: u64,
    /// Free-pixel count each LSB value must end with, indexed by LSB.
    pub quota: [u64; 2],
}

impl UnitStats {
    fn from_counts(h_even: u64, h_odd: u64) -> Self {
        Self {
            h_even,
            h_odd,
            imbalance: h_even.abs_diff(h_odd),
            majority: u8::from(h_odd > h_even),
            ..Self::default()
        }
    }

    pub fn free(&self) -> u64 {
        self.quota[0] + self.quota[1]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Locks {
    pub units: Vec<UnitStats>,
    pub skipped: Vec<bool>,
}

impl Locks {
    pub fn skipped_count(&self) -> usize {
        self.skipped.iter().filter(|&&s| s).count()
    }

    /// LSB⁺: nothing locked, quotas are the bins themselves.
    pub fn unlocked(img: &GrayImage) -> Self {
        let h = histogram(img);
        let units = (0..UNITS)
            .map(|i| {
                let (e, o) = h.pair(i);
                UnitStats {
                    quota: [e, o],
                    ..UnitStats::from_counts(e, o)
                }
            })
            .collect();
        Self {
            units,
            skipped: vec![false; img.len()],
        }
    }
}

/// Keyed locks: each unit skips its lowest-priority pixels up to and
/// including the `A_i`-th pixel of the majority bin, minority pixels in that
/// prefix included. What is left free holds `h_min` majority pixels and
/// `h_min − b_i` minority pixels, which become the quotas.
pub fn compute_locks(img: &GrayImage, key2: u64) -> Locks {
    let priorities: Vec<u64> = crate::par::map_range(img.len(), |p| prng_mix(key2, p as u64));
    locks_from_priorities(img, &priorities)
}

pub(crate) fn locks_from_priorities(img: &GrayImage, priorities: &[u64]) -> Locks {
    let pixels = img.pixels();
    let h = histogram(img);
    let mut by_unit: Vec<(u8, u64, usize)> = pixels
        .iter()
        .enumerate()
        .map(|(p, &v)| (v >> 1, priorities[p], p))
        .collect();
    crate::par::sort_unstable(&mut by_unit);

    let mut units: Vec<UnitStats> = (0..UNITS)
        .map(|i| {
            let (e, o) = h.pair(i);
            UnitStats::from_counts(e, o)
        })
        .collect();
    let mut skipped = vec![false; pixels.len()];
    let mut start = 0;
    for (i, unit) in units.iter_mut().enumerate() {
        let len = (unit.h_even + unit.h_odd) as usize;
        let members = &by_unit[start..start + len];
        debug_assert!(members.iter().all(|&(u, _, _)| u as usize == i));
        start += len;
        if unit.imbalance > 0 {
            for &(_, _, p) in members {
                if unit.skipped_majority == unit.imbalance {
                    break;
                }
                skipped[p] = true;
                if pixels[p] & 1 == unit.majority {
                    unit.skipped_majority += 1;
                } else {
                    unit.skipped_minority += 1;
                }
            }
        }
        let h_min = unit.h_even.min(unit.h_odd);
        let maj = unit.majority as usize;
        unit.quota[maj] = h_min;
        unit.quota[1 - maj] = h_min - unit.skipped_minority;
    }
    Locks { units, skipped }
}

/// Closure state shared by embedder and extractor.
struct Tally {
    counts: Vec<[u64; 2]>,
    closed: Vec<bool>,
}

impl Tally {
    fn new(locks: &Locks) -> Self {
        Self {
            counts: vec![[0; 2]; UNITS],
            closed: locks.units.iter().map(|u| u.quota[0] == 0 || u.quota[1] == 0).collect(),
        }
    }

    fn record(&mut self, locks: &Locks, unit: usize, bit: u8) {
        let c = &mut self.counts[unit][bit as usize];
        *c += 1;
        if *c == locks.units[unit].quota[bit as usize] {
            self.closed[unit] = true;
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FillStats {
    /// Free pixels written by the restoration phase.
    pub intentional_count: usize,
    /// Of those, pixels whose value actually changed.
    pub intentional_changes: usize,
}

/// Embeds as much of `bits` as the closure rule allows. Returns the number
/// written; the image is left mid-embedding, without restoration.
fn embed_prefix(pixels: &mut [u8], locks: &Locks, order: &[usize], bits: &[u8], touched: &mut [bool]) -> (usize, Tally) {
    let mut tally = Tally::new(locks);
    let mut written = 0;
    for &p in order {
        if written == bits.len() {
            break;
        }
        if locks.skipped[p] {
            continue;
        }
        let unit = (pixels[p] >> 1) as usize;
        if tally.closed[unit] {
            continue;
        }
        let b = bits[written] & 1;
        pixels[p] = (pixels[p] & !1) | b;
        tally.record(locks, unit, b);
        touched[p] = true;
        written += 1;
    }
    (written, tally)
}

fn restore(pixels: &mut [u8], locks: &Locks, order: &[usize], touched: &[bool], tally: &Tally) -> FillStats {
    let mut deficit: Vec<[u64; 2]> = locks
        .units
        .iter()
        .zip(&tally.counts)
        .map(|(u, c)| [u.quota[0] - c[0], u.quota[1] - c[1]])
        .collect();
    let mut stats = FillStats::default();
    for &p in order {
        if locks.skipped[p] || touched[p] {
            continue;
        }
        let unit = (pixels[p] >> 1) as usize;
        let maj = locks.units[unit].majority;
        let b = if deficit[unit][maj as usize] > 0 { maj } else { 1 - maj };
        deficit[unit][b as usize] -= 1;
        let v = (pixels[p] & !1) | b;
        if v != pixels[p] {
            stats.intentional_changes += 1;
        }
        pixels[p] = v;
        stats.intentional_count += 1;
    }
    debug_assert!(deficit.iter().all(|d| d == &[0, 0]));
    stats
}

/// Full pipeline over an already framed and encrypted bit stream.
pub(crate) fn embed_stream(cover: &GrayImage, locks: &Locks, key3: u64, bits: &[u8]) -> Result<(GrayImage, FillStats)> {
    let order = priority_order(key3, cover.len());
    let mut stego = cover.clone();
    let mut touched = vec![false; cover.len()];
    let (written, tally) = embed_prefix(stego.pixels_mut(), locks, &order, bits, &mut touched);
    if written < bits.len() {
        return Err(Error::CapacityExceeded {
            capacity: written,
            required: bits.len(),
        });
    }
    let fill = restore(stego.pixels_mut(), locks, &order, &touched, &tally);
    Ok((stego, fill))
}

/// Reads the encrypted stream back, stopping once the header's length has
/// been consumed.
fn extract_stream(stego: &GrayImage, locks: &Locks, key3: u64, key1: u64) -> Result<Vec<u8>> {
    let pixels = stego.pixels();
    let mut tally = Tally::new(locks);
    let mut bits = Vec::new();
    let mut need = 32usize;
    let mut keystream = KeyedPrng::new(key1);
    for p in priority_order(key3, pixels.len()) {
        if bits.len() == need {
            break;
        }
        if locks.skipped[p] {
            continue;
        }
        let unit = (pixels[p] >> 1) as usize;
        if tally.closed[unit] {
            continue;
        }
        let b = pixels[p] & 1;
        tally.record(locks, unit, b);
        bits.push(b ^ keystream.next_bit());
        if bits.len() == 32 {
            let announced = read_u32_bits(&bits) as usize;
            if announced > pixels.len() {
                return Err(Error::CorruptStream(format!(
                    "header announces {announced} bits in a {}-pixel image",
                    pixels.len()
                )));
            }
            need = 32 + announced;
        }
    }
    if bits.len() < need {
        return Err(Error::CorruptStream(format!(
            "stream ended after {} of {need} bits",
            bits.len()
        )));
    }
    Ok(bits_to_bytes(&bits[32..]))
}

fn method_locks(img: &GrayImage, method: LsbMethod, key2: u64) -> Locks {
    match method {
        LsbMethod::Improved => compute_locks(img, key2),
        _ => Locks::unlocked(img),
    }
}

/// Largest framed stream the method accepts, from a dry run whose payload is
/// the `key1` keystream itself (an all-zero plaintext, encrypted).
pub fn effective_capacity(img: &GrayImage, method: LsbMethod, keys: &KeySet) -> usize {
    if method == LsbMethod::Lsb {
        return img.len();
    }
    let locks = method_locks(img, method, keys.key2);
    let mut probe = vec![0u8; img.len()];
    xor_keystream(&mut probe, keys.key1);
    let order = priority_order(keys.key3, img.len());
    let mut pixels = img.pixels().to_vec();
    let mut touched = vec![false; img.len()];
    embed_prefix(&mut pixels, &locks, &order, &probe, &mut touched).0
}

#[derive(Clone, Debug, PartialEq)]
pub struct LsbReport {
    pub method: LsbMethod,
    /// Dry-run capacity, see [`effective_capacity`].
    pub capacity_bits: usize,
    pub used_bits: usize,
    pub intentional_count: usize,
    pub intentional_changes: usize,
    pub psnr_db: f64,
    pub hist_change: u64,
}

fn histogram_restored(cover: &Histogram, stego: &GrayImage) -> Result<()> {
    if &histogram(stego) != cover {
        return Err(Error::CorruptStream("histogram restoration failed".into()));
    }
    Ok(())
}

/// Embeds `msg` with the chosen method. Plain LSB uses `key1` and `key3`
/// only; LSB⁺ ignores `key2`.
pub fn embed(cover: &GrayImage, msg: &[u8], method: LsbMethod, keys: &KeySet) -> Result<(GrayImage, LsbReport)> {
    let bits = keystream_encrypt(msg, keys.key1);
    let (stego, fill) = match method {
        LsbMethod::Lsb => (lsb_embed(cover, &bits, keys.key3)?, FillStats::default()),
        _ => {
            let locks = method_locks(cover, method, keys.key2);
            let (stego, fill) = embed_stream(cover, &locks, keys.key3, &bits)?;
            histogram_restored(&histogram(cover), &stego)?;
            (stego, fill)
        }
    };
    let report = LsbReport {
        method,
        capacity_bits: effective_capacity(cover, method, keys),
        used_bits: bits.len(),
        intentional_count: fill.intentional_count,
        intentional_changes: fill.intentional_changes,
        psnr_db: psnr(cover, &stego)?,
        hist_change: hist_change(&stego),
    };
    Ok((stego, report))
}

pub fn extract(stego: &GrayImage, method: LsbMethod, keys: &KeySet) -> Result<Vec<u8>> {
    match method {
        LsbMethod::Lsb => {
            let n = stego.len();
            if n < 32 {
                return Err(Error::CorruptStream("image too small for a header".into()));
            }
            let mut header = lsb_extract(stego, keys.key3, 32)?;
            xor_keystream(&mut header, keys.key1);
            let announced = read_u32_bits(&header) as usize;
            if announced > n - 32 {
                return Err(Error::CorruptStream(format!(
                    "header announces {announced} bits, {} available",
                    n - 32
                )));
            }
            let mut bits = lsb_extract(stego, keys.key3, 32 + announced)?;
            xor_keystream(&mut bits, keys.key1);
            Ok(bits_to_bytes(&bits[32..]))
        }
        _ => {
            let locks = method_locks(stego, method, keys.key2);
            extract_stream(stego, &locks, keys.key3, keys.key1)
        }
    }
}

pub fn improved_embed(cover: &GrayImage, msg: &[u8], keys: &KeySet) -> Result<(GrayImage, LsbReport)> {
    embed(cover, msg, LsbMethod::Improved, keys)
}

pub fn improved_extract(stego: &GrayImage, keys: &KeySet) -> Result<Vec<u8>> {
    extract(stego, LsbMethod::Improved, keys)
}

pub fn lsbplus_embed(cover: &GrayImage, msg: &[u8], key3: u64, key1: u64) -> Result<(GrayImage, LsbReport)> {
    embed(cover, msg, LsbMethod::LsbPlus, &KeySet { key1, key2: 0, key3 })
}

pub fn lsbplus_extract(stego: &GrayImage, key3: u64, key1: u64) -> Result<Vec<u8>> {
    extract(stego, LsbMethod::LsbPlus, &KeySet { key1, key2: 0, key3 })
}
