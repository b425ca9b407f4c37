//! Steganography and watermark-security workbench.
//!
//! Three families of methods live here:
//!
//! * [`sparse_stego`]: hiding bits in the fractional part of sparse
//!   coefficients of image blocks over a learned ([`sparse_coding`]) dictionary.
//! * [`lsb_stego`]: plain LSB replacement, histogram-restoring LSB⁺, and the
//!   keyed pixel-locking variant that needs far less restoration.
//! * [`ica`] and [`ica_watermark`]: FastICA, quantization watermarking in an
//!   ICA block basis, spread-spectrum embedding and ICA-based attacks on it.
//!
//! [`steganalysis`] holds the shared quality and detection metrics, and
//! [`prng`] the keyed SplitMix64 generator every stochastic choice flows from.

pub mod corpus;
pub mod error;
pub mod ica;
pub mod ica_watermark;
pub mod imageio;
pub mod lsb_stego;
pub mod par;
pub mod prng;
pub mod sparse_coding;
pub mod sparse_stego;
pub mod steganalysis;

pub use error::{Error, Result};
pub use imageio::{BlockMatrix, GrayImage};
pub use prng::KeyedPrng;

/// Frames a message as a 32-bit big-endian bit-length header followed by the
/// message bits, most significant bit first.
pub fn frame_message(msg: &[u8]) -> Vec<u8> {
    let nbits = (msg.len() as u64 * 8) as u32;
    let mut bits = Vec::with_capacity(32 + msg.len() * 8);
    push_u32_bits(&mut bits, nbits);
    for &byte in msg {
        for k in (0..8).rev() {
            bits.push((byte >> k) & 1);
        }
    }
    bits
}

pub(crate) fn push_u32_bits(bits: &mut Vec<u8>, value: u32) {
    for k in (0..32).rev() {
        bits.push(((value >> k) & 1) as u8);
    }
}

pub(crate) fn read_u32_bits(bits: &[u8]) -> u32 {
    bits[..32].iter().fold(0u32, |acc, &b| (acc << 1) | u32::from(b & 1))
}

/// Packs MSB-first bits into bytes. A trailing partial byte is zero padded.
pub fn bits_to_bytes(bits: &[u8]) -> Vec<u8> {
    bits.chunks(8)
        .map(|chunk| {
            chunk
                .iter()
                .enumerate()
                .fold(0u8, |acc, (k, &b)| acc | ((b & 1) << (7 - k)))
        })
        .collect()
}

/// Unpacks bytes into MSB-first bits.
pub fn bytes_to_bits(bytes: &[u8]) -> Vec<u8> {
    bytes
        .iter()
        .flat_map(|&byte| (0..8).rev().map(move |k| (byte >> k) & 1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn framing_layout() {
        let framed = frame_message(&[0xA5]);
        assert_eq!(framed.len(), 40);
        assert_eq!(read_u32_bits(&framed), 8);
        assert_eq!(&framed[32..], &[1, 0, 1, 0, 0, 1, 0, 1]);
        assert_eq!(frame_message(&[]).len(), 32);
    }

    #[test]
    fn bit_packing_inverts() {
        let bytes = vec![0x00, 0xFF, 0x3C, 0x81];
        assert_eq!(bits_to_bytes(&bytes_to_bits(&bytes)), bytes);
    }
}
