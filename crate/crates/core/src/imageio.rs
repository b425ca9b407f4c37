//! 8-bit grayscale rasters, binary PGM I/O, and the block-matrix view used
//! by the sparse and ICA block transforms.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::{Error, Result};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PgmError {
    #[error("unsupported magic {0:?}, expected P5")]
    UnsupportedMagic(String),
    #[error("malformed header: {0}")]
    MalformedHeader(&'static str),
    #[error("maxval {0} exceeds 255")]
    MaxvalTooLarge(u32),
    #[error("truncated pixel data: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("pixel value {value} exceeds maxval {maxval}")]
    ValueAboveMaxval { value: u8, maxval: u32 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter("image dimensions must be positive".into()));
        }
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self::new(width, height, vec![value; width * height]).expect("positive dimensions")
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> u8) -> Self {
        let pixels = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(width, height, pixels).expect("positive dimensions")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Row-major pixels.
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn same_dims(&self, other: &GrayImage) -> bool {
        self.width == other.width && self.height == other.height
    }
}

fn skip_space_and_comments(bytes: &[u8], pos: &mut usize) {
    while *pos < bytes.len() {
        match bytes[*pos] {
            b'#' => {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            }
            b if b.is_ascii_whitespace() => *pos += 1,
            _ => break,
        }
    }
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &'static str) -> std::result::Result<u32, PgmError> {
    skip_space_and_comments(bytes, pos);
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(PgmError::MalformedHeader(what));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or(PgmError::MalformedHeader(what))
}

/// Parses a binary (P5) PGM with maxval at most 255.
pub fn read_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        let magic = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(PgmError::UnsupportedMagic(magic).into());
    }
    let mut pos = 2;
    let width = header_number(bytes, &mut pos, "width")? as usize;
    let height = header_number(bytes, &mut pos, "height")? as usize;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if maxval > 255 {
        return Err(PgmError::MaxvalTooLarge(maxval).into());
    }
    if maxval == 0 || width == 0 || height == 0 {
        return Err(PgmError::MalformedHeader("zero dimension or maxval").into());
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(PgmError::MalformedHeader("missing separator before raster").into()),
    }
    let expected = width * height;
    let data = &bytes[pos..];
    if data.len() < expected {
        return Err(PgmError::Truncated { expected, found: data.len() }.into());
    }
    let pixels = data[..expected].to_vec();
    if let Some(&value) = pixels.iter().find(|&&v| u32::from(v) > maxval) {
        return Err(PgmError::ValueAboveMaxval { value, maxval }.into());
    }
    GrayImage::new(width, height, pixels)
}

/// Canonical P5 serialization: `P5\n<w> <h>\n255\n` followed by the raster.
pub fn write_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// An image cut into `n x n` blocks, one vectorized block per column.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockMatrix {
    pub block_side: usize,
    pub image_width: usize,
    pub image_height: usize,
    /// `n² x J`.
    pub data: DMatrix<f64>,
}

impl BlockMatrix {
    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn with_data(&self, data: DMatrix<f64>) -> BlockMatrix {
        BlockMatrix { data, ..*self }
    }
}

/// Blocks are enumerated left to right, top to bottom; each block is stacked
/// column by column, top to bottom.
pub fn to_blocks(img: &GrayImage, n: usize) -> Result<BlockMatrix> {
    if n == 0 || !img.width.is_multiple_of(n) || !img.height.is_multiple_of(n) {
        return Err(Error::NotDivisible {
            width: img.width,
            height: img.height,
            block_side: n,
        });
    }
    let bx = img.width / n;
    let by = img.height / n;
    let data = DMatrix::from_fn(n * n, bx * by, |r, j| {
        let (col, row) = (r / n, r % n);
        let (bxi, byi) = (j % bx, j / bx);
        f64::from(img.get(bxi * n + col, byi * n + row))
    });
    Ok(BlockMatrix {
        block_side: n,
        image_width: img.width,
        image_height: img.height,
        data,
    })
}

/// Round half away from zero, then clamp to `[0, 255]`.
pub fn quantize_pixel(v: f64) -> u8 {
    let r = v.round();
    if r.is_nan() || r <= 0.0 {
        0
    } else if r >= 255.0 {
        255
    } else {
        r as u8
    }
}

pub fn from_blocks(mat: &BlockMatrix) -> Result<GrayImage> {
    let n = mat.block_side;
    let (w, h) = (mat.image_width, mat.image_height);
    if n == 0 || w % n != 0 || h % n != 0 || mat.rows() != n * n || mat.cols() != (w / n) * (h / n) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} block matrix for {w}x{h} image with block side {n}",
            mat.rows(),
            mat.cols()
        )));
    }
    let bx = w / n;
    let mut pixels = vec![0u8; w * h];
    for j in 0..mat.cols() {
        let (bxi, byi) = (j % bx, j / bx);
        for r in 0..n * n {
            let (col, row) = (r / n, r % n);
            pixels[(byi * n + row) * w + bxi * n + col] = quantize_pixel(mat.data[(r, j)]);
        }
    }
    GrayImage::new(w, h, pixels)
}
