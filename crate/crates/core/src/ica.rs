//! FastICA: centering and whitening, negentropy approximations and the
//! one-unit fixed-point iteration in its deflation and symmetric forms.
//!
//! Recovered components carry the usual ambiguities: order, sign and scale
//! are not identifiable, so every check here compares up to those.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::sparse_coding::gaussian;
use crate::{par, Error, KeyedPrng, Result};

const EIGEN_FLOOR: f64 = 1e-12;
const CHUNK: usize = 1024;

#[derive(Clone, Debug, PartialEq)]
pub struct WhiteningModel {
    pub mean: DVector<f64>,
    /// `n x m`, maps centered data to white coordinates.
    pub whitener: DMatrix<f64>,
    /// `m x n`, pseudo-inverse of the whitener.
    pub dewhitener: DMatrix<f64>,
}

impl WhiteningModel {
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut c = x.clone();
        for mut col in c.column_iter_mut() {
            col -= &self.mean;
        }
        &self.whitener * c
    }
}

/// Sample covariance `XXᵀ/T` of already centered columns.
fn covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let t = x.ncols() as f64;
    (x * x.transpose()) / t
}

/// Eigenpairs sorted by descending eigenvalue.
fn sorted_eigen(m: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(idx.len(), idx.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_columns(&idx.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect::<Vec<_>>());
    (values, vectors)
}

/// Centers the rows of `x` (`m` variables by `T` samples) and projects onto
/// the top `n_components` principal directions scaled to unit variance.
pub fn center_whiten(x: &DMatrix<f64>, n_components: usize) -> Result<(DMatrix<f64>, WhiteningModel)> {
    let (m, t) = x.shape();
    if n_components == 0 || n_components > m {
        return Err(Error::InvalidParameter(format!("{n_components} components from {m} variables")));
    }
    if t <= n_components {
        return Err(Error::InsufficientStatistics(format!("{t} samples for {n_components} components")));
    }
    let mean = x.column_mean();
    let mut centered = x.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let (values, vectors) = sorted_eigen(covariance(&centered));
    let top = values[0].max(0.0);
    if values[n_components - 1] <= EIGEN_FLOOR * top.max(1.0) {
        return Err(Error::DegenerateCovariance(format!(
            "eigenvalue {} of {n_components} is below the floor",
            values[n_components - 1]
        )));
    }
    let e = vectors.columns(0, n_components);
    let scale = values.rows(0, n_components).map(f64::sqrt);
    let whitener = DMatrix::from_diagonal(&scale.map(|s| 1.0 / s)) * e.transpose();
    let dewhitener = e * DMatrix::from_diagonal(&scale);
    let z = &whitener * centered;
    Ok((
        z,
        WhiteningModel {
            mean,
            whitener,
            dewhitener,
        },
    ))
}

fn standardize(y: &[f64], min_len: usize) -> Result<Vec<f64>> {
    if y.len() < min_len {
        return Err(Error::InsufficientStatistics(format!("{} samples, need {min_len}", y.len())));
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var <= 0.0 {
        return Err(Error::DegenerateData("zero variance sample".into()));
    }
    let sd = var.sqrt();
    Ok(y.iter().map(|v| (v - mean) / sd).collect())
}

/// `κ₃²/12 + κ₄²/48` from sample cumulants of the standardized input.
pub fn negentropy_kurtosis(y: &[f64]) -> Result<f64> {
    let z = standardize(y, 4)?;
    let n = z.len() as f64;
    let k3 = z.iter().map(|v| v.powi(3)).sum::<f64>() / n;
    let k4 = z.iter().map(|v| v.powi(4)).sum::<f64>() / n - 3.0;
    Ok(k3 * k3 / 12.0 + k4 * k4 / 48.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Contrast {
    /// `G(y) = y⁴/4`.
    Quartic,
    /// `G(y) = −exp(−y²/2)`.
    Gauss,
}

impl FromStr for Contrast {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quartic" | "pow3" | "kurtosis" => Ok(Contrast::Quartic),
            "gauss" => Ok(Contrast::Gauss),
            other => Err(Error::UnknownContrast(other.to_owned())),
        }
    }
}

impl Contrast {
    pub fn g(self, y: f64) -> f64 {
        match self {
            Contrast::Quartic => y.powi(4) / 4.0,
            Contrast::Gauss => -(-y * y / 2.0).exp(),
        }
    }

    /// `E{G(v)}` for standard normal `v`.
    pub fn gaussian_mean(self) -> f64 {
        match self {
            Contrast::Quartic => 0.75,
            Contrast::Gauss => -std::f64::consts::FRAC_1_SQRT_2,
        }
    }

    /// `(G′(y), G″(y))`.
    #[inline]
    fn derivatives(self, y: f64) -> (f64, f64) {
        match self {
            Contrast::Quartic => (y * y * y, 3.0 * y * y),
            Contrast::Gauss => {
                let e = (-y * y / 2.0).exp();
                (y * e, (1.0 - y * y) * e)
            }
        }
    }
}

/// `(E{G(y)} − E{G(v)})²` on the standardized input.
pub fn negentropy_contrast(y: &[f64], g: Contrast) -> Result<f64> {
    let z = standardize(y, 2)?;
    let mean = z.iter().map(|&v| g.g(v)).sum::<f64>() / z.len() as f64;
    Ok((mean - g.gaussian_mean()).powi(2))
}

/// Rows of the unmixing matrix plus per-row convergence diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct IcaFit {
    /// `n_components x dim`, rows unit norm and mutually orthogonal.
    pub unmixing: DMatrix<f64>,
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
}

impl IcaFit {
    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }

    /// Estimated sources `WZ`.
    pub fn sources(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        &self.unmixing * z
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IcaOptions {
    pub contrast: Contrast,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for IcaOptions {
    fn default() -> Self {
        Self {
            contrast: Contrast::Gauss,
            tol: 1e-6,
            max_iter: 500,
            seed: 0,
        }
    }
}

fn check_ica_args(z: &DMatrix<f64>, n_components: usize) -> Result<()> {
    if n_components == 0 || n_components > z.nrows() {
        return Err(Error::InvalidParameter(format!(
            "{n_components} components from {}-dimensional data",
            z.nrows()
        )));
    }
    if z.ncols() == 0 {
        return Err(Error::InsufficientStatistics("no samples".into()));
    }
    Ok(())
}

/// `E{z G′(wᵀz)} − E{G″(wᵀz)} w` for every row `w` of `w_rows`.
fn fixed_point(z: &DMatrix<f64>, w_rows: &DMatrix<f64>, g: Contrast) -> DMatrix<f64> {
    let (dim, t) = z.shape();
    let k = w_rows.nrows();
    let (sum_zg, sum_g2) = par::chunked_sum(
        t,
        CHUNK,
        |range| {
            let mut zg = DMatrix::<f64>::zeros(k, dim);
            let mut g2 = DVector::<f64>::zeros(k);
            for s in range {
                let col = z.column(s);
                for r in 0..k {
                    let y = w_rows.row(r).transpose().dot(&col);
                    let (d1, d2) = g.derivatives(y);
                    for c in 0..dim {
                        zg[(r, c)] += col[c] * d1;
                    }
                    g2[r] += d2;
                }
            }
            (zg, g2)
        },
        |(a, b), (c, d)| (a + c, b + d),
        (DMatrix::zeros(k, dim), DVector::zeros(k)),
    );
    let t = t as f64;
    let mut out = sum_zg / t;
    for r in 0..k {
        let scale = sum_g2[r] / t;
        let w = w_rows.row(r).into_owned();
        let mut row = out.row_mut(r);
        row -= w * scale;
    }
    out
}

fn random_rows(k: usize, dim: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = KeyedPrng::new(seed);
    let mut w = DMatrix::from_fn(k, dim, |_, _| gaussian(&mut rng));
    for mut row in w.row_iter_mut() {
        let n = row.norm();
        row /= n;
    }
    w
}

/// One component at a time, each decorrelated from those already found by
/// Gram–Schmidt.
pub fn fastica_deflation(z: &DMatrix<f64>, n_components: usize, opts: &IcaOptions) -> Result<IcaFit> {
    check_ica_args(z, n_components)?;
    let dim = z.nrows();
    let init = random_rows(n_components, dim, opts.seed);
    let mut w_all = DMatrix::<f64>::zeros(n_components, dim);
    let mut iterations = Vec::with_capacity(n_components);
    let mut converged = Vec::with_capacity(n_components);
    for p in 0..n_components {
        let mut w = init.row(p).into_owned();
        deflate(&mut w, &w_all, p);
        let mut done = false;
        let mut it = 0;
        while it < opts.max_iter {
            it += 1;
            let mut next = fixed_point(z, &DMatrix::from_rows(&[w.clone()]), opts.contrast).row(0).into_owned();
            deflate(&mut next, &w_all, p);
            let change = next.dot(&w).abs();
            w = next;
            if change > 1.0 - opts.tol {
                done = true;
                break;
            }
        }
        w_all.set_row(p, &w);
        iterations.push(it);
        converged.push(done);
    }
    Ok(IcaFit {
        unmixing: w_all,
        iterations,
        converged,
    })
}

fn deflate(w: &mut nalgebra::RowDVector<f64>, found: &DMatrix<f64>, count: usize) {
    for j in 0..count {
        let wj = found.row(j);
        let proj = w.dot(&wj);
        *w -= wj * proj;
    }
    let n = w.norm();
    if n > 0.0 {
        *w /= n;
    }
}

/// `(WWᵀ)^{−1/2} W`.
pub fn symmetric_orthogonalize(w: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(w * w.transpose());
    let inv_sqrt = eig.eigenvalues.map(|l| 1.0 / l.max(EIGEN_FLOOR).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose() * w
}

/// All components updated together, then symmetrically orthogonalized.
pub fn fastica_symmetric(z: &DMatrix<f64>, n_components: usize, opts: &IcaOptions) -> Result<IcaFit> {
    check_ica_args(z, n_components)?;
    let mut w = symmetric_orthogonalize(&random_rows(n_components, z.nrows(), opts.seed));
    let mut done = false;
    let mut it = 0;
    while it < opts.max_iter {
        it += 1;
        let next = symmetric_orthogonalize(&fixed_point(z, &w, opts.contrast));
        let agreement = (&next * w.transpose()).diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        w = next;
        if agreement > 1.0 - opts.tol {
            done = true;
            break;
        }
    }
    Ok(IcaFit {
        unmixing: w,
        iterations: vec![it; n_components],
        converged: vec![done; n_components],
    })
}

/// Amari separation error of `P = WA`, in `[0, 1]`; zero exactly when `P`
/// is a scaled permutation.
pub fn amari_index(w: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<f64> {
    if !w.is_square() || !a.is_square() || w.ncols() != a.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "amari index of {:?} and {:?}",
            w.shape(),
            a.shape()
        )));
    }
    if a.clone().lu().determinant() == 0.0 {
        return Err(Error::SingularMatrix);
    }
    let n = a.nrows();
    if n == 1 {
        return Ok(0.0);
    }
    let p = (w * a).abs();
    let mut total = 0.0;
    for i in 0..n {
        let row = p.row(i);
        let max = row.max();
        if max == 0.0 {
            return Err(Error::SingularMatrix);
        }
        total += row.sum() / max - 1.0;
    }
    for j in 0..n {
        let col = p.column(j);
        let max = col.max();
        if max == 0.0 {
            return Err(Error::SingularMatrix);
        }
        total += col.sum() / max - 1.0;
    }
    Ok(total / (2.0 * n as f64 * (n as f64 - 1.0)))
}

/// `max_j |corr(s_i, ŝ_j)|` for every true source row `i`.
pub fn best_abs_correlations(truth: &DMatrix<f64>, estimate: &DMatrix<f64>) -> Vec<f64> {
    truth
        .row_iter()
        .map(|s| {
            estimate
                .row_iter()
                .map(|e| row_correlation(&s.into_owned(), &e.into_owned()).abs())
                .fold(0.0, f64::max)
        })
        .collect()
}

fn row_correlation(a: &nalgebra::RowDVector<f64>, b: &nalgebra::RowDVector<f64>) -> f64 {
    let (ma, mb) = (a.mean(), b.mean());
    let a = a.map(|v| v - ma);
    let b = b.map(|v| v - mb);
    let d = a.norm() * b.norm();
    if d == 0.0 {
        0.0
    } else {
        a.dot(&b) / d
    }
}
