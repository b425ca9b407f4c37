//! Sparse decomposition over a learned dictionary: OMP coding, KSVD
//! dictionary learning and the rank-one power-iteration SVD it relies on.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::{par, Error, KeyedPrng, Result};

const NORM_EPS: f64 = 1e-12;

pub(crate) fn gaussian(rng: &mut KeyedPrng) -> f64 {
    StandardNormal.sample(rng)
}

/// Unit-norm atoms stored as the columns of an `n² x k` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    atoms: DMatrix<f64>,
}

impl Dictionary {
    /// Normalizes every column. Fails on an empty matrix or a zero column.
    pub fn new(mut atoms: DMatrix<f64>) -> Result<Self> {
        if atoms.ncols() == 0 || atoms.nrows() == 0 {
            return Err(Error::InvalidParameter("dictionary needs at least one atom".into()));
        }
        for mut col in atoms.column_iter_mut() {
            let norm = col.norm();
            if norm <= NORM_EPS {
                return Err(Error::DegenerateData("zero dictionary atom".into()));
            }
            col /= norm;
        }
        Ok(Self { atoms })
    }

    pub fn atom_dim(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn gram(&self) -> DMatrix<f64> {
        self.atoms.tr_mul(&self.atoms)
    }

    /// `SDICT1` key file: magic line, ASCII `n2 k` line, then the matrix in
    /// row-major order as little-endian f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (n2, k) = self.atoms.shape();
        let mut out = format!("SDICT1\n{n2} {k}\n").into_bytes();
        out.reserve(n2 * k * 8);
        for r in 0..n2 {
            for c in 0..k {
                out.extend_from_slice(&self.atoms[(r, c)].to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (dims, body) = split_header(bytes, b"SDICT1\n", 2)?;
        let (n2, k) = (dims[0], dims[1]);
        let values = read_f64s(body, n2 * k)?;
        let atoms = DMatrix::from_row_slice(n2, k, &values);
        if atoms.ncols() == 0 || atoms.nrows() == 0 {
            return Err(Error::KeyFormat("empty dictionary".into()));
        }
        Ok(Self { atoms })
    }
}

/// Parses `magic`, then one ASCII line of `count` integers. Returns them with
/// the remaining body.
pub(crate) fn split_header<'a>(bytes: &'a [u8], magic: &[u8], count: usize) -> Result<(Vec<usize>, &'a [u8])> {
    let rest = bytes
        .strip_prefix(magic)
        .ok_or_else(|| Error::KeyFormat(format!("missing {:?} magic", String::from_utf8_lossy(magic).trim())))?;
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::KeyFormat("missing dimension line".into()))?;
    let line = std::str::from_utf8(&rest[..nl]).map_err(|_| Error::KeyFormat("non-ASCII dimension line".into()))?;
    let dims: Vec<usize> = line
        .split_ascii_whitespace()
        .map(|t| t.parse().map_err(|_| Error::KeyFormat(format!("bad dimension {t:?}"))))
        .collect::<Result<_>>()?;
    if dims.len() != count {
        return Err(Error::KeyFormat(format!("expected {count} dimensions, found {}", dims.len())));
    }
    Ok((dims, &rest[nl + 1..]))
}

pub(crate) fn read_f64s(body: &[u8], count: usize) -> Result<Vec<f64>> {
    if body.len() != count * 8 {
        return Err(Error::KeyFormat(format!("expected {} payload bytes, found {}", count * 8, body.len())));
    }
    Ok(body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

/// Coefficients of a set of signals over a dictionary.
///
/// `supports[j]` lists, in ascending atom order, the atoms selected for
/// column `j`. Payload carriers are exactly these support entries, which is
/// why the support is kept alongside the dense matrix: a carried coefficient
/// may legitimately round to zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseCode {
    pub coeffs: DMatrix<f64>,
    pub supports: Vec<Vec<usize>>,
}

impl SparseCode {
    pub fn zeros(k: usize, cols: usize) -> Self {
        Self {
            coeffs: DMatrix::zeros(k, cols),
            supports: vec![Vec::new(); cols],
        }
    }

    pub fn atom_count(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn cols(&self) -> usize {
        self.coeffs.ncols()
    }

    pub fn nnz(&self) -> usize {
        self.supports.iter().map(Vec::len).sum()
    }

    /// Support entries as `(atom, column)`, column-major with atoms ascending.
    pub fn carriers(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.supports
            .iter()
            .enumerate()
            .flat_map(|(col, s)| s.iter().map(move |&atom| (atom, col)))
    }

    fn set_column(&mut self, col: usize, coded: &OmpResult) {
        self.coeffs.column_mut(col).copy_from(&coded.coeffs);
        let mut support = coded.support.clone();
        support.sort_unstable();
        self.supports[col] = support;
    }

    /// `SCODE1` file: magic line, ASCII `k J` line, then per column a u32 LE
    /// support length followed by `(u32 LE atom, f64 LE value)` pairs.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("SCODE1\n{} {}\n", self.atom_count(), self.cols()).into_bytes();
        for (col, support) in self.supports.iter().enumerate() {
            out.extend_from_slice(&(support.len() as u32).to_le_bytes());
            for &atom in support {
                out.extend_from_slice(&(atom as u32).to_le_bytes());
                out.extend_from_slice(&self.coeffs[(atom, col)].to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (dims, mut body) = split_header(bytes, b"SCODE1\n", 2)?;
        let (k, cols) = (dims[0], dims[1]);
        let mut code = SparseCode::zeros(k, cols);
        let mut take = |n: usize| -> Result<&[u8]> {
            if body.len() < n {
                return Err(Error::KeyFormat("truncated sparse code".into()));
            }
            let (head, tail) = body.split_at(n);
            body = tail;
            Ok(head)
        };
        for col in 0..cols {
            let len = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
            let mut support = Vec::with_capacity(len);
            for _ in 0..len {
                let atom = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
                let value = f64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
                if atom >= k || support.last().is_some_and(|&prev| prev >= atom) {
                    return Err(Error::KeyFormat("support not strictly ascending within range".into()));
                }
                code.coeffs[(atom, col)] = value;
                support.push(atom);
            }
            code.supports[col] = support;
        }
        if !body.is_empty() {
            return Err(Error::KeyFormat("trailing bytes after sparse code".into()));
        }
        Ok(code)
    }
}

/// Result of coding one signal.
#[derive(Clone, Debug, PartialEq)]
pub struct OmpResult {
    /// Dense coefficients, length `k`.
    pub coeffs: DVector<f64>,
    /// Atoms in selection order.
    pub support: Vec<usize>,
    pub residual_norm: f64,
}

fn check_omp_args(dict: &Dictionary, len: usize, t0: usize, residual_tol: f64) -> Result<()> {
    if len != dict.atom_dim() {
        return Err(Error::DimensionMismatch(format!(
            "signal of length {len} for dictionary atoms of length {}",
            dict.atom_dim()
        )));
    }
    if t0 == 0 {
        return Err(Error::InvalidParameter("sparsity must be at least 1".into()));
    }
    if !(residual_tol >= 0.0) {
        return Err(Error::InvalidParameter("residual tolerance must be nonnegative".into()));
    }
    Ok(())
}

/// Orthogonal matching pursuit.
///
/// Each step selects the unused atom with the largest absolute correlation
/// against the residual (lowest index on ties), refits all selected
/// coefficients by least squares, and stops at `t0` atoms or once the
/// residual norm drops to `residual_tol`.
pub fn omp(dict: &Dictionary, x: &DVector<f64>, t0: usize, residual_tol: f64) -> Result<OmpResult> {
    check_omp_args(dict, x.len(), t0, residual_tol)?;
    Ok(omp_with_gram(dict.atoms(), &dict.gram(), x, t0, residual_tol))
}

fn solve_normal_equations(gram: &DMatrix<f64>, support: &[usize], rhs: &DVector<f64>) -> DVector<f64> {
    let s = support.len();
    let mut g = DMatrix::from_fn(s, s, |a, b| gram[(support[a], support[b])]);
    let b = DVector::from_fn(s, |a, _| rhs[support[a]]);
    if let Some(chol) = Cholesky::new(g.clone()) {
        return chol.solve(&b);
    }
    for d in 0..s {
        g[(d, d)] += 1e-12;
    }
    match Cholesky::new(g.clone()) {
        Some(chol) => chol.solve(&b),
        None => g.lu().solve(&b).unwrap_or_else(|| DVector::zeros(s)),
    }
}

pub(crate) fn omp_with_gram(
    atoms: &DMatrix<f64>,
    gram: &DMatrix<f64>,
    x: &DVector<f64>,
    t0: usize,
    residual_tol: f64,
) -> OmpResult {
    let k = atoms.ncols();
    let t0 = t0.min(k).min(atoms.nrows().max(1));
    let x_norm = x.norm();
    let mut coeffs = DVector::zeros(k);
    let mut support: Vec<usize> = Vec::with_capacity(t0);
    let mut selected = vec![false; k];
    let mut residual = x.clone();
    let mut residual_norm = x_norm;
    if residual_norm <= residual_tol {
        return OmpResult { coeffs, support, residual_norm };
    }
    let dtx = atoms.tr_mul(x);
    let mut values = DVector::zeros(0);
    while support.len() < t0 {
        let corr = atoms.tr_mul(&residual);
        let mut best: Option<(usize, f64)> = None;
        for (j, c) in corr.iter().enumerate() {
            if selected[j] {
                continue;
            }
            let mag = c.abs();
            if best.is_none_or(|(_, m)| mag > m) {
                best = Some((j, mag));
            }
        }
        let Some((j, mag)) = best else { break };
        // Residual already orthogonal to every remaining atom.
        if mag <= 1e-12 * x_norm {
            break;
        }
        selected[j] = true;
        support.push(j);
        values = solve_normal_equations(gram, &support, &dtx);
        residual.copy_from(x);
        for (a, &atom) in support.iter().enumerate() {
            residual.axpy(-values[a], &atoms.column(atom), 1.0);
        }
        residual_norm = residual.norm();
        if residual_norm <= residual_tol {
            break;
        }
    }
    for (a, &atom) in support.iter().enumerate() {
        coeffs[atom] = values[a];
    }
    OmpResult { coeffs, support, residual_norm }
}

/// Codes every column of `y`, in parallel over columns.
pub fn omp_batch(dict: &Dictionary, y: &DMatrix<f64>, t0: usize, residual_tol: f64) -> Result<SparseCode> {
    check_omp_args(dict, y.nrows(), t0, residual_tol)?;
    let gram = dict.gram();
    let coded = par::map_range(y.ncols(), |j| {
        omp_with_gram(dict.atoms(), &gram, &y.column(j).into_owned(), t0, residual_tol)
    });
    let mut code = SparseCode::zeros(dict.atom_count(), y.ncols());
    for (j, c) in coded.iter().enumerate() {
        code.set_column(j, c);
    }
    Ok(code)
}

/// `D · Ψ`.
pub fn reconstruct(dict: &Dictionary, code: &SparseCode) -> Result<DMatrix<f64>> {
    if code.atom_count() != dict.atom_count() {
        return Err(Error::DimensionMismatch(format!(
            "code over {} atoms for a dictionary of {}",
            code.atom_count(),
            dict.atom_count()
        )));
    }
    Ok(dict.atoms() * &code.coeffs)
}

/// `‖Y − DΨ‖_F²`.
pub fn objective(y: &DMatrix<f64>, dict: &Dictionary, code: &SparseCode) -> Result<f64> {
    Ok((y - reconstruct(dict, code)?).norm_squared())
}

/// Dominant singular triplet.
#[derive(Clone, Debug)]
pub struct Rank1 {
    pub u: DVector<f64>,
    pub sigma: f64,
    pub v: DVector<f64>,
}

/// Dominant singular triplet of `m` by power iteration on `MᵀM`, started
/// from a seeded Gaussian vector.
pub fn rank1_svd(m: &DMatrix<f64>, iters: usize, seed: u64) -> Result<Rank1> {
    if m.iter().all(|&v| v == 0.0) || m.is_empty() {
        return Err(Error::DegenerateData("rank-1 SVD of a zero matrix".into()));
    }
    let mut rng = KeyedPrng::new(seed);
    let v0 = DVector::from_fn(m.ncols(), |_, _| gaussian(&mut rng));
    Ok(power_iterate(m, v0, iters, &mut rng))
}

fn power_iterate(m: &DMatrix<f64>, mut v: DVector<f64>, iters: usize, rng: &mut KeyedPrng) -> Rank1 {
    let mut norm = v.norm();
    // A start vector in the null space would stall; reseed until it is not.
    while norm <= NORM_EPS || (m * &v).norm() <= NORM_EPS * norm {
        v = DVector::from_fn(m.ncols(), |_, _| gaussian(rng));
        norm = v.norm();
    }
    v /= norm;
    for _ in 0..iters {
        let mut next = m.tr_mul(&(m * &v));
        let n = next.norm();
        if n <= NORM_EPS {
            break;
        }
        next /= n;
        let delta = (&next - &v).norm();
        v = next;
        if delta <= 1e-15 {
            break;
        }
    }
    let mv = m * &v;
    let sigma = mv.norm();
    let u = mv / sigma;
    Rank1 { u, sigma, v }
}

/// Output of dictionary learning.
#[derive(Clone, Debug)]
pub struct KsvdOutput {
    pub dictionary: Dictionary,
    /// Plain OMP code of the data over the final dictionary.
    pub code: SparseCode,
    /// `‖Y − DΨ‖_F²` for the returned pair.
    pub objective: f64,
    /// Objective after initialization and after each sweep.
    pub history: Vec<f64>,
}

fn init_dictionary(y: &DMatrix<f64>, k: usize, rng: &mut KeyedPrng) -> DMatrix<f64> {
    let j = y.ncols();
    let mut order: Vec<usize> = (0..j).collect();
    let mut atoms: Vec<DVector<f64>> = Vec::with_capacity(k);
    for i in 0..j {
        if atoms.len() == k {
            break;
        }
        let pick = i + rng.below((j - i) as u64) as usize;
        order.swap(i, pick);
        let col = y.column(order[i]);
        let norm = col.norm();
        if norm <= NORM_EPS {
            continue;
        }
        let atom = col / norm;
        if atoms.iter().any(|a| a.dot(&atom).abs() > 1.0 - 1e-9) {
            continue;
        }
        atoms.push(atom);
    }
    while atoms.len() < k {
        let g = DVector::from_fn(y.nrows(), |_, _| gaussian(rng));
        let norm = g.norm();
        atoms.push(g / norm);
    }
    DMatrix::from_columns(&atoms)
}

/// KSVD dictionary learning.
///
/// Each sweep sparse-codes all columns, then updates atoms in index order:
/// atom `j` and its coefficient row become the dominant singular pair of the
/// residual restricted to the columns that use `j`. Re-coding keeps a
/// column's previous code when OMP does not improve on it, so the objective
/// history never increases.
pub fn ksvd(y: &DMatrix<f64>, k: usize, t0: usize, iters: usize, seed: u64) -> Result<KsvdOutput> {
    let (n2, j) = y.shape();
    if k == 0 || k > j {
        return Err(Error::InvalidParameter(format!("atom count {k} must be in 1..={j}")));
    }
    if t0 == 0 || t0 > k.min(n2) {
        return Err(Error::InvalidParameter(format!("sparsity {t0} must be in 1..={}", k.min(n2))));
    }
    let first = y[(0, 0)];
    if y.iter().all(|&v| v == first) {
        return Err(Error::DegenerateData("all-constant training data".into()));
    }
    let mut rng = KeyedPrng::new(seed);
    let init = Dictionary::new(init_dictionary(y, k, &mut rng))?;
    ksvd_from(y, init, t0, iters, &mut rng)
}

pub(crate) fn ksvd_from(
    y: &DMatrix<f64>,
    init: Dictionary,
    t0: usize,
    iters: usize,
    rng: &mut KeyedPrng,
) -> Result<KsvdOutput> {
    let (n2, j) = y.shape();
    let k = init.atom_count();
    let mut dict = init;
    let mut code = omp_batch(&dict, y, t0, 0.0)?;
    let mut residual = y - reconstruct(&dict, &code)?;
    let mut history = vec![residual.norm_squared()];

    for sweep in 0..iters {
        if sweep > 0 {
            let gram = dict.gram();
            let recoded = par::map_range(j, |col| {
                omp_with_gram(dict.atoms(), &gram, &y.column(col).into_owned(), t0, 0.0)
            });
            for (col, c) in recoded.iter().enumerate() {
                if c.residual_norm.powi(2) <= residual.column(col).norm_squared() {
                    code.set_column(col, c);
                    residual.set_column(col, &(y.column(col) - dict.atoms() * &c.coeffs));
                }
            }
        }

        let mut users: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (col, support) in code.supports.iter().enumerate() {
            for &atom in support {
                users[atom].push(col);
            }
        }

        let mut atoms = dict.atoms.clone();
        let mut replaced = vec![false; j];
        for atom in 0..k {
            let cols = &users[atom];
            if cols.is_empty() {
                // Unused atom: swap in the worst-represented column.
                let worst = (0..j)
                    .filter(|&c| !replaced[c])
                    .map(|c| (c, residual.column(c).norm()))
                    .fold(None, |best: Option<(usize, f64)>, (c, n)| match best {
                        Some((_, bn)) if bn >= n => best,
                        _ => Some((c, n)),
                    });
                if let Some((c, n)) = worst {
                    if n > NORM_EPS {
                        replaced[c] = true;
                        atoms.set_column(atom, &(residual.column(c) / n));
                    }
                }
                continue;
            }
            let d = atoms.column(atom).into_owned();
            let mut e = DMatrix::zeros(n2, cols.len());
            for (i, &c) in cols.iter().enumerate() {
                e.set_column(i, &(residual.column(c) + &d * code.coeffs[(atom, c)]));
            }
            if e.iter().all(|&v| v == 0.0) {
                continue;
            }
            let start = e.tr_mul(&d);
            let r1 = power_iterate(&e, start, 200, rng);
            atoms.set_column(atom, &r1.u);
            for (i, &c) in cols.iter().enumerate() {
                let value = r1.sigma * r1.v[i];
                code.coeffs[(atom, c)] = value;
                residual.set_column(c, &(e.column(i) - &r1.u * value));
            }
        }
        dict = Dictionary::new(atoms)?;
        history.push(residual.norm_squared());
    }

    let code = omp_batch(&dict, y, t0, 0.0)?;
    let objective = objective(y, &dict, &code)?;
    Ok(KsvdOutput {
        dictionary: dict,
        code,
        objective,
        history,
    })
}
