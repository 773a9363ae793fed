//! Small dense complex matrices and density operators.
//!
//! Everything here is sized for at most a few two-qubit registers, so storage
//! is a flat row-major `Vec<Complex64>` and every operation is the obvious loop.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

/// Tolerance for structural checks (completeness, idempotence, involution, PSD).
pub const STRUCT_TOL: f64 = 1e-10;
/// Tolerance for algebraic identities (hermiticity, trace normalisation).
pub const ALG_TOL: f64 = 1e-12;

const MAX_DIM: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QmathError {
    #[error("unknown Pauli label {0:?}")]
    UnknownPauli(String),
    #[error("observable is not an involution (max |O^2 - I| = {0:e})")]
    InvalidObservable(f64),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("matrix is not Hermitian (max |M - M^dag| = {0:e})")]
    NotHermitian(f64),
    #[error("matrix is not positive semidefinite")]
    NotPsd,
    #[error("trace {0} differs from 1")]
    BadTrace(f64),
    #[error("dimension {0} exceeds the supported maximum of {MAX_DIM}")]
    TooLarge(usize),
    #[error("entry count {entries} does not match {rows}x{cols}")]
    BadShape { rows: usize, cols: usize, entries: usize },
}

#[derive(Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            let row: Vec<String> = (0..self.cols)
                .map(|c| {
                    let z = self[(r, c)];
                    format!("{:+.4}{:+.4}i", z.re, z.im)
                })
                .collect();
            writeln!(f, "  {}", row.join(" "))?;
        }
        write!(f, "]")
    }
}

impl CMatrix {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self, QmathError> {
        if rows == 0 || cols == 0 || rows * cols != data.len() {
            return Err(QmathError::BadShape { rows, cols, entries: data.len() });
        }
        if rows > MAX_DIM || cols > MAX_DIM {
            return Err(QmathError::TooLarge(rows.max(cols)));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_real(rows: usize, cols: usize, data: &[f64]) -> Result<Self, QmathError> {
        Self::from_vec(rows, cols, data.iter().map(|&x| Complex64::new(x, 0.0)).collect())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![Complex64::new(0.0, 0.0); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &x) in d.iter().enumerate() {
            m[(i, i)] = Complex64::new(x, 0.0);
        }
        m
    }

    /// `|v><v|` for a column vector `v`.
    pub fn outer(v: &[Complex64]) -> Self {
        let n = v.len();
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = v[i] * v[j].conj();
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.data
    }

    pub fn scale(&self, s: f64) -> Self {
        self.scale_c(Complex64::new(s, 0.0))
    }

    pub fn scale_c(&self, s: Complex64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }

    pub fn adjoint(&self) -> Self {
        let mut m = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                m[(c, r)] = self[(r, c)].conj();
            }
        }
        m
    }

    pub fn transpose(&self) -> Self {
        let mut m = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                m[(c, r)] = self[(r, c)];
            }
        }
        m
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Largest entrywise modulus of `self - other`; infinite on shape mismatch.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        if self.rows != other.rows || self.cols != other.cols {
            return f64::INFINITY;
        }
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    pub fn hermiticity_defect(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        self.max_abs_diff(&self.adjoint())
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermiticity_defect() <= ALG_TOL
    }

    /// Positive semidefiniteness up to `tol`, decided by attempting a Cholesky
    /// factorisation of `self + tol*I`.
    pub fn is_psd(&self, tol: f64) -> bool {
        if !self.is_square() || self.hermiticity_defect() > STRUCT_TOL {
            return false;
        }
        let n = self.rows;
        let mut a = self.clone();
        for i in 0..n {
            a[(i, i)] += tol;
        }
        let mut l = Self::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)].re;
            for k in 0..j {
                d -= l[(j, k)].norm_sqr();
            }
            if d < 0.0 {
                return false;
            }
            let ljj = d.sqrt();
            l[(j, j)] = Complex64::new(ljj, 0.0);
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = if ljj > 0.0 { s / ljj } else { Complex64::new(0.0, 0.0) };
            }
        }
        true
    }

    /// Tr[self * other] without forming the product.
    pub fn trace_product(&self, other: &Self) -> Result<Complex64, QmathError> {
        if self.cols != other.rows || self.rows != other.cols {
            return Err(QmathError::DimMismatch { expected: self.cols, found: other.rows });
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..self.rows {
            for j in 0..self.cols {
                acc += self[(i, j)] * other[(j, i)];
            }
        }
        Ok(acc)
    }

    pub fn matmul(&self, other: &Self) -> Result<Self, QmathError> {
        if self.cols != other.rows {
            return Err(QmathError::DimMismatch { expected: self.cols, found: other.rows });
        }
        let mut m = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..other.cols {
                    m.data[i * other.cols + j] += a * other[(k, j)];
                }
            }
        }
        Ok(m)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(Complex64, Complex64) -> Complex64) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "shape mismatch");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = Complex64;
    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        &mut self.data[r * self.cols + c]
    }
}

// Operator impls panic on shape mismatch; use `matmul` for a checked product.
impl Add for &CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &CMatrix) -> CMatrix {
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl Sub for &CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &CMatrix) -> CMatrix {
        self.zip_with(rhs, |a, b| a - b)
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        self.matmul(rhs).expect("shape mismatch in matrix product")
    }
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let rows = a.rows * b.rows;
    let cols = a.cols * b.cols;
    let mut m = CMatrix::zeros(rows, cols);
    for ar in 0..a.rows {
        for ac in 0..a.cols {
            let x = a[(ar, ac)];
            for br in 0..b.rows {
                for bc in 0..b.cols {
                    m[(ar * b.rows + br, ac * b.cols + bc)] = x * b[(br, bc)];
                }
            }
        }
    }
    m
}

pub fn kron_all(factors: &[&CMatrix]) -> CMatrix {
    factors.iter().skip(1).fold(factors[0].clone(), |acc, f| kron(&acc, f))
}

pub fn pauli(name: &str) -> Result<CMatrix, QmathError> {
    let o = Complex64::new(0.0, 0.0);
    let l = Complex64::new(1.0, 0.0);
    let i = Complex64::new(0.0, 1.0);
    let data = match name {
        "I" => vec![l, o, o, l],
        "X" => vec![o, l, l, o],
        "Y" => vec![o, -i, i, o],
        "Z" => vec![l, o, o, -l],
        other => return Err(QmathError::UnknownPauli(other.to_string())),
    };
    CMatrix::from_vec(2, 2, data)
}

/// Tensor product of Paulis from a word such as `"XZ"`.
pub fn pauli_word(word: &str) -> Result<CMatrix, QmathError> {
    let mats = word.chars().map(|c| pauli(&c.to_string())).collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&CMatrix> = mats.iter().collect();
    if refs.is_empty() {
        return Err(QmathError::UnknownPauli(String::new()));
    }
    Ok(kron_all(&refs))
}

/// Spectral projectors of a Hermitian involution, `(I + O)/2` for +1 then `(I - O)/2` for -1.
pub fn eig_projectors(observable: &CMatrix) -> Result<Vec<(f64, CMatrix)>, QmathError> {
    let defect = observable.hermiticity_defect();
    if defect > STRUCT_TOL {
        return Err(QmathError::NotHermitian(defect));
    }
    let id = CMatrix::identity(observable.rows());
    let sq = observable * observable;
    let dev = sq.max_abs_diff(&id);
    if dev > STRUCT_TOL {
        return Err(QmathError::InvalidObservable(dev));
    }
    let plus = (&id + observable).scale(0.5);
    let minus = (&id - observable).scale(0.5);
    Ok(vec![(1.0, plus), (-1.0, minus)])
}

/// A density operator on a register made of subsystems with the given dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct QState {
    dims: Vec<usize>,
    density: CMatrix,
}

impl QState {
    pub fn new(density: CMatrix, dims: Vec<usize>) -> Result<Self, QmathError> {
        let total: usize = dims.iter().product();
        if !density.is_square() || density.rows() != total {
            return Err(QmathError::DimMismatch { expected: total, found: density.rows() });
        }
        let defect = density.hermiticity_defect();
        if defect > ALG_TOL {
            return Err(QmathError::NotHermitian(defect));
        }
        let tr = density.trace();
        if (tr.re - 1.0).abs() > ALG_TOL || tr.im.abs() > ALG_TOL {
            return Err(QmathError::BadTrace(tr.re));
        }
        if !density.is_psd(STRUCT_TOL) {
            return Err(QmathError::NotPsd);
        }
        Ok(Self { dims, density })
    }

    pub fn pure(amplitudes: &[Complex64], dims: Vec<usize>) -> Result<Self, QmathError> {
        let norm: f64 = amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let v: Vec<Complex64> = amplitudes.iter().map(|z| z / norm).collect();
        Self::new(CMatrix::outer(&v), dims)
    }

    pub fn maximally_mixed(dims: Vec<usize>) -> Self {
        let d: usize = dims.iter().product();
        Self { dims, density: CMatrix::identity(d).scale(1.0 / d as f64) }
    }

    pub fn dim(&self) -> usize {
        self.density.rows()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn density(&self) -> &CMatrix {
        &self.density
    }

    /// Reduced state on the subsystems listed in `keep` (in their original order).
    pub fn partial_trace(&self, keep: &[usize]) -> Result<QState, QmathError> {
        let density = partial_trace(&self.density, &self.dims, keep)?;
        let dims = keep_sorted(keep).iter().map(|&k| self.dims[k]).collect();
        Ok(QState { dims, density })
    }

    /// Replace the marginal on `subsystems` by white noise with weight `p`:
    /// rho -> (1 - p) rho + p Tr_S[rho] (x) I_S / d_S.
    pub fn depolarize(&self, subsystems: &[usize], p: f64) -> Result<QState, QmathError> {
        for &s in subsystems {
            if s >= self.dims.len() {
                return Err(QmathError::DimMismatch { expected: self.dims.len(), found: s });
            }
        }
        let n = self.dims.len();
        let rest: Vec<usize> = (0..n).filter(|i| !subsystems.contains(i)).collect();
        let d_s: usize = subsystems.iter().map(|&s| self.dims[s]).product();
        let reduced = if rest.is_empty() {
            CMatrix::identity(1).scale(self.density.trace().re)
        } else {
            partial_trace(&self.density, &self.dims, &rest)?
        };
        let d = self.dim();
        let mut noise = CMatrix::zeros(d, d);
        let digits_of = |idx: usize| to_digits(idx, &self.dims);
        for i in 0..d {
            let di = digits_of(i);
            for j in 0..d {
                let dj = digits_of(j);
                if subsystems.iter().any(|&s| di[s] != dj[s]) {
                    continue;
                }
                let ri = from_digits(rest.iter().map(|&k| di[k]), rest.iter().map(|&k| self.dims[k]));
                let rj = from_digits(rest.iter().map(|&k| dj[k]), rest.iter().map(|&k| self.dims[k]));
                noise[(i, j)] = reduced[(ri, rj)] / d_s as f64;
            }
        }
        let density = &self.density.scale(1.0 - p) + &noise.scale(p);
        Ok(QState { dims: self.dims.clone(), density })
    }
}

fn keep_sorted(keep: &[usize]) -> Vec<usize> {
    let mut k = keep.to_vec();
    k.sort_unstable();
    k.dedup();
    k
}

fn to_digits(mut idx: usize, dims: &[usize]) -> Vec<usize> {
    let mut out = vec![0; dims.len()];
    for (slot, &d) in out.iter_mut().zip(dims).rev() {
        *slot = idx % d;
        idx /= d;
    }
    out
}

fn from_digits(digits: impl Iterator<Item = usize>, dims: impl Iterator<Item = usize>) -> usize {
    digits.zip(dims).fold(0, |acc, (x, d)| acc * d + x)
}

/// Partial trace of `rho` (on subsystems with dimensions `dims`) keeping `keep`.
pub fn partial_trace(rho: &CMatrix, dims: &[usize], keep: &[usize]) -> Result<CMatrix, QmathError> {
    let total: usize = dims.iter().product();
    if !rho.is_square() || rho.rows() != total {
        return Err(QmathError::DimMismatch { expected: total, found: rho.rows() });
    }
    let keep = keep_sorted(keep);
    if let Some(&bad) = keep.iter().find(|&&k| k >= dims.len()) {
        return Err(QmathError::DimMismatch { expected: dims.len(), found: bad });
    }
    let d_keep: usize = keep.iter().map(|&k| dims[k]).product();
    let mut out = CMatrix::zeros(d_keep, d_keep);
    for i in 0..total {
        let di = to_digits(i, dims);
        for j in 0..total {
            let dj = to_digits(j, dims);
            let traced_equal = (0..dims.len()).filter(|s| !keep.contains(s)).all(|s| di[s] == dj[s]);
            if !traced_equal {
                continue;
            }
            let ri = from_digits(keep.iter().map(|&k| di[k]), keep.iter().map(|&k| dims[k]));
            let rj = from_digits(keep.iter().map(|&k| dj[k]), keep.iter().map(|&k| dims[k]));
            out[(ri, rj)] += rho[(i, j)];
        }
    }
    Ok(out)
}

/// Tr[rho * op] for Hermitian `op`; the imaginary residue is checked and dropped.
pub fn expectation(state: &QState, op: &CMatrix) -> Result<f64, QmathError> {
    if op.rows() != state.dim() || !op.is_square() {
        return Err(QmathError::DimMismatch { expected: state.dim(), found: op.rows() });
    }
    let defect = op.hermiticity_defect();
    if defect > STRUCT_TOL {
        return Err(QmathError::NotHermitian(defect));
    }
    let v = state.density.trace_product(op)?;
    debug_assert!(v.im.abs() <= STRUCT_TOL, "imaginary residue {}", v.im);
    Ok(v.re)
}

/// Haar-ish random unitary from Gram-Schmidt on a complex Gaussian matrix.
pub fn random_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMatrix {
    let gauss = |rng: &mut R| {
        // Box-Muller; adequate for test fixtures.
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    };
    let mut cols: Vec<Vec<Complex64>> = Vec::with_capacity(dim);
    while cols.len() < dim {
        let mut v: Vec<Complex64> = (0..dim).map(|_| Complex64::new(gauss(rng), gauss(rng))).collect();
        for c in &cols {
            let proj: Complex64 = c.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
            for (vi, ci) in v.iter_mut().zip(c) {
                *vi -= proj * ci;
            }
        }
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm > 1e-8 {
            cols.push(v.into_iter().map(|z| z / norm).collect());
        }
    }
    let mut u = CMatrix::zeros(dim, dim);
    for (j, c) in cols.iter().enumerate() {
        for (i, z) in c.iter().enumerate() {
            u[(i, j)] = *z;
        }
    }
    u
}

/// Random effect operator `U diag(lambda) U^dag` with eigenvalues uniform in [0, 1].
pub fn random_effect<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMatrix {
    let u = random_unitary(dim, rng);
    let lambdas: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
    let m = &(&u * &CMatrix::diag(&lambdas)) * &u.adjoint();
    // Symmetrise away rounding so the result is Hermitian to machine precision.
    (&m + &m.adjoint()).scale(0.5)
}
