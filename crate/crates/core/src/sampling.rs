//! Covariance models and synthetic, possibly contaminated, sample sets.
//!
//! A dataset holds `n` columns in `C^N`: first the legitimate samples
//! `C^{1/2} x_i`, then the outliers `D^{1/2} x'_i`. Legitimate and outlying
//! draws come from two separate ChaCha streams of the same seed, so changing
//! the contamination level never reshuffles the legitimate columns.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, CMatrix, Cplx};
use crate::matrix_io::{self, MatrixIoError};

const HERMITIAN_TOLERANCE: f64 = 1e-12;
const NEGATIVE_EIGENVALUE_TOLERANCE: f64 = 1e-10;
const TRACE_TOLERANCE: f64 = 1e-12;

const LEGIT_STREAM: u64 = 0;
const OUTLIER_STREAM: u64 = 1;

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("matrix must be square and nonempty, got {0}x{1}")]
    Shape(usize, usize),
    #[error("matrix is not Hermitian (defect {0:.3e})")]
    NotHermitian(f64),
    #[error("matrix is not positive semidefinite (eigenvalue {0:.3e})")]
    NotPsd(f64),
    #[error("matrix is singular")]
    Singular,
    #[error("matrix has zero trace")]
    ZeroTrace,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Io(#[from] MatrixIoError),
}

/// A Hermitian positive semidefinite matrix with its spectrum cached.
#[derive(Clone, Debug)]
pub struct CovarianceModel {
    matrix: CMatrix,
    eigenvalues: Vec<f64>,
    eigenvectors: CMatrix,
    sqrt: CMatrix,
    trace_normalized: bool,
}

impl CovarianceModel {
    /// Validates and caches the eigendecomposition. Eigenvalues within
    /// `-1e-10` (relative to the largest) of zero are clamped to zero.
    pub fn new(matrix: CMatrix) -> Result<Self, SamplingError> {
        let (r, c) = matrix.shape();
        if r != c || r == 0 {
            return Err(SamplingError::Shape(r, c));
        }
        let scale = matrix.iter().fold(1.0f64, |acc, z| acc.max(z.norm()));
        let defect = linalg::hermitian_defect(&matrix);
        if defect > HERMITIAN_TOLERANCE * scale {
            return Err(SamplingError::NotHermitian(defect));
        }
        let mut matrix = matrix;
        linalg::symmetrize(&mut matrix);
        let (mut eigenvalues, eigenvectors) = linalg::hermitian_eigen(&matrix);
        let top = eigenvalues.last().copied().unwrap_or(0.0).abs().max(f64::MIN_POSITIVE);
        for l in eigenvalues.iter_mut() {
            if *l < 0.0 {
                if *l < -NEGATIVE_EIGENVALUE_TOLERANCE * top.max(1.0) {
                    return Err(SamplingError::NotPsd(*l));
                }
                *l = 0.0;
            }
        }
        let sqrt = linalg::spectral_function(&eigenvalues, &eigenvectors, f64::sqrt);
        let trace_normalized = (linalg::normalized_trace(&matrix) - 1.0).abs() <= TRACE_TOLERANCE;
        Ok(Self { matrix, eigenvalues, eigenvectors, sqrt, trace_normalized })
    }

    pub fn from_real(matrix: &DMatrix<f64>) -> Result<Self, SamplingError> {
        Self::new(linalg::from_real(matrix))
    }

    /// `[C]_ij = b^|i - j|`.
    pub fn toeplitz(dim: usize, b: f64) -> Result<Self, SamplingError> {
        if dim == 0 {
            return Err(SamplingError::Shape(0, 0));
        }
        if !(0.0..1.0).contains(&b) {
            return Err(SamplingError::Parameter(format!("Toeplitz coefficient {b} must lie in [0, 1)")));
        }
        let m = DMatrix::from_fn(dim, dim, |i, j| b.powi(i.abs_diff(j) as i32));
        Self::from_real(&m)
    }

    pub fn identity(dim: usize) -> Result<Self, SamplingError> {
        Self::toeplitz(dim, 0.0)
    }

    pub fn diagonal(values: &[f64]) -> Result<Self, SamplingError> {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(values));
        Self::from_real(&m)
    }

    /// Reads a square matrix file (see [`crate::matrix_io`]).
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, SamplingError> {
        Self::new(matrix_io::read_matrix(reader)?)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    /// Eigenvalues in ascending order, clamped at zero.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &CMatrix {
        &self.eigenvectors
    }

    pub fn is_trace_normalized(&self) -> bool {
        self.trace_normalized
    }

    /// `(1/N) sum_i lambda_i^k`, the k-th moment of the empirical spectrum.
    pub fn moment(&self, k: i32) -> f64 {
        self.eigenvalues.iter().map(|l| l.powi(k)).sum::<f64>() / self.dim() as f64
    }

    pub fn m1(&self) -> f64 {
        linalg::normalized_trace(&self.matrix)
    }

    /// `(1/N) tr C^2`, computed from the entries.
    pub fn m2(&self) -> f64 {
        linalg::frobenius(&self.matrix).powi(2) / self.dim() as f64
    }

    pub fn sqrt(&self) -> &CMatrix {
        &self.sqrt
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        *self.eigenvalues.last().expect("nonempty spectrum")
    }

    pub fn inverse(&self) -> Result<CMatrix, SamplingError> {
        if self.min_eigenvalue() <= 0.0 {
            return Err(SamplingError::Singular);
        }
        Ok(linalg::spectral_function(&self.eigenvalues, &self.eigenvectors, |l| 1.0 / l))
    }

    /// `C / ((1/N) tr C)`.
    pub fn normalized(&self) -> Result<Self, SamplingError> {
        let tr = self.m1();
        if tr <= 0.0 {
            return Err(SamplingError::ZeroTrace);
        }
        let mut out = self.clone();
        let s = Cplx::new(1.0 / tr, 0.0);
        out.matrix *= s;
        out.eigenvalues.iter_mut().for_each(|l| *l /= tr);
        out.sqrt *= Cplx::new(1.0 / tr.sqrt(), 0.0);
        out.trace_normalized = true;
        Ok(out)
    }

    /// `(1/N) tr(C^{-1} D)`.
    pub fn trace_ratio(&self, other: &CovarianceModel) -> Result<f64, SamplingError> {
        if self.dim() != other.dim() {
            return Err(SamplingError::DimensionMismatch(self.dim(), other.dim()));
        }
        let inv = self.inverse()?;
        let prod = linalg::matmul(&inv, other.matrix());
        Ok(linalg::normalized_trace(&prod))
    }
}

/// `C^{1/2}` of a Hermitian positive semidefinite matrix.
pub fn matrix_sqrt(m: &CMatrix) -> Result<CMatrix, SamplingError> {
    Ok(CovarianceModel::new(m.clone())?.sqrt.clone())
}

/// Entry distribution of the latent vectors `x_i`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarField {
    /// Circular complex Gaussian `CN(0, 1)`.
    #[default]
    Complex,
    /// Real standard Gaussian, stored with zero imaginary part.
    Real,
}

/// `N x n` samples ordered `[legitimate | outliers]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: CMatrix,
    n_outlier: usize,
    seed: u64,
}

/// Number of outlying columns for contamination level `eps`: `floor(eps n)`.
///
/// A relative slack of `1e-9` keeps products such as `0.15 * 200` from
/// rounding down a whole sample.
pub fn outlier_count(n: usize, eps: f64) -> usize {
    let raw = eps * n as f64;
    (raw + 1e-9 * raw.max(1.0)).floor() as usize
}

fn latent(rng: &mut ChaCha20Rng, dim: usize, cols: usize, field: ScalarField) -> CMatrix {
    let mut x = CMatrix::zeros(dim, cols);
    let h = std::f64::consts::FRAC_1_SQRT_2;
    for j in 0..cols {
        for i in 0..dim {
            x[(i, j)] = match field {
                ScalarField::Complex => {
                    let a: f64 = rng.sample(StandardNormal);
                    let b: f64 = rng.sample(StandardNormal);
                    Cplx::new(a * h, b * h)
                }
                ScalarField::Real => Cplx::new(rng.sample(StandardNormal), 0.0),
            };
        }
    }
    x
}

fn stream(seed: u64, id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// `n` samples: `n - floor(eps n)` from `C`, then `floor(eps n)` from `D`.
pub fn sample_contaminated(
    c: &CovarianceModel,
    d: &CovarianceModel,
    n: usize,
    eps: f64,
    seed: u64,
    field: ScalarField,
) -> Result<Dataset, SamplingError> {
    if c.dim() != d.dim() {
        return Err(SamplingError::DimensionMismatch(c.dim(), d.dim()));
    }
    if n == 0 {
        return Err(SamplingError::Parameter("sample count must be positive".into()));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(SamplingError::Parameter(format!("contamination level {eps} must lie in [0, 1)")));
    }
    let dim = c.dim();
    let n_outlier = outlier_count(n, eps);
    let n_legit = n - n_outlier;
    let legit = linalg::matmul(c.sqrt(), &latent(&mut stream(seed, LEGIT_STREAM), dim, n_legit, field));
    let mut samples = CMatrix::zeros(dim, n);
    samples.columns_mut(0, n_legit).copy_from(&legit);
    if n_outlier > 0 {
        let out = linalg::matmul(d.sqrt(), &latent(&mut stream(seed, OUTLIER_STREAM), dim, n_outlier, field));
        samples.columns_mut(n_legit, n_outlier).copy_from(&out);
    }
    Ok(Dataset { samples, n_outlier, seed })
}

pub fn sample_clean(c: &CovarianceModel, n: usize, seed: u64, field: ScalarField) -> Result<Dataset, SamplingError> {
    sample_contaminated(c, c, n, 0.0, seed, field)
}

const DATASET_HEADER: &str = "N,n,n_outlier,seed";

impl Dataset {
    pub fn new(samples: CMatrix, n_outlier: usize, seed: u64) -> Result<Self, SamplingError> {
        let (dim, n) = samples.shape();
        if dim == 0 || n == 0 {
            return Err(SamplingError::Shape(dim, n));
        }
        if n_outlier > n {
            return Err(SamplingError::Parameter(format!("{n_outlier} outliers exceed {n} samples")));
        }
        Ok(Self { samples, n_outlier, seed })
    }

    /// All columns legitimate, seed 0.
    pub fn from_samples(samples: CMatrix) -> Result<Self, SamplingError> {
        Self::new(samples, 0, 0)
    }

    pub fn samples(&self) -> &CMatrix {
        &self.samples
    }

    pub fn dim(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.ncols() == 0
    }

    pub fn n_legit(&self) -> usize {
        self.len() - self.n_outlier
    }

    pub fn n_outlier(&self) -> usize {
        self.n_outlier
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `c_N = N / n`.
    pub fn aspect_ratio(&self) -> f64 {
        self.dim() as f64 / self.len() as f64
    }

    /// Writes the header `N,n,n_outlier,seed`, its values, then one line per
    /// sample (column-major order).
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{DATASET_HEADER}")?;
        writeln!(w, "{},{},{},{}", self.dim(), self.len(), self.n_outlier, self.seed)?;
        matrix_io::write_matrix(w, &self.samples.transpose())
    }

    /// Reads either a dataset dump produced by [`Dataset::write_csv`] or a
    /// bare matrix file with one variable per line and one sample per column.
    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self, SamplingError> {
        let mut lines = reader.lines().enumerate().filter(|(_, l)| !matches!(l, Ok(s) if matrix_io::is_skippable(s)));
        let Some((first_idx, first)) = lines.next() else {
            return Err(matrix_io::parse_error(0, "empty input").into());
        };
        let first = first.map_err(MatrixIoError::from)?;
        if first.trim() != DATASET_HEADER {
            let rest = std::iter::once(Ok(first))
                .chain(lines.map(|(_, l)| l))
                .collect::<Result<Vec<_>, _>>()
                .map_err(MatrixIoError::from)?;
            // Keep line numbers honest by padding with the skipped prefix.
            let padded = "\n".repeat(first_idx) + &rest.join("\n");
            let m = matrix_io::read_matrix(padded.as_bytes())?;
            return Self::from_samples(m);
        }
        let (meta_idx, meta) = lines.next().ok_or_else(|| matrix_io::parse_error(first_idx + 2, "missing metadata line"))?;
        let meta = meta.map_err(MatrixIoError::from)?;
        let fields: Vec<&str> = meta.split(',').map(str::trim).collect();
        let bad_meta = || matrix_io::parse_error(meta_idx + 1, "expected N,n,n_outlier,seed as nonnegative integers");
        if fields.len() != 4 {
            return Err(bad_meta().into());
        }
        let mut vals = [0u64; 4];
        for (v, f) in vals.iter_mut().zip(&fields) {
            *v = f.parse().map_err(|_| bad_meta())?;
        }
        let (dim, n, n_outlier, seed) = (vals[0] as usize, vals[1] as usize, vals[2] as usize, vals[3]);
        let mut samples = CMatrix::zeros(dim, n);
        let mut col = 0;
        for (idx, line) in lines {
            let line = line.map_err(MatrixIoError::from)?;
            let row = matrix_io::parse_row(&line, idx + 1)?;
            if row.len() != dim {
                return Err(matrix_io::parse_error(idx + 1, format!("expected {dim} entries, found {}", row.len())).into());
            }
            if col >= n {
                return Err(matrix_io::parse_error(idx + 1, format!("more than {n} sample lines")).into());
            }
            for (i, z) in row.into_iter().enumerate() {
                samples[(i, col)] = z;
            }
            col += 1;
        }
        if col != n {
            return Err(matrix_io::parse_error(0, format!("expected {n} sample lines, found {col}")).into());
        }
        Self::new(samples, n_outlier, seed)
    }
}
