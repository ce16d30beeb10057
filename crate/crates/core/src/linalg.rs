//! Dense complex linear algebra helpers shared by the estimators and the
//! asymptotic solvers.
//!
//! Matrix products go through `matrixmultiply::zgemm`; nalgebra's generic
//! product is several times slower for `Complex64`.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

pub type Cplx = Complex64;
pub type CMatrix = DMatrix<Complex64>;

const ZERO: [f64; 2] = [0.0, 0.0];
const ONE: [f64; 2] = [1.0, 0.0];

/// Real part of the trace.
pub fn trace_re(m: &CMatrix) -> f64 {
    (0..m.nrows().min(m.ncols())).map(|i| m[(i, i)].re).sum()
}

/// Normalized trace `(1/N) tr M` (real part).
pub fn normalized_trace(m: &CMatrix) -> f64 {
    trace_re(m) / m.nrows() as f64
}

pub fn frobenius(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest entrywise modulus of `M - M^H`.
pub fn hermitian_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..=j {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Replace `M` by `(M + M^H) / 2` in place.
pub fn symmetrize(m: &mut CMatrix) {
    let n = m.nrows();
    for j in 0..n {
        m[(j, j)].im = 0.0;
        for i in 0..j {
            let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
    }
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

pub fn from_real(m: &DMatrix<f64>) -> CMatrix {
    m.map(|x| Cplx::new(x, 0.0))
}

/// `A * B` through the packed complex GEMM kernel.
pub fn matmul(a: &CMatrix, b: &CMatrix) -> CMatrix {
    assert_eq!(a.ncols(), b.nrows(), "matmul: inner dimensions differ");
    let (m, k, n) = (a.nrows(), a.ncols(), b.ncols());
    let mut out = CMatrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    // SAFETY: Complex<f64> is #[repr(C)] {re, im}, so a column-major
    // DMatrix<Complex64> has exactly the [f64; 2] layout zgemm expects. All
    // strides below describe the owned buffers and stay in bounds.
    unsafe {
        matrixmultiply::zgemm(
            matrixmultiply::CGemmOption::Standard,
            matrixmultiply::CGemmOption::Standard,
            m,
            k,
            n,
            ONE,
            a.as_ptr() as *const [f64; 2],
            1,
            m as isize,
            b.as_ptr() as *const [f64; 2],
            1,
            k as isize,
            ZERO,
            out.as_mut_ptr() as *mut [f64; 2],
            1,
            m as isize,
        );
    }
    out
}

/// `scale * Y diag(w) Y^H + shift * I`, Hermitian by construction.
///
/// Weights must be nonnegative.
pub fn weighted_gram(y: &CMatrix, weights: &[f64], scale: f64, shift: f64) -> CMatrix {
    let (n_dim, n) = (y.nrows(), y.ncols());
    assert_eq!(weights.len(), n, "weighted_gram: one weight per column");
    let mut b = y.clone();
    for (j, &w) in weights.iter().enumerate() {
        debug_assert!(w >= 0.0, "negative weight {w}");
        let s = (w * scale).sqrt();
        b.column_mut(j).iter_mut().for_each(|z| *z *= s);
    }
    let bc = b.map(|z| z.conj());
    let mut out = CMatrix::zeros(n_dim, n_dim);
    if n_dim > 0 && n > 0 {
        // SAFETY: see `matmul`. The second operand reads conj(B) with
        // transposed strides, i.e. B^H.
        unsafe {
            matrixmultiply::zgemm(
                matrixmultiply::CGemmOption::Standard,
                matrixmultiply::CGemmOption::Standard,
                n_dim,
                n,
                n_dim,
                ONE,
                b.as_ptr() as *const [f64; 2],
                1,
                n_dim as isize,
                bc.as_ptr() as *const [f64; 2],
                n_dim as isize,
                1,
                ZERO,
                out.as_mut_ptr() as *mut [f64; 2],
                1,
                n_dim as isize,
            );
        }
    }
    symmetrize(&mut out);
    if shift != 0.0 {
        for i in 0..n_dim {
            out[(i, i)].re += shift;
        }
    }
    out
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let mut values: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(f64::total_cmp);
    values
}

/// `U diag(f(lambda)) U^H` for a Hermitian eigen-decomposition.
pub fn spectral_function(values: &[f64], vectors: &CMatrix, f: impl Fn(f64) -> f64) -> CMatrix {
    let scaled: Vec<f64> = values.iter().map(|&l| f(l)).collect();
    let mut left = vectors.clone();
    for (j, s) in scaled.iter().enumerate() {
        left.column_mut(j).iter_mut().for_each(|z| *z *= *s);
    }
    let mut out = matmul(&left, &vectors.adjoint());
    symmetrize(&mut out);
    out
}

/// Lower Cholesky factor `L` (column-major, upper triangle zero) of a
/// Hermitian matrix, or `None` unless every pivot is positive and finite.
pub fn cholesky_lower(b: &CMatrix) -> Option<CMatrix> {
    let n = b.nrows();
    let mut a = b.clone();
    {
        let s = a.as_mut_slice();
        for j in 0..n {
            let pivot = s[j * n + j].re;
            if !(pivot > 0.0 && pivot.is_finite()) {
                return None;
            }
            let ljj = pivot.sqrt();
            s[j * n + j] = Cplx::new(ljj, 0.0);
            for z in &mut s[j * n + j + 1..(j + 1) * n] {
                *z /= ljj;
            }
            let (head, tail) = s.split_at_mut((j + 1) * n);
            let lj = &head[j * n..];
            for k in j + 1..n {
                let lkj = lj[k].conj();
                let col = &mut tail[(k - j - 1) * n..(k - j) * n];
                for i in k..n {
                    col[i] -= lj[i] * lkj;
                }
            }
        }
        for j in 0..n {
            for i in 0..j {
                s[j * n + i] = Cplx::new(0.0, 0.0);
            }
        }
    }
    Some(a)
}

/// Solves `L x = b` in place for lower-triangular `L`; returns `|x|^2`.
pub(crate) fn forward_substitute(l: &[Cplx], n: usize, b: &mut [Cplx], first_nonzero: usize) -> f64 {
    let mut energy = 0.0;
    for j in first_nonzero..n {
        let lj = &l[j * n..(j + 1) * n];
        let wj = b[j] / lj[j];
        b[j] = wj;
        energy += wj.norm_sqr();
        for (bi, lij) in b[j + 1..].iter_mut().zip(&lj[j + 1..]) {
            *bi -= lij * wj;
        }
    }
    energy
}

/// Inverse of the Cholesky factor of a Hermitian positive definite matrix,
/// or `None` if the factorization fails.
pub fn cholesky_factor_inverse(b: &CMatrix) -> Option<CMatrix> {
    let n = b.nrows();
    let l = cholesky_lower(b)?;
    let mut inv = CMatrix::zeros(n, n);
    let mut col = vec![Cplx::new(0.0, 0.0); n];
    for k in 0..n {
        col.iter_mut().for_each(|z| *z = Cplx::new(0.0, 0.0));
        col[k] = Cplx::new(1.0, 0.0);
        forward_substitute(l.as_slice(), n, &mut col, k);
        inv.column_mut(k).copy_from_slice(&col);
    }
    Some(inv)
}

/// `Re tr(M_k B^{-1})` for each `M_k`, with `B` Hermitian positive definite.
pub fn inverse_traces(b: &CMatrix, mats: &[&CMatrix]) -> Option<Vec<f64>> {
    let linv = cholesky_factor_inverse(b)?;
    // tr(M B^{-1}) = tr(L^{-1} M L^{-H}) = sum_ij (L^{-1} M)_ij conj(L^{-1})_ij
    Some(
        mats.iter()
            .map(|m| {
                let w = matmul(&linv, m);
                w.iter().zip(linv.iter()).map(|(a, b)| (a * b.conj()).re).sum()
            })
            .collect(),
    )
}

const POWER_MAX_ITERATIONS: usize = 1000;
const POWER_TOLERANCE: f64 = 1e-13;

/// Spectral norm of a Hermitian matrix.
///
/// Power iteration from a fixed start vector; falls back to the full
/// eigensolver when the iteration stalls or does not settle.
pub fn spectral_norm(m: &CMatrix) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    let scale = m.iter().fold(0.0f64, |acc, z| acc.max(z.norm()));
    if scale == 0.0 {
        return 0.0;
    }
    let mut x = CMatrix::from_fn(n, 1, |i, _| Cplx::new(1.0 + 0.37 * ((i * 7919) % 101) as f64 / 101.0, 0.0));
    let nx = frobenius(&x);
    x /= Cplx::new(nx, 0.0);
    let mut estimate = 0.0;
    for _ in 0..POWER_MAX_ITERATIONS {
        let y = m * &x;
        let ny = frobenius(&y);
        if ny <= f64::MIN_POSITIVE * scale {
            break;
        }
        if (ny - estimate).abs() <= POWER_TOLERANCE * ny {
            return ny;
        }
        estimate = ny;
        x = y / Cplx::new(ny, 0.0);
    }
    let values = hermitian_eigenvalues(m);
    values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}
