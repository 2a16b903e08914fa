//! Complex Hermitian linear algebra used by the dereverberation, mask
//! estimation, and beamforming stages.
//!
//! The heavy accumulations (weighted Gram matrices) and solves go through
//! BLAS/LAPACK. Matrices are ndarray row-major; LAPACK is column-major, which
//! for Hermitian inputs is handled by the conjugate-view identity
//! `colmajor(buf) = conj(A)` — factorizations of `conj(A)` carry back to `A`
//! by conjugating results.

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite (leading minor {0})")]
    NotPositiveDefinite(i32),
    #[error("invalid argument {0} to lapack call")]
    BadArgument(i32),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

extern "C" {
    fn openblas_set_num_threads(n: i32);
}

/// Cap the BLAS thread pool. The per-frequency parallelism in this crate is
/// managed by rayon, so pipelines pin BLAS to one thread to avoid
/// oversubscription.
pub fn set_blas_threads(n: usize) {
    unsafe { openblas_set_num_threads(n.max(1) as i32) }
}

pub fn trace(a: ArrayView2<'_, Complex64>) -> Complex64 {
    a.diag().sum()
}

/// In-place `a += amount * I`.
pub fn add_diagonal(a: &mut Array2<Complex64>, amount: f64) {
    for v in a.diag_mut() {
        *v += Complex64::new(amount, 0.0);
    }
}

/// In-place projection onto the Hermitian part, `a = (a + a^H) / 2`.
pub fn hermitize(a: &mut Array2<Complex64>) {
    let n = a.nrows();
    for i in 0..n {
        a[(i, i)] = Complex64::new(a[(i, i)].re, 0.0);
        for j in (i + 1)..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)].conj());
            a[(i, j)] = m;
            a[(j, i)] = m.conj();
        }
    }
}

/// Weighted Gram matrix `sum_t w[t] * y[:,t] y[:,t]^H` for `y` of shape
/// `[dim, frames]`, computed with a rank-k Hermitian update. Weights must be
/// non-negative.
pub fn weighted_gram(y: ArrayView2<'_, Complex64>, w: &[f64]) -> Array2<Complex64> {
    let (dim, frames) = (y.nrows(), y.ncols());
    assert_eq!(frames, w.len(), "one weight per frame");
    let mut scaled = Vec::with_capacity(dim * frames);
    for d in 0..dim {
        for t in 0..frames {
            scaled.push(y[(d, t)] * w[t].sqrt());
        }
    }
    let mut gram = vec![Complex64::new(0.0, 0.0); dim * dim];
    if dim > 0 && frames > 0 {
        unsafe {
            cblas_sys::cblas_zherk(
                cblas_sys::CBLAS_LAYOUT::CblasRowMajor,
                cblas_sys::CBLAS_UPLO::CblasLower,
                cblas_sys::CBLAS_TRANSPOSE::CblasNoTrans,
                dim as i32,
                frames as i32,
                1.0,
                scaled.as_ptr() as *const _,
                frames as i32,
                0.0,
                gram.as_mut_ptr() as *mut _,
                dim as i32,
            );
        }
    }
    let mut out = Array2::from_shape_vec((dim, dim), gram).unwrap();
    // zherk fills the lower triangle only
    for i in 0..dim {
        for j in (i + 1)..dim {
            out[(i, j)] = out[(j, i)].conj();
        }
    }
    out
}

/// Solve `A X = B` for Hermitian positive definite `A` (Cholesky).
pub fn hpd_solve(
    a: &Array2<Complex64>,
    b: &Array2<Complex64>,
) -> Result<Array2<Complex64>, LinalgError> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(LinalgError::DimensionMismatch(format!(
            "a is {}x{}, b has {} rows",
            n,
            a.ncols(),
            b.nrows()
        )));
    }
    let nrhs = b.ncols();
    // row-major slice of Hermitian A read column-major is conj(A); solving
    // conj(A) Y = conj(B) gives Y = conj(X)
    let mut a_buf: Vec<Complex64> = a.iter().cloned().collect();
    let mut b_buf = vec![Complex64::new(0.0, 0.0); n * nrhs];
    for i in 0..n {
        for j in 0..nrhs {
            b_buf[i + j * n] = b[(i, j)].conj();
        }
    }
    let mut info = 0i32;
    unsafe {
        lapack_sys::zposv_(
            &(b'L' as std::ffi::c_char),
            &(n as i32),
            &(nrhs as i32),
            a_buf.as_mut_ptr() as *mut _,
            &(n as i32),
            b_buf.as_mut_ptr() as *mut _,
            &(n as i32),
            &mut info,
        );
    }
    if info < 0 {
        return Err(LinalgError::BadArgument(-info));
    }
    if info > 0 {
        return Err(LinalgError::NotPositiveDefinite(info));
    }
    let mut x = Array2::zeros((n, nrhs));
    for i in 0..n {
        for j in 0..nrhs {
            x[(i, j)] = b_buf[i + j * n].conj();
        }
    }
    Ok(x)
}

/// Inverse and log-determinant of a Hermitian positive definite matrix.
pub fn hpd_inverse_logdet(
    a: &Array2<Complex64>,
) -> Result<(Array2<Complex64>, f64), LinalgError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(LinalgError::DimensionMismatch(format!(
            "expected square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    let mut buf: Vec<Complex64> = a.iter().cloned().collect();
    let mut info = 0i32;
    unsafe {
        lapack_sys::zpotrf_(
            &(b'L' as std::ffi::c_char),
            &(n as i32),
            buf.as_mut_ptr() as *mut _,
            &(n as i32),
            &mut info,
        );
    }
    if info < 0 {
        return Err(LinalgError::BadArgument(-info));
    }
    if info > 0 {
        return Err(LinalgError::NotPositiveDefinite(info));
    }
    let mut logdet = 0.0;
    for i in 0..n {
        logdet += 2.0 * buf[i + i * n].re.ln();
    }
    unsafe {
        lapack_sys::zpotri_(
            &(b'L' as std::ffi::c_char),
            &(n as i32),
            buf.as_mut_ptr() as *mut _,
            &(n as i32),
            &mut info,
        );
    }
    if info != 0 {
        return Err(if info < 0 {
            LinalgError::BadArgument(-info)
        } else {
            LinalgError::NotPositiveDefinite(info)
        });
    }
    // lower triangle of conj(A^-1) in column-major; undo the conjugation
    let mut inv = Array2::zeros((n, n));
    for j in 0..n {
        for i in j..n {
            let v = buf[i + j * n];
            inv[(i, j)] = v.conj();
            inv[(j, i)] = v;
        }
    }
    Ok((inv, logdet))
}
