//! Dense linear algebra via LAPACK (system OpenBLAS).
//!
//! Matrices here are column-major, matching LAPACK's native layout; the
//! conversion from the crate's row-major operator tables happens at the call
//! sites. All routines run the standard two-phase workspace query.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::C64;

// LAPACK / BLAS Fortran entry points. `Complex64` is `repr(C)` with the
// layout of `COMPLEX*16`.
extern "C" {
    fn dgesdd_(
        jobz: *const u8,
        m: *const i32,
        n: *const i32,
        a: *mut f64,
        lda: *const i32,
        s: *mut f64,
        u: *mut f64,
        ldu: *const i32,
        vt: *mut f64,
        ldvt: *const i32,
        work: *mut f64,
        lwork: *const i32,
        iwork: *mut i32,
        info: *mut i32,
    );
    fn zgesdd_(
        jobz: *const u8,
        m: *const i32,
        n: *const i32,
        a: *mut Complex64,
        lda: *const i32,
        s: *mut f64,
        u: *mut Complex64,
        ldu: *const i32,
        vt: *mut Complex64,
        ldvt: *const i32,
        work: *mut Complex64,
        lwork: *const i32,
        rwork: *mut f64,
        iwork: *mut i32,
        info: *mut i32,
    );
    fn zheevd_(
        jobz: *const u8,
        uplo: *const u8,
        n: *const i32,
        a: *mut Complex64,
        lda: *const i32,
        w: *mut f64,
        work: *mut Complex64,
        lwork: *const i32,
        rwork: *mut f64,
        lrwork: *const i32,
        iwork: *mut i32,
        liwork: *const i32,
        info: *mut i32,
    );
    fn zgesv_(
        n: *const i32,
        nrhs: *const i32,
        a: *mut Complex64,
        lda: *const i32,
        ipiv: *mut i32,
        b: *mut Complex64,
        ldb: *const i32,
        info: *mut i32,
    );
    fn zgemm_(
        transa: *const u8,
        transb: *const u8,
        m: *const i32,
        n: *const i32,
        k: *const i32,
        alpha: *const Complex64,
        a: *const Complex64,
        lda: *const i32,
        b: *const Complex64,
        ldb: *const i32,
        beta: *const Complex64,
        c: *mut Complex64,
        ldc: *const i32,
    );
}

fn check_info(routine: &str, info: i32) -> Result<()> {
    if info == 0 {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{routine} failed with info={info}")))
    }
}

/// Singular values of a real column-major `m x n` matrix, descending.
/// Consumes the matrix buffer (LAPACK destroys it).
pub fn singular_values_real(mut a: Vec<f64>, m: usize, n: usize) -> Result<Vec<f64>> {
    assert_eq!(a.len(), m * n);
    let (mi, ni) = (m as i32, n as i32);
    let mut s = vec![0.0f64; m.min(n)];
    let mut iwork = vec![0i32; 8 * m.min(n)];
    let mut info = 0i32;
    let jobz = b'N';
    let mut u = [0.0f64];
    let mut vt = [0.0f64];

    let mut query = [0.0f64];
    let lwork_query = -1i32;
    unsafe {
        dgesdd_(
            &jobz, &mi, &ni, a.as_mut_ptr(), &mi, s.as_mut_ptr(), u.as_mut_ptr(), &1,
            vt.as_mut_ptr(), &1, query.as_mut_ptr(), &lwork_query, iwork.as_mut_ptr(), &mut info,
        );
    }
    check_info("dgesdd (workspace query)", info)?;
    let lwork = query[0] as i32;
    let mut work = vec![0.0f64; lwork as usize];
    unsafe {
        dgesdd_(
            &jobz, &mi, &ni, a.as_mut_ptr(), &mi, s.as_mut_ptr(), u.as_mut_ptr(), &1,
            vt.as_mut_ptr(), &1, work.as_mut_ptr(), &lwork, iwork.as_mut_ptr(), &mut info,
        );
    }
    check_info("dgesdd", info)?;
    Ok(s)
}

/// Singular values of a complex column-major `m x n` matrix, descending.
pub fn singular_values_complex(mut a: Vec<C64>, m: usize, n: usize) -> Result<Vec<f64>> {
    assert_eq!(a.len(), m * n);
    let (mi, ni) = (m as i32, n as i32);
    let mn = m.min(n);
    let mut s = vec![0.0f64; mn];
    let mut rwork = vec![0.0f64; (7 * mn).max(1)];
    let mut iwork = vec![0i32; 8 * mn];
    let mut info = 0i32;
    let jobz = b'N';
    let mut u = [C64::default()];
    let mut vt = [C64::default()];

    let mut query = [C64::default()];
    let lwork_query = -1i32;
    unsafe {
        zgesdd_(
            &jobz, &mi, &ni, a.as_mut_ptr(), &mi, s.as_mut_ptr(), u.as_mut_ptr(), &1,
            vt.as_mut_ptr(), &1, query.as_mut_ptr(), &lwork_query, rwork.as_mut_ptr(),
            iwork.as_mut_ptr(), &mut info,
        );
    }
    check_info("zgesdd (workspace query)", info)?;
    let lwork = query[0].re as i32;
    let mut work = vec![C64::default(); lwork as usize];
    unsafe {
        zgesdd_(
            &jobz, &mi, &ni, a.as_mut_ptr(), &mi, s.as_mut_ptr(), u.as_mut_ptr(), &1,
            vt.as_mut_ptr(), &1, work.as_mut_ptr(), &lwork, rwork.as_mut_ptr(),
            iwork.as_mut_ptr(), &mut info,
        );
    }
    check_info("zgesdd", info)?;
    Ok(s)
}

/// Eigendecomposition of a complex Hermitian column-major `n x n` matrix.
/// On return `a` holds the eigenvectors (one per column) and the result is
/// the ascending list of eigenvalues.
pub fn eigh(a: &mut [C64], n: usize) -> Result<Vec<f64>> {
    assert_eq!(a.len(), n * n);
    let ni = n as i32;
    let mut w = vec![0.0f64; n];
    let mut info = 0i32;
    let (jobz, uplo) = (b'V', b'L');

    let mut wq = [C64::default()];
    let mut rq = [0.0f64];
    let mut iq = [0i32];
    let minus_one = -1i32;
    unsafe {
        zheevd_(
            &jobz, &uplo, &ni, a.as_mut_ptr(), &ni, w.as_mut_ptr(), wq.as_mut_ptr(), &minus_one,
            rq.as_mut_ptr(), &minus_one, iq.as_mut_ptr(), &minus_one, &mut info,
        );
    }
    check_info("zheevd (workspace query)", info)?;
    let lwork = wq[0].re as i32;
    let lrwork = rq[0] as i32;
    let liwork = iq[0];
    let mut work = vec![C64::default(); lwork as usize];
    let mut rwork = vec![0.0f64; lrwork as usize];
    let mut iwork = vec![0i32; liwork as usize];
    unsafe {
        zheevd_(
            &jobz, &uplo, &ni, a.as_mut_ptr(), &ni, w.as_mut_ptr(), work.as_mut_ptr(), &lwork,
            rwork.as_mut_ptr(), &lrwork, iwork.as_mut_ptr(), &liwork, &mut info,
        );
    }
    check_info("zheevd", info)?;
    Ok(w)
}

/// Solves `A X = B` in place for a complex column-major `n x n` matrix `A`
/// and `n x nrhs` right-hand side `b`; `b` is overwritten with the solution.
pub fn solve_in_place(mut a: Vec<C64>, b: &mut [C64], n: usize, nrhs: usize) -> Result<()> {
    assert_eq!(a.len(), n * n);
    assert_eq!(b.len(), n * nrhs);
    let (ni, ki) = (n as i32, nrhs as i32);
    let mut ipiv = vec![0i32; n];
    let mut info = 0i32;
    unsafe {
        zgesv_(
            &ni, &ki, a.as_mut_ptr(), &ni, ipiv.as_mut_ptr(), b.as_mut_ptr(), &ni, &mut info,
        );
    }
    check_info("zgesv", info)
}

/// Dense product `C = A B` of column-major matrices (`A`: m x k, `B`: k x n).
pub fn matmul(a: &[C64], b: &[C64], m: usize, k: usize, n: usize) -> Vec<C64> {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    let mut c = vec![C64::default(); m * n];
    let (mi, ni, ki) = (m as i32, n as i32, k as i32);
    let one = C64::new(1.0, 0.0);
    let zero = C64::default();
    let trans = b'N';
    unsafe {
        zgemm_(
            &trans, &trans, &mi, &ni, &ki, &one, a.as_ptr(), &mi, b.as_ptr(), &ki, &zero,
            c.as_mut_ptr(), &mi,
        );
    }
    c
}
