//! Dense complex linear algebra helpers and the Hermitian eigensolver.

use crate::error::{Error, Result};
use ndarray::{Array2, ShapeBuilder};
use num_complex::Complex64;
use std::os::raw::{c_char, c_int};

pub type C64 = Complex64;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Hermitian eigendecomposition: eigenvalues ascending, eigenvectors as columns.
pub fn eigh(a: &Array2<C64>) -> Result<(Vec<f64>, Array2<C64>)> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "eigh needs a square matrix");
    let asym = hermitian_defect(a);
    let scale = a.iter().fold(1.0f64, |m, z| m.max(z.norm()));
    if asym > 1e-10 * scale {
        return Err(Error::NotHermitian(asym));
    }
    if n == 0 {
        return Ok((vec![], Array2::zeros((0, 0))));
    }
    let mut m = Array2::<C64>::zeros((n, n).f());
    m.assign(a);
    let mut w = vec![0.0f64; n];
    let jobz = b'V' as c_char;
    let uplo = b'L' as c_char;
    let nn = n as c_int;
    let mut info: c_int = 0;
    let mut work = vec![C64::new(0.0, 0.0)];
    let mut rwork = vec![0.0f64];
    let mut iwork = vec![0 as c_int];
    let mut lwork: c_int = -1;
    let mut lrwork: c_int = -1;
    let mut liwork: c_int = -1;
    let ptr = m.as_slice_memory_order_mut().expect("contiguous").as_mut_ptr();
    // SAFETY: buffers are sized per the LAPACK workspace query; Complex64 is repr(C) {re, im}.
    unsafe {
        lapack_sys::zheevd_(
            &jobz,
            &uplo,
            &nn,
            ptr as *mut _,
            &nn,
            w.as_mut_ptr(),
            work.as_mut_ptr() as *mut _,
            &lwork,
            rwork.as_mut_ptr(),
            &lrwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Eigensolve(info));
    }
    lwork = work[0].re.ceil() as c_int;
    lrwork = rwork[0].ceil() as c_int;
    liwork = iwork[0];
    work = vec![C64::new(0.0, 0.0); lwork.max(1) as usize];
    rwork = vec![0.0; lrwork.max(1) as usize];
    iwork = vec![0; liwork.max(1) as usize];
    unsafe {
        lapack_sys::zheevd_(
            &jobz,
            &uplo,
            &nn,
            ptr as *mut _,
            &nn,
            w.as_mut_ptr(),
            work.as_mut_ptr() as *mut _,
            &lwork,
            rwork.as_mut_ptr(),
            &lrwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Eigensolve(info));
    }
    let mut v = Array2::<C64>::zeros((n, n));
    v.assign(&m);
    Ok((w, v))
}

/// max |A - A^dagger| over entries.
pub fn hermitian_defect(a: &Array2<C64>) -> f64 {
    let n = a.nrows();
    let mut d = 0.0f64;
    for i in 0..n {
        for j in 0..=i {
            d = d.max((a[[i, j]] - a[[j, i]].conj()).norm());
        }
    }
    d
}

pub fn adjoint(a: &Array2<C64>) -> Array2<C64> {
    a.t().mapv(|z| z.conj())
}

pub fn matvec(a: &Array2<C64>, x: &[C64]) -> Vec<C64> {
    let (r, c) = a.dim();
    assert_eq!(c, x.len());
    let mut y = vec![C64::new(0.0, 0.0); r];
    for (i, row) in a.outer_iter().enumerate() {
        let mut s = C64::new(0.0, 0.0);
        for (aij, xj) in row.iter().zip(x) {
            s += aij * xj;
        }
        y[i] = s;
    }
    y
}

/// A^dagger x without forming the adjoint.
pub fn adj_matvec(a: &Array2<C64>, x: &[C64]) -> Vec<C64> {
    let (r, c) = a.dim();
    assert_eq!(r, x.len());
    let mut y = vec![C64::new(0.0, 0.0); c];
    for (row, xi) in a.outer_iter().zip(x) {
        for (yj, aij) in y.iter_mut().zip(row.iter()) {
            *yj += aij.conj() * xi;
        }
    }
    y
}

pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn sub(a: &[C64], b: &[C64]) -> Vec<C64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn scale(a: &mut [C64], s: C64) {
    for z in a {
        *z *= s;
    }
}

/// Normalizes in place; returns the original norm.
pub fn normalize(a: &mut [C64]) -> f64 {
    let n = norm(a);
    if n > 0.0 {
        scale(a, C64::new(1.0 / n, 0.0));
    }
    n
}

/// exp(-i t H) for a Hermitian H given its eigendecomposition.
pub fn unitary_from_eig(w: &[f64], v: &Array2<C64>, t: f64) -> Array2<C64> {
    let n = w.len();
    let mut u = Array2::<C64>::zeros((n, n));
    for k in 0..n {
        let ph = C64::from_polar(1.0, -w[k] * t);
        for i in 0..n {
            let vik = v[[i, k]] * ph;
            for j in 0..n {
                u[[i, j]] += vik * v[[j, k]].conj();
            }
        }
    }
    u
}

/// exp(-i t H) for a small Hermitian matrix.
pub fn expm_hermitian(h: &Array2<C64>, t: f64) -> Result<Array2<C64>> {
    let (w, v) = eigh(h)?;
    Ok(unitary_from_eig(&w, &v, t))
}

/// Spectral-norm of a small dense matrix via its Hermitian square.
pub fn spectral_norm(a: &Array2<C64>) -> Result<f64> {
    let g = adjoint(a).dot(a);
    let (w, _) = eigh(&g)?;
    Ok(w.last().copied().unwrap_or(0.0).max(0.0).sqrt())
}

pub fn max_abs(a: &Array2<C64>) -> f64 {
    a.iter().fold(0.0f64, |m, z| m.max(z.norm()))
}
