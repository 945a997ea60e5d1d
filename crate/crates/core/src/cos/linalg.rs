use crate::scalar::Scalar;

/// Lower-triangular `L` with `L L^T = a` (row-major `d x d`), or `None`
/// when `a` is not positive definite.
pub fn cholesky<S: Scalar>(a: &[S], d: usize) -> Option<Vec<S>> {
    let mut l = vec![S::zero(); d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(s > S::zero()) {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

/// Solves `L y = b`.
pub(crate) fn forward_substitute<S: Scalar>(l: &[S], d: usize, b: &[S]) -> Vec<S> {
    let mut y = vec![S::zero(); d];
    for i in 0..d {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * d + k] * y[k];
        }
        y[i] = s / l[i * d + i];
    }
    y
}

/// Solves `a x = b` for symmetric positive definite `a`.
pub fn solve_spd<S: Scalar>(a: &[S], d: usize, b: &[S]) -> Option<Vec<S>> {
    let l = cholesky(a, d)?;
    let y = forward_substitute(&l, d, b);
    let mut x = vec![S::zero(); d];
    for i in (0..d).rev() {
        let mut s = y[i];
        for k in i + 1..d {
            s -= l[k * d + i] * x[k];
        }
        x[i] = s / l[i * d + i];
    }
    Some(x)
}
