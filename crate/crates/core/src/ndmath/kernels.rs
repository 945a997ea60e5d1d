//! Slice-level numeric kernels shared by the tape and tape-free inference.

use crate::scalar::Scalar;

/// `[m,k] x [k,n]`, i-k-j loop order.
pub fn matmul<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == S::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `acc[m,k] += g[m,n] * b[k,n]^T`
pub fn matmul_nt_acc<S: Scalar>(g: &[S], b: &[S], acc: &mut [S], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let d: S = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
            acc[i * k + p] += d;
        }
    }
}

/// `acc[k,n] += a[m,k]^T * g[m,n]`
pub fn matmul_tn_acc<S: Scalar>(a: &[S], g: &[S], acc: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == S::zero() {
                continue;
            }
            let arow = &mut acc[p * n..(p + 1) * n];
            for (o, &gv) in arow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

#[inline]
pub fn relu<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        x
    } else {
        S::zero()
    }
}

#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

pub fn softmax_rows<S: Scalar>(v: &[S], cols: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(v.len());
    for row in v.chunks(cols) {
        let mx = row.iter().copied().fold(S::neg_infinity(), S::max);
        let start = out.len();
        let mut z = S::zero();
        for &x in row {
            let e = (x - mx).exp();
            z += e;
            out.push(e);
        }
        out[start..].iter_mut().for_each(|e| *e /= z);
    }
    out
}

pub fn log_softmax_rows<S: Scalar>(v: &[S], cols: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(v.len());
    for row in v.chunks(cols) {
        let mx = row.iter().copied().fold(S::neg_infinity(), S::max);
        let lse = mx + row.iter().map(|&x| (x - mx).exp()).sum::<S>().ln();
        out.extend(row.iter().map(|&x| x - lse));
    }
    out
}

/// `x[rows, in] * w[in, out] + b[out]`, optionally rectified.
pub fn affine<S: Scalar>(x: &[S], rows: usize, w: &[S], b: &[S], relu_out: bool) -> Vec<S> {
    let n = b.len();
    let k = w.len() / n;
    let mut out = matmul(x, w, rows, k, n);
    for row in out.chunks_mut(n) {
        for (o, &bv) in row.iter_mut().zip(b) {
            *o += bv;
            if relu_out {
                *o = relu(*o);
            }
        }
    }
    out
}
