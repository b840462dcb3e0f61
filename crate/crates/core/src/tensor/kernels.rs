//! Straight-line loops behind the graph operations.
//!
//! Every reduction runs in a fixed order so results are bit-reproducible.

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0_f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ta, tb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ta.iter().zip(tb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out = a[m×n] · b[n×p]`, written into a zeroed buffer.
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, n: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    if p == 1 {
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(&a[i * n..(i + 1) * n], b);
        }
        return out;
    }
    for i in 0..m {
        let row = &mut out[i * p..(i + 1) * p];
        for k in 0..n {
            axpy(a[i * n + k], &b[k * p..(k + 1) * p], row);
        }
    }
    out
}

/// `da += dout[m×p] · bᵀ` where `b` is `n×p`.
pub(crate) fn matmul_grad_lhs(dout: &[f64], b: &[f64], da: &mut [f64], m: usize, n: usize, p: usize) {
    if p == 1 {
        for i in 0..m {
            axpy(dout[i], b, &mut da[i * n..(i + 1) * n]);
        }
        return;
    }
    for i in 0..m {
        let drow = &dout[i * p..(i + 1) * p];
        for k in 0..n {
            da[i * n + k] += dot(drow, &b[k * p..(k + 1) * p]);
        }
    }
}

/// `db += aᵀ · dout[m×p]` where `a` is `m×n`.
pub(crate) fn matmul_grad_rhs(a: &[f64], dout: &[f64], db: &mut [f64], m: usize, n: usize, p: usize) {
    if p == 1 {
        for i in 0..m {
            axpy(dout[i], &a[i * n..(i + 1) * n], db);
        }
        return;
    }
    for i in 0..m {
        let drow = &dout[i * p..(i + 1) * p];
        for k in 0..n {
            axpy(a[i * n + k], drow, &mut db[k * p..(k + 1) * p]);
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax.
pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for o in &mut out {
        *o /= sum;
    }
    out
}
