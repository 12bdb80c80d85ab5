//! Dense kernels on row-major slices.

use super::{c, Scalar};

pub(crate) const LN_EPS: f64 = 1e-5;

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let chunks = n / 8;
    for i in 0..chunks {
        let (x, y) = (&a[i * 8..i * 8 + 8], &b[i * 8..i * 8 + 8]);
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = (acc[0] + acc[4]) + (acc[1] + acc[5]) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for i in chunks * 8..n {
        s += a[i] * b[i];
    }
    s
}

#[inline]
pub(crate) fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub(crate) fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// `out[n×m] = a[n×k] · b[k×m] (+ bias)`.
pub(crate) fn matmul<T: Scalar>(a: &[T], b: &[T], bias: Option<&[T]>, n: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        if let Some(bias) = bias {
            row.copy_from_slice(bias);
        }
        let ai = &a[i * k..(i + 1) * k];
        for (kk, &x) in ai.iter().enumerate() {
            if x != T::zero() {
                axpy(x, &b[kk * m..(kk + 1) * m], row);
            }
        }
    }
    out
}

/// Accumulates the gradients of `out = a · b + bias` given `dout`.
pub(crate) fn matmul_bwd<T: Scalar>(
    a: &[T],
    b: &[T],
    dout: &[T],
    n: usize,
    k: usize,
    m: usize,
    da: Option<&mut [T]>,
    db: &mut [T],
    dbias: Option<&mut [T]>,
) {
    for i in 0..n {
        let g = &dout[i * m..(i + 1) * m];
        let ai = &a[i * k..(i + 1) * k];
        for (kk, &x) in ai.iter().enumerate() {
            if x != T::zero() {
                axpy(x, g, &mut db[kk * m..(kk + 1) * m]);
            }
        }
    }
    if let Some(da) = da {
        for i in 0..n {
            let g = &dout[i * m..(i + 1) * m];
            for kk in 0..k {
                da[i * k + kk] += dot(g, &b[kk * m..(kk + 1) * m]);
            }
        }
    }
    if let Some(dbias) = dbias {
        for i in 0..n {
            add_into(dbias, &dout[i * m..(i + 1) * m]);
        }
    }
}

pub(crate) struct LnStats<T> {
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

pub(crate) fn layernorm<T: Scalar>(x: &[T], g: &[T], b: &[T], n: usize, d: usize) -> (Vec<T>, LnStats<T>) {
    let mut out = vec![T::zero(); n * d];
    let mut mean = Vec::with_capacity(n);
    let mut rstd = Vec::with_capacity(n);
    let dn: T = c(d as f64);
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mu = row.iter().copied().sum::<T>() / dn;
        let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / dn;
        let r = T::one() / (var + c(LN_EPS)).sqrt();
        for j in 0..d {
            out[i * d + j] = (row[j] - mu) * r * g[j] + b[j];
        }
        mean.push(mu);
        rstd.push(r);
    }
    (out, LnStats { mean, rstd })
}

/// Accumulates into `dx`, `dg`, `db`.
pub(crate) fn layernorm_bwd<T: Scalar>(
    x: &[T],
    g: &[T],
    st: &LnStats<T>,
    dy: &[T],
    n: usize,
    d: usize,
    dx: &mut [T],
    dg: &mut [T],
    db: &mut [T],
) {
    let dn: T = c(d as f64);
    let mut xhat = vec![T::zero(); d];
    let mut dxhat = vec![T::zero(); d];
    for i in 0..n {
        let (mu, r) = (st.mean[i], st.rstd[i]);
        for j in 0..d {
            xhat[j] = (x[i * d + j] - mu) * r;
            let gy = dy[i * d + j];
            dxhat[j] = gy * g[j];
            dg[j] += gy * xhat[j];
            db[j] += gy;
        }
        let m1 = dxhat.iter().copied().sum::<T>() / dn;
        let m2 = dot(&dxhat, &xhat) / dn;
        for j in 0..d {
            dx[i * d + j] += r * (dxhat[j] - m1 - xhat[j] * m2);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044_715;

#[inline]
pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let half: T = c(0.5);
    half * x * (T::one() + (c::<T>(GELU_C) * (x + c::<T>(GELU_A) * x * x * x)).tanh())
}

#[inline]
pub(crate) fn gelu_grad<T: Scalar>(x: T) -> T {
    let half: T = c(0.5);
    let t = (c::<T>(GELU_C) * (x + c::<T>(GELU_A) * x * x * x)).tanh();
    half * (T::one() + t)
        + half * x * (T::one() - t * t) * c::<T>(GELU_C) * (T::one() + c::<T>(3.0 * GELU_A) * x * x)
}

/// In-place softmax; returns log-sum-exp.
pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) -> T {
    let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - mx).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
    mx + s.ln()
}

/// Multi-head attention on strided buffers. `probs` receives `h × rq × rk`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention<T: Scalar>(
    q: (&[T], usize, usize),
    k: (&[T], usize, usize),
    v: (&[T], usize, usize),
    rq: usize,
    rk: usize,
    causal: bool,
    n_heads: usize,
    dh: usize,
) -> (Vec<T>, Vec<T>) {
    let d = n_heads * dh;
    let scale: T = c(1.0 / (dh as f64).sqrt());
    let mut probs = vec![T::zero(); n_heads * rq * rk];
    let mut ctx = vec![T::zero(); rq * d];
    for h in 0..n_heads {
        for i in 0..rq {
            let qi = &q.0[i * q.1 + q.2 + h * dh..][..dh];
            let kmax = if causal { i + 1 } else { rk };
            let row = &mut probs[(h * rq + i) * rk..][..rk];
            for j in 0..kmax {
                row[j] = dot(qi, &k.0[j * k.1 + k.2 + h * dh..][..dh]) * scale;
            }
            softmax_in_place(&mut row[..kmax]);
            let out = &mut ctx[i * d + h * dh..][..dh];
            for j in 0..kmax {
                axpy(row[j], &v.0[j * v.1 + v.2 + h * dh..][..dh], out);
            }
        }
    }
    (probs, ctx)
}

/// Gradients of [`attention`] into contiguous `dq (rq×d)`, `dk`, `dv (rk×d)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_bwd<T: Scalar>(
    q: (&[T], usize, usize),
    k: (&[T], usize, usize),
    v: (&[T], usize, usize),
    probs: &[T],
    dctx: &[T],
    rq: usize,
    rk: usize,
    causal: bool,
    n_heads: usize,
    dh: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let d = n_heads * dh;
    let scale: T = c(1.0 / (dh as f64).sqrt());
    let mut dq = vec![T::zero(); rq * d];
    let mut dk = vec![T::zero(); rk * d];
    let mut dv = vec![T::zero(); rk * d];
    let mut dp = vec![T::zero(); rk];
    for h in 0..n_heads {
        for i in 0..rq {
            let kmax = if causal { i + 1 } else { rk };
            let p = &probs[(h * rq + i) * rk..][..kmax];
            let g = &dctx[i * d + h * dh..][..dh];
            for j in 0..kmax {
                dp[j] = dot(g, &v.0[j * v.1 + v.2 + h * dh..][..dh]);
                axpy(p[j], g, &mut dv[j * d + h * dh..][..dh]);
            }
            let inner = dot(&p[..kmax], &dp[..kmax]);
            let qi = &q.0[i * q.1 + q.2 + h * dh..][..dh];
            for j in 0..kmax {
                let ds = p[j] * (dp[j] - inner) * scale;
                if ds != T::zero() {
                    axpy(ds, &k.0[j * k.1 + k.2 + h * dh..][..dh], &mut dq[i * d + h * dh..][..dh]);
                    axpy(ds, qi, &mut dk[j * d + h * dh..][..dh]);
                }
            }
        }
    }
    (dq, dk, dv)
}
