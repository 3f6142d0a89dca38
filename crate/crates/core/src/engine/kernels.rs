//! Slice-level forward and backward kernels shared by the tape.

use super::tensor::Scalar;

/// `c[m×n] (+)= a[m×k] · b[k×n]`.
pub fn matmul_into<F: Scalar>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize, accumulate: bool) {
    let beta = if accumulate { F::one() } else { F::zero() };
    F::gemm(
        m,
        k,
        n,
        F::one(),
        a,
        (k as isize, 1),
        b,
        (n as isize, 1),
        beta,
        c,
        (n as isize, 1),
    );
}

/// `c[m×n] (+)= a[m×k] · b[n×k]ᵀ`.
pub fn matmul_bt_into<F: Scalar>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize, accumulate: bool) {
    let beta = if accumulate { F::one() } else { F::zero() };
    F::gemm(
        m,
        k,
        n,
        F::one(),
        a,
        (k as isize, 1),
        b,
        (1, k as isize),
        beta,
        c,
        (n as isize, 1),
    );
}

/// `c[k×n] (+)= a[m×k]ᵀ · b[m×n]`.
pub fn matmul_at_into<F: Scalar>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize, accumulate: bool) {
    let beta = if accumulate { F::one() } else { F::zero() };
    F::gemm(
        k,
        m,
        n,
        F::one(),
        a,
        (1, k as isize),
        b,
        (n as isize, 1),
        beta,
        c,
        (n as isize, 1),
    );
}

/// Numerically stable softmax of one row, written into `out`.
pub fn softmax_row<F: Scalar>(x: &[F], out: &mut [F]) {
    let max = x.iter().copied().fold(F::neg_infinity(), F::max);
    let mut total = F::zero();
    for (o, &v) in out.iter_mut().zip(x) {
        let e = (v - max).exp();
        *o = e;
        total += e;
    }
    let inv = F::one() / total;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// tanh approximation of GELU.
#[inline]
pub fn gelu<F: Scalar>(x: F) -> F {
    let c = F::from_f64(GELU_C);
    let a = F::from_f64(GELU_A);
    let half = F::from_f64(0.5);
    half * x * (F::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad<F: Scalar>(x: F) -> F {
    let c = F::from_f64(GELU_C);
    let a = F::from_f64(GELU_A);
    let half = F::from_f64(0.5);
    let three = F::from_f64(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let du = c * (F::one() + three * a * x * x);
    half * (F::one() + t) + half * x * (F::one() - t * t) * du
}

/// Per-row layer norm. Returns `(mean, rstd)` per row for the backward pass.
pub fn layer_norm_forward<F: Scalar>(
    x: &[F],
    gain: &[F],
    bias: &[F],
    eps: F,
    cols: usize,
    out: &mut [F],
) -> (Vec<F>, Vec<F>) {
    let rows = x.len() / cols;
    let mut means = Vec::with_capacity(rows);
    let mut rstds = Vec::with_capacity(rows);
    let n = F::from_f64(cols as f64);
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mean = row.iter().copied().sum::<F>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
        let rstd = F::one() / (var + eps).sqrt();
        let o = &mut out[r * cols..(r + 1) * cols];
        for j in 0..cols {
            o[j] = (row[j] - mean) * rstd * gain[j] + bias[j];
        }
        means.push(mean);
        rstds.push(rstd);
    }
    (means, rstds)
}

#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward<F: Scalar>(
    x: &[F],
    gain: &[F],
    means: &[F],
    rstds: &[F],
    dy: &[F],
    cols: usize,
    dx: Option<&mut [F]>,
    dgain: Option<&mut [F]>,
    dbias: Option<&mut [F]>,
) {
    let rows = x.len() / cols;
    let n = F::from_f64(cols as f64);
    if let Some(dg) = dgain {
        for r in 0..rows {
            let (mean, rstd) = (means[r], rstds[r]);
            for j in 0..cols {
                dg[j] += dy[r * cols + j] * (x[r * cols + j] - mean) * rstd;
            }
        }
    }
    if let Some(db) = dbias {
        for r in 0..rows {
            for j in 0..cols {
                db[j] += dy[r * cols + j];
            }
        }
    }
    if let Some(dx) = dx {
        let mut dxhat = vec![F::zero(); cols];
        for r in 0..rows {
            let (mean, rstd) = (means[r], rstds[r]);
            let row = &x[r * cols..(r + 1) * cols];
            let g = &dy[r * cols..(r + 1) * cols];
            let mut mean_d = F::zero();
            let mut mean_dx = F::zero();
            for j in 0..cols {
                dxhat[j] = g[j] * gain[j];
                let xhat = (row[j] - mean) * rstd;
                mean_d += dxhat[j];
                mean_dx += dxhat[j] * xhat;
            }
            mean_d /= n;
            mean_dx /= n;
            let out = &mut dx[r * cols..(r + 1) * cols];
            for j in 0..cols {
                let xhat = (row[j] - mean) * rstd;
                out[j] += rstd * (dxhat[j] - mean_d - xhat * mean_dx);
            }
        }
    }
}

/// Geometry of a fused multi-head causal attention call over `[batch*seq, heads*head_dim]` inputs.
#[derive(Clone, Copy, Debug)]
pub struct AttnShape {
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
    pub head_dim: usize,
}

impl AttnShape {
    fn width(&self) -> usize {
        self.heads * self.head_dim
    }

    fn block(&self, b: usize, h: usize) -> usize {
        b * self.seq * self.width() + h * self.head_dim
    }

    fn probs_offset(&self, b: usize, h: usize) -> usize {
        (b * self.heads + h) * self.seq * self.seq
    }
}

/// Causal scaled dot-product attention. Returns the attention probabilities
/// `[batch, heads, seq, seq]` (zero above the diagonal).
pub fn attention_forward<F: Scalar>(q: &[F], k: &[F], v: &[F], shape: AttnShape, out: &mut [F]) -> Vec<F> {
    let AttnShape { batch, seq, heads, head_dim } = shape;
    let w = shape.width() as isize;
    let scale = F::one() / F::from_f64(head_dim as f64).sqrt();
    let mut probs = vec![F::zero(); batch * heads * seq * seq];
    let mut scores = vec![F::zero(); seq * seq];
    for b in 0..batch {
        for h in 0..heads {
            let off = shape.block(b, h);
            // scores = Q_h K_hᵀ
            F::gemm(
                seq,
                head_dim,
                seq,
                scale,
                &q[off..],
                (w, 1),
                &k[off..],
                (1, w),
                F::zero(),
                &mut scores,
                (seq as isize, 1),
            );
            let p = &mut probs[shape.probs_offset(b, h)..][..seq * seq];
            for i in 0..seq {
                let row = &scores[i * seq..i * seq + i + 1];
                softmax_row(row, &mut p[i * seq..i * seq + i + 1]);
            }
            // out_h = P V_h
            F::gemm(
                seq,
                seq,
                head_dim,
                F::one(),
                p,
                (seq as isize, 1),
                &v[off..],
                (w, 1),
                F::zero(),
                &mut out[off..],
                (w, 1),
            );
        }
    }
    probs
}

#[allow(clippy::too_many_arguments)]
pub fn attention_backward<F: Scalar>(
    q: &[F],
    k: &[F],
    v: &[F],
    probs: &[F],
    dout: &[F],
    shape: AttnShape,
    dq: &mut [F],
    dk: &mut [F],
    dv: &mut [F],
) {
    let AttnShape { batch, seq, heads, head_dim } = shape;
    let w = shape.width() as isize;
    let s = seq as isize;
    let scale = F::one() / F::from_f64(head_dim as f64).sqrt();
    let mut dp = vec![F::zero(); seq * seq];
    for b in 0..batch {
        for h in 0..heads {
            let off = shape.block(b, h);
            let p = &probs[shape.probs_offset(b, h)..][..seq * seq];
            // dV_h += Pᵀ dOut_h
            F::gemm(seq, seq, head_dim, F::one(), p, (1, s), &dout[off..], (w, 1), F::one(), &mut dv[off..], (w, 1));
            // dP = dOut_h V_hᵀ
            F::gemm(seq, head_dim, seq, F::one(), &dout[off..], (w, 1), &v[off..], (1, w), F::zero(), &mut dp, (s, 1));
            // dS = P ⊙ (dP − rowsum(dP ⊙ P)), causal entries only
            for i in 0..seq {
                let prow = &p[i * seq..i * seq + i + 1];
                let drow = &mut dp[i * seq..(i + 1) * seq];
                let dot: F = prow.iter().zip(drow.iter()).map(|(&a, &b)| a * b).sum();
                for j in 0..=i {
                    drow[j] = prow[j] * (drow[j] - dot) * scale;
                }
                for d in drow[i + 1..].iter_mut() {
                    *d = F::zero();
                }
            }
            // dQ_h += dS K_h ; dK_h += dSᵀ Q_h
            F::gemm(seq, seq, head_dim, F::one(), &dp, (s, 1), &k[off..], (w, 1), F::one(), &mut dq[off..], (w, 1));
            F::gemm(seq, seq, head_dim, F::one(), &dp, (1, s), &q[off..], (w, 1), F::one(), &mut dk[off..], (w, 1));
        }
    }
}
