//! Multi-head scaled dot-product self-attention over batches of sequences.
//!
//! Inputs are `n_seq` sequences of `seq_len` rows of width `dim`, stored
//! contiguously. The query/key/value projection and the output projection run
//! as single matrix products over all rows; the parameter-free attention core
//! runs per sequence, so each sequence writes only its own slice of every
//! buffer in both directions.

use crate::error::{Error, Result};
use crate::exec;
use crate::nn::real::{gemm, MatRef};
use crate::nn::{Linear, ParamStore, Real, RngState, Slots};

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub dim: usize,
    pub heads: usize,
    pub in_proj: Linear,
    pub out_proj: Linear,
}

#[derive(Clone, Debug)]
pub struct AttnCache<T> {
    n_seq: usize,
    seq_len: usize,
    heads: usize,
    input: Vec<T>,
    qkv: Vec<T>,
    probs: Vec<T>,
    ctx: Vec<T>,
}

impl<T: Real> AttnCache<T> {
    /// Row-stochastic `seq_len × seq_len` attention matrix of one head.
    pub fn probs(&self, seq: usize, head: usize) -> &[T] {
        let s2 = self.seq_len * self.seq_len;
        let off = (seq * self.heads + head) * s2;
        &self.probs[off..off + s2]
    }

    pub fn n_seq(&self) -> usize {
        self.n_seq
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn heads(&self) -> usize {
        self.heads
    }
}

impl MultiHeadAttention {
    pub fn build<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize, heads: usize, rng: &mut RngState) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!("{name}: dim {dim} is not divisible by {heads} heads")));
        }
        Ok(MultiHeadAttention {
            dim,
            heads,
            in_proj: Linear::build(store, &format!("{name}.in_proj"), dim, 3 * dim, rng)?,
            out_proj: Linear::build(store, &format!("{name}.out_proj"), dim, dim, rng)?,
        })
    }

    pub fn param_count(dim: usize) -> usize {
        Linear::param_count(dim, 3 * dim) + Linear::param_count(dim, dim)
    }

    fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn forward<T: Real>(&self, w: &Slots<T>, x: &[T], n_seq: usize, seq_len: usize) -> (Vec<T>, AttnCache<T>) {
        let (d, h, dh, s) = (self.dim, self.heads, self.head_dim(), seq_len);
        assert_eq!(x.len(), n_seq * s * d, "attention input size");
        let qkv = self.in_proj.forward(w, x, n_seq * s);
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let mut probs = vec![T::zero(); n_seq * h * s * s];
        let mut ctx = vec![T::zero(); n_seq * s * d];
        exec::for_each_chunk_pair(&mut probs, h * s * s, &mut ctx, s * d, |n, p, c| {
            let q = &qkv[n * s * 3 * d..(n + 1) * s * 3 * d];
            for hi in 0..h {
                let ph = &mut p[hi * s * s..(hi + 1) * s * s];
                let qh = MatRef::strided(&q[hi * dh..], s, dh, 3 * d, 1);
                let kh = MatRef::strided(&q[d + hi * dh..], s, dh, 3 * d, 1);
                let vh = MatRef::strided(&q[2 * d + hi * dh..], s, dh, 3 * d, 1);
                gemm(scale, qh, kh.t(), T::zero(), ph, s);
                for row in ph.chunks_exact_mut(s) {
                    softmax_in_place(row);
                }
                gemm(T::one(), MatRef::new(ph, s, s), vh, T::zero(), &mut c[hi * dh..], d);
            }
        });
        let out = self.out_proj.forward(w, &ctx, n_seq * s);
        (
            out,
            AttnCache {
                n_seq,
                seq_len: s,
                heads: h,
                input: x.to_vec(),
                qkv,
                probs,
                ctx,
            },
        )
    }

    pub fn backward<T: Real>(&self, w: &Slots<T>, g: &mut Slots<T>, cache: &AttnCache<T>, dout: &[T]) -> Vec<T> {
        let (d, h, dh, s) = (self.dim, self.heads, self.head_dim(), cache.seq_len);
        let rows = cache.n_seq * s;
        let dctx = self.out_proj.backward(w, g, &cache.ctx, dout, rows);
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let mut dqkv = vec![T::zero(); rows * 3 * d];
        exec::for_each_chunk(&mut dqkv, s * 3 * d, |n, dq| {
            let q = &cache.qkv[n * s * 3 * d..(n + 1) * s * 3 * d];
            let dc = &dctx[n * s * d..(n + 1) * s * d];
            let mut dp = vec![T::zero(); s * s];
            for hi in 0..h {
                let p = &cache.probs[(n * h + hi) * s * s..(n * h + hi + 1) * s * s];
                let qh = MatRef::strided(&q[hi * dh..], s, dh, 3 * d, 1);
                let kh = MatRef::strided(&q[d + hi * dh..], s, dh, 3 * d, 1);
                let vh = MatRef::strided(&q[2 * d + hi * dh..], s, dh, 3 * d, 1);
                let doh = MatRef::strided(&dc[hi * dh..], s, dh, d, 1);
                // dV = Pᵀ·dO
                gemm(T::one(), MatRef::new(p, s, s).t(), doh, T::zero(), &mut dq[2 * d + hi * dh..], 3 * d);
                // dP = dO·Vᵀ, then softmax backward in place
                gemm(T::one(), doh, vh.t(), T::zero(), &mut dp, s);
                for (drow, prow) in dp.chunks_exact_mut(s).zip(p.chunks_exact(s)) {
                    let dot = drow.iter().zip(prow).map(|(&a, &b)| a * b).sum::<T>();
                    for (dv, &pv) in drow.iter_mut().zip(prow) {
                        *dv = pv * (*dv - dot);
                    }
                }
                // dQ = dS·K·scale, dK = dSᵀ·Q·scale
                gemm(scale, MatRef::new(&dp, s, s), kh, T::zero(), &mut dq[hi * dh..], 3 * d);
                gemm(scale, MatRef::new(&dp, s, s).t(), qh, T::zero(), &mut dq[d + hi * dh..], 3 * d);
            }
        });
        self.in_proj.backward(w, g, &cache.input, &dqkv, rows)
    }
}

fn softmax_in_place<T: Real>(row: &mut [T]) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        sum = sum + *v;
    }
    let inv = T::one() / sum;
    row.iter_mut().for_each(|v| *v = *v * inv);
}
