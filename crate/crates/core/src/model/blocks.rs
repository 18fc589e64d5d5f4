//! Inverted-bottleneck convolution and axis-wise attention sub-blocks, both
//! residual, over `[B, D, T, F]` feature grids.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::exec;
use crate::nn::dropout::{dropout, dropout_backward};
use crate::nn::norm::{BnCache, LnCache};
use crate::nn::real::{silu, silu_grad};
use crate::nn::se::SeCache;
use crate::nn::{
    AttnCache, BatchNorm2d, Conv2d, ConvKind, LayerNorm, Mode, MultiHeadAttention, ParamStore, Real, RngState, Slots,
    SqueezeExcite, Tensor,
};

#[derive(Clone, Debug)]
pub struct MbConv {
    pub norm: BatchNorm2d,
    pub expand: Conv2d,
    pub depthwise: Conv2d,
    pub se: Option<SqueezeExcite>,
    pub project: Conv2d,
}

/// Saved for the backward pass. Activations after SiLU and the gated
/// features are recomputed rather than stored.
pub struct MbCache<T> {
    bn: BnCache<T>,
    normed: Tensor<T>,
    h1: Tensor<T>,
    h2: Tensor<T>,
    se: Option<SeCache<T>>,
}

impl<T> MbCache<T> {
    pub(crate) fn bn(&self) -> &BnCache<T> {
        &self.bn
    }
}

fn map<T: Real>(x: &Tensor<T>, f: impl Fn(T) -> T + Sync) -> Tensor<T> {
    let mut y = x.clone();
    exec::for_each_chunk(y.data_mut(), 4096, |_, c| c.iter_mut().for_each(|v| *v = f(*v)));
    y
}

fn mul_silu_grad<T: Real>(d: &mut Tensor<T>, pre: &Tensor<T>) {
    let p = pre.data();
    exec::for_each_chunk(d.data_mut(), 4096, |i, c| {
        let off = i * 4096;
        for (k, v) in c.iter_mut().enumerate() {
            *v = *v * silu_grad(p[off + k]);
        }
    });
}

impl MbConv {
    pub fn build<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        hidden: usize,
        depthwise: ConvKind,
        se_hidden: Option<usize>,
        rng: &mut RngState,
    ) -> Result<Self> {
        Ok(MbConv {
            norm: BatchNorm2d::build(store, &format!("{name}.norm"), dim)?,
            expand: Conv2d::build(store, &format!("{name}.expand"), ConvKind::Pointwise, dim, hidden, rng)?,
            depthwise: Conv2d::build(store, &format!("{name}.depthwise"), depthwise, hidden, hidden, rng)?,
            se: match se_hidden {
                Some(s) => Some(SqueezeExcite::build(store, &format!("{name}.se"), hidden, s, rng)?),
                None => None,
            },
            project: Conv2d::build(store, &format!("{name}.project"), ConvKind::Pointwise, hidden, dim, rng)?,
        })
    }

    pub fn forward<T: Real>(&self, w: &Slots<T>, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, MbCache<T>)> {
        let (normed, bn) = self.norm.forward(w, x, mode)?;
        let h1 = self.expand.forward(w, &normed)?;
        let h2 = self.depthwise.forward(w, &map(&h1, silu))?;
        let a2 = map(&h2, silu);
        let (gated, se) = match &self.se {
            Some(se) => {
                let (y, c) = se.forward(w, &a2)?;
                (y, Some(c))
            }
            None => (a2, None),
        };
        let mut y = self.project.forward(w, &gated)?;
        y.add_assign(x);
        Ok((
            y,
            MbCache {
                bn,
                normed,
                h1,
                h2,
                se,
            },
        ))
    }

    pub fn backward<T: Real>(&self, w: &Slots<T>, g: &mut Slots<T>, cache: &MbCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let a2 = map(&cache.h2, silu);
        let gated = match &cache.se {
            Some(c) => {
                let plane = a2.len() / c.gate().len();
                let mut y = a2.clone();
                exec::for_each_chunk(y.data_mut(), plane, |i, p| {
                    let gv = c.gate()[i];
                    p.iter_mut().for_each(|v| *v = *v * gv);
                });
                y
            }
            None => a2.clone(),
        };
        let dgated = self.project.backward(w, g, &gated, dy);
        drop(gated);
        let mut dh2 = match (&self.se, &cache.se) {
            (Some(se), Some(c)) => se.backward(w, g, &a2, c, &dgated),
            _ => dgated,
        };
        drop(a2);
        mul_silu_grad(&mut dh2, &cache.h2);
        let mut dh1 = self.depthwise.backward(w, g, &map(&cache.h1, silu), &dh2);
        drop(dh2);
        mul_silu_grad(&mut dh1, &cache.h1);
        let dnormed = self.expand.backward(w, g, &cache.normed, &dh1);
        let mut dx = self.norm.backward(w, g, &cache.bn, &dnormed);
        dx.add_assign(dy);
        dx
    }
}

/// Which axis of the grid an attention sub-block attends along.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Sequences of `F` bins, one per frame.
    Frequency,
    /// Sequences of `T` frames, one per bin.
    Time,
}

impl Axis {
    pub fn label(self) -> &'static str {
        match self {
            Axis::Frequency => "fsa",
            Axis::Time => "bta",
        }
    }
}

/// `x + Dropout(MHSA(LN(x)))` over every sequence along one axis.
#[derive(Clone, Debug)]
pub struct AxisAttention {
    pub axis: Axis,
    pub norm: LayerNorm,
    pub attn: MultiHeadAttention,
}

pub struct AxisCache<T> {
    shape: [usize; 4],
    ln: LnCache<T>,
    attn: AttnCache<T>,
    mask: Option<Vec<T>>,
}

impl<T: Real> AxisCache<T> {
    pub fn attention(&self) -> &AttnCache<T> {
        &self.attn
    }
}

/// Sequence count and length for `axis` on a `[B, D, T, F]` grid.
fn layout(axis: Axis, b: usize, t: usize, f: usize) -> (usize, usize) {
    match axis {
        Axis::Frequency => (b * t, f),
        Axis::Time => (b * f, t),
    }
}

/// Gather `[B, D, T, F]` into token rows of width `D`, grouped by sequence.
pub fn to_tokens<T: Real>(x: &Tensor<T>, axis: Axis) -> Vec<T> {
    let (b, d, t, f) = x.dims4();
    let (n_seq, len) = layout(axis, b, t, f);
    let src = x.data();
    let mut out = vec![T::zero(); n_seq * len * d];
    exec::for_each_chunk(&mut out, len * d, |n, seq| {
        let (bi, fixed) = (n / (n_seq / b), n % (n_seq / b));
        for s in 0..len {
            let (ti, fi) = match axis {
                Axis::Frequency => (fixed, s),
                Axis::Time => (s, fixed),
            };
            for di in 0..d {
                seq[s * d + di] = src[((bi * d + di) * t + ti) * f + fi];
            }
        }
    });
    out
}

/// Scatter token rows back onto `grid`, adding to what is there.
pub fn add_tokens<T: Real>(grid: &mut Tensor<T>, tokens: &[T], axis: Axis) {
    let (_, d, t, f) = grid.dims4();
    let per_b = match axis {
        Axis::Frequency => t,
        Axis::Time => f,
    };
    let plane = t * f;
    exec::for_each_chunk(grid.data_mut(), plane, |i, p| {
        let (bi, di) = (i / d, i % d);
        for ti in 0..t {
            for fi in 0..f {
                let (fixed, s, len) = match axis {
                    Axis::Frequency => (ti, fi, f),
                    Axis::Time => (fi, ti, t),
                };
                let n = bi * per_b + fixed;
                p[ti * f + fi] = p[ti * f + fi] + tokens[(n * len + s) * d + di];
            }
        }
    });
}

impl AxisAttention {
    pub fn build<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        axis: Axis,
        dim: usize,
        heads: usize,
        rng: &mut RngState,
    ) -> Result<Self> {
        Ok(AxisAttention {
            axis,
            norm: LayerNorm::build(store, &format!("{name}.norm"), dim)?,
            attn: MultiHeadAttention::build(store, &format!("{name}.attn"), dim, heads, rng)?,
        })
    }

    pub fn forward<T: Real>(
        &self,
        w: &Slots<T>,
        x: &Tensor<T>,
        mode: Mode,
        rate: f64,
        rng: &mut RngState,
    ) -> (Tensor<T>, AxisCache<T>) {
        let (b, d, t, f) = x.dims4();
        let (n_seq, len) = layout(self.axis, b, t, f);
        let (normed, ln) = self.norm.forward(w, &to_tokens(x, self.axis));
        let (a, attn) = self.attn.forward(w, &normed, n_seq, len);
        drop(normed);
        let (a, mask) = dropout(&a, rate, mode, rng);
        let mut y = x.clone();
        add_tokens(&mut y, &a, self.axis);
        (
            y,
            AxisCache {
                shape: [b, d, t, f],
                ln,
                attn,
                mask,
            },
        )
    }

    pub fn backward<T: Real>(&self, w: &Slots<T>, g: &mut Slots<T>, cache: &AxisCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let da = dropout_backward(&to_tokens(dy, self.axis), cache.mask.as_deref());
        let dnormed = self.attn.backward(w, g, &cache.attn, &da);
        let dtok = self.norm.backward(w, g, &cache.ln, &dnormed);
        let mut dx = dy.clone();
        debug_assert_eq!(dx.shape(), &cache.shape);
        add_tokens(&mut dx, &dtok, self.axis);
        dx
    }
}
