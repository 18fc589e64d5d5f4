use crate::error::{Error, Result};
use crate::exec;
use crate::nn::{Mode, ParamId, ParamStore, Real, Slots, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const LN_EPS: f64 = 1e-5;
/// Weight kept on the old running statistic at each update.
pub const BN_MOMENTUM: f64 = 0.9;

/// Per-channel batch normalization over `[B, C, T, F]`.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub channels: usize,
    pub weight: ParamId,
    pub bias: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

#[derive(Clone, Debug)]
pub struct BnCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    train: bool,
    batch_mean: Vec<T>,
    batch_var: Vec<T>,
    count: usize,
}

impl BatchNorm2d {
    pub fn build<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Ok(BatchNorm2d {
            channels,
            weight: store.add(&format!("{name}.weight"), Tensor::full(&[channels], T::one()), true)?,
            bias: store.add(&format!("{name}.bias"), Tensor::zeros(&[channels]), true)?,
            running_mean: store.add(&format!("{name}.running_mean"), Tensor::zeros(&[channels]), false)?,
            running_var: store.add(&format!("{name}.running_var"), Tensor::full(&[channels], T::one()), false)?,
        })
    }

    pub fn param_count(channels: usize) -> usize {
        2 * channels
    }

    pub fn forward<T: Real>(&self, w: &Slots<T>, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, BnCache<T>)> {
        let (b, c, t, f) = x.dims4();
        if c != self.channels {
            return Err(Error::shape("batch_norm", format!("expected {} channels, got {c}", self.channels)));
        }
        let plane = t * f;
        let count = b * plane;
        let train = mode == Mode::Train;
        if train && count < 2 {
            return Err(Error::shape("batch_norm", "training needs more than one value per channel"));
        }
        let eps = T::lit(BN_EPS);
        let (mean, var): (Vec<T>, Vec<T>) = if train {
            exec::map_indices(c, |ch| {
                let mut s = 0.0f64;
                for bi in 0..b {
                    s += x.data()[(bi * c + ch) * plane..(bi * c + ch + 1) * plane].iter().map(|v| v.f64()).sum::<f64>();
                }
                let m = s / count as f64;
                let mut v = 0.0f64;
                for bi in 0..b {
                    v += x.data()[(bi * c + ch) * plane..(bi * c + ch + 1) * plane]
                        .iter()
                        .map(|&x| (x.f64() - m) * (x.f64() - m))
                        .sum::<f64>();
                }
                (T::lit(m), T::lit(v / count as f64))
            })
            .into_iter()
            .unzip()
        } else {
            (w[self.running_mean].data().to_vec(), w[self.running_var].data().to_vec())
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gamma = w[self.weight].data();
        let beta = w[self.bias].data();
        let mut xhat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        exec::for_each_chunk(xhat.data_mut(), plane, |i, out| {
            let ch = i % c;
            for (o, &v) in out.iter_mut().zip(&x.data()[i * plane..(i + 1) * plane]) {
                *o = (v - mean[ch]) * inv_std[ch];
            }
        });
        exec::for_each_chunk(y.data_mut(), plane, |i, out| {
            let ch = i % c;
            for (o, &v) in out.iter_mut().zip(&xhat.data()[i * plane..(i + 1) * plane]) {
                *o = gamma[ch] * v + beta[ch];
            }
        });
        Ok((
            y,
            BnCache {
                xhat,
                inv_std,
                train,
                batch_mean: mean,
                batch_var: var,
                count,
            },
        ))
    }

    /// Fold a training batch's statistics into the running estimates.
    pub fn update_running<T: Real>(&self, store: &mut ParamStore<T>, cache: &BnCache<T>) {
        if !cache.train {
            return;
        }
        let m = T::lit(BN_MOMENTUM);
        let unbias = T::lit(cache.count as f64 / (cache.count as f64 - 1.0));
        for (r, &bm) in store.value_mut(self.running_mean).data_mut().iter_mut().zip(&cache.batch_mean) {
            *r = m * *r + (T::one() - m) * bm;
        }
        for (r, &bv) in store.value_mut(self.running_var).data_mut().iter_mut().zip(&cache.batch_var) {
            *r = m * *r + (T::one() - m) * bv * unbias;
        }
    }

    pub fn backward<T: Real>(&self, w: &Slots<T>, g: &mut Slots<T>, cache: &BnCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let (b, c, t, f) = dy.dims4();
        let plane = t * f;
        let gamma = w[self.weight].data();
        let xhat = &cache.xhat;
        // per-channel Σdy and Σdy·x̂
        let sums: Vec<(f64, f64)> = exec::map_indices(c, |ch| {
            let (mut s1, mut s2) = (0.0f64, 0.0f64);
            for bi in 0..b {
                let r = (bi * c + ch) * plane..(bi * c + ch + 1) * plane;
                for (&d, &xh) in dy.data()[r.clone()].iter().zip(&xhat.data()[r]) {
                    s1 += d.f64();
                    s2 += d.f64() * xh.f64();
                }
            }
            (s1, s2)
        });
        for (ch, &(s1, s2)) in sums.iter().enumerate() {
            let gw = &mut g[self.weight].data_mut()[ch];
            *gw = *gw + T::lit(s2);
            let gb = &mut g[self.bias].data_mut()[ch];
            *gb = *gb + T::lit(s1);
        }
        let n = cache.count as f64;
        let mut dx = Tensor::zeros(dy.shape());
        exec::for_each_chunk(dx.data_mut(), plane, |i, out| {
            let ch = i % c;
            let k = gamma[ch] * cache.inv_std[ch];
            let d = &dy.data()[i * plane..(i + 1) * plane];
            if cache.train {
                let m1 = T::lit(sums[ch].0 / n);
                let m2 = T::lit(sums[ch].1 / n);
                let xh = &xhat.data()[i * plane..(i + 1) * plane];
                for ((o, &dv), &xv) in out.iter_mut().zip(d).zip(xh) {
                    *o = k * (dv - m1 - xv * m2);
                }
            } else {
                for (o, &dv) in out.iter_mut().zip(d) {
                    *o = k * dv;
                }
            }
        });
        dx
    }
}

/// Normalization over the trailing `dim` entries of each row.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub dim: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct LnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

impl LayerNorm {
    pub fn build<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config(format!("{name}: layer norm needs dim >= 2, got {dim}")));
        }
        Ok(LayerNorm {
            dim,
            weight: store.add(&format!("{name}.weight"), Tensor::full(&[dim], T::one()), true)?,
            bias: store.add(&format!("{name}.bias"), Tensor::zeros(&[dim]), true)?,
        })
    }

    pub fn param_count(dim: usize) -> usize {
        2 * dim
    }

    pub fn forward<T: Real>(&self, w: &Slots<T>, x: &[T]) -> (Vec<T>, LnCache<T>) {
        let d = self.dim;
        assert_eq!(x.len() % d, 0);
        let rows = x.len() / d;
        let gamma = w[self.weight].data();
        let beta = w[self.bias].data();
        let eps = T::lit(LN_EPS);
        let mut xhat = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / T::lit(d as f64);
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / T::lit(d as f64);
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for (o, &v) in xhat[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
        }
        let mut y = xhat.clone();
        for row in y.chunks_exact_mut(d) {
            for ((o, &g), &b) in row.iter_mut().zip(gamma).zip(beta) {
                *o = *o * g + b;
            }
        }
        (y, LnCache { xhat, inv_std })
    }

    pub fn backward<T: Real>(&self, w: &Slots<T>, g: &mut Slots<T>, cache: &LnCache<T>, dy: &[T]) -> Vec<T> {
        let d = self.dim;
        let gamma = w[self.weight].data();
        {
            let gw = g[self.weight].data_mut();
            for (row, xr) in dy.chunks_exact(d).zip(cache.xhat.chunks_exact(d)) {
                for ((a, &dv), &xv) in gw.iter_mut().zip(row).zip(xr) {
                    *a = *a + dv * xv;
                }
            }
        }
        {
            let gb = g[self.bias].data_mut();
            for row in dy.chunks_exact(d) {
                for (a, &dv) in gb.iter_mut().zip(row) {
                    *a = *a + dv;
                }
            }
        }
        let inv_d = T::lit(1.0 / d as f64);
        let mut dx = vec![T::zero(); dy.len()];
        for (r, ((out, row), xr)) in dx
            .chunks_exact_mut(d)
            .zip(dy.chunks_exact(d))
            .zip(cache.xhat.chunks_exact(d))
            .enumerate()
        {
            let mut m1 = T::zero();
            let mut m2 = T::zero();
            for ((&dv, &gv), &xv) in row.iter().zip(gamma).zip(xr) {
                let dxh = dv * gv;
                m1 = m1 + dxh;
                m2 = m2 + dxh * xv;
            }
            m1 = m1 * inv_d;
            m2 = m2 * inv_d;
            let is = cache.inv_std[r];
            for (((o, &dv), &gv), &xv) in out.iter_mut().zip(row).zip(gamma).zip(xr) {
                *o = is * (dv * gv - m1 - xv * m2);
            }
        }
        dx
    }
}
