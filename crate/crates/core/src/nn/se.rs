use crate::error::{Error, Result};
use crate::exec;
use crate::nn::real::{sigmoid, silu, silu_grad};
use crate::nn::{Linear, ParamStore, Real, RngState, Slots, Tensor};

/// Squeeze-excitation channel gate: `y = x ⊙ σ(W₂·silu(W₁·avgpool(x)))`.
#[derive(Clone, Debug)]
pub struct SqueezeExcite {
    pub channels: usize,
    pub hidden: usize,
    pub reduce: Linear,
    pub expand: Linear,
}

#[derive(Clone, Debug)]
pub struct SeCache<T> {
    pooled: Vec<T>,
    pre_act: Vec<T>,
    act: Vec<T>,
    gate: Vec<T>,
}

impl<T> SeCache<T> {
    pub fn gate(&self) -> &[T] {
        &self.gate
    }
}

impl SqueezeExcite {
    pub fn build<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        hidden: usize,
        rng: &mut RngState,
    ) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Config(format!("{name}: squeeze width must be positive")));
        }
        Ok(SqueezeExcite {
            channels,
            hidden,
            reduce: Linear::build(store, &format!("{name}.reduce"), channels, hidden, rng)?,
            expand: Linear::build(store, &format!("{name}.expand"), hidden, channels, rng)?,
        })
    }

    pub fn param_count(channels: usize, hidden: usize) -> usize {
        Linear::param_count(channels, hidden) + Linear::param_count(hidden, channels)
    }

    pub fn forward<T: Real>(&self, w: &Slots<T>, x: &Tensor<T>) -> Result<(Tensor<T>, SeCache<T>)> {
        let (b, c, t, f) = x.dims4();
        if c != self.channels {
            return Err(Error::shape("squeeze_excitation", format!("expected {} channels, got {c}", self.channels)));
        }
        let plane = t * f;
        let inv = T::lit(1.0 / plane as f64);
        let pooled: Vec<T> = x.data().chunks_exact(plane).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        let pre_act = self.reduce.forward(w, &pooled, b);
        let act: Vec<T> = pre_act.iter().map(|&v| silu(v)).collect();
        let gate: Vec<T> = self.expand.forward(w, &act, b).into_iter().map(sigmoid).collect();
        let mut y = x.clone();
        exec::for_each_chunk(y.data_mut(), plane, |i, p| {
            let gv = gate[i];
            p.iter_mut().for_each(|v| *v = *v * gv);
        });
        Ok((
            y,
            SeCache {
                pooled,
                pre_act,
                act,
                gate,
            },
        ))
    }

    pub fn backward<T: Real>(&self, w: &Slots<T>, g: &mut Slots<T>, x: &Tensor<T>, cache: &SeCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let (b, _, t, f) = x.dims4();
        let plane = t * f;
        let dgate: Vec<T> = exec::map_indices(b * self.channels, |i| {
            let r = i * plane..(i + 1) * plane;
            dy.data()[r.clone()].iter().zip(&x.data()[r]).map(|(&a, &b)| a * b).sum::<T>()
        });
        let dlogit: Vec<T> = dgate
            .iter()
            .zip(&cache.gate)
            .map(|(&d, &s)| d * s * (T::one() - s))
            .collect();
        let dact = self.expand.backward(w, g, &cache.act, &dlogit, b);
        let dpre: Vec<T> = dact.iter().zip(&cache.pre_act).map(|(&d, &z)| d * silu_grad(z)).collect();
        let dpool = self.reduce.backward(w, g, &cache.pooled, &dpre, b);
        let inv = T::lit(1.0 / plane as f64);
        let mut dx = dy.clone();
        exec::for_each_chunk(dx.data_mut(), plane, |i, p| {
            let gv = cache.gate[i];
            let add = dpool[i] * inv;
            p.iter_mut().for_each(|v| *v = *v * gv + add);
        });
        dx
    }
}
