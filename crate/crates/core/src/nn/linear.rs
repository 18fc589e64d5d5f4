use crate::error::Result;
use crate::exec;
use crate::nn::real::{gemm, MatRef};
use crate::nn::{init, ParamId, ParamStore, Real, RngState, Slots, Tensor};

/// Rows handled per parallel work item.
const ROW_CHUNK: usize = 2048;

/// Affine map applied to the rows of an `[n × in]` matrix: `y = x·Wᵀ + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn build<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut RngState,
    ) -> Result<Self> {
        let weight = store.add(
            &format!("{name}.weight"),
            init::kaiming_uniform(&[outputs, inputs], inputs, rng),
            true,
        )?;
        let bias = store.add(&format!("{name}.bias"), Tensor::zeros(&[outputs]), true)?;
        Ok(Linear {
            inputs,
            outputs,
            weight,
            bias,
        })
    }

    pub fn param_count(inputs: usize, outputs: usize) -> usize {
        inputs * outputs + outputs
    }

    /// `x` holds `rows` rows of width `inputs`; returns `rows × outputs`.
    pub fn forward<T: Real>(&self, w: &Slots<T>, x: &[T], rows: usize) -> Vec<T> {
        assert_eq!(x.len(), rows * self.inputs);
        let bias = w[self.bias].data();
        let wt = MatRef::new(w[self.weight].data(), self.outputs, self.inputs).t();
        let mut y = vec![T::zero(); rows * self.outputs];
        exec::for_each_chunk(&mut y, ROW_CHUNK * self.outputs, |ci, yc| {
            let r0 = ci * ROW_CHUNK;
            let n = yc.len() / self.outputs;
            for row in yc.chunks_exact_mut(self.outputs) {
                row.copy_from_slice(bias);
            }
            let xc = &x[r0 * self.inputs..(r0 + n) * self.inputs];
            gemm(T::one(), MatRef::new(xc, n, self.inputs), wt, T::one(), yc, self.outputs);
        });
        y
    }

    /// Accumulates weight/bias gradients and returns `dx`.
    pub fn backward<T: Real>(&self, w: &Slots<T>, g: &mut Slots<T>, x: &[T], dy: &[T], rows: usize) -> Vec<T> {
        assert_eq!(dy.len(), rows * self.outputs);
        let (nin, nout) = (self.inputs, self.outputs);
        let chunks = rows.div_ceil(ROW_CHUNK);
        let partials = exec::map_indices(chunks, |ci| {
            let r0 = ci * ROW_CHUNK;
            let n = ROW_CHUNK.min(rows - r0);
            let dyc = &dy[r0 * nout..(r0 + n) * nout];
            let xc = &x[r0 * nin..(r0 + n) * nin];
            let mut gw = vec![T::zero(); nout * nin];
            gemm(T::one(), MatRef::new(dyc, n, nout).t(), MatRef::new(xc, n, nin), T::zero(), &mut gw, nin);
            let mut gb = vec![T::zero(); nout];
            for row in dyc.chunks_exact(nout) {
                for (b, &d) in gb.iter_mut().zip(row) {
                    *b = *b + d;
                }
            }
            (gw, gb)
        });
        for (pw, pb) in partials {
            for (a, b) in g[self.weight].data_mut().iter_mut().zip(pw) {
                *a = *a + b;
            }
            for (a, b) in g[self.bias].data_mut().iter_mut().zip(pb) {
                *a = *a + b;
            }
        }
        let wm = MatRef::new(w[self.weight].data(), nout, nin);
        let mut dx = vec![T::zero(); rows * nin];
        exec::for_each_chunk(&mut dx, ROW_CHUNK * nin, |ci, dxc| {
            let r0 = ci * ROW_CHUNK;
            let n = dxc.len() / nin;
            let dyc = &dy[r0 * nout..(r0 + n) * nout];
            gemm(T::one(), MatRef::new(dyc, n, nout), wm, T::zero(), dxc, nin);
        });
        dx
    }
}
