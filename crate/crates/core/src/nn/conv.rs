//! Stride-1, same-padded 2-D convolutions over `[batch, channels, time, freq]` grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::nn::real::{gemm, MatRef};
use crate::nn::{init, ParamId, ParamStore, Real, RngState, Slots, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvKind {
    /// Dense 3×3 kernel mixing all input channels.
    Full3x3,
    /// Dense 1×1 kernel (a per-position linear map over channels).
    Pointwise,
    /// One 3×3 kernel per channel.
    Depthwise3x3,
    /// One scalar per channel.
    Depthwise1x1,
}

impl ConvKind {
    pub fn is_depthwise(self) -> bool {
        matches!(self, ConvKind::Depthwise3x3 | ConvKind::Depthwise1x1)
    }

    fn taps(self) -> usize {
        match self {
            ConvKind::Full3x3 | ConvKind::Depthwise3x3 => 9,
            ConvKind::Pointwise | ConvKind::Depthwise1x1 => 1,
        }
    }

    pub fn weight_shape(self, cin: usize, cout: usize) -> Vec<usize> {
        match self {
            ConvKind::Full3x3 => vec![cout, cin, 3, 3],
            ConvKind::Pointwise => vec![cout, cin],
            ConvKind::Depthwise3x3 => vec![cout, 3, 3],
            ConvKind::Depthwise1x1 => vec![cout],
        }
    }

    pub fn param_count(self, cin: usize, cout: usize) -> usize {
        self.weight_shape(cin, cout).iter().product::<usize>() + cout
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub kind: ConvKind,
    pub cin: usize,
    pub cout: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv2d {
    pub fn build<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        kind: ConvKind,
        cin: usize,
        cout: usize,
        rng: &mut RngState,
    ) -> Result<Self> {
        if kind.is_depthwise() && cin != cout {
            return Err(Error::Config(format!(
                "{name}: depthwise convolution needs equal channels, got {cin} -> {cout}"
            )));
        }
        let fan_in = if kind.is_depthwise() { kind.taps() } else { cin * kind.taps() };
        let weight = store.add(
            &format!("{name}.weight"),
            init::kaiming_uniform(&kind.weight_shape(cin, cout), fan_in, rng),
            true,
        )?;
        let bias = store.add(&format!("{name}.bias"), Tensor::zeros(&[cout]), true)?;
        Ok(Conv2d {
            kind,
            cin,
            cout,
            weight,
            bias,
        })
    }

    fn check_input<T: Real>(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().len() != 4 || x.shape()[1] != self.cin {
            return Err(Error::shape(
                "conv2d",
                format!("expected [B, {}, T, F], got {:?}", self.cin, x.shape()),
            ));
        }
        Ok(())
    }

    pub fn forward<T: Real>(&self, w: &Slots<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let (b, _, t, f) = x.dims4();
        let plane = t * f;
        let weight = w[self.weight].data();
        let bias = w[self.bias].data();
        let mut y = Tensor::zeros(&[b, self.cout, t, f]);
        match self.kind {
            ConvKind::Depthwise3x3 | ConvKind::Depthwise1x1 => {
                let taps = self.kind.taps();
                exec::for_each_chunk(y.data_mut(), plane, |i, out| {
                    let c = i % self.cout;
                    out.fill(bias[c]);
                    let inp = &x.data()[i * plane..(i + 1) * plane];
                    let k = &weight[c * taps..(c + 1) * taps];
                    if taps == 9 {
                        plane_conv3x3(inp, k, out, t, f);
                    } else {
                        for (o, &v) in out.iter_mut().zip(inp) {
                            *o = *o + k[0] * v;
                        }
                    }
                });
            }
            ConvKind::Pointwise | ConvKind::Full3x3 => {
                let kdim = self.cin * self.kind.taps();
                let wm = MatRef::new(weight, self.cout, kdim);
                exec::for_each_chunk(y.data_mut(), self.cout * plane, |bi, out| {
                    for (c, row) in out.chunks_exact_mut(plane).enumerate() {
                        row.fill(bias[c]);
                    }
                    let inp = &x.data()[bi * self.cin * plane..(bi + 1) * self.cin * plane];
                    if self.kind == ConvKind::Pointwise {
                        gemm(T::one(), wm, MatRef::new(inp, self.cin, plane), T::one(), out, plane);
                    } else {
                        let cols = im2col(inp, self.cin, t, f);
                        gemm(T::one(), wm, MatRef::new(&cols, kdim, plane), T::one(), out, plane);
                    }
                });
            }
        }
        Ok(y)
    }

    /// Accumulates parameter gradients and returns `dx`.
    pub fn backward<T: Real>(&self, w: &Slots<T>, g: &mut Slots<T>, x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
        let (b, _, t, f) = x.dims4();
        assert_eq!(dy.shape(), &[b, self.cout, t, f]);
        let plane = t * f;
        let weight = w[self.weight].data();
        let mut dx = Tensor::zeros(x.shape());
        match self.kind {
            ConvKind::Depthwise3x3 | ConvKind::Depthwise1x1 => {
                let taps = self.kind.taps();
                let parts = exec::map_indices(b * self.cout, |i| {
                    let c = i % self.cout;
                    let inp = &x.data()[i * plane..(i + 1) * plane];
                    let d = &dy.data()[i * plane..(i + 1) * plane];
                    let mut dk = vec![T::zero(); taps];
                    if taps == 9 {
                        plane_conv3x3_kernel_grad(inp, d, &mut dk, t, f);
                    } else {
                        dk[0] = inp.iter().zip(d).map(|(&a, &b)| a * b).sum();
                    }
                    (c, dk, d.iter().copied().sum::<T>())
                });
                for (c, dk, db) in parts {
                    let gw = &mut g[self.weight].data_mut()[c * taps..(c + 1) * taps];
                    for (a, v) in gw.iter_mut().zip(dk) {
                        *a = *a + v;
                    }
                    let gb = &mut g[self.bias].data_mut()[c];
                    *gb = *gb + db;
                }
                exec::for_each_chunk(dx.data_mut(), plane, |i, out| {
                    let c = i % self.cout;
                    let d = &dy.data()[i * plane..(i + 1) * plane];
                    let k = &weight[c * taps..(c + 1) * taps];
                    if taps == 9 {
                        // correlation with the flipped kernel
                        let flipped: Vec<T> = k.iter().rev().copied().collect();
                        plane_conv3x3(d, &flipped, out, t, f);
                    } else {
                        for (o, &v) in out.iter_mut().zip(d) {
                            *o = *o + k[0] * v;
                        }
                    }
                });
            }
            ConvKind::Pointwise | ConvKind::Full3x3 => {
                let taps = self.kind.taps();
                let kdim = self.cin * taps;
                let (cin, cout) = (self.cin, self.cout);
                let parts = exec::map_indices(b, |bi| {
                    let inp = &x.data()[bi * cin * plane..(bi + 1) * cin * plane];
                    let d = &dy.data()[bi * cout * plane..(bi + 1) * cout * plane];
                    let mut gw = vec![T::zero(); cout * kdim];
                    if taps == 1 {
                        gemm(T::one(), MatRef::new(d, cout, plane), MatRef::new(inp, cin, plane).t(), T::zero(), &mut gw, kdim);
                    } else {
                        let cols = im2col(inp, cin, t, f);
                        gemm(T::one(), MatRef::new(d, cout, plane), MatRef::new(&cols, kdim, plane).t(), T::zero(), &mut gw, kdim);
                    }
                    let gb: Vec<T> = d.chunks_exact(plane).map(|r| r.iter().copied().sum()).collect();
                    (gw, gb)
                });
                for (pw, pb) in parts {
                    for (a, v) in g[self.weight].data_mut().iter_mut().zip(pw) {
                        *a = *a + v;
                    }
                    for (a, v) in g[self.bias].data_mut().iter_mut().zip(pb) {
                        *a = *a + v;
                    }
                }
                let wm = MatRef::new(weight, cout, kdim);
                exec::for_each_chunk(dx.data_mut(), cin * plane, |bi, out| {
                    let d = &dy.data()[bi * cout * plane..(bi + 1) * cout * plane];
                    if taps == 1 {
                        gemm(T::one(), wm.t(), MatRef::new(d, cout, plane), T::zero(), out, plane);
                    } else {
                        let mut dcols = vec![T::zero(); kdim * plane];
                        gemm(T::one(), wm.t(), MatRef::new(d, cout, plane), T::zero(), &mut dcols, plane);
                        col2im(&dcols, out, cin, t, f);
                    }
                });
            }
        }
        dx
    }
}

/// Valid output/input index ranges along one axis for kernel offset `o ∈ {0,1,2}`.
#[inline]
fn span(o: usize, n: usize) -> (usize, usize) {
    // output index p reads input p + o - 1
    let lo = if o == 0 { 1 } else { 0 };
    let hi = if o == 2 { n.saturating_sub(1) } else { n };
    (lo, hi.max(lo))
}

/// `out += k ⋆ inp` (cross-correlation, zero padding) on one `t × f` plane.
fn plane_conv3x3<T: Real>(inp: &[T], k: &[T], out: &mut [T], t: usize, f: usize) {
    for dt in 0..3 {
        let (t0, t1) = span(dt, t);
        for df in 0..3 {
            let kv = k[dt * 3 + df];
            let (f0, f1) = span(df, f);
            for ti in t0..t1 {
                let src = (ti + dt - 1) * f;
                let o = &mut out[ti * f + f0..ti * f + f1];
                let s = &inp[src + f0 + df - 1..src + f1 + df - 1];
                for (a, &v) in o.iter_mut().zip(s) {
                    *a = *a + kv * v;
                }
            }
        }
    }
}

/// `dk[tap] += Σ dy[p] · inp[p + offset(tap)]`.
fn plane_conv3x3_kernel_grad<T: Real>(inp: &[T], dy: &[T], dk: &mut [T], t: usize, f: usize) {
    for dt in 0..3 {
        let (t0, t1) = span(dt, t);
        for df in 0..3 {
            let (f0, f1) = span(df, f);
            let mut acc = T::zero();
            for ti in t0..t1 {
                let src = (ti + dt - 1) * f;
                let d = &dy[ti * f + f0..ti * f + f1];
                let s = &inp[src + f0 + df - 1..src + f1 + df - 1];
                acc = acc + d.iter().zip(s).map(|(&a, &b)| a * b).sum::<T>();
            }
            dk[dt * 3 + df] = dk[dt * 3 + df] + acc;
        }
    }
}

/// Unfold `[cin, t, f]` into `[cin·9, t·f]` columns (zero padded).
fn im2col<T: Real>(inp: &[T], cin: usize, t: usize, f: usize) -> Vec<T> {
    let plane = t * f;
    let mut cols = vec![T::zero(); cin * 9 * plane];
    for c in 0..cin {
        let src = &inp[c * plane..(c + 1) * plane];
        for dt in 0..3 {
            let (t0, t1) = span(dt, t);
            for df in 0..3 {
                let (f0, f1) = span(df, f);
                let row = &mut cols[((c * 9) + dt * 3 + df) * plane..((c * 9) + dt * 3 + df + 1) * plane];
                for ti in t0..t1 {
                    let s = (ti + dt - 1) * f;
                    row[ti * f + f0..ti * f + f1].copy_from_slice(&src[s + f0 + df - 1..s + f1 + df - 1]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back into `[cin, t, f]`.
fn col2im<T: Real>(cols: &[T], out: &mut [T], cin: usize, t: usize, f: usize) {
    let plane = t * f;
    for c in 0..cin {
        let dst = &mut out[c * plane..(c + 1) * plane];
        for dt in 0..3 {
            let (t0, t1) = span(dt, t);
            for df in 0..3 {
                let (f0, f1) = span(df, f);
                let row = &cols[((c * 9) + dt * 3 + df) * plane..((c * 9) + dt * 3 + df + 1) * plane];
                for ti in t0..t1 {
                    let s = (ti + dt - 1) * f;
                    let d = &mut dst[s + f0 + df - 1..s + f1 + df - 1];
                    for (a, &v) in d.iter_mut().zip(&row[ti * f + f0..ti * f + f1]) {
                        *a = *a + v;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_layer_with, GradCheckOptions};

    fn randn(shape: &[usize], rng: &mut RngState) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.normal()).collect()).unwrap()
    }

    /// Direct nested-loop reference convolution.
    fn oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, kind: ConvKind, cout: usize) -> Tensor<f64> {
        let (bn, cin, t, f) = x.dims4();
        let k = if matches!(kind, ConvKind::Full3x3 | ConvKind::Depthwise3x3) { 3 } else { 1 };
        let r = (k / 2) as isize;
        let mut y = Tensor::zeros(&[bn, cout, t, f]);
        for bi in 0..bn {
            for co in 0..cout {
                for ti in 0..t {
                    for fi in 0..f {
                        let mut acc = b.data()[co];
                        for ci in 0..cin {
                            if kind.is_depthwise() && ci != co {
                                continue;
                            }
                            for kt in 0..k {
                                for kf in 0..k {
                                    let st = ti as isize + kt as isize - r;
                                    let sf = fi as isize + kf as isize - r;
                                    if st < 0 || sf < 0 || st >= t as isize || sf >= f as isize {
                                        continue;
                                    }
                                    let wv = match kind {
                                        ConvKind::Full3x3 => w.data()[((co * cin + ci) * 3 + kt) * 3 + kf],
                                        ConvKind::Pointwise => w.data()[co * cin + ci],
                                        ConvKind::Depthwise3x3 => w.data()[(co * 3 + kt) * 3 + kf],
                                        ConvKind::Depthwise1x1 => w.data()[co],
                                    };
                                    acc += wv * x.data()[((bi * cin + ci) * t + st as usize) * f + sf as usize];
                                }
                            }
                        }
                        y.data_mut()[((bi * cout + co) * t + ti) * f + fi] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn matches_loop_oracle_all_kinds() {
        let mut rng = RngState::new(11);
        for kind in [ConvKind::Full3x3, ConvKind::Pointwise, ConvKind::Depthwise3x3, ConvKind::Depthwise1x1] {
            let (cin, cout) = if kind.is_depthwise() { (2, 2) } else { (2, 3) };
            let mut store = ParamStore::<f64>::new();
            let conv = Conv2d::build(&mut store, "c", kind, cin, cout, &mut rng).unwrap();
            store.set("c.bias", randn(&[cout], &mut rng)).unwrap();
            let x = randn(&[2, cin, 4, 4], &mut rng);
            let y = conv.forward(store.values(), &x).unwrap();
            let want = oracle(&x, store.value(conv.weight), store.value(conv.bias), kind, cout);
            assert!(y.max_abs_diff(&want) < 1e-10, "{kind:?}");
        }
    }

    #[test]
    fn pointwise_identity() {
        let mut rng = RngState::new(1);
        let mut store = ParamStore::<f64>::new();
        let conv = Conv2d::build(&mut store, "c", ConvKind::Pointwise, 3, 3, &mut rng).unwrap();
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        store.set("c.weight", eye).unwrap();
        let x = randn(&[1, 3, 5, 6], &mut rng);
        assert_eq!(conv.forward(store.values(), &x).unwrap(), x);
    }

    #[test]
    fn ones_kernel_on_impulse_gives_plateau() {
        let mut rng = RngState::new(1);
        let mut store = ParamStore::<f64>::new();
        let conv = Conv2d::build(&mut store, "c", ConvKind::Full3x3, 1, 1, &mut rng).unwrap();
        store.set("c.weight", Tensor::full(&[1, 1, 3, 3], 1.0)).unwrap();
        let mut x = Tensor::zeros(&[1, 1, 5, 5]);
        x.data_mut()[2 * 5 + 2] = 1.0;
        let y = conv.forward(store.values(), &x).unwrap();
        for t in 0..5 {
            for f in 0..5 {
                let inside = (1..=3).contains(&t) && (1..=3).contains(&f);
                assert_eq!(y.data()[t * 5 + f], if inside { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut rng = RngState::new(1);
        let mut store = ParamStore::<f64>::new();
        assert!(Conv2d::build(&mut store, "d", ConvKind::Depthwise3x3, 2, 3, &mut rng).is_err());
        let conv = Conv2d::build(&mut store, "c", ConvKind::Pointwise, 2, 3, &mut rng).unwrap();
        assert!(conv.forward(store.values(), &Tensor::<f64>::zeros(&[1, 3, 2, 2])).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = RngState::new(5);
        for kind in [ConvKind::Full3x3, ConvKind::Pointwise, ConvKind::Depthwise3x3, ConvKind::Depthwise1x1] {
            let (cin, cout) = if kind.is_depthwise() { (3, 3) } else { (2, 3) };
            let mut store = ParamStore::<f64>::new();
            let conv = Conv2d::build(&mut store, "c", kind, cin, cout, &mut rng).unwrap();
            let x = randn(&[2, cin, 3, 4], &mut rng);
            let opts = GradCheckOptions {
                tolerance: 1e-8,
                step: 1e-2,
                max_entries: None,
            };
            let report = check_layer_with(
                &mut store,
                &x,
                |w, x| conv.forward(w, x).unwrap(),
                |w, g, x, _y, dy| conv.backward(w, g, x, dy),
                opts,
            );
            assert!(report.passed(), "{kind:?}: {report}");
        }
    }
}
