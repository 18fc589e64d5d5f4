//! Finite-difference verification of analytic gradients (double precision).

use std::fmt;

use crate::nn::{ParamStore, RngState, Slots, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub tolerance: f64,
    /// Relative step: `h = step · max(1, |value|)`.
    pub step: f64,
    /// Check at most this many evenly spaced entries per tensor.
    pub max_entries: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            tolerance: 1e-3,
            step: 1e-5,
            max_entries: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TensorError {
    pub name: String,
    pub checked: usize,
    pub max_rel: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub tolerance: f64,
    pub tensors: Vec<TensorError>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.max_rel < self.tolerance)
    }

    pub fn max_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel).fold(0.0, f64::max)
    }

    /// Tensors exceeding the tolerance, worst first.
    pub fn failures(&self) -> Vec<&TensorError> {
        let mut v: Vec<_> = self.tensors.iter().filter(|t| t.max_rel >= self.tolerance).collect();
        v.sort_by(|a, b| b.max_rel.total_cmp(&a.max_rel));
        v
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "gradient check: {} (max rel err {:.3e}, tolerance {:.1e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.max_error(),
            self.tolerance
        )?;
        for t in &self.tensors {
            let mark = if t.max_rel < self.tolerance { " " } else { "!" };
            writeln!(
                f,
                "{mark} {:<40} n={:<6} max_rel={:.3e} at [{}] analytic={:.6e} numeric={:.6e}",
                t.name, t.checked, t.max_rel, t.worst_index, t.analytic, t.numeric
            )?;
        }
        Ok(())
    }
}

fn sample_indices(len: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m < len => (0..m).map(|k| k * len / m).collect(),
        _ => (0..len).collect(),
    }
}

/// Per-entry relative error, floored at a small fraction of the tensor's
/// gradient scale so entries with near-zero gradient don't dominate.
fn compare(name: &str, idx: &[usize], analytic: &[f64], numeric: &[f64]) -> TensorError {
    let scale = numeric
        .iter()
        .chain(analytic)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    let floor = 1e-3 * scale;
    let mut worst = TensorError {
        name: name.to_string(),
        checked: idx.len(),
        max_rel: 0.0,
        worst_index: idx.first().copied().unwrap_or(0),
        analytic: 0.0,
        numeric: 0.0,
    };
    for (k, &i) in idx.iter().enumerate() {
        let (a, n) = (analytic[k], numeric[k]);
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(floor);
        if rel > worst.max_rel || k == 0 {
            worst.max_rel = rel;
            worst.worst_index = i;
            worst.analytic = a;
            worst.numeric = n;
        }
    }
    worst
}

/// Compare analytic gradients against central differences of `loss`.
///
/// `analytic` must zero nothing itself: the store's gradient slots are cleared
/// before it is called, it accumulates into them and returns `∂loss/∂input`.
pub fn grad_check<L, A>(
    store: &mut ParamStore<f64>,
    input: &Tensor<f64>,
    loss: L,
    analytic: A,
    opts: GradCheckOptions,
) -> GradReport
where
    L: Fn(&ParamStore<f64>, &Tensor<f64>) -> f64,
    A: Fn(&mut ParamStore<f64>, &Tensor<f64>) -> Tensor<f64>,
{
    store.zero_grads();
    let dinput = analytic(store, input);
    let mut tensors = Vec::new();

    let idx = sample_indices(input.len(), opts.max_entries);
    let mut x = input.clone();
    let mut numeric = Vec::with_capacity(idx.len());
    for &i in &idx {
        let v = x.data()[i];
        let h = opts.step * v.abs().max(1.0);
        x.data_mut()[i] = v + h;
        let lp = loss(store, &x);
        x.data_mut()[i] = v - h;
        let lm = loss(store, &x);
        x.data_mut()[i] = v;
        numeric.push((lp - lm) / (2.0 * h));
    }
    let an: Vec<f64> = idx.iter().map(|&i| dinput.data()[i]).collect();
    tensors.push(compare("input", &idx, &an, &numeric));

    let ids: Vec<_> = store.ids().filter(|&id| store.is_trainable(id)).collect();
    for id in ids {
        let idx = sample_indices(store.value(id).len(), opts.max_entries);
        let an: Vec<f64> = idx.iter().map(|&i| store.grad(id).data()[i]).collect();
        let mut numeric = Vec::with_capacity(idx.len());
        for &i in &idx {
            let v = store.value(id).data()[i];
            let h = opts.step * v.abs().max(1.0);
            store.value_mut(id).data_mut()[i] = v + h;
            let lp = loss(store, input);
            store.value_mut(id).data_mut()[i] = v - h;
            let lm = loss(store, input);
            store.value_mut(id).data_mut()[i] = v;
            numeric.push((lp - lm) / (2.0 * h));
        }
        tensors.push(compare(store.name(id), &idx, &an, &numeric));
    }
    GradReport {
        tolerance: opts.tolerance,
        tensors,
    }
}

/// Gradient check for a single layer with forward `f(w, x) -> y` and backward
/// `b(w, g, x, y, dy) -> dx`, using the scalar loss `Σ r ⊙ y` for a fixed
/// random `r`.
pub fn check_layer<F, B>(store: &mut ParamStore<f64>, x: &Tensor<f64>, forward: F, backward: B, tolerance: f64) -> GradReport
where
    F: Fn(&Slots<f64>, &Tensor<f64>) -> Tensor<f64>,
    B: Fn(&Slots<f64>, &mut Slots<f64>, &Tensor<f64>, &Tensor<f64>, &Tensor<f64>) -> Tensor<f64>,
{
    check_layer_with(
        store,
        x,
        forward,
        backward,
        GradCheckOptions {
            tolerance,
            ..Default::default()
        },
    )
}

/// [`check_layer`] with explicit options. Central differences are exact on
/// affine maps for any step, so linear layers can use a large step and keep
/// rounding error far below a tight tolerance.
pub fn check_layer_with<F, B>(store: &mut ParamStore<f64>, x: &Tensor<f64>, forward: F, backward: B, opts: GradCheckOptions) -> GradReport
where
    F: Fn(&Slots<f64>, &Tensor<f64>) -> Tensor<f64>,
    B: Fn(&Slots<f64>, &mut Slots<f64>, &Tensor<f64>, &Tensor<f64>, &Tensor<f64>) -> Tensor<f64>,
{
    let y0 = forward(store.values(), x);
    let mut rng = RngState::new(0x9ad);
    let r = Tensor::from_vec(y0.shape(), (0..y0.len()).map(|_| rng.normal()).collect()).unwrap();
    let loss = |s: &ParamStore<f64>, x: &Tensor<f64>| -> f64 {
        let y = forward(s.values(), x);
        y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    };
    let analytic = |s: &mut ParamStore<f64>, x: &Tensor<f64>| -> Tensor<f64> {
        let y = forward(s.values(), x);
        let (w, g) = s.split_mut();
        backward(w, g, x, &y, &r)
    };
    grad_check(store, x, loss, analytic, opts)
}
