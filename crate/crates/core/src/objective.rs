//! Signal-to-distortion metrics and the permutation-invariant loss.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Real;

/// Metric values are clamped to `±CLAMP_DB`.
pub const CLAMP_DB: f64 = 60.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdrOptions {
    /// Remove the mean of both signals before scoring.
    pub zero_mean: bool,
}

impl Default for SdrOptions {
    fn default() -> Self {
        SdrOptions { zero_mean: true }
    }
}

fn prepare<T: Real>(est: &[T], reference: &[T], zero_mean: bool) -> Result<(Vec<f64>, Vec<f64>)> {
    if est.len() != reference.len() || est.len() < 2 {
        return Err(Error::shape(
            "sdr",
            format!("estimate has {} samples, reference {}; need equal lengths >= 2", est.len(), reference.len()),
        ));
    }
    let mut e: Vec<f64> = est.iter().map(|v| v.f64()).collect();
    let mut r: Vec<f64> = reference.iter().map(|v| v.f64()).collect();
    if e.iter().chain(&r).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sdr input".into()));
    }
    if zero_mean {
        for v in [&mut e, &mut r] {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter_mut().for_each(|x| *x -= m);
        }
    }
    if r.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroReference);
    }
    Ok((e, r))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Scale-invariant SDR in dB.
pub fn si_sdr<T: Real>(est: &[T], reference: &[T], opts: SdrOptions) -> Result<f64> {
    Ok(si_sdr_grad(est, reference, opts)?.0)
}

/// SI-SDR and its gradient with respect to `est`. The gradient is zero
/// wherever the value is clamped.
pub fn si_sdr_grad<T: Real>(est: &[T], reference: &[T], opts: SdrOptions) -> Result<(f64, Vec<T>)> {
    let (e, r) = prepare(est, reference, opts.zero_mean)?;
    let n = e.len();
    let zero = || vec![T::zero(); n];
    let ee = dot(&e, &e);
    let rr = dot(&r, &r);
    let p = dot(&e, &r);
    // ‖αr‖² = p²/rr, ‖e − αr‖² = ee − p²/rr
    let target = p * p / rr;
    let noise = ee - target;
    if ee == 0.0 || target == 0.0 {
        return Ok((-CLAMP_DB, zero()));
    }
    if noise <= 0.0 {
        return Ok((CLAMP_DB, zero()));
    }
    let v = 10.0 * (target / noise).log10();
    if v >= CLAMP_DB {
        return Ok((CLAMP_DB, zero()));
    }
    if v <= -CLAMP_DB {
        return Ok((-CLAMP_DB, zero()));
    }
    // d/de [ln p² − ln(ee·rr − p²)] = (2 rr / q)(ee/p · r − e), q = ee·rr − p²
    let q = ee * rr - p * p;
    let k = 10.0 / std::f64::consts::LN_10 * 2.0 * rr / q;
    let mut g: Vec<f64> = e.iter().zip(&r).map(|(&ev, &rv)| k * (ee / p * rv - ev)).collect();
    if opts.zero_mean {
        let m = g.iter().sum::<f64>() / n as f64;
        g.iter_mut().for_each(|x| *x -= m);
    }
    Ok((v, g.into_iter().map(T::lit).collect()))
}

/// Plain SDR in dB: the reference is not rescaled and no mean is removed.
pub fn sdr<T: Real>(est: &[T], reference: &[T]) -> Result<f64> {
    let (e, r) = prepare(est, reference, false)?;
    let rr = dot(&r, &r);
    let err: f64 = e.iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum();
    if err == 0.0 {
        return Ok(CLAMP_DB);
    }
    Ok((10.0 * (rr / err).log10()).clamp(-CLAMP_DB, CLAMP_DB))
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut p: Vec<usize> = (0..n).collect();
    let mut out = vec![p.clone()];
    loop {
        let Some(i) = (1..n).rev().find(|&i| p[i - 1] < p[i]) else {
            return out;
        };
        let j = (i..n).rev().find(|&j| p[j] > p[i - 1]).unwrap();
        p.swap(i - 1, j);
        p[i..].reverse();
        out.push(p.clone());
    }
}

/// Largest source count accepted by [`pit_loss`].
pub const MAX_PIT_SOURCES: usize = 6;

#[derive(Clone, Debug)]
pub struct PitResult<T> {
    /// Mean negative SI-SDR under the best assignment.
    pub loss: f64,
    /// `perm[i]` is the reference matched to estimate `i`.
    pub perm: Vec<usize>,
    /// Per-estimate SI-SDR under `perm`.
    pub scores: Vec<f64>,
    /// Gradient of `loss` with respect to each estimate.
    pub grads: Vec<Vec<T>>,
}

/// Utterance-level permutation-invariant negative SI-SDR. Ties go to the
/// lexicographically smallest permutation.
pub fn pit_loss<T: Real, E: AsRef<[T]>, R: AsRef<[T]>>(
    estimates: &[E],
    references: &[R],
    opts: SdrOptions,
) -> Result<PitResult<T>> {
    let n = estimates.len();
    if n != references.len() || n == 0 {
        return Err(Error::shape(
            "pit_loss",
            format!("{n} estimates for {} references", references.len()),
        ));
    }
    if n > MAX_PIT_SOURCES {
        return Err(Error::Config(format!("pit_loss supports at most {MAX_PIT_SOURCES} sources, got {n}")));
    }
    let mut pair = vec![vec![(0.0, Vec::new()); n]; n];
    for (i, e) in estimates.iter().enumerate() {
        for (j, r) in references.iter().enumerate() {
            pair[i][j] = si_sdr_grad(e.as_ref(), r.as_ref(), opts)?;
        }
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for p in permutations(n) {
        let loss = -p.iter().enumerate().map(|(i, &j)| pair[i][j].0).sum::<f64>() / n as f64;
        if best.as_ref().is_none_or(|(b, _)| loss < *b) {
            best = Some((loss, p));
        }
    }
    let (loss, perm) = best.unwrap();
    let scale = T::lit(-1.0 / n as f64);
    let mut scores = Vec::with_capacity(n);
    let mut grads = Vec::with_capacity(n);
    for (i, &j) in perm.iter().enumerate() {
        let (v, g) = std::mem::take(&mut pair[i][j]);
        scores.push(v);
        grads.push(g.into_iter().map(|x| x * scale).collect());
    }
    Ok(PitResult {
        loss,
        perm,
        scores,
        grads,
    })
}

/// `si_sdr(est, ref) − si_sdr(mixture, ref)`.
pub fn si_sdri<T: Real>(est: &[T], reference: &[T], mixture: &[T], opts: SdrOptions) -> Result<f64> {
    Ok(si_sdr(est, reference, opts)? - si_sdr(mixture, reference, opts)?)
}

/// `sdr(est, ref) − sdr(mixture, ref)`.
pub fn sdri<T: Real>(est: &[T], reference: &[T], mixture: &[T]) -> Result<f64> {
    Ok(sdr(est, reference)? - sdr(mixture, reference)?)
}

/// Scores of one utterance under its best assignment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceScore {
    pub id: String,
    pub perm: Vec<usize>,
    pub si_sdr: Vec<f64>,
    pub sdr: Vec<f64>,
    pub si_sdri: Vec<f64>,
    pub sdri: Vec<f64>,
}

impl UtteranceScore {
    pub fn mean_si_sdri(&self) -> f64 {
        mean(&self.si_sdri)
    }

    pub fn mean_sdri(&self) -> f64 {
        mean(&self.sdri)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Score separated sources against references, with `mixture` being the
/// reference-microphone mixture.
pub fn score_utterance<T: Real>(
    id: &str,
    estimates: &[Vec<T>],
    references: &[Vec<T>],
    mixture: &[T],
    opts: SdrOptions,
) -> Result<UtteranceScore> {
    let pit = pit_loss(estimates, references, opts)?;
    let mut s = UtteranceScore {
        id: id.to_string(),
        perm: pit.perm.clone(),
        si_sdr: pit.scores.clone(),
        sdr: Vec::new(),
        si_sdri: Vec::new(),
        sdri: Vec::new(),
    };
    for (i, &j) in pit.perm.iter().enumerate() {
        let r = &references[j];
        let base_si = si_sdr(mixture, r, opts)?;
        let d = sdr(&estimates[i], r)?;
        s.si_sdri.push(pit.scores[i] - base_si);
        s.sdri.push(d - sdr(mixture, r)?);
        s.sdr.push(d);
    }
    Ok(s)
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub utterances: Vec<UtteranceScore>,
}

impl EvalReport {
    pub fn mean_si_sdri(&self) -> f64 {
        mean(&self.utterances.iter().map(UtteranceScore::mean_si_sdri).collect::<Vec<_>>())
    }

    pub fn mean_sdri(&self) -> f64 {
        mean(&self.utterances.iter().map(UtteranceScore::mean_sdri).collect::<Vec<_>>())
    }

    /// One line per utterance: id, permutation (`-`-joined), then per-speaker
    /// si_sdr, sdr, si_sdri, sdri.
    pub fn to_csv(&self) -> String {
        let speakers = self.utterances.first().map_or(0, |u| u.perm.len());
        let mut out = String::from("id,best_perm");
        for k in ["si_sdr", "sdr", "si_sdri", "sdri"] {
            for i in 0..speakers {
                write!(out, ",{k}_{i}").unwrap();
            }
        }
        out.push('\n');
        for u in &self.utterances {
            let perm: Vec<String> = u.perm.iter().map(|p| p.to_string()).collect();
            write!(out, "{},{}", u.id, perm.join("-")).unwrap();
            for col in [&u.si_sdr, &u.sdr, &u.si_sdri, &u.sdri] {
                for v in col {
                    write!(out, ",{v:.4}").unwrap();
                }
            }
            out.push('\n');
        }
        out
    }
}
