//! Training losses and the finite-difference gradient checker.
//!
//! The per-example objective is cross-entropy plus a gated attention
//! alignment term:
//!
//! ```text
//! total = ce + alpha * gate * aal,   gate = [y > 0] * [sum(r) > 0]
//! aal   = 1/sum(m) * sum_i m_i * (a_i / (sum_j m_j a_j + eps) - r_i)^2
//! ```
//!
//! `m` is the content mask, so `[CLS]`, `[SEP]` and padding never enter the
//! alignment term, and `r` is used as the raw binary mask.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{self, Gradients, OutputGrad, Parameters};
use crate::rng::{self, Stream, StreamRng};
use crate::textproc::{Encoding, RationaleMask};
use crate::{Error, Result};

pub const AAL_EPS: f64 = 1e-10;

pub fn normalize_attention(a: &[f64], m: &[u8]) -> Vec<f64> {
    let mass: f64 = a.iter().zip(m).map(|(&x, &k)| if k == 1 { x } else { 0.0 }).sum();
    let denom = mass + AAL_EPS;
    a.iter().map(|x| x / denom).collect()
}

fn check_lengths(a: &[f64], r: &[u8], m: &[u8]) -> Result<usize> {
    if r.len() != a.len() {
        return Err(Error::MaskLength { expected: a.len(), got: r.len() });
    }
    if m.len() != a.len() {
        return Err(Error::MaskLength { expected: a.len(), got: m.len() });
    }
    let valid = m.iter().filter(|&&k| k == 1).count();
    if valid == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(valid)
}

pub fn aal_loss(a: &[f64], r: &[u8], m: &[u8]) -> Result<f64> {
    let valid = check_lengths(a, r, m)?;
    let norm = normalize_attention(a, m);
    let sum: f64 = norm
        .iter()
        .zip(r)
        .zip(m)
        .filter(|(_, &k)| k == 1)
        .map(|((&an, &ri), _)| (an - ri as f64).powi(2))
        .sum();
    Ok(sum / valid as f64)
}

/// Loss and its gradient with respect to `a`.
pub fn aal_loss_grad(a: &[f64], r: &[u8], m: &[u8]) -> Result<(f64, Vec<f64>)> {
    let valid = check_lengths(a, r, m)? as f64;
    let loss = aal_loss(a, r, m)?;
    let mass: f64 = a.iter().zip(m).map(|(&x, &k)| if k == 1 { x } else { 0.0 }).sum();
    let denom = mass + AAL_EPS;
    let e: Vec<f64> = a
        .iter()
        .zip(r)
        .zip(m)
        .map(|((&x, &ri), &k)| {
            if k == 1 {
                2.0 * (x / denom - ri as f64) / valid
            } else {
                0.0
            }
        })
        .collect();
    let coupling: f64 = e.iter().zip(a).map(|(ei, ai)| ei * ai).sum::<f64>() / (denom * denom);
    let grad = e
        .iter()
        .zip(m)
        .map(|(&ek, &k)| if k == 1 { ek / denom - coupling } else { 0.0 })
        .collect();
    Ok((loss, grad))
}

/// `-log softmax(logits)[y]` with max subtraction.
pub fn ce_loss(logits: &[f64], y: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
    lse - logits[y]
}

pub fn ce_loss_grad(logits: &[f64], y: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let grad = exps
        .iter()
        .enumerate()
        .map(|(c, e)| e / z - if c == y { 1.0 } else { 0.0 })
        .collect();
    (ce_loss(logits, y), grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    /// Zero whenever the gate is closed.
    pub aal: f64,
    pub gate: bool,
    pub alpha: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn compose(ce: f64, aal: f64, gate: bool, alpha: f64) -> Self {
        let aal = if gate { aal } else { 0.0 };
        let g = if gate { 1.0 } else { 0.0 };
        Self {
            ce,
            aal,
            gate,
            alpha,
            total: ce + alpha * g * aal,
        }
    }
}

pub fn gate(y: usize, r: &[u8]) -> bool {
    y > 0 && r.iter().any(|&v| v == 1)
}

pub fn total_loss(
    logits: &[f64],
    a: &[f64],
    y: usize,
    r: &[u8],
    m_content: &[u8],
    alpha: f64,
) -> Result<LossBreakdown> {
    let ce = ce_loss(logits, y);
    let open = gate(y, r);
    let aal = if open { aal_loss(a, r, m_content)? } else { 0.0 };
    Ok(LossBreakdown::compose(ce, aal, open, alpha))
}

/// Like [`total_loss`], also returning the gradient seeds for the model's
/// reverse pass. The attention seed is omitted when `alpha * gate == 0`, and
/// with `supervise == false` the alignment term is never evaluated at all.
pub fn total_loss_with_grad(
    logits: &[f64],
    a: &[f64],
    y: usize,
    r: &[u8],
    m_content: &[u8],
    alpha: f64,
    supervise: bool,
) -> Result<(LossBreakdown, OutputGrad)> {
    let (ce, d_logits) = ce_loss_grad(logits, y);
    if !supervise {
        return Ok((
            LossBreakdown::compose(ce, 0.0, false, alpha),
            OutputGrad { d_logits, d_cls_attention: None },
        ));
    }
    let open = gate(y, r);
    if !open {
        return Ok((
            LossBreakdown::compose(ce, 0.0, false, alpha),
            OutputGrad { d_logits, d_cls_attention: None },
        ));
    }
    let (aal, d_a) = aal_loss_grad(a, r, m_content)?;
    let d_cls_attention = (alpha != 0.0).then(|| d_a.iter().map(|g| alpha * g).collect());
    Ok((
        LossBreakdown::compose(ce, aal, open, alpha),
        OutputGrad { d_logits, d_cls_attention },
    ))
}

/// One example's loss under the model, without gradients.
pub fn example_loss(
    params: &Parameters,
    enc: &Encoding,
    y: usize,
    rationale: &RationaleMask,
    alpha: f64,
) -> Result<LossBreakdown> {
    let out = model::forward(params, enc, None)?;
    total_loss(&out.logits, &out.cls_attention, y, &rationale.r, &enc.content_mask, alpha)
}

/// One example's loss and its gradient, accumulated into `grads` with the
/// given scale. Dropout is active when a stream is supplied.
#[allow(clippy::too_many_arguments)]
pub fn example_loss_and_grad(
    params: &Parameters,
    enc: &Encoding,
    y: usize,
    rationale: &RationaleMask,
    alpha: f64,
    supervise: bool,
    dropout: Option<&mut StreamRng>,
    scale: f64,
    grads: &mut Gradients,
) -> Result<LossBreakdown> {
    let out = model::forward_recorded(params, enc, dropout)?;
    let (loss, seed) = total_loss_with_grad(
        &out.logits,
        &out.cls_attention,
        y,
        &rationale.r,
        &enc.content_mask,
        alpha,
        supervise,
    )?;
    model::backward(params, &out, &seed, scale, grads)?;
    Ok(loss)
}

/// A flat view over scalar parameters for finite-difference probing.
pub trait FlatParams: Clone {
    fn len(&self) -> usize;
    fn get(&self, i: usize) -> f64;
    fn set(&mut self, i: usize, v: f64);
    /// Probe sampling picks a segment uniformly, then an index within it.
    fn segments(&self) -> Vec<Range<usize>> {
        vec![0..self.len()]
    }
}

impl FlatParams for Vec<f64> {
    fn len(&self) -> usize {
        <[f64]>::len(self)
    }
    fn get(&self, i: usize) -> f64 {
        self[i]
    }
    fn set(&mut self, i: usize, v: f64) {
        self[i] = v;
    }
}

fn locate(t: &crate::model::Tensors, mut i: usize) -> (usize, usize) {
    for (k, s) in t.slices().iter().enumerate() {
        if i < s.len() {
            return (k, i);
        }
        i -= s.len();
    }
    panic!("flat index out of range");
}

impl FlatParams for Parameters {
    fn len(&self) -> usize {
        self.tensors.num_scalars()
    }
    fn get(&self, i: usize) -> f64 {
        let (k, j) = locate(&self.tensors, i);
        self.tensors.slices()[k][j]
    }
    fn set(&mut self, i: usize, v: f64) {
        let (k, j) = locate(&self.tensors, i);
        self.tensors.slices_mut()[k][j] = v;
    }
    /// One segment per tensor, so small tensors get probed as often as the
    /// embedding tables.
    fn segments(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.tensors
            .slices()
            .iter()
            .map(|s| {
                let r = start..start + s.len();
                start += s.len();
                r
            })
            .collect()
    }
}

/// Flattens gradients in the same order as `FlatParams for Parameters`.
pub fn flatten_gradients(g: &Gradients) -> Vec<f64> {
    g.tensors.slices().concat()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub probes: Vec<Probe>,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Denominator floor for relative errors. Below it the comparison is
/// effectively absolute, since central differences in double precision carry
/// about 1e-11 of absolute noise at the probe step used here.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERROR_FLOOR)
}

/// Compares `analytic` against central differences of `loss` at
/// `n_probes` randomly chosen scalars.
pub fn grad_check<P, F>(
    loss: F,
    params: &P,
    analytic: &[f64],
    n_probes: usize,
    step: f64,
    tol: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    P: FlatParams,
    F: Fn(&P) -> Result<f64>,
{
    if analytic.len() != params.len() {
        return Err(Error::MaskLength { expected: params.len(), got: analytic.len() });
    }
    let segments: Vec<Range<usize>> = params.segments().into_iter().filter(|r| !r.is_empty()).collect();
    let mut rng = rng::stream(seed, Stream::Probe);
    let mut work = params.clone();
    let mut probes = Vec::with_capacity(n_probes);
    for _ in 0..n_probes {
        let seg = &segments[rng.gen_range(0..segments.len())];
        let index = rng.gen_range(seg.clone());
        let numeric = central_difference(&loss, &mut work, index, step)?;
        let a = analytic[index];
        probes.push(Probe {
            index,
            analytic: a,
            numeric,
            rel_error: relative_error(a, numeric),
        });
    }
    let max_rel_error = probes.iter().map(|p| p.rel_error).fold(0.0, f64::max);
    let max_abs_error = probes
        .iter()
        .map(|p| (p.analytic - p.numeric).abs())
        .fold(0.0, f64::max);
    Ok(GradCheckReport {
        probes,
        max_rel_error,
        max_abs_error,
        tol,
        passed: max_rel_error < tol,
    })
}

pub fn central_difference<P, F>(loss: &F, work: &mut P, index: usize, step: f64) -> Result<f64>
where
    P: FlatParams,
    F: Fn(&P) -> Result<f64>,
{
    let orig = work.get(index);
    work.set(index, orig + step);
    let plus = loss(work)?;
    work.set(index, orig - step);
    let minus = loss(work)?;
    work.set(index, orig);
    Ok((plus - minus) / (2.0 * step))
}
