//! Hybrid objective: cross-entropy + soft IoU on the area branch, focal loss
//! on the edge branch.
//!
//! Each term has a value function and an analytic gradient with respect to
//! the probability map; the trainer feeds those gradients into the graph.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before any
/// logarithm.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossParams {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    /// Positive-class weight of the focal term.
    pub lambda: f64,
    /// Focusing exponent of the focal term.
    pub gamma: f64,
    /// Stabilizer `C` of the soft Jaccard ratio.
    pub stabilizer: f64,
    /// Minimize `-ln J` instead of `1 - J`.
    pub iou_log: bool,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            a1: 1.0,
            a2: 1.0,
            a3: 1.0,
            lambda: 0.75,
            gamma: 2.0,
            stabilizer: 1e-6,
            iou_log: false,
        }
    }
}

impl LossParams {
    pub fn weights(a1: f64, a2: f64, a3: f64) -> Self {
        Self {
            a1,
            a2,
            a3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.a1, self.a2, self.a3, self.lambda, self.gamma, self.stabilizer];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("loss parameters must be finite".into()));
        }
        if self.a1 < 0.0 || self.a2 < 0.0 || self.a3 < 0.0 || self.gamma < 0.0 {
            return Err(Error::Config("loss weights and gamma must be non-negative".into()));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::Config("focal lambda must lie in (0, 1)".into()));
        }
        if self.stabilizer <= 0.0 {
            return Err(Error::Config("IoU stabilizer must be positive".into()));
        }
        Ok(())
    }
}

fn check(p: &[f64], t: &[f64]) -> Result<()> {
    if p.len() != t.len() {
        return Err(Error::Shape(format!(
            "prediction has {} pixels, target has {}",
            p.len(),
            t.len()
        )));
    }
    if p.is_empty() {
        return Err(Error::Empty("loss over an empty map".into()));
    }
    Ok(())
}

#[inline]
fn clamp(p: f64) -> (f64, bool) {
    let c = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    (c, c == p)
}

/// Pixel-mean binary cross-entropy.
pub fn bce_loss(p: &[f64], t: &[f64]) -> Result<f64> {
    check(p, t)?;
    let total: f64 = p
        .iter()
        .zip(t)
        .map(|(&p, &t)| {
            let (p, _) = clamp(p);
            -(t * p.ln()) - ((1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / p.len() as f64)
}

pub fn bce_grad(p: &[f64], t: &[f64]) -> Result<Vec<f64>> {
    check(p, t)?;
    let n = p.len() as f64;
    Ok(p.iter()
        .zip(t)
        .map(|(&p, &t)| {
            let (p, inside) = clamp(p);
            if inside {
                (-t / p + (1.0 - t) / (1.0 - p)) / n
            } else {
                0.0
            }
        })
        .collect())
}

struct Jaccard {
    inter: f64,
    union: f64,
}

fn jaccard_parts(p: &[f64], t: &[f64], c: f64) -> Jaccard {
    let (mut inter, mut st, mut sp) = (0.0, 0.0, 0.0);
    for (&p, &t) in p.iter().zip(t) {
        inter += t * p;
        st += t;
        sp += p;
    }
    Jaccard {
        inter: inter + c,
        union: st + sp - inter + c,
    }
}

/// Soft Jaccard similarity `(Σtp + C) / (Σt + Σp - Σtp + C)` over a map.
pub fn soft_jaccard(p: &[f64], t: &[f64], c: f64) -> Result<f64> {
    check(p, t)?;
    let j = jaccard_parts(p, t, c);
    Ok(j.inter / j.union)
}

/// `1 - J`.
pub fn iou_loss(p: &[f64], t: &[f64], c: f64) -> Result<f64> {
    Ok(1.0 - soft_jaccard(p, t, c)?)
}

/// `-ln J`.
pub fn iou_log_loss(p: &[f64], t: &[f64], c: f64) -> Result<f64> {
    Ok(-soft_jaccard(p, t, c)?.ln())
}

/// Gradient of `J` with respect to each `p_i`.
fn jaccard_grad(p: &[f64], t: &[f64], c: f64) -> Vec<f64> {
    let j = jaccard_parts(p, t, c);
    let u2 = j.union * j.union;
    t.iter()
        .map(|&t| (t * j.union - j.inter * (1.0 - t)) / u2)
        .collect()
}

pub fn iou_grad(p: &[f64], t: &[f64], c: f64) -> Result<Vec<f64>> {
    check(p, t)?;
    Ok(jaccard_grad(p, t, c).into_iter().map(|g| -g).collect())
}

pub fn iou_log_grad(p: &[f64], t: &[f64], c: f64) -> Result<Vec<f64>> {
    let j = soft_jaccard(p, t, c)?;
    Ok(jaccard_grad(p, t, c).into_iter().map(|g| -g / j).collect())
}

/// Pixel-mean focal loss on the edge map.
pub fn focal_loss(p: &[f64], t: &[f64], lambda: f64, gamma: f64) -> Result<f64> {
    check(p, t)?;
    let total: f64 = p
        .iter()
        .zip(t)
        .map(|(&p, &t)| {
            let (p, _) = clamp(p);
            let pos = (1.0 - p).powf(gamma);
            let neg = p.powf(gamma);
            -(lambda * pos * t * p.ln()) - ((1.0 - lambda) * neg * (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / p.len() as f64)
}

pub fn focal_grad(p: &[f64], t: &[f64], lambda: f64, gamma: f64) -> Result<Vec<f64>> {
    check(p, t)?;
    let n = p.len() as f64;
    // γ·x^(γ-1), with the γ = 0 case kept finite at x = 0.
    let dpow = |x: f64| if gamma == 0.0 { 0.0 } else { gamma * x.powf(gamma - 1.0) };
    Ok(p.iter()
        .zip(t)
        .map(|(&p, &t)| {
            let (p, inside) = clamp(p);
            if !inside {
                return 0.0;
            }
            let q = 1.0 - p;
            let pos = lambda * t * (dpow(q) * p.ln() - q.powf(gamma) / p);
            let neg = -(1.0 - lambda) * (1.0 - t) * (dpow(p) * q.ln() - p.powf(gamma) / q);
            (pos + neg) / n
        })
        .collect())
}

/// Predictions and labels of one image. `edge` carries `(p′, t′)` when the
/// network has a side branch.
#[derive(Clone, Copy, Debug)]
pub struct ImageTerms<'a> {
    pub road: &'a [f64],
    pub area: &'a [f64],
    pub edge: Option<(&'a [f64], &'a [f64])>,
}

/// Per-image gradients of the batch objective.
#[derive(Clone, Debug)]
pub struct HybridGrad {
    pub value: f64,
    pub road: Vec<Vec<f64>>,
    pub edge: Vec<Option<Vec<f64>>>,
}

fn iou_term(p: &[f64], t: &[f64], params: &LossParams) -> Result<f64> {
    if params.iou_log {
        iou_log_loss(p, t, params.stabilizer)
    } else {
        iou_loss(p, t, params.stabilizer)
    }
}

/// Batch mean of `a1·L_ce + a2·L_iou + a3·L_focal`; the focal term is
/// skipped for images without an edge prediction.
pub fn hybrid_loss(batch: &[ImageTerms<'_>], params: &LossParams) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("hybrid loss over an empty batch".into()));
    }
    let mut total = 0.0;
    for img in batch {
        let mut l = params.a1 * bce_loss(img.road, img.area)?
            + params.a2 * iou_term(img.road, img.area, params)?;
        if let Some((pe, te)) = img.edge {
            l += params.a3 * focal_loss(pe, te, params.lambda, params.gamma)?;
        }
        total += l;
    }
    Ok(total / batch.len() as f64)
}

pub fn hybrid_loss_grad(batch: &[ImageTerms<'_>], params: &LossParams) -> Result<HybridGrad> {
    let value = hybrid_loss(batch, params)?;
    let n = batch.len() as f64;
    let mut road = Vec::with_capacity(batch.len());
    let mut edge = Vec::with_capacity(batch.len());
    for img in batch {
        let ce = bce_grad(img.road, img.area)?;
        let iou = if params.iou_log {
            iou_log_grad(img.road, img.area, params.stabilizer)?
        } else {
            iou_grad(img.road, img.area, params.stabilizer)?
        };
        road.push(
            ce.iter()
                .zip(&iou)
                .map(|(a, b)| (params.a1 * a + params.a2 * b) / n)
                .collect(),
        );
        edge.push(match img.edge {
            Some((pe, te)) => Some(
                focal_grad(pe, te, params.lambda, params.gamma)?
                    .into_iter()
                    .map(|g| params.a3 * g / n)
                    .collect(),
            ),
            None => None,
        });
    }
    Ok(HybridGrad { value, road, edge })
}
