//! Per-pixel binary segmentation losses and their analytic gradients with
//! respect to the predicted probabilities.
//!
//! All losses are means over the included pixels of a [`PixelBatch`].
//! Log-based losses clamp probabilities to `[eps, 1 - eps]` first; the
//! gradient is evaluated at the clamped point and passed straight through the
//! clamp, so saturated predictions still receive a training signal.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::BinaryMask;

/// Additive smoothing in the Dice ratio; defines the empty case.
pub const DICE_SMOOTH: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct PixelBatch {
    p: Vec<f64>,
    y: Vec<bool>,
    weight: Option<Vec<bool>>,
}

impl PixelBatch {
    pub fn new(p: Vec<f64>, y: Vec<bool>, weight: Option<Vec<bool>>) -> Result<Self> {
        if p.len() != y.len() {
            return Err(Error::invalid(
                "pixel batch",
                format!("{} probabilities but {} labels", p.len(), y.len()),
            ));
        }
        if let Some(w) = &weight {
            if w.len() != p.len() {
                return Err(Error::invalid(
                    "pixel batch",
                    format!("{} weights for {} pixels", w.len(), p.len()),
                ));
            }
        }
        if let Some(i) = p.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(
                "pixel batch",
                format!("probability {} at index {i} is outside [0, 1]", p[i]),
            ));
        }
        Ok(PixelBatch { p, y, weight })
    }

    pub fn probs(&self) -> &[f64] {
        &self.p
    }

    pub fn labels(&self) -> &[bool] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn is_included(&self, i: usize) -> bool {
        self.weight.as_ref().is_none_or(|w| w[i])
    }

    /// Number of included pixels (N).
    pub fn included(&self) -> usize {
        match &self.weight {
            Some(w) => w.iter().filter(|&&b| b).count(),
            None => self.p.len(),
        }
    }

    /// Same labels and weights with different probabilities.
    pub fn with_probs(&self, p: Vec<f64>) -> Result<Self> {
        PixelBatch::new(p, self.y.clone(), self.weight.clone())
    }

    fn included_count(&self) -> Result<f64> {
        match self.included() {
            0 => Err(Error::invalid("pixel batch", "no included pixels")),
            n => Ok(n as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParams {
    pub alpha: f64,
    pub gamma: f64,
    pub clamp_eps: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams {
            alpha: 0.25,
            gamma: 2.0,
            clamp_eps: 1e-7,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(
                "alpha",
                format!("{} is outside [0, 1]", self.alpha),
            ));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid(
                "gamma",
                format!("{} must be >= 0", self.gamma),
            ));
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 0.5) {
            return Err(Error::invalid(
                "clamp eps",
                format!("{} is outside (0, 0.5)", self.clamp_eps),
            ));
        }
        Ok(())
    }

    fn clamp(&self, p: f64) -> f64 {
        p.clamp(self.clamp_eps, 1.0 - self.clamp_eps)
    }

    fn alpha_t(&self, y: bool) -> f64 {
        if y {
            self.alpha
        } else {
            1.0 - self.alpha
        }
    }
}

/// Probability assigned to the true class: `p` for a positive label, `1 - p` otherwise.
pub fn p_t(p: f64, y: bool) -> f64 {
    if y {
        p
    } else {
        1.0 - p
    }
}

fn mean_of(
    batch: &PixelBatch,
    params: &LossParams,
    term: impl Fn(f64, bool) -> f64,
) -> Result<f64> {
    params.validate()?;
    let n = batch.included_count()?;
    let mut acc = 0.0;
    for i in 0..batch.len() {
        if batch.is_included(i) {
            acc += term(p_t(params.clamp(batch.p[i]), batch.y[i]), batch.y[i]);
        }
    }
    Ok(acc / n)
}

pub fn bce(batch: &PixelBatch, params: &LossParams) -> Result<f64> {
    mean_of(batch, params, |pt, _| -pt.ln())
}

pub fn balanced_ce(batch: &PixelBatch, params: &LossParams) -> Result<f64> {
    mean_of(batch, params, |pt, y| -params.alpha_t(y) * pt.ln())
}

pub fn focal(batch: &PixelBatch, params: &LossParams) -> Result<f64> {
    mean_of(batch, params, |pt, y| {
        -params.alpha_t(y) * (1.0 - pt).powf(params.gamma) * pt.ln()
    })
}

fn dice_sums(batch: &PixelBatch) -> (f64, f64) {
    let (mut inter, mut total) = (0.0, 0.0);
    for i in 0..batch.len() {
        if batch.is_included(i) {
            let r = if batch.y[i] { 1.0 } else { 0.0 };
            inter += batch.p[i] * r;
            total += batch.p[i] + r;
        }
    }
    (inter, total)
}

/// Soft Dice loss on unclamped probabilities:
/// `1 - (2·Σ p·r + s) / (Σ (p + r) + s)` with `s = DICE_SMOOTH`.
pub fn dice_loss(batch: &PixelBatch) -> Result<f64> {
    batch.included_count()?;
    let (inter, total) = dice_sums(batch);
    Ok(1.0 - (2.0 * inter + DICE_SMOOTH) / (total + DICE_SMOOTH))
}

pub fn combined_loss(batch: &PixelBatch, params: &LossParams) -> Result<f64> {
    Ok(dice_loss(batch)? + focal(batch, params)?)
}

/// Set-form Dice coefficient `2|A∩B| / (|A| + |B|)`; two empty masks score 1.
pub fn dice_coefficient(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    pred.ensure_same_dims(gt.dims())?;
    let inter = pred.and(gt)?.count();
    let total = pred.count() + gt.count();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossId {
    Bce,
    BalancedCe,
    Focal,
    Dice,
    DiceFocal,
}

impl LossId {
    pub const ALL: [LossId; 5] = [
        LossId::Bce,
        LossId::BalancedCe,
        LossId::Focal,
        LossId::Dice,
        LossId::DiceFocal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossId::Bce => "bce",
            LossId::BalancedCe => "balanced-ce",
            LossId::Focal => "focal",
            LossId::Dice => "dice",
            LossId::DiceFocal => "dice-focal",
        }
    }
}

impl fmt::Display for LossId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::UnknownId(format!("loss {s}")))
    }
}

pub fn loss(id: LossId, batch: &PixelBatch, params: &LossParams) -> Result<f64> {
    match id {
        LossId::Bce => bce(batch, params),
        LossId::BalancedCe => balanced_ce(batch, params),
        LossId::Focal => focal(batch, params),
        LossId::Dice => dice_loss(batch),
        LossId::DiceFocal => combined_loss(batch, params),
    }
}

/// Derivative of `loss` with respect to each `p_i`; zero for excluded pixels.
pub fn loss_gradient(id: LossId, batch: &PixelBatch, params: &LossParams) -> Result<Vec<f64>> {
    params.validate()?;
    let n = batch.included_count()?;
    let mut grad = vec![0.0; batch.len()];

    let log_term = |pt: f64, y: bool| -> f64 {
        // d(term)/d(p_t) for each log-based loss
        let a = params.alpha_t(y);
        match id {
            LossId::Bce => -1.0 / pt,
            LossId::BalancedCe => -a / pt,
            LossId::Focal | LossId::DiceFocal => {
                let q = 1.0 - pt;
                let modulated = if params.gamma == 0.0 {
                    0.0
                } else {
                    params.gamma * q.powf(params.gamma - 1.0) * pt.ln()
                };
                a * (modulated - q.powf(params.gamma) / pt)
            }
            LossId::Dice => 0.0,
        }
    };
    if id != LossId::Dice {
        for (i, g) in grad.iter_mut().enumerate() {
            if batch.is_included(i) {
                let y = batch.y[i];
                let sign = if y { 1.0 } else { -1.0 };
                *g = sign * log_term(p_t(params.clamp(batch.p[i]), y), y) / n;
            }
        }
    }
    if matches!(id, LossId::Dice | LossId::DiceFocal) {
        let (inter, total) = dice_sums(batch);
        let num = 2.0 * inter + DICE_SMOOTH;
        let den = total + DICE_SMOOTH;
        for (i, g) in grad.iter_mut().enumerate() {
            if batch.is_included(i) {
                let r = if batch.y[i] { 1.0 } else { 0.0 };
                *g += (num - 2.0 * r * den) / (den * den);
            }
        }
    }
    Ok(grad)
}

/// Relative error between an analytic and a numeric derivative. The
/// denominator is floored at `1e-8` so components near zero are judged on
/// absolute error.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Largest relative error of the analytic gradient against central
/// differences with step `h`, over all included pixels.
pub fn gradient_check(id: LossId, batch: &PixelBatch, params: &LossParams, h: f64) -> Result<f64> {
    let analytic = loss_gradient(id, batch, params)?;
    let mut worst: f64 = 0.0;
    let mut p = batch.p.clone();
    for i in 0..batch.len() {
        if !batch.is_included(i) {
            continue;
        }
        let orig = p[i];
        p[i] = orig + h;
        let up = loss(id, &batch.with_probs(p.clone())?, params)?;
        p[i] = orig - h;
        let down = loss(id, &batch.with_probs(p.clone())?, params)?;
        p[i] = orig;
        worst = worst.max(relative_error(analytic[i], (up - down) / (2.0 * h)));
    }
    Ok(worst)
}

/// A batch with probabilities drawn in `[0.02, 0.98]`, about a third of the
/// labels positive and one pixel in eight excluded.
pub fn random_batch(rng: &mut impl Rng, len: usize) -> PixelBatch {
    let p = (0..len).map(|_| rng.gen_range(0.02..0.98)).collect();
    let y = (0..len).map(|_| rng.gen_bool(0.35)).collect();
    let mut w: Vec<bool> = (0..len).map(|_| rng.gen_bool(0.875)).collect();
    w[0] = true;
    PixelBatch::new(p, y, Some(w)).expect("valid random batch")
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckRow {
    fn new(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        CheckRow {
            name: name.into(),
            value,
            tolerance,
            passed: value.is_finite() && value <= tolerance,
        }
    }
}

/// Oracle and gradient checks run by `resseg losses-check`. Each row holds an
/// error measure and the tolerance it must not exceed.
pub fn self_check(seed: u64, batches: usize) -> Result<Vec<CheckRow>> {
    let params = LossParams::default();
    let mut rows = Vec::new();

    let half = PixelBatch::new(vec![0.5; 4], vec![true, false, true, false], None)?;
    rows.push(CheckRow::new(
        "bce(0.5) = ln 2",
        (bce(&half, &params)? - std::f64::consts::LN_2).abs(),
        1e-12,
    ));
    let hand = PixelBatch::new(vec![0.5, 0.5], vec![true, false], None)?;
    rows.push(CheckRow::new(
        "dice([.5,.5],[1,0]) = 0.5",
        (dice_loss(&hand)? - 0.5).abs(),
        1e-7,
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reduction = LossParams {
        alpha: 0.5,
        gamma: 0.0,
        ..params
    };
    let mut focal_gap: f64 = 0.0;
    let mut worst = [0.0f64; LossId::ALL.len()];
    for _ in 0..batches {
        let len = rng.gen_range(8..64);
        let batch = random_batch(&mut rng, len);
        focal_gap = focal_gap.max((focal(&batch, &reduction)? - 0.5 * bce(&batch, &params)?).abs());
        for (k, id) in LossId::ALL.into_iter().enumerate() {
            worst[k] = worst[k].max(gradient_check(id, &batch, &params, 1e-5)?);
        }
    }
    rows.push(CheckRow::new(
        "focal(gamma=0, alpha=0.5) = bce/2",
        focal_gap,
        1e-12,
    ));
    for (k, id) in LossId::ALL.into_iter().enumerate() {
        rows.push(CheckRow::new(format!("gradient {id}"), worst[k], 1e-6));
    }
    Ok(rows)
}
