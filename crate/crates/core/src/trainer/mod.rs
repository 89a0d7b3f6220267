//! Training loop for [`TinyFcn`]: seeded shuffling and flips, minibatch Adam,
//! a plateau learning-rate schedule and early stopping on validation loss.

pub mod backend;
pub mod model;
pub mod optim;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{loss, loss_gradient, LossId, LossParams, PixelBatch};
use crate::metrics::{confusion, f1, ConfusionCounts};
use crate::raster::{threshold, BinaryMask, Raster};
use crate::tiling::augment_flip;

pub use backend::{
    predict_patches, predict_tiled, ConstantBackend, ExternalBackend, IntensityBackend,
    SegmenterBackend,
};
pub use model::{param_count, Sample, TinyFcn, DEFAULT_WIDTHS};
pub use optim::{
    adam_step, early_stop_check, lr_schedule_update, lr_trace, AdamState, PlateauConfig,
    PlateauScheduler,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub min_lr: f64,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Probability of a flip, drawn independently per axis.
    pub flip_rate: f64,
    pub loss: LossId,
    pub alpha: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 1e-3,
            plateau_factor: 0.2,
            plateau_patience: 5,
            min_lr: 1e-7,
            early_stop_patience: 20,
            max_epochs: 100,
            batch_size: 4,
            flip_rate: 0.5,
            loss: LossId::DiceFocal,
            alpha: 0.25,
            gamma: 2.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what, msg: String| Err(Error::invalid(what, msg));
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad(
                "plateau_factor",
                format!("{} is outside (0, 1)", self.plateau_factor),
            );
        }
        if !(self.min_lr > 0.0 && self.min_lr < self.initial_lr && self.initial_lr.is_finite()) {
            return bad(
                "initial_lr",
                format!(
                    "need 0 < min_lr ({}) < initial_lr ({})",
                    self.min_lr, self.initial_lr
                ),
            );
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return bad("patience", "patience values must be at least 1".into());
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return bad(
                "max_epochs",
                "epochs and batch size must be at least 1".into(),
            );
        }
        if !(0.0..=1.0).contains(&self.flip_rate) {
            return bad("flip_rate", format!("{} is outside [0, 1]", self.flip_rate));
        }
        self.loss_params().validate()
    }

    pub fn loss_params(&self) -> LossParams {
        LossParams {
            alpha: self.alpha,
            gamma: self.gamma,
            ..LossParams::default()
        }
    }

    pub fn plateau(&self) -> PlateauConfig {
        PlateauConfig {
            factor: self.plateau_factor,
            patience: self.plateau_patience,
            min_lr: self.min_lr,
        }
    }
}

/// A labelled patch; `valid` marks real (non-padded) pixels when present.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub raster: Raster,
    pub mask: BinaryMask,
    pub valid: Option<BinaryMask>,
}

impl TrainItem {
    pub fn new(raster: Raster, mask: BinaryMask, valid: Option<BinaryMask>) -> Result<Self> {
        mask.ensure_same_dims((raster.height(), raster.width()))?;
        if let Some(v) = &valid {
            mask.ensure_same_dims(v.dims())?;
        }
        Ok(TrainItem {
            raster,
            mask,
            valid,
        })
    }

    pub fn sample(&self) -> Result<Sample> {
        Sample::new(&self.raster, &self.mask, self.valid.as_ref())
    }

    fn flipped_sample(&self, horizontal: bool, vertical: bool) -> Result<Sample> {
        if !horizontal && !vertical {
            return self.sample();
        }
        let valid = self
            .valid
            .as_ref()
            .map(|v| augment_flip(v, horizontal, vertical));
        Sample::new(
            &augment_flip(&self.raster, horizontal, vertical),
            &augment_flip(&self.mask, horizontal, vertical),
            valid.as_ref(),
        )
    }
}

fn pixel_batch(samples: &[Sample], probs: Vec<f64>) -> Result<PixelBatch> {
    let labels = samples
        .iter()
        .flat_map(|s| s.labels.iter().copied())
        .collect();
    let weight = samples.iter().any(|s| s.weight.is_some()).then(|| {
        samples
            .iter()
            .flat_map(|s| match &s.weight {
                Some(w) => w.clone(),
                None => vec![true; s.labels.len()],
            })
            .collect()
    });
    PixelBatch::new(probs, labels, weight)
}

fn check_channels(widths: &[usize], samples: &[Sample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::invalid("minibatch", "no samples"));
    }
    for s in samples {
        if s.channels() != widths[0] {
            return Err(Error::invalid(
                "minibatch",
                format!(
                    "model expects {} channels, sample has {}",
                    widths[0],
                    s.channels()
                ),
            ));
        }
    }
    Ok(())
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("{what} is {v}")))
    }
}

/// Loss of a minibatch, taken over all its pixels at once.
pub fn batch_loss(
    widths: &[usize],
    params: &[f64],
    samples: &[Sample],
    id: LossId,
    lp: &LossParams,
) -> Result<f64> {
    check_channels(widths, samples)?;
    let probs: Vec<f64> = samples
        .par_iter()
        .map(|s| model::forward(widths, params, &s.input, s.height, s.width).probs)
        .collect::<Vec<_>>()
        .concat();
    finite(loss(id, &pixel_batch(samples, probs)?, lp)?, "loss")
}

/// Minibatch loss and its gradient with respect to every parameter.
pub fn loss_and_gradients(
    widths: &[usize],
    params: &[f64],
    samples: &[Sample],
    id: LossId,
    lp: &LossParams,
) -> Result<(f64, Vec<f64>)> {
    check_channels(widths, samples)?;
    let caches: Vec<_> = samples
        .par_iter()
        .map(|s| model::forward(widths, params, &s.input, s.height, s.width))
        .collect();
    let probs = caches
        .iter()
        .flat_map(|c| c.probs.iter().copied())
        .collect();
    let batch = pixel_batch(samples, probs)?;
    let value = finite(loss(id, &batch, lp)?, "loss")?;
    let d_probs = loss_gradient(id, &batch, lp)?;

    let mut starts = Vec::with_capacity(samples.len());
    let mut at = 0;
    for s in samples {
        starts.push(at);
        at += s.labels.len();
    }
    let per_sample: Vec<Vec<f64>> = samples
        .par_iter()
        .zip(&caches)
        .zip(&starts)
        .map(|((s, cache), &start)| {
            let d = &d_probs[start..start + s.labels.len()];
            model::backward(widths, params, cache, d, s.height, s.width)
        })
        .collect();
    let mut grads = vec![0.0; params.len()];
    for g in &per_sample {
        for (acc, v) in grads.iter_mut().zip(g) {
            *acc += v;
        }
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    Ok((value, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Rate used during this epoch.
    pub lr: f64,
}

pub const HISTORY_HEADER: &str = "epoch\ttrain_loss\tval_loss\tlr";

/// One line per epoch under [`HISTORY_HEADER`]; floats print in shortest
/// round-trip form.
pub fn format_history(rows: &[HistoryRow]) -> String {
    let mut out = format!("{HISTORY_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            r.epoch, r.train_loss, r.val_loss, r.lr
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: TinyFcn,
    pub history: Vec<HistoryRow>,
    pub stopped_early: bool,
}

fn mean_loss(
    widths: &[usize],
    params: &[f64],
    samples: &[Sample],
    cfg: &TrainConfig,
) -> Result<f64> {
    let lp = cfg.loss_params();
    let mut sum = 0.0;
    let mut n = 0;
    for chunk in samples.chunks(cfg.batch_size) {
        sum += batch_loss(widths, params, chunk, cfg.loss, &lp)?;
        n += 1;
    }
    Ok(sum / n as f64)
}

pub fn train(
    model: TinyFcn,
    train_set: &[TrainItem],
    val_set: &[TrainItem],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with(model, train_set, val_set, cfg, |_| {})
}

/// Trains `model`, calling `on_epoch` after each epoch. Runs are bit-for-bit
/// reproducible for a fixed `cfg.seed`.
pub fn train_with(
    mut model: TinyFcn,
    train_set: &[TrainItem],
    val_set: &[TrainItem],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&HistoryRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::invalid(
            "dataset",
            "training and validation sets must be non-empty",
        ));
    }
    let widths = model.widths().to_vec();
    let lp = cfg.loss_params();
    let val_samples = val_set
        .iter()
        .map(TrainItem::sample)
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(model.params().len());
    let mut sched = PlateauScheduler::new(cfg.initial_lr, cfg.plateau());
    let mut history = Vec::new();
    let mut val_losses = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let lr = sched.lr();
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let samples = chunk
                .iter()
                .map(|&i| {
                    let h = rng.gen_bool(cfg.flip_rate);
                    let v = rng.gen_bool(cfg.flip_rate);
                    train_set[i].flipped_sample(h, v)
                })
                .collect::<Result<Vec<_>>>()?;
            let (value, grads) =
                loss_and_gradients(&widths, &model.params_f64(), &samples, cfg.loss, &lp).map_err(
                    |e| match e {
                        Error::Numeric(msg) => {
                            Error::Numeric(format!("epoch {epoch}, batch {b}: {msg}"))
                        }
                        other => other,
                    },
                )?;
            adam_step(model.params_mut(), &grads, &mut adam, lr)?;
            sum += value;
            batches += 1;
        }
        let val_loss = mean_loss(&widths, &model.params_f64(), &val_samples, cfg)
            .map_err(|e| Error::Numeric(format!("epoch {epoch}, validation: {e}")))?;
        let row = HistoryRow {
            epoch,
            train_loss: sum / batches as f64,
            val_loss,
            lr,
        };
        on_epoch(&row);
        history.push(row);
        val_losses.push(val_loss);
        sched.observe(val_loss);
        if early_stop_check(&val_losses, cfg.early_stop_patience) {
            return Ok(TrainOutcome {
                model,
                history,
                stopped_early: true,
            });
        }
    }
    Ok(TrainOutcome {
        model,
        history,
        stopped_early: false,
    })
}

/// Pooled confusion counts of thresholded predictions over the valid pixels
/// of `items`.
pub fn evaluate_counts(
    backend: &dyn SegmenterBackend,
    items: &[TrainItem],
    t: f64,
) -> Result<ConfusionCounts> {
    let counts = items
        .par_iter()
        .map(|item| {
            let pred = threshold(&backend.predict(&item.raster)?, t)?;
            confusion(&pred, &item.mask, item.valid.as_ref())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(counts
        .into_iter()
        .fold(ConfusionCounts::default(), |a, b| a + b))
}

pub fn evaluate_f1(backend: &dyn SegmenterBackend, items: &[TrainItem], t: f64) -> Result<f64> {
    Ok(f1(&evaluate_counts(backend, items, t)?).value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoMeta;

    fn tiny_set(n: usize, seed: u64) -> Vec<TrainItem> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let (r0, c0) = (rng.gen_range(0..6), rng.gen_range(0..6));
                let mask = BinaryMask::from_fn(10, 10, GeoMeta::default(), |r, c| {
                    (r0..r0 + 4).contains(&r) && (c0..c0 + 4).contains(&c)
                })
                .unwrap();
                let data = mask
                    .bits()
                    .iter()
                    .map(|&b| if b { 200 } else { rng.gen_range(0..80) })
                    .collect();
                let raster = Raster::new(10, 10, 1, data, GeoMeta::default()).unwrap();
                TrainItem::new(raster, mask, None).unwrap()
            })
            .collect()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            max_epochs: 3,
            initial_lr: 1e-2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            plateau_factor: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            min_lr: 1e-2,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn same_seed_same_history() {
        let data = tiny_set(6, 1);
        let model = TinyFcn::new(&[1, 4, 4, 1], 2).unwrap();
        let a = train(model.clone(), &data[..4], &data[4..], &small_cfg()).unwrap();
        let b = train(model, &data[..4], &data[4..], &small_cfg()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.history.len(), 3);
    }

    #[test]
    fn zero_input_gives_zero_first_layer_weight_gradient() {
        let widths = [1, 3, 3, 1];
        let model = TinyFcn::new(&widths, 4).unwrap();
        let raster = Raster::filled(8, 8, 1, 0, GeoMeta::default()).unwrap();
        let mask = BinaryMask::from_fn(8, 8, GeoMeta::default(), |r, _| r < 3).unwrap();
        let s = Sample::new(&raster, &mask, None).unwrap();
        let (_, g) = loss_and_gradients(
            &widths,
            &model.params_f64(),
            &[s],
            LossId::Bce,
            &LossParams::default(),
        )
        .unwrap();
        assert!(g[..9 * 3].iter().all(|&v| v == 0.0));
        // the output bias always receives gradient
        assert_ne!(*g.last().unwrap(), 0.0);
    }

    #[test]
    fn history_format() {
        let rows = [HistoryRow {
            epoch: 1,
            train_loss: 0.5,
            val_loss: 0.25,
            lr: 0.001,
        }];
        assert_eq!(
            format_history(&rows),
            "epoch\ttrain_loss\tval_loss\tlr\n1\t0.5\t0.25\t0.001\n"
        );
    }

    #[test]
    fn empty_sets_rejected() {
        let data = tiny_set(2, 3);
        let model = TinyFcn::new(&[1, 4, 4, 1], 2).unwrap();
        assert!(train(model, &data, &[], &small_cfg()).is_err());
    }
}
