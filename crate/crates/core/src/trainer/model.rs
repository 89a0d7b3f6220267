//! A small fully-convolutional network: 3×3 zero-padded convolutions, ReLU on
//! hidden layers and a sigmoid on the single output channel.
//!
//! Parameters are stored as `f32`; forward and backward passes run in `f64`.
//! The flat layout is, per layer, the weights `[out][in][3][3]` followed by
//! the `out` biases.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::raster::{BinaryMask, ProbMap, Raster};

pub const DEFAULT_WIDTHS: [usize; 5] = [3, 8, 16, 8, 1];
pub const MAX_PARAMS: usize = 20_000;

pub fn validate_widths(widths: &[usize]) -> Result<()> {
    let layers = widths.len().saturating_sub(1);
    if !(3..=5).contains(&layers) {
        return Err(Error::invalid(
            "layer widths",
            format!("need 3 to 5 convolution layers, got {layers}"),
        ));
    }
    if widths.contains(&0) {
        return Err(Error::invalid("layer widths", "widths must be positive"));
    }
    if *widths.last().unwrap() != 1 {
        return Err(Error::invalid(
            "layer widths",
            "the last layer must have width 1",
        ));
    }
    let n = param_count(widths);
    if n >= MAX_PARAMS {
        return Err(Error::invalid(
            "layer widths",
            format!("{n} parameters exceeds the limit of {MAX_PARAMS}"),
        ));
    }
    Ok(())
}

pub fn param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] * 9 + w[1]).sum()
}

/// Offsets of each layer's weights and biases in the flat parameter vector.
fn layer_offsets(widths: &[usize]) -> Vec<(usize, usize)> {
    let mut at = 0;
    widths
        .windows(2)
        .map(|w| {
            let weights = at;
            at += w[0] * w[1] * 9;
            let bias = at;
            at += w[1];
            (weights, bias)
        })
        .collect()
}

/// One training or inference example in planar `C×H×W` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub height: usize,
    pub width: usize,
    pub input: Vec<f64>,
    pub labels: Vec<bool>,
    /// Pixels that count towards the loss; all when `None`.
    pub weight: Option<Vec<bool>>,
}

impl Sample {
    pub fn new(raster: &Raster, labels: &BinaryMask, weight: Option<&BinaryMask>) -> Result<Self> {
        labels.ensure_same_dims((raster.height(), raster.width()))?;
        if let Some(w) = weight {
            labels.ensure_same_dims(w.dims())?;
        }
        Ok(Sample {
            height: raster.height(),
            width: raster.width(),
            input: raster.to_unit_planar(),
            labels: labels.bits().to_vec(),
            weight: weight.map(|w| w.bits().to_vec()),
        })
    }

    pub fn channels(&self) -> usize {
        self.input.len() / (self.height * self.width)
    }
}

fn row_span(h: usize, d: isize) -> std::ops::Range<usize> {
    let lo = (-d).max(0) as usize;
    let hi = (h as isize - d.max(0)).max(0) as usize;
    lo..hi.max(lo)
}

fn conv_forward(
    input: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let hw = h * w;
    let mut out = vec![0.0; bias.len() * hw];
    out.par_chunks_mut(hw).enumerate().for_each(|(o, out_o)| {
        out_o.fill(bias[o]);
        for i in 0..cin {
            let in_i = &input[i * hw..(i + 1) * hw];
            for k in 0..9 {
                let wv = weights[(o * cin + i) * 9 + k];
                let (dr, dc) = (k as isize / 3 - 1, k as isize % 3 - 1);
                let cols = row_span(w, dc);
                for r in row_span(h, dr) {
                    let src_row = (r as isize + dr) as usize * w;
                    let src = &in_i[(src_row as isize + cols.start as isize + dc) as usize..]
                        [..cols.len()];
                    let dst = &mut out_o[r * w + cols.start..r * w + cols.end];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += wv * s;
                    }
                }
            }
        }
    });
    out
}

/// Gradients of one convolution given the gradient at its output. Returns the
/// weight and bias gradients and, when requested, the gradient at its input.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    d_out: &[f64],
    cout: usize,
    want_input_grad: bool,
) -> (Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
    let hw = h * w;
    let mut d_w = vec![0.0; cout * cin * 9];
    d_w.par_chunks_mut(cin * 9)
        .enumerate()
        .for_each(|(o, dw_o)| {
            let g = &d_out[o * hw..(o + 1) * hw];
            for i in 0..cin {
                let in_i = &input[i * hw..(i + 1) * hw];
                for k in 0..9 {
                    let (dr, dc) = (k as isize / 3 - 1, k as isize % 3 - 1);
                    let cols = row_span(w, dc);
                    let mut acc = 0.0;
                    for r in row_span(h, dr) {
                        let src_row = (r as isize + dr) as usize * w;
                        let src = &in_i[(src_row as isize + cols.start as isize + dc) as usize..]
                            [..cols.len()];
                        let gr = &g[r * w + cols.start..r * w + cols.end];
                        acc += gr.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                    }
                    dw_o[i * 9 + k] = acc;
                }
            }
        });
    let d_b = (0..cout)
        .map(|o| d_out[o * hw..(o + 1) * hw].iter().sum())
        .collect();

    let d_in = want_input_grad.then(|| {
        let mut d_in = vec![0.0; cin * hw];
        d_in.par_chunks_mut(hw).enumerate().for_each(|(i, di)| {
            for o in 0..cout {
                let g = &d_out[o * hw..(o + 1) * hw];
                for k in 0..9 {
                    let wv = weights[(o * cin + i) * 9 + k];
                    let (dr, dc) = (k as isize / 3 - 1, k as isize % 3 - 1);
                    let cols = row_span(w, dc);
                    for r in row_span(h, dr) {
                        let dst_row = (r as isize + dr) as usize * w;
                        let dst = &mut di[(dst_row as isize + cols.start as isize + dc) as usize..]
                            [..cols.len()];
                        let gr = &g[r * w + cols.start..r * w + cols.end];
                        for (d, s) in dst.iter_mut().zip(gr) {
                            *d += wv * s;
                        }
                    }
                }
            }
        });
        d_in
    });
    (d_w, d_b, d_in)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Activations kept from a forward pass for backpropagation.
pub(crate) struct ForwardCache {
    /// Input to each layer; `acts[0]` is the sample input.
    acts: Vec<Vec<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<Vec<f64>>,
    pub(crate) probs: Vec<f64>,
}

pub(crate) fn forward(
    widths: &[usize],
    params: &[f64],
    input: &[f64],
    h: usize,
    w: usize,
) -> ForwardCache {
    let offsets = layer_offsets(widths);
    let last = offsets.len() - 1;
    let mut acts = vec![input.to_vec()];
    let mut pre = Vec::with_capacity(offsets.len());
    for (l, &(wo, bo)) in offsets.iter().enumerate() {
        let (cin, cout) = (widths[l], widths[l + 1]);
        let z = conv_forward(&acts[l], cin, h, w, &params[wo..bo], &params[bo..bo + cout]);
        if l < last {
            acts.push(z.iter().map(|&v| v.max(0.0)).collect());
        }
        pre.push(z);
    }
    let probs = pre[last].iter().map(|&z| sigmoid(z)).collect();
    ForwardCache { acts, pre, probs }
}

/// Parameter gradient of a sample given `d_probs`, the loss gradient with
/// respect to each output probability.
pub(crate) fn backward(
    widths: &[usize],
    params: &[f64],
    cache: &ForwardCache,
    d_probs: &[f64],
    h: usize,
    w: usize,
) -> Vec<f64> {
    let offsets = layer_offsets(widths);
    let last = offsets.len() - 1;
    let mut grads = vec![0.0; params.len()];
    let mut d: Vec<f64> = d_probs
        .iter()
        .zip(&cache.probs)
        .map(|(g, p)| g * p * (1.0 - p))
        .collect();
    for l in (0..=last).rev() {
        let (wo, bo) = offsets[l];
        let (cin, cout) = (widths[l], widths[l + 1]);
        let (d_w, d_b, d_in) =
            conv_backward(&cache.acts[l], cin, h, w, &params[wo..bo], &d, cout, l > 0);
        grads[wo..bo].copy_from_slice(&d_w);
        grads[bo..bo + cout].copy_from_slice(&d_b);
        if let Some(mut d_in) = d_in {
            for (g, z) in d_in.iter_mut().zip(&cache.pre[l - 1]) {
                if *z <= 0.0 {
                    *g = 0.0;
                }
            }
            d = d_in;
        }
    }
    grads
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyFcn {
    widths: Vec<usize>,
    params: Vec<f32>,
    seed: u64,
}

impl TinyFcn {
    /// Fan-in scaled uniform weights `U(-√(6/fan_in), √(6/fan_in))`, zero biases.
    pub fn new(widths: &[usize], seed: u64) -> Result<Self> {
        validate_widths(widths)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0f32; param_count(widths)];
        for (l, (wo, bo)) in layer_offsets(widths).into_iter().enumerate() {
            let bound = (6.0 / (widths[l] * 9) as f64).sqrt();
            for p in &mut params[wo..bo] {
                *p = rng.gen_range(-bound..bound) as f32;
            }
        }
        Ok(TinyFcn {
            widths: widths.to_vec(),
            params,
            seed,
        })
    }

    pub fn from_params(widths: &[usize], params: Vec<f32>, seed: u64) -> Result<Self> {
        validate_widths(widths)?;
        if params.len() != param_count(widths) {
            return Err(Error::invalid(
                "model parameters",
                format!(
                    "expected {} values, got {}",
                    param_count(widths),
                    params.len()
                ),
            ));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("non-finite model parameter".into()));
        }
        Ok(TinyFcn {
            widths: widths.to_vec(),
            params,
            seed,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params_f64(&self) -> Vec<f64> {
        self.params.iter().map(|&p| p as f64).collect()
    }

    pub fn in_channels(&self) -> usize {
        self.widths[0]
    }

    /// Output probabilities of one patch, row-major.
    pub fn predict_probs(&self, raster: &Raster) -> Result<Vec<f64>> {
        if raster.channels() != self.in_channels() {
            return Err(Error::invalid(
                "model input",
                format!(
                    "model expects {} channels, raster has {}",
                    self.in_channels(),
                    raster.channels()
                ),
            ));
        }
        let cache = forward(
            &self.widths,
            &self.params_f64(),
            &raster.to_unit_planar(),
            raster.height(),
            raster.width(),
        );
        Ok(cache.probs)
    }

    pub fn predict_map(&self, raster: &Raster) -> Result<ProbMap> {
        let probs = self.predict_probs(raster)?;
        ProbMap::new(
            raster.height(),
            raster.width(),
            probs.into_iter().map(|p| p as f32).collect(),
            raster.meta(),
        )
    }

    /// Writes `<path>` (little-endian f32 parameters) and its `.json` header.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.params.iter().flat_map(|p| p.to_le_bytes()).collect();
        write_atomic(path, &bytes)?;
        let header = CheckpointHeader {
            widths: self.widths.clone(),
            seed: self.seed,
            param_count: self.params.len(),
        };
        let text = serde_json::to_string_pretty(&header).expect("header serializes");
        write_atomic(&header_path(path), text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let hp = header_path(path);
        let text = std::fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
        let header: CheckpointHeader = serde_json::from_str(&text).map_err(|e| Error::Parse {
            offset: 0,
            msg: format!("{}: {e}", hp.display()),
        })?;
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() != header.param_count * 4 {
            return Err(Error::invalid(
                "checkpoint",
                format!(
                    "{} holds {} bytes, header declares {} parameters",
                    path.display(),
                    bytes.len(),
                    header.param_count
                ),
            ));
        }
        let params = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        TinyFcn::from_params(&header.widths, params, header.seed)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    widths: Vec<usize>,
    seed: u64,
    param_count: usize,
}

pub fn header_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}
