//! Mini-batch training of the LSTM predictor.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Error, Result};
use crate::rng::{channel, rng_for};

use super::adam::{Adam, AdamConfig};
use super::lstm::{forward, sample_loss_grad, Centering, LstmModel, Normalization, Tape};
use super::WINDOW_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden_size: usize,
    pub window_len: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    /// Windows per optimizer step; 0 means the whole training set.
    pub batch_size: usize,
    /// Offset between consecutive training windows.
    pub stride: usize,
    /// Trailing fraction of every series held out for validation.
    pub val_fraction: f64,
    pub centering: Centering,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_size: 16,
            window_len: WINDOW_LEN,
            epochs: 300,
            learning_rate: 0.005,
            adam: AdamConfig::default(),
            batch_size: 64,
            stride: 2,
            val_fraction: 0.2,
            centering: Centering::Window,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.hidden_size == 0 || self.window_len == 0 || self.stride == 0 {
            return Err(invalid("train", "epochs, hidden_size, window_len and stride must be positive"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(invalid("train", "learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(invalid("train", "val_fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss per epoch (normalized units).
    pub train_loss: Vec<f64>,
    /// Validation loss per epoch; empty without validation windows.
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    /// Validation MSE of the returned model in mm².
    pub final_val_mse: Option<f64>,
    pub n_train: usize,
    pub n_val: usize,
}

struct Windows {
    xs: Vec<f64>,
    ys: Vec<f64>,
    len: usize,
}

impl Windows {
    fn count(&self) -> usize {
        self.ys.len()
    }
    fn x(&self, k: usize) -> &[f64] {
        &self.xs[k * self.len..(k + 1) * self.len]
    }
}

/// Window start indices of one series, split chronologically. Validation
/// windows are those whose target lies in the trailing part.
fn split_starts(n: usize, w: usize, stride: usize, val_fraction: f64) -> (Vec<usize>, Vec<usize>) {
    if n <= w {
        return (Vec::new(), Vec::new());
    }
    let split = ((n as f64) * (1.0 - val_fraction)).floor() as usize;
    let split = split.clamp(w + 1, n);
    let train = (0..).map(|k| k * stride).take_while(|&s| s + w < split).collect();
    let val = (split.saturating_sub(w)..n - w).collect();
    (train, val)
}

fn normalization(series: &[Vec<f64>], starts: &[Vec<usize>], w: usize, centering: Centering) -> Normalization {
    let windows = || {
        series
            .iter()
            .zip(starts)
            .flat_map(move |(s, st)| st.iter().map(move |&i| (&s[i..i + w], &s[i..=i + w])))
    };
    let (mut total, mut n) = (0.0, 0usize);
    for (_, with_target) in windows() {
        total += with_target.iter().sum::<f64>();
        n += with_target.len();
    }
    let mean = total / n.max(1) as f64;
    let mut sq = 0.0;
    for (input, with_target) in windows() {
        let c = match centering {
            Centering::Window => input.iter().sum::<f64>() / w as f64,
            Centering::Global => mean,
        };
        sq += with_target.iter().map(|v| (v - c).powi(2)).sum::<f64>();
    }
    let sd = (sq / n.max(1) as f64).sqrt();
    Normalization {
        centering,
        mean,
        scale: if sd > 1e-12 { sd } else { 1.0 },
    }
}

fn build(series: &[Vec<f64>], starts: &[Vec<usize>], w: usize, norm: &Normalization) -> Windows {
    let mut out = Windows {
        xs: Vec::new(),
        ys: Vec::new(),
        len: w,
    };
    for (s, st) in series.iter().zip(starts) {
        for &i in st {
            let win = &s[i..i + w];
            let c = norm.center_of(win);
            out.xs.extend(win.iter().map(|v| (v - c) / norm.scale));
            out.ys.push((s[i + w] - c) / norm.scale);
        }
    }
    out
}

fn mean_loss(params: &[f64], hidden: usize, data: &Windows, tape: &mut Tape) -> f64 {
    let mut total = 0.0;
    for k in 0..data.count() {
        let r = forward(params, hidden, data.x(k), tape) - data.ys[k];
        total += r * r;
    }
    total / data.count() as f64
}

/// Trains a one-step-ahead model on raw ILM series (mm, uniform sampling).
/// The parameters with the lowest validation loss are returned.
pub fn lstm_train(series: &[Vec<f64>], cfg: &TrainConfig) -> Result<(LstmModel, TrainReport)> {
    cfg.validate()?;
    let w = cfg.window_len;
    if !series.iter().any(|s| s.len() > w + 1) {
        return Err(Error::InsufficientData {
            needed: w + 2,
            got: series.iter().map(Vec::len).max().unwrap_or(0),
        });
    }
    for s in series {
        ensure_finite("training series", s)?;
    }
    let (train_starts, val_starts): (Vec<_>, Vec<_>) = series
        .iter()
        .map(|s| split_starts(s.len(), w, cfg.stride, cfg.val_fraction))
        .unzip();
    let norm = normalization(series, &train_starts, w, cfg.centering);
    let train = build(series, &train_starts, w, &norm);
    let val = build(series, &val_starts, w, &norm);
    if train.count() == 0 {
        return Err(Error::InsufficientData { needed: w + 2, got: 0 });
    }

    let mut model = LstmModel::init(cfg.hidden_size, w, norm, cfg.seed)?;
    let h = cfg.hidden_size;
    let mut opt = Adam::new(model.param_count(), cfg.learning_rate, cfg.adam);
    let mut grad = vec![0.0; model.param_count()];
    let mut tape = Tape::default();
    let mut order: Vec<usize> = (0..train.count()).collect();
    let mut rng = rng_for(cfg.seed, 0, channel::LSTM_SHUFFLE);
    let batch = if cfg.batch_size == 0 { train.count() } else { cfg.batch_size };

    let mut report = TrainReport {
        train_loss: Vec::with_capacity(cfg.epochs),
        val_loss: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
        final_val_mse: None,
        n_train: train.count(),
        n_val: val.count(),
    };
    let mut best = (f64::INFINITY, model.params.clone());
    for epoch in 0..cfg.epochs {
        if batch < train.count() {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let weight = 1.0 / chunk.len() as f64;
            for &k in chunk {
                epoch_loss += sample_loss_grad(&model.params, h, train.x(k), train.ys[k], weight, &mut tape, &mut grad);
            }
            opt.step(&mut model.params, &grad);
        }
        let epoch_loss = epoch_loss / train.count() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Diverged { epoch, loss: epoch_loss });
        }
        report.train_loss.push(epoch_loss);
        let score = if val.count() > 0 {
            let v = mean_loss(&model.params, h, &val, &mut tape);
            if !v.is_finite() {
                return Err(Error::Diverged { epoch, loss: v });
            }
            report.val_loss.push(v);
            v
        } else {
            epoch_loss
        };
        if score < best.0 {
            best = (score, model.params.clone());
            report.best_epoch = epoch;
        }
    }
    model.params = best.1;
    if val.count() > 0 {
        report.final_val_mse = Some(best.0 * model.norm.scale * model.norm.scale);
    }
    Ok((model, report))
}
