//! Single-layer LSTM with a scalar input and a linear read-out of the final
//! hidden state.
//!
//! Parameters live in one flat vector laid out as
//! `w_x[4H] | w_h[4H×H] (row-major) | b[4H] | fc_w[H] | fc_b`,
//! with gate blocks ordered input, forget, cell, output.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Error, Result};
use crate::rng::{channel, rng_for};

use super::{Predictor, SequenceWindow};

/// Reference level subtracted before scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    /// Mean of the window being predicted.
    Window,
    /// Training-set mean.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub centering: Centering,
    pub mean: f64,
    pub scale: f64,
}

impl Normalization {
    pub fn identity() -> Self {
        Self {
            centering: Centering::Global,
            mean: 0.0,
            scale: 1.0,
        }
    }

    pub fn center_of(&self, values: &[f64]) -> f64 {
        match self.centering {
            Centering::Window => values.iter().sum::<f64>() / values.len() as f64,
            Centering::Global => self.mean,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub h: usize,
}

impl Layout {
    pub fn len(self) -> usize {
        let h = self.h;
        4 * h + 4 * h * h + 4 * h + h + 1
    }
    pub fn wx(self) -> usize {
        0
    }
    pub fn wh(self) -> usize {
        4 * self.h
    }
    pub fn b(self) -> usize {
        4 * self.h + 4 * self.h * self.h
    }
    pub fn fc_w(self) -> usize {
        self.b() + 4 * self.h
    }
    pub fn fc_b(self) -> usize {
        self.fc_w() + self.h
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Dot product with four independent accumulators; the summation order is
/// fixed so results are reproducible.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[2]) + (acc[1] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Activations recorded by the forward pass, reused by the backward pass.
#[derive(Debug, Clone, Default)]
pub(crate) struct Tape {
    steps: usize,
    /// Post-activation gates per step, `[i | f | g | o]`.
    gates: Vec<f64>,
    c: Vec<f64>,
    tc: Vec<f64>,
    h: Vec<f64>,
    z: Vec<f64>,
    zeros: Vec<f64>,
    da: Vec<f64>,
    dh: Vec<f64>,
    dh_prev: Vec<f64>,
    dc_next: Vec<f64>,
}

impl Tape {
    fn reserve(&mut self, hidden: usize, steps: usize) {
        self.steps = steps;
        self.gates.resize(4 * hidden * steps, 0.0);
        self.c.resize(hidden * steps, 0.0);
        self.tc.resize(hidden * steps, 0.0);
        self.h.resize(hidden * steps, 0.0);
        self.z.resize(4 * hidden, 0.0);
        self.zeros.resize(hidden, 0.0);
        self.da.resize(4 * hidden, 0.0);
        self.dh.resize(hidden, 0.0);
        self.dh_prev.resize(hidden, 0.0);
        self.dc_next.resize(hidden, 0.0);
    }
}

/// Forward pass on normalized inputs; returns the normalized output.
pub(crate) fn forward(params: &[f64], hidden: usize, xs: &[f64], tape: &mut Tape) -> f64 {
    let l = Layout { h: hidden };
    let h = hidden;
    tape.reserve(h, xs.len());
    let wx = &params[l.wx()..l.wh()];
    let wh = &params[l.wh()..l.b()];
    let b = &params[l.b()..l.fc_w()];
    for (t, &x) in xs.iter().enumerate() {
        let (h_done, _) = tape.h.split_at(t * h);
        let hp: &[f64] = if t == 0 { &tape.zeros } else { &h_done[(t - 1) * h..] };
        for r in 0..4 * h {
            let rec = if t == 0 { 0.0 } else { dot(&wh[r * h..(r + 1) * h], hp) };
            tape.z[r] = b[r] + wx[r] * x + rec;
        }
        let g0 = 4 * h * t;
        for j in 0..h {
            let i = sigmoid(tape.z[j]);
            let f = sigmoid(tape.z[h + j]);
            let g = tape.z[2 * h + j].tanh();
            let o = sigmoid(tape.z[3 * h + j]);
            let c_prev = if t == 0 { 0.0 } else { tape.c[(t - 1) * h + j] };
            let c = f * c_prev + i * g;
            let tc = c.tanh();
            tape.gates[g0 + j] = i;
            tape.gates[g0 + h + j] = f;
            tape.gates[g0 + 2 * h + j] = g;
            tape.gates[g0 + 3 * h + j] = o;
            tape.c[t * h + j] = c;
            tape.tc[t * h + j] = tc;
            tape.h[t * h + j] = o * tc;
        }
    }
    let last = (xs.len() - 1) * h;
    params[l.fc_b()] + dot(&params[l.fc_w()..l.fc_b()], &tape.h[last..last + h])
}

/// Back-propagates `dout = ∂L/∂output` through the recorded pass and
/// accumulates parameter gradients into `grad`.
pub(crate) fn backward(params: &[f64], hidden: usize, xs: &[f64], tape: &mut Tape, dout: f64, grad: &mut [f64]) {
    let l = Layout { h: hidden };
    let h = hidden;
    let steps = tape.steps;
    let last = (steps - 1) * h;
    let fc_w = &params[l.fc_w()..l.fc_b()];
    for j in 0..h {
        tape.dh[j] = fc_w[j] * dout;
        grad[l.fc_w() + j] += tape.h[last + j] * dout;
        tape.dc_next[j] = 0.0;
    }
    grad[l.fc_b()] += dout;
    let wh = &params[l.wh()..l.b()];
    for t in (0..steps).rev() {
        let g0 = 4 * h * t;
        for j in 0..h {
            let i = tape.gates[g0 + j];
            let f = tape.gates[g0 + h + j];
            let g = tape.gates[g0 + 2 * h + j];
            let o = tape.gates[g0 + 3 * h + j];
            let tc = tape.tc[t * h + j];
            let c_prev = if t == 0 { 0.0 } else { tape.c[(t - 1) * h + j] };
            let dh = tape.dh[j];
            let d_o = dh * tc;
            let dc = dh * o * (1.0 - tc * tc) + tape.dc_next[j];
            tape.dc_next[j] = dc * f;
            tape.da[j] = dc * g * i * (1.0 - i);
            tape.da[h + j] = dc * c_prev * f * (1.0 - f);
            tape.da[2 * h + j] = dc * i * (1.0 - g * g);
            tape.da[3 * h + j] = d_o * o * (1.0 - o);
        }
        let x = xs[t];
        for r in 0..4 * h {
            grad[l.wx() + r] += tape.da[r] * x;
            grad[l.b() + r] += tape.da[r];
        }
        if t == 0 {
            break;
        }
        let hp = &tape.h[(t - 1) * h..t * h];
        let gwh = &mut grad[l.wh()..l.b()];
        tape.dh_prev.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..4 * h {
            let a = tape.da[r];
            axpy(&mut gwh[r * h..(r + 1) * h], a, hp);
            axpy(&mut tape.dh_prev, a, &wh[r * h..(r + 1) * h]);
        }
        std::mem::swap(&mut tape.dh, &mut tape.dh_prev);
    }
}

/// Squared-error loss of one window and its gradient contribution
/// (scaled by `weight`), all in normalized units.
pub(crate) fn sample_loss_grad(
    params: &[f64],
    hidden: usize,
    xs: &[f64],
    y: f64,
    weight: f64,
    tape: &mut Tape,
    grad: &mut [f64],
) -> f64 {
    let out = forward(params, hidden, xs, tape);
    let r = out - y;
    backward(params, hidden, xs, tape, 2.0 * r * weight, grad);
    r * r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmModel {
    pub hidden_size: usize,
    pub window_len: usize,
    pub norm: Normalization,
    pub params: Vec<f64>,
}

impl LstmModel {
    /// Uniform `±1/√H` initialization.
    pub fn init(hidden_size: usize, window_len: usize, norm: Normalization, seed: u64) -> Result<Self> {
        if hidden_size == 0 || window_len == 0 {
            return Err(invalid("lstm", "hidden_size and window_len must be positive"));
        }
        let n = Layout { h: hidden_size }.len();
        let k = 1.0 / (hidden_size as f64).sqrt();
        let mut rng = rng_for(seed, 0, channel::LSTM_INIT);
        let params = (0..n).map(|_| rng.random_range(-k..k)).collect();
        Ok(Self {
            hidden_size,
            window_len,
            norm,
            params,
        })
    }

    pub fn zeros(hidden_size: usize, window_len: usize, norm: Normalization) -> Self {
        Self {
            hidden_size,
            window_len,
            norm,
            params: vec![0.0; Layout { h: hidden_size }.len()],
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn fc_bias_mut(&mut self) -> &mut f64 {
        let i = Layout { h: self.hidden_size }.fc_b();
        &mut self.params[i]
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 || self.window_len == 0 {
            return Err(Error::Model("hidden_size and window_len must be positive".into()));
        }
        let expect = Layout { h: self.hidden_size }.len();
        if self.params.len() != expect {
            return Err(Error::Model(format!(
                "expected {expect} parameters for hidden_size {}, found {}",
                self.hidden_size,
                self.params.len()
            )));
        }
        if !(self.norm.scale > 0.0) || !self.norm.scale.is_finite() || !self.norm.mean.is_finite() {
            return Err(Error::Model("normalization must be finite with positive scale".into()));
        }
        ensure_finite("lstm parameters", &self.params)
    }

    /// One-step-ahead prediction from raw values (mm). Any window length is
    /// accepted; the trained length is `window_len`.
    pub fn predict_values(&self, values: &[f64]) -> Result<f64> {
        if values.is_empty() {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        ensure_finite("lstm window", values)?;
        let c = self.norm.center_of(values);
        let xs: Vec<f64> = values.iter().map(|v| (v - c) / self.norm.scale).collect();
        let mut tape = Tape::default();
        let out = forward(&self.params, self.hidden_size, &xs, &mut tape);
        Ok(c + self.norm.scale * out)
    }

    /// Squared error of one window against `target` (both mm), measured in
    /// normalized units, and its gradient with respect to `params`.
    pub fn loss_gradient(&self, values: &[f64], target: f64) -> Result<(f64, Vec<f64>)> {
        if values.is_empty() {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        ensure_finite("lstm window", values)?;
        ensure_finite("lstm target", &[target])?;
        let c = self.norm.center_of(values);
        let xs: Vec<f64> = values.iter().map(|v| (v - c) / self.norm.scale).collect();
        let y = (target - c) / self.norm.scale;
        let mut grad = vec![0.0; self.params.len()];
        let mut tape = Tape::default();
        let loss = sample_loss_grad(&self.params, self.hidden_size, &xs, y, 1.0, &mut tape, &mut grad);
        Ok((loss, grad))
    }
}

impl Predictor for LstmModel {
    fn name(&self) -> &'static str {
        "lstm"
    }

    fn predict(&self, window: &SequenceWindow) -> Result<f64> {
        self.predict_values(window.values())
    }
}
