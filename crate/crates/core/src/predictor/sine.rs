//! FFT sine-wave baseline: dominant frequency from a zero-padded spectrum,
//! then a least-squares sinusoid over the window, continued one step ahead.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Error, Result};

use super::{Predictor, SequenceWindow};

pub const FFT_PAD: usize = 256;

/// Half-width of the frequency refinement band around the spectral peak (Hz).
const REFINE_HALF_WIDTH_HZ: f64 = 0.1;
const REFINE_GRID: usize = 201;

/// `offset + amplitude·sin(2π·frequency·t + phase)` with `t` in absolute seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SineFit {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
    pub offset: f64,
}

pub fn sine_predict(fit: &SineFit, t_next: f64) -> f64 {
    if fit.amplitude == 0.0 {
        return fit.offset;
    }
    fit.offset + fit.amplitude * (2.0 * PI * fit.frequency * t_next + fit.phase).sin()
}

/// Least-squares `c + a·sin(ωτ) + b·cos(ωτ)` over the window. Returns the
/// coefficients and the residual sum of squares.
fn ls_at(values: &[f64], tau: &[f64], f: f64) -> Option<([f64; 3], f64)> {
    let w = 2.0 * PI * f;
    let mut ata = [[0.0f64; 3]; 3];
    let mut aty = [0.0f64; 3];
    for (&y, &t) in values.iter().zip(tau) {
        let row = [1.0, (w * t).sin(), (w * t).cos()];
        for i in 0..3 {
            aty[i] += row[i] * y;
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    let x = solve3(ata, aty)?;
    let rss = values
        .iter()
        .zip(tau)
        .map(|(&y, &t)| {
            let r = y - (x[0] + x[1] * (w * t).sin() + x[2] * (w * t).cos());
            r * r
        })
        .sum();
    Some((x, rss))
}

/// Gaussian elimination with partial pivoting; `None` if singular.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-13 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..3 {
            let m = a[r][col] / a[col][col];
            for c in col..3 {
                a[r][c] -= m * a[col][c];
            }
            b[r] -= m * b[col];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        let s: f64 = (r + 1..3).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Peak frequency of the mean-removed, zero-padded spectrum with parabolic
/// interpolation on the magnitude.
fn spectral_peak(values: &[f64], rate_hz: f64) -> f64 {
    let n = values.len().max(FFT_PAD).next_power_of_two();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|i| Complex::new(values.get(i).map_or(0.0, |v| v - mean), 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let mag: Vec<f64> = buf[..=n / 2].iter().map(|c| c.norm()).collect();
    let k = (1..mag.len())
        .max_by(|&i, &j| mag[i].total_cmp(&mag[j]).then(j.cmp(&i)))
        .unwrap_or(1);
    let delta = if k + 1 < mag.len() {
        let (a, b, c) = (mag[k - 1], mag[k], mag[k + 1]);
        let den = a - 2.0 * b + c;
        if den < 0.0 {
            (0.5 * (a - c) / den).clamp(-0.5, 0.5)
        } else {
            0.0
        }
    } else {
        0.0
    };
    (k as f64 + delta) * rate_hz / n as f64
}

/// Fits a sinusoid to `values` sampled at `rate_hz` with the last sample at
/// `t_last`.
///
/// The spectral peak seeds a one-dimensional search that minimizes the
/// residual of a joint offset/sine/cosine least-squares fit.
pub fn fft_fit_values(values: &[f64], t_last: f64, rate_hz: f64) -> Result<SineFit> {
    if !(rate_hz > 0.0) || !rate_hz.is_finite() {
        return Err(invalid("fft fit", format!("sample rate {rate_hz} must be positive")));
    }
    if values.len() < 4 {
        return Err(Error::InsufficientData {
            needed: 4,
            got: values.len(),
        });
    }
    ensure_finite("fft window", values)?;
    ensure_finite("fft window time", &[t_last])?;
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let spread = values.iter().fold(0.0f64, |m, v| m.max((v - mean).abs()));
    if spread <= 1e-12 * mean.abs().max(1.0) {
        return Ok(SineFit {
            amplitude: 0.0,
            frequency: 0.0,
            phase: 0.0,
            offset: mean,
        });
    }
    let dt = 1.0 / rate_hz;
    let mid = (n - 1) as f64 / 2.0;
    let tau: Vec<f64> = (0..n).map(|i| (i as f64 - mid) * dt).collect();
    let t_mid = t_last - mid * dt;

    let f_lo = 0.01;
    let f_hi = rate_hz / 2.0 - 0.01;
    let f0 = spectral_peak(values, rate_hz).clamp(f_lo, f_hi);
    let lo = (f0 - REFINE_HALF_WIDTH_HZ).max(f_lo);
    let hi = (f0 + REFINE_HALF_WIDTH_HZ).min(f_hi);
    let step = (hi - lo) / (REFINE_GRID - 1) as f64;
    let rss = |f: f64| ls_at(values, &tau, f).map_or(f64::INFINITY, |r| r.1);
    let mut best = (f0, rss(f0));
    for i in 0..REFINE_GRID {
        let f = lo + i as f64 * step;
        let r = rss(f);
        if r < best.1 {
            best = (f, r);
        }
    }
    let f = golden_min(&rss, (best.0 - step).max(f_lo), (best.0 + step).min(f_hi), best);

    let Some((x, _)) = ls_at(values, &tau, f) else {
        return Ok(SineFit {
            amplitude: 0.0,
            frequency: 0.0,
            phase: 0.0,
            offset: mean,
        });
    };
    let [c, a, b] = x;
    // a·sin(ωτ) + b·cos(ωτ) = A·sin(ωτ + ψ) with τ = t − t_mid.
    let amplitude = a.hypot(b);
    let psi = b.atan2(a);
    let phase = (psi - 2.0 * PI * f * t_mid).rem_euclid(2.0 * PI);
    Ok(SineFit {
        amplitude,
        frequency: f,
        phase,
        offset: c,
    })
}

fn golden_min(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, seed: (f64, f64)) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
        if b - a < 1e-15 {
            break;
        }
    }
    let x = 0.5 * (a + b);
    if f(x) <= seed.1 {
        x
    } else {
        seed.0
    }
}

pub fn fft_fit(window: &SequenceWindow, rate_hz: f64) -> Result<SineFit> {
    fft_fit_values(window.values(), window.t_last(), rate_hz)
}

/// Sine baseline as a one-step predictor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FftPredictor {
    pub rate_hz: f64,
}

impl Predictor for FftPredictor {
    fn name(&self) -> &'static str {
        "fft"
    }

    fn predict(&self, window: &SequenceWindow) -> Result<f64> {
        let fit = fft_fit(window, self.rate_hz)?;
        Ok(sine_predict(&fit, window.t_last() + 1.0 / self.rate_hz))
    }
}
