//! Ground-truth axial motion of the retina.
//!
//! The phantom is a continuous-time model: a breathing sinusoid with optional
//! slow amplitude/frequency modulation, a second harmonic, baseline drift and
//! a small jitter term. Traces are plain samples of that model, so any
//! consumer can evaluate it at its own rate.
//!
//! Depth convention: `+z` points deeper into the eye. The ILM is the shallow
//! boundary of the retina and the RPE sits `retina_thickness` below it.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Result};
use crate::rng::{channel, rng_for};
use crate::table::{fmt_sig, parse_f64, write_preamble, CsvTable};

/// Lattice spacing of the jitter process, in seconds.
pub const JITTER_LATTICE_S: f64 = 0.25;

/// Timing-jitter lattice nodes per nominal breathing cycle.
pub const TIMING_NODES_PER_CYCLE: f64 = 20.0;

const SQRT_3: f64 = 1.732_050_807_568_877_2;

/// Header of exported motion traces.
pub const TRACE_HEADER: &str = "t_s,ilm_mm,rpe_mm";

/// Converts a breathing rate in breaths per minute to Hz.
pub fn bpm_to_hz(rate_bpm: f64) -> Result<f64> {
    if !(rate_bpm.is_finite() && rate_bpm > 0.0) {
        return Err(invalid("breathing rate", format!("{rate_bpm} bpm must be positive")));
    }
    Ok(rate_bpm / 60.0)
}

/// Non-periodic content layered on top of the breathing sinusoid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisturbanceSpec {
    /// Maximum slope of the slow baseline wander (mm/s).
    pub drift_rate: f64,
    /// Depth of slow amplitude modulation, in `[0, 1)`.
    pub am_depth: f64,
    /// Depth of slow frequency modulation, in `[0, 1)`.
    pub fm_depth: f64,
    /// Second-harmonic amplitude as a fraction of the fundamental, in `[0, 1)`.
    pub harmonic2_frac: f64,
    /// Phase of the second harmonic relative to twice the breathing phase (rad).
    pub harmonic2_phase: f64,
    /// Standard deviation of the ground-truth jitter (mm).
    pub noise_sd: f64,
    /// Standard deviation of the bounded breathing-cycle timing jitter (s).
    /// Its lattice has `TIMING_NODES_PER_CYCLE` nodes per nominal cycle.
    pub timing_jitter_s: f64,
    pub seed: u64,
}

impl Default for DisturbanceSpec {
    fn default() -> Self {
        Self {
            drift_rate: 0.002,
            am_depth: 0.1,
            fm_depth: 0.05,
            harmonic2_frac: 0.15,
            harmonic2_phase: 1.0,
            noise_sd: 0.001,
            timing_jitter_s: 0.25,
            seed: 0,
        }
    }
}

impl DisturbanceSpec {
    /// A pure sinusoid.
    pub fn none() -> Self {
        Self {
            drift_rate: 0.0,
            am_depth: 0.0,
            fm_depth: 0.0,
            harmonic2_frac: 0.0,
            harmonic2_phase: 0.0,
            noise_sd: 0.0,
            timing_jitter_s: 0.0,
            seed: 0,
        }
    }

    pub fn is_none(&self) -> bool {
        self.drift_rate == 0.0
            && self.am_depth == 0.0
            && self.fm_depth == 0.0
            && self.harmonic2_frac == 0.0
            && self.noise_sd == 0.0
            && self.timing_jitter_s == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite(
            "disturbance",
            &[
                self.drift_rate,
                self.am_depth,
                self.fm_depth,
                self.harmonic2_frac,
                self.harmonic2_phase,
                self.noise_sd,
                self.timing_jitter_s,
            ],
        )?;
        for (name, v) in [
            ("am_depth", self.am_depth),
            ("fm_depth", self.fm_depth),
            ("harmonic2_frac", self.harmonic2_frac),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(invalid("disturbance", format!("{name} = {v} must lie in [0, 1)")));
            }
        }
        if self.drift_rate < 0.0 || self.noise_sd < 0.0 || self.timing_jitter_s < 0.0 {
            return Err(invalid(
                "disturbance",
                "drift_rate, noise_sd and timing_jitter_s must be non-negative",
            ));
        }
        Ok(())
    }
}

/// Parameters of the simulated eye phantom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionProfile {
    /// Half peak-to-peak amplitude (mm).
    pub amplitude: f64,
    pub rate_bpm: f64,
    /// Initial phase (rad).
    pub phase0: f64,
    /// Mean ILM depth in the robot frame (mm).
    pub baseline_ilm: f64,
    /// RPE depth minus ILM depth (mm).
    pub retina_thickness: f64,
    pub disturbance: DisturbanceSpec,
}

impl Default for MotionProfile {
    fn default() -> Self {
        Self {
            amplitude: 0.1,
            rate_bpm: 8.0,
            phase0: 0.0,
            baseline_ilm: 2.2,
            retina_thickness: 0.25,
            disturbance: DisturbanceSpec::default(),
        }
    }
}

impl MotionProfile {
    pub fn new(amplitude: f64, rate_bpm: f64) -> Self {
        Self {
            amplitude,
            rate_bpm,
            ..Self::default()
        }
    }

    pub fn frequency_hz(&self) -> f64 {
        self.rate_bpm / 60.0
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite(
            "motion profile",
            &[self.amplitude, self.rate_bpm, self.phase0, self.baseline_ilm, self.retina_thickness],
        )?;
        if self.amplitude < 0.0 {
            return Err(invalid("motion profile", "amplitude must be non-negative"));
        }
        bpm_to_hz(self.rate_bpm)?;
        if self.retina_thickness <= 0.0 {
            return Err(invalid("motion profile", "retina_thickness must be positive"));
        }
        self.disturbance.validate()
    }
}

/// True ILM and RPE depths at one instant (mm, robot frame).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerDepths {
    pub ilm: f64,
    pub rpe: f64,
}

/// Bounded slow modulation: a weighted sum of three low-frequency sinusoids.
#[derive(Debug, Clone, Copy)]
struct SlowModulation {
    weights: [f64; 3],
    freqs: [f64; 3],
    phases: [f64; 3],
}

impl SlowModulation {
    const WEIGHTS: [f64; 3] = [0.5, 0.3, 0.2];

    fn draw(seed: u64, chan: u64, min_hz: f64, max_hz: f64) -> Self {
        let mut rng = rng_for(seed, 0, chan);
        let mut freqs = [0.0; 3];
        let mut phases = [0.0; 3];
        for k in 0..3 {
            freqs[k] = rng.random_range(min_hz..max_hz);
            phases[k] = rng.random_range(0.0..TAU);
        }
        Self {
            weights: Self::WEIGHTS,
            freqs,
            phases,
        }
    }

    /// Value in `[-1, 1]`.
    fn value(&self, t: f64) -> f64 {
        (0..3)
            .map(|k| self.weights[k] * (TAU * self.freqs[k] * t + self.phases[k]).sin())
            .sum()
    }

    /// `∫₀ᵗ value(s) ds`.
    fn integral(&self, t: f64) -> f64 {
        (0..3)
            .map(|k| {
                let w = TAU * self.freqs[k];
                self.weights[k] * (self.phases[k].cos() - (w * t + self.phases[k]).cos()) / w
            })
            .sum()
    }
}

/// A profile with its random disturbance components resolved.
///
/// Construction draws a handful of numbers from the disturbance seed;
/// evaluation is a pure function of `t`.
#[derive(Debug, Clone)]
pub struct Phantom {
    profile: MotionProfile,
    am: SlowModulation,
    fm: SlowModulation,
    drift_periods: [f64; 2],
    drift_phases: [f64; 2],
}

impl Phantom {
    const DRIFT_WEIGHTS: [f64; 2] = [0.6, 0.4];

    pub fn new(profile: MotionProfile) -> Result<Self> {
        profile.validate()?;
        let seed = profile.disturbance.seed;
        let mut drift_rng = rng_for(seed, 0, channel::MOTION_DRIFT);
        let drift_periods = [drift_rng.random_range(60.0..240.0), drift_rng.random_range(60.0..240.0)];
        let drift_phases = [drift_rng.random_range(0.0..TAU), drift_rng.random_range(0.0..TAU)];
        Ok(Self {
            profile,
            am: SlowModulation::draw(seed, channel::MOTION_AM, 0.01, 0.04),
            fm: SlowModulation::draw(seed, channel::MOTION_FM, 0.005, 0.02),
            drift_periods,
            drift_phases,
        })
    }

    pub fn profile(&self) -> &MotionProfile {
        &self.profile
    }

    /// Breathing phase, with frequency modulation integrated exactly and the
    /// cycle timing perturbed by the jitter lattice.
    fn breathing_phase(&self, t: f64) -> f64 {
        let p = &self.profile;
        let d = &p.disturbance;
        let f0 = p.frequency_hz();
        let mut local = t;
        if d.fm_depth != 0.0 {
            local += d.fm_depth * self.fm.integral(t);
        }
        if d.timing_jitter_s != 0.0 {
            local += d.timing_jitter_s * self.lattice(t, channel::MOTION_TIMING, true, 1.0 / (TIMING_NODES_PER_CYCLE * f0));
        }
        TAU * f0 * local + p.phase0
    }

    fn drift(&self, t: f64) -> f64 {
        let rate = self.profile.disturbance.drift_rate;
        if rate == 0.0 {
            return 0.0;
        }
        // Each component's peak slope is `weight * rate`, so the sum never exceeds `rate`.
        (0..2)
            .map(|k| {
                let period = self.drift_periods[k];
                let phase = self.drift_phases[k];
                Self::DRIFT_WEIGHTS[k] * rate * period / TAU
                    * ((TAU * t / period + phase).sin() - phase.sin())
            })
            .sum()
    }

    /// Unit-variance lattice with nodes `spacing` seconds apart, linearly
    /// interpolated. Nodes are Gaussian, or uniform when `bounded`.
    fn lattice(&self, t: f64, chan: u64, bounded: bool, spacing: f64) -> f64 {
        let x = t / spacing;
        let i = x.floor();
        let frac = x - i;
        let node = |k: i64| -> f64 {
            let mut rng = rng_for(self.profile.disturbance.seed, k as u64, chan);
            if bounded {
                rng.random_range(-SQRT_3..SQRT_3)
            } else {
                rng.sample(StandardNormal)
            }
        };
        let g0 = node(i as i64);
        if frac == 0.0 {
            return g0;
        }
        let g1 = node(i as i64 + 1);
        g0 + (g1 - g0) * frac
    }

    fn jitter(&self, t: f64) -> f64 {
        let sd = self.profile.disturbance.noise_sd;
        if sd == 0.0 {
            return 0.0;
        }
        sd * self.lattice(t, channel::MOTION_JITTER, false, JITTER_LATTICE_S)
    }

    /// Ground-truth layer depths at time `t ≥ 0`.
    pub fn at(&self, t: f64) -> LayerDepths {
        let p = &self.profile;
        let d = &p.disturbance;
        let theta = self.breathing_phase(t);
        let mut wave = theta.sin();
        if d.harmonic2_frac != 0.0 {
            wave += d.harmonic2_frac * (2.0 * theta + d.harmonic2_phase).sin();
        }
        let envelope = if d.am_depth != 0.0 {
            p.amplitude * (1.0 + d.am_depth * self.am.value(t))
        } else {
            p.amplitude
        };
        let ilm = p.baseline_ilm + envelope * wave + self.drift(t) + self.jitter(t);
        LayerDepths {
            ilm,
            rpe: ilm + p.retina_thickness,
        }
    }
}

/// Evaluates the phantom once. Prefer [`Phantom`] when sampling repeatedly.
pub fn ground_truth_at(profile: &MotionProfile, t: f64) -> Result<LayerDepths> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(invalid("time", format!("t = {t} must be finite and non-negative")));
    }
    Ok(Phantom::new(*profile)?.at(t))
}

/// Uniformly sampled ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionTrace {
    pub t: Vec<f64>,
    pub ilm_z: Vec<f64>,
    pub rpe_z: Vec<f64>,
}

impl MotionTrace {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn to_csv(&self, comments: &[String]) -> String {
        let mut out = String::with_capacity(self.len() * 36);
        write_preamble(&mut out, comments, TRACE_HEADER);
        for i in 0..self.len() {
            out.push_str(&fmt_sig(self.t[i], 9));
            out.push(',');
            out.push_str(&fmt_sig(self.ilm_z[i], 9));
            out.push(',');
            out.push_str(&fmt_sig(self.rpe_z[i], 9));
            out.push('\n');
        }
        out
    }

    /// Parses a trace, returning it with its provenance comment lines.
    pub fn from_csv(text: &str) -> Result<(Self, Vec<String>)> {
        let table = CsvTable::parse(text, TRACE_HEADER)?;
        let mut trace = MotionTrace {
            t: Vec::with_capacity(table.rows.len()),
            ilm_z: Vec::with_capacity(table.rows.len()),
            rpe_z: Vec::with_capacity(table.rows.len()),
        };
        for (line, cells) in &table.rows {
            trace.t.push(parse_f64(*line, &cells[0])?);
            trace.ilm_z.push(parse_f64(*line, &cells[1])?);
            trace.rpe_z.push(parse_f64(*line, &cells[2])?);
        }
        Ok((trace, table.comments))
    }
}

/// Number of grid points for a trace of `duration` seconds at `rate_hz`.
pub fn trace_len(duration: f64, rate_hz: f64) -> usize {
    // The epsilon absorbs representation error in products such as 0.3 * 10.
    (duration * rate_hz + 1e-9).floor() as usize + 1
}

pub fn generate_trace(profile: &MotionProfile, duration: f64, rate_hz: f64) -> Result<MotionTrace> {
    ensure_finite("trace request", &[duration, rate_hz])?;
    if duration <= 0.0 || rate_hz <= 0.0 {
        return Err(invalid("trace request", "duration and rate must be positive"));
    }
    let phantom = Phantom::new(*profile)?;
    let n = trace_len(duration, rate_hz);
    let mut trace = MotionTrace {
        t: Vec::with_capacity(n),
        ilm_z: Vec::with_capacity(n),
        rpe_z: Vec::with_capacity(n),
    };
    for i in 0..n {
        let t = i as f64 / rate_hz;
        let d = phantom.at(t);
        trace.t.push(t);
        trace.ilm_z.push(d.ilm);
        trace.rpe_z.push(d.rpe);
    }
    Ok(trace)
}
