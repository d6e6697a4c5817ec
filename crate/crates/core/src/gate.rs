//! Causal preprocessing of a layer channel before it reaches the predictor.
//!
//! Each new row is compared with a robust straight-line extrapolation
//! (median pairwise slope, median intercept) of the last few observed rows.
//! Impulses beyond `threshold_px` are rejected and the last accepted value is
//! held; missing frames are held the same way. A run of
//! `max_consecutive_rejects` rejections is taken as a genuine jump and the
//! next row is accepted unconditionally.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateConfig {
    /// Observed rows used for the reference line.
    pub history: usize,
    pub threshold_px: f64,
    pub max_consecutive_rejects: usize,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            history: 5,
            threshold_px: 30.0,
            max_consecutive_rejects: 3,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.history == 0 || !(self.threshold_px > 0.0) {
            return Err(invalid("gate", "history and threshold_px must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateStatus {
    Accepted,
    Rejected,
    Missing,
}

/// Output of the gate for one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gated {
    /// Current best value (px): the new row if accepted, otherwise the held one.
    /// `None` until the first row is accepted.
    pub value: Option<f64>,
    pub status: GateStatus,
    /// Consecutive frames without an accepted row.
    pub stale: usize,
}

#[derive(Debug, Clone)]
pub struct LayerGate {
    cfg: GateConfig,
    recent: VecDeque<(f64, f64)>,
    held: Option<f64>,
    consecutive_rejects: usize,
    stale: usize,
    rejected_total: usize,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl LayerGate {
    pub fn new(cfg: GateConfig) -> Self {
        Self {
            cfg,
            recent: VecDeque::with_capacity(cfg.history + 1),
            held: None,
            consecutive_rejects: 0,
            stale: 0,
            rejected_total: 0,
        }
    }

    pub fn rejected_total(&self) -> usize {
        self.rejected_total
    }

    /// Theil–Sen extrapolation of the recent rows to `t`.
    fn reference(&self, t: f64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self.recent.iter().copied().collect();
        match pts.len() {
            0 => None,
            1 | 2 => Some(median(&mut pts.iter().map(|p| p.1).collect::<Vec<_>>())),
            n => {
                let mut slopes = Vec::with_capacity(n * (n - 1) / 2);
                for i in 0..n {
                    for j in i + 1..n {
                        let dt = pts[j].0 - pts[i].0;
                        if dt > 0.0 {
                            slopes.push((pts[j].1 - pts[i].1) / dt);
                        }
                    }
                }
                let slope = if slopes.is_empty() { 0.0 } else { median(&mut slopes) };
                let mut levels: Vec<f64> = pts.iter().map(|&(ti, vi)| vi + slope * (t - ti)).collect();
                Some(median(&mut levels))
            }
        }
    }

    fn remember(&mut self, t: f64, v: f64) {
        if self.recent.len() == self.cfg.history {
            self.recent.pop_front();
        }
        self.recent.push_back((t, v));
    }

    pub fn push(&mut self, t: f64, raw: Option<u32>) -> Gated {
        let Some(raw) = raw else {
            self.stale += 1;
            return Gated {
                value: self.held,
                status: GateStatus::Missing,
                stale: self.stale,
            };
        };
        let v = raw as f64;
        let outlying = self
            .reference(t)
            .is_some_and(|r| (v - r).abs() > self.cfg.threshold_px);
        self.remember(t, v);
        if outlying && self.consecutive_rejects < self.cfg.max_consecutive_rejects {
            self.consecutive_rejects += 1;
            self.rejected_total += 1;
            self.stale += 1;
            return Gated {
                value: self.held,
                status: GateStatus::Rejected,
                stale: self.stale,
            };
        }
        self.held = Some(v);
        self.consecutive_rejects = 0;
        self.stale = 0;
        Gated {
            value: Some(v),
            status: GateStatus::Accepted,
            stale: 0,
        }
    }
}

/// Runs a whole channel through a fresh gate, back-filling the leading
/// frames before the first accepted row. Returns `None` if nothing was accepted.
pub fn gate_series(times: &[f64], rows: &[Option<u32>], cfg: GateConfig) -> Option<Vec<f64>> {
    let mut gate = LayerGate::new(cfg);
    let values: Vec<Option<f64>> = times
        .iter()
        .zip(rows)
        .map(|(&t, &r)| gate.push(t, r).value)
        .collect();
    let first = values.iter().flatten().next().copied()?;
    Some(values.into_iter().map(|v| v.unwrap_or(first)).collect())
}
