//! Axial proportional velocity control and the robot-axis plant it drives.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Result};
use crate::metrics::{evaluate, PredictionReport};
use crate::rng::{channel, rng_for};

pub const TRACKING_HEADER: &str = "t_s,target_mm,needle_mm,v_mm_s,phase";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    /// Velocity gain (1/s).
    pub k_v: f64,
    /// Speed clamp (mm/s).
    pub v_max: f64,
    pub loop_rate_hz: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            k_v: 10.0,
            v_max: 0.5,
            loop_rate_hz: 50.0,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_finite("controller", &[self.k_v, self.v_max, self.loop_rate_hz])?;
        if self.k_v <= 0.0 || self.v_max <= 0.0 || self.loop_rate_hz <= 0.0 {
            return Err(invalid("controller", "k_v, v_max and loop_rate_hz must be positive"));
        }
        Ok(())
    }

    pub fn tick_s(&self) -> f64 {
        1.0 / self.loop_rate_hz
    }
}

/// Signed speed toward the target: `sign(e)·min(k_v·|e|, v_max)`.
pub fn compute_velocity(cfg: &ControllerConfig, d_current: f64, d_target: f64) -> f64 {
    let e = d_target - d_current;
    if e == 0.0 || !e.is_finite() {
        return 0.0;
    }
    e.signum() * (cfg.k_v * e.abs()).min(cfg.v_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AxisConfig {
    /// Position quantum (mm).
    pub resolution: f64,
    /// Standard deviation of the settling error after a direction reversal (mm).
    pub repeatability_sd: f64,
    pub seed: u64,
}

impl Default for AxisConfig {
    fn default() -> Self {
        Self {
            resolution: 0.001,
            repeatability_sd: 0.003,
            seed: 0,
        }
    }
}

impl AxisConfig {
    pub fn ideal() -> Self {
        Self {
            repeatability_sd: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("axis", &[self.resolution, self.repeatability_sd])?;
        if self.resolution <= 0.0 || self.repeatability_sd < 0.0 {
            return Err(invalid("axis", "resolution must be positive and repeatability_sd non-negative"));
        }
        Ok(())
    }
}

/// Single linear stage. A continuous set-point integrates the commanded
/// velocity; the reported position is that set-point plus a settling offset,
/// quantized to the resolution. The offset is redrawn on each reversal.
#[derive(Debug, Clone)]
pub struct RobotAxis {
    cfg: AxisConfig,
    v_max: f64,
    z_cmd: f64,
    offset: f64,
    v_cmd: f64,
    direction: i8,
    reversals: u64,
}

impl RobotAxis {
    pub fn new(z0: f64, cfg: AxisConfig, v_max: f64) -> Result<Self> {
        cfg.validate()?;
        ensure_finite("axis start", &[z0, v_max])?;
        Ok(Self {
            cfg,
            v_max,
            z_cmd: z0,
            offset: 0.0,
            v_cmd: 0.0,
            direction: 0,
            reversals: 0,
        })
    }

    pub fn z(&self) -> f64 {
        let r = self.cfg.resolution;
        ((self.z_cmd + self.offset) / r).round() * r
    }

    pub fn v_cmd(&self) -> f64 {
        self.v_cmd
    }

    pub fn reversals(&self) -> u64 {
        self.reversals
    }

    pub fn config(&self) -> &AxisConfig {
        &self.cfg
    }

    /// Instantly relocates the stage (manual repositioning).
    pub fn place(&mut self, z: f64) {
        self.z_cmd = z;
        self.offset = 0.0;
        self.v_cmd = 0.0;
        self.direction = 0;
    }

    /// Commands zero velocity without moving.
    pub fn halt(&mut self) {
        self.v_cmd = 0.0;
    }

    pub fn step(&mut self, v: f64, dt: f64) {
        let v = if v.is_finite() { v.clamp(-self.v_max, self.v_max) } else { 0.0 };
        self.v_cmd = v;
        if v == 0.0 {
            return;
        }
        let dir = if v > 0.0 { 1 } else { -1 };
        if self.direction != 0 && dir != self.direction && self.cfg.repeatability_sd > 0.0 {
            let mut rng = rng_for(self.cfg.seed, self.reversals, channel::AXIS_REVERSAL);
            let g: f64 = rng.sample(StandardNormal);
            self.offset = self.cfg.repeatability_sd * g.clamp(-3.0, 3.0);
            self.reversals += 1;
        } else if self.direction != 0 && dir != self.direction {
            self.reversals += 1;
        }
        self.direction = dir;
        self.z_cmd += v * dt;
    }
}

/// How the set-point is produced between 4 Hz target updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoldPolicy {
    /// Latest value until the next update.
    ZeroOrder,
    /// Straight line through the two latest anchor points.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HoldConfig {
    pub policy: HoldPolicy,
    /// Look-ahead applied to the linear hold (s).
    pub lead_s: f64,
}

impl Default for HoldConfig {
    fn default() -> Self {
        Self {
            policy: HoldPolicy::Linear,
            lead_s: 0.1,
        }
    }
}

/// A target estimate issued at `t` for time `t + horizon_s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetUpdate {
    pub t: f64,
    pub horizon_s: f64,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct TargetHold {
    cfg: HoldConfig,
    prev: Option<(f64, f64)>,
    last: Option<(f64, f64)>,
    issued: Option<f64>,
}

impl TargetHold {
    pub fn new(cfg: HoldConfig) -> Self {
        Self {
            cfg,
            prev: None,
            last: None,
            issued: None,
        }
    }

    pub fn push(&mut self, u: TargetUpdate) {
        self.prev = self.last;
        self.last = Some((u.t + u.horizon_s, u.value));
        self.issued = Some(u.t);
    }

    /// Time of the most recent update.
    pub fn last_issued(&self) -> Option<f64> {
        self.issued
    }

    pub fn target(&self, t: f64) -> Option<f64> {
        let (tb, vb) = self.last?;
        match (self.cfg.policy, self.prev) {
            (HoldPolicy::Linear, Some((ta, va))) if tb > ta => {
                let span = tb - ta;
                // Past the newest anchor the line stops moving; a late or
                // missing update must not keep extrapolating a noisy slope.
                let s = (t.min(tb) + self.cfg.lead_s - ta) / span;
                Some(va + s * (vb - va))
            }
            _ => Some(vb),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub t: f64,
    pub target: f64,
    pub needle: f64,
    pub v: f64,
    /// Continuous ground-truth target at `t`.
    pub truth: f64,
}

#[derive(Debug, Clone)]
pub struct TrackResult {
    pub points: Vec<TrackPoint>,
    /// Time of a staleness abort, if one happened.
    pub aborted_at: Option<f64>,
    pub report: Option<PredictionReport>,
    pub axis: RobotAxis,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackOptions {
    pub hold: HoldConfig,
    pub duration: f64,
    /// Longest tolerated gap between target updates (s).
    pub max_gap_s: f64,
    /// Ticks before this time are excluded from the metrics.
    pub settle_s: f64,
}

/// Closed-loop tracking of a 4 Hz target stream at the controller rate.
///
/// Updates are consumed before the control tick that shares their time
/// stamp. If no update arrives for longer than `max_gap_s` the axis is
/// halted on that tick and the run stops. Metrics compare the needle with
/// `truth`.
pub fn track(
    cfg: &ControllerConfig,
    mut axis: RobotAxis,
    updates: &[TargetUpdate],
    truth: impl Fn(f64) -> f64,
    opts: TrackOptions,
) -> Result<TrackResult> {
    cfg.validate()?;
    let TrackOptions { hold, duration, max_gap_s, settle_s } = opts;
    ensure_finite("track", &[duration, max_gap_s, settle_s])?;
    let dt = cfg.tick_s();
    let n_ticks = (duration / dt + 1e-9).floor() as usize;
    let mut hold_state = TargetHold::new(hold);
    let mut next = 0;
    let mut points = Vec::with_capacity(n_ticks + 1);
    let mut aborted_at = None;
    for k in 0..=n_ticks {
        let t = k as f64 * dt;
        while next < updates.len() && updates[next].t <= t + 1e-9 {
            hold_state.push(updates[next]);
            next += 1;
        }
        let z = axis.z();
        let stale = hold_state.last_issued().map_or(true, |ti| t - ti > max_gap_s);
        let target = hold_state.target(t);
        let (target, v) = match target {
            Some(tg) if !stale => (tg, compute_velocity(cfg, z, tg)),
            _ => {
                axis.halt();
                aborted_at = Some(t);
                points.push(TrackPoint { t, target: f64::NAN, needle: z, v: 0.0, truth: truth(t) });
                break;
            }
        };
        points.push(TrackPoint { t, target, needle: z, v, truth: truth(t) });
        if k < n_ticks {
            axis.step(v, dt);
        }
    }
    let (pred, tru): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|p| p.t >= settle_s && p.target.is_finite())
        .map(|p| (p.needle, p.truth))
        .unzip();
    let report = if pred.is_empty() { None } else { Some(evaluate(&pred, &tru)?) };
    Ok(TrackResult {
        points,
        aborted_at,
        report,
        axis,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cfg() -> ControllerConfig {
        ControllerConfig::default()
    }

    #[test]
    fn velocity_examples() {
        assert_eq!(compute_velocity(&cfg(), 1.0, 1.0), 0.0);
        assert_eq!(compute_velocity(&cfg(), 0.0, 1.0), 0.5);
        assert_eq!(compute_velocity(&cfg(), 1.0, 0.0), -0.5);
        assert_abs_diff_eq!(compute_velocity(&cfg(), 0.0, 0.02), 0.2, epsilon = 1e-15);
        assert_eq!(compute_velocity(&cfg(), 0.0, f64::NAN), 0.0);
    }

    #[test]
    fn axis_step_arithmetic() {
        let mut a = RobotAxis::new(2.0, AxisConfig::ideal(), 0.5).unwrap();
        a.step(0.0, 0.01);
        assert_eq!(a.z(), 2.0);
        a.step(0.1, 0.01);
        assert_abs_diff_eq!(a.z() - 2.0, 0.001, epsilon = 1e-12);
        a.step(10.0, 1.0);
        assert_eq!(a.v_cmd(), 0.5);
    }

    #[test]
    fn reversal_offset_is_bounded_and_seeded() {
        let mut offsets = Vec::new();
        let mut a = RobotAxis::new(0.0, AxisConfig { seed: 9, ..AxisConfig::default() }, 0.5).unwrap();
        for i in 0..400 {
            let v = if i % 2 == 0 { 0.05 } else { -0.05 };
            a.step(v, 0.02);
            offsets.push(a.offset);
        }
        assert_eq!(a.reversals(), 399);
        assert!(offsets.iter().all(|o| o.abs() <= 0.009 + 1e-15));
        let mean = offsets.iter().sum::<f64>() / offsets.len() as f64;
        let sd = (offsets.iter().map(|o| (o - mean).powi(2)).sum::<f64>() / offsets.len() as f64).sqrt();
        assert!(mean.abs() < 0.0006, "mean {mean}");
        assert!((sd - 0.003).abs() < 0.0005, "sd {sd}");

        let mut b = RobotAxis::new(0.0, AxisConfig { seed: 9, ..AxisConfig::default() }, 0.5).unwrap();
        for i in 0..400 {
            b.step(if i % 2 == 0 { 0.05 } else { -0.05 }, 0.02);
        }
        assert_eq!(a.z(), b.z());
    }

    #[test]
    fn zero_order_and_linear_hold() {
        let mut h = TargetHold::new(HoldConfig { policy: HoldPolicy::ZeroOrder, lead_s: 0.0 });
        assert_eq!(h.target(0.0), None);
        h.push(TargetUpdate { t: 0.0, horizon_s: 0.25, value: 1.0 });
        h.push(TargetUpdate { t: 0.25, horizon_s: 0.25, value: 2.0 });
        assert_eq!(h.target(0.3), Some(2.0));

        let mut l = TargetHold::new(HoldConfig { policy: HoldPolicy::Linear, lead_s: 0.0 });
        l.push(TargetUpdate { t: 0.0, horizon_s: 0.25, value: 1.0 });
        assert_eq!(l.target(0.1), Some(1.0));
        l.push(TargetUpdate { t: 0.25, horizon_s: 0.25, value: 2.0 });
        assert_abs_diff_eq!(l.target(0.375).unwrap(), 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(l.target(10.0).unwrap(), 2.0, epsilon = 1e-12);
    }

    fn opts(duration: f64, max_gap_s: f64, settle_s: f64) -> TrackOptions {
        TrackOptions { hold: HoldConfig::default(), duration, max_gap_s, settle_s }
    }

    fn constant_updates(value: f64, duration: f64) -> Vec<TargetUpdate> {
        (0..=(duration * 4.0) as usize)
            .map(|k| TargetUpdate { t: k as f64 * 0.25, horizon_s: 0.0, value })
            .collect()
    }

    #[test]
    fn constant_target_first_order_response() {
        let c = cfg();
        let axis = RobotAxis::new(2.0, AxisConfig::ideal(), c.v_max).unwrap();
        let ups = constant_updates(2.5, 3.0);
        let r = track(&c, axis, &ups, |_| 2.5, opts(3.0, 0.5, 0.0)).unwrap();
        assert!(r.aborted_at.is_none());
        let errs: Vec<f64> = r.points.iter().map(|p| (p.needle - 2.5).abs()).collect();
        for w in errs.windows(2).skip(1) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        // 0.45 mm at the clamp takes 0.9 s; five time constants follow.
        let settle = r.points.iter().find(|p| p.t >= 0.9 + 5.0 / c.k_v).unwrap();
        assert!((settle.needle - 2.5).abs() < 0.002);
        // Clamp-limited approach covers 0.45 mm in 0.9 s, then e^{-k_v t} from 0.05 mm.
        let at = |t: f64| r.points.iter().find(|p| (p.t - t).abs() < 1e-9).unwrap().needle;
        assert!((at(0.6) - 2.3).abs() < 0.002);
        assert!(r.points.iter().all(|p| p.needle <= 2.5 + 0.001));
    }

    #[test]
    fn staleness_halts_on_the_same_tick() {
        let c = cfg();
        let axis = RobotAxis::new(0.0, AxisConfig::ideal(), c.v_max).unwrap();
        let ups = constant_updates(1.0, 1.0);
        let r = track(&c, axis, &ups, |_| 1.0, opts(5.0, 0.5, 0.0)).unwrap();
        let t_abort = r.aborted_at.unwrap();
        assert!(t_abort > 1.5 && t_abort <= 1.52 + 1e-9);
        assert_eq!(r.points.last().unwrap().v, 0.0);
        assert_eq!(r.axis.v_cmd(), 0.0);
    }

    #[test]
    fn frozen_axis_error_equals_excursion() {
        let c = ControllerConfig { v_max: 1e-12, ..cfg() };
        let axis = RobotAxis::new(0.0, AxisConfig::ideal(), c.v_max).unwrap();
        let ups = constant_updates(0.2, 2.0);
        let r = track(&c, axis, &ups, |_| 0.2, opts(2.0, 0.5, 0.0)).unwrap();
        assert_abs_diff_eq!(r.report.unwrap().rmse_um, 200.0, epsilon = 1e-3);
    }

    proptest! {
        #[test]
        fn clamp_and_odd_symmetry(cur in -1e3f64..1e3, tgt in -1e3f64..1e3, k in 1e-3f64..1e3, vmax in 1e-6f64..10.0) {
            let c = ControllerConfig { k_v: k, v_max: vmax, loop_rate_hz: 50.0 };
            let v = compute_velocity(&c, cur, tgt);
            prop_assert!(v.abs() <= vmax);
            prop_assert_eq!(compute_velocity(&c, tgt, cur), -v);
            prop_assert!(v == 0.0 || v.signum() == (tgt - cur).signum());
        }

        #[test]
        fn monotone_below_clamp(e1 in 0.0f64..0.05, e2 in 0.0f64..0.05) {
            let c = cfg();
            let (a, b) = (compute_velocity(&c, 0.0, e1), compute_velocity(&c, 0.0, e2));
            if e1 < e2 { prop_assert!(a <= b); }
            if e1 < e2 && e2 < c.v_max / c.k_v { prop_assert!(a < b); }
        }
    }
}
