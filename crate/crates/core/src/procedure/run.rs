//! Discrete-event executor. Frames arrive every 250 ms and control ticks at
//! the loop rate, on an integer microsecond clock; a frame is handled before
//! a tick with the same time stamp.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::log::{apply, registration_detail, Event, EventKind};
use super::{sanity_check, InsertionReference, Phase, ProcedureConfig, ProcedureState, SanityResult};
use crate::controller::{
    compute_velocity, AxisConfig, ControllerConfig, HoldConfig, RobotAxis, TargetHold, TargetUpdate,
};
use crate::error::{invalid, Result};
use crate::gate::{GateConfig, GateStatus, LayerGate};
use crate::metrics::evaluate;
use crate::motion::{MotionProfile, Phantom};
use crate::observation::{observe, DepthSample, ImagingGeometry, ObservationNoise};
use crate::predictor::{Predictor, SequenceWindow, WINDOW_LEN};
use crate::registration::{build_registration_oriented, iqr_filter, median_sorted, RegistrationTransform, REGISTRATION_SAMPLES};
use crate::rng::{channel, derive_seed, rng_for};
use crate::table::{fmt_sig, write_preamble};

pub const SAMPLE_PERIOD_US: u64 = 250_000;

/// Consecutive forecast-gate rejections after which the next row is taken as is.
const MAX_INNOVATION_REJECTS: usize = 3;

pub const TRACK_HEADER: &str = "t_s,target_mm,needle_mm,v_mm_s,phase,ilm_mm,rpe_mm";

/// Everything a procedure run needs besides the predictor and the seed.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub profile: MotionProfile,
    pub geometry: ImagingGeometry,
    pub noise: ObservationNoise,
    pub gate: GateConfig,
    pub controller: ControllerConfig,
    pub axis: AxisConfig,
    pub hold: HoldConfig,
    pub procedure: ProcedureConfig,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.profile.validate()?;
        self.geometry.validate()?;
        self.noise.validate()?;
        self.gate.validate()?;
        self.controller.validate()?;
        self.axis.validate()?;
        self.procedure.validate(self.profile.retina_thickness)?;
        let tick = 1e6 / self.controller.loop_rate_hz;
        if (tick - tick.round()).abs() > 1e-9 {
            return Err(invalid("controller", "loop period must be a whole number of microseconds"));
        }
        Ok(())
    }

    /// Copy with every random component keyed by the run seed.
    pub fn seeded(&self, seed: u64) -> Scenario {
        let mut s = *self;
        let d = &mut s.profile.disturbance;
        d.seed = derive_seed(seed, d.seed, channel::RUN_PHANTOM);
        s.profile.phase0 += rng_for(seed, self.profile.disturbance.seed, channel::RUN_PHANTOM)
            .random_range(0.0..std::f64::consts::TAU);
        s.noise.seed = derive_seed(seed, self.noise.seed, channel::RUN_NOISE);
        s.axis.seed = derive_seed(seed, self.axis.seed, channel::RUN_AXIS);
        s
    }
}

/// Tracking accuracy of one phase against the true target depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseMetrics {
    pub offset_um: f64,
    pub rmse_um: f64,
    pub max_ae_um: f64,
    /// Mean absolute error.
    pub mean_um: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackRow {
    pub t_us: u64,
    pub phase: Phase,
    /// `NaN` while the needle is held still.
    pub target: f64,
    pub needle: f64,
    pub v: f64,
    pub ilm: f64,
    pub rpe: f64,
}

#[derive(Debug, Clone)]
pub struct ProcedureReport {
    pub seed: u64,
    pub state: ProcedureState,
    /// Phase in which an abort happened.
    pub abort_phase: Option<Phase>,
    pub sanity: Option<SanityResult>,
    pub above_ilm: Option<PhaseMetrics>,
    pub inside_retina: Option<PhaseMetrics>,
    /// Ticks with the needle at or below the true RPE.
    pub rpe_touches: usize,
    /// Commanded velocity on the first tick after an abort.
    pub v_after_abort: Option<f64>,
    /// Deepest needle position before the sanity check passed (mm).
    pub max_depth_before_sanity: f64,
    pub prep_plane: Option<f64>,
    pub thickness_estimate: Option<f64>,
    pub events: Vec<Event>,
    pub track: Vec<TrackRow>,
    pub samples: Vec<DepthSample>,
}

impl ProcedureReport {
    pub fn completed(&self) -> bool {
        self.state.phase == Phase::Completed
    }

    pub fn success(&self) -> bool {
        self.completed() && self.state.injection_success
    }

    pub fn track_csv(&self, comments: &[String]) -> String {
        let mut out = String::with_capacity(self.track.len() * 64);
        write_preamble(&mut out, comments, TRACK_HEADER);
        for r in &self.track {
            let target = if r.target.is_finite() { fmt_sig(r.target, 9) } else { String::new() };
            out.push_str(&format!(
                "{}.{:06},{},{},{},{},{},{}\n",
                r.t_us / 1_000_000,
                r.t_us % 1_000_000,
                target,
                fmt_sig(r.needle, 9),
                fmt_sig(r.v, 9),
                r.phase.as_str(),
                fmt_sig(r.ilm, 9),
                fmt_sig(r.rpe, 9),
            ));
        }
        out
    }
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

fn metrics(pairs: &[(f64, f64)], offset: f64) -> Result<Option<PhaseMetrics>> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let (needle, target): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    let r = evaluate(&needle, &target)?;
    Ok(Some(PhaseMetrics {
        offset_um: offset * 1000.0,
        rmse_um: r.rmse_um,
        max_ae_um: r.max_ae_um,
        mean_um: r.mean_abs_um,
        n: r.n,
    }))
}

struct Exec<'a> {
    sc: Scenario,
    pc: ProcedureConfig,
    predictor: &'a dyn Predictor,
    phantom: Phantom,
    axis: RobotAxis,
    ilm_gate: LayerGate,
    rpe_gate: LayerGate,
    hold: TargetHold,
    state: ProcedureState,
    events: Vec<Event>,
    track: Vec<TrackRow>,
    samples: Vec<DepthSample>,
    sample_index: u64,
    /// Gated ILM depths in image millimetres (row × scale).
    window: VecDeque<f64>,
    /// Forecast for the next frame, image millimetres.
    pending: Option<f64>,
    phase_start_us: u64,
    // Phase 1
    phase1_frames: usize,
    errors: Vec<f64>,
    needle_rows: VecDeque<Option<u32>>,
    thickness_px: Vec<f64>,
    ilm_rows: Vec<f64>,
    // Phase 2
    prep_z: Option<f64>,
    settled_needle: Vec<Option<u32>>,
    thickness: Option<f64>,
    sanity: Option<SanityResult>,
    // Phase 4
    sync_err: Vec<f64>,
    innovation_rejects: usize,
    // Phase 5
    dwell_start_us: Option<u64>,
    left_retina: bool,
    above: Vec<(f64, f64)>,
    inside: Vec<(f64, f64)>,
    rpe_touches: usize,
    abort_phase: Option<Phase>,
    max_depth_before_sanity: f64,
}

impl<'a> Exec<'a> {
    fn b(&self) -> f64 {
        self.sc.geometry.mm_per_px
    }

    fn reg(&self) -> &RegistrationTransform {
        self.state.registration.as_ref().expect("registration present after phase 2")
    }

    fn emit(&mut self, t_us: u64, phase: Phase, kind: EventKind, detail: String) -> Result<()> {
        let ev = Event { t_us, phase, kind, detail };
        apply(&mut self.state, &ev, self.pc.restart_on_sanity_fail)?;
        self.events.push(ev);
        Ok(())
    }

    fn enter(&mut self, t_us: u64, phase: Phase) -> Result<()> {
        self.emit(t_us, phase, EventKind::Enter, String::new())?;
        self.phase_start_us = t_us;
        Ok(())
    }

    fn abort(&mut self, t_us: u64, reason: String) -> Result<()> {
        self.axis.halt();
        self.abort_phase = Some(self.state.phase);
        self.emit(t_us, Phase::Aborted, EventKind::Abort, reason)
    }

    fn elapsed_s(&self, t_us: u64) -> f64 {
        (t_us - self.phase_start_us) as f64 * 1e-6
    }

    /// Height of the target above (negative) or below the ILM estimate.
    fn offset_at(&self, t_us: u64) -> f64 {
        match self.state.phase {
            Phase::Insertion => {
                let end = self.thickness.unwrap_or(0.0) - self.pc.insertion_offset;
                (-self.pc.sync_offset + self.pc.insertion_rate * self.elapsed_s(t_us)).min(end)
            }
            _ => -self.pc.sync_offset,
        }
    }

    fn ramp_done(&self, t_us: u64) -> bool {
        let end = self.thickness.unwrap_or(0.0) - self.pc.insertion_offset;
        self.offset_at(t_us) >= end
    }

    fn on_frame(&mut self, t_us: u64) -> Result<()> {
        let t = t_us as f64 * 1e-6;
        let truth = self.phantom.at(t);
        let sample = observe(truth, self.axis.z(), &self.sc.geometry, &self.sc.noise, t, self.sample_index)?;
        self.sample_index += 1;
        self.samples.push(sample);
        let g_ilm = self.ilm_gate.push(t, sample.ilm_px);
        let g_rpe = self.rpe_gate.push(t, sample.rpe_px);
        if g_ilm.stale > self.pc.max_stale_samples {
            return self.abort(t_us, format!("ILM lost for {} frames", g_ilm.stale));
        }
        let b = self.b();
        let tracking = matches!(self.state.phase, Phase::MotionSync | Phase::Insertion);
        let forecast_gate = tracking && self.pc.innovation_gate > 0.0 && self.pending.is_some();
        let (mut ilm_mm, accepted) = if forecast_gate {
            // While tracking, the forecast is a better reference than the
            // gate's straight-line extrapolation.
            let p = self.pending.unwrap_or_default();
            match sample.ilm_px {
                Some(raw) => {
                    let v = raw as f64 * b;
                    let ok = (v - p).abs() <= self.pc.innovation_gate || self.innovation_rejects >= MAX_INNOVATION_REJECTS;
                    (v, ok)
                }
                None => (p, false),
            }
        } else {
            let Some(px) = g_ilm.value else {
                return Ok(());
            };
            (px * b, g_ilm.status == GateStatus::Accepted)
        };
        if forecast_gate {
            if accepted {
                self.innovation_rejects = 0;
            } else if sample.ilm_px.is_some() {
                self.innovation_rejects += 1;
            }
        }
        if let (false, true, Some(&last)) = (accepted, tracking, self.window.back()) {
            ilm_mm = last;
        }
        let ilm_px = ilm_mm / b;
        if let (Some(p), true, Phase::MotionEstimation) = (self.pending, accepted, self.state.phase) {
            self.errors.push((p - ilm_mm).abs());
        }
        if self.window.len() == WINDOW_LEN {
            self.window.pop_front();
        }
        self.window.push_back(ilm_mm);
        self.pending = None;
        if self.window.len() == WINDOW_LEN {
            let values: Vec<f64> = self.window.iter().copied().collect();
            match SequenceWindow::new(&values, t).and_then(|w| self.predictor.predict(&w)) {
                Ok(p) if p.is_finite() => self.pending = Some(p),
                Ok(_) => return self.abort(t_us, "predictor returned a non-finite value".into()),
                Err(e) => return self.abort(t_us, format!("predictor failure: {e}").replace(',', ";")),
            }
        }

        match self.state.phase {
            Phase::MotionEstimation => self.frame_phase1(t_us, &sample, g_ilm.value, g_rpe.value, accepted),
            Phase::NeedleRegistration => self.frame_phase2(t_us, &sample),
            Phase::MotionSync | Phase::Insertion => self.frame_tracking(t_us, ilm_px, g_rpe.value, accepted),
            Phase::SanityCheck | Phase::Aborted | Phase::Completed => Ok(()),
        }
    }

    fn frame_phase1(
        &mut self,
        t_us: u64,
        sample: &DepthSample,
        ilm: Option<f64>,
        rpe: Option<f64>,
        accepted: bool,
    ) -> Result<()> {
        self.phase1_frames += 1;
        if self.needle_rows.len() == REGISTRATION_SAMPLES {
            self.needle_rows.pop_front();
        }
        self.needle_rows.push_back(sample.needle_px);
        if let (Some(i), Some(r), true) = (ilm, rpe, accepted) {
            self.thickness_px.push(r - i);
        }
        if let Some(i) = ilm {
            self.ilm_rows.push(i);
        }
        let w = self.pc.settle_window;
        if self.phase1_frames < self.pc.phase1_samples() || self.errors.len() < w {
            if self.phase1_frames >= 2 * self.pc.phase1_samples() {
                return self.abort(t_us, format!("only {} prediction checks in phase 1", self.errors.len()));
            }
            return Ok(());
        }

        self.enter(t_us, Phase::NeedleRegistration)?;
        let e = self.errors[self.errors.len() - w..].iter().copied().fold(0.0, f64::max);
        self.emit(t_us, Phase::NeedleRegistration, EventKind::ErrorReport, format!("e_mm={e}"))?;

        let rows: Vec<f64> = self.needle_rows.iter().flatten().map(|&p| p as f64).collect();
        let filtered = match iqr_filter(&rows) {
            Ok(f) => f,
            Err(_) => {
                return self.abort(t_us, format!("needle visible in {} of the last {REGISTRATION_SAMPLES} frames", rows.len()))
            }
        };
        let reg = build_registration_oriented(filtered.value_px, self.axis.z(), self.b(), self.sc.geometry.orientation())?;
        self.emit(
            t_us,
            Phase::NeedleRegistration,
            EventKind::Registration,
            registration_detail(&reg, filtered.n_rejected),
        )?;

        if self.thickness_px.is_empty() {
            return self.abort(t_us, "no retina thickness estimate".into());
        }
        let mut th = self.thickness_px.clone();
        th.sort_by(f64::total_cmp);
        let thickness = (median_sorted(&th) * self.b()).abs();
        if thickness <= self.pc.insertion_offset {
            return self.abort(t_us, format!("estimated retina thickness {thickness:.4} mm is too thin"));
        }
        self.thickness = Some(thickness);
        let shallowest = self
            .ilm_rows
            .iter()
            .map(|&p| reg.apply(p))
            .fold(f64::INFINITY, f64::min);
        self.prep_z = Some(shallowest - self.pc.prep_offset);
        self.emit(
            t_us,
            Phase::NeedleRegistration,
            EventKind::Note,
            format!("thickness_mm={thickness};prep_z_mm={}", shallowest - self.pc.prep_offset),
        )?;
        self.settled_needle.clear();
        Ok(())
    }

    fn frame_phase2(&mut self, t_us: u64, sample: &DepthSample) -> Result<()> {
        let prep = self.prep_z.expect("prep plane set on entering phase 2");
        if (self.axis.z() - prep).abs() <= self.pc.prep_tolerance {
            self.settled_needle.push(sample.needle_px);
        } else if self.elapsed_s(t_us) > self.pc.prep_timeout_s {
            return self.abort(t_us, "prep plane not reached".into());
        }
        if self.settled_needle.len() < self.pc.sanity_samples {
            return Ok(());
        }

        self.enter(t_us, Phase::SanityCheck)?;
        let mut rows: Vec<f64> = self.settled_needle.iter().flatten().map(|&p| p as f64).collect();
        rows.sort_by(f64::total_cmp);
        let needle = (!rows.is_empty()).then(|| median_sorted(&rows));
        let e = self.state.e.unwrap_or(f64::INFINITY);
        let mut result = sanity_check(e, self.pc.e_max, needle, &self.sc.geometry);
        if let Some(p) = needle {
            if (self.reg().apply(p) - self.axis.z()).abs() > self.pc.registration_tolerance {
                result.failures.push(super::SanityFailure::RegistrationMismatch);
            }
        }
        self.sanity = Some(result.clone());
        if result.passed() {
            self.emit(t_us, Phase::SanityCheck, EventKind::SanityPassed, String::new())?;
            self.enter(t_us, Phase::MotionSync)?;
            self.hold = TargetHold::new(self.sc.hold);
            self.sync_err.clear();
            return Ok(());
        }
        self.emit(t_us, Phase::SanityCheck, EventKind::SanityFailed, result.reasons())?;
        if self.pc.restart_on_sanity_fail && self.state.restarts < self.pc.max_restarts {
            self.enter(t_us, Phase::MotionEstimation)?;
            self.axis.place(prep);
            self.phase1_frames = 0;
            self.errors.clear();
            self.needle_rows.clear();
            self.thickness_px.clear();
            self.ilm_rows.clear();
            self.prep_z = None;
            self.thickness = None;
            return Ok(());
        }
        self.abort(t_us, format!("sanity check failed: {}", result.reasons()))
    }

    fn frame_tracking(&mut self, t_us: u64, ilm_px: f64, rpe_px: Option<f64>, accepted: bool) -> Result<()> {
        let t = t_us as f64 * 1e-6;
        let reg = *self.reg();
        let thickness = self.thickness.unwrap_or(0.0);
        let rpe_mode = self.state.phase == Phase::Insertion
            && self.pc.insertion_reference == InsertionReference::MeasuredRpe;
        let measured_ref = match (rpe_mode, rpe_px) {
            (true, Some(r)) => reg.apply(r) - thickness,
            _ => reg.apply(ilm_px),
        };
        let update = if rpe_mode && !accepted {
            None
        } else if rpe_mode {
            Some(measured_ref)
        } else {
            self.pending.map(|p| reg.apply(p / self.b()))
        };
        if let Some(value) = update {
            let horizon_s = if rpe_mode { 0.0 } else { SAMPLE_PERIOD_US as f64 * 1e-6 };
            self.hold.push(TargetUpdate { t, horizon_s, value });
        }

        let err = self.axis.z() - (measured_ref + self.offset_at(t_us));
        let settled = self.elapsed_s(t_us) >= self.pc.metric_settle_s;
        if settled && err.abs() > self.pc.safety_bound {
            return self.abort(t_us, format!("tracking error {:.3} mm exceeds safety bound", err.abs()));
        }
        if self.state.phase != Phase::MotionSync {
            return Ok(());
        }
        if settled {
            self.sync_err.push(err);
        }
        let w = self.pc.settle_window;
        let elapsed = self.elapsed_s(t_us);
        if elapsed >= self.pc.min_sync_s && self.sync_err.len() >= 2 * w {
            let n = self.sync_err.len();
            let r1 = rms(&self.sync_err[n - w..]);
            let r0 = rms(&self.sync_err[n - 2 * w..n - w]);
            if (r1 - r0).abs() <= self.pc.plateau_tol * r0.max(1e-3) {
                self.emit(t_us, Phase::MotionSync, EventKind::Note, format!("stable_rmse_mm={r1}"))?;
                self.enter(t_us, Phase::Insertion)?;
                if self.pc.insertion_reference == InsertionReference::MeasuredRpe {
                    self.hold = TargetHold::new(HoldConfig {
                        policy: crate::controller::HoldPolicy::ZeroOrder,
                        lead_s: 0.0,
                    });
                }
                return Ok(());
            }
        }
        if elapsed > self.pc.max_sync_s {
            return self.abort(t_us, "synchronization did not stabilize".into());
        }
        Ok(())
    }

    /// One control tick; returns the commanded velocity.
    fn on_tick(&mut self, t_us: u64, dt: f64) -> Result<()> {
        let t = t_us as f64 * 1e-6;
        let truth = self.phantom.at(t);
        let z = self.axis.z();
        let cfg = self.sc.controller;
        let phase = self.state.phase;
        let target = match phase {
            Phase::NeedleRegistration => self.prep_z,
            Phase::MotionSync | Phase::Insertion => self.hold.target(t).map(|v| v + self.offset_at(t_us)),
            _ => None,
        };
        let mut v = target.map_or(0.0, |tg| compute_velocity(&cfg, z, tg));

        if !self.state.sanity_passed {
            self.max_depth_before_sanity = self.max_depth_before_sanity.max(z);
        }
        if z >= truth.rpe && !phase.is_terminal() {
            self.rpe_touches += 1;
            self.emit(t_us, phase, EventKind::RpeTouch, format!("needle_mm={z};rpe_mm={}", truth.rpe))?;
            self.abort(t_us, "needle reached the RPE".into())?;
            v = 0.0;
        }
        if phase.is_terminal() {
            v = 0.0;
        }
        let phase_now = self.state.phase;
        if phase_now == Phase::MotionSync && self.elapsed_s(t_us) >= self.pc.metric_settle_s {
            self.above.push((z, truth.ilm - self.pc.sync_offset));
        }
        if phase_now == Phase::Insertion && self.dwell_start_us.is_some() {
            self.inside.push((z, truth.rpe - self.pc.insertion_offset));
            if z <= truth.ilm {
                self.left_retina = true;
            }
        }
        self.axis.step(v, dt);
        self.track.push(TrackRow {
            t_us,
            phase: phase_now,
            target: target.unwrap_or(f64::NAN),
            needle: z,
            v: self.axis.v_cmd(),
            ilm: truth.ilm,
            rpe: truth.rpe,
        });

        if phase_now == Phase::Insertion {
            match self.dwell_start_us {
                None if self.ramp_done(t_us) => {
                    self.dwell_start_us = Some(t_us);
                    self.emit(t_us, Phase::Insertion, EventKind::InjectStart, String::new())?;
                }
                Some(s) if (t_us - s) as f64 * 1e-6 >= self.pc.injection_duration => {
                    let ok = !self.left_retina;
                    self.emit(t_us, Phase::Insertion, EventKind::InjectEnd, format!("success={ok}"))?;
                    self.enter(t_us, Phase::Completed)?;
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn time_cap_us(&self) -> u64 {
        let pc = &self.pc;
        let setup = pc.phase1_samples() as f64 * 0.25 + pc.prep_timeout_s + 5.0;
        let ramp = (pc.sync_offset + self.sc.profile.retina_thickness) / pc.insertion_rate;
        let total = setup * (pc.max_restarts + 1) as f64 + pc.max_sync_s + ramp + pc.injection_duration + 10.0;
        (total * 1e6) as u64
    }
}

/// Runs the whole procedure for one seed.
pub fn run_procedure(scenario: &Scenario, predictor: &dyn Predictor, seed: u64) -> Result<ProcedureReport> {
    scenario.validate()?;
    let sc = scenario.seeded(seed);
    let phantom = Phantom::new(sc.profile)?;
    let z0 = sc.profile.baseline_ilm - sc.procedure.start_height;
    let axis = RobotAxis::new(z0, sc.axis, sc.controller.v_max)?;
    let tick_us = (1e6 / sc.controller.loop_rate_hz).round() as u64;
    let dt = tick_us as f64 * 1e-6;
    let mut ex = Exec {
        sc,
        pc: sc.procedure,
        predictor,
        phantom,
        axis,
        ilm_gate: LayerGate::new(sc.gate),
        rpe_gate: LayerGate::new(sc.gate),
        hold: TargetHold::new(sc.hold),
        state: ProcedureState::default(),
        events: Vec::new(),
        track: Vec::new(),
        samples: Vec::new(),
        sample_index: 0,
        window: VecDeque::with_capacity(WINDOW_LEN),
        pending: None,
        phase_start_us: 0,
        phase1_frames: 0,
        errors: Vec::new(),
        needle_rows: VecDeque::with_capacity(REGISTRATION_SAMPLES),
        thickness_px: Vec::new(),
        ilm_rows: Vec::new(),
        innovation_rejects: 0,
        prep_z: None,
        settled_needle: Vec::new(),
        thickness: None,
        sanity: None,
        sync_err: Vec::new(),
        dwell_start_us: None,
        left_retina: false,
        above: Vec::new(),
        inside: Vec::new(),
        rpe_touches: 0,
        abort_phase: None,
        max_depth_before_sanity: f64::NEG_INFINITY,
    };
    let cap = ex.time_cap_us();
    let (mut next_frame, mut next_tick) = (0u64, 0u64);
    let mut v_after_abort = None;
    loop {
        if ex.state.phase.is_terminal() {
            if ex.state.phase == Phase::Aborted {
                // One more tick to observe the halted axis.
                ex.on_tick(next_tick, dt)?;
                v_after_abort = Some(ex.axis.v_cmd());
            }
            break;
        }
        if next_frame.max(next_tick) > cap {
            ex.abort(next_frame.min(next_tick), "time limit exceeded".into())?;
            continue;
        }
        if next_frame <= next_tick {
            ex.on_frame(next_frame)?;
            next_frame += SAMPLE_PERIOD_US;
        } else {
            ex.on_tick(next_tick, dt)?;
            next_tick += tick_us;
        }
    }

    let above_ilm = metrics(&ex.above, ex.pc.sync_offset)?;
    let inside_retina = metrics(&ex.inside, ex.pc.insertion_offset)?;
    Ok(ProcedureReport {
        seed,
        state: ex.state,
        abort_phase: ex.abort_phase,
        sanity: ex.sanity,
        above_ilm,
        inside_retina,
        rpe_touches: ex.rpe_touches,
        v_after_abort,
        max_depth_before_sanity: ex.max_depth_before_sanity,
        prep_plane: ex.prep_z,
        thickness_estimate: ex.thickness,
        events: ex.events,
        track: ex.track,
        samples: ex.samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{FftPredictor, HoldPredictor};
    use crate::procedure::replay;

    struct Constant(f64);

    impl Predictor for Constant {
        fn name(&self) -> &'static str {
            "constant"
        }

        fn predict(&self, _: &SequenceWindow) -> Result<f64> {
            Ok(self.0)
        }
    }

    fn quick() -> Scenario {
        let mut s = Scenario::default();
        s.procedure.min_sync_s = 10.0;
        s.procedure.injection_duration = 5.0;
        s
    }

    #[test]
    fn zero_amplitude_run_completes_and_replays() {
        let mut s = quick();
        s.profile.amplitude = 0.0;
        s.noise = ObservationNoise::ideal();
        let r = run_procedure(&s, &HoldPredictor, 1).unwrap();
        assert_eq!(r.state.phase, Phase::Completed, "{:?}", r.state.abort_reason);
        assert!(r.success());
        assert_eq!(replay(&r.events).unwrap(), r.state);
        let above = r.above_ilm.unwrap();
        assert!(above.rmse_um < 8.0, "{above:?}");
        assert_eq!(r.rpe_touches, 0);
        assert!(r.max_depth_before_sanity <= r.prep_plane.unwrap() + 0.001 + 0.009);
    }

    #[test]
    fn constant_prediction_fails_sanity_before_sync() {
        let r = run_procedure(&quick(), &Constant(0.0), 3).unwrap();
        assert_eq!(r.state.phase, Phase::Aborted);
        assert_eq!(r.abort_phase, Some(Phase::SanityCheck), "{:?}", r.state.abort_reason);
        assert!(r.state.e.unwrap() > 0.05);
        assert!(!r.track.iter().any(|t| t.phase == Phase::MotionSync));
        assert_eq!(r.v_after_abort, Some(0.0));
    }

    #[test]
    fn misaligned_window_puts_needle_in_lower_half() {
        let mut s = quick();
        s.geometry.window_top_z = -0.2;
        let r = run_procedure(&s, &FftPredictor { rate_hz: 4.0 }, 4).unwrap();
        assert_eq!(r.abort_phase, Some(Phase::SanityCheck), "{:?}", r.state.abort_reason);
        let reasons = r.state.abort_reason.unwrap();
        assert!(reasons.contains("needle in lower half"), "{reasons}");
    }

    #[test]
    fn restart_flag_takes_the_back_edge() {
        let mut s = quick();
        s.procedure.e_max = 0.0;
        s.procedure.restart_on_sanity_fail = true;
        s.procedure.max_restarts = 2;
        let r = run_procedure(&s, &HoldPredictor, 5).unwrap();
        assert_eq!(r.state.restarts, 2);
        assert_eq!(r.abort_phase, Some(Phase::SanityCheck), "{:?}", r.state.abort_reason);
        assert_eq!(replay(&r.events).unwrap(), r.state);
    }

    #[test]
    fn runs_are_deterministic() {
        let s = quick();
        let a = run_procedure(&s, &FftPredictor { rate_hz: 4.0 }, 11).unwrap();
        let b = run_procedure(&s, &FftPredictor { rate_hz: 4.0 }, 11).unwrap();
        assert_eq!(a.track_csv(&[]), b.track_csv(&[]));
        assert_eq!(a.events, b.events);
        let c = run_procedure(&s, &FftPredictor { rate_hz: 4.0 }, 12).unwrap();
        assert_ne!(a.track_csv(&[]), c.track_csv(&[]));
    }

    #[test]
    fn invalid_insertion_offset_is_rejected() {
        let mut s = quick();
        s.procedure.insertion_offset = 0.3;
        assert!(run_procedure(&s, &HoldPredictor, 0).is_err());
    }
}
