//! Five-phase autonomous injection: motion estimation, needle registration,
//! sanity check, motion synchronization and insertion, with safety aborts.

mod log;
mod run;

pub use log::{events_from_csv, events_to_csv, replay, Event, EventKind, EVENT_HEADER};
pub use run::{run_procedure, PhaseMetrics, ProcedureReport, Scenario, TrackRow, SAMPLE_PERIOD_US, TRACK_HEADER};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Error, Result};
use crate::observation::ImagingGeometry;
use crate::predictor::WINDOW_LEN;
use crate::registration::RegistrationTransform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    MotionEstimation,
    NeedleRegistration,
    SanityCheck,
    MotionSync,
    Insertion,
    Aborted,
    Completed,
}

impl Phase {
    pub const ALL: [Phase; 7] = [
        Phase::MotionEstimation,
        Phase::NeedleRegistration,
        Phase::SanityCheck,
        Phase::MotionSync,
        Phase::Insertion,
        Phase::Aborted,
        Phase::Completed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::MotionEstimation => "motion_estimation",
            Phase::NeedleRegistration => "needle_registration",
            Phase::SanityCheck => "sanity_check",
            Phase::MotionSync => "motion_sync",
            Phase::Insertion => "insertion",
            Phase::Aborted => "aborted",
            Phase::Completed => "completed",
        }
    }

    /// 1-based phase number; 0 for the terminal states.
    pub fn number(self) -> u8 {
        match self {
            Phase::MotionEstimation => 1,
            Phase::NeedleRegistration => 2,
            Phase::SanityCheck => 3,
            Phase::MotionSync => 4,
            Phase::Insertion => 5,
            Phase::Aborted | Phase::Completed => 0,
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Aborted | Phase::Completed)
    }
}

impl std::str::FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Phase::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| invalid("phase", format!("unknown phase '{s}'")))
    }
}

/// The transition table. `restart` enables the sanity-failure back edge.
pub fn transition_allowed(from: Phase, to: Phase, restart: bool) -> bool {
    use Phase::*;
    match (from, to) {
        (MotionEstimation, NeedleRegistration)
        | (NeedleRegistration, SanityCheck)
        | (SanityCheck, MotionSync)
        | (MotionSync, Insertion)
        | (Insertion, Completed) => true,
        (SanityCheck, MotionEstimation) => restart,
        (f, Aborted) => !f.is_terminal(),
        _ => false,
    }
}

/// What the Phase-5 target follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsertionReference {
    /// Keep forecasting the ILM and add the estimated retina thickness.
    PredictedIlm,
    /// Follow the latest gated RPE row without forecasting.
    MeasuredRpe,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProcedureConfig {
    /// Preparation plane height above the shallowest ILM (mm).
    pub prep_offset: f64,
    /// Synchronization height above the ILM (mm).
    pub sync_offset: f64,
    /// Injection depth above the RPE (mm).
    pub insertion_offset: f64,
    /// Phase-3 limit on the Phase-1 prediction error (mm).
    pub e_max: f64,
    /// Samples in the Phase-1 error window and in each Phase-4 plateau window.
    pub settle_window: usize,
    /// Dwell time at the injection depth (s).
    pub injection_duration: f64,
    /// Initial needle height above the baseline ILM (mm).
    pub start_height: f64,
    /// Measured tracking error that aborts Phases 4 and 5 (mm).
    pub safety_bound: f64,
    /// Target ramp rate during insertion (mm/s).
    pub insertion_rate: f64,
    /// Distance to the prep plane that counts as arrived (mm).
    pub prep_tolerance: f64,
    /// Needle frames averaged at the prep plane for the sanity check.
    pub sanity_samples: usize,
    /// Largest disagreement between registered needle row and stage position (mm).
    pub registration_tolerance: f64,
    pub prep_timeout_s: f64,
    pub min_sync_s: f64,
    pub max_sync_s: f64,
    /// Relative RMSE change between consecutive windows that ends Phase 4.
    pub plateau_tol: f64,
    /// While tracking, an ILM row further than this from the pending forecast
    /// is rejected and the previous value is repeated (mm). Zero falls back
    /// to the layer gate alone.
    pub innovation_gate: f64,
    /// Start of each tracking phase excluded from its metrics (s).
    pub metric_settle_s: f64,
    /// Consecutive frames without an accepted ILM row before aborting.
    pub max_stale_samples: usize,
    /// Re-place the needle and restart Phase 1 after a failed sanity check.
    pub restart_on_sanity_fail: bool,
    pub max_restarts: usize,
    pub insertion_reference: InsertionReference,
}

impl Default for ProcedureConfig {
    fn default() -> Self {
        Self {
            prep_offset: 0.5,
            sync_offset: 0.6758,
            insertion_offset: 0.10137,
            e_max: 0.08,
            settle_window: 40,
            injection_duration: 20.0,
            start_height: 1.0,
            safety_bound: 0.3,
            insertion_rate: 0.05,
            prep_tolerance: 0.005,
            sanity_samples: 3,
            registration_tolerance: 0.02,
            prep_timeout_s: 10.0,
            min_sync_s: 20.0,
            max_sync_s: 90.0,
            plateau_tol: 0.25,
            innovation_gate: 0.1,
            metric_settle_s: 5.0,
            max_stale_samples: 8,
            restart_on_sanity_fail: false,
            max_restarts: 1,
            insertion_reference: InsertionReference::PredictedIlm,
        }
    }
}

impl ProcedureConfig {
    /// Checks the settings against the phantom's retina thickness.
    pub fn validate(&self, retina_thickness: f64) -> Result<()> {
        ensure_finite(
            "procedure config",
            &[
                self.prep_offset,
                self.sync_offset,
                self.insertion_offset,
                self.e_max,
                self.injection_duration,
                self.start_height,
                self.safety_bound,
                self.insertion_rate,
                self.prep_tolerance,
                self.registration_tolerance,
                self.prep_timeout_s,
                self.min_sync_s,
                self.max_sync_s,
                self.plateau_tol,
                self.innovation_gate,
                self.metric_settle_s,
            ],
        )?;
        if !(self.insertion_offset > 0.0 && self.insertion_offset < retina_thickness) {
            return Err(invalid(
                "procedure config",
                format!(
                    "insertion_offset {} mm must lie inside the retina (0, {retina_thickness})",
                    self.insertion_offset
                ),
            ));
        }
        if self.sync_offset <= 0.0 || self.prep_offset <= 0.0 {
            return Err(invalid("procedure config", "sync_offset and prep_offset must be positive"));
        }
        if self.e_max < 0.0 || self.innovation_gate < 0.0 {
            return Err(invalid("procedure config", "e_max and innovation_gate must be non-negative"));
        }
        if self.start_height < self.prep_offset {
            return Err(invalid("procedure config", "start_height must be at least prep_offset"));
        }
        if self.settle_window < 2 || self.sanity_samples == 0 || self.max_stale_samples == 0 {
            return Err(invalid(
                "procedure config",
                "settle_window must be at least 2; sanity_samples and max_stale_samples positive",
            ));
        }
        for (name, v) in [
            ("injection_duration", self.injection_duration),
            ("safety_bound", self.safety_bound),
            ("insertion_rate", self.insertion_rate),
            ("prep_tolerance", self.prep_tolerance),
            ("registration_tolerance", self.registration_tolerance),
            ("prep_timeout_s", self.prep_timeout_s),
            ("plateau_tol", self.plateau_tol),
        ] {
            if v <= 0.0 {
                return Err(invalid("procedure config", format!("{name} must be positive")));
            }
        }
        if self.min_sync_s < 0.0 || self.max_sync_s < self.min_sync_s || self.metric_settle_s < 0.0 {
            return Err(invalid("procedure config", "need 0 <= min_sync_s <= max_sync_s, metric_settle_s >= 0"));
        }
        Ok(())
    }

    /// Samples gathered in Phase 1.
    pub fn phase1_samples(&self) -> usize {
        WINDOW_LEN + self.settle_window
    }
}

/// State of one procedure run, advanced only along the transition table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcedureState {
    pub phase: Phase,
    /// Largest absolute Phase-1 prediction error (mm).
    pub e: Option<f64>,
    pub registration: Option<RegistrationTransform>,
    pub sanity_passed: bool,
    pub injection_success: bool,
    pub restarts: usize,
    pub abort_reason: Option<String>,
}

impl Default for ProcedureState {
    fn default() -> Self {
        Self {
            phase: Phase::MotionEstimation,
            e: None,
            registration: None,
            sanity_passed: false,
            injection_success: false,
            restarts: 0,
            abort_reason: None,
        }
    }
}

impl ProcedureState {
    pub fn advance(&mut self, to: Phase, restart: bool) -> Result<()> {
        if !transition_allowed(self.phase, to, restart) {
            return Err(invalid(
                "phase transition",
                format!("{} -> {}", self.phase.as_str(), to.as_str()),
            ));
        }
        if to == Phase::MotionSync && !(self.sanity_passed && self.registration.is_some()) {
            return Err(invalid("phase transition", "synchronization needs a passed sanity check"));
        }
        if to == Phase::Insertion && !(self.sanity_passed && self.registration.is_some()) {
            return Err(invalid("phase transition", "insertion needs a registration and a passed sanity check"));
        }
        if to == Phase::MotionEstimation {
            self.restarts += 1;
            self.e = None;
            self.registration = None;
            self.sanity_passed = false;
        }
        self.phase = to;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SanityFailure {
    PredictionError,
    NeedleLowerHalf,
    NeedleMissing,
    RegistrationMismatch,
}

impl SanityFailure {
    pub fn as_str(self) -> &'static str {
        match self {
            SanityFailure::PredictionError => "prediction error",
            SanityFailure::NeedleLowerHalf => "needle in lower half",
            SanityFailure::NeedleMissing => "needle not detected",
            SanityFailure::RegistrationMismatch => "registration mismatch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SanityResult {
    pub failures: Vec<SanityFailure>,
}

impl SanityResult {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn reasons(&self) -> String {
        self.failures.iter().map(|f| f.as_str()).collect::<Vec<_>>().join("; ")
    }
}

/// Phase-3 check on the prediction error and the needle's image position.
pub fn sanity_check(e: f64, e_max: f64, needle_px: Option<f64>, geometry: &ImagingGeometry) -> SanityResult {
    let mut failures = Vec::new();
    if !(e <= e_max) {
        failures.push(SanityFailure::PredictionError);
    }
    match needle_px {
        None => failures.push(SanityFailure::NeedleMissing),
        Some(p) if p >= geometry.image_height_px as f64 / 2.0 => failures.push(SanityFailure::NeedleLowerHalf),
        Some(_) => {}
    }
    SanityResult { failures }
}
