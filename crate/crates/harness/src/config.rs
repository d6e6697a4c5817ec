//! Experiment configuration: one TOML file with a section per module.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use retsync::controller::{AxisConfig, ControllerConfig, HoldConfig};
use retsync::gate::GateConfig;
use retsync::motion::MotionProfile;
use retsync::observation::{ImagingGeometry, ObservationNoise};
use retsync::predictor::TrainConfig;
use retsync::procedure::{ProcedureConfig, Scenario};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Result};
use crate::store;

/// The 3 × 3 prediction grid and its data protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub amplitudes_mm: Vec<f64>,
    pub rates_bpm: Vec<f64>,
    /// Leading part of every trace used for training (s).
    pub train_s: f64,
    /// Part right after the training span used for scoring (s).
    pub eval_s: f64,
    pub sample_rate_hz: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            amplitudes_mm: vec![0.05, 0.1, 0.15],
            rates_bpm: vec![8.0, 9.0, 10.0],
            train_s: 600.0,
            eval_s: 300.0,
            sample_rate_hz: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// First seed; `--seed` overrides it.
    pub seed: u64,
    /// Number of consecutive seeds in a `run` batch; `--seeds` overrides it.
    pub seeds: u64,
    /// Output directory; `--out` overrides it.
    pub out: PathBuf,
    pub grid: GridConfig,
    /// Phantom used by `run`; the grid replaces amplitude and rate per cell.
    pub motion: MotionProfile,
    pub geometry: ImagingGeometry,
    pub noise: ObservationNoise,
    pub gate: GateConfig,
    pub train: TrainConfig,
    pub controller: ControllerConfig,
    pub axis: AxisConfig,
    pub hold: HoldConfig,
    pub procedure: ProcedureConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            seeds: 1,
            out: PathBuf::from("out"),
            grid: GridConfig::default(),
            motion: MotionProfile::default(),
            geometry: ImagingGeometry::default(),
            noise: ObservationNoise::default(),
            gate: GateConfig::default(),
            train: TrainConfig::default(),
            controller: ControllerConfig::default(),
            axis: AxisConfig::default(),
            hold: HoldConfig::default(),
            procedure: ProcedureConfig::default(),
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

/// Line of the `[section]` header, if the file has one.
fn section_line(text: &str, section: &str) -> Option<usize> {
    let want = format!("[{section}]");
    text.lines().position(|l| l.trim() == want).map(|i| i + 1)
}

impl ExperimentConfig {
    /// Parses and validates a config. `origin` names the source in messages.
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().trim().to_string();
            match e.span() {
                Some(span) => {
                    let (line, col) = line_col(text, span.start);
                    invalid(format!("{origin}:{line}:{col}: {msg}"))
                }
                None => invalid(format!("{origin}: {msg}")),
            }
        })?;
        cfg.validate_sections(|section| match section_line(text, section) {
            Some(line) => format!("{origin}:{line}: [{section}]"),
            None => format!("{origin}: [{section}]"),
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = store::read(path)?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_sections(|section| format!("[{section}]"))
    }

    fn validate_sections(&self, locate: impl Fn(&str) -> String) -> Result<()> {
        let wrap = |section: &str, r: retsync::Result<()>| r.map_err(|e| invalid(format!("{}: {e}", locate(section))));
        let g = &self.grid;
        if g.amplitudes_mm.is_empty() || g.rates_bpm.is_empty() {
            return Err(invalid(format!("{}: amplitudes_mm and rates_bpm must not be empty", locate("grid"))));
        }
        for &a in &g.amplitudes_mm {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(invalid(format!("{}: amplitude {a} must be finite and non-negative", locate("grid"))));
            }
        }
        for &r in &g.rates_bpm {
            wrap("grid", retsync::motion::bpm_to_hz(r).map(|_| ()))?;
        }
        if !(g.sample_rate_hz > 0.0 && g.sample_rate_hz.is_finite()) {
            return Err(invalid(format!("{}: sample_rate_hz must be positive", locate("grid"))));
        }
        if !(g.train_s > 0.0 && g.eval_s > 0.0 && (g.train_s + g.eval_s).is_finite()) {
            return Err(invalid(format!("{}: train_s and eval_s must be positive", locate("grid"))));
        }
        let min_samples = (g.train_s * g.sample_rate_hz) as usize;
        if min_samples <= retsync::predictor::WINDOW_LEN {
            return Err(invalid(format!("{}: train_s is shorter than one predictor window", locate("grid"))));
        }
        if self.seeds == 0 {
            return Err(invalid("seeds must be at least 1"));
        }
        wrap("motion", self.motion.validate())?;
        wrap("geometry", self.geometry.validate())?;
        wrap("noise", self.noise.validate())?;
        wrap("gate", self.gate.validate())?;
        wrap("train", self.train.validate())?;
        wrap("controller", self.controller.validate())?;
        wrap("axis", self.axis.validate())?;
        wrap("procedure", self.procedure.validate(self.motion.retina_thickness))?;
        wrap("controller", self.scenario().validate())
    }

    /// Scenario for closed-loop runs before per-seed derivation.
    pub fn scenario(&self) -> Scenario {
        Scenario {
            profile: self.motion,
            geometry: self.geometry,
            noise: self.noise,
            gate: self.gate,
            controller: self.controller,
            axis: self.axis,
            hold: self.hold,
            procedure: self.procedure,
        }
    }

    /// Cells of the prediction grid in amplitude-major order.
    pub fn conditions(&self) -> Vec<Condition> {
        let mut v = Vec::new();
        for &amplitude_mm in &self.grid.amplitudes_mm {
            for &rate_bpm in &self.grid.rates_bpm {
                v.push(Condition { amplitude_mm, rate_bpm });
            }
        }
        v
    }

    /// Short hash of everything that determines results, excluding the seed
    /// selection and the output location.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.seed = 0;
        c.seeds = 1;
        c.out = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serializes");
        let hash = Sha256::digest(json.as_bytes());
        hex::encode(hash)[..16].to_string()
    }
}

/// One cell of the grid, written `AMPxBPM` (e.g. `0.1x8`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Condition {
    pub amplitude_mm: f64,
    pub rate_bpm: f64,
}

impl Condition {
    /// The motion profile of this cell.
    pub fn profile(&self, base: &MotionProfile) -> MotionProfile {
        MotionProfile {
            amplitude: self.amplitude_mm,
            rate_bpm: self.rate_bpm,
            ..*base
        }
    }

    /// Whether the cell matches `other` up to float formatting.
    pub fn same(&self, other: &Condition) -> bool {
        (self.amplitude_mm - other.amplitude_mm).abs() < 1e-12 && (self.rate_bpm - other.rate_bpm).abs() < 1e-12
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.amplitude_mm, self.rate_bpm)
    }
}

impl FromStr for Condition {
    type Err = crate::error::HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || invalid(format!("condition '{s}' is not of the form AMPxBPM, e.g. 0.1x8"));
        let (a, r) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        let amplitude_mm: f64 = a.trim().parse().map_err(|_| bad())?;
        let rate_bpm: f64 = r.trim().parse().map_err(|_| bad())?;
        if !(amplitude_mm >= 0.0 && amplitude_mm.is_finite() && rate_bpm > 0.0 && rate_bpm.is_finite()) {
            return Err(bad());
        }
        Ok(Condition { amplitude_mm, rate_bpm })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ExperimentConfig::from_toml_str("", "x.toml").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.conditions().len(), 9);
    }

    #[test]
    fn unknown_key_reports_line_and_column() {
        let text = "seed = 3\n\n[noise]\nsd_px = 2.0\nsd_pixels = 1.0\n";
        let e = ExperimentConfig::from_toml_str(text, "exp.toml").unwrap_err().to_string();
        assert!(e.starts_with("exp.toml:5:1:"), "{e}");
        assert!(e.contains("sd_pixels"), "{e}");
    }

    #[test]
    fn type_error_reports_line() {
        let text = "[controller]\nk_v = \"fast\"\n";
        let e = ExperimentConfig::from_toml_str(text, "c.toml").unwrap_err().to_string();
        assert!(e.starts_with("c.toml:2:"), "{e}");
    }

    #[test]
    fn semantic_error_points_at_section() {
        let text = "seed = 1\n[procedure]\ninsertion_offset = 0.4\n";
        let e = ExperimentConfig::from_toml_str(text, "p.toml").unwrap_err().to_string();
        assert!(e.starts_with("p.toml:2: [procedure]"), "{e}");
    }

    #[test]
    fn digest_ignores_seed_and_output() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.seed = 9;
        b.seeds = 100;
        b.out = PathBuf::from("elsewhere");
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 16);
        b.noise.sd_px = 2.0;
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn condition_parsing() {
        let c: Condition = "0.1x8".parse().unwrap();
        assert_eq!(c, Condition { amplitude_mm: 0.1, rate_bpm: 8.0 });
        assert_eq!(c.to_string(), "0.1x8");
        assert_eq!("0.15X10".parse::<Condition>().unwrap().to_string(), "0.15x10");
        for bad in ["0.1", "x8", "0.1x0", "-1x8", "ax8"] {
            assert!(bad.parse::<Condition>().is_err(), "{bad}");
        }
    }
}
