//! Prediction grid: per-cell data generation, training and scoring.
//!
//! Each cell is observed with the needle out of view. The gated ILM rows,
//! converted to image-frame mm, are the predictor input; the true ILM depth
//! below the top of the image is the reference.

use retsync::gate::{gate_series, GateConfig};
use retsync::metrics::{evaluate, PredictionReport};
use retsync::motion::{generate_trace, LayerDepths, MotionProfile, MotionTrace};
use retsync::observation::{observe, DepthSample, ImagingGeometry, ObservationNoise};
use retsync::predictor::{lstm_train, predict_series, LstmModel, Predictor, TrainReport, WINDOW_LEN};

use crate::config::{Condition, ExperimentConfig};
use crate::error::{invalid, Result};

/// Needle depth used while recording grid data: above the imaging window.
pub const NEEDLE_OUT_OF_VIEW_Z: f64 = 0.0;

#[derive(Debug, Clone)]
pub struct CellData {
    pub condition: Condition,
    pub trace: MotionTrace,
    pub samples: Vec<DepthSample>,
}

/// Phantom of one cell. The run seed shifts the disturbance seed.
pub fn cell_profile(cfg: &ExperimentConfig, cond: Condition, seed: u64) -> MotionProfile {
    let mut p = cond.profile(&cfg.motion);
    p.disturbance.seed = p.disturbance.seed.wrapping_add(seed);
    p
}

pub fn cell_noise(cfg: &ExperimentConfig, seed: u64) -> ObservationNoise {
    let mut n = cfg.noise;
    n.seed = n.seed.wrapping_add(seed);
    n
}

/// Ground truth and segmentation output over `duration` seconds.
pub fn simulate(
    profile: &MotionProfile,
    geometry: &ImagingGeometry,
    noise: &ObservationNoise,
    duration: f64,
    rate_hz: f64,
) -> Result<(MotionTrace, Vec<DepthSample>)> {
    let trace = generate_trace(profile, duration, rate_hz)?;
    let samples = (0..trace.len())
        .map(|i| {
            let d = LayerDepths {
                ilm: trace.ilm_z[i],
                rpe: trace.rpe_z[i],
            };
            observe(d, NEEDLE_OUT_OF_VIEW_Z, geometry, noise, trace.t[i], i as u64)
        })
        .collect::<retsync::Result<Vec<_>>>()?;
    Ok((trace, samples))
}

/// Training plus scoring span of one cell.
pub fn simulate_cell(cfg: &ExperimentConfig, cond: Condition, seed: u64) -> Result<CellData> {
    let g = &cfg.grid;
    let (trace, samples) = simulate(
        &cell_profile(cfg, cond, seed),
        &cfg.geometry,
        &cell_noise(cfg, seed),
        g.train_s + g.eval_s,
        g.sample_rate_hz,
    )?;
    Ok(CellData {
        condition: cond,
        trace,
        samples,
    })
}

/// Gated ILM depth below the top of the image (mm), one value per sample.
pub fn ilm_series(samples: &[DepthSample], geometry: &ImagingGeometry, gate: GateConfig) -> Result<Vec<f64>> {
    let times: Vec<f64> = samples.iter().map(|s| s.t).collect();
    let rows: Vec<Option<u32>> = samples.iter().map(|s| s.ilm_px).collect();
    let px = gate_series(&times, &rows, gate).ok_or_else(|| invalid("no ILM row was ever observed"))?;
    Ok(px.into_iter().map(|p| p * geometry.mm_per_px).collect())
}

/// True ILM depth below the top of the image (mm).
pub fn truth_series(trace: &MotionTrace, geometry: &ImagingGeometry) -> Vec<f64> {
    trace.ilm_z.iter().map(|z| z - geometry.window_top_z).collect()
}

/// Index of the first scored sample.
pub fn split_index(cfg: &ExperimentConfig) -> usize {
    (cfg.grid.train_s * cfg.grid.sample_rate_hz + 1e-9).floor() as usize
}

/// Trains on the leading `train_s` of `series`.
pub fn train_cell(cfg: &ExperimentConfig, series: &[f64]) -> Result<(LstmModel, TrainReport)> {
    let split = split_index(cfg).min(series.len());
    Ok(lstm_train(&[series[..split].to_vec()], &cfg.train)?)
}

#[derive(Debug, Clone)]
pub struct CellScore {
    pub times: Vec<f64>,
    pub predictions: Vec<f64>,
    pub truths: Vec<f64>,
    pub report: PredictionReport,
}

/// Scores one-step forecasts of every sample from the split to the end.
/// The first windows reach back into the training span.
pub fn evaluate_cell(
    cfg: &ExperimentConfig,
    predictor: &dyn Predictor,
    times: &[f64],
    series: &[f64],
    truth: &[f64],
) -> Result<CellScore> {
    if times.len() != series.len() || truth.len() != series.len() {
        return Err(invalid(format!(
            "times, series and truth differ in length ({}, {}, {})",
            times.len(),
            series.len(),
            truth.len()
        )));
    }
    let split = split_index(cfg);
    if split < WINDOW_LEN || split >= series.len() {
        return Err(invalid(format!(
            "{} samples leave nothing to score after a split at {split}",
            series.len()
        )));
    }
    let from = split - WINDOW_LEN;
    let predictions = predict_series(predictor, &times[from..], &series[from..])?;
    let truths = truth[split..].to_vec();
    let report = evaluate(&predictions, &truths)?;
    Ok(CellScore {
        times: times[split..].to_vec(),
        predictions,
        truths,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use retsync::predictor::HoldPredictor;

    fn small() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.grid.train_s = 20.0;
        c.grid.eval_s = 10.0;
        c
    }

    #[test]
    fn cell_lengths_and_split() {
        let c = small();
        let cond = Condition { amplitude_mm: 0.1, rate_bpm: 8.0 };
        let d = simulate_cell(&c, cond, 0).unwrap();
        assert_eq!(d.trace.len(), 121);
        assert_eq!(d.samples.len(), 121);
        assert!(d.samples.iter().all(|s| s.needle_px.is_none()));
        let s = ilm_series(&d.samples, &c.geometry, c.gate).unwrap();
        let truth = truth_series(&d.trace, &c.geometry);
        let score = evaluate_cell(&c, &HoldPredictor, &d.trace.t, &s, &truth).unwrap();
        assert_eq!(split_index(&c), 80);
        assert_eq!(score.predictions.len(), 41);
        assert_eq!(score.times[0], 20.0);
        // Holding the previous sample over a quarter second of 0.1 mm motion.
        assert!(score.report.rmse_um > 5.0 && score.report.rmse_um < 200.0);
    }

    #[test]
    fn seed_changes_data() {
        let c = small();
        let cond = Condition { amplitude_mm: 0.05, rate_bpm: 10.0 };
        let a = simulate_cell(&c, cond, 0).unwrap();
        let b = simulate_cell(&c, cond, 1).unwrap();
        let a2 = simulate_cell(&c, cond, 0).unwrap();
        assert_ne!(a.trace.ilm_z, b.trace.ilm_z);
        assert_eq!(a.trace.ilm_z, a2.trace.ilm_z);
        assert_eq!(a.samples, a2.samples);
    }

    #[test]
    fn ideal_series_matches_truth_to_half_pixel() {
        let mut c = small();
        c.noise = ObservationNoise::ideal();
        let d = simulate_cell(&c, Condition { amplitude_mm: 0.1, rate_bpm: 9.0 }, 3).unwrap();
        let s = ilm_series(&d.samples, &c.geometry, c.gate).unwrap();
        let truth = truth_series(&d.trace, &c.geometry);
        for (m, t) in s.iter().zip(&truth) {
            assert!((m - t).abs() <= 0.5 * c.geometry.mm_per_px + 1e-12);
        }
    }
}
