//! Batches of closed-loop procedure runs.

use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;
use retsync::predictor::{Predictor, PredictorKind};
use retsync::procedure::{events_to_csv, run_procedure, Phase, PhaseMetrics, ProcedureReport};
use retsync::table::{fmt_sig, write_preamble};

use crate::config::{Condition, ExperimentConfig};
use crate::error::Result;
use crate::pipeline::load_predictor;
use crate::provenance::Provenance;
use crate::store;

pub const SUMMARY_HEADER: &str = "seed,final_phase,success,abort_phase,abort_reason,above_rmse_um,above_maxae_um,inside_rmse_um,inside_maxae_um,rpe_touches,v_after_abort";
pub const CONTROL_HEADER: &str = "phase,offset_um,rmse_um,maxae_um,mean_um,runs";
pub const SUCCESS_HEADER: &str = "runs,completed,successes,aborted,rpe_touches,success_fraction";

/// The condition whose trained model drives the procedure.
pub fn run_condition(cfg: &ExperimentConfig) -> Condition {
    Condition {
        amplitude_mm: cfg.motion.amplitude,
        rate_bpm: cfg.motion.rate_bpm,
    }
}

/// Runs `seeds` consecutive seeds starting at `first` in parallel, in seed order.
pub fn run_batch(cfg: &ExperimentConfig, predictor: &dyn Predictor, first: u64, seeds: u64) -> Result<Vec<ProcedureReport>> {
    let scenario = cfg.scenario();
    let reports = (first..first + seeds)
        .into_par_iter()
        .map(|s| run_procedure(&scenario, predictor, s))
        .collect::<retsync::Result<Vec<_>>>()?;
    Ok(reports)
}

/// Phase metrics pooled over runs, weighting each run by its sample count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pooled {
    pub offset_um: f64,
    pub rmse_um: f64,
    pub maxae_um: f64,
    pub mean_um: f64,
    pub runs: usize,
}

pub fn pool<'a>(metrics: impl IntoIterator<Item = &'a PhaseMetrics>) -> Option<Pooled> {
    let (mut sq, mut abs, mut n, mut max, mut runs, mut offset) = (0.0, 0.0, 0usize, 0.0f64, 0usize, 0.0);
    for m in metrics {
        sq += m.rmse_um * m.rmse_um * m.n as f64;
        abs += m.mean_um * m.n as f64;
        n += m.n;
        max = max.max(m.max_ae_um);
        offset = m.offset_um;
        runs += 1;
    }
    (n > 0).then(|| Pooled {
        offset_um: offset,
        rmse_um: (sq / n as f64).sqrt(),
        maxae_um: max,
        mean_um: abs / n as f64,
        runs,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| fmt_sig(x, 6)).unwrap_or_default()
}

fn summary_row(r: &ProcedureReport) -> String {
    let reason = r.state.abort_reason.as_deref().unwrap_or("").replace([',', '\n'], ";");
    format!(
        "{},{},{},{},{reason},{},{},{},{},{},{}\n",
        r.seed,
        r.state.phase.as_str(),
        r.success(),
        r.abort_phase.map(Phase::as_str).unwrap_or(""),
        opt(r.above_ilm.map(|m| m.rmse_um)),
        opt(r.above_ilm.map(|m| m.max_ae_um)),
        opt(r.inside_retina.map(|m| m.rmse_um)),
        opt(r.inside_retina.map(|m| m.max_ae_um)),
        r.rpe_touches,
        opt(r.v_after_abort),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchOutcome {
    pub runs: usize,
    pub completed: usize,
    pub successes: usize,
    pub aborted: usize,
    pub rpe_touches: usize,
}

/// Writes per-run logs and the batch summaries under `out`.
pub fn write_batch(cfg: &ExperimentConfig, out: &Path, model: PredictorKind, reports: &[ProcedureReport]) -> Result<BatchOutcome> {
    let digest = cfg.digest();
    let first = reports.first().map_or(cfg.seed, |r| r.seed);
    for r in reports {
        let prov = Provenance::new(&digest, r.seed).with("model", model.as_str()).lines();
        let dir = out.join("runs").join(format!("seed_{}", r.seed));
        store::write(&dir.join("events.csv"), &events_to_csv(&r.events, &prov))?;
        store::write(&dir.join("track.csv"), &r.track_csv(&prov))?;
    }
    let prov = Provenance::new(&digest, first)
        .with("model", model.as_str())
        .with("runs", reports.len())
        .lines();

    let mut summary = String::new();
    write_preamble(&mut summary, &prov, SUMMARY_HEADER);
    for r in reports {
        summary.push_str(&summary_row(r));
    }
    store::write(&out.join("run_summary.csv"), &summary)?;

    let mut control = String::new();
    write_preamble(&mut control, &prov, CONTROL_HEADER);
    for (name, pooled) in [
        ("above_ilm", pool(reports.iter().filter_map(|r| r.above_ilm.as_ref()))),
        ("inside_retina", pool(reports.iter().filter_map(|r| r.inside_retina.as_ref()))),
    ] {
        if let Some(p) = pooled {
            control.push_str(&format!(
                "{name},{},{},{},{},{}\n",
                fmt_sig(p.offset_um, 6),
                fmt_sig(p.rmse_um, 6),
                fmt_sig(p.maxae_um, 6),
                fmt_sig(p.mean_um, 6),
                p.runs
            ));
        }
    }
    store::write(&out.join("control_precision.csv"), &control)?;

    let outcome = BatchOutcome {
        runs: reports.len(),
        completed: reports.iter().filter(|r| r.completed()).count(),
        successes: reports.iter().filter(|r| r.success()).count(),
        aborted: reports.iter().filter(|r| r.state.phase == Phase::Aborted).count(),
        rpe_touches: reports.iter().map(|r| r.rpe_touches).sum(),
    };
    let mut success = String::new();
    write_preamble(&mut success, &prov, SUCCESS_HEADER);
    success.push_str(&format!(
        "{},{},{},{},{},{}\n",
        outcome.runs,
        outcome.completed,
        outcome.successes,
        outcome.aborted,
        outcome.rpe_touches,
        fmt_sig(outcome.successes as f64 / outcome.runs.max(1) as f64, 6)
    ));
    store::write(&out.join("success.csv"), &success)?;
    for r in reports.iter().filter(|r| r.state.phase == Phase::Aborted) {
        warn!(
            "seed {} aborted in {}: {}",
            r.seed,
            r.abort_phase.map(Phase::as_str).unwrap_or("?"),
            r.state.abort_reason.as_deref().unwrap_or("")
        );
    }
    info!(
        "{} runs: {} completed, {} successful, {} aborted",
        outcome.runs, outcome.completed, outcome.successes, outcome.aborted
    );
    Ok(outcome)
}

/// `run` command: loads the predictor, runs the batch and writes its outputs.
pub fn run(cfg: &ExperimentConfig, out: &Path, model: PredictorKind, first: u64, seeds: u64) -> Result<BatchOutcome> {
    let predictor = load_predictor(cfg, out, model, run_condition(cfg))?;
    let reports = run_batch(cfg, predictor.as_ref(), first, seeds)?;
    write_batch(cfg, out, model, &reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rmse: f64, max: f64, mean: f64, n: usize) -> PhaseMetrics {
        PhaseMetrics {
            offset_um: 675.8,
            rmse_um: rmse,
            max_ae_um: max,
            mean_um: mean,
            n,
        }
    }

    #[test]
    fn pooling_weights_by_samples() {
        let a = m(3.0, 5.0, 2.0, 100);
        let b = m(4.0, 9.0, 3.0, 300);
        let p = pool([&a, &b]).unwrap();
        assert!((p.rmse_um - ((9.0 * 100.0 + 16.0 * 300.0) / 400.0f64).sqrt()).abs() < 1e-12);
        assert_eq!(p.maxae_um, 9.0);
        assert!((p.mean_um - 2.75).abs() < 1e-12);
        assert_eq!(p.runs, 2);
        assert!(pool(std::iter::empty()).is_none());
        let single = pool([&a]).unwrap();
        assert!((single.rmse_um - 3.0).abs() < 1e-12);
    }
}
