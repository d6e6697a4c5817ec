//! The `generate`, `train` and `evaluate` stages. Each stage reads the files
//! of the previous one from the output directory.

use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use retsync::motion::MotionTrace;
use retsync::observation::{samples_from_csv, samples_to_csv, DepthSample};
use retsync::predictor::{FftPredictor, HoldPredictor, LstmModel, Predictor, PredictorKind, TrainReport};
use retsync::table::{fmt_sig, write_preamble};
use serde::{Deserialize, Serialize};

use crate::config::{Condition, ExperimentConfig};
use crate::error::{invalid, Result};
use crate::grid::{evaluate_cell, ilm_series, simulate, cell_noise, cell_profile, train_cell, truth_series, CellScore};
use crate::provenance::Provenance;
use crate::store;

pub const GRID_REPORT_HEADER: &str = "amp_mm,rate_bpm,model,rmse_um,maxae_um,seed,config_digest";
pub const COMPARISON_HEADER: &str =
    "amp_mm,rate_bpm,lstm_rmse_um,fft_rmse_um,lstm_maxae_um,fft_maxae_um,lstm_better";
pub const PREDICTION_HEADER: &str = "model,t_s,truth_mm,prediction_mm,residual_um";
pub const MANIFEST_HEADER: &str = "condition,amp_mm,rate_bpm,samples,truth_file,samples_file";
pub const LOSS_HEADER: &str = "epoch,train_loss,val_loss";

pub fn truth_path(out: &Path, c: Condition) -> PathBuf {
    out.join("traces").join(format!("{c}_truth.csv"))
}

pub fn samples_path(out: &Path, c: Condition) -> PathBuf {
    out.join("traces").join(format!("{c}_samples.csv"))
}

pub fn model_path(out: &Path, c: Condition) -> PathBuf {
    out.join("models").join(format!("{c}_lstm.json"))
}

pub fn loss_path(out: &Path, c: Condition) -> PathBuf {
    out.join("models").join(format!("{c}_loss.csv"))
}

pub const MODEL_FORMAT: u32 = 1;

/// A trained model with the provenance of the data it was fitted to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: u32,
    pub provenance: Vec<String>,
    pub condition: String,
    pub model: LstmModel,
}

impl ModelFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = store::read(path)?;
        let m: ModelFile =
            serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        if m.format != MODEL_FORMAT {
            return Err(invalid(format!(
                "{}: model format {} is not supported (expected {MODEL_FORMAT})",
                path.display(),
                m.format
            )));
        }
        store::in_file(path, m.model.validate())?;
        Provenance::parse(&m.provenance).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| invalid(e.to_string()))?;
        store::write(path, &(text + "\n"))
    }
}

/// Conditions selected by `--condition`, or the whole grid.
pub fn selected(cfg: &ExperimentConfig, only: Option<Condition>) -> Vec<Condition> {
    match only {
        Some(c) => vec![c],
        None => cfg.conditions(),
    }
}

/// Writes traces and segmentation samples for every selected condition.
pub fn generate(
    cfg: &ExperimentConfig,
    out: &Path,
    seed: u64,
    conditions: &[Condition],
    duration: f64,
    rate_hz: f64,
) -> Result<()> {
    if !(duration > 0.0 && duration.is_finite() && rate_hz > 0.0 && rate_hz.is_finite()) {
        return Err(invalid("duration and rate must be positive"));
    }
    let digest = cfg.digest();
    let files: Vec<(Condition, String, String, usize)> = conditions
        .par_iter()
        .map(|&c| {
            let (trace, samples) =
                simulate(&cell_profile(cfg, c, seed), &cfg.geometry, &cell_noise(cfg, seed), duration, rate_hz)?;
            let prov = Provenance::new(&digest, seed)
                .with("condition", c)
                .with("duration_s", duration)
                .with("rate_hz", rate_hz)
                .lines();
            Ok((c, trace.to_csv(&prov), samples_to_csv(&samples, &prov), samples.len()))
        })
        .collect::<Result<_>>()?;
    let mut manifest = String::new();
    write_preamble(&mut manifest, &Provenance::new(&digest, seed).lines(), MANIFEST_HEADER);
    for (c, truth, samples, n) in files {
        let (tp, sp) = (truth_path(out, c), samples_path(out, c));
        store::write(&tp, &truth)?;
        store::write(&sp, &samples)?;
        info!("generated {c}: {n} samples");
        manifest.push_str(&format!(
            "{c},{},{},{n},traces/{},traces/{}\n",
            c.amplitude_mm,
            c.rate_bpm,
            file_name(&tp),
            file_name(&sp)
        ));
    }
    store::write(&out.join("traces").join("manifest.csv"), &manifest)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Loaded grid data for one condition, checked against the active config.
pub struct CellFiles {
    pub provenance: Provenance,
    pub trace: MotionTrace,
    pub samples: Vec<DepthSample>,
}

fn check_digest(path: &Path, prov: &Provenance, digest: &str) -> Result<()> {
    if prov.config_digest != digest {
        return Err(invalid(format!(
            "{}: written with config digest {}, but the active config has {digest}",
            path.display(),
            prov.config_digest
        )));
    }
    Ok(())
}

pub fn load_cell(cfg: &ExperimentConfig, out: &Path, c: Condition) -> Result<CellFiles> {
    let digest = cfg.digest();
    let sp = samples_path(out, c);
    let (samples, comments) = store::in_file(&sp, samples_from_csv(&store::read(&sp)?))?;
    let provenance = Provenance::parse(&comments).map_err(|e| invalid(format!("{}: {e}", sp.display())))?;
    check_digest(&sp, &provenance, &digest)?;
    let tp = truth_path(out, c);
    let (trace, tc) = store::in_file(&tp, MotionTrace::from_csv(&store::read(&tp)?))?;
    let tprov = Provenance::parse(&tc).map_err(|e| invalid(format!("{}: {e}", tp.display())))?;
    check_digest(&tp, &tprov, &digest)?;
    if trace.len() != samples.len() {
        return Err(invalid(format!(
            "{} has {} rows but {} has {}",
            tp.display(),
            trace.len(),
            sp.display(),
            samples.len()
        )));
    }
    Ok(CellFiles {
        provenance,
        trace,
        samples,
    })
}

fn loss_csv(report: &TrainReport, prov: &[String]) -> String {
    let mut s = String::new();
    write_preamble(&mut s, prov, LOSS_HEADER);
    for (i, l) in report.train_loss.iter().enumerate() {
        let v = report.val_loss.get(i).map(|v| fmt_sig(*v, 9)).unwrap_or_default();
        s.push_str(&format!("{},{},{v}\n", i + 1, fmt_sig(*l, 9)));
    }
    s
}

/// Trains one LSTM per selected condition on its generated samples.
pub fn train(cfg: &ExperimentConfig, out: &Path, conditions: &[Condition]) -> Result<()> {
    let cells: Vec<(Condition, CellFiles)> = conditions
        .iter()
        .map(|&c| Ok((c, load_cell(cfg, out, c)?)))
        .collect::<Result<_>>()?;
    let trained: Vec<(Condition, Provenance, LstmModel, TrainReport)> = cells
        .par_iter()
        .map(|(c, f)| {
            let series = ilm_series(&f.samples, &cfg.geometry, cfg.gate)?;
            let (model, report) = train_cell(cfg, &series)?;
            Ok((*c, f.provenance.clone(), model, report))
        })
        .collect::<Result<_>>()?;
    for (c, data_prov, model, report) in trained {
        let prov = Provenance::new(&data_prov.config_digest, data_prov.seed)
            .with("condition", c)
            .with("best_epoch", report.best_epoch)
            .lines();
        info!("trained {c}: best epoch {} of {}", report.best_epoch, report.train_loss.len());
        ModelFile {
            format: MODEL_FORMAT,
            provenance: prov.clone(),
            condition: c.to_string(),
            model,
        }
        .save(&model_path(out, c))?;
        store::write(&loss_path(out, c), &loss_csv(&report, &prov))?;
    }
    Ok(())
}

/// Loads the predictor used for `c`. LSTM models must have been trained.
pub fn load_predictor(cfg: &ExperimentConfig, out: &Path, kind: PredictorKind, c: Condition) -> Result<Box<dyn Predictor>> {
    Ok(match kind {
        PredictorKind::Lstm => {
            let path = model_path(out, c);
            if !path.exists() {
                return Err(invalid(format!(
                    "{}: no trained model for {c}; run `retsync train` first",
                    path.display()
                )));
            }
            Box::new(ModelFile::load(&path)?.model)
        }
        PredictorKind::Fft => Box::new(FftPredictor {
            rate_hz: cfg.grid.sample_rate_hz,
        }),
        PredictorKind::Hold => Box::new(HoldPredictor),
    })
}

#[derive(Debug, Clone)]
pub struct GridRow {
    pub condition: Condition,
    pub model: PredictorKind,
    pub rmse_um: f64,
    pub maxae_um: f64,
}

fn predictions_csv(scores: &[(PredictorKind, CellScore)], prov: &[String]) -> String {
    let mut s = String::new();
    write_preamble(&mut s, prov, PREDICTION_HEADER);
    for (kind, sc) in scores {
        for i in 0..sc.predictions.len() {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                kind.as_str(),
                fmt_sig(sc.times[i], 9),
                fmt_sig(sc.truths[i], 9),
                fmt_sig(sc.predictions[i], 9),
                fmt_sig(sc.report.residuals_um[i], 6)
            ));
        }
    }
    s
}

/// Scores the requested predictors on the held-out span of every selected
/// condition and writes `grid_report.csv`, `comparison.csv` and per-cell
/// prediction logs.
pub fn evaluate(
    cfg: &ExperimentConfig,
    out: &Path,
    conditions: &[Condition],
    models: &[PredictorKind],
) -> Result<Vec<GridRow>> {
    if models.is_empty() {
        return Err(invalid("no predictor selected"));
    }
    let digest = cfg.digest();
    let mut seed = None;
    let mut per_cell = Vec::new();
    for &c in conditions {
        let f = load_cell(cfg, out, c)?;
        if *seed.get_or_insert(f.provenance.seed) != f.provenance.seed {
            return Err(invalid("generated traces come from different seeds"));
        }
        let predictors = models
            .iter()
            .map(|&k| Ok((k, load_predictor(cfg, out, k, c)?)))
            .collect::<Result<Vec<_>>>()?;
        per_cell.push((c, f, predictors));
    }
    let seed = seed.unwrap_or(0);
    let scored: Vec<(Condition, Vec<(PredictorKind, CellScore)>)> = per_cell
        .par_iter()
        .map(|(c, f, predictors)| {
            let series = ilm_series(&f.samples, &cfg.geometry, cfg.gate)?;
            let truth = truth_series(&f.trace, &cfg.geometry);
            let scores = predictors
                .iter()
                .map(|(k, p)| Ok((*k, evaluate_cell(cfg, p.as_ref(), &f.trace.t, &series, &truth)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok((*c, scores))
        })
        .collect::<Result<_>>()?;

    let prov = Provenance::new(&digest, seed).lines();
    let mut report = String::new();
    write_preamble(&mut report, &prov, GRID_REPORT_HEADER);
    let mut comparison = String::new();
    write_preamble(&mut comparison, &prov, COMPARISON_HEADER);
    let mut rows = Vec::new();
    for (c, scores) in &scored {
        for (k, sc) in scores {
            info!("{c} {}: RMSE {:.2} um, MaxAE {:.2} um", k.as_str(), sc.report.rmse_um, sc.report.max_ae_um);
            report.push_str(&format!(
                "{},{},{},{},{},{seed},{digest}\n",
                c.amplitude_mm,
                c.rate_bpm,
                k.as_str(),
                fmt_sig(sc.report.rmse_um, 6),
                fmt_sig(sc.report.max_ae_um, 6)
            ));
            rows.push(GridRow {
                condition: *c,
                model: *k,
                rmse_um: sc.report.rmse_um,
                maxae_um: sc.report.max_ae_um,
            });
        }
        let find = |kind| scores.iter().find(|(k, _)| *k == kind).map(|(_, s)| &s.report);
        if let (Some(l), Some(f)) = (find(PredictorKind::Lstm), find(PredictorKind::Fft)) {
            comparison.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                c.amplitude_mm,
                c.rate_bpm,
                fmt_sig(l.rmse_um, 6),
                fmt_sig(f.rmse_um, 6),
                fmt_sig(l.max_ae_um, 6),
                fmt_sig(f.max_ae_um, 6),
                l.rmse_um < f.rmse_um && l.max_ae_um < f.max_ae_um
            ));
        }
        let cell_prov = Provenance::new(&digest, seed).with("condition", c).lines();
        store::write(&out.join("predictions").join(format!("{c}.csv")), &predictions_csv(scores, &cell_prov))?;
    }
    store::write(&out.join("grid_report.csv"), &report)?;
    store::write(&out.join("comparison.csv"), &comparison)?;
    Ok(rows)
}
