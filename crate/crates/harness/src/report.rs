//! Merges the outputs of several experiment directories into summary tables.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use retsync::table::{fmt_sig, write_preamble, CsvTable};

use crate::error::{invalid, Result};
use crate::pipeline::GRID_REPORT_HEADER;
use crate::provenance::{Provenance, VERSION};
use crate::runs::{CONTROL_HEADER, SUCCESS_HEADER};
use crate::store;

pub const PREDICTION_TABLE_HEADER: &str = "amp_mm,rate_bpm,model,rmse_um,maxae_um,seeds";
pub const COMPARISON_TABLE_HEADER: &str = "case,amp_mm,rate_bpm,model,rmse_um,maxae_um";
pub const CONTROL_TABLE_HEADER: &str = "phase,offset_um,rmse_um,maxae_um,mean_um,runs";
pub const SUCCESS_TABLE_HEADER: &str = "runs,completed,successes,aborted,rpe_touches,success_fraction";
pub const PLOT_INDEX_HEADER: &str = "figure,file,x,y,series";

struct Loaded {
    path: PathBuf,
    digest: String,
    table: CsvTable,
}

fn load(path: &Path, header: &str) -> Result<Option<Loaded>> {
    if !path.exists() {
        return Ok(None);
    }
    let table = store::in_file(path, CsvTable::parse(&store::read(path)?, header))?;
    let prov = Provenance::parse(&table.comments).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    Ok(Some(Loaded {
        path: path.to_path_buf(),
        digest: prov.config_digest,
        table,
    }))
}

fn num(l: &Loaded, line: usize, cell: &str) -> Result<f64> {
    cell.parse()
        .map_err(|_| invalid(format!("{}:{line}: not a number: `{cell}`", l.path.display())))
}

/// Key of a merged row; `digest` is empty unless mixing is allowed.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct CellKey {
    digest: String,
    amplitude: String,
    rate: String,
    model: String,
}

#[derive(Debug, Default, Clone, Copy)]
struct Acc {
    rmse: f64,
    maxae: f64,
    n: usize,
}

#[derive(Debug, Default, Clone, Copy)]
struct ControlAcc {
    offset: f64,
    sq: f64,
    maxae: f64,
    mean: f64,
    runs: usize,
}

#[derive(Debug, Default, Clone, Copy)]
struct SuccessAcc {
    runs: usize,
    completed: usize,
    successes: usize,
    aborted: usize,
    touches: usize,
}

/// Summary of what was merged.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub digests: Vec<String>,
    pub grid_files: usize,
    pub run_files: usize,
}

fn sorted_f64_key(s: &str) -> (u64, String) {
    // Sort numerically when possible while keeping the original text.
    (s.parse::<f64>().map(|v| v.to_bits()).unwrap_or(u64::MAX), s.to_string())
}

/// Reads `grid_report.csv`, `control_precision.csv` and `success.csv` from
/// every input directory and writes the merged tables to `out`.
///
/// Inputs produced under different configurations are refused unless
/// `allow_mixed` is set; then every row carries its config digest.
pub fn report(inputs: &[PathBuf], out: &Path, allow_mixed: bool) -> Result<ReportSummary> {
    if inputs.is_empty() {
        return Err(invalid("report needs at least one input directory"));
    }
    let mut grids = Vec::new();
    let mut controls = Vec::new();
    let mut successes = Vec::new();
    for dir in inputs {
        if !dir.is_dir() {
            return Err(invalid(format!("{}: not a directory", dir.display())));
        }
        grids.extend(load(&dir.join("grid_report.csv"), GRID_REPORT_HEADER)?);
        controls.extend(load(&dir.join("control_precision.csv"), CONTROL_HEADER)?);
        successes.extend(load(&dir.join("success.csv"), SUCCESS_HEADER)?);
    }
    if grids.is_empty() && controls.is_empty() && successes.is_empty() {
        return Err(invalid("no grid_report.csv, control_precision.csv or success.csv found in the inputs"));
    }
    let mut digests: Vec<String> = grids
        .iter()
        .chain(&controls)
        .chain(&successes)
        .map(|l| l.digest.clone())
        .collect();
    digests.sort();
    digests.dedup();
    let mixed = digests.len() > 1;
    if mixed && !allow_mixed {
        let first = grids.iter().chain(&controls).chain(&successes).next().expect("non-empty");
        let other = grids
            .iter()
            .chain(&controls)
            .chain(&successes)
            .find(|l| l.digest != first.digest)
            .expect("mixed");
        return Err(invalid(format!(
            "inputs come from different configurations: {} has {} but {} has {}; pass --allow-mixed to merge them anyway",
            first.path.display(),
            first.digest,
            other.path.display(),
            other.digest
        )));
    }
    let tag = |d: &str| if mixed { d.to_string() } else { String::new() };
    let lead = |h: &str| if mixed { format!("config_digest,{h}") } else { h.to_string() };
    let prefix = |d: &str| if mixed { format!("{d},") } else { String::new() };
    let comments = vec![
        format!("retsync {VERSION} report"),
        format!("config_digests={}", digests.join(";")),
        format!("inputs={}", inputs.len()),
    ];

    // Prediction grid: mean over seeds per cell and model.
    let mut cells: BTreeMap<CellKey, Acc> = BTreeMap::new();
    for l in &grids {
        for (line, c) in &l.table.rows {
            let key = CellKey {
                digest: tag(&l.digest),
                amplitude: c[0].clone(),
                rate: c[1].clone(),
                model: c[2].clone(),
            };
            let a = cells.entry(key).or_default();
            a.rmse += num(l, *line, &c[3])?;
            a.maxae += num(l, *line, &c[4])?;
            a.n += 1;
        }
    }
    let mut ordered: Vec<(&CellKey, &Acc)> = cells.iter().collect();
    ordered.sort_by(|a, b| {
        (&a.0.digest, sorted_f64_key(&a.0.amplitude), sorted_f64_key(&a.0.rate), &a.0.model).cmp(&(
            &b.0.digest,
            sorted_f64_key(&b.0.amplitude),
            sorted_f64_key(&b.0.rate),
            &b.0.model,
        ))
    });
    let mut pred = String::new();
    write_preamble(&mut pred, &comments, &lead(PREDICTION_TABLE_HEADER));
    for (k, a) in &ordered {
        pred.push_str(&format!(
            "{}{},{},{},{},{},{}\n",
            prefix(&k.digest),
            k.amplitude,
            k.rate,
            k.model,
            fmt_sig(a.rmse / a.n as f64, 6),
            fmt_sig(a.maxae / a.n as f64, 6),
            a.n
        ));
    }

    // Comparison: the easiest and the hardest cell of each configuration.
    let mut cmp = String::new();
    write_preamble(&mut cmp, &comments, &lead(COMPARISON_TABLE_HEADER));
    for d in digests.iter().map(|d| tag(d)).collect::<std::collections::BTreeSet<_>>() {
        let of_digest: Vec<_> = ordered.iter().filter(|(k, _)| k.digest == d).collect();
        let (Some(first), Some(last)) = (of_digest.first(), of_digest.last()) else {
            continue;
        };
        let best = (first.0.amplitude.clone(), first.0.rate.clone());
        let worst = (last.0.amplitude.clone(), last.0.rate.clone());
        for (case, (amp, rate)) in [("best", best), ("worst", worst)] {
            for (k, a) in of_digest.iter().filter(|(k, _)| k.amplitude == amp && k.rate == rate) {
                cmp.push_str(&format!(
                    "{}{case},{amp},{rate},{},{},{}\n",
                    prefix(&k.digest),
                    k.model,
                    fmt_sig(a.rmse / a.n as f64, 6),
                    fmt_sig(a.maxae / a.n as f64, 6)
                ));
            }
        }
    }

    // Control precision pooled over batches, weighting by run count.
    let mut ctl: BTreeMap<(String, String), ControlAcc> = BTreeMap::new();
    for l in &controls {
        for (line, c) in &l.table.rows {
            let runs = num(l, *line, &c[5])? as usize;
            let a = ctl.entry((tag(&l.digest), c[0].clone())).or_default();
            a.offset = num(l, *line, &c[1])?;
            let rmse = num(l, *line, &c[2])?;
            a.sq += rmse * rmse * runs as f64;
            a.maxae = a.maxae.max(num(l, *line, &c[3])?);
            a.mean += num(l, *line, &c[4])? * runs as f64;
            a.runs += runs;
        }
    }
    let mut control = String::new();
    write_preamble(&mut control, &comments, &lead(CONTROL_TABLE_HEADER));
    for ((d, phase), a) in &ctl {
        let n = a.runs.max(1) as f64;
        control.push_str(&format!(
            "{}{phase},{},{},{},{},{}\n",
            prefix(d),
            fmt_sig(a.offset, 6),
            fmt_sig((a.sq / n).sqrt(), 6),
            fmt_sig(a.maxae, 6),
            fmt_sig(a.mean / n, 6),
            a.runs
        ));
    }

    let mut succ: BTreeMap<String, SuccessAcc> = BTreeMap::new();
    for l in &successes {
        for (line, c) in &l.table.rows {
            let a = succ.entry(tag(&l.digest)).or_default();
            let int = |i: usize| num(l, *line, &c[i]).map(|v| v as usize);
            a.runs += int(0)?;
            a.completed += int(1)?;
            a.successes += int(2)?;
            a.aborted += int(3)?;
            a.touches += int(4)?;
        }
    }
    let mut success = String::new();
    write_preamble(&mut success, &comments, &lead(SUCCESS_TABLE_HEADER));
    for (d, a) in &succ {
        success.push_str(&format!(
            "{}{},{},{},{},{},{}\n",
            prefix(d),
            a.runs,
            a.completed,
            a.successes,
            a.aborted,
            a.touches,
            fmt_sig(a.successes as f64 / a.runs.max(1) as f64, 6)
        ));
    }

    let mut plots = String::new();
    write_preamble(&mut plots, &comments, PLOT_INDEX_HEADER);
    plots.push_str("prediction_rmse,table_prediction.csv,rate_bpm,rmse_um,amp_mm;model\n");
    plots.push_str("prediction_maxae,table_prediction.csv,rate_bpm,maxae_um,amp_mm;model\n");
    plots.push_str("best_worst,table_comparison.csv,case,rmse_um,model\n");
    plots.push_str("control_precision,table_control.csv,phase,rmse_um,\n");
    for l in &controls {
        let dir = l.path.parent().unwrap_or(Path::new("."));
        plots.push_str(&format!(
            "tracking,{},t_s,needle_mm;target_mm,phase\n",
            dir.join("runs").display()
        ));
    }
    for l in &grids {
        let dir = l.path.parent().unwrap_or(Path::new("."));
        plots.push_str(&format!(
            "prediction_traces,{},t_s,prediction_mm;truth_mm,model\n",
            dir.join("predictions").display()
        ));
    }

    store::write(&out.join("table_prediction.csv"), &pred)?;
    store::write(&out.join("table_comparison.csv"), &cmp)?;
    store::write(&out.join("table_control.csv"), &control)?;
    store::write(&out.join("table_success.csv"), &success)?;
    store::write(&out.join("plots.csv"), &plots)?;
    Ok(ReportSummary {
        digests,
        grid_files: grids.len(),
        run_files: controls.len() + successes.len(),
    })
}
