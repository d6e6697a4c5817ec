//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use retsync::controller::{compute_velocity, AxisConfig, ControllerConfig, RobotAxis};
use retsync::motion::LayerDepths;
use retsync::observation::{observe, ImagingGeometry, ObservationNoise};
use retsync::predictor::{
    fft_fit_values, sine_predict, Centering, LstmModel, Normalization, Predictor, PredictorKind, SequenceWindow,
    WINDOW_LEN,
};
use retsync::procedure::{replay, run_procedure, transition_allowed, Phase, ProcedureReport, Scenario};
use retsync::registration::{build_registration_oriented, iqr_filter, RegistrationTransform, REGISTRATION_SAMPLES};
use retsync_harness::pipeline::{self, GridRow, ModelFile};
use retsync_harness::runs::run_batch;
use retsync_harness::{Condition, ExperimentConfig};

struct Gate {
    failed: usize,
}

impl Gate {
    fn report(&mut self, id: u32, name: &str, ok: bool, detail: String) {
        if !ok {
            self.failed += 1;
        }
        println!("{} {id:>2} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
}

fn sine(amp: f64, f: f64, phase: f64, offset: f64, t: f64) -> f64 {
    offset + amp * (2.0 * PI * f * t + phase).sin()
}

fn c1_fft() -> (bool, String) {
    let rate = 4.0;
    let mut worst_rel = 0.0f64;
    // Bins 12..20 of the padded transform at 4 Hz.
    for bin in [12.0, 16.0, 20.0] {
        let f = bin * rate / retsync::predictor::FFT_PAD as f64;
        for (amp, phase, t0) in [(0.05, 0.3, 0.0), (0.1, 2.0, 13.25), (0.15, -1.1, 400.5)] {
            let ts: Vec<f64> = (0..=WINDOW_LEN).map(|i| t0 + i as f64 / rate).collect();
            let w: Vec<f64> = ts.iter().map(|&t| sine(amp, f, phase, 1.9, t)).collect();
            let fit = fft_fit_values(&w[..WINDOW_LEN], ts[WINDOW_LEN - 1], rate).unwrap();
            let err = (sine_predict(&fit, ts[WINDOW_LEN]) - w[WINDOW_LEN]).abs();
            worst_rel = worst_rel.max(err / amp);
        }
    }
    let f8 = 8.0 / 60.0;
    let mut worst_df = 0.0f64;
    for (phase, t0) in [(0.0, 0.0), (1.0, 7.75), (2.5, 101.0), (4.0, 333.25)] {
        let w: Vec<f64> = (0..WINDOW_LEN).map(|i| sine(0.1, f8, phase, 1.7, t0 + i as f64 / rate)).collect();
        let fit = fft_fit_values(&w, t0 + (WINDOW_LEN - 1) as f64 / rate, rate).unwrap();
        worst_df = worst_df.max((fit.frequency - f8).abs());
    }
    (
        worst_rel < 1e-6 && worst_df < 0.01,
        format!("on-bin error {worst_rel:.2e} x amplitude (< 1e-6), 8 bpm frequency error {worst_df:.2e} Hz (< 0.01)"),
    )
}

fn c2_gradient() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let instances = 120;
    let mut worst = 0.0f64;
    for k in 0..instances {
        let hidden = rng.random_range(1..=6);
        let len = rng.random_range(2..=WINDOW_LEN);
        let norm = Normalization {
            centering: if k % 2 == 0 { Centering::Window } else { Centering::Global },
            mean: rng.random_range(1.0..3.0),
            scale: rng.random_range(0.02..0.2),
        };
        let mut model = LstmModel::init(hidden, WINDOW_LEN, norm, k as u64).unwrap();
        // Push some weights out of the near-linear regime.
        for p in &mut model.params {
            *p *= rng.random_range(0.5..3.0);
        }
        let values: Vec<f64> = (0..len).map(|_| norm.mean + rng.random_range(-0.2..0.2)).collect();
        let target = norm.mean + rng.random_range(-0.2..0.2);
        let (loss, grad) = model.loss_gradient(&values, target).unwrap();
        let loss_of = |m: &LstmModel| {
            let r = (m.predict_values(&values).unwrap() - target) / m.norm.scale;
            r * r
        };
        let direct = loss_of(&model);
        worst = worst.max((loss - direct).abs() / direct.max(1e-12));
        let h = 1e-6;
        let mut num = vec![0.0; grad.len()];
        for (i, g) in num.iter_mut().enumerate() {
            let mut up = model.clone();
            up.params[i] += h;
            let mut dn = model.clone();
            dn.params[i] -= h;
            *g = (loss_of(&up) - loss_of(&dn)) / (2.0 * h);
        }
        let diff = grad.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = grad.iter().map(|a| a * a).sum::<f64>().sqrt().max(num.iter().map(|a| a * a).sum::<f64>().sqrt());
        if scale > 1e-10 {
            worst = worst.max(diff / scale);
        }
    }
    (
        worst < 1e-4,
        format!("{instances} instances, worst relative error {worst:.2e} (< 1e-4)"),
    )
}

fn cell<'a>(rows: &'a [GridRow], c: Condition, kind: PredictorKind) -> &'a GridRow {
    rows.iter()
        .find(|r| r.model == kind && r.condition.same(&c))
        .expect("grid row present")
}

fn c3_band(cfg: &ExperimentConfig, rows: &[GridRow], seconds: f64) -> (bool, String) {
    let best = cell(rows, Condition { amplitude_mm: 0.05, rate_bpm: 8.0 }, PredictorKind::Lstm);
    let band = best.rmse_um <= 12.0 && best.maxae_um <= 40.0;
    let g = &cfg.grid;
    let rmse = |a: f64, r: f64| cell(rows, Condition { amplitude_mm: a, rate_bpm: r }, PredictorKind::Lstm).rmse_um;
    let mut breaks = Vec::new();
    for &r in &g.rates_bpm {
        for w in g.amplitudes_mm.windows(2) {
            if !(rmse(w[1], r) > rmse(w[0], r)) {
                breaks.push(format!("{}x{r} -> {}x{r}", w[0], w[1]));
            }
        }
    }
    for &a in &g.amplitudes_mm {
        for w in g.rates_bpm.windows(2) {
            if !(rmse(a, w[1]) > rmse(a, w[0])) {
                breaks.push(format!("{a}x{} -> {a}x{}", w[0], w[1]));
            }
        }
    }
    let mut table = String::new();
    for &a in &g.amplitudes_mm {
        let cells: Vec<String> = g.rates_bpm.iter().map(|&r| format!("{:.2}", rmse(a, r))).collect();
        table.push_str(&format!(" [{a}: {}]", cells.join(" ")));
    }
    (
        band && breaks.is_empty() && seconds <= 600.0,
        format!(
            "0.05x8 LSTM RMSE {:.2} um (<= 12), MaxAE {:.2} um (<= 40); monotone breaks {:?}; grid {seconds:.0} s (<= 600); RMSE by amplitude over 8/9/10 bpm:{table}",
            best.rmse_um, best.maxae_um, breaks
        ),
    )
}

fn c4_beats_fft(cfg: &ExperimentConfig, rows: &[GridRow]) -> (bool, String) {
    let mut losses = Vec::new();
    let mut margin = f64::INFINITY;
    for c in cfg.conditions() {
        let l = cell(rows, c, PredictorKind::Lstm);
        let f = cell(rows, c, PredictorKind::Fft);
        if !(l.rmse_um < f.rmse_um && l.maxae_um < f.maxae_um) {
            losses.push(format!(
                "{c}: lstm {:.2}/{:.2} fft {:.2}/{:.2}",
                l.rmse_um, l.maxae_um, f.rmse_um, f.maxae_um
            ));
        }
        margin = margin.min(f.rmse_um / l.rmse_um);
    }
    (
        losses.is_empty(),
        format!("{} cells, smallest FFT/LSTM RMSE ratio {margin:.2}; losing cells {losses:?}", cfg.conditions().len()),
    )
}

fn c5_latency(model: &LstmModel) -> (bool, String) {
    let w: Vec<f64> = (0..WINDOW_LEN).map(|i| 1.9 + 0.1 * (i as f64 * 0.2).sin()).collect();
    let window = SequenceWindow::new(&w, 4.75).unwrap();
    let mut times = Vec::with_capacity(2000);
    let mut sink = 0.0;
    for _ in 0..2000 {
        let t = Instant::now();
        sink += model.predict(&window).unwrap();
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    assert!(sink.is_finite());
    times.sort_by(f64::total_cmp);
    let median = times[times.len() / 2];
    let p99 = times[times.len() * 99 / 100];
    (
        p99 < 10.0,
        format!("hidden {} forward pass median {median:.4} ms, p99 {p99:.4} ms (< 10 ms)", model.hidden_size),
    )
}

fn c6_registration() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let geo = ImagingGeometry::default();
    let mut worst_rt = 0.0f64;
    for _ in 0..10_000 {
        let tf = build_registration_oriented(
            rng.random_range(0.0..1024.0),
            rng.random_range(0.0..4.0),
            geo.mm_per_px,
            if rng.random::<bool>() { geo.orientation() } else { retsync::registration::DEFAULT_ORIENTATION },
        )
        .unwrap();
        let p: f64 = rng.random_range(-500.0..1500.0);
        let z = tf.apply(p);
        worst_rt = worst_rt.max((tf.apply(tf.inverse(z)) - z).abs());
        worst_rt = worst_rt.max((tf.inverse(z) - p).abs() * tf.b);
    }

    let mut robust = 0;
    let trials = 1000;
    for _ in 0..trials {
        let clean: Vec<f64> = (0..REGISTRATION_SAMPLES).map(|_| rng.random_range(600.0..612.0)).collect();
        let spread = clean.iter().cloned().fold(f64::MIN, f64::max) - clean.iter().cloned().fold(f64::MAX, f64::min);
        let base = iqr_filter(&clean).unwrap().value_px;
        let mut dirty = clean.clone();
        let mut idx: Vec<usize> = (0..REGISTRATION_SAMPLES).collect();
        for k in 0..3 {
            let j = rng.random_range(k..REGISTRATION_SAMPLES);
            idx.swap(k, j);
            let mag = 10f64.powf(rng.random_range(0.0..6.0));
            dirty[idx[k]] = if rng.random::<bool>() { mag } else { -mag };
        }
        if (iqr_filter(&dirty).unwrap().value_px - base).abs() <= spread {
            robust += 1;
        }
    }

    // Needle held still at a random depth in the upper half of the image,
    // registered from 15 default-noise frames and the stage reading.
    let seeds = 1000u64;
    let mut within = 0;
    let mut worst_px = 0.0f64;
    for seed in 0..seeds {
        let noise = ObservationNoise { seed, ..ObservationNoise::default() };
        let mut srng = ChaCha8Rng::seed_from_u64(1_000_000 + seed);
        let mut axis = RobotAxis::new(srng.random_range(0.7..1.9), AxisConfig { seed, ..AxisConfig::default() }, 0.5).unwrap();
        axis.step(-0.5, 0.02);
        axis.step(0.5, srng.random_range(0.01..0.1));
        let z_true = axis.z();
        let truth = LayerDepths { ilm: z_true + 0.6, rpe: z_true + 0.85 };
        let rows: Vec<f64> = (0..REGISTRATION_SAMPLES as u64)
            .filter_map(|i| observe(truth, z_true, &geo, &noise, i as f64 * 0.25, i).unwrap().needle_px)
            .map(f64::from)
            .collect();
        let Ok(filtered) = iqr_filter(&rows) else { continue };
        let tf: RegistrationTransform =
            build_registration_oriented(filtered.value_px, axis.z(), geo.mm_per_px, geo.orientation()).unwrap();
        let err_px = (tf.apply(geo.row_of(z_true)) - z_true).abs() / geo.mm_per_px;
        worst_px = worst_px.max(err_px);
        if err_px <= 2.0 {
            within += 1;
        }
    }
    let frac = within as f64 / seeds as f64;
    (
        worst_rt <= 1e-12 && robust == trials && frac >= 0.99,
        format!(
            "round trip {worst_rt:.1e} mm (<= 1e-12); 3/15 outliers within clean spread {robust}/{trials}; error <= 2 px in {frac:.3} of {seeds} seeds (>= 0.99), worst {worst_px:.2} px"
        ),
    )
}

fn c7_controller() -> (bool, String) {
    let cfg = ControllerConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut clamp = true;
    let mut odd = true;
    for _ in 0..100_000 {
        let d = rng.random_range(-5.0..5.0);
        let e = 10f64.powf(rng.random_range(-8.0..3.0)) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        let v = compute_velocity(&cfg, d, d + e);
        clamp &= v.abs() <= cfg.v_max;
        let v_neg = compute_velocity(&cfg, 0.0, -e);
        let v_pos = compute_velocity(&cfg, 0.0, e);
        odd &= v_neg == -v_pos;
    }
    let zero = [0.0, 1.3, -2.0, 1e6].iter().all(|&d| compute_velocity(&cfg, d, d) == 0.0);
    let axis_cfg = AxisConfig::default();
    let allowed = axis_cfg.resolution + axis_cfg.repeatability_sd;
    let mut worst_over = 0.0f64;
    let mut worst_final = 0.0f64;
    for (k, start) in [-1.0, -0.2, -0.01, 0.003, 0.05, 0.4, 2.0].into_iter().enumerate() {
        let target = 1.5;
        let mut axis = RobotAxis::new(target + start, AxisConfig { seed: k as u64, ..axis_cfg }, cfg.v_max).unwrap();
        let sign = -start.signum();
        for _ in 0..(10.0 * cfg.loop_rate_hz) as usize {
            let v = compute_velocity(&cfg, axis.z(), target);
            axis.step(v, cfg.tick_s());
            worst_over = worst_over.max(sign * (axis.z() - target));
        }
        worst_final = worst_final.max((axis.z() - target).abs());
    }
    (
        clamp && odd && zero && worst_over <= allowed && worst_final <= allowed,
        format!(
            "clamp {clamp}, odd {odd}, zero at zero {zero}; overshoot {:.1} um, final error {:.1} um (<= {:.1})",
            worst_over * 1e3,
            worst_final * 1e3,
            allowed * 1e3
        ),
    )
}

fn metrics(r: &ProcedureReport) -> String {
    let f = |m: Option<retsync::procedure::PhaseMetrics>| {
        m.map_or("-".into(), |m| format!("{:.2}/{:.2}", m.rmse_um, m.max_ae_um))
    };
    format!("above ILM {} um, inside retina {} um", f(r.above_ilm), f(r.inside_retina))
}

fn with_noise(base: &ExperimentConfig, noise: ObservationNoise) -> Scenario {
    Scenario { noise, ..base.scenario() }
}

fn c8_ideal(r: &ProcedureReport) -> (bool, String) {
    let ok = r.completed()
        && r.above_ilm.is_some_and(|m| m.rmse_um <= 25.0 && m.max_ae_um <= 50.0)
        && r.inside_retina.is_some_and(|m| m.rmse_um <= 20.0);
    (
        ok,
        format!(
            "seed {} {}: {} (RMSE/MaxAE; limits 25/50 above, 20 inside)",
            r.seed,
            r.state.phase.as_str(),
            metrics(r)
        ),
    )
}

fn c9_occlusion(ideal: &ProcedureReport, occl: &ProcedureReport) -> (bool, String) {
    let (a, b) = (ideal.inside_retina.map(|m| m.rmse_um), occl.inside_retina.map(|m| m.rmse_um));
    let ok = occl.completed() && matches!((a, b), (Some(a), Some(b)) if b > a);
    (
        ok,
        format!(
            "seed {} {}: inside-retina RMSE {:.2} um with occlusion vs {:.2} um ideal",
            occl.seed,
            occl.state.phase.as_str(),
            b.unwrap_or(f64::NAN),
            a.unwrap_or(f64::NAN)
        ),
    )
}

fn abort_stops(r: &ProcedureReport) -> bool {
    r.state.phase != Phase::Aborted || r.v_after_abort == Some(0.0)
}

/// Forecasts shifted by a fixed bias.
struct Biased<'a>(&'a dyn Predictor, f64);

impl Predictor for Biased<'_> {
    fn name(&self) -> &'static str {
        "biased"
    }

    fn predict(&self, w: &SequenceWindow) -> retsync::Result<f64> {
        Ok(self.0.predict(w)? + self.1)
    }
}

fn c10_safety(cfg: &ExperimentConfig, model: &LstmModel) -> (bool, String) {
    let t0 = Instant::now();
    let batch = run_batch(cfg, model, 0, 100).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let touches: usize = batch.iter().filter(|r| r.completed()).map(|r| r.rpe_touches).sum();
    let any_touch: usize = batch.iter().map(|r| r.rpe_touches).sum();
    let aborted: Vec<&ProcedureReport> = batch.iter().filter(|r| r.state.phase == Phase::Aborted).collect();
    let mut all_stop = batch.iter().all(abort_stops);
    let completed = batch.iter().filter(|r| r.completed()).count();

    // Forced aborts in every abortable phase while the needle is moving.
    let mut forced = 0;
    let mut phases = std::collections::BTreeSet::new();
    for seed in 0..5 {
        let mut tight = cfg.clone();
        tight.procedure.safety_bound = 0.004;
        let mut late = cfg.clone();
        late.procedure.safety_bound = 0.03;
        let mut stale = cfg.clone();
        stale.noise.dropout_prob = 0.5;
        stale.procedure.max_stale_samples = 2;
        for (c, p) in [(tight, model as &dyn Predictor), (late, model), (stale, model)] {
            let r = run_procedure(&c.scenario(), p, seed).unwrap();
            if r.state.phase == Phase::Aborted {
                forced += 1;
                phases.insert(r.abort_phase.map_or("?", Phase::as_str));
                all_stop &= r.v_after_abort == Some(0.0);
            }
        }
    }
    (
        touches == 0 && any_touch == 0 && all_stop && forced > 0,
        format!(
            "100 seeds in {secs:.0} s: {completed} completed, {} aborted, RPE contact ticks {any_touch}; v = 0 on the tick after every abort: {all_stop} ({} natural, {forced} forced in {:?})",
            aborted.len(),
            aborted.len(),
            phases
        ),
    )
}

fn expected_edge(from: Phase, to: Phase, restart: bool) -> bool {
    let (a, b) = (from.number(), to.number());
    let forward = a >= 1 && a <= 4 && b == a + 1;
    let finish = from == Phase::Insertion && to == Phase::Completed;
    let abort = a >= 1 && to == Phase::Aborted;
    let back = restart && from == Phase::SanityCheck && to == Phase::MotionEstimation;
    forward || finish || abort || back
}

fn c11_state_machine(cfg: &ExperimentConfig, model: &LstmModel) -> (bool, String) {
    let mut mismatches = Vec::new();
    let mut pairs = 0;
    for from in Phase::ALL {
        for to in Phase::ALL {
            for restart in [false, true] {
                pairs += 1;
                if transition_allowed(from, to, restart) != expected_edge(from, to, restart) {
                    mismatches.push(format!("{}->{} restart={restart}", from.as_str(), to.as_str()));
                }
            }
        }
    }
    let mut lower = cfg.clone();
    lower.geometry.window_top_z = -0.2;
    let biased = Biased(model, 0.15);
    let mut runs = 0;
    let mut stopped = 0;
    let mut reasons = BTreeMap::new();
    for seed in 0..10 {
        for (sc, p) in [(lower.scenario(), model as &dyn Predictor), (cfg.scenario(), &biased as &dyn Predictor)] {
            let r = run_procedure(&sc, p, seed).unwrap();
            runs += 1;
            let reached_sync = r.track.iter().any(|t| matches!(t.phase, Phase::MotionSync | Phase::Insertion));
            let replay_ok = replay(&r.events).map(|s| s == r.state).unwrap_or(false);
            if r.abort_phase == Some(Phase::SanityCheck) && !reached_sync && replay_ok && r.v_after_abort == Some(0.0) {
                stopped += 1;
            }
            *reasons.entry(r.state.abort_reason.unwrap_or_default()).or_insert(0) += 1;
        }
    }
    (
        mismatches.is_empty() && stopped == runs,
        format!(
            "{pairs} (from, to, restart) cases, mismatches {mismatches:?}; faults stopped in sanity check {stopped}/{runs} {reasons:?}"
        ),
    )
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn c12_determinism(a: &Path, b: &Path) -> (bool, String) {
    let fa = files_under(a);
    let fb = files_under(b);
    let differing: Vec<String> = fa
        .iter()
        .filter(|f| fs::read(a.join(f)).ok() != fs::read(b.join(f)).ok())
        .map(|f| f.display().to_string())
        .collect();
    let csvs = fa.iter().filter(|f| f.extension().is_some_and(|e| e == "csv")).count();
    (
        fa == fb && differing.is_empty() && csvs > 0,
        format!("{} files ({csvs} CSV) compared, differing {differing:?}", fa.len()),
    )
}

/// generate, train, evaluate and a two-seed run into `out`.
fn pipeline_once(cfg: &ExperimentConfig, out: &Path) -> (Vec<GridRow>, f64) {
    let conds = cfg.conditions();
    let t0 = Instant::now();
    pipeline::generate(cfg, out, cfg.seed, &conds, cfg.grid.train_s + cfg.grid.eval_s, cfg.grid.sample_rate_hz)
        .unwrap();
    pipeline::train(cfg, out, &conds).unwrap();
    let rows = pipeline::evaluate(cfg, out, &conds, &[PredictorKind::Lstm, PredictorKind::Fft]).unwrap();
    let grid_s = t0.elapsed().as_secs_f64();
    retsync_harness::runs::run(cfg, out, PredictorKind::Lstm, 0, 2).unwrap();
    (rows, grid_s)
}

fn main() {
    let mut gate = Gate { failed: 0 };
    let cfg = ExperimentConfig::default();

    let (ok, d) = c1_fft();
    gate.report(1, "fft-baseline-exactness", ok, d);
    let (ok, d) = c2_gradient();
    gate.report(2, "lstm-gradient", ok, d);

    let work = tempfile::tempdir().unwrap();
    let first = work.path().join("first");
    let second = work.path().join("second");
    let (rows, grid_s) = pipeline_once(&cfg, &first);
    let (ok, d) = c3_band(&cfg, &rows, grid_s);
    gate.report(3, "prediction-band", ok, d);
    let (ok, d) = c4_beats_fft(&cfg, &rows);
    gate.report(4, "lstm-beats-fft", ok, d);

    let model = ModelFile::load(&pipeline::model_path(&first, Condition { amplitude_mm: 0.1, rate_bpm: 8.0 }))
        .unwrap()
        .model;
    let (ok, d) = c5_latency(&model);
    gate.report(5, "inference-latency", ok, d);
    let (ok, d) = c6_registration();
    gate.report(6, "registration", ok, d);
    let (ok, d) = c7_controller();
    gate.report(7, "controller-laws", ok, d);

    let ideal = run_procedure(&with_noise(&cfg, ObservationNoise::ideal()), &model, cfg.seed).unwrap();
    let (ok, d) = c8_ideal(&ideal);
    gate.report(8, "closed-loop-sync", ok, d);
    let occl_noise = ObservationNoise {
        occlusion_extra_sd_px: ObservationNoise::default().occlusion_extra_sd_px,
        ..ObservationNoise::ideal()
    };
    let occl = run_procedure(&with_noise(&cfg, occl_noise), &model, cfg.seed).unwrap();
    let (ok, d) = c9_occlusion(&ideal, &occl);
    gate.report(9, "occlusion-degradation", ok, d);
    let (ok, d) = c10_safety(&cfg, &model);
    gate.report(10, "safety-invariant", ok, d);
    let (ok, d) = c11_state_machine(&cfg, &model);
    gate.report(11, "state-machine", ok, d);

    pipeline_once(&cfg, &second);
    let (ok, d) = c12_determinism(&first, &second);
    gate.report(12, "determinism", ok, d);

    println!("{} of 12 criteria passed", 12 - gate.failed);
    if gate.failed > 0 {
        std::process::exit(1);
    }
}
