//! One function per experiment, each producing a [`Table`].

use std::f64::consts::TAU;

use classd::perturbation::{PerturbationModel, SlowInput};
use classd::simulator::{simulate, SimulationOptions, SimulationResult};
use classd::small_signal::{sine_fundamental, SmallSignal};
use classd::spectral::{carriers_per_audio_period, harmonic_table, pulse_mean, SpectralReport, Window};
use classd::stability::{match_nearest, monodromy, stability_threshold, StabilityReport};
use classd::steady::{solve_steady_state, steady_state_residual};
use classd::{AmplifierParams, InputSignal, Model};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::config::{grid, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::output::{Cell, Table};

/// Modes of the monodromy matrix (state dimension).
const MODES: usize = 5;

/// Header entries shared by every output file.
fn metadata(cfg: &ExperimentConfig, command: &str, table: &mut Table) {
    let p = cfg.params();
    table.meta("command", command);
    table.meta("version", env!("CARGO_PKG_VERSION"));
    table.meta("config_sha256", cfg.hash());
    for (k, v) in [
        ("r", p.r),
        ("l", p.l),
        ("c", p.c),
        ("period", p.period),
        ("c1", p.c1),
        ("c2", p.c2),
        ("c3", p.c3),
        ("omega1", p.omega1),
    ] {
        table.meta(format!("params.{k}"), crate::output::format_num(v));
    }
    table.meta("params.k", p.k);
    table.meta("input", serde_json::to_string(&cfg.input).expect("input serializes"));
    table.meta("n_max", cfg.n_max);
    table.meta("transient_periods", cfg.transient_periods);
    table.meta("analysis_periods", cfg.analysis_periods);
    table.meta("seed", cfg.seed);
}

fn quiet() -> SimulationOptions {
    SimulationOptions {
        samples_per_period: 0,
        ..Default::default()
    }
}

fn eigen_columns() -> Vec<String> {
    (1..=MODES).flat_map(|i| [format!("mu{i}_re"), format!("mu{i}_im")]).collect()
}

fn eigen_cells(ev: &[Complex64]) -> Vec<Cell> {
    (0..MODES)
        .flat_map(|i| match ev.get(i) {
            Some(z) => [z.re.into(), z.im.into()],
            None => [Cell::Empty, Cell::Empty],
        })
        .collect()
}

/// A simulation analysed over its trailing window.
pub struct SimulationRun {
    pub result: SimulationResult,
    pub window: Window,
    /// `None` for aperiodic (constant) inputs.
    pub report: Option<SpectralReport>,
    pub dc: f64,
}

impl SimulationRun {
    pub fn leakage(&self) -> bool {
        self.report.as_ref().is_some_and(|r| r.leakage)
            || self.result.train.events[(self.window.first_period - self.result.train.first_period()) as usize..]
                .iter()
                .any(|e| e.skipped)
    }
}

/// Simulates `transient_periods + analysis_periods` input periods (carrier
/// periods for a constant input) from the steady state of `u(0)` and
/// analyses the last `analysis_periods`.
pub fn run_simulation(params: AmplifierParams, cfg: &ExperimentConfig) -> classd::Result<SimulationRun> {
    let model = Model::new(params)?;
    let periods = cfg.transient_periods + cfg.analysis_periods;
    match cfg.input.fundamental_frequency() {
        Some(f0) => {
            let per = carriers_per_audio_period(params.period, f0)?;
            let result = simulate(&model, &cfg.input, 0, per * periods, quiet())?;
            let window = Window::trailing(&result.train, f0, cfg.analysis_periods)?;
            let report = harmonic_table(&result.train, f0, cfg.n_max, &window)?;
            Ok(SimulationRun {
                dc: report.dc,
                result,
                window,
                report: Some(report),
            })
        }
        None => {
            let result = simulate(&model, &cfg.input, 0, periods, quiet())?;
            let window = Window::new(cfg.transient_periods as i64, cfg.analysis_periods);
            let dc = pulse_mean(&result.train, &window)?;
            Ok(SimulationRun {
                result,
                window,
                report: None,
                dc,
            })
        }
    }
}

pub fn steady(cfg: &ExperimentConfig) -> CliResult<Table> {
    let model = Model::new(cfg.params())?;
    let mut cols: Vec<String> = ["u0", "a", "slope", "kappa"].map(String::from).to_vec();
    cols.extend((1..=MODES).map(|i| format!("x{i}")));
    cols.extend(["periodicity_residual", "switching_residual"].map(String::from));
    let mut t = Table::new(cols);
    metadata(cfg, "steady", &mut t);
    t.meta("leakage", "n/a");
    for &u0 in &cfg.operating_point.u0 {
        let ss = solve_steady_state(&model, u0)?;
        let kappa = classd::stability::compute_kappa(model.params(), &ss)?;
        let (rows, switching) = steady_state_residual(&model, &ss)?;
        let mut row: Vec<Cell> = vec![u0.into(), ss.a.into(), ss.slope.into(), kappa.into()];
        row.extend(ss.x_at_switch.iter().map(|&v| v.into()));
        row.extend([rows.amax().into(), switching.into()]);
        t.push(row);
    }
    Ok(t)
}

pub fn stability(cfg: &ExperimentConfig) -> CliResult<Table> {
    let params = cfg.params();
    let model = Model::new(params)?;
    let param = cfg.threshold_param()?;
    let threshold_col = format!("{param}_threshold");
    let mut cols: Vec<String> = ["u0", "kappa", "spectral_radius", "stable"].map(String::from).to_vec();
    cols.extend(eigen_columns());
    cols.push(threshold_col);
    let mut t = Table::new(cols);
    metadata(cfg, "stability", &mut t);
    t.meta("leakage", "n/a");
    t.meta(
        "threshold_bracket",
        format!("{param} in [{}, {}], tol {}", cfg.stability.lo, cfg.stability.hi, cfg.stability.tol),
    );
    for &u0 in &cfg.operating_point.u0 {
        let r = monodromy(&model, u0)?;
        let threshold = stability_threshold(&params, u0, param, cfg.stability.lo, cfg.stability.hi, cfg.stability.tol)?;
        let mut row: Vec<Cell> = vec![u0.into(), r.kappa.into(), r.spectral_radius.into(), r.stable.into()];
        row.extend(eigen_cells(&r.eigenvalues));
        row.push(threshold.into());
        t.push(row);
    }
    Ok(t)
}

pub fn tf(cfg: &ExperimentConfig) -> CliResult<Table> {
    let model = Model::new(cfg.params())?;
    let freqs = grid(cfg.tf.f_min, cfg.tf.f_max, cfg.tf.points, cfg.tf.scale);
    let mut t = Table::new([
        "u0",
        "frequency",
        "omega",
        "re",
        "im",
        "magnitude",
        "magnitude_db",
        "phase_deg",
        "error",
    ]);
    metadata(cfg, "tf", &mut t);
    t.meta("leakage", "n/a");
    for &u0 in &cfg.operating_point.u0 {
        let ss = SmallSignal::new(&model, u0)?;
        for &f in &freqs {
            let w = TAU * f;
            let mut row: Vec<Cell> = vec![u0.into(), f.into(), w.into()];
            match ss.transfer(w) {
                Ok(h) => row.extend([
                    h.re.into(),
                    h.im.into(),
                    h.norm().into(),
                    (20.0 * h.norm().log10()).into(),
                    h.arg().to_degrees().into(),
                    Cell::Empty,
                ]),
                Err(e) => {
                    row.extend(std::iter::repeat(Cell::Empty).take(5));
                    row.push(e.to_string().into());
                }
            }
            t.push(row);
        }
    }
    Ok(t)
}

struct SweepPoint {
    value: f64,
    stability: classd::Result<StabilityReport>,
    simulation: Option<classd::Result<SimulationRun>>,
}

/// Monodromy analysis plus full simulation at every grid point, in a pool
/// of `jobs` workers (`0`: one per core). Rows come out in grid order and
/// failures are recorded in the row.
pub fn sweep(cfg: &ExperimentConfig, jobs: usize) -> CliResult<Table> {
    let params = cfg.params();
    let param = cfg.sweep_param()?;
    let values = grid(cfg.sweep.lo, cfg.sweep.hi, cfg.sweep.points, cfg.sweep.scale);
    let periodic = cfg.input.fundamental_frequency().is_some();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Config(format!("--jobs: {e}")))?;
    let points: Vec<SweepPoint> = pool.install(|| {
        values
            .par_iter()
            .map(|&value| {
                let p = param.apply(&params, value);
                let stability = Model::new(p).and_then(|m| monodromy(&m, cfg.sweep.u0));
                let simulation = periodic.then(|| run_simulation(p, cfg));
                SweepPoint {
                    value,
                    stability,
                    simulation,
                }
            })
            .collect()
    });

    let mut cols: Vec<String> = vec![param.to_string(), "spectral_radius".into(), "stable".into()];
    cols.extend(eigen_columns());
    cols.extend(["thd", "dc"].map(String::from));
    cols.extend((1..=cfg.n_max).map(|n| format!("f{n}_mag")));
    cols.extend(["skipped", "multiple_crossings", "leakage", "error"].map(String::from));
    let mut t = Table::new(cols);
    metadata(cfg, "sweep", &mut t);
    t.meta("sweep", format!("{param} over [{}, {}], {} points", cfg.sweep.lo, cfg.sweep.hi, values.len()));
    t.meta("sweep.u0", cfg.sweep.u0);
    let leaky = points
        .iter()
        .filter(|p| matches!(&p.simulation, Some(Ok(run)) if run.leakage()))
        .count();
    t.meta("leakage", format!("{leaky} of {} points", values.len()));

    let mut previous: Option<Vec<Complex64>> = None;
    for point in points {
        let mut errors = Vec::new();
        let mut row: Vec<Cell> = vec![point.value.into()];
        match point.stability {
            Ok(r) => {
                let ev = match &previous {
                    Some(prev) => match_nearest(prev, &r.eigenvalues),
                    None => r.eigenvalues.clone(),
                };
                row.extend([r.spectral_radius.into(), r.stable.into()]);
                row.extend(eigen_cells(&ev));
                previous = Some(ev);
            }
            Err(e) => {
                errors.push(format!("stability: {e}"));
                row.extend(std::iter::repeat(Cell::Empty).take(2 + 2 * MODES));
            }
        }
        match point.simulation {
            Some(Ok(run)) => {
                let report = run.report.as_ref().expect("periodic input has a report");
                row.extend([report.thd.into(), run.dc.into()]);
                row.extend(report.magnitudes().into_iter().map(Cell::from));
                row.extend([
                    run.result.train.skip_count().into(),
                    run.result.multiple_crossings.into(),
                    run.leakage().into(),
                ]);
            }
            other => {
                if let Some(Err(e)) = other {
                    errors.push(format!("simulation: {e}"));
                }
                row.extend(std::iter::repeat(Cell::Empty).take(2 + cfg.n_max + 3));
            }
        }
        row.push(if errors.is_empty() { Cell::Empty } else { errors.join("; ").into() });
        t.push(row);
    }
    Ok(t)
}

fn simulation_metadata(run: &SimulationRun, t: &mut Table) {
    let period = run.result.train.period;
    t.meta("window", format!(
        "[{}, {}) s",
        crate::output::format_num(run.window.t_start(period)),
        crate::output::format_num(run.window.t_end(period))
    ));
    t.meta("dc", crate::output::format_num(run.dc));
    if let Some(r) = &run.report {
        t.meta("thd", crate::output::format_num(r.thd));
        t.meta("fundamental_frequency", crate::output::format_num(r.fundamental_freq));
    }
    t.meta("skipped_total", run.result.train.skip_count());
    t.meta("multiple_crossings", run.result.multiple_crossings);
    t.meta("truncation_estimate", crate::output::format_num(run.result.truncation_estimate));
    t.meta("leakage", run.leakage());
}

/// Harmonic table of the simulated pulse train, or its pulse events.
pub fn simulate_cmd(cfg: &ExperimentConfig, events: bool) -> CliResult<Table> {
    let run = run_simulation(cfg.params(), cfg)?;
    let mut t = if events {
        let mut t = Table::new(["n", "edge", "duty", "skipped"]);
        for e in &run.result.train.events {
            t.push(vec![e.n.into(), e.edge.into(), e.duty.into(), e.skipped.into()]);
        }
        t
    } else {
        let mut t = Table::new(["n", "frequency", "re", "im", "magnitude"]);
        t.push(vec![0usize.into(), 0.0.into(), run.dc.into(), 0.0.into(), run.dc.abs().into()]);
        if let Some(r) = &run.report {
            for &(n, c) in &r.coefficients {
                t.push(vec![
                    n.into(),
                    (n as f64 * r.fundamental_freq).into(),
                    c.re.into(),
                    c.im.into(),
                    c.norm().into(),
                ]);
            }
        }
        t
    };
    let rows = std::mem::take(&mut t.rows);
    metadata(cfg, "simulate", &mut t);
    simulation_metadata(&run, &mut t);
    t.rows = rows;
    Ok(t)
}

/// Slow-time view of the configured input; the reference frequency of an
/// aperiodic input only scales `tau` and drops out of every result.
fn slow_input(cfg: &ExperimentConfig) -> SlowInput {
    let f0 = cfg.input.fundamental_frequency().unwrap_or(1.0);
    SlowInput {
        signal: cfg.input.clone(),
        omega_audio: TAU * f0,
    }
}

/// Analytic DC and harmonics `1..=count` (empty for aperiodic inputs).
struct Analytic {
    dc: f64,
    harmonics: Vec<Complex64>,
    /// Small-signal prediction of the fundamental for a single tone about `u0 = 0`.
    small_signal: Option<Complex64>,
    epsilon: f64,
}

fn analytic(cfg: &ExperimentConfig, count: usize) -> CliResult<Analytic> {
    let model = Model::new(cfg.params())?;
    let pm = PerturbationModel::new(&model)?;
    let input = slow_input(cfg);
    let order = cfg.predict.order;
    let epsilon = input.epsilon(model.params().period);
    let Some(f0) = cfg.input.fundamental_frequency() else {
        return Ok(Analytic {
            dc: pm.audio_sample(&input, order, 0.0)?,
            harmonics: Vec::new(),
            small_signal: None,
            epsilon,
        });
    };
    let samples = cfg.predict.samples.max(classd::perturbation::MIN_FOURIER_SAMPLES);
    let dt = 1.0 / (f0 * samples as f64);
    let mut sum = 0.0;
    for i in 0..samples {
        sum += pm.audio_sample(&input, order, i as f64 * dt)?;
    }
    let harmonics = pm.harmonics(&input, order, count, samples)?;
    let small_signal = match cfg.input {
        InputSignal::Sine { amplitude, frequency, phase } => {
            let h = SmallSignal::new(&model, 0.0)?.transfer(TAU * frequency)?;
            Some(sine_fundamental(h, amplitude) * Complex64::from_polar(1.0, phase))
        }
        _ => None,
    };
    Ok(Analytic {
        dc: sum / samples as f64,
        harmonics,
        small_signal,
        epsilon,
    })
}

/// Perturbation prediction: harmonic table, or the audio-rate time series.
pub fn predict(cfg: &ExperimentConfig, samples: bool) -> CliResult<Table> {
    let mut t = if samples {
        let model = Model::new(cfg.params())?;
        let pm = PerturbationModel::new(&model)?;
        let duration = cfg
            .predict
            .duration
            .or_else(|| cfg.input.fundamental_frequency().map(|f| 1.0 / f))
            .unwrap_or(1e-3);
        let p = pm.predict_audio(&slow_input(cfg), cfg.predict.order, duration, cfg.predict.sample_rate)?;
        let mut t = Table::new(["t", "g"]);
        for (&time, &g) in p.times.iter().zip(&p.samples) {
            t.push(vec![time.into(), g.into()]);
        }
        t
    } else {
        let a = analytic(cfg, cfg.n_max)?;
        let f0 = cfg.input.fundamental_frequency().unwrap_or(0.0);
        let mut t = Table::new(["n", "frequency", "re", "im", "magnitude", "small_signal_re", "small_signal_im"]);
        t.push(vec![
            0usize.into(),
            0.0.into(),
            a.dc.into(),
            0.0.into(),
            a.dc.abs().into(),
            Cell::Empty,
            Cell::Empty,
        ]);
        for (i, c) in a.harmonics.iter().enumerate() {
            let ss = if i == 0 { a.small_signal } else { None };
            t.push(vec![
                (i + 1).into(),
                ((i + 1) as f64 * f0).into(),
                c.re.into(),
                c.im.into(),
                c.norm().into(),
                ss.map(|z| z.re).into(),
                ss.map(|z| z.im).into(),
            ]);
        }
        t.meta("epsilon", crate::output::format_num(a.epsilon));
        t
    };
    let rows = std::mem::take(&mut t.rows);
    let extra = std::mem::take(&mut t.metadata);
    metadata(cfg, "predict", &mut t);
    t.meta("order", cfg.predict.order);
    t.metadata.extend(extra);
    t.meta("leakage", "n/a");
    t.rows = rows;
    Ok(t)
}

/// Analytic vs simulated DC and harmonics with per-row tolerance verdicts.
/// Returns the table and the number of failed rows.
pub fn compare(cfg: &ExperimentConfig) -> CliResult<(Table, usize)> {
    let tol = &cfg.compare;
    let a = analytic(cfg, tol.harmonics)?;
    let run = run_simulation(cfg.params(), cfg)?;
    let mut t = Table::new([
        "n",
        "frequency",
        "analytic_re",
        "analytic_im",
        "analytic_mag",
        "simulated_re",
        "simulated_im",
        "simulated_mag",
        "small_signal_re",
        "small_signal_im",
        "metric",
        "difference",
        "tolerance",
        "pass",
    ]);
    metadata(cfg, "compare", &mut t);
    t.meta("order", cfg.predict.order);
    simulation_metadata(&run, &mut t);

    let mut failures = 0;
    let mut push = |t: &mut Table, n: usize, f: f64, an: Complex64, sim: Complex64, ss: Option<Complex64>| {
        let (metric, diff, bound) = if n == 0 {
            ("abs", (sim - an).norm(), tol.dc_abs_tol)
        } else if an.norm() <= tol.zero_floor {
            ("zero", sim.norm(), tol.zero_abs_tol)
        } else if n == 1 {
            ("rel_complex", (sim - an).norm() / an.norm(), tol.fundamental_rel_tol)
        } else {
            ("rel_mag", (sim.norm() - an.norm()).abs() / an.norm(), tol.harmonic_rel_tol)
        };
        let pass = diff <= bound;
        if !pass {
            failures += 1;
        }
        t.push(vec![
            n.into(),
            f.into(),
            an.re.into(),
            an.im.into(),
            an.norm().into(),
            sim.re.into(),
            sim.im.into(),
            sim.norm().into(),
            ss.map(|z| z.re).into(),
            ss.map(|z| z.im).into(),
            metric.into(),
            diff.into(),
            bound.into(),
            pass.into(),
        ]);
    };

    push(&mut t, 0, 0.0, a.dc.into(), run.dc.into(), None);
    if let Some(report) = &run.report {
        for (i, an) in a.harmonics.iter().enumerate() {
            let n = i + 1;
            let sim = report.harmonic(n).ok_or_else(|| {
                CliError::Config(format!("compare.harmonics: harmonic {n} exceeds n_max = {}", cfg.n_max))
            })?;
            let ss = if n == 1 { a.small_signal } else { None };
            push(&mut t, n, n as f64 * report.fundamental_freq, *an, sim, ss);
        }
    }
    t.meta("failures", failures);
    Ok((t, failures))
}
