//! `slowfast` command line.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 config or usage error, 3 physics
//! error (invalid parameters, no steady state, no transparency window),
//! 4 oracle mismatch or failure.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::config::{ConfigError, ConfigFile};
use crate::group_index::{find_transparency_points, TransparencyOptions, TransparencyReport};
use crate::model::{build_params, check_weak_probe, coulomb_threshold, ModelError, ModelParams};
use crate::oracle::{cross_validate, standard_deltas, CrossValidateOptions};
use crate::output::num;
use crate::response::{spectrum, spectrum_hash, GridSpec};
use crate::steady_state::{solve, steady_residual, SteadyState};
use crate::sweep::{execute_with, write_run, Axis, AxisParam, AxisScale, Execution, OutputKind, SweepError, SweepPlan};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_PHYSICS: i32 = 3;
pub const EXIT_ORACLE: i32 = 4;

/// Probe-to-pump amplitude ratio above which `validate` warns that the
/// linear sideband expansion may not hold.
pub const WEAK_PROBE_LIMIT: f64 = 1e-2;

/// Factor applied to the analytic a₊ by `--corrupt-a-plus`.
pub const CORRUPTION_FACTOR: f64 = 1.01;

#[derive(Debug, Parser)]
#[command(name = "slowfast", version, about = "Double-window optomechanical slow/fast light")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON parameter file; the built-in reference parameter set when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Override a config entry, e.g. `--set coulomb_lambda=0` or
    /// `--set units.kappa=rad_per_s`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Probe reflection spectrum: spectrum.csv and summary.json.
    Spectrum {
        #[command(flatten)]
        common: Common,
        /// Probe detuning grid start:stop:count, in units of ω₁.
        #[arg(long, default_value = "0.9:1.1:4001")]
        grid: String,
    },
    /// Locate the transparency windows and their dispersion slopes.
    Transparency {
        #[command(flatten)]
        common: Common,
    },
    /// Run a parameter sweep from a plan file or from `--axis` flags.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Sweep plan JSON; its base config replaces `--config`.
        #[arg(long)]
        plan: Option<PathBuf>,
        /// `param=start:stop:count[:log]` with param one of pump_power,
        /// coulomb_lambda, detuning_value. Repeatable, at most three.
        #[arg(long = "axis", value_name = "SPEC")]
        axes: Vec<String>,
        /// spectrum, transparency or group_metric. Repeatable.
        #[arg(long = "output", value_name = "KIND")]
        outputs: Vec<String>,
        /// Probe grid for spectrum outputs, start:stop:count in ω₁ units.
        #[arg(long)]
        grid: Option<String>,
        /// Worker threads; 1 runs everything serially.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Compare the analytic sideband against the time-domain integration.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Probe amplitude as a fraction of the pump amplitude; the
        /// configured probe power when omitted.
        #[arg(long)]
        probe_ratio: Option<f64>,
        /// Beat periods averaged by the demodulation.
        #[arg(long, default_value_t = 20)]
        periods: usize,
        /// Samples per beat period.
        #[arg(long, default_value_t = 4096)]
        samples_per_period: usize,
        /// Negative control: scale the analytic value by 1.01.
        #[arg(long, hide = true)]
        corrupt_a_plus: bool,
    },
    /// Print derived parameters.
    Params {
        #[command(flatten)]
        common: Common,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Physics(String),
    #[error("{0}")]
    Oracle(String),
    #[error("{0}")]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Physics(_) => EXIT_PHYSICS,
            CliError::Oracle(_) => EXIT_ORACLE,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Physics(e.to_string())
    }
}

/// Parse arguments, run, and return the process exit code.
/// `println!` that propagates write errors instead of panicking.
macro_rules! say {
    ($($t:tt)*) => {
        writeln!(io::stdout().lock(), $($t)*)?
    };
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        // reader went away (e.g. piped into `head`); nothing left to report
        Err(CliError::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32, CliError> {
    match cmd {
        Command::Spectrum { common, grid } => run_spectrum(&common, &grid),
        Command::Transparency { common } => run_transparency(&common),
        Command::Sweep { common, plan, axes, outputs, grid, threads } => {
            run_sweep(&common, plan.as_deref(), &axes, &outputs, grid.as_deref(), threads)
        }
        Command::Validate { common, probe_ratio, periods, samples_per_period, corrupt_a_plus } => {
            run_validate(&common, probe_ratio, periods, samples_per_period, corrupt_a_plus)
        }
        Command::Params { common, json } => run_params(&common, json),
    }
}

fn load_config(common: &Common) -> Result<ConfigFile, CliError> {
    let base = match &common.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::reference(),
    };
    Ok(base.with_overrides(&common.overrides)?)
}

fn load_model(common: &Common) -> Result<(ConfigFile, ModelParams, SteadyState), CliError> {
    let cfg = load_config(common)?;
    let p = build_params(&cfg.to_raw())?;
    let s = solve(&p, cfg.branch).map_err(|e| CliError::Physics(e.to_string()))?;
    Ok((cfg, p, s))
}

fn create(dir: &Path, name: &str) -> io::Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> io::Result<()> {
    let mut f = create(dir, name)?;
    serde_json::to_writer_pretty(&mut f, value).map_err(io::Error::other)?;
    f.write_all(b"\n")?;
    f.flush()
}

fn transparency_json(report: &Result<TransparencyReport, String>, omega1: f64) -> serde_json::Value {
    match report {
        Ok(r) => json!({
            "windows": r.points.iter().map(|t| json!({
                "delta_rad_s": num(t.omega),
                "delta_over_omega1": num(t.omega / omega1),
                "re_eps_R": num(t.absorption),
                "im_slope_s": num(t.slope),
                "regime": t.regime,
            })).collect::<Vec<_>>(),
            "gap_rad_s": r.gap().map(num),
        }),
        Err(e) => json!({ "error": e }),
    }
}

fn steady_json(p: &ModelParams, s: &SteadyState) -> serde_json::Value {
    json!({
        "q1s_m": num(s.q1s),
        "q2s_m": num(s.q2s),
        "re_a_s": num(s.a_s.re),
        "im_a_s": num(s.a_s.im),
        "n_cav": num(s.n_cav),
        "delta_eff_rad_s": num(s.delta_eff),
        "delta_a_rad_s": num(s.delta_a),
        "branch": s.branch,
        "stable": s.stable,
        "residual": num(steady_residual(p, s)),
    })
}

pub fn run_spectrum(common: &Common, grid: &str) -> Result<i32, CliError> {
    let spec: GridSpec = grid.parse().map_err(|e: crate::response::GridError| CliError::Config(e.to_string()))?;
    let (_, p, s) = load_model(common)?;
    let grid = spec.to_grid(p.omega1).map_err(|e| CliError::Config(e.to_string()))?;
    let result = spectrum(&p, &s, &grid);

    let mut f = create(&common.out, "spectrum.csv")?;
    result.write_csv(&mut f)?;
    f.flush()?;

    let minima: Vec<_> = result
        .absorption_minima()
        .into_iter()
        .map(|i| {
            let pt = &result.points[i];
            json!({
                "delta_rad_s": num(pt.delta),
                "delta_over_omega1": num(pt.delta / p.omega1),
                "re_eps_R": num(pt.absorption),
                "im_eps_R": num(pt.dispersion),
            })
        })
        .collect();
    let report = find_transparency_points(&p, &s, &TransparencyOptions::default()).map_err(|e| e.to_string());
    let summary = json!({
        "params_hash": spectrum_hash(&p, &s),
        "grid": { "start_over_omega1": num(spec.start), "stop_over_omega1": num(spec.stop), "count": spec.count },
        "steady_state": steady_json(&p, &s),
        "grid_minima": minima,
        "failed_points": result.failures,
        "transparency": transparency_json(&report, p.omega1),
    });
    write_json(&common.out, "summary.json", &summary)?;

    say!("wrote {} points to {}", result.points.len(), common.out.join("spectrum.csv").display());
    for m in result.absorption_minima() {
        let pt = &result.points[m];
        say!("  minimum at delta/omega1 = {:.9}  Re[eps_R] = {:.6e}", pt.delta / p.omega1, pt.absorption);
    }
    if !result.failures.is_empty() {
        eprintln!("warning: {} grid points failed (see summary.json)", result.failures.len());
    }
    Ok(EXIT_OK)
}

pub fn run_transparency(common: &Common) -> Result<i32, CliError> {
    let (_, p, s) = load_model(common)?;
    let report = find_transparency_points(&p, &s, &TransparencyOptions::default())
        .map_err(|e| CliError::Physics(e.to_string()))?;
    say!("effective detuning Delta/omega1 = {:.6}", s.delta_eff / p.omega1);
    for (k, t) in report.points.iter().enumerate() {
        say!(
            "window {}: omega/omega1 = {:.9}  Re[eps_R] = {:.6e}  Im slope = {:.6e} s  {:?}",
            k + 1,
            t.omega / p.omega1,
            t.absorption,
            t.slope,
            t.regime
        );
    }
    if let Some(gap) = report.gap() {
        say!("gap omega+ - omega- = {:.6e} rad/s ({:.6e} omega1)", gap, gap / p.omega1);
    }
    let value = json!({
        "delta_eff_rad_s": num(s.delta_eff),
        "transparency": transparency_json(&Ok(report), p.omega1),
    });
    write_json(&common.out, "transparency.json", &value)?;
    Ok(EXIT_OK)
}

fn parse_axis(text: &str) -> Result<Axis, CliError> {
    let bad = || CliError::Config(format!("axis `{text}` is not param=start:stop:count[:log]"));
    let (name, range) = text.split_once('=').ok_or_else(bad)?;
    let param = match name.trim() {
        "pump_power" => AxisParam::PumpPower,
        "coulomb_lambda" => AxisParam::CoulombLambda,
        "detuning_value" => AxisParam::DetuningValue,
        other => return Err(CliError::Config(format!("unknown sweep axis `{other}`"))),
    };
    let parts: Vec<&str> = range.split(':').collect();
    let scale = match parts.get(3).copied() {
        None | Some("linear") => AxisScale::Linear,
        Some("log") => AxisScale::Log,
        Some(_) => return Err(bad()),
    };
    if parts.len() < 3 || parts.len() > 4 {
        return Err(bad());
    }
    Ok(Axis {
        param,
        start: parts[0].trim().parse().map_err(|_| bad())?,
        stop: parts[1].trim().parse().map_err(|_| bad())?,
        count: parts[2].trim().parse().map_err(|_| bad())?,
        scale,
    })
}

fn parse_output(text: &str) -> Result<OutputKind, CliError> {
    match text {
        "spectrum" => Ok(OutputKind::Spectrum),
        "transparency" => Ok(OutputKind::Transparency),
        "group_metric" => Ok(OutputKind::GroupMetric),
        other => Err(CliError::Config(format!("unknown sweep output `{other}`"))),
    }
}

pub fn run_sweep(
    common: &Common,
    plan_path: Option<&Path>,
    axes: &[String],
    outputs: &[String],
    grid: Option<&str>,
    threads: Option<usize>,
) -> Result<i32, CliError> {
    let sweep_err = |e: SweepError| match e {
        SweepError::Pool(m) => CliError::Io(io::Error::other(m)),
        other => CliError::Config(other.to_string()),
    };
    let mut plan = match plan_path {
        Some(path) => {
            let mut plan = SweepPlan::load(path).map_err(sweep_err)?;
            plan.base = plan.base.with_overrides(&common.overrides)?;
            plan
        }
        None => SweepPlan {
            base: load_config(common)?,
            axes: vec![],
            outputs: Default::default(),
            budget: crate::sweep::DEFAULT_BUDGET,
            grid: GridSpec::default(),
        },
    };
    for a in axes {
        plan.axes.push(parse_axis(a)?);
    }
    for o in outputs {
        plan.outputs.insert(parse_output(o)?);
    }
    if let Some(g) = grid {
        plan.grid = g.parse().map_err(|e: crate::response::GridError| CliError::Config(e.to_string()))?;
    }
    let mode = match threads {
        None => Execution::Parallel,
        Some(1) => Execution::Serial,
        Some(n) => Execution::Threads(n),
    };
    let record = execute_with(&plan, mode).map_err(sweep_err)?;
    write_run(&common.out, &plan, &record)?;

    say!("{} points, {} captured errors, {:.2} s", record.points.len(), record.errors.len(), record.wall_time_s);
    if plan.outputs.contains(&OutputKind::GroupMetric) {
        let names: Vec<&str> = plan.axes.iter().map(|a| a.param.key()).collect();
        say!("{:>6}  {:>24}  regime", "point", names.join(" "));
        for pt in &record.points {
            let coords: Vec<String> = pt.coords.iter().map(|c| format!("{c:.6e}")).collect();
            let regime = match &pt.group_metric {
                Some([m, p]) if m.metric < 0.0 && p.metric < 0.0 => "Fast",
                Some([m, p]) if m.metric > 0.0 && p.metric > 0.0 => "Slow",
                Some(_) => "Mixed",
                None => "None",
            };
            say!("{:>6}  {:>24}  {regime}", pt.index, coords.join(" "));
        }
    }
    for e in &record.errors {
        eprintln!("point {} ({:?}): {}", e.index, e.stage, e.message);
    }
    Ok(EXIT_OK)
}

pub fn run_validate(
    common: &Common,
    probe_ratio: Option<f64>,
    periods: usize,
    samples_per_period: usize,
    corrupt: bool,
) -> Result<i32, CliError> {
    let (_, p, s) = load_model(common)?;
    let ratio = probe_ratio.unwrap_or(p.eps_s / p.eps_l);
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(CliError::Config(format!("probe ratio must be positive, got {ratio}")));
    }
    let mut probe = p.clone();
    probe.eps_s = ratio * p.eps_l;
    if let Err(e) = check_weak_probe(&probe, WEAK_PROBE_LIMIT) {
        eprintln!("warning: {e}; the linear sideband expansion may not hold");
    }
    let opts = CrossValidateOptions {
        probe_ratio: Some(ratio),
        n_periods: periods,
        samples_per_period,
        analytic_scale: if corrupt { CORRUPTION_FACTOR } else { 1.0 },
        ..CrossValidateOptions::default()
    };
    let table = cross_validate(&p, s.delta_eff, &standard_deltas(&p), &opts);

    let mut f = create(&common.out, "validation.csv")?;
    table.write_csv(&mut f)?;
    f.flush()?;

    for row in &table.rows {
        match &row.result {
            Ok(v) => say!("delta/omega1 = {:.6}  rel error = {:.3e}", row.delta / p.omega1, v.rel_error),
            Err(e) => say!("delta/omega1 = {:.6}  failed: {e}", row.delta / p.omega1),
        }
    }
    let max = table.max_rel_error();
    say!("max relative error = {max:.3e} (tolerance {:.0e})", table.tolerance);
    if table.passed() {
        Ok(EXIT_OK)
    } else {
        Err(CliError::Oracle(format!("oracle mismatch: max relative error {max:.3e}")))
    }
}

pub fn run_params(common: &Common, as_json: bool) -> Result<i32, CliError> {
    let cfg = load_config(common)?;
    let p = build_params(&cfg.to_raw())?;
    let rows: Vec<(&str, f64, &str)> = vec![
        ("pump_wavelength", p.pump_wavelength, "m"),
        ("cavity_length", p.cavity_length, "m"),
        ("omega1", p.omega1, "rad/s"),
        ("omega2", p.omega2, "rad/s"),
        ("q1", p.q1, ""),
        ("q2", p.q2, ""),
        ("m1", p.m1, "kg"),
        ("m2", p.m2, "kg"),
        ("kappa", p.kappa, "rad/s"),
        ("pump_power", p.pump_power, "W"),
        ("probe_power", p.probe_power, "W"),
        ("coulomb_lambda", p.coulomb_lambda, "rad s^-1 m^-2"),
        ("detuning_value", p.detuning_value, "rad/s"),
        ("omega_a", p.omega_a, "rad/s"),
        ("g", p.g, "rad s^-1 m^-1"),
        ("gamma1", p.gamma1, "rad/s"),
        ("gamma2", p.gamma2, "rad/s"),
        ("eps_l", p.eps_l, "s^-1/2"),
        ("eps_s", p.eps_s, "s^-1/2"),
        ("spring_denominator", p.spring_denominator, "kg rad^2 s^-2"),
        ("coulomb_threshold", coulomb_threshold(p.m1, p.omega1, p.m2, p.omega2), "rad s^-1 m^-2"),
    ];
    if as_json {
        let mut map = serde_json::Map::new();
        for (k, v, _) in &rows {
            map.insert(k.to_string(), json!(v));
        }
        map.insert("detuning_mode".into(), json!(p.detuning_mode));
        say!("{}", serde_json::to_string_pretty(&map).map_err(io::Error::other)?);
    } else {
        say!("{:<20} {:?}", "detuning_mode", p.detuning_mode);
        for (k, v, unit) in rows {
            say!("{k:<20} {:<24} {unit}", num(v));
        }
    }
    Ok(EXIT_OK)
}
