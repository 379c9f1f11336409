//! Batch scans over pump power, Coulomb coupling and detuning.
//!
//! A plan declares up to three axes over a base config. Points are visited
//! row-major (last axis fastest), evaluated in parallel and merged by index,
//! so a run is a pure function of the plan.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::config::{ConfigError, ConfigFile};
use crate::group_index::{
    find_transparency_points, group_metric_at, GroupMetricPoint, Regime, TransparencyOptions, TransparencyReport,
};
use crate::model::build_params;
use crate::output::{content_hash, num};
use crate::response::{spectrum, spectrum_csv_row, GridSpec, Spectrum, SPECTRUM_CSV_HEADER};
use crate::steady_state::{solve, steady_residual, SteadyState};

pub const DEFAULT_BUDGET: usize = 100_000;
pub const MAX_AXES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisParam {
    PumpPower,
    CoulombLambda,
    DetuningValue,
}

impl AxisParam {
    pub fn key(self) -> &'static str {
        match self {
            AxisParam::PumpPower => "pump_power",
            AxisParam::CoulombLambda => "coulomb_lambda",
            AxisParam::DetuningValue => "detuning_value",
        }
    }

    fn set(self, cfg: &mut ConfigFile, value: f64) {
        match self {
            AxisParam::PumpPower => cfg.pump_power = value,
            AxisParam::CoulombLambda => cfg.coulomb_lambda = value,
            AxisParam::DetuningValue => cfg.detuning_value = value,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisScale {
    #[default]
    Linear,
    Log,
}

/// Axis values are in the units of the base config's field (e.g. ω₁ units
/// for `detuning_value` when the config says so).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub param: AxisParam,
    pub start: f64,
    pub stop: f64,
    pub count: usize,
    #[serde(default)]
    pub scale: AxisScale,
}

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        let n = self.count;
        if n == 1 {
            return vec![self.start];
        }
        (0..n)
            .map(|i| {
                if i + 1 == n {
                    return self.stop;
                }
                let t = i as f64 / (n - 1) as f64;
                match self.scale {
                    AxisScale::Linear => self.start + (self.stop - self.start) * t,
                    AxisScale::Log => self.start * (self.stop / self.start).powf(t),
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    Spectrum,
    Transparency,
    GroupMetric,
}

fn default_budget() -> usize {
    DEFAULT_BUDGET
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPlan {
    pub base: ConfigFile,
    #[serde(default)]
    pub axes: Vec<Axis>,
    #[serde(default)]
    pub outputs: BTreeSet<OutputKind>,
    #[serde(default = "default_budget")]
    pub budget: usize,
    /// Probe grid for spectrum outputs.
    #[serde(default)]
    pub grid: GridSpec,
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("plan has {points} points, budget is {budget}")]
    BudgetExceeded { points: usize, budget: usize },
    #[error("at most {MAX_AXES} axes allowed, got {0}")]
    TooManyAxes(usize),
    #[error("axis `{0}` declared twice")]
    DuplicateAxis(&'static str),
    #[error("axis `{0}` needs count >= 1")]
    EmptyAxis(&'static str),
    #[error("axis `{0}` has non-finite bounds or a log scale with non-positive bounds")]
    BadAxis(&'static str),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot build worker pool: {0}")]
    Pool(String),
}

impl SweepPlan {
    pub fn from_json(text: &str) -> Result<Self, SweepError> {
        let plan: SweepPlan = serde_json::from_str(text).map_err(ConfigError::from)?;
        // re-run the config checks (unknown keys, unit restrictions)
        ConfigFile::from_value(serde_json::to_value(&plan.base).map_err(ConfigError::from)?)?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self, SweepError> {
        let text =
            fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn point_count(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn check(&self) -> Result<(), SweepError> {
        if self.axes.len() > MAX_AXES {
            return Err(SweepError::TooManyAxes(self.axes.len()));
        }
        let mut seen = BTreeSet::new();
        for axis in &self.axes {
            let key = axis.param.key();
            if !seen.insert(axis.param) {
                return Err(SweepError::DuplicateAxis(key));
            }
            if axis.count == 0 {
                return Err(SweepError::EmptyAxis(key));
            }
            let finite = axis.start.is_finite() && axis.stop.is_finite();
            let log_ok = axis.scale == AxisScale::Linear || (axis.start > 0.0 && axis.stop > 0.0);
            if !(finite && log_ok) {
                return Err(SweepError::BadAxis(key));
            }
        }
        let points = self.axes.iter().try_fold(1usize, |acc, a| acc.checked_mul(a.count)).unwrap_or(usize::MAX);
        if points > self.budget {
            return Err(SweepError::BudgetExceeded { points, budget: self.budget });
        }
        Ok(())
    }

    /// Axis coordinates of every point, row-major.
    pub fn coordinates(&self) -> Vec<Vec<f64>> {
        let values: Vec<Vec<f64>> = self.axes.iter().map(Axis::values).collect();
        let total = self.point_count();
        (0..total)
            .map(|mut flat| {
                let mut coords = vec![0.0; values.len()];
                for (k, vals) in values.iter().enumerate().rev() {
                    coords[k] = vals[flat % vals.len()];
                    flat /= vals.len();
                }
                coords
            })
            .collect()
    }

    pub fn hash(&self) -> String {
        content_hash(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Params,
    SteadyState,
    Spectrum,
    Transparency,
    GroupMetric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointError {
    pub index: usize,
    pub stage: Stage,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub index: usize,
    pub coords: Vec<f64>,
    pub steady: Option<SteadyState>,
    pub steady_residual: Option<f64>,
    pub spectrum: Option<Spectrum>,
    pub transparency: Option<TransparencyReport>,
    pub group_metric: Option<[GroupMetricPoint; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub plan_hash: String,
    pub code_version: String,
    pub axes: Vec<AxisParam>,
    pub points: Vec<PointRecord>,
    pub errors: Vec<PointError>,
    pub wall_time_s: f64,
}

impl RunRecord {
    /// Serialized record without the wall time.
    pub fn numeric_content(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("record serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("wall_time_s");
        }
        v
    }

    pub fn content_hash(&self) -> String {
        content_hash(&self.numeric_content())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    /// All work, including the inner spectrum and window searches, on one
    /// thread.
    Serial,
    /// Rayon pool with the given worker count, or the global pool.
    #[default]
    Parallel,
    Threads(usize),
}

pub fn execute(plan: &SweepPlan) -> Result<RunRecord, SweepError> {
    execute_with(plan, Execution::Parallel)
}

pub fn execute_with(plan: &SweepPlan, mode: Execution) -> Result<RunRecord, SweepError> {
    plan.check()?;
    let started = Instant::now();
    let coords = plan.coordinates();
    let run = || -> Vec<(PointRecord, Vec<PointError>)> {
        coords.par_iter().enumerate().map(|(index, c)| evaluate_point(plan, index, c)).collect()
    };
    let results = match mode {
        Execution::Parallel => run(),
        Execution::Serial => pool(1)?.install(run),
        Execution::Threads(n) => pool(n)?.install(run),
    };
    let mut points = Vec::with_capacity(results.len());
    let mut errors = Vec::new();
    for (rec, errs) in results {
        points.push(rec);
        errors.extend(errs);
    }
    Ok(RunRecord {
        plan_hash: plan.hash(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        axes: plan.axes.iter().map(|a| a.param).collect(),
        points,
        errors,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

fn pool(threads: usize) -> Result<rayon::ThreadPool, SweepError> {
    rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build().map_err(|e| SweepError::Pool(e.to_string()))
}

fn evaluate_point(plan: &SweepPlan, index: usize, coords: &[f64]) -> (PointRecord, Vec<PointError>) {
    let mut rec = PointRecord {
        index,
        coords: coords.to_vec(),
        steady: None,
        steady_residual: None,
        spectrum: None,
        transparency: None,
        group_metric: None,
    };
    let mut errors = Vec::new();
    let mut fail = |stage, message: String| errors.push(PointError { index, stage, message });

    let mut cfg = plan.base.clone();
    for (axis, &v) in plan.axes.iter().zip(coords) {
        axis.param.set(&mut cfg, v);
    }
    let p = match build_params(&cfg.to_raw()) {
        Ok(p) => p,
        Err(e) => {
            fail(Stage::Params, e.to_string());
            return (rec, errors);
        }
    };
    let s = match solve(&p, cfg.branch) {
        Ok(s) => s,
        Err(e) => {
            fail(Stage::SteadyState, e.to_string());
            return (rec, errors);
        }
    };
    rec.steady_residual = Some(steady_residual(&p, &s));

    if plan.outputs.contains(&OutputKind::Spectrum) {
        match plan.grid.to_grid(p.omega1) {
            Ok(grid) => {
                let spec = spectrum(&p, &s, &grid);
                for f in &spec.failures {
                    fail(Stage::Spectrum, format!("point {}: {}", f.index, f.error));
                }
                rec.spectrum = Some(spec);
            }
            Err(e) => fail(Stage::Spectrum, e.to_string()),
        }
    }
    if plan.outputs.contains(&OutputKind::Transparency) {
        match find_transparency_points(&p, &s, &TransparencyOptions::default()) {
            Ok(r) => rec.transparency = Some(r),
            Err(e) => fail(Stage::Transparency, e.to_string()),
        }
    }
    if plan.outputs.contains(&OutputKind::GroupMetric) {
        match group_metric_at(&p, s.delta_eff, None) {
            Ok(g) => rec.group_metric = Some(g),
            Err(e) => fail(Stage::GroupMetric, e.to_string()),
        }
    }
    rec.steady = Some(s);
    (rec, errors)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffEntry {
    /// JSON path such as `points[3].steady.q1s`.
    pub path: String,
    pub a: Value,
    pub b: Value,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiffReport {
    pub entries: Vec<DiffEntry>,
}

impl DiffReport {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
#[error("records differ in shape at `{path}`")]
pub struct ShapeMismatch {
    pub path: String,
}

/// Field-by-field comparison of two records. Numbers match when their
/// relative difference is at most `rel_tol`; wall time is ignored.
pub fn diff_records(a: &RunRecord, b: &RunRecord, rel_tol: f64) -> Result<DiffReport, ShapeMismatch> {
    let mut report = DiffReport::default();
    diff_values("", &a.numeric_content(), &b.numeric_content(), rel_tol, &mut report)?;
    Ok(report)
}

fn numbers_match(x: f64, y: f64, tol: f64) -> bool {
    x == y || (x - y).abs() <= tol * x.abs().max(y.abs())
}

fn diff_values(path: &str, a: &Value, b: &Value, tol: f64, out: &mut DiffReport) -> Result<(), ShapeMismatch> {
    let mismatch = || ShapeMismatch { path: path.to_string() };
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            if x.len() != y.len() || x.keys().any(|k| !y.contains_key(k)) {
                return Err(mismatch());
            }
            for (k, va) in x {
                let sub = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                diff_values(&sub, va, &y[k], tol, out)?;
            }
        }
        (Value::Array(x), Value::Array(y)) => {
            if x.len() != y.len() {
                return Err(mismatch());
            }
            for (i, (va, vb)) in x.iter().zip(y).enumerate() {
                diff_values(&format!("{path}[{i}]"), va, vb, tol, out)?;
            }
        }
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap_or(f64::NAN), y.as_f64().unwrap_or(f64::NAN));
            if !numbers_match(x, y, tol) {
                out.entries.push(DiffEntry { path: path.to_string(), a: a.clone(), b: b.clone() });
            }
        }
        // a result present in one record and absent in the other is a
        // difference in content, not in shape
        (Value::Null, _)
        | (_, Value::Null)
        | (Value::String(_), Value::String(_))
        | (Value::Bool(_), Value::Bool(_)) => {
            if a != b {
                out.entries.push(DiffEntry { path: path.to_string(), a: a.clone(), b: b.clone() });
            }
        }
        _ => return Err(mismatch()),
    }
    Ok(())
}

fn axis_header(plan: &SweepPlan) -> String {
    let mut h = String::from("point");
    for a in &plan.axes {
        h.push(',');
        h.push_str(a.param.key());
    }
    h
}

fn axis_fields(rec: &PointRecord) -> String {
    let mut s = rec.index.to_string();
    for c in &rec.coords {
        s.push(',');
        s.push_str(&num(*c));
    }
    s
}

fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn regime_name(r: Option<Regime>) -> &'static str {
    match r {
        Some(Regime::Fast) => "Fast",
        Some(Regime::Slow) => "Slow",
        None => "",
    }
}

pub fn write_spectrum_csv<W: Write>(plan: &SweepPlan, rec: &RunRecord, mut out: W) -> io::Result<()> {
    writeln!(out, "{},{SPECTRUM_CSV_HEADER}", axis_header(plan))?;
    for p in &rec.points {
        if let Some(spec) = &p.spectrum {
            let prefix = axis_fields(p);
            for pt in &spec.points {
                writeln!(out, "{prefix},{}", spectrum_csv_row(pt, spec.omega1))?;
            }
        }
    }
    Ok(())
}

pub fn write_transparency_csv<W: Write>(plan: &SweepPlan, rec: &RunRecord, mut out: W) -> io::Result<()> {
    writeln!(
        out,
        "{},windows,omega_minus_rad_s,omega_plus_rad_s,gap_rad_s,slope_minus_s,slope_plus_s,regime_minus,regime_plus",
        axis_header(plan)
    )?;
    for p in &rec.points {
        let prefix = axis_fields(p);
        match &p.transparency {
            Some(r) => writeln!(
                out,
                "{prefix},{},{},{},{},{},{},{},{}",
                r.points.len(),
                opt_num(r.omega_minus()),
                opt_num(r.omega_plus()),
                opt_num(r.gap()),
                opt_num(r.minus().map(|t| t.slope)),
                opt_num(r.plus().map(|t| t.slope)),
                regime_name(r.minus().map(|t| t.regime)),
                regime_name(r.plus().map(|t| t.regime)),
            )?,
            None => writeln!(out, "{prefix},0,,,,,,,")?,
        }
    }
    Ok(())
}

pub fn write_group_metric_csv<W: Write>(plan: &SweepPlan, rec: &RunRecord, mut out: W) -> io::Result<()> {
    writeln!(out, "{},omega_minus_rad_s,omega_plus_rad_s,metric_minus_s,metric_plus_s,regime", axis_header(plan))?;
    for p in &rec.points {
        let prefix = axis_fields(p);
        match &p.group_metric {
            Some([m, pl]) => {
                let regime = match (Regime::from_slope(m.metric), Regime::from_slope(pl.metric)) {
                    (Regime::Fast, Regime::Fast) => "Fast",
                    (Regime::Slow, Regime::Slow) => "Slow",
                    _ => "Mixed",
                };
                writeln!(
                    out,
                    "{prefix},{},{},{},{},{regime}",
                    num(m.delta_eval),
                    num(pl.delta_eval),
                    num(m.metric),
                    num(pl.metric)
                )?
            }
            None => writeln!(out, "{prefix},,,,,None")?,
        }
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value).map_err(io::Error::other)?;
    f.write_all(b"\n")?;
    f.flush()
}

/// Write plan.json, record.json and one CSV per requested output.
pub fn write_run(dir: &Path, plan: &SweepPlan, rec: &RunRecord) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("plan.json"), plan)?;
    write_json(&dir.join("record.json"), rec)?;
    for kind in &plan.outputs {
        let name = match kind {
            OutputKind::Spectrum => "spectrum.csv",
            OutputKind::Transparency => "transparency.csv",
            OutputKind::GroupMetric => "group_metric.csv",
        };
        let mut f = BufWriter::new(File::create(dir.join(name))?);
        match kind {
            OutputKind::Spectrum => write_spectrum_csv(plan, rec, &mut f)?,
            OutputKind::Transparency => write_transparency_csv(plan, rec, &mut f)?,
            OutputKind::GroupMetric => write_group_metric_csv(plan, rec, &mut f)?,
        }
        f.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(axes: Vec<Axis>, outputs: &[OutputKind]) -> SweepPlan {
        SweepPlan {
            base: ConfigFile::reference(),
            axes,
            outputs: outputs.iter().copied().collect(),
            budget: DEFAULT_BUDGET,
            grid: GridSpec { start: 0.95, stop: 1.05, count: 401 },
        }
    }

    fn axis(param: AxisParam, start: f64, stop: f64, count: usize) -> Axis {
        Axis { param, start, stop, count, scale: AxisScale::Linear }
    }

    #[test]
    fn axis_values_hit_endpoints() {
        let a = Axis { param: AxisParam::PumpPower, start: 1e-4, stop: 1e-2, count: 3, scale: AxisScale::Log };
        let v = a.values();
        assert_eq!(v[0], 1e-4);
        assert!((v[1] - 1e-3).abs() < 1e-18);
        assert_eq!(v[2], 1e-2);
        assert_eq!(axis(AxisParam::PumpPower, 2.0, 9.0, 1).values(), vec![2.0]);
    }

    #[test]
    fn coordinates_are_row_major() {
        let p = plan(vec![axis(AxisParam::DetuningValue, -1.0, 1.0, 2), axis(AxisParam::PumpPower, 1.0, 3.0, 3)], &[]);
        let c = p.coordinates();
        assert_eq!(c.len(), 6);
        assert_eq!(c[0], vec![-1.0, 1.0]);
        assert_eq!(c[1], vec![-1.0, 2.0]);
        assert_eq!(c[3], vec![1.0, 1.0]);
    }

    #[test]
    fn plan_checks() {
        let mut p =
            plan(vec![axis(AxisParam::PumpPower, 1e-3, 2e-3, 400), axis(AxisParam::CoulombLambda, 1.0, 2.0, 400)], &[]);
        assert!(matches!(p.check(), Err(SweepError::BudgetExceeded { points: 160_000, .. })));
        p.axes = vec![axis(AxisParam::PumpPower, 1.0, 2.0, 2), axis(AxisParam::PumpPower, 1.0, 2.0, 2)];
        assert!(matches!(p.check(), Err(SweepError::DuplicateAxis("pump_power"))));
        p.axes = vec![axis(AxisParam::PumpPower, 1.0, 2.0, 0)];
        assert!(matches!(p.check(), Err(SweepError::EmptyAxis(_))));
        p.axes = vec![Axis { scale: AxisScale::Log, ..axis(AxisParam::CoulombLambda, 0.0, 2.0, 3) }];
        assert!(matches!(p.check(), Err(SweepError::BadAxis(_))));
    }

    #[test]
    fn single_point_spectrum_has_two_dips() {
        let mut p = plan(vec![], &[OutputKind::Spectrum, OutputKind::Transparency]);
        p.grid = GridSpec::default();
        let rec = execute(&p).unwrap();
        assert_eq!(rec.points.len(), 1);
        assert!(rec.errors.is_empty());
        let spec = rec.points[0].spectrum.as_ref().unwrap();
        let dips: Vec<_> = spec.absorption_minima().into_iter().filter(|&i| spec.points[i].absorption < 0.05).collect();
        assert_eq!(dips.len(), 2);
        assert_eq!(rec.points[0].transparency.as_ref().unwrap().points.len(), 2);
    }

    #[test]
    fn gap_grows_along_lambda_axis() {
        let p = plan(vec![axis(AxisParam::CoulombLambda, 8e35, 16e35, 2)], &[OutputKind::Transparency]);
        let rec = execute(&p).unwrap();
        let gaps: Vec<f64> = rec.points.iter().map(|r| r.transparency.as_ref().unwrap().gap().unwrap()).collect();
        assert!(gaps[1] > gaps[0]);
    }

    #[test]
    fn empty_outputs_keep_steady_states_only() {
        let p = plan(vec![axis(AxisParam::PumpPower, 1e-3, 4e-3, 4)], &[]);
        let rec = execute(&p).unwrap();
        assert_eq!(rec.points.len(), 4);
        for r in &rec.points {
            assert!(r.steady.is_some());
            assert!(r.steady_residual.unwrap() < 1e-10);
            assert!(r.spectrum.is_none() && r.transparency.is_none() && r.group_metric.is_none());
        }
    }

    #[test]
    fn failures_are_captured_per_point() {
        // the second value exceeds the Coulomb stability threshold
        let p = plan(vec![axis(AxisParam::CoulombLambda, 8e35, 1e40, 2)], &[OutputKind::Transparency]);
        let rec = execute(&p).unwrap();
        assert_eq!(rec.points.len(), 2);
        assert!(rec.points[0].transparency.is_some());
        assert!(rec.points[1].steady.is_none());
        assert_eq!(rec.errors.len(), 1);
        assert_eq!(rec.errors[0].index, 1);
        assert_eq!(rec.errors[0].stage, Stage::Params);
    }

    #[test]
    fn serial_and_parallel_agree() {
        let p = plan(
            vec![axis(AxisParam::DetuningValue, -1.0, 1.0, 2), axis(AxisParam::PumpPower, 1e-3, 2e-3, 2)],
            &[OutputKind::Spectrum, OutputKind::Transparency, OutputKind::GroupMetric],
        );
        let a = execute_with(&p, Execution::Serial).unwrap();
        let b = execute_with(&p, Execution::Threads(4)).unwrap();
        assert_eq!(a.numeric_content(), b.numeric_content());
        assert_eq!(a.content_hash(), b.content_hash());
        assert!(diff_records(&a, &b, 0.0).unwrap().is_empty());
    }

    #[test]
    fn perturbed_kappa_shows_up_in_diff() {
        let p = plan(vec![], &[OutputKind::Transparency]);
        let mut q = p.clone();
        q.base.kappa *= 1.01;
        let a = execute(&p).unwrap();
        let b = execute(&q).unwrap();
        let d = diff_records(&a, &b, 1e-12).unwrap();
        assert!(!d.is_empty());
        assert!(d.entries.iter().any(|e| e.path.starts_with("points[0].transparency")));
        assert!(d.entries.iter().all(|e| !e.path.contains("coords")));
    }

    #[test]
    fn hand_edit_is_localized() {
        let p = plan(vec![axis(AxisParam::PumpPower, 1e-3, 2e-3, 2)], &[]);
        let a = execute(&p).unwrap();
        let mut b = a.clone();
        b.points[1].steady.as_mut().unwrap().q1s *= 1.5;
        let d = diff_records(&a, &b, 1e-12).unwrap();
        assert_eq!(d.entries.len(), 1);
        assert_eq!(d.entries[0].path, "points[1].steady.q1s");
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = execute(&plan(vec![axis(AxisParam::PumpPower, 1e-3, 2e-3, 2)], &[])).unwrap();
        let b = execute(&plan(vec![axis(AxisParam::PumpPower, 1e-3, 2e-3, 3)], &[])).unwrap();
        assert!(diff_records(&a, &b, 0.0).is_err());
    }

    #[test]
    fn plan_round_trips_through_json() {
        let p = plan(vec![axis(AxisParam::PumpPower, 1e-3, 2e-3, 2)], &[OutputKind::GroupMetric]);
        let text = serde_json::to_string(&p).unwrap();
        assert_eq!(SweepPlan::from_json(&text).unwrap(), p);
        let bad = text.replace("\"budget\"", "\"budgett\"");
        assert!(SweepPlan::from_json(&bad).is_err());
    }

    #[test]
    fn run_directory_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = plan(
            vec![axis(AxisParam::DetuningValue, -1.0, 1.0, 2)],
            &[OutputKind::Spectrum, OutputKind::Transparency, OutputKind::GroupMetric],
        );
        let rec = execute(&p).unwrap();
        write_run(dir.path(), &p, &rec).unwrap();
        for f in ["plan.json", "record.json", "spectrum.csv", "transparency.csv", "group_metric.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let gm = fs::read_to_string(dir.path().join("group_metric.csv")).unwrap();
        let regimes: Vec<&str> = gm.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
        assert_eq!(regimes, vec!["Slow", "Fast"]);
        let spec = fs::read_to_string(dir.path().join("spectrum.csv")).unwrap();
        assert_eq!(spec.lines().count(), 1 + 2 * 401);
    }
}
