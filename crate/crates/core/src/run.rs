//! Batch flow runs: configuration, the step loop, `series.csv`, checkpoints
//! and resume.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{fnv1a, Checkpoint};
use crate::entropy::{f_t, lambda_eigen_with, lambda_minimize_with, normalize_potential, EntropyForm, SolverOptions};
use crate::error::{Error, Result};
use crate::field::MetricField;
use crate::flow::{monitor, next_dt, solve_conjugate_heat, step, FlowKind, FlowState, MonitorSample, MonotonicityReport, ReplayPath};
use crate::model::FoliationModel;
use crate::scenario::{build, CATALOG};

pub const SERIES_HEADER: &str = "t,lambda,lambda_bar,F,Vol,mass,min_det_g";
pub const SERIES_FILE: &str = "series.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const DIAGNOSTIC_FILE: &str = "diagnostic.json";
pub const LOCK_FILE: &str = ".lock";

/// Parameters of one run; also the schema of the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Catalog entry to start from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    /// Field file to start from instead of a scenario.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// Nodes per axis for scenarios; must be absent or match for field files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<usize>,
    pub flow: FlowKind,
    pub horizon: f64,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    #[serde(default = "default_lambda_every")]
    pub lambda_every: u64,
    pub output: PathBuf,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u64,
    #[serde(default)]
    pub seed: u64,
}

fn default_cfl() -> f64 {
    0.1
}

fn default_lambda_every() -> u64 {
    10
}

fn default_checkpoint_every() -> u64 {
    100
}

fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::InvalidConfig {
        field: field.into(),
        reason: reason.into(),
    }
}

impl RunConfig {
    /// Parses the flat `key = value` config text.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| invalid("config", e.message().to_string()))?;
        Self::from_table(table)
    }

    /// Deserializes a table, naming the offending key on failure.
    pub fn from_table(table: toml::Table) -> Result<Self> {
        const KEYS: [&str; 10] = [
            "scenario",
            "input",
            "dims",
            "flow",
            "horizon",
            "cfl",
            "lambda_every",
            "output",
            "checkpoint_every",
            "seed",
        ];
        if let Some(key) = table.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(invalid(key, "unknown key"));
        }
        for key in KEYS {
            if let Some(value) = table.get(key) {
                let single: toml::Table = [(key.to_string(), value.clone())].into_iter().collect();
                if let Err(e) = probe_field(key, single) {
                    return Err(invalid(key, e));
                }
            }
        }
        let config: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| invalid("config", e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.scenario, &self.input) {
            (None, None) => return Err(invalid("scenario", "one of `scenario` or `input` is required")),
            (Some(_), Some(_)) => return Err(invalid("input", "give either `scenario` or `input`, not both")),
            (Some(name), None) if !CATALOG.contains(&name.as_str()) => {
                return Err(invalid("scenario", format!("unknown scenario `{name}`; expected one of {}", CATALOG.join(", "))))
            }
            _ => {}
        }
        if let Some(d) = self.dims {
            if !(8..=4096).contains(&d) {
                return Err(invalid("dims", format!("must be in 8..=4096, got {d}")));
            }
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(invalid("horizon", format!("must be positive and finite, got {}", self.horizon)));
        }
        if !(self.cfl.is_finite() && self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(invalid("cfl", format!("must be in (0, 1], got {}", self.cfl)));
        }
        if self.lambda_every == 0 {
            return Err(invalid("lambda_every", "must be at least 1"));
        }
        if self.checkpoint_every == 0 {
            return Err(invalid("checkpoint_every", "must be at least 1"));
        }
        if self.output.as_os_str().is_empty() {
            return Err(invalid("output", "must not be empty"));
        }
        Ok(())
    }

    /// Fingerprint of everything that determines the numbers a run produces.
    pub fn run_hash(&self) -> u64 {
        let mut keyed = self.clone();
        keyed.output = PathBuf::new();
        fnv1a(keyed.to_toml_string().as_bytes())
    }

    fn dims_or_default(&self) -> usize {
        match (self.dims, &self.scenario) {
            (Some(d), _) => d,
            (None, Some(name)) if name.starts_with("m3-") => 16,
            _ => 64,
        }
    }
}

fn probe_field(key: &str, single: toml::Table) -> std::result::Result<(), String> {
    #[derive(Deserialize)]
    #[allow(dead_code)]
    struct Probe {
        scenario: Option<String>,
        input: Option<PathBuf>,
        dims: Option<usize>,
        flow: Option<FlowKind>,
        horizon: Option<f64>,
        cfl: Option<f64>,
        lambda_every: Option<u64>,
        output: Option<PathBuf>,
        checkpoint_every: Option<u64>,
        seed: Option<u64>,
    }
    toml::Value::Table(single)
        .try_into::<Probe>()
        .map(|_| ())
        .map_err(|e| format!("bad value for `{key}`: {}", e.message()))
}

/// One line of `series.csv`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SeriesRow {
    pub t: f64,
    pub lambda: f64,
    pub lambda_bar: f64,
    #[serde(rename = "F")]
    pub f_value: f64,
    #[serde(rename = "Vol")]
    pub volume: f64,
    pub mass: f64,
    pub min_det_g: f64,
}

impl SeriesRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.t, self.lambda, self.lambda_bar, self.f_value, self.volume, self.mass, self.min_det_g
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let v: Vec<f64> = line
            .split(',')
            .map(|x| x.trim().parse::<f64>().map_err(|_| Error::Format(format!("bad series value `{x}`"))))
            .collect::<Result<_>>()?;
        match v.as_slice() {
            &[t, lambda, lambda_bar, f_value, volume, mass, min_det_g] => Ok(Self {
                t,
                lambda,
                lambda_bar,
                f_value,
                volume,
                mass,
                min_det_g,
            }),
            _ => Err(Error::Format(format!("series row has {} columns", v.len()))),
        }
    }
}

/// Reads every data row of a `series.csv`.
pub fn read_series(path: &Path) -> Result<Vec<SeriesRow>> {
    let file = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line != SERIES_HEADER {
                return Err(Error::Format("unexpected series header".into()));
            }
            continue;
        }
        rows.push(SeriesRow::parse(&line)?);
    }
    Ok(rows)
}

/// Outcome of a completed run.
#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub steps: u64,
    pub t: f64,
    pub rows: usize,
    pub monotonicity: MonotonicityReport,
}

/// Exclusive ownership of an output directory for the life of the value.
struct DirLock(PathBuf);

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(invalid("output", format!("{} is locked by another run", dir.display())))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("ckpt-{step:08}.bin"))
}

/// Checkpoint steps present in `dir`, ascending.
pub fn checkpoint_steps(dir: &Path) -> Result<Vec<u64>> {
    let mut steps: Vec<u64> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_prefix("ckpt-")?.strip_suffix(".bin")?.parse().ok()
        })
        .collect();
    steps.sort_unstable();
    Ok(steps)
}

/// Writes the machine-readable record of a failed run.
pub fn write_diagnostic(dir: &Path, error: &Error, t: Option<f64>, step: Option<u64>) -> Result<()> {
    let record = serde_json::json!({
        "error": error.kind(),
        "message": error.to_string(),
        "t": t,
        "step": step,
    });
    fs::write(dir.join(DIAGNOSTIC_FILE), serde_json::to_string_pretty(&record).expect("json") + "\n")?;
    Ok(())
}

struct Runner {
    config: RunConfig,
    dir: PathBuf,
    hash: u64,
    model: FoliationModel<f64>,
    warm: Option<Vec<f64>>,
    rows: u64,
    series: Option<BufWriter<File>>,
}

impl Runner {
    fn forward_kind(&self) -> FlowKind {
        match self.config.flow {
            FlowKind::Gauged => FlowKind::Ricci,
            kind => kind,
        }
    }

    fn diagnostics(&mut self, t: f64, g: &MetricField<f64>, f: Option<&[f64]>) -> Result<SeriesRow> {
        series_row(t, g, f, &self.model, &mut self.warm)
    }

    fn push_row(&mut self, row: &SeriesRow) -> Result<()> {
        let out = self.series.as_mut().expect("series open");
        writeln!(out, "{}", row.csv_line())?;
        self.rows += 1;
        Ok(())
    }

    fn checkpoint(&mut self, state: &FlowState<f64>) -> Result<()> {
        if let Some(out) = self.series.as_mut() {
            out.flush()?;
            out.get_ref().sync_data()?;
        }
        Checkpoint {
            kind: self.config.flow,
            run_hash: self.hash,
            rows: self.rows,
            state: state.clone(),
            warm_start: self.warm.clone(),
            model: None,
        }
        .save(&checkpoint_path(&self.dir, state.step))
    }

    /// Steps from `state` to the horizon. `fresh` is false when `state` came
    /// from a checkpoint, whose row and snapshot already exist.
    fn forward(&mut self, mut state: FlowState<f64>, mut fresh: bool) -> Result<FlowState<f64>> {
        let kind = self.forward_kind();
        let horizon = self.config.horizon;
        let records = self.config.flow != FlowKind::Gauged;
        loop {
            let done = state.t >= horizon;
            if fresh {
                if records && (state.step % self.config.lambda_every == 0 || done) {
                    let row = self.diagnostics(state.t, &state.g, state.f.as_deref()).map_err(|e| self.fail(e, &state))?;
                    self.push_row(&row)?;
                }
                if state.step % self.config.checkpoint_every == 0 {
                    self.checkpoint(&state)?;
                }
            }
            fresh = true;
            if done {
                return Ok(state);
            }
            let dt = next_dt(&state, self.config.cfl, horizon).map_err(|e| self.fail(e, &state))?;
            state = step(kind, &state, dt, &self.model).map_err(|e| self.fail(e, &state))?;
        }
    }

    fn fail(&self, error: Error, state: &FlowState<f64>) -> Error {
        let _ = write_diagnostic(&self.dir, &error, Some(state.t), Some(state.step));
        error
    }

    /// Backward conjugate heat solve along the replayed forward run, then the
    /// series of the gauged flow.
    fn gauged_series(&mut self, last: &FlowState<f64>) -> Result<()> {
        let f_final = final_ground(&last.g, &self.model)?;
        let u_final: Vec<f64> = f_final.iter().map(|&f| (-f).exp()).collect();
        let snapshots: Vec<u64> = checkpoint_steps(&self.dir)?.into_iter().filter(|&s| s <= last.step).collect();
        let dir = self.dir.clone();
        let model = self.model.clone();
        let mut path = ReplayPath::new(&model, self.config.cfl, self.config.horizon, snapshots, last.step, |s| {
            Checkpoint::<f64>::load(&checkpoint_path(&dir, s)).map(|c| c.state)
        });
        let every = self.config.lambda_every as usize;
        let total = last.step as usize;
        let samples = solve_conjugate_heat(&mut path, &u_final, &model, |i| i % every == 0 || i == total)?;
        for s in samples {
            let f: Vec<f64> = s.u.iter().map(|&u| -u.ln()).collect();
            let row = self.diagnostics(s.t, &s.g, Some(&f))?;
            self.push_row(&row)?;
        }
        Ok(())
    }
}

/// `f_min` at the final metric of a forward run: the terminal condition of
/// the backward solve.
fn final_ground(g: &MetricField<f64>, model: &FoliationModel<f64>) -> Result<Vec<f64>> {
    let mut warm = None;
    let form = EntropyForm::new(g, model)?;
    let report = entropy_report(&form, model, &mut warm)?;
    Ok(report.f_min.0)
}

fn entropy_report(
    form: &EntropyForm<'_, f64>,
    model: &FoliationModel<f64>,
    warm: &mut Option<Vec<f64>>,
) -> Result<crate::entropy::EntropyReport<f64>> {
    let opts = SolverOptions {
        start: warm.clone(),
        ..Default::default()
    };
    let report = if model.is_taut() {
        let r = lambda_eigen_with(form, &opts)?;
        *warm = Some(r.ground_state.clone());
        r
    } else {
        let r = lambda_minimize_with(form, &opts)?;
        *warm = Some(r.f_min.0.clone());
        r
    };
    Ok(report)
}

/// The diagnostics of one `series.csv` row. Without `f` the entropy and mass
/// columns refer to the minimizer.
pub fn series_row(t: f64, g: &MetricField<f64>, f: Option<&[f64]>, model: &FoliationModel<f64>, warm: &mut Option<Vec<f64>>) -> Result<SeriesRow> {
    let form = EntropyForm::new(g, model)?;
    let report = entropy_report(&form, model, warm)?;
    let (f_value, mass) = match f {
        Some(f) => {
            let e: Vec<f64> = f.iter().map(|&x| (-x).exp()).collect();
            (f_t(g, f, model)?, form.calc.integrate(&e))
        }
        None => {
            let e: Vec<f64> = report.f_min.iter().map(|&x| (-x).exp()).collect();
            (report.f_value, form.calc.integrate(&e))
        }
    };
    let min_det_g = form.calc.info.det.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(SeriesRow {
        t,
        lambda: report.lambda,
        lambda_bar: report.lambda_bar,
        f_value,
        volume: report.volume,
        mass,
        min_det_g,
    })
}

/// Model and initial state described by a config.
pub fn initial_state(config: &RunConfig) -> Result<(FoliationModel<f64>, FlowState<f64>)> {
    let (model, g, f) = match (&config.scenario, &config.input) {
        (Some(name), _) => {
            let s = build::<f64>(name, config.dims_or_default())?;
            (s.model, s.g0, None)
        }
        (None, Some(path)) => {
            let ck = Checkpoint::<f64>::load(path)?;
            let dims = ck.state.g.grid().dims().to_vec();
            if let Some(d) = config.dims {
                if dims.iter().any(|&x| x != d) {
                    return Err(invalid("dims", format!("field file has dims {dims:?}, config asks for {d}")));
                }
            }
            let model = ck.model.unwrap_or_else(|| FoliationModel::taut(ck.state.g.grid().clone()));
            (model, ck.state.g, ck.state.f)
        }
        (None, None) => return Err(invalid("scenario", "one of `scenario` or `input` is required")),
    };
    let f = match config.flow {
        FlowKind::Gradient => {
            let calc = crate::calculus::BasicCalculus::new(&g, &model)?;
            let mut f = f.unwrap_or_else(|| vec![0.0; g.grid().len()]);
            normalize_potential(&calc, &mut f);
            Some(f)
        }
        _ => None,
    };
    Ok((model, FlowState::new(g, f)))
}

fn summarize(dir: &Path, state: &FlowState<f64>, model: &FoliationModel<f64>) -> Result<RunSummary> {
    let rows = read_series(&dir.join(SERIES_FILE))?;
    let samples: Vec<MonitorSample> = rows
        .iter()
        .map(|r| MonitorSample {
            t: r.t,
            lambda: r.lambda,
            lambda_bar: r.lambda_bar,
        })
        .collect();
    Ok(RunSummary {
        steps: state.step,
        t: state.t,
        rows: rows.len(),
        monotonicity: monitor(&samples, model.is_taut()),
    })
}

/// Starts a run in an empty (or new) output directory.
pub fn run(config: &RunConfig) -> Result<RunSummary> {
    config.validate()?;
    let dir = config.output.clone();
    fs::create_dir_all(&dir)?;
    let _lock = DirLock::acquire(&dir)?;
    if dir.join(SERIES_FILE).exists() || !checkpoint_steps(&dir)?.is_empty() {
        return Err(invalid("output", format!("{} already holds a run; use resume", dir.display())));
    }
    let _ = fs::remove_file(dir.join(DIAGNOSTIC_FILE));
    let (model, state) = match initial_state(config) {
        Ok(x) => x,
        Err(e) => {
            let _ = write_diagnostic(&dir, &e, None, None);
            return Err(e);
        }
    };
    fs::write(dir.join(CONFIG_FILE), config.to_toml_string())?;
    let mut series = BufWriter::new(File::create(dir.join(SERIES_FILE))?);
    writeln!(series, "{SERIES_HEADER}")?;
    let mut runner = Runner {
        config: config.clone(),
        dir: dir.clone(),
        hash: config.run_hash(),
        model,
        warm: None,
        rows: 0,
        series: Some(series),
    };
    finish(&mut runner, state, true)
}

fn finish(runner: &mut Runner, state: FlowState<f64>, fresh: bool) -> Result<RunSummary> {
    let last = runner.forward(state, fresh)?;
    if runner.config.flow == FlowKind::Gauged {
        runner.gauged_series(&last).map_err(|e| runner.fail(e, &last))?;
    }
    if let Some(mut out) = runner.series.take() {
        out.flush()?;
    }
    summarize(&runner.dir, &last, &runner.model)
}

/// Continues the run in `dir` from its latest readable checkpoint.
pub fn resume(dir: &Path) -> Result<RunSummary> {
    let _lock = DirLock::acquire(dir)?;
    let text = fs::read_to_string(dir.join(CONFIG_FILE))?;
    let mut config = RunConfig::from_toml_str(&text)?;
    config.output = dir.to_path_buf();
    let (model, _) = initial_state(&config)?;
    let hash = config.run_hash();
    let mut latest = None;
    for step in checkpoint_steps(dir)?.into_iter().rev() {
        match Checkpoint::<f64>::load(&checkpoint_path(dir, step)) {
            Ok(ck) if ck.run_hash == hash => {
                latest = Some(ck);
                break;
            }
            _ => continue,
        }
    }
    let ck = latest.ok_or_else(|| Error::Format(format!("no usable checkpoint in {}", dir.display())))?;
    let series_path = dir.join(SERIES_FILE);
    let kept: Vec<String> = BufReader::new(File::open(&series_path)?)
        .lines()
        .take(1 + ck.rows as usize)
        .collect::<std::io::Result<_>>()?;
    if kept.first().map(String::as_str) != Some(SERIES_HEADER) || kept.len() != 1 + ck.rows as usize {
        return Err(Error::Format("series.csv is shorter than the checkpoint records".into()));
    }
    let mut series = BufWriter::new(File::create(&series_path)?);
    for line in &kept {
        writeln!(series, "{line}")?;
    }
    for step in checkpoint_steps(dir)?.into_iter().filter(|&s| s > ck.state.step) {
        fs::remove_file(checkpoint_path(dir, step))?;
    }
    let _ = fs::remove_file(dir.join(DIAGNOSTIC_FILE));
    let mut runner = Runner {
        config,
        dir: dir.to_path_buf(),
        hash,
        model,
        warm: ck.warm_start,
        rows: ck.rows,
        series: Some(series),
    };
    finish(&mut runner, ck.state, false)
}
