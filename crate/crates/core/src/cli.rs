//! Command-line front end. Every subcommand writes its outputs into `--out-dir`
//! through atomic renames and finishes with a `manifest.json` recording input
//! digests, the resolved arguments and output digests.
//!
//! Exit codes: 0 success, 1 validation or I/O error, 2 numeric failure.

use crate::baselines::{
    bellini_lifetime_pd, breed_term_structure, fit_macro_model, load_defaults_table, segmented_breed,
    write_defaults_table, BaselineError, DefaultsTable, Link,
};
use crate::diagnostics::{
    default_rate_series, tbs_curve, term_structure_mae, threshold_grid, troc, DiagnosticsError, MarkerPanel,
    DEFAULT_BANDWIDTH, GRID_POINTS,
};
use crate::dth::{
    build_design, fit, predict_hazard, term_structure_from_hazards, DthError, FitOptions, FittedDthModel, ModelSpec,
};
use crate::life_table::{build_life_table, default_age_cap, empirical_term_structure, greenwood_ci, LifeTableError};
use crate::panel::{censoring_study, read_panel_auto, write_panel_to, PanelError, SpellPanel};
use crate::resampling::{clustered_split, representativeness, ResamplingError};
use crate::sim::{simulate, SimConfig, SimError};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const THREADS_ENV: &str = "PD_TERM_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "pd-term",
    version,
    about = "Lifetime default-risk term structures from loan panels"
)]
struct Cli {
    /// Worker threads; 0 or unset uses all cores. Outputs do not depend on it.
    #[arg(long, global = true, env = THREADS_ENV)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a loan panel with known hazards.
    Simulate(SimulateArgs),
    /// Clustered train/validation split with a representativeness report.
    Split(SplitArgs),
    /// Kaplan-Meier life table with Greenwood intervals.
    Km(KmArgs),
    /// Fit a discrete-time hazard model.
    Fit(FitArgs),
    /// Per-row hazards and the portfolio term structure from a fitted model.
    Predict(PredictArgs),
    /// tROC, Brier scores, term-structure and 12-month rate comparisons.
    Diagnose(DiagnoseArgs),
    /// Legacy term-structure baselines.
    #[command(subcommand)]
    Baseline(BaselineCommand),
}

#[derive(Debug, Subcommand)]
enum BaselineCommand {
    /// Macro-shifted static PD chained over a forecast.
    Bellini(BelliniArgs),
    /// Empirical cohort term structure.
    Breed(BreedArgs),
}

#[derive(Debug, Args, Serialize)]
struct OutDir {
    /// Directory receiving the outputs and manifest.json.
    #[arg(long)]
    #[serde(skip)]
    out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct SimulateArgs {
    /// Simulation config (JSON).
    #[arg(long)]
    #[serde(skip)]
    config: PathBuf,
    #[command(flatten)]
    #[serde(skip)]
    out: OutDir,
}

#[derive(Debug, Args, Serialize)]
struct SplitArgs {
    #[arg(long)]
    #[serde(skip)]
    panel: PathBuf,
    /// Share of loans assigned to training.
    #[arg(long, default_value_t = 0.7)]
    fraction: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    #[serde(skip)]
    out: OutDir,
}

#[derive(Debug, Args, Serialize)]
struct KmArgs {
    #[arg(long)]
    #[serde(skip)]
    panel: PathBuf,
    /// Largest tabulated age; all ages when absent.
    #[arg(long)]
    age_cap: Option<u32>,
    /// Confidence level of the pointwise intervals.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[command(flatten)]
    #[serde(skip)]
    out: OutDir,
}

#[derive(Debug, Args, Serialize)]
struct FitArgs {
    #[arg(long)]
    #[serde(skip)]
    panel: PathBuf,
    /// Model spec (JSON).
    #[arg(long)]
    #[serde(skip)]
    spec: PathBuf,
    #[arg(long, default_value_t = FitOptions::default().tol)]
    tol: f64,
    #[arg(long, default_value_t = FitOptions::default().max_iter)]
    max_iter: u32,
    /// Write the best iterate instead of failing when IRLS does not converge.
    #[arg(long)]
    allow_nonconverged: bool,
    #[command(flatten)]
    #[serde(skip)]
    out: OutDir,
}

#[derive(Debug, Args, Serialize)]
struct PredictArgs {
    #[arg(long)]
    #[serde(skip)]
    panel: PathBuf,
    /// Fitted model (JSON from `fit`).
    #[arg(long)]
    #[serde(skip)]
    model: PathBuf,
    /// Oldest age in the portfolio term structure; defaults to the 0.5% at-risk cut-off.
    #[arg(long)]
    age_cap: Option<u32>,
    #[command(flatten)]
    #[serde(skip)]
    out: OutDir,
}

#[derive(Debug, Args, Serialize)]
struct DiagnoseArgs {
    #[arg(long)]
    #[serde(skip)]
    panel: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    model: PathBuf,
    /// tROC horizons.
    #[arg(long, value_delimiter = ',', default_values_t = [3u32, 12, 24, 36])]
    horizons: Vec<u32>,
    /// Nearest-neighbour share of the marker distribution.
    #[arg(long, default_value_t = DEFAULT_BANDWIDTH)]
    bandwidth: f64,
    /// Last horizon of the Brier-score curve; the largest tROC horizon when absent.
    #[arg(long)]
    ibs_horizon: Option<u32>,
    #[arg(long)]
    age_cap: Option<u32>,
    #[command(flatten)]
    #[serde(skip)]
    out: OutDir,
}

#[derive(Debug, Args, Serialize)]
struct BelliniArgs {
    #[arg(long)]
    #[serde(skip)]
    panel: PathBuf,
    /// Macro covariates regressed against the 12-month default rate.
    #[arg(long = "macro", value_delimiter = ',', required = true)]
    macro_vars: Vec<String>,
    #[arg(long, value_enum, default_value_t = Link::Logit)]
    link: Link,
    /// Static 12-month PD to shift.
    #[arg(long)]
    pd: f64,
    /// CSV with one column per macro covariate, one row per forecast period of the PD horizon.
    #[arg(long)]
    #[serde(skip)]
    forecast: PathBuf,
    #[command(flatten)]
    #[serde(skip)]
    out: OutDir,
}

#[derive(Debug, Args, Serialize)]
struct BreedArgs {
    /// Defaults table CSV (Cohort, InitialVolume, d_1, ...).
    #[arg(long, conflicts_with = "panel", required_unless_present = "panel")]
    #[serde(skip)]
    table: Option<PathBuf>,
    /// Panel from which the defaults table is built.
    #[arg(long)]
    #[serde(skip)]
    panel: Option<PathBuf>,
    /// Number of trailing cohorts pooled per horizon.
    #[arg(long, default_value_t = 12)]
    reference: usize,
    /// Categorical covariate defining segments (panel input only).
    #[arg(long, requires = "panel")]
    segment: Option<String>,
    #[command(flatten)]
    #[serde(skip)]
    out: OutDir,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Io { .. } => 1,
            CliError::Numeric(_) => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl From<PanelError> for CliError {
    fn from(e: PanelError) -> Self {
        CliError::Validation(e.to_string())
    }
}
impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Validation(e.to_string())
    }
}
impl From<ResamplingError> for CliError {
    fn from(e: ResamplingError) -> Self {
        CliError::Validation(e.to_string())
    }
}
impl From<LifeTableError> for CliError {
    fn from(e: LifeTableError) -> Self {
        CliError::Validation(e.to_string())
    }
}
impl From<DthError> for CliError {
    fn from(e: DthError) -> Self {
        match e {
            DthError::DegenerateResponse | DthError::SingularInformation | DthError::NotConverged { .. } => {
                CliError::Numeric(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}
impl From<DiagnosticsError> for CliError {
    fn from(e: DiagnosticsError) -> Self {
        match e {
            DiagnosticsError::DegenerateHorizon(_) | DiagnosticsError::ZeroCensorSurvivor(_) => {
                CliError::Numeric(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}
impl From<BaselineError> for CliError {
    fn from(e: BaselineError) -> Self {
        match e {
            BaselineError::Diagnostics(d) => d.into(),
            BaselineError::NotConverged | BaselineError::ZeroAnchor => CliError::Numeric(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}
impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return 1;
        }
    };
    match pool.install(|| execute(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Split(a) => cmd_split(a),
        Command::Km(a) => cmd_km(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Baseline(BaselineCommand::Bellini(a)) => cmd_bellini(a),
        Command::Baseline(BaselineCommand::Breed(a)) => cmd_breed(a),
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Reads an input file and records its digest under `role`.
struct Inputs(BTreeMap<String, String>);

impl Inputs {
    fn new() -> Self {
        Inputs(BTreeMap::new())
    }

    fn read(&mut self, role: &str, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        self.0.insert(role.to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    fn panel(&mut self, path: &Path) -> Result<SpellPanel, CliError> {
        let bytes = self.read("panel", path)?;
        Ok(read_panel_auto(bytes.as_slice())?)
    }

    fn json<T: serde::de::DeserializeOwned>(&mut self, role: &str, path: &Path) -> Result<T, CliError> {
        let bytes = self.read(role, path)?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }
}

/// Atomic writer for one output directory.
struct Outputs {
    dir: PathBuf,
    digests: BTreeMap<String, String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            digests: BTreeMap::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let target = self.dir.join(name);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(io_err(&self.dir))?;
        tmp.write_all(bytes).map_err(io_err(&target))?;
        tmp.as_file().sync_all().map_err(io_err(&target))?;
        tmp.persist(&target).map_err(|e| CliError::Io {
            path: target.clone(),
            source: e.error,
        })?;
        self.digests.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Validation(e.to_string()))?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    fn csv(
        &mut self,
        name: &str,
        header: &[&str],
        rows: impl IntoIterator<Item = Vec<String>>,
    ) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Validation(e.to_string()))?;
        self.write(name, &bytes)
    }

    /// Writes `manifest.json`; call last.
    fn finish(
        mut self,
        command: &str,
        inputs: Inputs,
        arguments: &impl Serialize,
        seed: Option<u64>,
    ) -> Result<(), CliError> {
        let manifest = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "arguments": arguments,
            "seed": seed,
            "inputs": inputs.0,
            "outputs": self.digests,
        });
        self.json("manifest.json", &manifest)
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn cmd_simulate(a: SimulateArgs) -> Result<(), CliError> {
    let mut inputs = Inputs::new();
    let config: SimConfig = inputs.json("config", &a.config)?;
    let (panel, truth) = simulate(&config)?;
    let mut out = Outputs::new(&a.out.out_dir)?;
    let mut buf = Vec::new();
    write_panel_to(&panel, &mut buf)?;
    out.write("panel.csv", &buf)?;
    out.csv(
        "truth.csv",
        &["LoanID", "SpellNum", "SpellPeriod", "Date", "hazard"],
        panel.rows().iter().zip(&truth.hazards).map(|(r, &h)| {
            vec![
                r.loan_id.to_string(),
                r.spell_num.to_string(),
                r.spell_period.to_string(),
                r.date.to_string(),
                num(h),
            ]
        }),
    )?;
    out.json("config.json", &config)?;
    out.finish("simulate", inputs, &a, Some(config.seed))
}

fn cmd_split(a: SplitArgs) -> Result<(), CliError> {
    let mut inputs = Inputs::new();
    let panel = inputs.panel(&a.panel)?;
    let split = clustered_split(&panel, a.fraction, a.seed)?;
    let report = representativeness(&panel, &split)?;
    let mut out = Outputs::new(&a.out.out_dir)?;
    for (name, part) in [("train.csv", &split.train), ("valid.csv", &split.valid)] {
        let mut buf = Vec::new();
        write_panel_to(part, &mut buf)?;
        out.write(name, &buf)?;
    }
    out.json(
        "representativeness.json",
        &json!({
            "sampling_fraction": a.fraction,
            "seed": a.seed,
            "loans": {
                "full": panel.loan_ids().len(),
                "train": split.train.loan_ids().len(),
                "valid": split.valid.loan_ids().len(),
            },
            "average_discrepancy": report,
        }),
    )?;
    out.finish("split", inputs, &a, Some(a.seed))
}

fn cmd_km(a: KmArgs) -> Result<(), CliError> {
    let mut inputs = Inputs::new();
    let panel = inputs.panel(&a.panel)?;
    let table = build_life_table(&panel, a.age_cap.unwrap_or(u32::MAX))?;
    let ci = greenwood_ci(&table, a.level)?;
    let censoring = censoring_study(&panel, a.age_cap.unwrap_or_else(|| default_age_cap(&panel)))?;
    let mut out = Outputs::new(&a.out.out_dir)?;
    out.csv(
        "life_table.csv",
        &["age", "n", "f", "c", "h", "S", "dens", "var", "lo", "hi"],
        (0..table.len()).map(|k| {
            vec![
                table.ages[k].to_string(),
                table.at_risk[k].to_string(),
                table.failures[k].to_string(),
                table.censored[k].to_string(),
                num(table.hazard[k]),
                num(table.survival[k]),
                num(table.density[k]),
                num(table.variance[k]),
                num(ci[k].0),
                num(ci[k].1),
            ]
        }),
    )?;
    out.json("censoring.json", &censoring)?;
    out.finish("km", inputs, &a, None)
}

fn cmd_fit(a: FitArgs) -> Result<(), CliError> {
    let mut inputs = Inputs::new();
    let panel = inputs.panel(&a.panel)?;
    let spec: ModelSpec = inputs.json("spec", &a.spec)?;
    let design = build_design(&panel, &spec)?;
    let options = FitOptions {
        tol: a.tol,
        max_iter: a.max_iter,
    };
    let model = match fit(&design, &options) {
        Ok(m) => m,
        Err(DthError::NotConverged { best }) if a.allow_nonconverged => {
            log::warn!("IRLS did not converge; writing the best iterate");
            *best
        }
        Err(e @ DthError::NotConverged { .. }) => {
            return Err(CliError::Numeric(format!(
                "{e}; rerun with --allow-nonconverged to keep the best iterate"
            )))
        }
        Err(e) => return Err(e.into()),
    };
    let events = design.events().iter().filter(|&&e| e).count();
    let mut out = Outputs::new(&a.out.out_dir)?;
    out.json("model.json", &model)?;
    out.csv(
        "coefficients.csv",
        &["term", "estimate", "std_error", "z"],
        model
            .layout
            .column_names
            .iter()
            .zip(model.coefficients.iter().zip(&model.std_errors))
            .map(|(name, (&b, &se))| vec![name.clone(), num(b), num(se), num(b / se)]),
    )?;
    out.json(
        "fit_report.json",
        &json!({
            "rows": design.len(),
            "events": events,
            "event_weight": spec.event_weight,
            "parameters": design.width(),
            "converged": model.converged,
            "iterations": model.iterations,
            "deviance": model.deviance,
            "ridge": model.ridge,
            "deviance_path": model.deviance_path,
            "dropped_strata": model.layout.dropped_strata,
        }),
    )?;
    out.finish("fit", inputs, &a, None)
}

fn cmd_predict(a: PredictArgs) -> Result<(), CliError> {
    let mut inputs = Inputs::new();
    let panel = inputs.panel(&a.panel)?;
    let model: FittedDthModel = inputs.json("model", &a.model)?;
    let hazards = predict_hazard(&model, &panel)?;
    let cap = a.age_cap.unwrap_or_else(|| default_age_cap(&panel));
    let ts = term_structure_from_hazards(&panel, &hazards, cap)?;
    let mut out = Outputs::new(&a.out.out_dir)?;
    out.csv(
        "hazards.csv",
        &["LoanID", "SpellNum", "SpellPeriod", "Date", "hazard"],
        panel.rows().iter().zip(&hazards).map(|(r, &h)| {
            vec![
                r.loan_id.to_string(),
                r.spell_num.to_string(),
                r.spell_period.to_string(),
                r.date.to_string(),
                num(h),
            ]
        }),
    )?;
    let p = &ts.portfolio;
    out.csv(
        "term_structure.csv",
        &["age", "hazard", "survival", "density"],
        (0..p.ages.len()).map(|k| {
            vec![
                p.ages[k].to_string(),
                num(p.hazard[k]),
                num(p.survival[k]),
                num(p.density[k]),
            ]
        }),
    )?;
    out.finish("predict", inputs, &a, None)
}

fn cmd_diagnose(a: DiagnoseArgs) -> Result<(), CliError> {
    if a.horizons.is_empty() || a.horizons.contains(&0) {
        return Err(CliError::Validation("horizons must be positive".into()));
    }
    let mut inputs = Inputs::new();
    let panel = inputs.panel(&a.panel)?;
    let model: FittedDthModel = inputs.json("model", &a.model)?;
    let hazards = predict_hazard(&model, &panel)?;
    let mp = MarkerPanel::from_panel(&panel, &hazards)?;
    let mut out = Outputs::new(&a.out.out_dir)?;

    let grid = threshold_grid(&mp, GRID_POINTS);
    let mut aucs = BTreeMap::new();
    for &t in &a.horizons {
        let curve = troc(&mp, t, a.bandwidth, &grid)?;
        out.csv(
            &format!("troc_t{t}.csv"),
            &["threshold", "false_positive", "true_positive"],
            curve
                .points
                .iter()
                .map(|p| vec![num(p.threshold), num(p.false_positive), num(p.true_positive)]),
        )?;
        aucs.insert(
            t.to_string(),
            json!({ "auc": curve.auc, "empty_neighbourhoods": curve.empty_neighbourhoods }),
        );
    }

    let t_max = a
        .ibs_horizon
        .unwrap_or_else(|| *a.horizons.iter().max().expect("non-empty"));
    let brier = tbs_curve(&mp, t_max)?;
    out.csv(
        "tbs.csv",
        &["horizon", "tbs"],
        brier
            .horizons
            .iter()
            .zip(&brier.tbs)
            .map(|(h, b)| vec![h.to_string(), num(*b)]),
    )?;

    let cap = a.age_cap.unwrap_or_else(|| default_age_cap(&panel));
    let actual = empirical_term_structure(&build_life_table(&panel, cap)?);
    let ts = term_structure_from_hazards(&panel, &hazards, cap)?;
    let expected: BTreeMap<u32, f64> = ts
        .portfolio
        .ages
        .iter()
        .copied()
        .zip(ts.portfolio.density.iter().copied())
        .collect();
    let term_mae = term_structure_mae(&actual, &expected, cap)?;
    let ages: std::collections::BTreeSet<u32> = actual.keys().chain(expected.keys()).copied().collect();
    let cell = |m: &BTreeMap<u32, f64>, a: u32| m.get(&a).map(|&x| num(x)).unwrap_or_default();
    out.csv(
        "term_structure.csv",
        &["age", "actual", "expected"],
        ages.into_iter()
            .map(|age| vec![age.to_string(), cell(&actual, age), cell(&expected, age)]),
    )?;

    let rates = default_rate_series(&panel, &hazards)?;
    out.csv(
        "default_rates.csv",
        &["month", "empirical", "expected", "accounts"],
        (0..rates.months.len()).map(|k| {
            vec![
                rates.months[k].to_string(),
                num(rates.empirical[k]),
                num(rates.expected[k]),
                rates.accounts[k].to_string(),
            ]
        }),
    )?;

    out.json(
        "summary.json",
        &json!({
            "bandwidth": a.bandwidth,
            "troc": aucs,
            "ibs_horizon": t_max,
            "ibs": brier.ibs,
            "age_cap": cap,
            "term_structure_mae": term_mae,
            "default_rate_mae": rates.mae,
        }),
    )?;
    out.finish("diagnose", inputs, &a, None)
}

fn read_forecast(bytes: &[u8], vars: &[String]) -> Result<Vec<Vec<f64>>, CliError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let headers = rdr.headers()?.clone();
    let idx: Vec<usize> = vars
        .iter()
        .map(|v| {
            headers
                .iter()
                .position(|h| h == v)
                .ok_or_else(|| CliError::Validation(format!("forecast has no column `{v}`")))
        })
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let z =
            idx.iter()
                .map(|&i| {
                    let cell = rec.get(i).unwrap_or("");
                    cell.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| {
                        CliError::Validation(format!("forecast line {}: `{cell}` is not a number", k + 2))
                    })
                })
                .collect::<Result<Vec<f64>, _>>()?;
        rows.push(z);
    }
    Ok(rows)
}

fn cmd_bellini(a: BelliniArgs) -> Result<(), CliError> {
    let mut inputs = Inputs::new();
    let panel = inputs.panel(&a.panel)?;
    let forecast = read_forecast(&inputs.read("forecast", &a.forecast)?, &a.macro_vars)?;
    let model = fit_macro_model(&panel, &a.macro_vars, a.link)?;
    let mu: Vec<f64> = forecast.iter().map(|z| model.predict(z)).collect();
    let ts = bellini_lifetime_pd(a.pd, &mu, model.anchor)?;
    if ts.clipped > 0 {
        log::warn!("{} shifted PDs clipped to 1", ts.clipped);
    }
    let mut out = Outputs::new(&a.out.out_dir)?;
    out.json("macro_model.json", &model)?;
    out.csv(
        "bellini.csv",
        &[
            "step",
            "forecast_rate",
            "shifted_pd",
            "survival",
            "marginal_pd",
            "cumulative_pd",
        ],
        (0..mu.len()).map(|k| {
            vec![
                (k + 1).to_string(),
                num(mu[k]),
                num(ts.shifted[k]),
                num(ts.survival[k]),
                num(ts.pd[k]),
                num(1.0 - ts.survival[k]),
            ]
        }),
    )?;
    out.finish("baseline bellini", inputs, &a, None)
}

fn cmd_breed(a: BreedArgs) -> Result<(), CliError> {
    let mut inputs = Inputs::new();
    let mut out_rows: Vec<Vec<String>> = Vec::new();
    let push = |rows: &mut Vec<Vec<String>>, segment: &str, ts: &BTreeMap<usize, f64>| {
        rows.extend(
            ts.iter()
                .map(|(v, p)| vec![segment.to_string(), v.to_string(), num(*p)]),
        );
    };
    let mut table_out: Option<DefaultsTable> = None;
    match (&a.table, &a.panel) {
        (Some(path), _) => {
            inputs.read("table", path)?;
            let table = load_defaults_table(path)?;
            push(&mut out_rows, "all", &breed_term_structure(&table, a.reference)?);
        }
        (None, Some(path)) => {
            let panel = inputs.panel(path)?;
            match &a.segment {
                Some(seg) => {
                    for (level, ts) in segmented_breed(&panel, seg, a.reference)? {
                        push(&mut out_rows, &level, &ts);
                    }
                }
                None => {
                    let table = DefaultsTable::from_panel(&panel)?;
                    push(&mut out_rows, "all", &breed_term_structure(&table, a.reference)?);
                    table_out = Some(table);
                }
            }
        }
        (None, None) => return Err(CliError::Validation("one of --table or --panel is required".into())),
    }
    let mut out = Outputs::new(&a.out.out_dir)?;
    if let Some(table) = table_out {
        let mut buf = Vec::new();
        write_defaults_table(&table, &mut buf)?;
        out.write("defaults_table.csv", &buf)?;
    }
    out.csv("breed.csv", &["segment", "horizon", "pd"], out_rows)?;
    out.finish("baseline breed", inputs, &a, None)
}
