//! Command-line interface.
//!
//! Every subcommand accepts its settings as flags or from a flat JSON object
//! given with `--config`; flags win. The fully resolved settings are echoed
//! into the `<output>.meta.json` sidecar, which is enough to rerun the command
//! and reproduce the output byte for byte. Thread count never changes results
//! and is not recorded.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bootstrap::{log_grid, mise_star, BandwidthGrid, BootstrapConfig, IntegrationRule, WeightUpper};
use crate::cure::latency_estimate;
use crate::error::{Error, ErrorClass, Result};
use crate::experiment::{bootstrap_vs_optimal, true_mise_surface, true_mise_two_bw, MiseConfig, MiseSurface};
use crate::io::{self, DatasetSchema, Format, RunMetadata, Table};
use crate::kernel::Kernel;
use crate::models::{self, ModelSpec};
use crate::oracle::{self, PopulationFunctions};
use crate::quadrature::uniform_grid;
use crate::survival::CensoredSample;

/// Environment variable naming the directory for outputs when `--out` is
/// not given.
pub const OUT_DIR_ENV: &str = "NPCURE_OUT_DIR";

const DEFAULT_GRID: &str = "5:100:35";
const KERNEL: Kernel = Kernel::Epanechnikov;

#[derive(Parser, Debug)]
#[command(name = "npcure", version, about = "Nonparametric mixture cure model estimation")]
pub struct Cli {
    /// Worker threads; 0 or unset uses every core. Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Flat JSON object of settings; explicit flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Estimate incidence and latency at covariate values of a dataset.
    Estimate(EstimateArgs),
    /// Draw samples from a benchmark model.
    Simulate(SimulateArgs),
    /// Select bandwidths by bootstrap for a dataset.
    Selectbw(SelectArgs),
    /// Monte Carlo MISE experiments on a benchmark model.
    Mise(MiseArgs),
    /// Asymptotic bias, variance, AMSE and AMISE-optimal bandwidth.
    Oracle(OracleArgs),
    /// Write a synthetic registry-shaped dataset.
    SynthData(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MiseMode {
    /// MISE of the one-bandwidth estimator over covariates and bandwidths.
    True,
    /// MISE over (h1, h2) for the two-bandwidth estimator.
    TwoBw,
    /// Bootstrap selections compared with the MISE-optimal bandwidth.
    Bootstrap,
}

/// Input file and column mapping.
#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct DataArgs {
    /// Input CSV file.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Covariate column (name, or index without a header). Default `x`.
    #[arg(long)]
    pub covariate_col: Option<String>,
    /// Observed time column. Default `t`.
    #[arg(long)]
    pub time_col: Option<String>,
    /// Censoring indicator column (1 = event). Default `delta`.
    #[arg(long)]
    pub delta_col: Option<String>,
    /// Grouping column used by `--group`.
    #[arg(long)]
    pub group_col: Option<String>,
    /// Keep only rows whose group column equals one of these values.
    #[arg(long, value_delimiter = ',')]
    pub group: Vec<String>,
    /// Field delimiter. Default `,`.
    #[arg(long)]
    pub delimiter: Option<char>,
    /// The file has no header row; columns are given as zero-based indices.
    #[arg(long)]
    pub no_header: bool,
}

impl DataArgs {
    fn load(&self) -> Result<(CensoredSample, io::IngestReport)> {
        let input = self
            .input
            .as_deref()
            .ok_or_else(|| Error::invalid("input", "an input file is required"))?;
        let d = DatasetSchema::default();
        let schema = DatasetSchema {
            covariate: self.covariate_col.clone().unwrap_or(d.covariate),
            time: self.time_col.clone().unwrap_or(d.time),
            delta: self.delta_col.clone().unwrap_or(d.delta),
            group: self.group_col.clone(),
            delimiter: self.delimiter.unwrap_or(d.delimiter),
            has_header: !self.no_header,
        };
        let groups = (!self.group.is_empty()).then_some(self.group.as_slice());
        let (sample, report) = io::ingest(input, &schema, groups)?;
        eprintln!(
            "read {} rows from {}, kept {}, censored {} ({:.2}%)",
            report.rows_read,
            input.display(),
            report.rows_kept,
            report.censored,
            report.censoring_pct
        );
        Ok((sample, report))
    }
}

/// Bootstrap selector settings.
#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct BootArgs {
    /// Bandwidth grid `lo:hi:count`, log-spaced. Default 5:100:35.
    #[arg(long)]
    pub grid: Option<String>,
    /// Bootstrap resamples. Default 100, or 200 with `--full-scale`.
    #[arg(long = "B")]
    #[serde(rename = "B")]
    pub resamples: Option<usize>,
    /// Pilot bandwidth constant. Default 0.75.
    #[arg(long)]
    pub pilot_c: Option<f64>,
    /// Time points of the integration rule. Default 100.
    #[arg(long)]
    pub time_grid_size: Option<usize>,
    /// Upper end of the integration range. Default: largest uncensored time.
    #[arg(long)]
    pub weight_upper: Option<f64>,
}

impl BootArgs {
    fn fill(&mut self, full_scale: bool) {
        self.grid.get_or_insert_with(|| DEFAULT_GRID.into());
        self.resamples.get_or_insert(if full_scale { 200 } else { 100 });
        self.pilot_c.get_or_insert(0.75);
        self.time_grid_size.get_or_insert(100);
    }

    fn integration(&self) -> IntegrationRule {
        IntegrationRule {
            time_grid_size: self.time_grid_size.unwrap_or(100),
            weight_upper: self
                .weight_upper
                .map_or(WeightUpper::LargestUncensored, WeightUpper::Fixed),
        }
    }

    fn config(&self, seed: u64) -> Result<BootstrapConfig> {
        let cfg = BootstrapConfig {
            resamples: self.resamples.unwrap_or(100),
            grid: parse_grid(self.grid.as_deref().unwrap_or(DEFAULT_GRID))?,
            pilot_c: self.pilot_c.unwrap_or(0.75),
            integration: self.integration(),
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct EstimateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub boot: BootArgs,
    /// Covariate values to estimate at (repeatable or comma-separated).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub x: Vec<f64>,
    /// Fixed bandwidth, or `auto` for bootstrap selection. Default auto.
    #[arg(long)]
    pub h: Option<String>,
    /// Points of the output time grid on [0, largest uncensored time]. Default 200.
    #[arg(long)]
    pub time_points: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub full_scale: bool,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Output file; the sidecar goes next to it.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SimulateArgs {
    /// Benchmark model, 1 or 2. Default 1.
    #[arg(long)]
    pub model: Option<u32>,
    /// Sample size. Default 100.
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of independent samples. Default 1.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SelectArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub boot: BootArgs,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub x: Vec<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub full_scale: bool,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct MiseArgs {
    #[arg(long, value_enum)]
    pub mode: Option<MiseMode>,
    #[arg(long)]
    pub model: Option<u32>,
    /// Sample size per trial. Default 100.
    #[arg(long)]
    pub n: Option<usize>,
    /// Monte Carlo trials. Default 100, or 1000 with `--full-scale`.
    #[arg(long)]
    pub m: Option<usize>,
    /// Covariate values. Default 5.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub x: Vec<f64>,
    /// Grid for h2 in `two-bw` mode; defaults to `--grid`.
    #[arg(long)]
    pub grid2: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub boot: BootArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub full_scale: bool,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct OracleArgs {
    #[arg(long)]
    pub model: Option<u32>,
    /// Time points (repeatable). Default 1.
    #[arg(long, value_delimiter = ',')]
    pub t: Vec<f64>,
    /// Covariate values (repeatable). Default 5.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub x: Vec<f64>,
    /// Bandwidth, or `auto` for the AMISE-optimal one. Default auto.
    #[arg(long)]
    pub h: Option<String>,
    /// Sample size. Default 100.
    #[arg(long)]
    pub n: Option<usize>,
    /// Time range `lo:hi` of the AMISE integrals. Default: up to the 95%
    /// latency quantile.
    #[arg(long)]
    pub t_range: Option<String>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SynthArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

/// `lo:hi:count`, log-spaced.
pub fn parse_grid(spec: &str) -> Result<BandwidthGrid> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::invalid("grid", format!("expected lo:hi:count, got `{spec}`"));
    let [lo, hi, count] = parts.as_slice() else {
        return Err(bad());
    };
    log_grid(
        lo.trim().parse().map_err(|_| bad())?,
        hi.trim().parse().map_err(|_| bad())?,
        count.trim().parse().map_err(|_| bad())?,
    )
}

fn parse_range(spec: &str) -> Result<(f64, f64)> {
    let bad = || Error::invalid("t-range", format!("expected lo:hi, got `{spec}`"));
    let (lo, hi) = spec.split_once(':').ok_or_else(bad)?;
    Ok((
        lo.trim().parse().map_err(|_| bad())?,
        hi.trim().parse().map_err(|_| bad())?,
    ))
}

/// `None` for `auto`.
fn parse_h(spec: &str) -> Result<Option<f64>> {
    if spec.eq_ignore_ascii_case("auto") {
        return Ok(None);
    }
    match spec.parse::<f64>() {
        Ok(h) if h > 0.0 && h.is_finite() => Ok(Some(h)),
        _ => Err(Error::invalid(
            "h",
            format!("expected a positive number or `auto`, got `{spec}`"),
        )),
    }
}

fn read_config(path: &Path) -> Result<serde_json::Map<String, Value>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::invalid("config", format!("cannot read {}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(Error::invalid("config", "expected a JSON object")),
        Err(e) => Err(Error::invalid("config", format!("{}: {e}", path.display()))),
    }
}

/// Overlays explicitly given flags on the config file. Unset options, empty
/// lists and unset switches do not override.
fn merge_config<T: Serialize + DeserializeOwned>(flags: &T, config: Option<&Path>) -> Result<T> {
    let Some(path) = config else {
        return Ok(serde_json::from_value(serde_json::to_value(flags)?)?);
    };
    let mut merged = read_config(path)?;
    if let Value::Object(given) = serde_json::to_value(flags)? {
        for (k, v) in given {
            let unset = match &v {
                Value::Null | Value::Bool(false) => true,
                Value::Array(a) => a.is_empty(),
                _ => false,
            };
            if !unset {
                merged.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| Error::invalid("config", e.to_string()))
}

/// A finished command: the table to write and what goes into the sidecar.
struct Output {
    command: &'static str,
    config: Value,
    table: Table,
    format: Format,
    out: Option<PathBuf>,
    details: Value,
}

fn output_path(command: &str, out: Option<PathBuf>, format: Format) -> PathBuf {
    out.unwrap_or_else(|| {
        let dir = std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from("."), PathBuf::from);
        dir.join(format!("{command}.{}", format.extension()))
    })
}

fn write_output(o: Output) -> Result<PathBuf> {
    let path = output_path(o.command, o.out, o.format);
    let bytes = o.table.to_bytes(o.format)?;
    let meta = RunMetadata::new(o.command, o.config, o.table.len(), o.details);
    io::write_with_metadata(&path, &bytes, &meta)?;
    Ok(path)
}

fn format_of(f: Option<FormatArg>) -> Format {
    f.map_or(Format::Csv, Into::into)
}

fn xs_or_default(xs: &[f64]) -> Vec<f64> {
    if xs.is_empty() {
        vec![5.0]
    } else {
        xs.to_vec()
    }
}

fn require_xs(xs: &[f64]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::invalid("x", "give at least one covariate value"));
    }
    if let Some(bad) = xs.iter().find(|x| !x.is_finite()) {
        return Err(Error::invalid(
            "x",
            format!("covariate values must be finite, got {bad}"),
        ));
    }
    Ok(())
}

fn model_of(n: Option<u32>) -> Result<ModelSpec> {
    models::by_number(n.unwrap_or(1))
}

fn error_entry(x: f64, e: &Error) -> Value {
    eprintln!("warning: x = {x}: {e}");
    json!({ "x": x, "error": e.to_string() })
}

fn cmd_estimate(mut a: EstimateArgs) -> Result<Output> {
    a.boot.fill(a.full_scale);
    a.h.get_or_insert_with(|| "auto".into());
    a.time_points.get_or_insert(200);
    a.seed.get_or_insert(0);
    require_xs(&a.x)?;
    let fixed_h = parse_h(a.h.as_deref().unwrap_or("auto"))?;
    let boot = a.boot.config(a.seed.unwrap_or(0))?;
    let points = a.time_points.unwrap_or(200);
    if points < 2 {
        return Err(Error::invalid("time-points", "need at least 2 points"));
    }
    let (sample, report) = a.data.load()?;
    let t_max = sample.largest_uncensored().ok_or(Error::NoUncensored)?;
    let (times, _) = uniform_grid(t_max, points);

    let mut table = Table::new(&["x", "h", "incidence", "t", "latency"]);
    let mut bandwidths = Vec::new();
    let mut errors = Vec::new();
    let mut first_error = None;
    for &x in &a.x {
        let fit = match fixed_h {
            Some(h) => Ok(h),
            None => mise_star(&sample, x, &boot, KERNEL).map(|c| c.argmin()),
        }
        .and_then(|h| latency_estimate(&sample, x, h, KERNEL));
        match fit {
            Ok(fit) => {
                let h = match fit.bandwidth {
                    crate::cure::Bandwidth::Single { h } => h,
                    crate::cure::Bandwidth::Pair { h1, .. } => h1,
                };
                bandwidths.push(json!({ "x": x, "h": h, "incidence": fit.incidence }));
                for (&t, s0) in times.iter().zip(fit.latency.eval_sorted(&times)) {
                    table.push(vec![x.into(), h.into(), fit.incidence.into(), t.into(), s0.into()]);
                }
            }
            Err(e) => {
                errors.push(error_entry(x, &e));
                first_error.get_or_insert(e);
            }
        }
    }
    if bandwidths.is_empty() {
        return Err(first_error.expect("at least one x"));
    }
    Ok(Output {
        command: "estimate",
        config: serde_json::to_value(&a)?,
        table,
        format: format_of(a.format),
        out: a.out,
        details: json!({ "ingest": report, "fits": bandwidths, "errors": errors }),
    })
}

fn cmd_simulate(mut a: SimulateArgs) -> Result<Output> {
    a.model.get_or_insert(1);
    a.n.get_or_insert(100);
    a.m.get_or_insert(1);
    a.seed.get_or_insert(0);
    let spec = model_of(a.model)?;
    let (n, m, seed) = (a.n.unwrap_or(100), a.m.unwrap_or(1), a.seed.unwrap_or(0));
    if m == 0 {
        return Err(Error::invalid("m", "need at least one sample"));
    }
    let batch = models::generate_batch(&spec, n, m, seed)?;
    let table = io::sample_table(&batch.samples);
    let censored: Vec<usize> = batch.samples.iter().map(CensoredSample::censored_count).collect();
    Ok(Output {
        command: "simulate",
        config: serde_json::to_value(&a)?,
        table,
        format: format_of(a.format),
        out: a.out,
        details: json!({ "model": spec, "trial_seeds": batch.seeds, "censored": censored }),
    })
}

fn cmd_selectbw(mut a: SelectArgs) -> Result<Output> {
    a.boot.fill(a.full_scale);
    a.seed.get_or_insert(0);
    require_xs(&a.x)?;
    let boot = a.boot.config(a.seed.unwrap_or(0))?;
    let (sample, report) = a.data.load()?;

    let mut table = Table::new(&["x", "h", "mise_star", "resamples_used", "selected"]);
    let mut selected = Vec::new();
    let mut errors = Vec::new();
    let mut first_error = None;
    for &x in &a.x {
        match mise_star(&sample, x, &boot, KERNEL) {
            Ok(curve) => {
                for (k, (&h, &v)) in curve.grid.values().iter().zip(&curve.values).enumerate() {
                    table.push(vec![
                        x.into(),
                        h.into(),
                        v.into(),
                        curve.used[k].into(),
                        (k == curve.argmin_index).into(),
                    ]);
                }
                selected.push(json!({ "x": x, "h": curve.argmin(), "mise_star": curve.min_value() }));
            }
            Err(e) => {
                errors.push(error_entry(x, &e));
                first_error.get_or_insert(e);
            }
        }
    }
    if selected.is_empty() {
        return Err(first_error.expect("at least one x"));
    }
    Ok(Output {
        command: "selectbw",
        config: serde_json::to_value(&a)?,
        table,
        format: format_of(a.format),
        out: a.out,
        details: json!({ "ingest": report, "selected": selected, "errors": errors }),
    })
}

fn surface_rows(surface: &MiseSurface, table: &mut Table, two: bool) {
    for c in surface.cells() {
        let mut row = vec![c.x.into(), c.h.into()];
        if two {
            row.push(c.h2.into());
        }
        row.push(c.mise.into());
        row.push(c.used.into());
        table.push(row);
    }
}

fn cmd_mise(mut a: MiseArgs) -> Result<Output> {
    a.mode.get_or_insert(MiseMode::True);
    a.model.get_or_insert(1);
    a.n.get_or_insert(100);
    a.m.get_or_insert(if a.full_scale { 1000 } else { 100 });
    a.x = xs_or_default(&a.x);
    a.boot.fill(a.full_scale);
    a.seed.get_or_insert(0);
    require_xs(&a.x)?;
    let spec = model_of(a.model)?;
    let (n, m, seed) = (a.n.unwrap_or(100), a.m.unwrap_or(100), a.seed.unwrap_or(0));
    let boot = a.boot.config(seed)?;
    let config = MiseConfig {
        integration: a.boot.integration(),
        kernel: KERNEL,
        seed,
    };

    let (table, details) = match a.mode.unwrap_or(MiseMode::True) {
        MiseMode::True => {
            let s = true_mise_surface(&spec, n, m, &a.x, &boot.grid, &config)?;
            let mut table = Table::new(&["x", "h", "mise", "trials_used"]);
            surface_rows(&s, &mut table, false);
            let optimal: Vec<Value> = (0..a.x.len())
                .map(|ix| {
                    let (k, _) = s.argmin(ix);
                    json!({ "x": a.x[ix], "h_opt": boot.grid.values()[k], "mise": s.value(ix, k, 0) })
                })
                .collect();
            (table, json!({ "model": spec, "optimal": optimal }))
        }
        MiseMode::TwoBw => {
            let grid2 = match a.grid2.as_deref() {
                Some(g) => parse_grid(g)?,
                None => boot.grid.clone(),
            };
            a.grid2.get_or_insert_with(|| a.boot.grid.clone().unwrap_or_default());
            let mut table = Table::new(&["x", "h", "h2", "mise", "trials_used"]);
            let mut optimal = Vec::new();
            for &x in &a.x {
                let s = true_mise_two_bw(&spec, n, m, x, &boot.grid, &grid2, &config)?;
                surface_rows(&s, &mut table, true);
                let (i1, i2) = s.argmin(0);
                optimal.push(json!({
                    "x": x,
                    "h_opt": boot.grid.values()[i1],
                    "h2_opt": grid2.values()[i2],
                    "mise": s.value(0, i1, i2),
                }));
            }
            (table, json!({ "model": spec, "optimal": optimal }))
        }
        MiseMode::Bootstrap => {
            let r = bootstrap_vs_optimal(&spec, n, m, &a.x, &boot, &config)?;
            let mut table = Table::new(&["x", "trial", "h_star", "mise_ratio"]);
            let mut summaries = Vec::new();
            for s in &r.summaries {
                let mut ratios = s.ratios.iter();
                for (j, h) in s.selected.iter().enumerate() {
                    let ratio = h.and_then(|_| ratios.next().copied());
                    table.push(vec![s.x.into(), j.into(), (*h).into(), ratio.into()]);
                }
                summaries.push(json!({
                    "x": s.x,
                    "h_opt": s.h_opt(),
                    "min_mise": s.mise.min_value(),
                    "mise": s.mise.values,
                    "histogram": s.histogram,
                    "ratio_quantile_levels": crate::experiment::RATIO_QUANTILES,
                    "ratio_quantiles": s.ratio_quantiles,
                    "failures": s.failures,
                }));
            }
            (table, json!({ "model": spec, "summaries": summaries }))
        }
    };
    Ok(Output {
        command: "mise",
        config: serde_json::to_value(&a)?,
        table,
        format: format_of(a.format),
        out: a.out,
        details,
    })
}

fn cmd_oracle(mut a: OracleArgs) -> Result<Output> {
    a.model.get_or_insert(1);
    a.n.get_or_insert(100);
    a.h.get_or_insert_with(|| "auto".into());
    if a.t.is_empty() {
        a.t = vec![1.0];
    }
    a.x = xs_or_default(&a.x);
    require_xs(&a.x)?;
    let spec = model_of(a.model)?;
    let pop = PopulationFunctions::from_model(&spec);
    let n = a.n.unwrap_or(100);
    let fixed_h = parse_h(a.h.as_deref().unwrap_or("auto"))?;
    let t_range = a.t_range.as_deref().map(parse_range).transpose()?;

    let mut table = Table::new(&[
        "t",
        "x",
        "h",
        "n",
        "b1",
        "b2",
        "v1",
        "v2",
        "v3",
        "bias_term",
        "variance_term",
        "amse",
    ]);
    let mut amise = Vec::new();
    for &x in &a.x {
        let h = match fixed_h {
            Some(h) => h,
            None => {
                let ints = oracle::amise_integrals(&pop, x, t_range)?;
                let h = ints.bandwidth(n, KERNEL)?;
                amise.push(json!({ "x": x, "h_amise": h, "integrals": ints }));
                h
            }
        };
        for &t in &a.t {
            let r = oracle::amse(&pop, t, x, h, n, KERNEL)?;
            table.push(vec![
                t.into(),
                x.into(),
                h.into(),
                n.into(),
                r.b1.into(),
                r.b2.into(),
                r.v1.into(),
                r.v2.into(),
                r.v3.into(),
                r.bias_term.into(),
                r.variance_term.into(),
                r.amse.into(),
            ]);
        }
    }
    Ok(Output {
        command: "oracle",
        config: serde_json::to_value(&a)?,
        table,
        format: format_of(a.format),
        out: a.out,
        details: json!({ "model": spec, "d_k": KERNEL.second_moment(), "c_k": KERNEL.roughness(), "amise": amise }),
    })
}

fn cmd_synth(mut a: SynthArgs) -> Result<Output> {
    a.seed.get_or_insert(0);
    let rows = io::synthetic_registry(a.seed.unwrap_or(0));
    let table = io::registry_table(&rows);
    let censored = rows.iter().filter(|r| !r.delta).count();
    Ok(Output {
        command: "synth-data",
        config: serde_json::to_value(&a)?,
        table,
        format: Format::Csv,
        out: a.out,
        details: json!({ "rows": rows.len(), "censored": censored }),
    })
}

/// `out` never comes from a config file, so it is restored from the flags.
trait HasOut {
    fn out_mut(&mut self) -> &mut Option<PathBuf>;
}

macro_rules! has_out {
    ($($t:ty),*) => {$(
        impl HasOut for $t {
            fn out_mut(&mut self) -> &mut Option<PathBuf> {
                &mut self.out
            }
        }
    )*};
}

has_out!(EstimateArgs, SimulateArgs, SelectArgs, MiseArgs, OracleArgs, SynthArgs);

fn with_out<T: HasOut>(mut args: T, out: Option<PathBuf>) -> T {
    *args.out_mut() = out;
    args
}

/// Runs a parsed command line and returns the output path.
pub fn run(cli: Cli) -> Result<PathBuf> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::invalid("threads", e.to_string()))?;
    let config = cli.config.as_deref();
    pool.install(|| {
        let output = match &cli.command {
            Command::Estimate(a) => cmd_estimate(with_out(merge_config(a, config)?, a.out.clone())),
            Command::Simulate(a) => cmd_simulate(with_out(merge_config(a, config)?, a.out.clone())),
            Command::Selectbw(a) => cmd_selectbw(with_out(merge_config(a, config)?, a.out.clone())),
            Command::Mise(a) => cmd_mise(with_out(merge_config(a, config)?, a.out.clone())),
            Command::Oracle(a) => cmd_oracle(with_out(merge_config(a, config)?, a.out.clone())),
            Command::SynthData(a) => cmd_synth(with_out(merge_config(a, config)?, a.out.clone())),
        }?;
        write_output(output)
    })
}

pub fn exit_code(class: ErrorClass) -> i32 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numerical => 4,
    }
}

/// Parses `args`, runs, reports on stderr and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(path) => {
            eprintln!("wrote {}", path.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(e.class())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn grid_and_h_parsing() {
        assert_eq!(parse_grid("1:4:3").unwrap().len(), 3);
        assert!(parse_grid("1:4").is_err());
        assert!(parse_grid("a:4:3").is_err());
        assert_eq!(parse_h("auto").unwrap(), None);
        assert_eq!(parse_h("2.5").unwrap(), Some(2.5));
        assert!(parse_h("-1").is_err());
        assert_eq!(parse_range("0.1:4").unwrap(), (0.1, 4.0));
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"model": 2, "n": 50, "seed": 9}"#).unwrap();
        let flags = SimulateArgs {
            n: Some(70),
            ..SimulateArgs::default()
        };
        let merged = merge_config(&flags, Some(&path)).unwrap();
        assert_eq!((merged.model, merged.n, merged.seed), (Some(2), Some(70), Some(9)));

        fs::write(&path, r#"{"modle": 2}"#).unwrap();
        let err = merge_config(&flags, Some(&path)).unwrap_err();
        assert_eq!(err.class(), ErrorClass::Config);
        assert!(err.to_string().contains("modle"));
    }

    #[test]
    fn flattened_groups_merge() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"B": 7, "input": "a.csv", "x": [1.0]}"#).unwrap();
        let flags = SelectArgs {
            x: vec![2.0, 3.0],
            ..SelectArgs::default()
        };
        let merged = merge_config(&flags, Some(&path)).unwrap();
        assert_eq!(merged.boot.resamples, Some(7));
        assert_eq!(merged.data.input.as_deref(), Some(Path::new("a.csv")));
        assert_eq!(merged.x, vec![2.0, 3.0]);
    }

    #[test]
    fn exit_codes_by_class() {
        assert_eq!(exit_code(Error::invalid("n", "x").class()), 2);
        assert_eq!(exit_code(Error::EmptySample.class()), 3);
        assert_eq!(exit_code(Error::BiasFree.class()), 4);
    }
}
