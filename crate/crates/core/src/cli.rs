//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on bad input (unreadable files, malformed
//! traces or configs, bad flags), 2 when an internal invariant breaks.

use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::corpus::{generate, KernelSpec, KERNELS};
use crate::engine::{simulate_with, SimError, SimOptions, SimResult};
use crate::machine::MachineConfig;
use crate::report::{
    emit_heatmap, render_instruction_table, run_report_json, run_report_text, verdicts_text,
    HeatmapFormat,
};
use crate::sensitivity::{
    classify, subsets_up_to, sweep_single, sweep_subsets, SensitivityError, SensitivityReport,
    DEFAULT_SUBSET_SIZE, DEFAULT_THRESHOLD, DEFAULT_WEIGHTS,
};
use crate::trace::{parse_trace, write_trace, InstructionEvent};

#[derive(Debug, Parser)]
#[command(
    name = "sensim",
    version,
    about = "Abstract out-of-order CPU model with sensitivity analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
    Table,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the model once and print a report.
    Simulate {
        trace: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        report: ReportFormat,
        /// Include the per-instruction resource usage table.
        #[arg(long)]
        per_instruction: bool,
    },
    /// Rerun the model with accelerated parameters and rank bottlenecks.
    Sensitivity {
        trace: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated weights (each >= 1).
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
        /// `all` (every named resource), `everything` (resources plus
        /// INST_LAT, INST_WINDOW and cache bandwidths) or a comma-separated
        /// list of parameter names.
        #[arg(long, default_value = "all")]
        resources: String,
        /// Comma-separated parameter groups accelerated together, such as
        /// `a+b,c+d`. An item `upto:K` adds every group of 2..=K selected
        /// parameters; a bare `upto` means K=3.
        #[arg(long)]
        subsets: Option<String>,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        /// Write the heatmap to this file; `.csv` or `.svg`.
        #[arg(long)]
        heatmap: Option<PathBuf>,
        /// Worker threads for the fan-out (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Write a built-in kernel trace.
    GenKernel {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(KERNELS))]
        name: String,
        #[arg(long)]
        iters: Option<usize>,
        /// Buffer size in bytes for `stream`.
        #[arg(long)]
        footprint: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the machine config the kernel targets.
        #[arg(long)]
        config_out: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum CliError {
    Input(String),
    Internal(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Invariant(_) => CliError::Internal(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<SensitivityError> for CliError {
    fn from(e: SensitivityError) -> Self {
        match e {
            SensitivityError::Sim(s) => s.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}

fn read_config(path: &Path) -> Result<MachineConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    MachineConfig::from_toml(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn read_trace(path: &Path) -> Result<Vec<InstructionEvent>, CliError> {
    let file =
        fs::File::open(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    parse_trace(BufReader::new(file))
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Report text for `simulate`.
pub fn simulate_report(
    trace: &[InstructionEvent],
    config: &MachineConfig,
    json: bool,
    per_instruction: bool,
) -> Result<String, SimError> {
    let result = simulate_with(trace, config, SimOptions::default())?;
    check_result(&result)?;
    if json {
        run_report_json(&result, per_instruction)
    } else {
        let mut text = run_report_text(&result);
        if per_instruction {
            text.push('\n');
            text.push_str(&render_instruction_table(&result)?.to_text());
        }
        Ok(text)
    }
}

fn check_result(result: &SimResult) -> Result<(), SimError> {
    if result.total_cycles > 0.0 {
        result.occupancy()?;
    }
    Ok(())
}

fn select_parameters(config: &MachineConfig, spec: &str) -> Result<Vec<String>, CliError> {
    let names = match spec {
        "all" => config.resource_parameters(),
        "everything" => config.all_parameters(),
        list => list
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect(),
    };
    for name in &names {
        if config.parameter(name).is_none() {
            return Err(CliError::Input(format!("unknown parameter `{name}`")));
        }
    }
    Ok(names)
}

fn parse_subsets(spec: &str, selected: &[String]) -> Result<Vec<Vec<String>>, CliError> {
    let mut out = Vec::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let size = match item {
            "upto" => Some(DEFAULT_SUBSET_SIZE),
            _ => match item.strip_prefix("upto:") {
                Some(k) => Some(
                    k.parse()
                        .map_err(|_| CliError::Input(format!("bad subset size `{k}`")))?,
                ),
                None => None,
            },
        };
        match size {
            Some(k) => {
                out.extend(subsets_up_to(selected, k).map_err(|e| CliError::Input(e.to_string()))?)
            }
            None => out.push(item.split('+').map(|s| s.trim().to_string()).collect()),
        }
    }
    // a group named twice, possibly in another order, runs once
    let mut seen = std::collections::BTreeSet::new();
    out.retain(|group| {
        let mut key = group.clone();
        key.sort();
        key.dedup();
        seen.insert(key)
    });
    Ok(out)
}

/// Full sensitivity run: single-parameter sweep plus optional subsets.
pub fn sensitivity_report(
    trace: &[InstructionEvent],
    config: &MachineConfig,
    parameters: &[String],
    weights: &[f64],
    subsets: &[Vec<String>],
) -> Result<SensitivityReport, SensitivityError> {
    let mut report = sweep_single(trace, config, parameters, weights)?;
    for &w in weights {
        if !subsets.is_empty() {
            report
                .points
                .extend(sweep_subsets(trace, config, subsets, w)?.points);
        }
    }
    report.points.sort_by(|a, b| {
        a.label()
            .cmp(&b.label())
            .then(a.weight.total_cmp(&b.weight))
    });
    Ok(report)
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Input(e.to_string());
    match cli.command {
        Command::Simulate {
            trace,
            config,
            report,
            per_instruction,
        } => {
            let config = read_config(&config)?;
            let trace = read_trace(&trace)?;
            let text = simulate_report(
                &trace,
                &config,
                matches!(report, ReportFormat::Json),
                per_instruction,
            )?;
            out.write_all(text.as_bytes()).map_err(io)?;
        }
        Command::Sensitivity {
            trace,
            config,
            weights,
            resources,
            subsets,
            threshold,
            heatmap,
            jobs,
        } => {
            if threshold.is_nan() || threshold < 0.0 {
                return Err(CliError::Input("threshold must be >= 0".into()));
            }
            let config = read_config(&config)?;
            let trace = read_trace(&trace)?;
            let weights = weights.unwrap_or_else(|| DEFAULT_WEIGHTS.to_vec());
            let parameters = select_parameters(&config, &resources)?;
            let subsets = match &subsets {
                Some(spec) => parse_subsets(spec, &parameters)?,
                None => Vec::new(),
            };
            let heatmap_format = match &heatmap {
                Some(path) => Some(match path.extension().and_then(|e| e.to_str()) {
                    Some("csv") => HeatmapFormat::Csv,
                    Some("svg") => HeatmapFormat::Svg,
                    _ => {
                        return Err(CliError::Input(
                            "heatmap file must end in .csv or .svg".into(),
                        ))
                    }
                }),
                None => None,
            };
            let run = || sensitivity_report(&trace, &config, &parameters, &weights, &subsets);
            let report = match jobs {
                Some(n) => rayon::ThreadPoolBuilder::new()
                    .num_threads(n.max(1))
                    .build()
                    .map_err(|e| CliError::Internal(e.to_string()))?
                    .install(run)?,
                None => run()?,
            };
            let verdicts = classify(&report, threshold);
            out.write_all(verdicts_text(&report, &verdicts, threshold).as_bytes())
                .map_err(io)?;
            if let (Some(path), Some(format)) = (heatmap, heatmap_format) {
                write_file(&path, &emit_heatmap(&report, format))?;
            }
        }
        Command::GenKernel {
            name,
            iters,
            footprint,
            out: out_path,
            config_out,
        } => {
            let mut spec = KernelSpec::new(&name);
            if let Some(n) = iters {
                if n == 0 {
                    return Err(CliError::Input("--iters must be at least 1".into()));
                }
                spec.iters = n;
            }
            if let Some(f) = footprint {
                spec.footprint = f;
            }
            let (trace, _, config_text) = generate(&spec)
                .ok_or_else(|| CliError::Input(format!("unknown kernel `{name}`")))?;
            let text = write_trace(&trace);
            match out_path {
                Some(path) => write_file(&path, &text)?,
                None => out.write_all(text.as_bytes()).map_err(io)?,
            }
            if let Some(path) = config_out {
                write_file(&path, config_text)?;
            }
        }
    }
    Ok(())
}

/// Runs the CLI with explicit streams; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    0
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    1
                }
            };
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let (CliError::Input(msg) | CliError::Internal(msg)) = &e;
            let _ = writeln!(err, "error: {msg}");
            e.code()
        }
    }
}
