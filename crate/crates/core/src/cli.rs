//! Command-line front end.

use std::collections::BTreeMap;
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::costmodel::{compare, format_relative_table, simulate, CostReport, RelativeReport, SimulationMode};
use crate::error::{Error, Result};
use crate::io::{self, RunConfig, FORMAT_VERSION};
use crate::metrics::{self, EmbeddingGrouping, DEFAULT_ECE_BINS};
use crate::planner::{plan_epoch, verify_plan};
use crate::schedule::{self, CurriculumSchedule, ScheduleKind};

pub const METRIC_REPORT_FORMAT: &str = "msc-metric-report";
pub const COMPARE_FORMAT: &str = "msc-relative-report";

/// Configs shipped with the binary, resolvable by name.
pub const BUNDLED_CONFIGS: &[(&str, &str)] = &[
    ("resnet_sscfbs", include_str!("../configs/resnet_sscfbs.json")),
    ("resnet_mscfbs", include_str!("../configs/resnet_mscfbs.json")),
    ("resnet_mscvbs", include_str!("../configs/resnet_mscvbs.json")),
    ("resnet_mscvbswc", include_str!("../configs/resnet_mscvbswc.json")),
    ("efficientnet_sscfbs", include_str!("../configs/efficientnet_sscfbs.json")),
    ("efficientnet_mscvbs", include_str!("../configs/efficientnet_mscvbs.json")),
    ("maskrcnn_sscfbs", include_str!("../configs/maskrcnn_sscfbs.json")),
    ("maskrcnn_mscvbs", include_str!("../configs/maskrcnn_mscvbs.json")),
    ("toy_mscvbswc", include_str!("../configs/toy_mscvbswc.json")),
];

#[derive(Debug, Parser)]
#[command(name = "msc-sampler", version, about = "Multi-scale sampler planning, cost simulation and metrics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a per-rank iteration plan.
    Plan(PlanArgs),
    /// Check a plan file for coverage and shape violations.
    Verify(VerifyArgs),
    /// Simulate training cost, optionally against a baseline config.
    Simulate(SimulateArgs),
    /// Relative cost table from saved cost reports.
    Compare(CompareArgs),
    /// Evaluation metrics over prediction dumps.
    Metrics {
        #[command(subcommand)]
        metric: MetricCommand,
    },
    /// Tabulate the curriculum schedules.
    Schedules(SchedulesArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Config file path or bundled config name.
    #[arg(long)]
    pub config: String,
    /// Dotted-path override, e.g. `sampler.seed=3`.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_assignment)]
    pub overrides: Vec<(String, String)>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output path (defaults to the config's `output.plan`, else stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Epoch or half-open range `A..B` to plan (defaults to all).
    #[arg(long, value_parser = parse_epoch_range)]
    pub epochs: Option<Range<u32>>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    pub plan: PathBuf,
    /// Write per-epoch coverage reports here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Montecarlo,
    Expected,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Baseline config path or bundled name.
    #[arg(long)]
    pub baseline: Option<String>,
    /// Overrides applied to the baseline config.
    #[arg(long = "baseline-set", value_name = "KEY=VALUE", value_parser = parse_assignment)]
    pub baseline_overrides: Vec<(String, String)>,
    #[arg(long, value_enum, default_value_t = ModeArg::Montecarlo)]
    pub mode: ModeArg,
    /// Seeds for Monte Carlo mode (defaults to the config seed).
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Cost report output (defaults to the config's `output.report`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Candidate cost reports.
    #[arg(required = true)]
    pub candidates: Vec<PathBuf>,
    #[arg(long)]
    pub baseline: PathBuf,
    /// Write relative reports as records.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GroupingArg {
    PerImage,
    PerResolution,
}

impl From<GroupingArg> for EmbeddingGrouping {
    fn from(g: GroupingArg) -> Self {
        match g {
            GroupingArg::PerImage => EmbeddingGrouping::PerImageAcrossResolutions,
            GroupingArg::PerResolution => EmbeddingGrouping::PerResolutionAcrossImages,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum MetricCommand {
    /// Expected calibration error.
    Ece {
        dump: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ECE_BINS)]
        bins: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Prediction entropy summary.
    Entropy {
        dump: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Entropy skewness per epoch from epoch-tagged records.
    SkewnessCurve {
        #[arg(required = true)]
        dumps: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Embedding variance.
    EmbeddingVariance {
        dump: PathBuf,
        #[arg(long, value_enum, default_value_t = GroupingArg::PerResolution)]
        grouping: GroupingArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Top-1 accuracy per evaluation resolution.
    Accuracy {
        dump: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy table with signed deltas against a baseline.
    Delta {
        /// JSON object mapping dataset name to accuracy.
        candidate: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct SchedulesArgs {
    #[arg(long, default_value_t = 600)]
    pub epochs: u32,
    #[arg(long, default_value_t = schedule::DEFAULT_RHO0)]
    pub rho0: f64,
    #[arg(long, default_value_t = schedule::DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long, default_value_t = schedule::DEFAULT_POLY_POWER)]
    pub poly_power: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_assignment(s: &str) -> std::result::Result<(String, String), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))?;
    if k.is_empty() {
        return Err(format!("empty key in `{s}`"));
    }
    Ok((k.to_string(), v.to_string()))
}

fn parse_epoch_range(s: &str) -> std::result::Result<Range<u32>, String> {
    let num = |t: &str| t.trim().parse::<u32>().map_err(|e| format!("bad epoch `{t}`: {e}"));
    match s.split_once("..") {
        Some((a, b)) => {
            let r = num(a)?..num(b)?;
            if r.is_empty() {
                return Err(format!("empty epoch range `{s}`"));
            }
            Ok(r)
        }
        None => {
            let e = num(s)?;
            Ok(e..e + 1)
        }
    }
}

/// Loads `name_or_path` from disk, falling back to the bundled configs.
pub fn resolve_config(name_or_path: &str, overrides: &[(String, String)]) -> Result<RunConfig> {
    let path = Path::new(name_or_path);
    if path.exists() {
        return io::load_config(path, overrides);
    }
    let name = name_or_path.strip_suffix(".json").unwrap_or(name_or_path);
    match BUNDLED_CONFIGS.iter().find(|(n, _)| *n == name) {
        Some((n, text)) => io::parse_config(text, Path::new(&format!("{n}.json")), overrides),
        None => Err(Error::config(
            "config",
            format!(
                "`{name_or_path}` is neither a file nor a bundled config ({})",
                BUNDLED_CONFIGS.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", ")
            ),
        )),
    }
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::io(Path::new("<stdout>"), e)
}

fn run_plan(args: &PlanArgs) -> Result<()> {
    let run = resolve_config(&args.config.config, &args.config.overrides)?;
    let cfg = &run.sampler;
    let epochs = args.epochs.clone().unwrap_or(0..cfg.epochs);
    if epochs.end > cfg.epochs {
        return Err(Error::config(
            "epochs",
            format!("range {epochs:?} exceeds the configured {} epochs", cfg.epochs),
        ));
    }
    let out = args.out.clone().or(run.output.plan.clone());
    let sink: Box<dyn Write> = match &out {
        Some(p) => Box::new(std::io::BufWriter::new(
            std::fs::File::create(p).map_err(|e| Error::io(p, e))?,
        )),
        None => Box::new(std::io::BufWriter::new(std::io::stdout().lock())),
    };
    let target = out.clone().unwrap_or_else(|| PathBuf::from("<stdout>"));
    let io_err = |e| Error::io(&target, e);
    let mut writer = io::PlanWriter::new(sink, cfg).map_err(io_err)?;
    let mut steps = 0usize;
    for epoch in epochs.clone() {
        let plan = plan_epoch(cfg, epoch)?;
        steps += plan.updates();
        writer.write_epoch(&plan).map_err(io_err)?;
    }
    writer.finish().map_err(io_err)?;
    if let Some(p) = out {
        println!(
            "wrote {} epochs ({steps} lockstep steps) to {}",
            epochs.len(),
            p.display()
        );
    }
    Ok(())
}

fn run_verify(args: &VerifyArgs) -> Result<()> {
    let (cfg, plans) = io::read_plan(&args.plan)?;
    let mut failures = Vec::new();
    let mut reports = Vec::with_capacity(plans.len());
    for plan in &plans {
        let report = verify_plan(plan, &cfg);
        let violations = report.violations(&cfg);
        println!(
            "epoch {}: steps {:?}, duplicates {}, padding {}, missing {}, max pixel budget {}: {}",
            report.epoch,
            report.per_rank_steps,
            report.duplicates,
            report.padding_duplicates,
            report.missing,
            report.max_pixel_budget,
            if violations.is_empty() { "ok".to_string() } else { violations.join("; ") }
        );
        failures.extend(violations.into_iter().map(|v| format!("epoch {}: {v}", report.epoch)));
        reports.push(report);
    }
    if let Some(out) = &args.out {
        io::write_records(
            out,
            &json!({"format": "msc-coverage-report", "format_version": FORMAT_VERSION}),
            &reports,
        )?;
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Error::Invariant(format!(
            "{} violations in {}: {}",
            failures.len(),
            args.plan.display(),
            failures[0]
        )))
    }
}

fn simulation_mode(mode: ModeArg, seeds: &[u64], run: &RunConfig) -> SimulationMode {
    match mode {
        ModeArg::Expected => SimulationMode::Expected,
        ModeArg::Montecarlo if seeds.is_empty() => SimulationMode::MonteCarlo {
            seeds: vec![run.sampler.seed],
        },
        ModeArg::Montecarlo => SimulationMode::MonteCarlo { seeds: seeds.to_vec() },
    }
}

fn run_simulate(args: &SimulateArgs) -> Result<()> {
    let run = resolve_config(&args.config.config, &args.config.overrides)?;
    let report = simulate(&run.sampler, &run.profile, &simulation_mode(args.mode, &args.seeds, &run))?;
    if let Some(out) = args.out.as_ref().or(run.output.report.as_ref()) {
        io::write_cost_report(out, &report)?;
        log::info!("wrote cost report to {}", out.display());
    }
    match &args.baseline {
        Some(base) => {
            let base_run = resolve_config(base, &args.baseline_overrides)?;
            let base_report = simulate(
                &base_run.sampler,
                &base_run.profile,
                &simulation_mode(args.mode, &args.seeds, &base_run),
            )?;
            print!("{}", format_relative_table(&[compare(&report, &base_report)?]));
        }
        None => print_cost_report(&report),
    }
    Ok(())
}

fn print_cost_report(r: &CostReport) {
    println!("sampler               {}", r.sampler.label());
    println!("training FLOPs        {:e}", r.total_flops);
    println!("optimization updates  {}", r.updates);
    println!("peak activation units {:e}", r.peak_activation_units);
    println!("config digest         {}", r.config_digest);
    println!("profile digest        {}", r.profile_digest);
}

fn run_compare(args: &CompareArgs) -> Result<()> {
    let baseline = io::read_cost_report(&args.baseline)?;
    let rows = args
        .candidates
        .iter()
        .map(|p| compare(&io::read_cost_report(p)?, &baseline))
        .collect::<Result<Vec<RelativeReport>>>()?;
    print!("{}", format_relative_table(&rows));
    if let Some(out) = &args.out {
        io::write_records(
            out,
            &json!({"format": COMPARE_FORMAT, "format_version": FORMAT_VERSION}),
            &rows,
        )?;
    }
    Ok(())
}

fn load_dump(path: &Path) -> Result<Vec<metrics::PredictionRecord>> {
    let dump = io::read_dump(path)?;
    if !dump.warnings.is_empty() {
        eprintln!(
            "warning: {} records in {} renormalized (first at line {})",
            dump.warnings.len(),
            path.display(),
            dump.warnings[0].line
        );
    }
    Ok(dump.records)
}

fn metric_header(metric: &str, extra: serde_json::Value) -> serde_json::Value {
    let mut h = json!({
        "format": METRIC_REPORT_FORMAT,
        "format_version": FORMAT_VERSION,
        "metric": metric,
    });
    if let (Some(obj), serde_json::Value::Object(more)) = (h.as_object_mut(), extra) {
        obj.extend(more);
    }
    h
}

fn run_metric(cmd: &MetricCommand) -> Result<()> {
    match cmd {
        MetricCommand::Ece { dump, bins, out } => {
            let report = metrics::ece(&load_dump(dump)?, *bins)?;
            println!("ece {:.6} ({} bins)", report.ece, report.num_bins);
            println!("{:>8} {:>8} {:>10} {:>10} {:>8}", "lower", "upper", "confidence", "accuracy", "count");
            for b in &report.per_bin {
                println!(
                    "{:>8.4} {:>8.4} {:>10.4} {:>10.4} {:>8}",
                    b.lower, b.upper, b.mean_confidence, b.accuracy, b.count
                );
            }
            if let Some(out) = out {
                let header = metric_header("ece", json!({"num_bins": report.num_bins, "ece": report.ece}));
                io::write_records(out, &header, &report.per_bin)?;
            }
        }
        MetricCommand::Entropy { dump, out } => {
            let stats = metrics::entropy_stats(&load_dump(dump)?)?;
            println!("records  {}", stats.entropies.len());
            println!("mean     {}", stats.mean);
            println!("std      {}", stats.std);
            match stats.skewness {
                Some(s) => println!("skewness {s}"),
                None => println!("skewness undefined (zero variance)"),
            }
            if let Some(out) = out {
                let header = metric_header(
                    "entropy",
                    json!({"mean": stats.mean, "std": stats.std, "skewness": stats.skewness}),
                );
                io::write_records(out, &header, &stats.entropies)?;
            }
        }
        MetricCommand::SkewnessCurve { dumps, out } => {
            let mut records = Vec::new();
            for d in dumps {
                records.extend(load_dump(d)?);
            }
            let curve = metrics::skewness_curve(&metrics::group_by_epoch(records)?)?;
            println!("epoch\trecords\tskewness");
            for p in &curve {
                match p.skewness {
                    Some(s) => println!("{}\t{}\t{s}", p.epoch, p.records),
                    None => println!("{}\t{}\t", p.epoch, p.records),
                }
            }
            if let Some(out) = out {
                io::write_records(out, &metric_header("skewness_curve", json!({})), &curve)?;
            }
        }
        MetricCommand::EmbeddingVariance { dump, grouping, out } => {
            let v = metrics::embedding_variance(&load_dump(dump)?, (*grouping).into())?;
            for (k, var) in &v.groups {
                println!("{k}\t{var}");
            }
            println!("mean\t{}", v.mean);
            if let Some(out) = out {
                let header = metric_header("embedding_variance", json!({"grouping": v.grouping, "mean": v.mean}));
                let rows: Vec<_> = v.groups.iter().map(|(k, var)| json!({"group": k, "variance": var})).collect();
                io::write_records(out, &header, &rows)?;
            }
        }
        MetricCommand::Accuracy { dump, out } => {
            let acc = metrics::accuracy_by_resolution(&load_dump(dump)?)?;
            println!("resolution\tcorrect\ttotal\taccuracy");
            for (res, a) in &acc {
                println!("{res}\t{}\t{}\t{}", a.correct, a.total, a.accuracy);
            }
            if let Some(out) = out {
                let rows: Vec<_> = acc
                    .iter()
                    .map(|(r, a)| json!({"h": r.height, "w": r.width, "correct": a.correct, "total": a.total, "accuracy": a.accuracy}))
                    .collect();
                io::write_records(out, &metric_header("accuracy", json!({})), &rows)?;
            }
        }
        MetricCommand::Delta { candidate, baseline } => {
            let c: BTreeMap<String, f64> = io::read_accuracy_map(candidate)?;
            let b: BTreeMap<String, f64> = io::read_accuracy_map(baseline)?;
            print!("{}", metrics::delta_table(&c, &b)?);
        }
    }
    Ok(())
}

fn run_schedules(args: &SchedulesArgs) -> Result<()> {
    let scheds = ScheduleKind::ALL
        .iter()
        .map(|&kind| {
            let mut s = CurriculumSchedule::new(kind, args.rho0, args.tau, args.epochs)?;
            if kind == ScheduleKind::Polynomial {
                s.poly_power = args.poly_power;
                s.validate()?;
            }
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut text = String::from("epoch");
    for s in &scheds {
        text.push('\t');
        text.push_str(s.kind.name());
    }
    text.push('\n');
    for e in 0..args.epochs {
        text.push_str(&e.to_string());
        for s in &scheds {
            text.push('\t');
            text.push_str(&s.value(e)?.to_string());
        }
        text.push('\n');
    }
    match &args.out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(stdout_err),
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Plan(a) => run_plan(a),
        Command::Verify(a) => run_verify(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Compare(a) => run_compare(a),
        Command::Metrics { metric } => run_metric(metric),
        Command::Schedules(a) => run_schedules(a),
    }
}

/// Parses arguments, runs the command and returns the process exit status.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MSC_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code().as_str());
            e.exit_status()
        }
    }
}
