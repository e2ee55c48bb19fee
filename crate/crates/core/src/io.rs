//! File contracts: run configs, plan files, cost reports and prediction dumps.
//!
//! All record files are line-delimited JSON with a versioned header line.
//! Writers are canonical: struct fields are emitted in declaration order and
//! floats use the shortest representation that round-trips.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::costmodel::{CostProfile, CostReport, EpochCost, FlopLaw, DEFAULT_DEPTH_FACTOR};
use crate::error::{Error, Location, Result};
use crate::metrics::PredictionRecord;
use crate::planner::{EpochPlan, IterationSpec, ResolutionSync, SamplerConfig, SamplerKind};
use crate::respool::{build_pool, ReferenceBatchShape, Resolution, ResolutionPool, DEFAULT_DIVISOR};
use crate::schedule::{self, CurriculumSchedule, ScheduleKind, Step};

pub const FORMAT_VERSION: u64 = 1;
pub const PLAN_FORMAT: &str = "msc-plan";
pub const COST_REPORT_FORMAT: &str = "msc-cost-report";
pub const DUMP_FORMAT: &str = "msc-predictions";
pub const PROFILE_FORMAT: &str = "msc-flop-table";

/// Probability vectors further than this from summing to 1 are renormalized
/// with a warning.
pub const PROB_SUM_TOLERANCE: f64 = 1e-4;

fn prefixed(err: Error, prefix: &str) -> Error {
    match err {
        Error::Config {
            location: Location::Field(p),
            message,
        } => Error::Config {
            location: Location::Field(format!("{prefix}.{p}")),
            message,
        },
        other => other,
    }
}

// ---------------------------------------------------------------------------
// Run config schema

/// A resolution given either as a single side (square) or as `[h, w]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ResolutionSpec {
    Side(u32),
    Pair([u32; 2]),
}

impl ResolutionSpec {
    fn resolution(self) -> Resolution {
        match self {
            ResolutionSpec::Side(s) => Resolution::square(s),
            ResolutionSpec::Pair([h, w]) => Resolution::new(h, w),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    pub batch: u32,
    #[serde(default = "default_channels")]
    pub channels: u32,
    pub height: u32,
    pub width: u32,
}

fn default_channels() -> u32 {
    3
}

/// Either `{min, max, divisor}` bounds or an explicit `resolutions` list.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<ResolutionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<ResolutionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolutions: Option<Vec<[u32; 2]>>,
    #[serde(default = "default_divisor")]
    pub divisor: u32,
}

fn default_divisor() -> u32 {
    DEFAULT_DIVISOR
}

impl PoolSpec {
    fn build(&self) -> Result<ResolutionPool> {
        match (&self.min, &self.max, &self.resolutions) {
            (Some(min), Some(max), None) => build_pool(min.resolution(), max.resolution(), self.divisor),
            (None, None, Some(list)) => ResolutionPool::from_resolutions(
                list.iter().map(|&[h, w]| Resolution::new(h, w)).collect(),
                self.divisor,
            ),
            _ => Err(Error::config(
                "pool",
                "give either `min` and `max` or an explicit `resolutions` list",
            )),
        }
    }

    fn explicit(pool: &ResolutionPool) -> Self {
        PoolSpec {
            min: None,
            max: None,
            resolutions: Some(
                pool.resolutions()
                    .iter()
                    .map(|r| [r.height, r.width])
                    .collect(),
            ),
            divisor: pool.divisor(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumSpec {
    #[serde(default = "default_schedule_kind")]
    pub kind: ScheduleKind,
    #[serde(default = "default_rho0")]
    pub rho0: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_epochs: Option<u32>,
    #[serde(default = "default_poly_power")]
    pub poly_power: f64,
    /// Multi-step table as `[epoch_fraction, rho]` pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<Vec<[f64; 2]>>,
}

fn default_schedule_kind() -> ScheduleKind {
    ScheduleKind::Cosine
}
fn default_rho0() -> f64 {
    schedule::DEFAULT_RHO0
}
fn default_tau() -> f64 {
    schedule::DEFAULT_TAU
}
fn default_poly_power() -> f64 {
    schedule::DEFAULT_POLY_POWER
}

impl Default for CurriculumSpec {
    fn default() -> Self {
        CurriculumSpec {
            kind: default_schedule_kind(),
            rho0: default_rho0(),
            tau: default_tau(),
            total_epochs: None,
            poly_power: default_poly_power(),
            steps: None,
        }
    }
}

impl CurriculumSpec {
    fn build(&self, epochs: u32) -> Result<CurriculumSchedule> {
        let steps = match (&self.steps, self.kind) {
            (Some(pairs), _) => pairs
                .iter()
                .map(|&[epoch_fraction, rho]| Step { epoch_fraction, rho })
                .collect(),
            (None, ScheduleKind::Multistep) => schedule::default_steps(self.rho0, self.tau),
            (None, _) => Vec::new(),
        };
        let sched = CurriculumSchedule {
            kind: self.kind,
            rho0: self.rho0,
            tau: self.tau,
            total_epochs: self.total_epochs.unwrap_or(epochs),
            poly_power: self.poly_power,
            steps,
        };
        sched.validate()?;
        Ok(sched)
    }

    fn explicit(s: &CurriculumSchedule) -> Self {
        CurriculumSpec {
            kind: s.kind,
            rho0: s.rho0,
            tau: s.tau,
            total_epochs: Some(s.total_epochs),
            poly_power: s.poly_power,
            steps: (s.kind == ScheduleKind::Multistep)
                .then(|| s.steps.iter().map(|st| [st.epoch_fraction, st.rho]).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    pub kind: SamplerKind,
    pub reference: ReferenceSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<PoolSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curriculum: Option<CurriculumSpec>,
    pub dataset_size: u64,
    #[serde(default = "default_world_size")]
    pub world_size: u32,
    pub epochs: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub resolution_sync: ResolutionSync,
    #[serde(default)]
    pub drop_last: bool,
}

fn default_world_size() -> u32 {
    1
}

impl SamplerSpec {
    /// Validated sampler configuration; error paths are relative to the
    /// sampler section.
    pub fn build(&self) -> Result<SamplerConfig> {
        let r = &self.reference;
        let reference = ReferenceBatchShape::new(r.batch, r.channels, r.height, r.width)?;
        let pool = match (&self.pool, self.kind) {
            (Some(p), _) => p.build()?,
            (None, SamplerKind::SscFbs) => ResolutionPool::singleton(reference.resolution(), DEFAULT_DIVISOR),
            (None, _) => return Err(Error::config("pool", "multi-scale samplers need a resolution pool")),
        };
        let curriculum = match (&self.curriculum, self.kind) {
            (Some(c), _) => Some(c.build(self.epochs)?),
            (None, SamplerKind::MscVbswc) => Some(CurriculumSpec::default().build(self.epochs)?),
            (None, _) => None,
        };
        let cfg = SamplerConfig {
            kind: self.kind,
            reference,
            pool,
            curriculum,
            dataset_size: self.dataset_size,
            world_size: self.world_size,
            epochs: self.epochs,
            seed: self.seed,
            resolution_sync: self.resolution_sync,
            drop_last: self.drop_last,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fully explicit form of `cfg` (pool as a list, curriculum spelled out).
    pub fn from_config(cfg: &SamplerConfig) -> Self {
        SamplerSpec {
            kind: cfg.kind,
            reference: ReferenceSpec {
                batch: cfg.reference.batch,
                channels: cfg.reference.channels,
                height: cfg.reference.height,
                width: cfg.reference.width,
            },
            pool: Some(PoolSpec::explicit(&cfg.pool)),
            curriculum: cfg.curriculum.as_ref().map(CurriculumSpec::explicit),
            dataset_size: cfg.dataset_size,
            world_size: cfg.world_size,
            epochs: cfg.epochs,
            seed: cfg.seed,
            resolution_sync: cfg.resolution_sync,
            drop_last: cfg.drop_last,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileKind {
    Analytic,
    Tabulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableEntry {
    pub h: u32,
    pub w: u32,
    pub flops: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    pub kind: ProfileKind,
    #[serde(default = "one")]
    pub per_pixel_flops: f64,
    #[serde(default)]
    pub fixed_flops: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<TableEntry>>,
    /// Standalone FLOP table file, resolved relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table_file: Option<PathBuf>,
    #[serde(default = "one")]
    pub act_per_pixel: f64,
    #[serde(default = "default_depth")]
    pub depth_factor: f64,
}

fn one() -> f64 {
    1.0
}
fn default_depth() -> f64 {
    DEFAULT_DEPTH_FACTOR
}

impl ProfileSpec {
    fn build(&self, base_dir: Option<&Path>) -> Result<CostProfile> {
        let flops = match self.kind {
            ProfileKind::Analytic => FlopLaw::Analytic {
                per_pixel: self.per_pixel_flops,
                fixed: self.fixed_flops,
            },
            ProfileKind::Tabulated => {
                let entries = match (&self.table, &self.table_file) {
                    (Some(t), None) => t.clone(),
                    (None, Some(f)) => {
                        let path = match base_dir {
                            Some(dir) if f.is_relative() => dir.join(f),
                            _ => f.clone(),
                        };
                        read_flop_table(&path)?
                    }
                    _ => {
                        return Err(Error::config(
                            "profile.table",
                            "tabulated profiles need exactly one of `table` or `table_file`",
                        ))
                    }
                };
                FlopLaw::Tabulated {
                    table: entries
                        .iter()
                        .map(|e| (Resolution::new(e.h, e.w), e.flops))
                        .collect(),
                }
            }
        };
        let profile = CostProfile {
            flops,
            act_per_pixel: self.act_per_pixel,
            depth_factor: self.depth_factor,
        };
        profile.validate()?;
        Ok(profile)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub format_version: u64,
    pub sampler: SamplerSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ProfileSpec>,
    #[serde(default)]
    pub output: OutputSpec,
}

/// Validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub sampler: SamplerConfig,
    pub profile: CostProfile,
    pub output: OutputSpec,
    pub format_version: u64,
}

/// Sets `path` (dotted) in a JSON tree to `raw`, parsed as JSON when
/// possible and as a string otherwise. Missing objects are created so that
/// unknown keys surface as schema errors.
pub fn apply_override(root: &mut Value, path: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::config(path, "malformed override path"));
    }
    let mut node = root;
    for (i, key) in keys.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| {
            Error::config(keys[..i].join("."), "cannot override inside a non-object value")
        })?;
        if i + 1 == keys.len() {
            obj.insert((*key).to_string(), value);
            return Ok(());
        }
        node = obj
            .entry((*key).to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

fn json_error(source: &Path, err: &serde_json::Error) -> Error {
    Error::Config {
        location: Location::Line {
            file: source.to_path_buf(),
            line: err.line(),
            column: Some(err.column()),
        },
        message: err.to_string(),
    }
}

/// Parses and validates a run config from text. `overrides` are dotted
/// `key=value` assignments applied before validation.
pub fn parse_config(text: &str, source: &Path, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut tree: Value = serde_json::from_str(text).map_err(|e| json_error(source, &e))?;
    for (k, v) in overrides {
        apply_override(&mut tree, k, v)?;
    }
    let file: RunConfigFile = serde_path_to_error::deserialize(tree).map_err(|e| Error::Config {
        location: Location::field(e.path().to_string()),
        message: e.inner().to_string(),
    })?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::Version {
            location: Location::File(source.to_path_buf()),
            found: file.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let sampler = file.sampler.build().map_err(|e| prefixed(e, "sampler"))?;
    let profile = match &file.profile {
        Some(p) => p.build(source.parent())?,
        None => CostProfile::default(),
    };
    Ok(RunConfig {
        sampler,
        profile,
        output: file.output,
        format_version: file.format_version,
    })
}

pub fn load_config(path: &Path, overrides: &[(String, String)]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, path, overrides)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlopTableFile {
    format: String,
    format_version: u64,
    table: Vec<TableEntry>,
}

pub fn read_flop_table(path: &Path) -> Result<Vec<TableEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: FlopTableFile = serde_json::from_str(&text).map_err(|e| json_error(path, &e))?;
    if file.format != PROFILE_FORMAT {
        return Err(Error::data(
            Location::File(path.to_path_buf()),
            format!("expected format `{PROFILE_FORMAT}`, found `{}`", file.format),
        ));
    }
    check_version(file.format_version, path)?;
    Ok(file.table)
}

fn check_version(found: u64, path: &Path) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::Version {
            location: Location::File(path.to_path_buf()),
            found,
            expected: FORMAT_VERSION,
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Line reading with truncation detection

/// Iterates non-empty lines, tracking line numbers and byte offsets. A final
/// line without a newline terminator is reported as truncation.
struct Lines<R> {
    reader: R,
    path: PathBuf,
    line_no: usize,
    offset: u64,
    last_good_line: usize,
    last_good_offset: u64,
}

impl<R: BufRead> Lines<R> {
    fn new(reader: R, path: &Path) -> Self {
        Lines {
            reader,
            path: path.to_path_buf(),
            line_no: 0,
            offset: 0,
            last_good_line: 0,
            last_good_offset: 0,
        }
    }

    fn truncated(&self) -> Error {
        Error::Truncated {
            file: self.path.clone(),
            last_good_line: self.last_good_line,
            last_good_offset: self.last_good_offset,
        }
    }

    /// Marks the current line as successfully decoded.
    fn commit(&mut self) {
        self.last_good_line = self.line_no;
        self.last_good_offset = self.offset;
    }

    fn next_line(&mut self) -> Option<Result<String>> {
        loop {
            let mut buf = String::new();
            let n = match self.reader.read_line(&mut buf) {
                Ok(n) => n,
                Err(e) => return Some(Err(Error::io(&self.path, e))),
            };
            if n == 0 {
                return None;
            }
            self.line_no += 1;
            self.offset += n as u64;
            if !buf.ends_with('\n') {
                return Some(Err(self.truncated()));
            }
            let line = buf.trim_end();
            if line.is_empty() {
                self.commit();
                continue;
            }
            return Some(Ok(line.to_string()));
        }
    }

    fn location(&self) -> Location {
        Location::line(&self.path, self.line_no)
    }

    fn data_error(&self, message: impl Into<String>) -> Error {
        Error::data(self.location(), message)
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Plan files

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanHeader {
    format: String,
    format_version: u64,
    sampler: SamplerSpec,
}

/// Streams epoch plans into a plan file. The header is written once.
pub struct PlanWriter<W: Write> {
    out: W,
}

impl<W: Write> PlanWriter<W> {
    pub fn new(mut out: W, cfg: &SamplerConfig) -> std::io::Result<Self> {
        let header = PlanHeader {
            format: PLAN_FORMAT.into(),
            format_version: FORMAT_VERSION,
            sampler: SamplerSpec::from_config(cfg),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        Ok(PlanWriter { out })
    }

    pub fn write_epoch(&mut self, plan: &EpochPlan) -> std::io::Result<()> {
        for spec in plan.iter() {
            serde_json::to_writer(&mut self.out, spec)?;
            self.out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn write_plan<'a, I>(path: &Path, cfg: &SamplerConfig, plans: I) -> Result<()>
where
    I: IntoIterator<Item = &'a EpochPlan>,
{
    let io = |e| Error::io(path, e);
    let mut w = PlanWriter::new(create(path)?, cfg).map_err(io)?;
    for p in plans {
        w.write_epoch(p).map_err(io)?;
    }
    w.finish().map_err(io)?;
    Ok(())
}

/// Serializes plans to bytes (same format as [`write_plan`]).
pub fn plan_to_bytes<'a, I>(cfg: &SamplerConfig, plans: I) -> Vec<u8>
where
    I: IntoIterator<Item = &'a EpochPlan>,
{
    let mut w = PlanWriter::new(Vec::new(), cfg).expect("in-memory write");
    for p in plans {
        w.write_epoch(p).expect("in-memory write");
    }
    w.finish().expect("in-memory write")
}

fn parse_record_line<T: for<'de> Deserialize<'de>, R: BufRead>(lines: &Lines<R>, line: &str) -> Result<T> {
    serde_json::from_str(line).map_err(|e| lines.data_error(e.to_string()))
}

/// Header sniffing: header lines carry a `format` key, records do not.
fn is_header(line: &str) -> bool {
    line.starts_with("{\"format\"")
}

/// Reads a plan file (or several concatenated plan files for the same
/// sampler) into its configuration and epoch plans in epoch order.
pub fn read_plan(path: &Path) -> Result<(SamplerConfig, Vec<EpochPlan>)> {
    read_plan_from(open(path)?, path)
}

pub fn read_plan_from<R: Read>(reader: R, path: &Path) -> Result<(SamplerConfig, Vec<EpochPlan>)> {
    let mut lines = Lines::new(BufReader::new(reader), path);
    let mut header: Option<PlanHeader> = None;
    let mut cfg: Option<SamplerConfig> = None;
    let mut epochs: BTreeMap<u32, Vec<Vec<IterationSpec>>> = BTreeMap::new();
    let mut last_key: Option<(u32, u32, u32)> = None;

    while let Some(line) = lines.next_line() {
        let line = line?;
        if is_header(&line) {
            let h: PlanHeader = parse_record_line(&lines, &line)?;
            if h.format != PLAN_FORMAT {
                return Err(lines.data_error(format!("expected format `{PLAN_FORMAT}`, found `{}`", h.format)));
            }
            if h.format_version != FORMAT_VERSION {
                return Err(Error::Version {
                    location: lines.location(),
                    found: h.format_version,
                    expected: FORMAT_VERSION,
                });
            }
            match &header {
                None => {
                    cfg = Some(h.sampler.build().map_err(|e| prefixed(e, "sampler"))?);
                    header = Some(h);
                }
                Some(first) if *first == h => {}
                Some(_) => return Err(lines.data_error("concatenated plan files describe different samplers")),
            }
            last_key = None;
            lines.commit();
            continue;
        }
        let Some(cfg) = cfg.as_ref() else {
            return Err(lines.data_error("plan record before header"));
        };
        let spec: IterationSpec = parse_record_line(&lines, &line)?;
        let key = (spec.epoch, spec.rank, spec.step);
        if spec.rank >= cfg.world_size || spec.epoch >= cfg.epochs {
            return Err(lines.data_error(format!(
                "record (epoch {}, rank {}) outside the configured run",
                spec.epoch, spec.rank
            )));
        }
        if let Some(prev) = last_key {
            if key <= prev {
                return Err(lines.data_error(format!(
                    "records out of order: {key:?} after {prev:?}"
                )));
            }
        }
        let per_rank = epochs
            .entry(spec.epoch)
            .or_insert_with(|| vec![Vec::new(); cfg.world_size as usize]);
        let steps = &mut per_rank[spec.rank as usize];
        if spec.step as usize != steps.len() {
            return Err(lines.data_error(format!(
                "expected step {} for (epoch {}, rank {}), found {}",
                steps.len(),
                spec.epoch,
                spec.rank,
                spec.step
            )));
        }
        steps.push(spec);
        last_key = Some(key);
        lines.commit();
    }
    let cfg = cfg.ok_or_else(|| Error::data(Location::File(path.to_path_buf()), "empty plan file"))?;
    let plans = epochs
        .into_iter()
        .map(|(epoch, per_rank)| {
            Ok(EpochPlan {
                epoch,
                per_rank,
                active_pool: cfg.active_pool(epoch)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((cfg, plans))
}

// ---------------------------------------------------------------------------
// Cost reports

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostReportHeader {
    format: String,
    format_version: u64,
    sampler: SamplerKind,
    total_flops: f64,
    updates: f64,
    peak_activation_units: f64,
    config_digest: String,
    profile_digest: String,
}

pub fn cost_report_to_bytes(report: &CostReport) -> Vec<u8> {
    let mut out = Vec::new();
    let header = CostReportHeader {
        format: COST_REPORT_FORMAT.into(),
        format_version: FORMAT_VERSION,
        sampler: report.sampler,
        total_flops: report.total_flops,
        updates: report.updates,
        peak_activation_units: report.peak_activation_units,
        config_digest: report.config_digest.clone(),
        profile_digest: report.profile_digest.clone(),
    };
    serde_json::to_writer(&mut out, &header).expect("in-memory write");
    out.push(b'\n');
    for e in &report.per_epoch {
        serde_json::to_writer(&mut out, e).expect("in-memory write");
        out.push(b'\n');
    }
    out
}

pub fn write_cost_report(path: &Path, report: &CostReport) -> Result<()> {
    std::fs::write(path, cost_report_to_bytes(report)).map_err(|e| Error::io(path, e))
}

pub fn read_cost_report(path: &Path) -> Result<CostReport> {
    let mut lines = Lines::new(open(path)?, path);
    let first = lines
        .next_line()
        .ok_or_else(|| Error::data(Location::File(path.to_path_buf()), "empty cost report"))??;
    let header: CostReportHeader = parse_record_line(&lines, &first)?;
    if header.format != COST_REPORT_FORMAT {
        return Err(lines.data_error(format!(
            "expected format `{COST_REPORT_FORMAT}`, found `{}`",
            header.format
        )));
    }
    check_version(header.format_version, path)?;
    lines.commit();
    let mut per_epoch = Vec::new();
    while let Some(line) = lines.next_line() {
        let e: EpochCost = parse_record_line(&lines, &line?)?;
        per_epoch.push(e);
        lines.commit();
    }
    Ok(CostReport {
        sampler: header.sampler,
        total_flops: header.total_flops,
        updates: header.updates,
        peak_activation_units: header.peak_activation_units,
        per_epoch,
        config_digest: header.config_digest,
        profile_digest: header.profile_digest,
    })
}

// ---------------------------------------------------------------------------
// Prediction dumps

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DumpHeader {
    pub format: String,
    pub format_version: u64,
    pub num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embed_dim: Option<usize>,
}

impl DumpHeader {
    pub fn new(num_classes: usize, embed_dim: Option<usize>) -> Self {
        DumpHeader {
            format: DUMP_FORMAT.into(),
            format_version: FORMAT_VERSION,
            num_classes,
            embed_dim,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DumpLine {
    image_id: String,
    label: u32,
    probs: Vec<f64>,
    h: u32,
    w: u32,
    #[serde(default)]
    embedding: Option<Vec<f64>>,
    #[serde(default)]
    epoch: Option<u32>,
}

fn push_floats(out: &mut String, values: &[f64]) {
    out.push('[');
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&format!("{v:e}"));
    }
    out.push(']');
}

/// One dump record line (without the newline). Floats are written in
/// shortest round-trip scientific notation.
pub fn dump_record_line(r: &PredictionRecord) -> String {
    let mut s = String::with_capacity(32 + 12 * r.probs.len());
    s.push_str("{\"image_id\":");
    s.push_str(&serde_json::to_string(&r.image_id).expect("string serializes"));
    s.push_str(&format!(",\"label\":{},\"probs\":", r.label));
    push_floats(&mut s, &r.probs);
    s.push_str(&format!(",\"h\":{},\"w\":{}", r.eval_height, r.eval_width));
    if let Some(e) = &r.embedding {
        s.push_str(",\"embedding\":");
        push_floats(&mut s, e);
    }
    if let Some(epoch) = r.epoch {
        s.push_str(&format!(",\"epoch\":{epoch}"));
    }
    s.push('}');
    s
}

pub fn write_dump_to<W: Write>(mut out: W, header: &DumpHeader, records: &[PredictionRecord]) -> std::io::Result<()> {
    serde_json::to_writer(&mut out, header)?;
    out.write_all(b"\n")?;
    for r in records {
        out.write_all(dump_record_line(r).as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn write_dump(path: &Path, header: &DumpHeader, records: &[PredictionRecord]) -> Result<()> {
    write_dump_to(create(path)?, header, records).map_err(|e| Error::io(path, e))
}

/// A probability vector that was renormalized on load.
#[derive(Debug, Clone, PartialEq)]
pub struct RenormWarning {
    pub line: usize,
    pub image_id: String,
    pub sum: f64,
}

/// Streaming reader over a prediction dump.
pub struct DumpReader<R> {
    lines: Lines<R>,
    header: DumpHeader,
    warnings: Vec<RenormWarning>,
}

impl DumpReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        DumpReader::new(open(path)?, path)
    }
}

impl<R: BufRead> DumpReader<R> {
    pub fn new(reader: R, path: &Path) -> Result<Self> {
        let mut lines = Lines::new(reader, path);
        let first = lines
            .next_line()
            .ok_or_else(|| Error::data(Location::File(path.to_path_buf()), "empty prediction dump"))??;
        let header: DumpHeader = parse_record_line(&lines, &first)?;
        if header.format != DUMP_FORMAT {
            return Err(lines.data_error(format!(
                "expected format `{DUMP_FORMAT}`, found `{}`",
                header.format
            )));
        }
        check_version(header.format_version, path)?;
        if header.num_classes < 2 {
            return Err(lines.data_error("num_classes must be at least 2"));
        }
        lines.commit();
        Ok(DumpReader {
            lines,
            header,
            warnings: Vec::new(),
        })
    }

    pub fn header(&self) -> &DumpHeader {
        &self.header
    }

    pub fn warnings(&self) -> &[RenormWarning] {
        &self.warnings
    }

    fn decode(&mut self, line: &str) -> Result<PredictionRecord> {
        let raw: DumpLine = parse_record_line(&self.lines, line)?;
        let k = self.header.num_classes;
        if raw.probs.len() != k {
            return Err(self.lines.data_error(format!(
                "record has {} probabilities but the header declares K = {k}",
                raw.probs.len()
            )));
        }
        if raw.label as usize >= k {
            return Err(self.lines.data_error(format!("label {} outside [0, {k})", raw.label)));
        }
        if let Some((i, p)) = raw.probs.iter().enumerate().find(|(_, p)| !(**p >= 0.0 && p.is_finite())) {
            return Err(self.lines.data_error(format!("probs[{i}] = {p} is not a valid probability")));
        }
        match (&raw.embedding, self.header.embed_dim) {
            (Some(e), Some(d)) if e.len() != d => {
                return Err(self.lines.data_error(format!(
                    "embedding has {} dimensions but the header declares {d}",
                    e.len()
                )))
            }
            (Some(_), None) => {
                return Err(self.lines.data_error("embedding present but the header declares no embed_dim"))
            }
            _ => {}
        }
        let mut probs = raw.probs;
        let sum = crate::metrics::exact_sum(probs.iter().copied());
        if sum <= 0.0 {
            return Err(self.lines.data_error("probabilities sum to zero"));
        }
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            log::warn!(
                "{}: probabilities of `{}` sum to {sum}; renormalizing",
                self.lines.location(),
                raw.image_id
            );
            self.warnings.push(RenormWarning {
                line: self.lines.line_no,
                image_id: raw.image_id.clone(),
                sum,
            });
            for p in &mut probs {
                *p /= sum;
            }
        }
        Ok(PredictionRecord {
            image_id: raw.image_id,
            label: raw.label,
            probs,
            eval_height: raw.h,
            eval_width: raw.w,
            embedding: raw.embedding,
            epoch: raw.epoch,
        })
    }
}

impl<R: BufRead> Iterator for DumpReader<R> {
    type Item = Result<PredictionRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        let line = match self.lines.next_line()? {
            Ok(l) => l,
            Err(e) => return Some(Err(e)),
        };
        let rec = self.decode(&line);
        if rec.is_ok() {
            self.lines.commit();
        }
        Some(rec)
    }
}

/// Loaded dump with any renormalization warnings.
#[derive(Debug, Clone)]
pub struct Dump {
    pub header: DumpHeader,
    pub records: Vec<PredictionRecord>,
    pub warnings: Vec<RenormWarning>,
}

pub fn read_dump(path: &Path) -> Result<Dump> {
    read_dump_from(open(path)?, path)
}

pub fn read_dump_from<R: BufRead>(reader: R, path: &Path) -> Result<Dump> {
    let mut r = DumpReader::new(reader, path)?;
    let mut records = Vec::new();
    for rec in r.by_ref() {
        records.push(rec?);
    }
    Ok(Dump {
        header: r.header.clone(),
        records,
        warnings: r.warnings,
    })
}

// ---------------------------------------------------------------------------
// Generic metric reports

/// Writes `header` then one JSON line per row.
pub fn write_records<H: Serialize, T: Serialize>(path: &Path, header: &H, rows: &[T]) -> Result<()> {
    let io = |e: std::io::Error| Error::io(path, e);
    let mut out = create(path)?;
    serde_json::to_writer(&mut out, header).map_err(|e| io(e.into()))?;
    out.write_all(b"\n").map_err(io)?;
    for row in rows {
        serde_json::to_writer(&mut out, row).map_err(|e| io(e.into()))?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Reads a `{"name": accuracy, ...}` JSON object.
pub fn read_accuracy_map(path: &Path) -> Result<BTreeMap<String, f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(Location::line(path, e.line()), e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::ErrorCode;
    use crate::planner::plan_epoch;

    fn src() -> PathBuf {
        PathBuf::from("test.json")
    }

    const MINIMAL: &str = r#"{
        "format_version": 1,
        "sampler": {
            "kind": "ssc_fbs",
            "reference": {"batch": 256, "height": 224, "width": 224},
            "dataset_size": 1024,
            "epochs": 2
        }
    }"#;

    const RESNET_VBS: &str = r#"{
        "format_version": 1,
        "sampler": {
            "kind": "msc_vbs",
            "reference": {"batch": 256, "channels": 3, "height": 224, "width": 224},
            "pool": {"min": 128, "max": 320},
            "dataset_size": 1281167,
            "world_size": 4,
            "epochs": 600
        }
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(MINIMAL, &src(), &[]).unwrap();
        let s = &c.sampler;
        assert_eq!(s.reference.channels, 3);
        assert_eq!(s.world_size, 1);
        assert!(!s.drop_last);
        assert_eq!(s.resolution_sync, ResolutionSync::Synchronized);
        assert_eq!(s.pool.divisor(), 32);
        assert_eq!(c.profile, CostProfile::default());
    }

    #[test]
    fn resnet_config_matches_reference_row() {
        let c = parse_config(RESNET_VBS, &src(), &[]).unwrap();
        assert_eq!(c.sampler.reference, ReferenceBatchShape::new(256, 3, 224, 224).unwrap());
        assert_eq!(c.sampler.pool.min(), Resolution::square(128));
        assert_eq!(c.sampler.pool.max(), Resolution::square(320));
        assert_eq!(c.sampler.pool.len(), 7);
    }

    #[test]
    fn curriculum_defaults_and_validation() {
        let text = RESNET_VBS.replace("msc_vbs", "msc_vbswc");
        let c = parse_config(&text, &src(), &[]).unwrap();
        let sched = c.sampler.curriculum.unwrap();
        assert_eq!((sched.kind, sched.rho0, sched.tau, sched.total_epochs), (ScheduleKind::Cosine, 0.75, 0.5, 600));

        let bad = [("sampler.curriculum.rho0".to_string(), "1.5".to_string())];
        let err = parse_config(&text, &src(), &bad).unwrap_err();
        assert_eq!(err.code(), ErrorCode::Config);
        assert!(err.to_string().contains("curriculum.rho0"), "{err}");
    }

    #[test]
    fn unknown_fields_are_rejected_with_path() {
        let bad = [("sampler.pool.dividend".to_string(), "8".to_string())];
        let err = parse_config(RESNET_VBS, &src(), &bad).unwrap_err();
        assert!(err.to_string().contains("sampler.pool"), "{err}");
        assert!(err.to_string().contains("dividend"), "{err}");
    }

    #[test]
    fn parse_errors_carry_line_and_column() {
        let err = parse_config("{\n  \"format_version\": 1,\n  oops\n}", &src(), &[]).unwrap_err();
        assert!(err.to_string().contains("test.json:3:"), "{err}");
    }

    #[test]
    fn overrides_set_nested_values() {
        let c = parse_config(
            RESNET_VBS,
            &src(),
            &[
                ("sampler.seed".into(), "17".into()),
                ("sampler.resolution_sync".into(), "independent".into()),
            ],
        )
        .unwrap();
        assert_eq!(c.sampler.seed, 17);
        assert_eq!(c.sampler.resolution_sync, ResolutionSync::Independent);
    }

    #[test]
    fn wrong_config_version() {
        let text = MINIMAL.replace("\"format_version\": 1", "\"format_version\": 2");
        assert_eq!(parse_config(&text, &src(), &[]).unwrap_err().code(), ErrorCode::Version);
    }

    #[test]
    fn plan_round_trip_in_memory() {
        let c = parse_config(MINIMAL, &src(), &[]).unwrap().sampler;
        let plans: Vec<_> = (0..2).map(|e| plan_epoch(&c, e).unwrap()).collect();
        let bytes = plan_to_bytes(&c, &plans);
        let (cfg, back) = read_plan_from(&bytes[..], Path::new("mem")).unwrap();
        assert_eq!(cfg, c);
        assert_eq!(back, plans);
    }

    #[test]
    fn plan_version_and_truncation() {
        let c = parse_config(MINIMAL, &src(), &[]).unwrap().sampler;
        let plans = vec![plan_epoch(&c, 0).unwrap()];
        let bytes = plan_to_bytes(&c, &plans);
        let text = String::from_utf8(bytes.clone()).unwrap();
        let bumped = text.replacen("\"format_version\":1", "\"format_version\":2", 1);
        let err = read_plan_from(bumped.as_bytes(), Path::new("mem")).unwrap_err();
        assert_eq!(err.code(), ErrorCode::Version);

        let cut = &bytes[..bytes.len() - 40];
        match read_plan_from(cut, Path::new("mem")).unwrap_err() {
            Error::Truncated { last_good_line, .. } => assert_eq!(last_good_line, 4),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn dump_renormalization_and_k_mismatch() {
        let header = "{\"format\":\"msc-predictions\",\"format_version\":1,\"num_classes\":2}\n";
        let ok = format!("{header}{{\"image_id\":\"a\",\"label\":0,\"probs\":[0.99995,0.00004],\"h\":224,\"w\":224}}\n");
        let d = read_dump_from(ok.as_bytes(), Path::new("mem")).unwrap();
        assert!(d.warnings.is_empty());
        assert_eq!(d.records[0].probs, vec![0.99995, 0.00004]);

        let off = format!("{header}{{\"image_id\":\"a\",\"label\":0,\"probs\":[0.5992,0.4],\"h\":224,\"w\":224}}\n");
        let d = read_dump_from(off.as_bytes(), Path::new("mem")).unwrap();
        assert_eq!(d.warnings.len(), 1);
        assert!((d.records[0].probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let bad = format!("{header}{{\"image_id\":\"a\",\"label\":0,\"probs\":[0.2,0.2,0.2,0.2,0.2],\"h\":224,\"w\":224}}\n");
        let err = read_dump_from(bad.as_bytes(), Path::new("mem")).unwrap_err();
        assert_eq!(err.code(), ErrorCode::Data);
        assert!(err.to_string().contains("mem:2"), "{err}");
    }

    #[test]
    fn dump_line_format_is_scientific() {
        let r = PredictionRecord {
            image_id: "x\"y".into(),
            label: 1,
            probs: vec![0.25, 0.75],
            eval_height: 160,
            eval_width: 192,
            embedding: Some(vec![-1.5, 1e-300]),
            epoch: Some(4),
        };
        assert_eq!(
            dump_record_line(&r),
            r#"{"image_id":"x\"y","label":1,"probs":[2.5e-1,7.5e-1],"h":160,"w":192,"embedding":[-1.5e0,1e-300],"epoch":4}"#
        );
    }
}
