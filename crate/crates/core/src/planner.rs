//! Deterministic, sharded, per-iteration training plans for the four samplers.
//!
//! Every epoch is planned independently from `(seed, epoch)`:
//!
//! 1. The active pool is the configured pool, the reference resolution
//!    (single-scale), or the curriculum-compressed pool.
//! 2. A permutation of `0..N` is drawn and strided across ranks, so rank `r`
//!    owns the permutation positions `p` with `p % world_size == r`.
//! 3. Resolutions are drawn uniformly from the active pool, either once for
//!    all ranks (synchronized) or per rank (independent).
//! 4. Each rank consumes its shard left to right.
//!
//! The shape sequence (steps 1 and 3) never looks at the permutation, so the
//! cost simulator can use [`schedule_epoch`] without materialising indices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::respool::{batch_size_for, compress_pool, ReferenceBatchShape, Resolution, ResolutionPool};
use crate::rng::{self, Stream};
use crate::schedule::CurriculumSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SamplerKind {
    #[serde(rename = "ssc_fbs")]
    SscFbs,
    #[serde(rename = "msc_fbs")]
    MscFbs,
    #[serde(rename = "msc_vbs")]
    MscVbs,
    #[serde(rename = "msc_vbswc")]
    MscVbswc,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 4] = [
        SamplerKind::SscFbs,
        SamplerKind::MscFbs,
        SamplerKind::MscVbs,
        SamplerKind::MscVbswc,
    ];

    /// Batch size follows the resolution.
    pub fn is_variable_batch(self) -> bool {
        matches!(self, SamplerKind::MscVbs | SamplerKind::MscVbswc)
    }

    pub fn label(self) -> &'static str {
        match self {
            SamplerKind::SscFbs => "SSc-FBS",
            SamplerKind::MscFbs => "MSc-FBS",
            SamplerKind::MscVbs => "MSc-VBS",
            SamplerKind::MscVbswc => "MSc-VBSWC",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResolutionSync {
    #[default]
    Synchronized,
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub reference: ReferenceBatchShape,
    pub pool: ResolutionPool,
    pub curriculum: Option<CurriculumSchedule>,
    pub dataset_size: u64,
    pub world_size: u32,
    pub epochs: u32,
    pub seed: u64,
    pub resolution_sync: ResolutionSync,
    pub drop_last: bool,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        self.reference.validate()?;
        if self.world_size == 0 {
            return Err(Error::config("world_size", "must be at least 1"));
        }
        if self.dataset_size < u64::from(self.world_size) {
            return Err(Error::config(
                "dataset_size",
                format!(
                    "dataset size {} is smaller than world size {}",
                    self.dataset_size, self.world_size
                ),
            ));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.kind == SamplerKind::MscVbswc {
            let sched = self
                .curriculum
                .as_ref()
                .ok_or_else(|| Error::config("curriculum", "MScVBSWC requires a curriculum"))?;
            sched.validate()?;
            if sched.total_epochs != self.epochs {
                return Err(Error::config(
                    "curriculum.total_epochs",
                    format!(
                        "curriculum spans {} epochs but the run has {}",
                        sched.total_epochs, self.epochs
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Pool sampled from in `epoch`.
    pub fn active_pool(&self, epoch: u32) -> Result<ResolutionPool> {
        match self.kind {
            SamplerKind::SscFbs => Ok(ResolutionPool::singleton(
                self.reference.resolution(),
                self.pool.divisor(),
            )),
            SamplerKind::MscFbs | SamplerKind::MscVbs => Ok(self.pool.clone()),
            SamplerKind::MscVbswc => {
                let sched = self
                    .curriculum
                    .as_ref()
                    .ok_or_else(|| Error::config("curriculum", "MScVBSWC requires a curriculum"))?;
                compress_pool(&self.pool, sched.value(epoch)?)
            }
        }
    }

    /// `B_t` this sampler uses at `res`.
    pub fn batch_for(&self, res: Resolution) -> u32 {
        if self.kind.is_variable_batch() {
            batch_size_for(&self.reference, res)
        } else {
            self.reference.batch
        }
    }

    /// Shard length of every rank: `N / world` plus one for the first `N % world` ranks.
    pub fn shard_lens(&self) -> Vec<u64> {
        let w = u64::from(self.world_size);
        (0..w)
            .map(|r| self.dataset_size / w + u64::from(r < self.dataset_size % w))
            .collect()
    }

    fn check_epoch(&self, epoch: u32) -> Result<()> {
        if epoch >= self.epochs {
            return Err(Error::config(
                "epoch",
                format!("epoch {epoch} out of range for {} epochs", self.epochs),
            ));
        }
        Ok(())
    }
}

/// Shape of one step of one rank, without indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduledStep {
    pub resolution: Resolution,
    /// Planned batch size `B_t`.
    pub batch: u32,
    /// Fresh indices taken from the rank's shard (`<= batch` on a trailing partial step).
    pub count: u32,
    /// Indices re-read from the start of the rank's shard (independent-mode padding).
    pub padding: u32,
}

impl ScheduledStep {
    /// Samples processed by this step.
    pub fn carried(&self) -> u32 {
        self.count + self.padding
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSchedule {
    pub epoch: u32,
    pub active_pool: ResolutionPool,
    pub shard_lens: Vec<u64>,
    pub per_rank: Vec<Vec<ScheduledStep>>,
}

impl EpochSchedule {
    /// Lockstep update count: the largest per-rank step count.
    pub fn updates(&self) -> usize {
        self.per_rank.iter().map(Vec::len).max().unwrap_or(0)
    }
}

fn draw<R: rand::Rng>(cfg: &SamplerConfig, pool: &ResolutionPool, rng: &mut R) -> (Resolution, u32) {
    let res = pool.resolutions()[rng::below(rng, pool.len() as u64) as usize];
    (res, cfg.batch_for(res))
}

/// Shape sequence for every rank of `epoch`.
pub fn schedule_epoch(cfg: &SamplerConfig, epoch: u32) -> Result<EpochSchedule> {
    cfg.check_epoch(epoch)?;
    let active_pool = cfg.active_pool(epoch)?;
    let shard_lens = cfg.shard_lens();
    let per_rank = match cfg.resolution_sync {
        ResolutionSync::Synchronized => synchronized_steps(cfg, epoch, &active_pool, &shard_lens),
        ResolutionSync::Independent => independent_steps(cfg, epoch, &active_pool, &shard_lens),
    };
    Ok(EpochSchedule {
        epoch,
        active_pool,
        shard_lens,
        per_rank,
    })
}

fn synchronized_steps(
    cfg: &SamplerConfig,
    epoch: u32,
    pool: &ResolutionPool,
    shard_lens: &[u64],
) -> Vec<Vec<ScheduledStep>> {
    let mut rng = rng::generator(cfg.seed, epoch, Stream::Shapes);
    let longest = shard_lens.iter().copied().max().unwrap_or(0);
    let shortest = shard_lens.iter().copied().min().unwrap_or(0);
    let mut shapes: Vec<(Resolution, u32)> = Vec::new();
    let mut consumed = 0u64;
    if cfg.drop_last {
        // Only steps in which every rank has a full batch survive.
        loop {
            let (res, b) = draw(cfg, pool, &mut rng);
            if consumed + u64::from(b) > shortest {
                break;
            }
            consumed += u64::from(b);
            shapes.push((res, b));
        }
    } else {
        while consumed < longest {
            let (res, b) = draw(cfg, pool, &mut rng);
            consumed += u64::from(b);
            shapes.push((res, b));
        }
    }
    shard_lens
        .iter()
        .map(|&len| {
            let mut offset = 0u64;
            shapes
                .iter()
                .map(|&(resolution, batch)| {
                    let count = u64::from(batch).min(len.saturating_sub(offset));
                    offset += count;
                    ScheduledStep {
                        resolution,
                        batch,
                        count: count as u32,
                        padding: 0,
                    }
                })
                .collect()
        })
        .collect()
}

fn independent_steps(
    cfg: &SamplerConfig,
    epoch: u32,
    pool: &ResolutionPool,
    shard_lens: &[u64],
) -> Vec<Vec<ScheduledStep>> {
    let mut rngs: Vec<_> = (0..cfg.world_size)
        .map(|r| rng::generator(cfg.seed, epoch, Stream::Rank(r)))
        .collect();
    let mut per_rank: Vec<Vec<ScheduledStep>> = shard_lens
        .iter()
        .zip(rngs.iter_mut())
        .map(|(&len, rng)| {
            let mut steps = Vec::new();
            let mut consumed = 0u64;
            loop {
                if !cfg.drop_last && consumed >= len {
                    break;
                }
                let (resolution, batch) = draw(cfg, pool, rng);
                let remaining = len - consumed;
                if cfg.drop_last && u64::from(batch) > remaining {
                    break;
                }
                let count = u64::from(batch).min(remaining);
                consumed += count;
                steps.push(ScheduledStep {
                    resolution,
                    batch,
                    count: count as u32,
                    padding: 0,
                });
            }
            steps
        })
        .collect();
    let target = per_rank.iter().map(Vec::len).max().unwrap_or(0);
    for (steps, rng) in per_rank.iter_mut().zip(rngs.iter_mut()) {
        if steps.len() < target {
            if let Some(last) = steps.last_mut() {
                last.padding = last.batch - last.count;
            }
        }
        while steps.len() < target {
            let (resolution, batch) = draw(cfg, pool, rng);
            steps.push(ScheduledStep {
                resolution,
                batch,
                count: 0,
                padding: batch,
            });
        }
    }
    per_rank
}

/// One training step for one rank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationSpec {
    pub epoch: u32,
    pub step: u32,
    pub rank: u32,
    #[serde(rename = "h")]
    pub height: u32,
    #[serde(rename = "w")]
    pub width: u32,
    #[serde(rename = "batch")]
    pub batch_size: u32,
    pub indices: Vec<u64>,
}

impl IterationSpec {
    pub fn resolution(&self) -> Resolution {
        Resolution::new(self.height, self.width)
    }

    pub fn pixels(&self) -> u64 {
        u64::from(self.batch_size) * self.resolution().area()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochPlan {
    pub epoch: u32,
    pub per_rank: Vec<Vec<IterationSpec>>,
    pub active_pool: ResolutionPool,
}

impl EpochPlan {
    pub fn world_size(&self) -> usize {
        self.per_rank.len()
    }

    /// Lockstep update count: the largest per-rank step count.
    pub fn updates(&self) -> usize {
        self.per_rank.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Records in file order: by rank, then step.
    pub fn iter(&self) -> impl Iterator<Item = &IterationSpec> {
        self.per_rank.iter().flatten()
    }
}

/// Full plan for `epoch`, with indices.
pub fn plan_epoch(cfg: &SamplerConfig, epoch: u32) -> Result<EpochPlan> {
    cfg.validate()?;
    let schedule = schedule_epoch(cfg, epoch)?;
    let perm = rng::permutation(
        &mut rng::generator(cfg.seed, epoch, Stream::Permutation),
        cfg.dataset_size,
    );
    let world = cfg.world_size as usize;
    let per_rank = schedule
        .per_rank
        .iter()
        .enumerate()
        .map(|(rank, steps)| {
            let shard: Vec<u64> = perm.iter().skip(rank).step_by(world).copied().collect();
            let mut cursor = 0usize;
            let mut wrap_cursor = 0usize;
            steps
                .iter()
                .enumerate()
                .map(|(step, s)| {
                    let mut indices = shard[cursor..cursor + s.count as usize].to_vec();
                    cursor += s.count as usize;
                    indices.extend((0..s.padding as usize).map(|_| {
                        let i = shard[wrap_cursor % shard.len()];
                        wrap_cursor += 1;
                        i
                    }));
                    IterationSpec {
                        epoch,
                        step: step as u32,
                        rank: rank as u32,
                        height: s.resolution.height,
                        width: s.resolution.width,
                        batch_size: s.batch,
                        indices,
                    }
                })
                .collect()
        })
        .collect();
    Ok(EpochPlan {
        epoch,
        per_rank,
        active_pool: schedule.active_pool,
    })
}

/// Lazily yields `plan_epoch(cfg, e)` for `e` in `0..epochs`.
pub fn plan_run(cfg: &SamplerConfig) -> PlanRun<'_> {
    PlanRun { cfg, next: 0 }
}

pub struct PlanRun<'a> {
    cfg: &'a SamplerConfig,
    next: u32,
}

impl Iterator for PlanRun<'_> {
    type Item = Result<EpochPlan>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.cfg.epochs {
            return None;
        }
        let epoch = self.next;
        self.next += 1;
        Some(plan_epoch(self.cfg, epoch))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.cfg.epochs - self.next) as usize;
        (n, Some(n))
    }
}

/// Outcome of checking one epoch plan against its configuration.
/// Discrepancies are recorded here rather than returned as errors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CoverageReport {
    pub epoch: u32,
    /// Repeated indices that are not independent-mode wrap padding.
    pub duplicates: u64,
    /// Repeats caused by independent-mode wrap padding.
    pub padding_duplicates: u64,
    pub missing: u64,
    pub out_of_range: u64,
    pub per_rank_steps: Vec<usize>,
    pub steps_equal: bool,
    /// Largest `B_t * H_t * W_t` over all steps.
    pub max_pixel_budget: u64,
    /// Full variable-batch steps whose pixel budget exceeds `B * H * W`.
    pub budget_violations: u64,
    /// Steps whose resolution or batch size disagrees with the sampler rule.
    pub shape_violations: u64,
}

impl CoverageReport {
    /// Human-readable list of contract violations (empty when the plan is clean).
    pub fn violations(&self, cfg: &SamplerConfig) -> Vec<String> {
        let mut out = Vec::new();
        if self.duplicates > 0 {
            out.push(format!("{} duplicate indices", self.duplicates));
        }
        if self.out_of_range > 0 {
            out.push(format!("{} indices out of range", self.out_of_range));
        }
        if !cfg.drop_last && self.missing > 0 {
            out.push(format!("{} indices missing", self.missing));
        }
        if cfg.drop_last {
            let max_batch = self
                .max_batch_bound(cfg)
                .saturating_mul(u64::from(cfg.world_size));
            if self.missing >= max_batch {
                out.push(format!(
                    "{} indices dropped, expected fewer than {max_batch}",
                    self.missing
                ));
            }
        }
        if cfg.resolution_sync == ResolutionSync::Synchronized && !self.steps_equal {
            out.push(format!("unequal per-rank step counts {:?}", self.per_rank_steps));
        }
        if self.budget_violations > 0 {
            out.push(format!("{} steps exceed the reference pixel budget", self.budget_violations));
        }
        if self.shape_violations > 0 {
            out.push(format!("{} steps violate the sampler shape rule", self.shape_violations));
        }
        out
    }

    fn max_batch_bound(&self, cfg: &SamplerConfig) -> u64 {
        cfg.active_pool(self.epoch)
            .map(|p| {
                p.resolutions()
                    .iter()
                    .map(|&r| u64::from(cfg.batch_for(r)))
                    .max()
                    .unwrap_or(0)
            })
            .unwrap_or(u64::MAX)
    }

    pub fn is_clean(&self, cfg: &SamplerConfig) -> bool {
        self.violations(cfg).is_empty()
    }
}

pub fn verify_plan(plan: &EpochPlan, cfg: &SamplerConfig) -> CoverageReport {
    let n = cfg.dataset_size as usize;
    let independent = cfg.resolution_sync == ResolutionSync::Independent;
    const UNSEEN: u32 = u32::MAX;
    let mut first_rank = vec![UNSEEN; n];
    let mut duplicates = 0u64;
    let mut padding_duplicates = 0u64;
    let mut out_of_range = 0u64;
    let mut max_pixel_budget = 0u64;
    let mut budget_violations = 0u64;
    let mut shape_violations = 0u64;
    let budget = cfg.reference.pixel_budget();
    let active = cfg.active_pool(plan.epoch).ok();

    for steps in &plan.per_rank {
        for (i, spec) in steps.iter().enumerate() {
            for &idx in &spec.indices {
                let Some(slot) = first_rank.get_mut(idx as usize) else {
                    out_of_range += 1;
                    continue;
                };
                if *slot == UNSEEN {
                    *slot = spec.rank;
                } else if *slot == spec.rank && independent {
                    padding_duplicates += 1;
                } else {
                    duplicates += 1;
                }
            }
            max_pixel_budget = max_pixel_budget.max(spec.pixels());
            let full = spec.indices.len() == spec.batch_size as usize;
            if cfg.kind.is_variable_batch() && full && spec.batch_size > 1 && spec.pixels() > budget {
                budget_violations += 1;
            }
            let in_pool = active.as_ref().is_some_and(|p| p.contains(spec.resolution()));
            let right_batch = spec.batch_size == cfg.batch_for(spec.resolution());
            let too_many = spec.indices.len() > spec.batch_size as usize;
            let early_partial = !full && i + 1 != steps.len();
            if !in_pool || !right_batch || too_many || early_partial || spec.epoch != plan.epoch {
                shape_violations += 1;
            }
        }
    }
    let per_rank_steps: Vec<usize> = plan.per_rank.iter().map(Vec::len).collect();
    let steps_equal = per_rank_steps.windows(2).all(|w| w[0] == w[1]);
    CoverageReport {
        epoch: plan.epoch,
        duplicates,
        padding_duplicates,
        missing: first_rank.iter().filter(|&&r| r == UNSEEN).count() as u64,
        out_of_range,
        per_rank_steps,
        steps_equal,
        max_pixel_budget,
        budget_violations,
        shape_violations,
    }
}
