//! Training-cost simulation: FLOPs, optimization updates and peak activation
//! footprint of a sampler, and relative reports against a baseline.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::planner::{schedule_epoch, ResolutionSync, SamplerConfig, SamplerKind};
use crate::respool::{batch_size_for, Resolution, ResolutionPool};

pub const DEFAULT_DEPTH_FACTOR: f64 = 1.0;

/// Per-sample FLOPs as a function of input resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FlopLaw {
    /// `per_pixel * H * W + fixed`.
    Analytic { per_pixel: f64, fixed: f64 },
    /// Measured FLOPs per sample at each resolution.
    Tabulated {
        #[serde(with = "table_entries")]
        table: BTreeMap<Resolution, f64>,
    },
}

/// FLOP tables serialize as a list of `{h, w, flops}` entries.
mod table_entries {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::respool::Resolution;

    #[derive(Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Entry {
        h: u32,
        w: u32,
        flops: f64,
    }

    pub fn serialize<S: Serializer>(table: &BTreeMap<Resolution, f64>, s: S) -> Result<S::Ok, S::Error> {
        let entries: Vec<Entry> = table
            .iter()
            .map(|(r, &flops)| Entry {
                h: r.height,
                w: r.width,
                flops,
            })
            .collect();
        entries.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<Resolution, f64>, D::Error> {
        let entries = Vec::<Entry>::deserialize(d)?;
        Ok(entries
            .into_iter()
            .map(|e| (Resolution::new(e.h, e.w), e.flops))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostProfile {
    pub flops: FlopLaw,
    /// Activation units per input pixel per sample.
    pub act_per_pixel: f64,
    pub depth_factor: f64,
}

impl Default for CostProfile {
    fn default() -> Self {
        CostProfile::analytic(1.0, 0.0)
    }
}

impl CostProfile {
    pub fn analytic(per_pixel: f64, fixed: f64) -> Self {
        CostProfile {
            flops: FlopLaw::Analytic { per_pixel, fixed },
            act_per_pixel: 1.0,
            depth_factor: DEFAULT_DEPTH_FACTOR,
        }
    }

    pub fn tabulated(table: BTreeMap<Resolution, f64>) -> Self {
        CostProfile {
            flops: FlopLaw::Tabulated { table },
            act_per_pixel: 1.0,
            depth_factor: DEFAULT_DEPTH_FACTOR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.flops {
            FlopLaw::Analytic { per_pixel, fixed } => {
                if !(*per_pixel > 0.0 && per_pixel.is_finite()) {
                    return Err(Error::Profile(format!("per_pixel_flops must be positive, got {per_pixel}")));
                }
                if !(*fixed >= 0.0 && fixed.is_finite()) {
                    return Err(Error::Profile(format!("fixed_flops must be non-negative, got {fixed}")));
                }
            }
            FlopLaw::Tabulated { table } => {
                if table.is_empty() {
                    return Err(Error::Profile("FLOP table is empty".into()));
                }
                if let Some((r, v)) = table.iter().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
                    return Err(Error::Profile(format!("FLOP table entry {r} is invalid: {v}")));
                }
            }
        }
        if !(self.act_per_pixel >= 0.0 && self.act_per_pixel.is_finite()) {
            return Err(Error::Profile(format!(
                "act_per_pixel must be non-negative, got {}",
                self.act_per_pixel
            )));
        }
        if !(self.depth_factor >= 0.0 && self.depth_factor.is_finite()) {
            return Err(Error::Profile(format!(
                "depth_factor must be non-negative, got {}",
                self.depth_factor
            )));
        }
        Ok(())
    }

    /// Checks that a tabulated profile covers every resolution `cfg` can emit,
    /// including all curriculum-compressed pools.
    pub fn check_coverage(&self, cfg: &SamplerConfig) -> Result<()> {
        if let FlopLaw::Tabulated { .. } = self.flops {
            let mut last: Option<ResolutionPool> = None;
            for epoch in 0..cfg.epochs {
                let pool = cfg.active_pool(epoch)?;
                if last.as_ref() == Some(&pool) {
                    continue;
                }
                for &r in pool.resolutions() {
                    flops_per_sample(self, r)?;
                }
                last = Some(pool);
            }
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        digest_of(self)
    }

    /// Activation units of one step: `m * B_t * H_t * W_t * (1 + depth_factor)`.
    pub fn step_activation(&self, batch: u32, res: Resolution) -> f64 {
        self.act_per_pixel * f64::from(batch) * res.area() as f64 * (1.0 + self.depth_factor)
    }
}

pub fn flops_per_sample(profile: &CostProfile, res: Resolution) -> Result<f64> {
    match &profile.flops {
        FlopLaw::Analytic { per_pixel, fixed } => Ok(per_pixel * res.area() as f64 + fixed),
        FlopLaw::Tabulated { table } => table
            .get(&res)
            .copied()
            .ok_or_else(|| Error::Profile(format!("no FLOP measurement for resolution {res}"))),
    }
}

fn digest_of<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable value");
    let hash = Sha256::digest(&bytes);
    hex::encode(&hash[..8])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SimulationMode {
    /// Run the planner for each seed and average.
    MonteCarlo { seeds: Vec<u64> },
    /// Closed forms over the active pools, with unrounded `B_t`.
    Expected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochCost {
    pub epoch: u32,
    pub flops: f64,
    pub updates: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub sampler: SamplerKind,
    pub total_flops: f64,
    /// Lockstep optimization updates (per rank); fractional when averaged
    /// over seeds or computed in expected mode.
    pub updates: f64,
    pub peak_activation_units: f64,
    pub per_epoch: Vec<EpochCost>,
    pub config_digest: String,
    pub profile_digest: String,
}

impl CostReport {
    fn from_epochs(
        cfg: &SamplerConfig,
        profile: &CostProfile,
        mode: &SimulationMode,
        per_epoch: Vec<EpochCost>,
        peak: f64,
    ) -> Self {
        CostReport {
            sampler: cfg.kind,
            total_flops: per_epoch.iter().map(|e| e.flops).sum(),
            updates: per_epoch.iter().map(|e| e.updates).sum(),
            peak_activation_units: peak,
            per_epoch,
            config_digest: digest_of(&(cfg, mode)),
            profile_digest: profile.digest(),
        }
    }
}

pub fn simulate(cfg: &SamplerConfig, profile: &CostProfile, mode: &SimulationMode) -> Result<CostReport> {
    cfg.validate()?;
    profile.validate()?;
    profile.check_coverage(cfg)?;
    match mode {
        SimulationMode::MonteCarlo { seeds } => monte_carlo(cfg, profile, mode, seeds),
        SimulationMode::Expected => expected(cfg, profile, mode),
    }
}

fn monte_carlo(
    cfg: &SamplerConfig,
    profile: &CostProfile,
    mode: &SimulationMode,
    seeds: &[u64],
) -> Result<CostReport> {
    if seeds.is_empty() {
        return Err(Error::config("seeds", "Monte Carlo simulation needs at least one seed"));
    }
    let mut flops = vec![0.0; cfg.epochs as usize];
    let mut updates = vec![0.0; cfg.epochs as usize];
    let mut peak = 0.0f64;
    for &seed in seeds {
        let run = SamplerConfig {
            seed,
            ..cfg.clone()
        };
        for epoch in 0..cfg.epochs {
            let sched = schedule_epoch(&run, epoch)?;
            let mut epoch_flops = 0.0;
            for step in sched.per_rank.iter().flatten() {
                epoch_flops += f64::from(step.carried()) * flops_per_sample(profile, step.resolution)?;
                peak = peak.max(profile.step_activation(step.batch, step.resolution));
            }
            flops[epoch as usize] += epoch_flops;
            updates[epoch as usize] += sched.updates() as f64;
        }
    }
    let k = seeds.len() as f64;
    let per_epoch = (0..cfg.epochs)
        .map(|e| EpochCost {
            epoch: e,
            flops: flops[e as usize] / k,
            updates: updates[e as usize] / k,
        })
        .collect();
    Ok(CostReport::from_epochs(cfg, profile, mode, per_epoch, peak))
}

fn expected(cfg: &SamplerConfig, profile: &CostProfile, mode: &SimulationMode) -> Result<CostReport> {
    if cfg.resolution_sync == ResolutionSync::Independent {
        return Err(Error::config(
            "resolution_sync",
            "expected-mode simulation assumes synchronized resolution draws",
        ));
    }
    let n = cfg.dataset_size as f64;
    let longest = cfg.shard_lens().into_iter().max().unwrap_or(0) as f64;
    let reference_area = cfg.reference.resolution().area() as f64;
    let batch = f64::from(cfg.reference.batch);
    let mut per_epoch = Vec::with_capacity(cfg.epochs as usize);
    let mut peak = 0.0f64;
    let mut cached: Option<(ResolutionPool, f64, f64, f64)> = None;
    for epoch in 0..cfg.epochs {
        let pool = cfg.active_pool(epoch)?;
        let hit = cached.as_ref().filter(|(p, ..)| *p == pool).map(|&(_, u, f, pk)| (u, f, pk));
        let (upd, flops, pk) = match hit {
            Some(v) => v,
            None => {
                let fps: Vec<f64> = pool
                    .resolutions()
                    .iter()
                    .map(|&r| flops_per_sample(profile, r))
                    .collect::<Result<_>>()?;
                let count = pool.len() as f64;
                let (upd, flops) = if cfg.kind.is_variable_batch() {
                    // Relative batch size HW / (H_i W_i) of every pool element.
                    let rel: Vec<f64> = pool
                        .resolutions()
                        .iter()
                        .map(|r| reference_area / r.area() as f64)
                        .collect();
                    let rel_sum: f64 = rel.iter().sum();
                    let mean_batch = batch * rel_sum / count;
                    let per_sample: f64 =
                        rel.iter().zip(&fps).map(|(w, f)| w * f).sum::<f64>() / rel_sum;
                    (longest / mean_batch, n * per_sample)
                } else {
                    (longest / batch, n * fps.iter().sum::<f64>() / count)
                };
                let pk = pool
                    .resolutions()
                    .iter()
                    .map(|&r| {
                        let b = if cfg.kind.is_variable_batch() {
                            batch_size_for(&cfg.reference, r)
                        } else {
                            cfg.reference.batch
                        };
                        profile.step_activation(b, r)
                    })
                    .fold(0.0, f64::max);
                cached = Some((pool, upd, flops, pk));
                (upd, flops, pk)
            }
        };
        peak = peak.max(pk);
        per_epoch.push(EpochCost {
            epoch,
            flops,
            updates: upd,
        });
    }
    Ok(CostReport::from_epochs(cfg, profile, mode, per_epoch, peak))
}

/// Candidate-over-baseline ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeReport {
    pub sampler: SamplerKind,
    pub baseline_sampler: SamplerKind,
    pub baseline_digest: String,
    pub candidate_digest: String,
    pub flops_ratio: f64,
    pub updates_ratio: f64,
    pub peak_ratio: f64,
}

pub fn compare(candidate: &CostReport, baseline: &CostReport) -> Result<RelativeReport> {
    if candidate.profile_digest != baseline.profile_digest {
        return Err(Error::Comparison(format!(
            "reports use different cost profiles ({} vs {})",
            candidate.profile_digest, baseline.profile_digest
        )));
    }
    let ratio = |name: &str, c: f64, b: f64| -> Result<f64> {
        if b == 0.0 || !b.is_finite() {
            return Err(Error::Comparison(format!("baseline {name} is {b}")));
        }
        Ok(c / b)
    };
    Ok(RelativeReport {
        sampler: candidate.sampler,
        baseline_sampler: baseline.sampler,
        baseline_digest: baseline.config_digest.clone(),
        candidate_digest: candidate.config_digest.clone(),
        flops_ratio: ratio("total_flops", candidate.total_flops, baseline.total_flops)?,
        updates_ratio: ratio("updates", candidate.updates, baseline.updates)?,
        peak_ratio: ratio(
            "peak_activation_units",
            candidate.peak_activation_units,
            baseline.peak_activation_units,
        )?,
    })
}

/// Table with one row per report: sampler, peak ratio, FLOPs ratio, updates ratio.
pub fn format_relative_table(rows: &[RelativeReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:>16} {:>16} {:>22}",
        "Sampler", "Peak activation", "Training FLOPs", "Optimization updates"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<12} {:>15.2}x {:>15.2}x {:>21.2}x",
            r.sampler.label(),
            r.peak_ratio,
            r.flops_ratio,
            r.updates_ratio
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::ResolutionSync;
    use crate::respool::{build_pool, ReferenceBatchShape};

    fn cfg(kind: SamplerKind) -> SamplerConfig {
        SamplerConfig {
            kind,
            reference: ReferenceBatchShape::new(256, 3, 224, 224).unwrap(),
            pool: build_pool(Resolution::square(128), Resolution::square(320), 32).unwrap(),
            curriculum: None,
            dataset_size: 200_000,
            world_size: 4,
            epochs: 4,
            seed: 0,
            resolution_sync: ResolutionSync::Synchronized,
            drop_last: false,
        }
    }

    #[test]
    fn flops_per_sample_examples() {
        let p = CostProfile::analytic(1.0, 0.0);
        assert_eq!(flops_per_sample(&p, Resolution::square(224)).unwrap(), 50176.0);
        assert_eq!(flops_per_sample(&p, Resolution::square(160)).unwrap(), 25600.0);
        let t = CostProfile::tabulated(BTreeMap::from([(Resolution::square(224), 7.8e9)]));
        assert_eq!(flops_per_sample(&t, Resolution::square(224)).unwrap(), 7.8e9);
        let err = flops_per_sample(&t, Resolution::square(160)).unwrap_err();
        assert!(err.to_string().contains("160x160"));
    }

    #[test]
    fn baseline_against_itself_is_unity() {
        let p = CostProfile::default();
        for mode in [SimulationMode::Expected, SimulationMode::MonteCarlo { seeds: vec![1, 2] }] {
            let r = simulate(&cfg(SamplerKind::SscFbs), &p, &mode).unwrap();
            let rel = compare(&r, &r).unwrap();
            assert_eq!((rel.flops_ratio, rel.updates_ratio, rel.peak_ratio), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn totals_are_sums_of_epochs() {
        let r = simulate(
            &cfg(SamplerKind::MscVbs),
            &CostProfile::default(),
            &SimulationMode::MonteCarlo { seeds: vec![3] },
        )
        .unwrap();
        assert_eq!(r.per_epoch.len(), 4);
        assert_eq!(r.total_flops, r.per_epoch.iter().map(|e| e.flops).sum::<f64>());
        assert_eq!(r.updates, r.per_epoch.iter().map(|e| e.updates).sum::<f64>());
    }

    #[test]
    fn expected_mode_harmonic_closed_form() {
        let p = CostProfile::default();
        let base = simulate(&cfg(SamplerKind::SscFbs), &p, &SimulationMode::Expected).unwrap();
        let cand = simulate(&cfg(SamplerKind::MscVbs), &p, &SimulationMode::Expected).unwrap();
        let rel = compare(&cand, &base).unwrap();
        let inv: f64 = (128..=320).step_by(32).map(|r: u32| 1.0 / f64::from(r * r)).sum();
        let closed = 7.0 / (224.0 * 224.0 * inv);
        assert!((rel.updates_ratio - closed).abs() < 1e-12);
        assert!((rel.flops_ratio - closed).abs() < 1e-12);
    }

    #[test]
    fn expected_rejects_independent() {
        let mut c = cfg(SamplerKind::MscVbs);
        c.resolution_sync = ResolutionSync::Independent;
        assert!(simulate(&c, &CostProfile::default(), &SimulationMode::Expected).is_err());
    }

    #[test]
    fn fixed_cost_is_additive() {
        let b = 1000.0;
        let p0 = CostProfile::analytic(1.0, 0.0);
        let pb = CostProfile::analytic(1.0, b);
        let c = cfg(SamplerKind::MscVbs);
        let r0 = simulate(&c, &p0, &SimulationMode::Expected).unwrap();
        let rb = simulate(&c, &pb, &SimulationMode::Expected).unwrap();
        let extra = rb.total_flops - r0.total_flops;
        let expect = b * c.dataset_size as f64 * f64::from(c.epochs);
        assert!((extra - expect).abs() / expect < 1e-9);
    }

    #[test]
    fn compare_rejects_zero_and_mismatched_profiles() {
        let c = cfg(SamplerKind::SscFbs);
        let r = simulate(&c, &CostProfile::default(), &SimulationMode::Expected).unwrap();
        let mut zero = r.clone();
        zero.updates = 0.0;
        assert!(compare(&r, &zero).is_err());
        let other = simulate(&c, &CostProfile::analytic(2.0, 0.0), &SimulationMode::Expected).unwrap();
        assert!(compare(&other, &r).is_err());
    }

    #[test]
    fn tabulated_profile_must_cover_compressed_pools() {
        let mut c = cfg(SamplerKind::MscVbswc);
        c.curriculum = Some(crate::schedule::CurriculumSchedule::cosine(0.75, 0.5, 4).unwrap());
        let table: BTreeMap<_, _> = c
            .pool
            .resolutions()
            .iter()
            .map(|&r| (r, r.area() as f64))
            .collect();
        let err = simulate(&c, &CostProfile::tabulated(table), &SimulationMode::Expected).unwrap_err();
        assert!(err.to_string().contains("96x96"));
    }
}
