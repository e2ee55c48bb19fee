use std::path::Path;

use msc_sampler::io::{plan_to_bytes, read_dump_from, read_plan_from, write_dump_to, DumpHeader};
use msc_sampler::metrics::{exact_sum, EceAccumulator};
use msc_sampler::planner::plan_epoch;
use msc_sampler::respool::compress_resolution;
use msc_sampler::*;
use proptest::prelude::*;

fn kind_strategy() -> impl Strategy<Value = ScheduleKind> {
    prop::sample::select(ScheduleKind::ALL.to_vec())
}

fn sampler_strategy() -> impl Strategy<Value = SamplerKind> {
    prop::sample::select(SamplerKind::ALL.to_vec())
}

fn schedule_strategy() -> impl Strategy<Value = CurriculumSchedule> {
    (kind_strategy(), 0.01f64..=1.0, 0.01f64..=1.0, 1u32..700, 0.25f64..4.0).prop_map(
        |(kind, rho0, tau, epochs, power)| {
            let mut s = CurriculumSchedule::new(kind, rho0, tau, epochs).unwrap();
            if kind == ScheduleKind::Polynomial {
                s.poly_power = power;
            }
            s
        },
    )
}

/// Small random sampler configs, pools built from random square bounds.
fn config_strategy() -> impl Strategy<Value = SamplerConfig> {
    (
        sampler_strategy(),
        1u32..=64,
        prop::sample::select(vec![8u32, 16, 32]),
        1u32..=4,
        0u32..=4,
        1u64..3000,
        1u32..=8,
        any::<u64>(),
    )
        .prop_filter_map(
            "dataset smaller than world",
            |(kind, batch, d, lo, span, n, world, seed)| {
                if n < u64::from(world) {
                    return None;
                }
                let min = Resolution::square(lo * d);
                let max = Resolution::square((lo + span) * d);
                let pool = build_pool(min, max, d).ok()?;
                let ref_side = (lo + span / 2) * d;
                let epochs = 3;
                Some(SamplerConfig {
                    kind,
                    reference: ReferenceBatchShape::new(batch, 3, ref_side, ref_side).unwrap(),
                    pool,
                    curriculum: (kind == SamplerKind::MscVbswc)
                        .then(|| CurriculumSchedule::cosine(0.75, 0.5, epochs).unwrap()),
                    dataset_size: n,
                    world_size: world,
                    epochs,
                    seed,
                    resolution_sync: ResolutionSync::Synchronized,
                    drop_last: false,
                })
            },
        )
}

proptest! {
    #[test]
    fn schedules_are_monotone_with_fixed_endpoints(s in schedule_strategy()) {
        let v = s.values();
        prop_assert_eq!(v[0], s.rho0);
        for w in v.windows(2) {
            prop_assert!(w[1] >= w[0], "{:?} decreases: {} -> {}", s.kind, w[0], w[1]);
        }
        let full = (s.tau * f64::from(s.total_epochs)).ceil() as usize;
        for (e, &r) in v.iter().enumerate() {
            prop_assert!(r >= s.rho0 && r <= 1.0);
            if e >= full {
                prop_assert_eq!(r, 1.0);
            }
        }
    }

    #[test]
    fn batch_size_is_a_floor(
        b in 1u32..2048, h in 1u32..2048, w in 1u32..2048, ht in 1u32..4096, wt in 1u32..4096,
    ) {
        let reference = ReferenceBatchShape::new(b, 3, h, w).unwrap();
        let res = Resolution::new(ht, wt);
        let bt = u64::from(batch_size_for(&reference, res));
        let budget = reference.pixel_budget();
        prop_assert!(bt >= 1);
        if bt > 1 {
            prop_assert!(bt * res.area() <= budget);
            prop_assert!(budget < (bt + 1) * res.area());
        } else {
            prop_assert!(budget < 2 * res.area());
        }
    }

    #[test]
    fn compression_is_monotone_in_rho(
        lo in 1u32..8, span in 0u32..10, d in prop::sample::select(vec![8u32, 32]),
        r1 in 0.01f64..=1.0, r2 in 0.01f64..=1.0,
    ) {
        let (r1, r2) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let pool = build_pool(Resolution::square(lo * d), Resolution::square((lo + span) * d), d).unwrap();
        prop_assert_eq!(pool.len() as u32, span + 1);
        for &res in pool.resolutions() {
            let a = compress_resolution(res, r1, d);
            let b = compress_resolution(res, r2, d);
            prop_assert!(a.area() <= b.area());
            prop_assert!(a.height.is_multiple_of(d) && a.height >= d);
        }
        let c = compress_pool(&pool, r1).unwrap();
        prop_assert!(c.len() <= pool.len());
        for w in c.resolutions().windows(2) {
            prop_assert!(w[0].area() < w[1].area());
        }
        prop_assert_eq!(compress_pool(&pool, 1.0).unwrap(), pool);
    }

    #[test]
    fn synchronized_plans_cover_every_index_once(cfg in config_strategy()) {
        for epoch in 0..cfg.epochs {
            let plan = plan_epoch(&cfg, epoch).unwrap();
            let report = verify_plan(&plan, &cfg);
            prop_assert_eq!(report.missing, 0);
            prop_assert_eq!(report.duplicates, 0);
            prop_assert!(report.steps_equal);
            prop_assert!(report.is_clean(&cfg), "{:?}", report.violations(&cfg));
        }
    }

    #[test]
    fn independent_plans_cover_with_padding_only(mut cfg in config_strategy()) {
        cfg.resolution_sync = ResolutionSync::Independent;
        let plan = plan_epoch(&cfg, 1).unwrap();
        let report = verify_plan(&plan, &cfg);
        prop_assert_eq!(report.missing, 0);
        prop_assert_eq!(report.duplicates, 0);
        prop_assert!(report.is_clean(&cfg), "{:?}", report.violations(&cfg));
    }

    #[test]
    fn drop_last_loses_less_than_one_batch_per_rank(mut cfg in config_strategy()) {
        cfg.drop_last = true;
        let plan = plan_epoch(&cfg, 0).unwrap();
        let report = verify_plan(&plan, &cfg);
        let max_batch = cfg.active_pool(0).unwrap().resolutions().iter().map(|&r| u64::from(cfg.batch_for(r))).max().unwrap();
        prop_assert_eq!(report.duplicates, 0);
        prop_assert!(report.missing < u64::from(cfg.world_size) * max_batch);
        prop_assert!(plan.iter().all(|s| s.indices.len() == s.batch_size as usize));
    }

    #[test]
    fn plan_bytes_are_deterministic_and_round_trip(cfg in config_strategy()) {
        let plans: Vec<_> = (0..2).map(|e| plan_epoch(&cfg, e).unwrap()).collect();
        let bytes = plan_to_bytes(&cfg, &plans);
        let again: Vec<_> = (0..2).map(|e| plan_epoch(&cfg, e).unwrap()).collect();
        prop_assert_eq!(&bytes, &plan_to_bytes(&cfg, &again));
        let (cfg_back, plans_back) = read_plan_from(&bytes[..], Path::new("mem")).unwrap();
        prop_assert_eq!(&plans_back, &plans);
        prop_assert_eq!(plan_to_bytes(&cfg_back, &plans_back), bytes);
    }

    #[test]
    fn seeds_change_order_not_coverage(cfg in config_strategy()) {
        let mut other = cfg.clone();
        other.seed = cfg.seed.wrapping_add(1);
        let sorted = |c: &SamplerConfig| {
            let mut v: Vec<u64> = plan_epoch(c, 0).unwrap().iter().flat_map(|s| s.indices.clone()).collect();
            v.sort_unstable();
            v
        };
        prop_assert_eq!(sorted(&cfg), sorted(&other));
    }

    #[test]
    fn exact_sum_ignores_order(mut v in prop::collection::vec(-1e12f64..1e12, 0..200), seed in any::<u64>()) {
        let forward = exact_sum(v.iter().copied());
        let mut state = seed | 1;
        for i in (1..v.len()).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            v.swap(i, (state % (i as u64 + 1)) as usize);
        }
        prop_assert_eq!(forward, exact_sum(v.iter().copied()));
    }

    #[test]
    fn ece_merge_matches_single_pass(
        preds in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..300),
        split in 0usize..300, bins in 1usize..30,
    ) {
        let split = split.min(preds.len());
        let mut whole = EceAccumulator::new(bins).unwrap();
        let mut left = EceAccumulator::new(bins).unwrap();
        let mut right = EceAccumulator::new(bins).unwrap();
        for (i, &(c, ok)) in preds.iter().enumerate() {
            whole.push_prediction(c, ok);
            if i < split { left.push_prediction(c, ok) } else { right.push_prediction(c, ok) }
        }
        left.merge(&right).unwrap();
        prop_assert_eq!(left.finish().unwrap(), whole.finish().unwrap());
    }

    #[test]
    fn dump_values_survive_round_trip(
        rows in prop::collection::vec((prop::collection::vec(1e-9f64..1.0, 5), any::<f64>().prop_filter("finite", |x| x.is_finite())), 1..40),
    ) {
        let records: Vec<PredictionRecord> = rows
            .iter()
            .enumerate()
            .map(|(i, (raw, e))| {
                let s: f64 = raw.iter().sum();
                PredictionRecord {
                    image_id: format!("r{i}"),
                    label: (i % 5) as u32,
                    probs: raw.iter().map(|p| p / s).collect(),
                    eval_height: 224,
                    eval_width: 224,
                    embedding: Some(vec![*e, -*e]),
                    epoch: Some(i as u32),
                }
            })
            .collect();
        let mut bytes = Vec::new();
        write_dump_to(&mut bytes, &DumpHeader::new(5, Some(2)), &records).unwrap();
        let back = read_dump_from(&bytes[..], Path::new("mem")).unwrap();
        prop_assert!(back.warnings.is_empty());
        prop_assert_eq!(back.records, records);
    }
}
