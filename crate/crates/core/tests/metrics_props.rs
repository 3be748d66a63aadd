use std::collections::BTreeSet;

use bcie_core::critique::{Mode, NarcInputs, Outcome, SessionTrace, StepRecord, Strategy};
use bcie_core::metrics::{aggregate, average_rank, parse_report_csv, report_csv};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn average_rank_matches_position_scan(n in 1usize..60, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ranking: Vec<u32> = (0..n as u32).map(|i| i * 3 + 1).collect();
        ranking.shuffle(&mut rng);
        let k = 1 + (seed as usize % n);
        let items: BTreeSet<u32> = ranking.choose_multiple(&mut rng, k).copied().collect();
        let mut total = 0.0;
        for it in &items {
            for (p, r) in ranking.iter().enumerate() {
                if r == it {
                    total += (p + 1) as f64;
                }
            }
        }
        prop_assert_eq!(average_rank(&ranking, &items).unwrap(), total / items.len() as f64);
    }
}

fn random_traces(seed: u64, n: usize) -> Vec<SessionTrace> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for run in 0..2 {
        for strategy in [Strategy::Bcie, Strategy::Direct] {
            for session in 0..n {
                let len = rng.gen_range(1..=4);
                let records = (0..len)
                    .map(|step| {
                        let h10 = rng.gen_range(0..2u8);
                        let h5 = h10 * rng.gen_range(0..2u8);
                        StepRecord {
                            step,
                            ranking_top_k: vec![],
                            fact: None,
                            gt_rank: Some(1),
                            hit5: Some(h5),
                            hit10: Some(h10),
                            narc_inputs: (step > 0).then(|| {
                                let pre: f64 = rng.gen_range(1.0..50.0);
                                let post: f64 = rng.gen_range(1.0..50.0);
                                NarcInputs {
                                    ar_pre: pre,
                                    ar_post: post,
                                    satisfying: 1,
                                    narc: (pre - post) / pre,
                                }
                            }),
                        }
                    })
                    .collect();
                out.push(SessionTrace {
                    session,
                    run,
                    user: Some(0),
                    gt_item: Some(1),
                    strategy,
                    mode: Mode::Diff,
                    records,
                    outcome: Outcome::Completed,
                });
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aggregation_ignores_trace_order(seed in any::<u64>()) {
        let traces = random_traces(seed, 7);
        let mut shuffled = traces.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        prop_assert_eq!(aggregate(&traces, 3).unwrap(), aggregate(&shuffled, 3).unwrap());
    }

    #[test]
    fn duplicating_traces_keeps_means(seed in any::<u64>()) {
        let traces = random_traces(seed, 5);
        let doubled: Vec<_> = traces.iter().chain(&traces).cloned().collect();
        let a = aggregate(&traces, 3).unwrap();
        let b = aggregate(&doubled, 3).unwrap();
        for (x, y) in a.blocks.iter().zip(&b.blocks) {
            for (s, t) in x.steps.iter().zip(&y.steps) {
                prop_assert!((s.hit5_mean - t.hit5_mean).abs() < 1e-12);
                prop_assert!((s.hit10_mean - t.hit10_mean).abs() < 1e-12);
                match (s.narc_mean, t.narc_mean) {
                    (Some(p), Some(q)) => prop_assert!((p - q).abs() < 1e-12),
                    (p, q) => prop_assert_eq!(p, q),
                }
            }
        }
    }

    #[test]
    fn csv_round_trip(seed in any::<u64>()) {
        let report = aggregate(&random_traces(seed, 6), 3).unwrap();
        let rows = parse_report_csv(&report_csv(&report)).unwrap();
        let steps: Vec<_> = report.blocks.iter().flat_map(|b| b.steps.iter()).collect();
        prop_assert_eq!(rows.len(), steps.len());
        for (r, s) in rows.iter().zip(steps) {
            prop_assert!((r.stats.hit10_mean - s.hit10_mean).abs() <= 1e-9);
            prop_assert!((r.stats.hit5_se - s.hit5_se).abs() <= 1e-9);
            prop_assert_eq!(r.stats.narc_mean.is_some(), s.narc_mean.is_some());
        }
    }
}

#[test]
fn report_arrays_cover_every_step() {
    let report = aggregate(&random_traces(3, 4), 5).unwrap();
    assert_eq!(report.blocks.len(), 2);
    for b in &report.blocks {
        assert_eq!(b.steps.len(), 6);
        assert_eq!(b.narc.len(), 6);
        assert!(b.narc[0].is_empty());
        assert_eq!(b.runs, vec![0, 1]);
    }
}
