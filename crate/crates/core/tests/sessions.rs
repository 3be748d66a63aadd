mod common;

use std::collections::{BTreeMap, BTreeSet};

use bcie_core::belief::{item_prior, marginal_user_update, posterior_mean, relation_diagonal};
use bcie_core::critique::{
    item_facts, mapped_items, read_jsonl, run_session, select_critique_diff, select_critique_random, simulate,
    write_jsonl, Conversation, CritiqueFact, Engine, FactKey, ItemSide, Mode, SessionConfig, SimulationPlan, Strategy,
    UserRef,
};
use bcie_core::embed::EmbeddingTable;
use bcie_core::kg::LIKES_RELATION;
use bcie_core::{EntityId, Error, KnowledgeGraph, Triple};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn plan(strategies: Vec<Strategy>, mode: Mode, seed: u64) -> SimulationPlan {
    SimulationPlan {
        strategies,
        mode,
        runs: 1,
        seed,
        config: SessionConfig::default(),
    }
}

fn jsonl(traces: &[bcie_core::critique::SessionTrace]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_jsonl(traces, &mut buf).unwrap();
    buf
}

#[test]
fn traces_respect_session_invariants() {
    let f = common::trained();
    let test = &f.split.test[..120];
    for mode in [Mode::Diff, Mode::Random] {
        let traces = simulate(&f.engine, test, &plan(Strategy::ALL.to_vec(), mode, 3)).unwrap();
        assert_eq!(traces.len(), 3 * test.len());
        for t in &traces {
            assert!(t.records.len() <= 6);
            assert_eq!(t.records[0].step, 0);
            assert!(t.records[0].fact.is_none());
            let liked = f.engine.train_likes(t.user.unwrap());
            let mut seen = BTreeSet::new();
            for (k, r) in t.records.iter().enumerate() {
                assert_eq!(r.step, k);
                assert!(r.gt_rank.is_some(), "ground truth must stay a candidate");
                assert!(r.ranking_top_k.iter().all(|i| !liked.contains(i)));
                assert!(r.hit10 >= r.hit5);
                if let Some(fact) = r.fact {
                    assert!(seen.insert(fact), "fact repeated in a session");
                }
            }
        }
    }
}

#[test]
fn simulation_is_deterministic_across_pool_sizes() {
    let f = common::trained();
    let test = &f.split.test[..80];
    let p = plan(Strategy::ALL.to_vec(), Mode::Random, 7);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate(&f.engine, test, &p).unwrap())
    };
    let a = jsonl(&run(1));
    let b = jsonl(&run(4));
    assert_eq!(a, b);
    let other = jsonl(&simulate(&f.engine, test, &plan(Strategy::ALL.to_vec(), Mode::Random, 8)).unwrap());
    assert_ne!(a, other, "the seed must reach random critique selection");
}

#[test]
fn jsonl_round_trips() {
    let f = common::trained();
    let traces = simulate(&f.engine, &f.split.test[..30], &plan(Strategy::ALL.to_vec(), Mode::Diff, 1)).unwrap();
    let bytes = jsonl(&traces);
    let back = read_jsonl(&bytes[..]).unwrap();
    assert_eq!(back, traces);
    let first = std::str::from_utf8(&bytes).unwrap().lines().next().unwrap();
    let v: serde_json::Value = serde_json::from_str(first).unwrap();
    for key in ["step", "ranking_topK", "fact", "gt_rank", "hit5", "hit10", "narc_inputs"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn diff_selection_matches_exhaustive_argmin() {
    let f = common::trained();
    let kg = f.engine.kg();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for t in f.split.test.iter().take(150) {
        let state = f.engine.start(UserRef::Known(t.head), Strategy::Bcie, SessionConfig::default()).unwrap();
        let top = state.top_k();
        let gt_facts = item_facts(kg, t.tail);
        // a random prefix of the gt facts counts as already critiqued
        let n_done = rand::Rng::gen_range(&mut rng, 0..gt_facts.len());
        let done: BTreeSet<FactKey> = gt_facts[..n_done].iter().map(CritiqueFact::key).collect();
        let mut best: Option<(usize, FactKey)> = None;
        for g in &gt_facts[n_done..] {
            let count = top
                .iter()
                .filter(|&&i| item_facts(kg, i).iter().any(|x| x.key() == g.key()))
                .count();
            if best.map_or(true, |(c, k)| (count, g.key()) < (c, k)) {
                best = Some((count, g.key()));
            }
        }
        let got = select_critique_diff(kg, t.tail, &top, &done).unwrap();
        assert_eq!(got.key(), best.unwrap().1);
    }
}

/// A graph with one item holding five facts and a popular attribute shared
/// by 30 items.
fn handmade() -> (Engine, EntityId, EntityId) {
    let users = 3u32;
    let items: Vec<EntityId> = (users..users + 30).collect();
    let attrs: Vec<EntityId> = (33..40).collect();
    let popular = attrs[0];
    let mut triples = vec![
        Triple::new(0, LIKES_RELATION, items[0]),
        Triple::new(1, LIKES_RELATION, items[1]),
        Triple::new(2, LIKES_RELATION, items[2]),
    ];
    for &i in &items {
        triples.push(Triple::new(i, 1, popular));
    }
    for &a in &attrs[1..5] {
        triples.push(Triple::new(items[5], 2, a));
    }
    let kg = KnowledgeGraph::new(
        40,
        3,
        triples,
        (0..users).collect(),
        items.iter().copied().collect(),
        LIKES_RELATION,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut emb = EmbeddingTable::random_uniform(4, 40, 3, 1.0, &mut rng);
    // attribute 39 has no embedding signal at all
    emb.head_mut(39).fill(0.0);
    emb.tail_mut(39).fill(0.0);
    let train = BTreeMap::from([(0, BTreeSet::from([items[0]]))]);
    (Engine::with_train_likes(kg, emb, train).unwrap(), items[5], popular)
}

#[test]
fn random_selection_is_uniform() {
    let (engine, item, _) = handmade();
    let facts = item_facts(engine.kg(), item);
    assert_eq!(facts.len(), 5);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut counts: BTreeMap<FactKey, usize> = BTreeMap::new();
    for _ in 0..10_000 {
        let f = select_critique_random(engine.kg(), item, &BTreeSet::new(), &mut rng).unwrap();
        *counts.entry(f.key()).or_default() += 1;
    }
    assert_eq!(counts.len(), 5);
    for (k, c) in counts {
        assert!((1850..=2150).contains(&c), "{k}: {c}");
    }
}

#[test]
fn mapped_items_caps_at_ten_lowest_ids() {
    let (engine, _, popular) = handmade();
    let fact = CritiqueFact::from_key(
        FactKey {
            relation: 1,
            anchor: popular,
            side: ItemSide::Head,
        },
        None,
    );
    let m = mapped_items(&engine, &fact, 10);
    assert_eq!(m, (3..13).collect::<Vec<_>>());
}

#[test]
fn zero_evidence_records_fact_and_keeps_belief() {
    let (engine, item, _) = handmade();
    let fact = CritiqueFact::from_key(
        FactKey {
            relation: 2,
            anchor: 39,
            side: ItemSide::Head,
        },
        Some(item),
    );
    for strategy in [Strategy::Bcie, Strategy::Direct] {
        let s0 = engine.start(UserRef::Known(0), strategy, SessionConfig::default()).unwrap();
        let s1 = engine.apply_critique(&s0, &fact).unwrap();
        assert_eq!(s1.belief, s0.belief);
        assert_eq!(s1.last_ranking, s0.last_ranking);
        assert_eq!(s1.step, 1);
        assert!(s1.critiqued.contains(&fact.key()));
    }
}

#[test]
fn repeated_and_excess_critiques_are_rejected() {
    let f = common::trained();
    let t = f.split.test[0];
    let cfg = SessionConfig {
        max_steps: 2,
        ..SessionConfig::default()
    };
    let facts = item_facts(f.engine.kg(), t.tail);
    let mut conv = Conversation::start(&f.engine, UserRef::Known(t.head), Some(t.tail), Strategy::Bcie, cfg).unwrap();
    conv.critique(&f.engine, &facts[0]).unwrap();
    assert!(matches!(conv.critique(&f.engine, &facts[0]), Err(Error::RepeatedCritique)));
    conv.critique(&f.engine, &facts[1]).unwrap();
    assert!(!conv.can_critique());
    assert!(matches!(conv.critique(&f.engine, &facts[2]), Err(Error::Config(_))));
    assert_eq!(conv.records().len(), 3);
}

#[test]
fn direct_precision_grows_by_alpha_per_step() {
    let f = common::trained();
    let t = f.split.test[1];
    let cfg = SessionConfig {
        alpha: 0.7,
        j0: 2.0,
        ..SessionConfig::default()
    };
    let mut s = f.engine.start(UserRef::Known(t.head), Strategy::Direct, cfg).unwrap();
    for (k, fact) in item_facts(f.engine.kg(), t.tail).iter().take(5).enumerate() {
        s = f.engine.apply_critique(&s, fact).unwrap();
        let expected = 2.0 + 0.7 * (k + 1) as f64;
        assert!(s.belief.j().iter().all(|j| (j - expected).abs() < 1e-12));
    }
}

#[test]
fn vanishing_evidence_leaves_rankings_unchanged() {
    let f = common::trained();
    let e = &f.engine;
    let tiny = SessionConfig {
        alpha: 1e-12,
        ..SessionConfig::default()
    };
    for t in f.split.test.iter().take(60) {
        let fact = item_facts(e.kg(), t.tail)[0];
        // direct: nothing but the evidence moves the belief
        let s0 = e.start(UserRef::Known(t.head), Strategy::Direct, tiny.clone()).unwrap();
        let s1 = e.apply_critique(&s0, &fact).unwrap();
        assert_eq!(s1.ranking_ids(), s0.ranking_ids());
        // bcie: identical to the update with the item prior alone
        let s0 = e.start(UserRef::Known(t.head), Strategy::Bcie, tiny.clone()).unwrap();
        let s1 = e.apply_critique(&s0, &fact).unwrap();
        let prior = item_prior(e.embeddings(), &s0.top_k(), tiny.j_m).unwrap();
        let dr = relation_diagonal(e.embeddings(), e.likes(), tiny.sign);
        let b = marginal_user_update(&s0.belief, &prior, &dr, tiny.eps).unwrap();
        let without = e.rank(&posterior_mean(&b), &s0.exclude).unwrap();
        assert_eq!(s1.ranking_ids(), without.iter().map(|s| s.item).collect::<Vec<_>>());
    }
}

#[test]
fn direct_and_bcie_move_rankings_differently() {
    let f = common::trained();
    let mut differ = 0;
    for t in f.split.test.iter().take(50) {
        let fact = item_facts(f.engine.kg(), t.tail)[0];
        let rank = |s| {
            let st = f.engine.start(UserRef::Known(t.head), s, SessionConfig::default()).unwrap();
            f.engine.apply_critique(&st, &fact).unwrap().ranking_ids()
        };
        differ += usize::from(rank(Strategy::Bcie) != rank(Strategy::Direct));
    }
    assert!(differ > 25, "{differ}/50");
}

#[test]
fn cluster_attribute_critique_lifts_satisfying_items() {
    let f = common::trained();
    let planted = &f.data.planted;
    let mut positive = 0;
    let mut total = 0;
    for t in f.split.test.iter() {
        let cluster = planted.item_cluster[&t.tail];
        let Some(fact) = item_facts(f.engine.kg(), t.tail)
            .into_iter()
            .find(|x| planted.attribute_cluster.get(&x.anchor) == Some(&cluster))
        else {
            continue;
        };
        let mut conv = Conversation::start(
            &f.engine,
            UserRef::Known(t.head),
            Some(t.tail),
            Strategy::Bcie,
            SessionConfig::default(),
        )
        .unwrap();
        let rec = conv.critique(&f.engine, &fact).unwrap();
        if let Some(n) = rec.narc_inputs {
            positive += usize::from(n.narc > 0.0);
            total += 1;
        }
        if total == 100 {
            break;
        }
    }
    assert_eq!(total, 100);
    assert!(positive > 50, "{positive}/100");
}

#[test]
fn sessions_leave_the_model_untouched() {
    let f = common::trained();
    let mut before = Vec::new();
    f.engine.embeddings().write_to(&mut before).unwrap();
    simulate(&f.engine, &f.split.test[..40], &plan(Strategy::ALL.to_vec(), Mode::Diff, 1)).unwrap();
    let mut after = Vec::new();
    f.engine.embeddings().write_to(&mut after).unwrap();
    assert_eq!(before, after);
}

#[test]
fn run_session_checks_its_target() {
    let f = common::trained();
    let t = f.split.test[0];
    let liked = *f.engine.train_likes(t.head).iter().next().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = SessionConfig::default();
    let err = run_session(&f.engine, t.head, liked, Strategy::Bcie, Mode::Diff, &cfg, &mut rng).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    let err = run_session(&f.engine, t.head, t.head, Strategy::Bcie, Mode::Diff, &cfg, &mut rng).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn stop_at_top1_ends_early() {
    let f = common::trained();
    let cfg = SessionConfig {
        stop_at_top1: true,
        j0: 0.1,
        j_m: 0.1,
        alpha: 0.1,
        ..SessionConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut early = 0;
    for t in f.split.test.iter().take(60) {
        let (records, outcome) =
            run_session(&f.engine, t.head, t.tail, Strategy::MappedItems, Mode::Diff, &cfg, &mut rng).unwrap();
        if outcome == bcie_core::critique::Outcome::ReachedTop1 {
            early += 1;
            assert_eq!(records.last().unwrap().gt_rank, Some(1));
            assert!(records.len() < 6);
        }
    }
    assert!(early > 0);
}
