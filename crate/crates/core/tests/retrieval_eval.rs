use std::collections::HashSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use omnitraj::data::TrajectoryRecord;
use omnitraj::encoders::{EncoderConfig, Encoders, Modality, ModalitySet, Model};
use omnitraj::evaluation::{
    coverage_rate, hit_rate, mean_rank, mrr, run_condition_eval, run_similarity_eval, run_two_stage_eval,
    ConditionProtocol, ReportContext,
};
use omnitraj::pipeline::{build_corpus, build_stores, CorpusSpec};
use omnitraj::retrieval::{build_store, topk, topk_batch, two_stage, EmbeddingStore, StoreSet};
use omnitraj::Exec;

fn unit(rng: &mut ChaCha8Rng, w: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..w).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn random_store(rng: &mut ChaCha8Rng, n: usize, w: usize, m: Modality) -> EmbeddingStore {
    let mut ids: Vec<u64> = (0..n as u64).map(|i| i * 7 + 3).collect();
    ids.reverse();
    let data: Vec<f32> = (0..n).flat_map(|_| unit(rng, w)).map(|v| v as f32).collect();
    EmbeddingStore::new(m, w, [1; 16], ids, data).unwrap()
}

/// Every candidate scored and sorted by (score desc, id asc).
fn full_sort(store: &EmbeddingStore, q: &[f64]) -> Vec<(u64, f64)> {
    let mut all: Vec<(u64, f64)> = (0..store.len())
        .map(|i| {
            let s: f64 = store.row(i).iter().zip(q).map(|(&a, b)| a as f64 * b).sum();
            (store.ids()[i], s)
        })
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    all
}

#[test]
fn topk_matches_a_full_sort() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let store = random_store(&mut rng, 1000, 32, Modality::Traj);
    let queries: Vec<Vec<f64>> = (0..50).map(|_| unit(&mut rng, 32)).collect();
    let batch = topk_batch(&store, &queries, 25, Exec::Parallel).unwrap();
    for (q, got) in queries.iter().zip(&batch) {
        let want = full_sort(&store, q);
        assert_eq!(got.ids(), want.iter().take(25).map(|w| w.0).collect::<Vec<_>>());
        for (h, w) in got.hits.iter().zip(&want) {
            assert!((h.score - w.1).abs() <= 1e-6);
        }
        assert_eq!(&topk(&store, q, 25).unwrap(), got);
    }
}

#[test]
fn scans_agree_across_strategies() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let store = random_store(&mut rng, 3000, 16, Modality::Traj);
    let queries: Vec<Vec<f64>> = (0..70).map(|_| unit(&mut rng, 16)).collect();
    let a = topk_batch(&store, &queries, 40, Exec::Sequential).unwrap();
    let b = topk_batch(&store, &queries, 40, Exec::Parallel).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn two_stage_keeps_within_the_survivors(seed in any::<u64>(), k in 1usize..8, extra in 0usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coarse = random_store(&mut rng, 120, 8, Modality::Road);
        let fine = random_store(&mut rng, 120, 8, Modality::Traj);
        let (qc, qf) = (unit(&mut rng, 8), unit(&mut rng, 8));
        let s = k + extra;
        let got = two_stage(&coarse, &fine, &qc, &qf, s, k).unwrap();
        let survivors: HashSet<u64> = topk(&coarse, &qc, s).unwrap().ids().into_iter().collect();
        prop_assert_eq!(got.hits.len(), k);
        prop_assert!(got.ids().iter().all(|id| survivors.contains(id)));
        prop_assert!(got.hits.windows(2).all(|w| w[0].score >= w[1].score));
        let oracle: Vec<u64> = full_sort(&fine, &qf).into_iter().map(|x| x.0).filter(|id| survivors.contains(id)).take(k).collect();
        prop_assert_eq!(got.ids(), oracle);
        let everything = two_stage(&coarse, &fine, &qc, &qf, 120, k).unwrap();
        prop_assert_eq!(everything.hits, topk(&fine, &qf, k).unwrap().hits);
    }

    #[test]
    fn rank_metrics_are_consistent(ranks in prop::collection::vec(1usize..60, 1..80)) {
        let (h1, h5, h10) = (hit_rate(&ranks, 1).unwrap(), hit_rate(&ranks, 5).unwrap(), hit_rate(&ranks, 10).unwrap());
        prop_assert!(h1 <= h5 && h5 <= h10);
        let m = mrr(&ranks).unwrap();
        prop_assert!(m >= h1 && m <= 1.0 && m > 0.0);
        let mr = mean_rank(&ranks).unwrap();
        prop_assert!(mr >= 1.0);
        prop_assert_eq!(mr == 1.0, h1 == 1.0);
        prop_assert_eq!(hit_rate(&ranks, *ranks.iter().max().unwrap()).unwrap(), 1.0);
    }

    #[test]
    fn union_coverage_grows_with_k(
        query in prop::collection::vec(0u32..30, 1..12),
        results in prop::collection::vec(prop::collection::vec(0u32..30, 0..10), 5),
    ) {
        let refs: Vec<&[u32]> = results.iter().map(Vec::as_slice).collect();
        let c1 = coverage_rate(&query, &refs[..1]).unwrap();
        let c5 = coverage_rate(&query, &refs).unwrap();
        prop_assert!((0.0..=1.0).contains(&c1) && c1 <= c5 && c5 <= 1.0);
    }
}

#[test]
fn metrics_match_a_hand_recomputation() {
    let ranks = [1, 4, 2, 11, 1, 7, 3];
    let n = ranks.len() as f64;
    let mut sum = 0.0;
    let mut recip = 0.0;
    let mut hits = 0.0;
    for r in ranks {
        sum += r as f64;
        recip += 1.0 / r as f64;
        if r <= 5 {
            hits += 1.0;
        }
    }
    assert!((mean_rank(&ranks).unwrap() - sum / n).abs() <= 1e-12);
    assert!((mrr(&ranks).unwrap() - recip / n).abs() <= 1e-12);
    assert_eq!(hit_rate(&ranks, 5).unwrap(), hits / n);
}

fn tiny_setup() -> (Encoders, Vec<TrajectoryRecord>) {
    let corpus = build_corpus(&CorpusSpec {
        rows: 5,
        cols: 5,
        count: 60,
        ..CorpusSpec::toy(12)
    })
    .unwrap();
    let cfg = EncoderConfig {
        d: 8,
        h: 16,
        blocks: 1,
        heads: 2,
        patch: 4,
        resample_len: 16,
        ..EncoderConfig::toy(corpus.road_vocab(), corpus.frame)
    };
    let (model, ps) = Model::init(&cfg, 4).unwrap();
    (Encoders::new(model, ps, [9; 16]), corpus.dataset.records)
}

/// Trajectory store whose rows are the query modality's own embeddings, so
/// every query finds itself with score 1.
fn perfect_stores(enc: &Encoders, recs: &[TrajectoryRecord], m: Modality) -> StoreSet {
    let src = build_store(enc, recs, m, Exec::Sequential).unwrap();
    let mut set = StoreSet::new();
    let traj = EmbeddingStore::new(Modality::Traj, src.width(), enc.fingerprint, src.ids().to_vec(), src.data().to_vec()).unwrap();
    set.insert(traj).unwrap();
    set.insert(src).unwrap();
    set
}

#[test]
fn perfect_encoder_gives_perfect_scores() {
    let (enc, recs) = tiny_setup();
    let ctx = ReportContext::default();
    for m in [Modality::Top, Modality::Road, Modality::Region] {
        let stores = perfect_stores(&enc, &recs, m);
        let variant = ModalitySet::of(&[m]).unwrap();
        let r = run_similarity_eval(&enc, &stores, &recs, variant, &ctx, Exec::Parallel).unwrap();
        assert_eq!((r.mr, r.mrr, r.hr1), (1.0, 1.0, 1.0), "{m}");
        if m != Modality::Top {
            let c = run_condition_eval(&enc, &stores, &recs, &recs, ConditionProtocol::full(m), &ctx, Exec::Parallel).unwrap();
            assert_eq!(c.cr1, 1.0, "{m}");
            assert_eq!(c.cr5, 1.0, "{m}");
        }
    }
}

#[test]
fn reported_metrics_match_recomputation() {
    let (enc, recs) = tiny_setup();
    let stores = build_stores(&enc, &recs, Exec::Parallel).unwrap();
    let ctx = ReportContext::default();
    let r = run_similarity_eval(&enc, &stores, &recs, ModalitySet::of(&[Modality::Top]).unwrap(), &ctx, Exec::Parallel).unwrap();
    let ranks = r.rank_list();
    let n = ranks.len() as f64;
    assert!((r.mrr - ranks.iter().map(|&x| 1.0 / x as f64).sum::<f64>() / n).abs() <= 1e-12);
    assert!((r.mr - ranks.iter().sum::<usize>() as f64 / n).abs() <= 1e-12);
    assert_eq!(r.hr10, ranks.iter().filter(|&&x| x <= 10).count() as f64 / n);
    assert!(r.hr1 <= r.hr5 && r.hr5 <= r.hr10);

    let c = run_condition_eval(&enc, &stores, &recs, &recs, ConditionProtocol::full(Modality::Road), &ctx, Exec::Parallel).unwrap();
    let by_id: std::collections::HashMap<u64, &TrajectoryRecord> = recs.iter().map(|r| (r.id(), r)).collect();
    let mut total = 0.0;
    for q in &c.per_query {
        let cond = &by_id[&q.query_id].road.as_ref().unwrap().segment_ids;
        let got: Vec<&[u32]> = q.retrieved.iter().map(|id| by_id[id].road.as_ref().unwrap().segment_ids.as_slice()).collect();
        let cr5 = coverage_rate(cond, &got).unwrap();
        assert!((cr5 - q.cr5).abs() <= 1e-12);
        assert!(q.cr5 >= q.cr1);
        total += cr5;
    }
    assert!((c.cr5 - total / c.per_query.len() as f64).abs() <= 1e-12);

    let full = run_two_stage_eval(&enc, &stores, &recs, Modality::Road, recs.len(), &ctx, Exec::Parallel).unwrap();
    let single = run_similarity_eval(&enc, &stores, &recs, ModalitySet::of(&[Modality::Top]).unwrap(), &ctx, Exec::Parallel).unwrap();
    assert_eq!(full.rank_list(), single.rank_list());
}

#[test]
fn stores_reencode_and_rebuild_identically() {
    let (enc, recs) = tiny_setup();
    for m in Modality::CANONICAL {
        let a = build_store(&enc, &recs, m, Exec::Parallel).unwrap();
        let b = build_store(&enc, &recs, m, Exec::Sequential).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(a.len(), recs.len());
        assert_eq!(a.width(), 16);
        for (i, rec) in recs.iter().enumerate() {
            let v = enc.embed_record(rec, m).unwrap().vector;
            for (&s, x) in a.row(i).iter().zip(&v) {
                assert!((s as f64 - x).abs() <= 1e-6);
            }
        }
    }
}
