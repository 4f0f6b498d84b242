//! Trains the toy model and prints the retrieval metrics.
//!
//! `cargo run --release --example toy -- [epochs] [lr] [rows cols min_hops max_hops]`

use std::time::Instant;

use omnitraj::encoders::{EncoderConfig, Modality, ModalitySet};
use omnitraj::evaluation::{
    coverage_table, ranking_table, run_condition_eval, run_similarity_eval, run_two_stage_eval,
    similarity_variants, ConditionProtocol, ReportContext,
};
use omnitraj::pipeline::{build_corpus, build_stores, train_model, CorpusSpec};
use omnitraj::training::TrainConfig;
use omnitraj::Exec;

fn main() -> omnitraj::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let epochs = args.get(1).map_or(30, |s| s.parse().unwrap());
    let lr = args.get(2).map_or(2e-3, |s| s.parse().unwrap());
    let exec = Exec::default();
    let t0 = Instant::now();
    let mut spec = CorpusSpec::toy(7);
    if let [rows, cols, lo, hi] = &args.get(3..).unwrap_or(&[])[..] {
        spec.rows = rows.parse().unwrap();
        spec.cols = cols.parse().unwrap();
        spec.min_hops = lo.parse().unwrap();
        spec.max_hops = hi.parse().unwrap();
    }
    let corpus = build_corpus(&spec)?;
    let recs = &corpus.dataset.records;
    let mean = |f: &dyn Fn(&omnitraj::data::TrajectoryRecord) -> usize| {
        recs.iter().map(f).sum::<usize>() as f64 / recs.len() as f64
    };
    println!(
        "corpus {} trajectories; points {:.1} top {:.2} road {:.2} region {:.2} ({:.1?})",
        recs.len(),
        mean(&|r| r.trajectory.len()),
        mean(&|r| r.topology.as_ref().unwrap().points.len()),
        mean(&|r| r.road.as_ref().unwrap().segment_ids.len()),
        mean(&|r| r.region.as_ref().unwrap().region_ids.len()),
        t0.elapsed()
    );
    let (train, test) = corpus.dataset.clone().split_at(2000);
    let enc = EncoderConfig::toy(corpus.road_vocab(), corpus.frame);
    let mut cfg = TrainConfig::toy(11);
    cfg.epochs = epochs;
    cfg.lr = lr;
    let t1 = Instant::now();
    let trained = train_model(&enc, &cfg, &train.records, exec, |e, _| {
        println!("epoch {:>2} loss {:.4} ({:.1?})", e.epoch, e.total, t1.elapsed());
        Ok(())
    })?;
    let stores = build_stores(&trained.encoders, &test.records, exec)?;
    let ctx = ReportContext::default();
    let mut reports = Vec::new();
    for v in similarity_variants() {
        reports.push(run_similarity_eval(&trained.encoders, &stores, &test.records, v, &ctx, exec)?);
    }
    reports.push(run_two_stage_eval(&trained.encoders, &stores, &test.records, Modality::Road, 20, &ctx, exec)?);
    reports.push(run_similarity_eval(
        &trained.encoders,
        &stores,
        &test.records,
        ModalitySet::of(&[Modality::Traj])?,
        &ctx,
        exec,
    )?);
    print!("{}", ranking_table(&reports));
    let mut cov = Vec::new();
    for m in [Modality::Road, Modality::Region] {
        cov.push(run_condition_eval(
            &trained.encoders,
            &stores,
            &test.records,
            &test.records,
            ConditionProtocol::full(m),
            &ctx,
            exec,
        )?);
    }
    print!("{}", coverage_table(&cov));
    println!("total {:.1?}", t0.elapsed());
    Ok(())
}
