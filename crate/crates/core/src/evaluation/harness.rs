//! Self-retrieval and condition-retrieval experiments.

use std::collections::HashMap;

use super::metrics::{coverage_rate, per_result_coverage};
use super::report::{CoverageReport, QueryCoverage, QueryRank, RankingReport, ReportContext, SweepCell};
use crate::data::{Frame, Point, TrajectoryRecord};
use crate::encoders::{Encoders, Modality, ModalitySet, QueryInputs};
use crate::error::{Error, Result};
use crate::measures::Measure;
use crate::par::Exec;
use crate::retrieval::{rank_of, topk, two_stage, EmbeddingStore, StoreSet};

/// Query variants reported for similarity retrieval.
pub fn similarity_variants() -> Vec<ModalitySet> {
    ["region", "road", "top+region", "top+road", "top+road+region", "top"]
        .iter()
        .map(|s| s.parse().expect("valid subset"))
        .collect()
}

fn query_vectors(encoders: &Encoders, queries: &[TrajectoryRecord], variant: ModalitySet, exec: Exec) -> Result<Vec<Vec<f64>>> {
    exec.map(queries, |rec| {
        let inputs = QueryInputs::from_record(rec, variant)?;
        encoders.embed_query(&inputs).map(|(_, v)| v)
    })
    .into_iter()
    .collect()
}

/// Ranks each query's own trajectory in the trajectory store.
pub fn run_similarity_eval(
    encoders: &Encoders,
    stores: &StoreSet,
    queries: &[TrajectoryRecord],
    variant: ModalitySet,
    context: &ReportContext,
    exec: Exec,
) -> Result<RankingReport> {
    let target = stores.get(Modality::Traj)?;
    let vectors = query_vectors(encoders, queries, variant, exec)?;
    let ranks: Vec<Result<QueryRank>> = exec.map_range(queries.len(), |i| {
        Ok(QueryRank {
            query_id: queries[i].id(),
            rank: rank_of(target, &vectors[i], queries[i].id())?,
        })
    });
    let ranks = ranks.into_iter().collect::<Result<Vec<_>>>()?;
    RankingReport::from_ranks(variant.name(), target.len(), ranks, context.clone())
}

/// Topology self-retrieval restricted to the `subset` best matches of the
/// query's own `coarse` view. Queries whose trajectory is filtered out get
/// rank `candidates`, the worst possible.
pub fn run_two_stage_eval(
    encoders: &Encoders,
    stores: &StoreSet,
    queries: &[TrajectoryRecord],
    coarse: Modality,
    subset: usize,
    context: &ReportContext,
    exec: Exec,
) -> Result<RankingReport> {
    let target = stores.get(Modality::Traj)?;
    let coarse_store = stores.get(coarse)?;
    let fine = query_vectors(encoders, queries, ModalitySet::of(&[Modality::Top])?, exec)?;
    let rough = query_vectors(encoders, queries, ModalitySet::of(&[coarse])?, exec)?;
    let k = subset.min(target.len());
    let ranks: Vec<Result<QueryRank>> = exec.map_range(queries.len(), |i| {
        let r = two_stage(coarse_store, target, &rough[i], &fine[i], subset, k)?;
        Ok(QueryRank {
            query_id: queries[i].id(),
            rank: r.rank_of(queries[i].id()).unwrap_or(target.len()),
        })
    });
    let ranks = ranks.into_iter().collect::<Result<Vec<_>>>()?;
    RankingReport::from_ranks(format!("top|{coarse}@{subset}"), target.len(), ranks, context.clone())
}

fn elements(rec: &TrajectoryRecord, m: Modality) -> Result<&[u32]> {
    let missing = || Error::Data(format!("trajectory {} has no {m} view", rec.id()));
    match m {
        Modality::Road => Ok(&rec.road.as_ref().ok_or_else(missing)?.segment_ids),
        Modality::Region => Ok(&rec.region.as_ref().ok_or_else(missing)?.region_ids),
        _ => Err(Error::Parameter(format!("conditions are road or region lists, not {m}"))),
    }
}

/// Condition protocol: the query's id list, optionally cut to its first
/// `condition_len` elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConditionProtocol {
    pub modality: Modality,
    pub condition_len: Option<usize>,
}

impl ConditionProtocol {
    pub fn full(modality: Modality) -> Self {
        ConditionProtocol {
            modality,
            condition_len: None,
        }
    }

    fn condition<'a>(&self, rec: &'a TrajectoryRecord) -> Result<&'a [u32]> {
        let ids = elements(rec, self.modality)?;
        Ok(match self.condition_len {
            Some(n) => &ids[..n.min(ids.len())],
            None => ids,
        })
    }
}

struct ConditionRun {
    conditions: Vec<Vec<u32>>,
    retrieved: Vec<Vec<u64>>,
}

fn retrieve_conditions(
    encoders: &Encoders,
    stores: &StoreSet,
    queries: &[TrajectoryRecord],
    protocol: ConditionProtocol,
    k: usize,
    exec: Exec,
) -> Result<ConditionRun> {
    let target = stores.get(Modality::Traj)?;
    let conditions = queries
        .iter()
        .map(|rec| protocol.condition(rec).map(<[u32]>::to_vec))
        .collect::<Result<Vec<_>>>()?;
    let found: Vec<Result<Vec<u64>>> = exec.map(&conditions, |cond| {
        let inputs = match protocol.modality {
            Modality::Road => QueryInputs {
                road: Some(cond.clone()),
                ..QueryInputs::default()
            },
            _ => QueryInputs {
                region: Some(cond.clone()),
                ..QueryInputs::default()
            },
        };
        let (_, q) = encoders.embed_query(&inputs)?;
        Ok(topk(target, &q, k)?.ids())
    });
    Ok(ConditionRun {
        conditions,
        retrieved: found.into_iter().collect::<Result<_>>()?,
    })
}

fn candidate_index(candidates: &[TrajectoryRecord]) -> HashMap<u64, &TrajectoryRecord> {
    candidates.iter().map(|r| (r.id(), r)).collect()
}

fn element_sets<'a>(
    index: &HashMap<u64, &'a TrajectoryRecord>,
    ids: &[u64],
    m: Modality,
) -> Result<Vec<&'a [u32]>> {
    ids.iter()
        .map(|id| {
            let rec = index
                .get(id)
                .ok_or_else(|| Error::Data(format!("retrieved trajectory {id} is not among the candidates")))?;
            elements(rec, m)
        })
        .collect()
}

/// Uses each query's road or region list as a condition and measures how
/// much of it the top-1 and top-5 results cover.
pub fn run_condition_eval(
    encoders: &Encoders,
    stores: &StoreSet,
    queries: &[TrajectoryRecord],
    candidates: &[TrajectoryRecord],
    protocol: ConditionProtocol,
    context: &ReportContext,
    exec: Exec,
) -> Result<CoverageReport> {
    let target = stores.get(Modality::Traj)?;
    let k = 5.min(target.len());
    let run = retrieve_conditions(encoders, stores, queries, protocol, k, exec)?;
    let index = candidate_index(candidates);
    let mut per_query = Vec::with_capacity(queries.len());
    for (i, rec) in queries.iter().enumerate() {
        let sets = element_sets(&index, &run.retrieved[i], protocol.modality)?;
        let cond = &run.conditions[i];
        per_query.push(QueryCoverage {
            query_id: rec.id(),
            condition_len: cond.len(),
            retrieved: run.retrieved[i].clone(),
            cr1: coverage_rate(cond, &sets[..1])?,
            cr5: coverage_rate(cond, &sets)?,
            cr5_per_result: per_result_coverage(cond, &sets)?,
        });
    }
    if per_query.is_empty() {
        return Err(Error::Parameter("no condition queries".into()));
    }
    let n = per_query.len() as f64;
    let mean = |f: fn(&QueryCoverage) -> f64| per_query.iter().map(f).sum::<f64>() / n;
    Ok(CoverageReport {
        modality: protocol.modality.to_string(),
        condition_len: protocol.condition_len,
        queries: per_query.len(),
        candidates: target.len(),
        cr1: mean(|q| q.cr1),
        cr5: mean(|q| q.cr5),
        cr5_per_result: mean(|q| q.cr5_per_result),
        per_query,
        context: context.clone(),
    })
}

/// Mean union coverage over a grid of condition lengths and k.
pub fn condition_sweep(
    encoders: &Encoders,
    stores: &StoreSet,
    queries: &[TrajectoryRecord],
    candidates: &[TrajectoryRecord],
    modality: Modality,
    lengths: &[usize],
    ks: &[usize],
    exec: Exec,
) -> Result<Vec<SweepCell>> {
    let index = candidate_index(candidates);
    let kmax = ks.iter().copied().max().unwrap_or(1);
    let mut cells = Vec::new();
    for &len in lengths {
        let protocol = ConditionProtocol {
            modality,
            condition_len: Some(len),
        };
        let run = retrieve_conditions(encoders, stores, queries, protocol, kmax, exec)?;
        for &k in ks {
            let mut total = 0.0;
            for (cond, ids) in run.conditions.iter().zip(&run.retrieved) {
                let sets = element_sets(&index, &ids[..k.min(ids.len())], modality)?;
                total += coverage_rate(cond, &sets)?;
            }
            cells.push(SweepCell {
                modality: modality.to_string(),
                condition_len: len,
                k,
                cr: total / queries.len().max(1) as f64,
            });
        }
    }
    Ok(cells)
}

/// Embedding-free baseline: each query's topology points are compared with
/// every candidate's raw points (both in frame coordinates) and the query's
/// own trajectory is ranked by ascending distance, ties to the smaller id.
pub fn run_heuristic_eval(
    records: &[TrajectoryRecord],
    frame: &Frame,
    measure: Measure,
    context: &ReportContext,
    exec: Exec,
) -> Result<RankingReport> {
    let local = |pts: &[Point]| pts.iter().map(|&p| frame.to_local(p)).collect::<Vec<_>>();
    let candidates: Vec<Vec<Point>> = records.iter().map(|r| local(&r.trajectory.points)).collect();
    let queries = records
        .iter()
        .map(|r| {
            r.topology
                .as_ref()
                .map(|t| local(&t.points))
                .ok_or_else(|| Error::Data(format!("trajectory {} has no top view", r.id())))
        })
        .collect::<Result<Vec<_>>>()?;
    let ranks: Vec<Result<QueryRank>> = exec.map_range(records.len(), |i| {
        let own_id = records[i].id();
        let own = measure.distance(&queries[i], &candidates[i])?;
        let mut better = 0;
        for (j, c) in candidates.iter().enumerate() {
            if j == i {
                continue;
            }
            let d = measure.distance(&queries[i], c)?;
            if d < own || (d == own && records[j].id() < own_id) {
                better += 1;
            }
        }
        Ok(QueryRank {
            query_id: own_id,
            rank: better + 1,
        })
    });
    let ranks = ranks.into_iter().collect::<Result<Vec<_>>>()?;
    RankingReport::from_ranks(measure.name(), records.len(), ranks, context.clone())
}

/// Checks that a store covers exactly the given records.
pub fn check_store_covers(store: &EmbeddingStore, records: &[TrajectoryRecord]) -> Result<()> {
    if store.len() != records.len() || records.iter().any(|r| store.position(r.id()).is_none()) {
        return Err(Error::Data(format!("{} store does not match the dataset", store.modality())));
    }
    Ok(())
}
