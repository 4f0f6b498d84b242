use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{hit_rate, mean_rank, mrr};
use crate::config::KeyValues;
use crate::error::Result;

/// Settings and identity recorded with every report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportContext {
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub fingerprint: String,
}

impl ReportContext {
    pub fn new(config: &KeyValues, seed: u64, fingerprint: impl Into<String>) -> Self {
        ReportContext {
            config: config.keys().map(|k| (k.to_string(), config.raw(k).unwrap_or_default().to_string())).collect(),
            seed,
            fingerprint: fingerprint.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRank {
    pub query_id: u64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    /// Query variant, e.g. `top`, `road+top` or `dtw`.
    pub variant: String,
    pub queries: usize,
    pub candidates: usize,
    #[serde(rename = "MR")]
    pub mr: f64,
    #[serde(rename = "MRR")]
    pub mrr: f64,
    #[serde(rename = "HR@1")]
    pub hr1: f64,
    #[serde(rename = "HR@5")]
    pub hr5: f64,
    #[serde(rename = "HR@10")]
    pub hr10: f64,
    pub ranks: Vec<QueryRank>,
    pub context: ReportContext,
}

impl RankingReport {
    pub fn from_ranks(
        variant: impl Into<String>,
        candidates: usize,
        ranks: Vec<QueryRank>,
        context: ReportContext,
    ) -> Result<Self> {
        let r: Vec<usize> = ranks.iter().map(|q| q.rank).collect();
        Ok(RankingReport {
            variant: variant.into(),
            queries: r.len(),
            candidates,
            mr: mean_rank(&r)?,
            mrr: mrr(&r)?,
            hr1: hit_rate(&r, 1)?,
            hr5: hit_rate(&r, 5)?,
            hr10: hit_rate(&r, 10)?,
            ranks,
            context,
        })
    }

    pub fn rank_list(&self) -> Vec<usize> {
        self.ranks.iter().map(|q| q.rank).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryCoverage {
    pub query_id: u64,
    pub condition_len: usize,
    pub retrieved: Vec<u64>,
    #[serde(rename = "CR@1")]
    pub cr1: f64,
    #[serde(rename = "CR@5")]
    pub cr5: f64,
    #[serde(rename = "CR@5_per_result")]
    pub cr5_per_result: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    /// Condition modality, `road` or `region`.
    pub modality: String,
    /// Condition length cap; `None` uses full id lists.
    pub condition_len: Option<usize>,
    pub queries: usize,
    pub candidates: usize,
    #[serde(rename = "CR@1")]
    pub cr1: f64,
    #[serde(rename = "CR@5")]
    pub cr5: f64,
    #[serde(rename = "CR@5_per_result")]
    pub cr5_per_result: f64,
    pub per_query: Vec<QueryCoverage>,
    pub context: ReportContext,
}

/// One cell of a condition-length by k sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub modality: String,
    pub condition_len: usize,
    pub k: usize,
    #[serde(rename = "CR")]
    pub cr: f64,
}

/// Serializes each item as one JSON line.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn ranking_table(reports: &[RankingReport]) -> String {
    let mut s = format!(
        "{:<16} {:>7} {:>9} {:>7} {:>7} {:>7} {:>7}\n",
        "variant", "queries", "MR", "MRR", "HR@1", "HR@5", "HR@10"
    );
    for r in reports {
        let _ = writeln!(
            s,
            "{:<16} {:>7} {:>9.3} {:>7.3} {:>7.3} {:>7.3} {:>7.3}",
            r.variant, r.queries, r.mr, r.mrr, r.hr1, r.hr5, r.hr10
        );
    }
    s
}

pub fn coverage_table(reports: &[CoverageReport]) -> String {
    let mut s = format!(
        "{:<8} {:>7} {:>7} {:>7} {:>7} {:>10}\n",
        "cond", "length", "queries", "CR@1", "CR@5", "CR@5/res"
    );
    for r in reports {
        let len = r.condition_len.map_or("full".to_string(), |l| l.to_string());
        let _ = writeln!(
            s,
            "{:<8} {:>7} {:>7} {:>7.3} {:>7.3} {:>10.3}",
            r.modality, len, r.queries, r.cr1, r.cr5, r.cr5_per_result
        );
    }
    s
}
