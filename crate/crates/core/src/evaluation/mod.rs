//! Metrics and experiment harnesses.

mod harness;
mod metrics;
mod report;

pub use harness::{
    check_store_covers, condition_sweep, run_condition_eval, run_heuristic_eval, run_similarity_eval,
    run_two_stage_eval, similarity_variants, ConditionProtocol,
};
pub use metrics::{coverage_rate, hit_rate, mean_rank, mrr, per_result_coverage};
pub use report::{
    coverage_table, ranking_table, to_jsonl, CoverageReport, QueryCoverage, QueryRank, RankingReport,
    ReportContext, SweepCell,
};
