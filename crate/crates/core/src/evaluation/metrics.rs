//! Ranking and coverage metrics.

use std::collections::HashSet;

use crate::error::{Error, Result};

fn check_ranks(ranks: &[usize]) -> Result<()> {
    if ranks.is_empty() {
        return Err(Error::Parameter("no ranks to aggregate".into()));
    }
    if ranks.contains(&0) {
        return Err(Error::Parameter("ranks are 1-based".into()));
    }
    Ok(())
}

/// Mean rank of the relevant item.
pub fn mean_rank(ranks: &[usize]) -> Result<f64> {
    check_ranks(ranks)?;
    Ok(ranks.iter().map(|&r| r as f64).sum::<f64>() / ranks.len() as f64)
}

/// Mean reciprocal rank.
pub fn mrr(ranks: &[usize]) -> Result<f64> {
    check_ranks(ranks)?;
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

/// Fraction of ranks at most `k`.
pub fn hit_rate(ranks: &[usize], k: usize) -> Result<f64> {
    check_ranks(ranks)?;
    if k == 0 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

fn distinct(query: &[u32]) -> Result<HashSet<u32>> {
    if query.is_empty() {
        return Err(Error::Parameter("empty condition set".into()));
    }
    Ok(query.iter().copied().collect())
}

/// Share of the query elements found in the union of the retrieved element sets.
pub fn coverage_rate(query: &[u32], retrieved: &[&[u32]]) -> Result<f64> {
    let q = distinct(query)?;
    let union: HashSet<u32> = retrieved.iter().flat_map(|r| r.iter().copied()).collect();
    Ok(q.intersection(&union).count() as f64 / q.len() as f64)
}

/// Coverage of each retrieved set on its own, averaged over the results.
pub fn per_result_coverage(query: &[u32], retrieved: &[&[u32]]) -> Result<f64> {
    let q = distinct(query)?;
    if retrieved.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = retrieved
        .iter()
        .map(|r| {
            let set: HashSet<u32> = r.iter().copied().collect();
            q.intersection(&set).count() as f64 / q.len() as f64
        })
        .sum();
    Ok(total / retrieved.len() as f64)
}
