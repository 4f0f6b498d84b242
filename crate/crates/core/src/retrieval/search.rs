//! Exact cosine top-k by tiled linear scan.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::store::EmbeddingStore;
use crate::encoders::{Modality, ModalitySet};
use crate::error::{Error, Result};
use crate::par::Exec;

/// Query vectors must be unit length to within this tolerance.
pub const QUERY_NORM_TOL: f64 = 1e-6;
const ROW_TILE: usize = 256;
const QUERY_TILE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: u64,
    pub score: f64,
}

/// Ranking order: higher score first, then smaller id.
fn ranks_before(a: &Hit, b: &Hit) -> bool {
    a.score > b.score || (a.score == b.score && a.id < b.id)
}

// heap element whose maximum is the current worst kept hit
struct Worst(Hit);

impl PartialEq for Worst {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Worst {}
impl PartialOrd for Worst {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Worst {
    fn cmp(&self, o: &Self) -> Ordering {
        if ranks_before(&self.0, &o.0) {
            Ordering::Less
        } else if ranks_before(&o.0, &self.0) {
            Ordering::Greater
        } else {
            Ordering::Equal
        }
    }
}

struct TopK {
    k: usize,
    heap: BinaryHeap<Worst>,
}

impl TopK {
    fn new(k: usize) -> Self {
        TopK {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    fn offer(&mut self, hit: Hit) {
        if self.heap.len() < self.k {
            self.heap.push(Worst(hit));
        } else if let Some(top) = self.heap.peek() {
            if ranks_before(&hit, &top.0) {
                self.heap.pop();
                self.heap.push(Worst(hit));
            }
        }
    }

    fn finish(self) -> Vec<Hit> {
        // ascending by Worst order is best-first
        self.heap.into_sorted_vec().into_iter().map(|w| w.0).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum Stage {
    Single,
    TwoStage { coarse: Modality, subset: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Query modalities, e.g. `top+road`.
    pub modalities: String,
    /// Modality of the searched store.
    pub target: Modality,
    #[serde(flatten)]
    pub stage: Stage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub hits: Vec<Hit>,
    pub provenance: Provenance,
}

impl RetrievalResult {
    pub fn ids(&self) -> Vec<u64> {
        self.hits.iter().map(|h| h.id).collect()
    }

    /// 1-based rank of `id`, if retrieved.
    pub fn rank_of(&self, id: u64) -> Option<usize> {
        self.hits.iter().position(|h| h.id == id).map(|p| p + 1)
    }
}

fn check_query(store: &EmbeddingStore, q: &[f64]) -> Result<()> {
    if q.len() != store.width() {
        return Err(Error::Shape(format!(
            "query width {} against store width {}",
            q.len(),
            store.width()
        )));
    }
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !n.is_finite() || (n - 1.0).abs() > QUERY_NORM_TOL {
        return Err(Error::Parameter(format!("query norm {n} is not 1")));
    }
    Ok(())
}

fn check_k(k: usize, available: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    if k > available {
        return Err(Error::Parameter(format!("k = {k} exceeds {available} candidates")));
    }
    Ok(())
}

#[inline]
fn dot(row: &[f32], q: &[f64]) -> f64 {
    row.iter().zip(q).map(|(&a, &b)| a as f64 * b).sum()
}

/// Scans `rows` (store row indices, or all rows when `None`) for a tile of
/// queries, keeping each query's best `k`.
fn scan(store: &EmbeddingStore, queries: &[&[f64]], rows: Option<&[usize]>, k: usize) -> Vec<Vec<Hit>> {
    let mut keep: Vec<TopK> = queries.iter().map(|_| TopK::new(k)).collect();
    let total = rows.map_or(store.len(), <[usize]>::len);
    let ids = store.ids();
    let mut start = 0;
    while start < total {
        let end = (start + ROW_TILE).min(total);
        for (q, top) in queries.iter().zip(keep.iter_mut()) {
            for j in start..end {
                let r = rows.map_or(j, |rs| rs[j]);
                top.offer(Hit {
                    id: ids[r],
                    score: dot(store.row(r), q),
                });
            }
        }
        start = end;
    }
    keep.into_iter().map(TopK::finish).collect()
}

fn single(modalities: String, target: Modality, hits: Vec<Hit>) -> RetrievalResult {
    RetrievalResult {
        hits,
        provenance: Provenance {
            modalities,
            target,
            stage: Stage::Single,
        },
    }
}

/// Exact top-k of `store` for a unit query; ties go to the smaller id.
pub fn topk(store: &EmbeddingStore, q: &[f64], k: usize) -> Result<RetrievalResult> {
    check_k(k, store.len())?;
    check_query(store, q)?;
    let hits = scan(store, &[q], None, k).pop().expect("one query");
    Ok(single(store.modality().to_string(), store.modality(), hits))
}

/// Batched [`topk`]; each query is handled by exactly one worker.
pub fn topk_batch(
    store: &EmbeddingStore,
    queries: &[Vec<f64>],
    k: usize,
    exec: Exec,
) -> Result<Vec<RetrievalResult>> {
    check_k(k, store.len())?;
    for q in queries {
        check_query(store, q)?;
    }
    let tiles: Vec<&[Vec<f64>]> = queries.chunks(QUERY_TILE).collect();
    let per_tile = exec.map(&tiles, |tile| {
        let qs: Vec<&[f64]> = tile.iter().map(Vec::as_slice).collect();
        scan(store, &qs, None, k)
    });
    let name = store.modality().to_string();
    Ok(per_tile
        .into_iter()
        .flatten()
        .map(|hits| single(name.clone(), store.modality(), hits))
        .collect())
}

/// Top-`subset` ids from `coarse`, then exact top-k in `fine` restricted to them.
pub fn two_stage(
    coarse: &EmbeddingStore,
    fine: &EmbeddingStore,
    q_coarse: &[f64],
    q_fine: &[f64],
    subset: usize,
    k: usize,
) -> Result<RetrievalResult> {
    if subset < k {
        return Err(Error::Parameter(format!("subset size {subset} is smaller than k = {k}")));
    }
    if !coarse.same_ids(fine) {
        return Err(Error::Config(format!(
            "{} store and {} store hold different trajectory ids",
            coarse.modality(),
            fine.modality()
        )));
    }
    check_k(k, fine.len())?;
    check_query(fine, q_fine)?;
    let survivors = topk(coarse, q_coarse, subset.min(coarse.len()))?;
    let mut rows: Vec<usize> = survivors
        .hits
        .iter()
        .map(|h| fine.position(h.id).expect("same id universe"))
        .collect();
    rows.sort_unstable();
    let hits = scan(fine, &[q_fine], Some(&rows), k).pop().expect("one query");
    Ok(RetrievalResult {
        hits,
        provenance: Provenance {
            modalities: fine.modality().to_string(),
            target: fine.modality(),
            stage: Stage::TwoStage {
                coarse: coarse.modality(),
                subset,
            },
        },
    })
}

/// 1-based rank `id` would get in a full [`topk`] of `store` for `q`.
pub fn rank_of(store: &EmbeddingStore, q: &[f64], id: u64) -> Result<usize> {
    check_query(store, q)?;
    let row = store
        .position(id)
        .ok_or_else(|| Error::Data(format!("trajectory {id} is not in the {} store", store.modality())))?;
    let own = Hit {
        id,
        score: dot(store.row(row), q),
    };
    let ids = store.ids();
    let better = (0..store.len())
        .filter(|&r| {
            ranks_before(
                &Hit {
                    id: ids[r],
                    score: dot(store.row(r), q),
                },
                &own,
            )
        })
        .count();
    Ok(better + 1)
}

/// Provenance label for a query subset.
pub(crate) fn label(set: ModalitySet) -> String {
    set.name()
}
