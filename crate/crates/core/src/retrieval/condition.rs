use std::collections::BTreeMap;

use super::search::{label, topk, two_stage, Provenance, RetrievalResult, Stage};
use super::store::EmbeddingStore;
use crate::encoders::{Encoders, Modality, QueryInputs};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoarseStage {
    /// Road or region.
    pub modality: Modality,
    pub subset: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuerySpec {
    pub inputs: QueryInputs,
    pub k: usize,
    pub coarse: Option<CoarseStage>,
}

impl QuerySpec {
    pub fn new(inputs: QueryInputs, k: usize) -> Self {
        QuerySpec {
            inputs,
            k,
            coarse: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.subset().is_empty() {
            return Err(Error::Parameter("query needs at least one modality payload".into()));
        }
        if self.k == 0 {
            return Err(Error::Parameter("k must be at least 1".into()));
        }
        if let Some(c) = self.coarse {
            if !matches!(c.modality, Modality::Road | Modality::Region) {
                return Err(Error::Parameter(format!("coarse stage must be road or region, not {}", c.modality)));
            }
            if c.subset < self.k {
                return Err(Error::Parameter(format!("subset size {} is smaller than k = {}", c.subset, self.k)));
            }
            let present = match c.modality {
                Modality::Road => self.inputs.road.is_some(),
                _ => self.inputs.region.is_some(),
            };
            if !present {
                return Err(Error::Parameter(format!("coarse stage needs a {} payload", c.modality)));
            }
        }
        Ok(())
    }
}

/// Stores per modality, all built from one checkpoint.
#[derive(Debug, Clone, Default)]
pub struct StoreSet {
    stores: BTreeMap<Modality, EmbeddingStore>,
}

impl StoreSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a store; every store must share ids and fingerprint with the rest.
    pub fn insert(&mut self, store: EmbeddingStore) -> Result<()> {
        if let Some(first) = self.stores.values().next() {
            if first.fingerprint() != store.fingerprint() {
                return Err(Error::Config(format!(
                    "{} store was built from a different checkpoint",
                    store.modality()
                )));
            }
            if !first.same_ids(&store) {
                return Err(Error::Config(format!(
                    "{} store holds different trajectory ids",
                    store.modality()
                )));
            }
        }
        self.stores.insert(store.modality(), store);
        Ok(())
    }

    pub fn get(&self, m: Modality) -> Result<&EmbeddingStore> {
        self.stores
            .get(&m)
            .ok_or_else(|| Error::Config(format!("no {m} store loaded")))
    }

    pub fn modalities(&self) -> Vec<Modality> {
        self.stores.keys().copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &EmbeddingStore> {
        self.stores.values()
    }

    pub fn len(&self) -> usize {
        self.stores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stores.is_empty()
    }
}

/// Encodes the payloads (fused when several) and searches the trajectory store.
///
/// With a coarse stage, the coarse payload alone is first matched against the
/// store of its own modality and only the surviving ids are ranked.
pub fn condition_query(stores: &StoreSet, spec: &QuerySpec, encoders: &Encoders) -> Result<RetrievalResult> {
    spec.validate()?;
    let target = stores.get(Modality::Traj)?;
    if target.fingerprint() != &encoders.fingerprint {
        return Err(Error::Config("stores were built from a different checkpoint".into()));
    }
    if spec.k > target.len() {
        return Err(Error::Parameter(format!("k = {} exceeds {} candidates", spec.k, target.len())));
    }
    let (subset, q) = encoders.embed_query(&spec.inputs)?;
    let mut result = match spec.coarse {
        None => topk(target, &q, spec.k)?,
        Some(c) => {
            let coarse_inputs = match c.modality {
                Modality::Road => QueryInputs {
                    road: spec.inputs.road.clone(),
                    ..QueryInputs::default()
                },
                _ => QueryInputs {
                    region: spec.inputs.region.clone(),
                    ..QueryInputs::default()
                },
            };
            let (_, qc) = encoders.embed_query(&coarse_inputs)?;
            two_stage(stores.get(c.modality)?, target, &qc, &q, c.subset, spec.k)?
        }
    };
    result.provenance = Provenance {
        modalities: label(subset),
        target: Modality::Traj,
        stage: match spec.coarse {
            None => Stage::Single,
            Some(c) => Stage::TwoStage {
                coarse: c.modality,
                subset: c.subset,
            },
        },
    };
    Ok(result)
}
