use super::config::{supported_subsets, EncoderConfig, Modality, ModalitySet};
use super::model::{EncoderInput, Model};
use crate::config::KeyValues;
use crate::data::{Point, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, Fingerprint, Graph, ParamSet};
use crate::par::Exec;

/// Unit-norm embedding of one view of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityEmbedding {
    pub trajectory_id: u64,
    pub modality: Modality,
    pub vector: Vec<f64>,
}

/// Raw query payloads in map coordinates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryInputs {
    pub traj: Option<Vec<Point>>,
    pub top: Option<Vec<Point>>,
    pub road: Option<Vec<u32>>,
    pub region: Option<Vec<u32>>,
}

impl QueryInputs {
    pub fn subset(&self) -> ModalitySet {
        let mut mods = Vec::new();
        if self.traj.is_some() {
            mods.push(Modality::Traj);
        }
        if self.top.is_some() {
            mods.push(Modality::Top);
        }
        if self.road.is_some() {
            mods.push(Modality::Road);
        }
        if self.region.is_some() {
            mods.push(Modality::Region);
        }
        ModalitySet::of(&mods).expect("distinct by construction")
    }

    /// The given views of a stored record.
    pub fn from_record(rec: &TrajectoryRecord, subset: ModalitySet) -> Result<Self> {
        let missing = |m: Modality| Error::Data(format!("trajectory {} has no {m} view", rec.id()));
        let mut q = QueryInputs::default();
        for m in subset.members() {
            match m {
                Modality::Traj => q.traj = Some(rec.trajectory.points.clone()),
                Modality::Top => {
                    q.top = Some(rec.topology.as_ref().ok_or_else(|| missing(m))?.points.clone())
                }
                Modality::Road => {
                    q.road = Some(rec.road.as_ref().ok_or_else(|| missing(m))?.segment_ids.clone())
                }
                Modality::Region => {
                    q.region = Some(rec.region.as_ref().ok_or_else(|| missing(m))?.region_ids.clone())
                }
                Modality::Fused => unreachable!("not a set member"),
            }
        }
        Ok(q)
    }
}

/// Frozen model ready for inference.
#[derive(Debug, Clone)]
pub struct Encoders {
    pub model: Model,
    pub params: ParamSet,
    pub fingerprint: Fingerprint,
}

impl Encoders {
    pub fn new(model: Model, params: ParamSet, fingerprint: Fingerprint) -> Self {
        Encoders {
            model,
            params,
            fingerprint,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint, fingerprint: Fingerprint) -> Result<Self> {
        let kv = KeyValues::parse(&ck.config)?;
        let cfg = EncoderConfig::from_complete_kv(&kv)?;
        let (model, fresh) = Model::init(&cfg, 0)?;
        model.check_params(&fresh, &ck.params)?;
        Ok(Encoders::new(model, ck.params.clone(), fingerprint))
    }

    pub fn cfg(&self) -> &EncoderConfig {
        &self.model.cfg
    }

    pub fn input_for(&self, rec: &TrajectoryRecord, m: Modality) -> Result<EncoderInput> {
        let missing = || Error::Data(format!("trajectory {} has no {m} view", rec.id()));
        match m {
            Modality::Traj => self.model.traj_input(&rec.trajectory.points),
            Modality::Top => self
                .model
                .top_input(&rec.topology.as_ref().ok_or_else(missing)?.points),
            Modality::Road => self
                .model
                .road_input(&rec.road.as_ref().ok_or_else(missing)?.segment_ids),
            Modality::Region => self
                .model
                .region_input(&rec.region.as_ref().ok_or_else(missing)?.region_ids),
            Modality::Fused => Err(Error::Parameter("fused views are not stored".into())),
        }
    }

    pub fn embed_input(&self, m: Modality, input: &EncoderInput) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.params);
        let out = self.model.encoder(m)?.encode(&mut g, input)?;
        Ok(g.value(out).data().to_vec())
    }

    pub fn embed_record(&self, rec: &TrajectoryRecord, m: Modality) -> Result<ModalityEmbedding> {
        let input = self.input_for(rec, m)?;
        Ok(ModalityEmbedding {
            trajectory_id: rec.id(),
            modality: m,
            vector: self.embed_input(m, &input)?,
        })
    }

    pub fn embed_records(
        &self,
        recs: &[TrajectoryRecord],
        m: Modality,
        exec: Exec,
    ) -> Result<Vec<ModalityEmbedding>> {
        exec.map(recs, |r| self.embed_record(r, m)).into_iter().collect()
    }

    /// Embeds a query; several payloads go through the matching fusion projector.
    pub fn embed_query(&self, q: &QueryInputs) -> Result<(ModalitySet, Vec<f64>)> {
        let subset = q.subset();
        if subset.is_empty() {
            return Err(Error::Parameter("query has no payload".into()));
        }
        if subset.len() > 1 && self.model.fusion(subset).is_none() {
            let names: Vec<String> = supported_subsets().iter().map(|s| s.name()).collect();
            return Err(Error::Config(format!(
                "unsupported modality subset {subset}; supported: {}",
                names.join(", ")
            )));
        }
        let mut inputs = Vec::new();
        if let Some(p) = &q.traj {
            inputs.push((Modality::Traj, self.model.traj_input(p)?));
        }
        if let Some(p) = &q.top {
            inputs.push((Modality::Top, self.model.top_input(p)?));
        }
        if let Some(ids) = &q.road {
            inputs.push((Modality::Road, self.model.road_input(ids)?));
        }
        if let Some(ids) = &q.region {
            inputs.push((Modality::Region, self.model.region_input(ids)?));
        }
        let mut g = Graph::new(&self.params);
        let mut parts = Vec::with_capacity(inputs.len());
        for (m, input) in &inputs {
            parts.push((*m, self.model.encoder(*m)?.encode(&mut g, input)?));
        }
        let out = if parts.len() == 1 {
            parts[0].1
        } else {
            self.model.fuse(&mut g, &parts)?
        };
        Ok((subset, g.value(out).data().to_vec()))
    }
}
