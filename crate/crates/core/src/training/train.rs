//! Contrastive training loop.
//!
//! Every sample gets its own graph so samples can be encoded in parallel.
//! The batch loss is built on a second graph over the stacked embeddings;
//! its input gradients seed the per-sample backward passes, whose parameter
//! gradients are then summed in sample order.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{augment_region, augment_road, AugmentationPolicy, POLICY_KEYS};
use super::loss::{bidirectional_nodes, DEFAULT_TAU};
use crate::config::KeyValues;
use crate::data::{RegionSeq, RoadSeq, TrajectoryRecord};
use crate::encoders::{EncoderInput, Modality, ModalitySet, Model};
use crate::error::{Error, Result};
use crate::nn::{Adam, Graph, ParamGrads, ParamSet, Tensor, Var};
use crate::par::Exec;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub schedule: Schedule,
    pub tau: f64,
    pub seed: u64,
    pub policy: AugmentationPolicy,
    /// Views aligned with the trajectory; multi-modality sets are fused.
    pub targets: Vec<ModalitySet>,
}

pub const TRAIN_KEYS: &[&str] = &["epochs", "batch", "lr", "schedule", "tau", "seed", "targets"];

/// Learning-rate schedule over the optimizer steps of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    Constant,
    /// Half-cosine decay from `lr` at the first step to zero after the last.
    Cosine,
}

impl Schedule {
    /// Rate for 0-based `step` out of `total` steps.
    pub fn rate(self, lr: f64, step: usize, total: usize) -> f64 {
        match self {
            Schedule::Constant => lr,
            Schedule::Cosine => 0.5 * lr * (1.0 + (std::f64::consts::PI * step as f64 / total.max(1) as f64).cos()),
        }
    }
}

impl std::str::FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Schedule::Constant),
            "cosine" => Ok(Schedule::Cosine),
            _ => Err(Error::Config(format!("unknown schedule {s:?}"))),
        }
    }
}

impl std::fmt::Display for Schedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Schedule::Constant => "constant",
            Schedule::Cosine => "cosine",
        })
    }
}

/// Views aligned by default: each single modality plus every fused subset.
pub fn default_targets() -> Vec<ModalitySet> {
    crate::encoders::supported_subsets()
}

impl TrainConfig {
    pub fn toy(seed: u64) -> Self {
        TrainConfig {
            epochs: 30,
            batch: 64,
            lr: 2e-3,
            schedule: Schedule::Cosine,
            tau: DEFAULT_TAU,
            seed,
            policy: AugmentationPolicy::default(),
            targets: default_targets(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch < 2 {
            return Err(Error::Config("batch must be at least 2".into()));
        }
        if !(self.lr > 0.0) || !(self.tau > 0.0) {
            return Err(Error::Config("lr and tau must be positive".into()));
        }
        if self.targets.is_empty() {
            return Err(Error::Config("no training targets".into()));
        }
        if self.targets.iter().any(|t| t.contains(Modality::Traj) || t.is_empty()) {
            return Err(Error::Config("targets must not include the trajectory view".into()));
        }
        self.policy.validate()
    }

    pub fn to_kv(&self, kv: &mut KeyValues) {
        kv.set("epochs", self.epochs);
        kv.set("batch", self.batch);
        kv.set("lr", self.lr);
        kv.set("schedule", self.schedule);
        kv.set("tau", self.tau);
        kv.set("seed", self.seed);
        let names: Vec<String> = self.targets.iter().map(|t| t.name()).collect();
        kv.set("targets", names.join(","));
        self.policy.to_kv(kv);
    }

    pub fn from_kv(kv: &KeyValues, base: &TrainConfig) -> Result<Self> {
        let targets = match kv.raw("targets") {
            None => base.targets.clone(),
            Some(s) => s
                .split(',')
                .map(|t| t.trim().parse::<ModalitySet>().map_err(|e| Error::Config(e.to_string())))
                .collect::<Result<Vec<_>>>()?,
        };
        let cfg = TrainConfig {
            epochs: kv.get_or("epochs", base.epochs)?,
            batch: kv.get_or("batch", base.batch)?,
            lr: kv.get_or("lr", base.lr)?,
            schedule: kv.get_or("schedule", base.schedule)?,
            tau: kv.get_or("tau", base.tau)?,
            seed: kv.get_or("seed", base.seed)?,
            policy: AugmentationPolicy::from_kv(kv, &base.policy)?,
            targets,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn known_keys() -> Vec<&'static str> {
        TRAIN_KEYS.iter().chain(POLICY_KEYS).copied().collect()
    }
}

/// A training record with its fixed inputs precomputed.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub id: u64,
    pub traj: EncoderInput,
    pub top: EncoderInput,
    pub road: RoadSeq,
    pub region: RegionSeq,
}

pub fn prepare_samples(model: &Model, records: &[TrajectoryRecord], exec: Exec) -> Result<Vec<PreparedSample>> {
    exec.map(records, |r| {
        let missing = |v: &str| Error::Data(format!("trajectory {} has no {v} view", r.id()));
        Ok(PreparedSample {
            id: r.id(),
            traj: model.traj_input(&r.trajectory.points)?,
            top: model.top_input(&r.topology.as_ref().ok_or_else(|| missing("topology"))?.points)?,
            road: r.road.clone().ok_or_else(|| missing("road"))?,
            region: r.region.clone().ok_or_else(|| missing("region"))?,
        })
    })
    .into_iter()
    .collect()
}

/// Mean losses of one epoch, weighted by batch size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// `traj->X` and `X->traj` per target.
    pub losses: BTreeMap<String, f64>,
    pub total: f64,
}

/// Mixes a seed with a stream index (splitmix64 finalizer).
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct StepViews {
    traj: EncoderInput,
    top: EncoderInput,
    road: EncoderInput,
    region: EncoderInput,
}

fn epoch_views(model: &Model, s: &PreparedSample, cfg: &TrainConfig, epoch_seed: u64) -> Result<StepViews> {
    let seed = mix_seed(epoch_seed, s.id);
    let road = augment_road(&s.road, &cfg.policy, model.cfg.road_vocab, seed);
    let region = augment_region(&s.region, &cfg.policy, mix_seed(seed, 1));
    debug_assert_eq!(road.trajectory_id, s.id);
    debug_assert_eq!(region.trajectory_id, s.id);
    Ok(StepViews {
        traj: s.traj.clone(),
        top: s.top.clone(),
        road: model.road_input(&road.segment_ids)?,
        region: model.region_input(&region.region_ids)?,
    })
}

/// Per-sample forward: the trajectory embedding followed by one embedding
/// per target.
fn forward_sample<'p>(
    model: &Model,
    params: &'p ParamSet,
    views: &StepViews,
    targets: &[ModalitySet],
) -> Result<(Graph<'p>, Vec<Var>)> {
    let mut g = Graph::new(params);
    let traj = model.traj.encode(&mut g, &views.traj)?;
    let mut base: Vec<(Modality, Var)> = Vec::new();
    let mut get = |g: &mut Graph<'p>, m: Modality| -> Result<Var> {
        if let Some(&(_, v)) = base.iter().find(|(b, _)| *b == m) {
            return Ok(v);
        }
        let input = match m {
            Modality::Top => &views.top,
            Modality::Road => &views.road,
            Modality::Region => &views.region,
            _ => unreachable!("validated targets"),
        };
        let v = model.encoder(m)?.encode(g, input)?;
        base.push((m, v));
        Ok(v)
    };
    let mut outs = vec![traj];
    for t in targets {
        let members = t.members();
        if members.len() == 1 {
            outs.push(get(&mut g, members[0])?);
        } else {
            let parts = members
                .iter()
                .map(|&m| Ok((m, get(&mut g, m)?)))
                .collect::<Result<Vec<_>>>()?;
            outs.push(model.fuse(&mut g, &parts)?);
        }
    }
    Ok((g, outs))
}

struct StepResult {
    grads: ParamGrads,
    terms: Vec<(f64, f64)>,
    total: f64,
}

fn train_step(
    model: &Model,
    params: &ParamSet,
    views: &[StepViews],
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<StepResult> {
    let forwards: Vec<(Graph, Vec<Var>)> = exec
        .map(views, |v| forward_sample(model, params, v, &cfg.targets))
        .into_iter()
        .collect::<Result<_>>()?;
    let b = forwards.len();
    let slots = cfg.targets.len() + 1;

    let empty = ParamSet::new();
    let mut lg = Graph::new(&empty);
    let mut stacked = Vec::with_capacity(slots);
    for slot in 0..slots {
        let rows: Vec<Vec<f64>> = forwards
            .iter()
            .map(|(g, outs)| g.value(outs[slot]).data().to_vec())
            .collect();
        stacked.push(lg.input(Tensor::from_rows(&rows)?)?);
    }
    let nodes = bidirectional_nodes(&mut lg, stacked[0], &stacked[1..], cfg.tau)?;
    let total = lg.value(nodes.total).data()[0];
    if !total.is_finite() {
        return Err(Error::Numeric("training loss".into()));
    }
    let terms = nodes
        .terms
        .iter()
        .map(|&(f, r)| (lg.value(f).data()[0], lg.value(r).data()[0]))
        .collect();
    let seeds = lg.backward_scalar(nodes.total)?;
    let seed_grads: Vec<Tensor> = stacked
        .iter()
        .map(|&v| seeds.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(b, model.cfg.h)))
        .collect();

    let indexed: Vec<(usize, &(Graph, Vec<Var>))> = forwards.iter().enumerate().collect();
    let per_sample: Vec<Result<ParamGrads>> = exec.map(&indexed, |&(i, (g, outs))| {
        let seeds = outs
            .iter()
            .zip(&seed_grads)
            .map(|(&v, sg)| Ok((v, Tensor::from_vec(1, sg.cols(), sg.row(i).to_vec())?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(g.backward(seeds)?.params)
    });
    let mut grads = ParamGrads::new(params.len());
    for g in per_sample {
        grads.accumulate(g?);
    }
    Ok(StepResult { grads, terms, total })
}

/// Runs `cfg.epochs` epochs of Adam over `samples`, updating `params` in
/// place. On a numeric failure `params` hold the last good state.
pub fn train<F>(
    model: &Model,
    params: &mut ParamSet,
    samples: &[PreparedSample],
    cfg: &TrainConfig,
    exec: Exec,
    mut on_epoch: F,
) -> Result<Vec<EpochLoss>>
where
    F: FnMut(&EpochLoss, &ParamSet) -> Result<()>,
{
    cfg.validate()?;
    if samples.len() < 2 {
        return Err(Error::Data("training needs at least two trajectories".into()));
    }
    let mut ids: Vec<u64> = samples.iter().map(|s| s.id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Data("duplicate trajectory ids in training set".into()));
    }
    let mut opt = Adam::new(params, cfg.lr);
    let per_epoch = samples.len() / cfg.batch + usize::from(samples.len() % cfg.batch >= 2);
    let total_steps = per_epoch * cfg.epochs;
    let mut step_no = 0;
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let epoch_seed = mix_seed(cfg.seed, epoch as u64);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        let mut sums = vec![(0.0, 0.0); cfg.targets.len()];
        let mut total = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch) {
            if chunk.len() < 2 {
                continue;
            }
            let views = exec
                .map(chunk, |&i| epoch_views(model, &samples[i], cfg, epoch_seed))
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            let step = train_step(model, params, &views, cfg, exec)?;
            opt.lr = cfg.schedule.rate(cfg.lr, step_no, total_steps);
            opt.step(params, &step.grads)?;
            step_no += 1;
            let w = chunk.len() as f64;
            for (s, (f, r)) in sums.iter_mut().zip(&step.terms) {
                s.0 += f * w;
                s.1 += r * w;
            }
            total += step.total * w;
            seen += chunk.len();
        }
        let n = seen.max(1) as f64;
        let mut losses = BTreeMap::new();
        for (t, (f, r)) in cfg.targets.iter().zip(sums) {
            losses.insert(format!("traj->{}", t.name()), f / n);
            losses.insert(format!("{}->traj", t.name()), r / n);
        }
        let record = EpochLoss {
            epoch,
            losses,
            total: total / n,
        };
        on_epoch(&record, params)?;
        curve.push(record);
    }
    Ok(curve)
}
