//! End-to-end plumbing: synthetic corpus, training, store building.

use crate::config::KeyValues;
use crate::data::{
    generate_network, generate_trajectories_with, Dataset, Frame, GridSpec, RoadNetwork, TopologyParams,
    TrajectoryRecord, WalkOptions,
};
use crate::encoders::{EncoderConfig, Encoders, Modality, Model};
use crate::error::{Error, Result};
use crate::nn::{fingerprint_of, Checkpoint};
use crate::par::Exec;
use crate::retrieval::{build_store, StoreSet};
use crate::training::{prepare_samples, train, EpochLoss, TrainConfig};

/// Trajectories shorter than this are dropped before view extraction.
pub const MIN_POINTS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
    pub jitter: f64,
    pub count: usize,
    pub min_hops: usize,
    pub max_hops: usize,
    pub noise: f64,
    pub grid_cells: u32,
    pub topology: TopologyParams,
}

pub const CORPUS_KEYS: &[&str] = &[
    "seed", "rows", "cols", "jitter", "count", "min_hops", "max_hops", "noise", "grid_cells", "topology_eps",
    "topology_angle_deg",
];

impl CorpusSpec {
    /// 24x24 lattice, 2,200 walks of 8 to 20 hops.
    pub fn toy(seed: u64) -> Self {
        CorpusSpec {
            seed,
            rows: 24,
            cols: 24,
            jitter: 0.2,
            count: 2200,
            min_hops: 8,
            max_hops: 20,
            noise: 0.01,
            grid_cells: 16,
            topology: TopologyParams::default(),
        }
    }

    pub fn to_kv(&self, kv: &mut KeyValues) {
        kv.set("seed", self.seed);
        kv.set("rows", self.rows);
        kv.set("cols", self.cols);
        kv.set("jitter", self.jitter);
        kv.set("count", self.count);
        kv.set("min_hops", self.min_hops);
        kv.set("max_hops", self.max_hops);
        kv.set("noise", self.noise);
        kv.set("grid_cells", self.grid_cells);
        kv.set("topology_eps", self.topology.epsilon);
        kv.set("topology_angle_deg", self.topology.angle_min.to_degrees());
    }

    pub fn from_kv(kv: &KeyValues, base: &CorpusSpec) -> Result<Self> {
        Ok(CorpusSpec {
            seed: kv.get_or("seed", base.seed)?,
            rows: kv.get_or("rows", base.rows)?,
            cols: kv.get_or("cols", base.cols)?,
            jitter: kv.get_or("jitter", base.jitter)?,
            count: kv.get_or("count", base.count)?,
            min_hops: kv.get_or("min_hops", base.min_hops)?,
            max_hops: kv.get_or("max_hops", base.max_hops)?,
            noise: kv.get_or("noise", base.noise)?,
            grid_cells: kv.get_or("grid_cells", base.grid_cells)?,
            topology: TopologyParams {
                epsilon: kv.get_or("topology_eps", base.topology.epsilon)?,
                angle_min: kv
                    .get_or("topology_angle_deg", base.topology.angle_min.to_degrees())?
                    .to_radians(),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub network: RoadNetwork,
    pub grid: GridSpec,
    pub frame: Frame,
    pub dataset: Dataset,
}

impl Corpus {
    pub fn road_vocab(&self) -> usize {
        self.network.segment_count()
    }
}

/// Network, walks and raw records; views are not yet extracted.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    let network = generate_network(spec.seed, spec.rows, spec.cols, spec.jitter)?;
    let mut walk = WalkOptions::new(spec.count, spec.seed.wrapping_add(1), spec.min_hops, spec.max_hops);
    walk.noise = spec.noise;
    let records = generate_trajectories_with(&network, &walk)?
        .into_iter()
        .map(|(t, road)| {
            let mut r = TrajectoryRecord::new(t);
            r.road = Some(road);
            r
        })
        .collect();
    let grid = network.grid(spec.grid_cells)?;
    let frame = Frame::from_bbox(&grid.bbox)?;
    Ok(Corpus {
        network,
        grid,
        frame,
        dataset: Dataset::new(records)?.filter_short(MIN_POINTS),
    })
}

/// [`generate_corpus`] followed by view extraction.
pub fn build_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    let mut c = generate_corpus(spec)?;
    c.dataset.extract(&c.grid, &spec.topology)?;
    Ok(c)
}

/// Encoder and training settings written into the checkpoint.
pub fn checkpoint_config(enc: &EncoderConfig, train: &TrainConfig) -> KeyValues {
    let mut kv = enc.to_kv();
    train.to_kv(&mut kv);
    kv
}

pub struct TrainedModel {
    pub checkpoint: Checkpoint,
    pub encoders: Encoders,
    pub curve: Vec<EpochLoss>,
}

/// Initializes from `train.seed` and trains on `records`.
pub fn train_model<F>(
    enc: &EncoderConfig,
    train_cfg: &TrainConfig,
    records: &[TrajectoryRecord],
    exec: Exec,
    on_epoch: F,
) -> Result<TrainedModel>
where
    F: FnMut(&EpochLoss, &crate::nn::ParamSet) -> Result<()>,
{
    let (model, mut params) = Model::init(enc, train_cfg.seed)?;
    let samples = prepare_samples(&model, records, exec)?;
    let curve = train(&model, &mut params, &samples, train_cfg, exec, on_epoch)?;
    let bytes = Checkpoint {
        config: checkpoint_config(enc, train_cfg).to_text(),
        params,
    }
    .to_bytes()?;
    // serve the f32-rounded weights, exactly as a reload would see them
    let checkpoint = Checkpoint::from_bytes(&bytes)?;
    let encoders = Encoders::new(model, checkpoint.params.clone(), fingerprint_of(&bytes));
    Ok(TrainedModel {
        checkpoint,
        encoders,
        curve,
    })
}

/// Stores for every view of `records`.
pub fn build_stores(encoders: &Encoders, records: &[TrajectoryRecord], exec: Exec) -> Result<StoreSet> {
    if records.is_empty() {
        return Err(Error::Data("no trajectories to index".into()));
    }
    let mut set = StoreSet::new();
    for m in Modality::CANONICAL {
        set.insert(build_store(encoders, records, m, exec)?)?;
    }
    Ok(set)
}
