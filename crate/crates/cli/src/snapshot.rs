use std::collections::HashMap;
use std::path::Path;

use omnitraj::config::KeyValues;
use omnitraj::data::{Dataset, GridSpec, RoadNetwork, TrajectoryRecord};
use omnitraj::encoders::{Encoders, Modality};
use omnitraj::nn::{fingerprint_hex, Checkpoint};
use omnitraj::retrieval::{EmbeddingStore, StoreSet};
use omnitraj::{Error, Result};

use crate::layout;

/// Everything the query service reads; never mutated once built.
pub struct Snapshot {
    pub encoders: Encoders,
    pub stores: StoreSet,
    pub records: HashMap<u64, TrajectoryRecord>,
    pub grid: GridSpec,
    pub network: RoadNetwork,
}

impl Snapshot {
    /// Checks that the stores come from `encoders` and index known records.
    pub fn new(
        encoders: Encoders,
        stores: StoreSet,
        records: Vec<TrajectoryRecord>,
        grid: GridSpec,
        network: RoadNetwork,
    ) -> Result<Self> {
        let traj = stores.get(Modality::Traj)?;
        for s in stores.iter() {
            if s.fingerprint() != &encoders.fingerprint {
                return Err(Error::Config(format!(
                    "{} store fingerprint {} does not match checkpoint {}",
                    s.modality(),
                    fingerprint_hex(s.fingerprint()),
                    fingerprint_hex(&encoders.fingerprint)
                )));
            }
        }
        let records: HashMap<u64, TrajectoryRecord> = records.into_iter().map(|r| (r.id(), r)).collect();
        if let Some(id) = traj.ids().iter().find(|id| !records.contains_key(id)) {
            return Err(Error::Data(format!("store id {id} has no trajectory record")));
        }
        if encoders.cfg().road_vocab != network.segment_count() {
            return Err(Error::Config(format!(
                "checkpoint road vocabulary {} but the network has {} segments",
                encoders.cfg().road_vocab,
                network.segment_count()
            )));
        }
        Ok(Snapshot {
            encoders,
            stores,
            records,
            grid,
            network,
        })
    }

    /// Loads the checkpoint, stores, indexed dataset, grid and network of `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let (ck, fp) = Checkpoint::read(&dir.join(layout::MODEL))?;
        let encoders = Encoders::from_checkpoint(&ck, fp)?;
        let manifest = KeyValues::parse(&std::fs::read_to_string(dir.join(layout::STORES).join(layout::MANIFEST))?)?;
        let dataset: String = manifest.get("dataset")?;
        let mut stores = StoreSet::new();
        for m in Modality::CANONICAL {
            let path = layout::store_file(dir, m.name());
            if path.exists() {
                stores.insert(EmbeddingStore::read(&path)?)?;
            }
        }
        let records = Dataset::read(resolve(dir, &dataset))?.records;
        let grid = read_grid(&dir.join(layout::GRID))?;
        let network = RoadNetwork::read(dir.join(layout::NETWORK))?;
        Snapshot::new(encoders, stores, records, grid, network)
    }

    pub fn candidates(&self) -> usize {
        self.stores.get(Modality::Traj).map_or(0, EmbeddingStore::len)
    }
}

/// Relative paths are taken from `dir`.
pub fn resolve(dir: &Path, path: &str) -> std::path::PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

pub fn read_grid(path: &Path) -> Result<GridSpec> {
    let g: GridSpec = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    GridSpec::new(g.bbox, g.rows, g.cols)
}

pub fn write_grid(path: &Path, grid: &GridSpec) -> Result<()> {
    std::fs::write(path, serde_json::to_string(grid)? + "\n")?;
    Ok(())
}
