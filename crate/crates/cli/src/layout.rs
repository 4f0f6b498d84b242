//! File names inside an artifact directory.

use std::path::{Path, PathBuf};

pub const NETWORK: &str = "network.jsonl";
pub const GRID: &str = "grid.json";
pub const RAW: &str = "raw.jsonl";
pub const CORPUS_CONF: &str = "corpus.conf";
pub const TRAIN: &str = "train.jsonl";
pub const TEST: &str = "test.jsonl";
pub const MODEL: &str = "model.otwt";
pub const LOSSES: &str = "losses.jsonl";
pub const STORES: &str = "stores";
pub const MANIFEST: &str = "manifest.conf";
pub const EVAL_SIM: &str = "eval_sim.jsonl";
pub const EVAL_COND: &str = "eval_cond.jsonl";
pub const HEURISTICS: &str = "heuristics.jsonl";

/// Used when neither `--data` nor `OMNITRAJ_DATA_DIR` is given.
pub const DEFAULT_ROOT: &str = "omnitraj-data";
pub const DATA_DIR_ENV: &str = "OMNITRAJ_DATA_DIR";

pub fn store_file(dir: &Path, modality: &str) -> PathBuf {
    dir.join(STORES).join(format!("{modality}.otes"))
}
