//! Road and region view augmentations.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::KeyValues;
use crate::data::{RegionSeq, RoadSeq};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationPolicy {
    pub reverse_prob: f64,
    /// Kept fraction is drawn uniformly from `[keep_min, keep_max]`.
    pub keep_min: f64,
    pub keep_max: f64,
    pub shuffle_prob: f64,
    pub shuffle_window: usize,
    pub replace_prob: f64,
    pub region_shuffle: bool,
    pub region_drop_prob: f64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        AugmentationPolicy {
            reverse_prob: 0.3,
            keep_min: 0.5,
            keep_max: 1.0,
            shuffle_prob: 0.3,
            shuffle_window: 3,
            replace_prob: 0.1,
            region_shuffle: true,
            region_drop_prob: 0.2,
        }
    }
}

pub const POLICY_KEYS: &[&str] = &[
    "reverse_prob",
    "keep_min",
    "keep_max",
    "shuffle_prob",
    "shuffle_window",
    "replace_prob",
    "region_shuffle",
    "region_drop_prob",
];

impl AugmentationPolicy {
    /// Leaves every view untouched.
    pub fn none() -> Self {
        AugmentationPolicy {
            reverse_prob: 0.0,
            keep_min: 1.0,
            keep_max: 1.0,
            shuffle_prob: 0.0,
            shuffle_window: 2,
            replace_prob: 0.0,
            region_shuffle: false,
            region_drop_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("reverse_prob", self.reverse_prob),
            ("shuffle_prob", self.shuffle_prob),
            ("replace_prob", self.replace_prob),
            ("region_drop_prob", self.region_drop_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name}={p} is not a probability")));
            }
        }
        if !(self.keep_min > 0.0 && self.keep_min <= self.keep_max && self.keep_max <= 1.0) {
            return Err(Error::Config(format!(
                "keep fraction range [{}, {}] must lie in (0, 1]",
                self.keep_min, self.keep_max
            )));
        }
        if self.shuffle_window < 2 {
            return Err(Error::Config("shuffle_window must be at least 2".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self, kv: &mut KeyValues) {
        kv.set("reverse_prob", self.reverse_prob);
        kv.set("keep_min", self.keep_min);
        kv.set("keep_max", self.keep_max);
        kv.set("shuffle_prob", self.shuffle_prob);
        kv.set("shuffle_window", self.shuffle_window);
        kv.set("replace_prob", self.replace_prob);
        kv.set("region_shuffle", self.region_shuffle);
        kv.set("region_drop_prob", self.region_drop_prob);
    }

    pub fn from_kv(kv: &KeyValues, base: &AugmentationPolicy) -> Result<Self> {
        let p = AugmentationPolicy {
            reverse_prob: kv.get_or("reverse_prob", base.reverse_prob)?,
            keep_min: kv.get_or("keep_min", base.keep_min)?,
            keep_max: kv.get_or("keep_max", base.keep_max)?,
            shuffle_prob: kv.get_or("shuffle_prob", base.shuffle_prob)?,
            shuffle_window: kv.get_or("shuffle_window", base.shuffle_window)?,
            replace_prob: kv.get_or("replace_prob", base.replace_prob)?,
            region_shuffle: kv.get_or("region_shuffle", base.region_shuffle)?,
            region_drop_prob: kv.get_or("region_drop_prob", base.region_drop_prob)?,
        };
        p.validate()?;
        Ok(p)
    }
}

/// Augments a road sequence. Replacement ids are drawn from `0..vocab`.
/// Empty input is returned as is.
pub fn augment_road(s: &RoadSeq, policy: &AugmentationPolicy, vocab: usize, seed: u64) -> RoadSeq {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids = s.segment_ids.clone();
    if ids.is_empty() {
        return s.clone();
    }
    if rng.gen_bool(policy.reverse_prob) {
        ids.reverse();
    }
    let frac = if policy.keep_max > policy.keep_min {
        rng.gen_range(policy.keep_min..=policy.keep_max)
    } else {
        policy.keep_max
    };
    let keep = ((ids.len() as f64 * frac).round() as usize).clamp(1, ids.len());
    if keep < ids.len() {
        let start = rng.gen_range(0..=ids.len() - keep);
        ids = ids[start..start + keep].to_vec();
    }
    if rng.gen_bool(policy.shuffle_prob) {
        for window in ids.chunks_mut(policy.shuffle_window) {
            window.shuffle(&mut rng);
        }
    }
    if policy.replace_prob > 0.0 && vocab > 0 {
        for id in ids.iter_mut() {
            if rng.gen_bool(policy.replace_prob) {
                *id = rng.gen_range(0..vocab as u32);
            }
        }
    }
    RoadSeq {
        trajectory_id: s.trajectory_id,
        segment_ids: ids,
    }
}

/// Randomly drops and shuffles region ids, always keeping at least one.
pub fn augment_region(s: &RegionSeq, policy: &AugmentationPolicy, seed: u64) -> RegionSeq {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if s.region_ids.is_empty() {
        return s.clone();
    }
    let mut ids: Vec<u32> = s
        .region_ids
        .iter()
        .copied()
        .filter(|_| !rng.gen_bool(policy.region_drop_prob))
        .collect();
    if ids.is_empty() {
        ids.push(*s.region_ids.choose(&mut rng).expect("non-empty"));
    }
    if policy.region_shuffle {
        ids.shuffle(&mut rng);
    }
    RegionSeq {
        trajectory_id: s.trajectory_id,
        region_ids: ids,
    }
}
