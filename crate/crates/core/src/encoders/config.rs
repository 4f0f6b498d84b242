use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::KeyValues;
use crate::data::Frame;
use crate::error::{Error, Result};

/// Modality tag. The discriminant is the on-disk tag byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Traj = 0,
    Top = 1,
    Road = 2,
    Region = 3,
    Fused = 4,
}

impl Modality {
    /// Canonical concatenation order for fusion.
    pub const CANONICAL: [Modality; 4] = [Modality::Traj, Modality::Top, Modality::Road, Modality::Region];

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => Modality::Traj,
            1 => Modality::Top,
            2 => Modality::Road,
            3 => Modality::Region,
            4 => Modality::Fused,
            _ => return Err(Error::Format(format!("unknown modality tag {tag}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Traj => "traj",
            Modality::Top => "top",
            Modality::Road => "road",
            Modality::Region => "region",
            Modality::Fused => "fused",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "traj" | "trajectory" => Modality::Traj,
            "top" | "topology" => Modality::Top,
            "road" => Modality::Road,
            "region" | "reg" => Modality::Region,
            "fused" => Modality::Fused,
            _ => return Err(Error::Parameter(format!("unknown modality {s:?}"))),
        })
    }
}

/// Set of query modalities, kept in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModalitySet(u8);

impl ModalitySet {
    pub const EMPTY: ModalitySet = ModalitySet(0);

    pub fn of(mods: &[Modality]) -> Result<Self> {
        let mut bits = 0u8;
        for &m in mods {
            if m == Modality::Fused {
                return Err(Error::Parameter("fused is not a query modality".into()));
            }
            let bit = 1 << m.tag();
            if bits & bit != 0 {
                return Err(Error::Parameter(format!("duplicate modality {m}")));
            }
            bits |= bit;
        }
        Ok(ModalitySet(bits))
    }

    pub fn contains(self, m: Modality) -> bool {
        m != Modality::Fused && self.0 & (1 << m.tag()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn members(self) -> Vec<Modality> {
        Modality::CANONICAL.into_iter().filter(|&m| self.contains(m)).collect()
    }

    /// `top+road` style name.
    pub fn name(self) -> String {
        self.members().iter().map(|m| m.name()).collect::<Vec<_>>().join("+")
    }
}

impl fmt::Display for ModalitySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for ModalitySet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mods = s
            .split(['+', ','])
            .map(|p| p.trim().parse())
            .collect::<Result<Vec<Modality>>>()?;
        ModalitySet::of(&mods)
    }
}

/// Multi-modality subsets that own a trained fusion projector.
pub fn fusion_subsets() -> [ModalitySet; 3] {
    use Modality::*;
    [
        ModalitySet::of(&[Top, Region]).expect("distinct"),
        ModalitySet::of(&[Top, Road]).expect("distinct"),
        ModalitySet::of(&[Top, Road, Region]).expect("distinct"),
    ]
}

/// Every subset a query may use: the three single condition modalities
/// plus the fused ones.
pub fn supported_subsets() -> Vec<ModalitySet> {
    use Modality::*;
    let mut out = vec![
        ModalitySet::of(&[Top]).expect("single"),
        ModalitySet::of(&[Road]).expect("single"),
        ModalitySet::of(&[Region]).expect("single"),
    ];
    out.extend(fusion_subsets());
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    Cls,
    Bos,
    Mean,
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cls" => Ok(Pooling::Cls),
            "bos" => Ok(Pooling::Bos),
            "mean" => Ok(Pooling::Mean),
            _ => Err(Error::Config(format!("unknown pooling {s:?}"))),
        }
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Cls => "cls",
            Pooling::Bos => "bos",
            Pooling::Mean => "mean",
        })
    }
}

/// Architecture of the four encoders, their heads and the fusion layers.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub d: usize,
    pub h: usize,
    pub blocks: usize,
    pub heads: usize,
    pub patch: usize,
    pub resample_len: usize,
    pub max_len_top: usize,
    pub max_len_road: usize,
    pub max_len_region: usize,
    pub pool_traj: Pooling,
    pub pool_top: Pooling,
    pub pool_road: Pooling,
    pub pool_region: Pooling,
    pub road_vocab: usize,
    /// Grid side; the region vocabulary is `grid * grid`.
    pub grid: usize,
    pub rope_base: f64,
    pub frame: Frame,
}

pub const ENCODER_KEYS: &[&str] = &[
    "d",
    "h",
    "blocks",
    "heads",
    "patch",
    "resample_len",
    "max_len_top",
    "max_len_road",
    "max_len_region",
    "pool_traj",
    "pool_top",
    "pool_road",
    "pool_region",
    "road_vocab",
    "grid",
    "rope_base",
    "frame_cx",
    "frame_cy",
    "frame_half_extent",
];

impl EncoderConfig {
    /// Desk-scale defaults.
    pub fn toy(road_vocab: usize, frame: Frame) -> Self {
        EncoderConfig {
            d: 32,
            h: 64,
            blocks: 2,
            heads: 4,
            patch: 8,
            resample_len: 64,
            max_len_top: 128,
            max_len_road: 128,
            max_len_region: 64,
            pool_traj: Pooling::Cls,
            pool_top: Pooling::Cls,
            pool_road: Pooling::Bos,
            pool_region: Pooling::Cls,
            road_vocab,
            grid: 16,
            rope_base: 10_000.0,
            frame,
        }
    }

    /// Reference architecture sizes.
    pub fn reference(road_vocab: usize, frame: Frame) -> Self {
        EncoderConfig {
            d: 256,
            h: 512,
            blocks: 6,
            heads: 8,
            patch: 10,
            resample_len: 200,
            ..Self::toy(road_vocab, frame)
        }
    }

    pub fn patches(&self) -> usize {
        self.resample_len / self.patch
    }

    pub fn region_vocab(&self) -> usize {
        self.grid * self.grid
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d == 0 || self.h == 0 || self.blocks == 0 {
            return bad("d, h and blocks must be positive".into());
        }
        if self.heads == 0 || self.d % self.heads != 0 {
            return bad(format!("d={} not divisible by heads={}", self.d, self.heads));
        }
        if (self.d / self.heads) % 2 != 0 {
            return bad("per-head width must be even for rotary positions".into());
        }
        if self.patch == 0 || self.patch > self.resample_len {
            return bad(format!("patch {} must be in 1..={}", self.patch, self.resample_len));
        }
        if self.resample_len < 2 {
            return bad("resample_len must be at least 2".into());
        }
        if self.max_len_top == 0 || self.max_len_road == 0 || self.max_len_region == 0 {
            return bad("max lengths must be positive".into());
        }
        if self.road_vocab == 0 || self.grid == 0 {
            return bad("vocabularies must be non-empty".into());
        }
        if !(self.rope_base > 1.0) || !(self.frame.half_extent > 0.0) {
            return bad("rope_base must exceed 1 and the frame must have positive extent".into());
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("d", self.d);
        kv.set("h", self.h);
        kv.set("blocks", self.blocks);
        kv.set("heads", self.heads);
        kv.set("patch", self.patch);
        kv.set("resample_len", self.resample_len);
        kv.set("max_len_top", self.max_len_top);
        kv.set("max_len_road", self.max_len_road);
        kv.set("max_len_region", self.max_len_region);
        kv.set("pool_traj", self.pool_traj);
        kv.set("pool_top", self.pool_top);
        kv.set("pool_road", self.pool_road);
        kv.set("pool_region", self.pool_region);
        kv.set("road_vocab", self.road_vocab);
        kv.set("grid", self.grid);
        kv.set("rope_base", self.rope_base);
        kv.set("frame_cx", self.frame.cx);
        kv.set("frame_cy", self.frame.cy);
        kv.set("frame_half_extent", self.frame.half_extent);
        kv
    }

    /// Reads the encoder keys of `kv`, falling back to `base` for missing ones.
    pub fn from_kv(kv: &KeyValues, base: &EncoderConfig) -> Result<Self> {
        let cfg = EncoderConfig {
            d: kv.get_or("d", base.d)?,
            h: kv.get_or("h", base.h)?,
            blocks: kv.get_or("blocks", base.blocks)?,
            heads: kv.get_or("heads", base.heads)?,
            patch: kv.get_or("patch", base.patch)?,
            resample_len: kv.get_or("resample_len", base.resample_len)?,
            max_len_top: kv.get_or("max_len_top", base.max_len_top)?,
            max_len_road: kv.get_or("max_len_road", base.max_len_road)?,
            max_len_region: kv.get_or("max_len_region", base.max_len_region)?,
            pool_traj: kv.get_or("pool_traj", base.pool_traj)?,
            pool_top: kv.get_or("pool_top", base.pool_top)?,
            pool_road: kv.get_or("pool_road", base.pool_road)?,
            pool_region: kv.get_or("pool_region", base.pool_region)?,
            road_vocab: kv.get_or("road_vocab", base.road_vocab)?,
            grid: kv.get_or("grid", base.grid)?,
            rope_base: kv.get_or("rope_base", base.rope_base)?,
            frame: Frame {
                cx: kv.get_or("frame_cx", base.frame.cx)?,
                cy: kv.get_or("frame_cy", base.frame.cy)?,
                half_extent: kv.get_or("frame_half_extent", base.frame.half_extent)?,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Strict parse: every key must be present.
    pub fn from_complete_kv(kv: &KeyValues) -> Result<Self> {
        for k in ENCODER_KEYS {
            if !kv.contains(k) {
                return Err(Error::Config(format!("missing key {k}")));
            }
        }
        let unit = Frame {
            cx: 0.0,
            cy: 0.0,
            half_extent: 1.0,
        };
        Self::from_kv(kv, &Self::toy(1, unit))
    }
}
