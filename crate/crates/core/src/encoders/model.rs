use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{fusion_subsets, EncoderConfig, Modality, ModalitySet, Pooling};
use crate::data::Point;
use crate::error::{param_err, Error, Result};
use crate::nn::layers::{uniform, LayerNorm, Linear, TransformerBlock};
use crate::nn::{Graph, ParamId, ParamSet, Tensor, Var};

/// Splits `points` into `⌊len / patch⌋` windows of `patch` points, each
/// flattened to `x0, y0, x1, y1, ...`. Trailing points are dropped.
pub fn patchify(points: &[Point], patch: usize) -> Result<Tensor> {
    if patch == 0 || patch > points.len() {
        return param_err(format!("patch size {patch} for {} points", points.len()));
    }
    let n = points.len() / patch;
    let data = points[..n * patch].iter().flat_map(|p| [p.x, p.y]).collect();
    Tensor::from_vec(n, 2 * patch, data)
}

/// Tokens handed to one encoder.
#[derive(Debug, Clone, PartialEq)]
pub enum EncoderInput {
    /// Trajectory patches `[N_p, 2P]`.
    Patches(Tensor),
    /// Keypoints `[k, 2]` in frame coordinates.
    Points(Tensor),
    /// Vocabulary ids.
    Ids(Vec<usize>),
}

impl EncoderInput {
    pub fn len(&self) -> usize {
        match self {
            EncoderInput::Patches(t) | EncoderInput::Points(t) => t.rows(),
            EncoderInput::Ids(ids) => ids.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub enum TokenSource {
    Linear(Linear),
    Table { table: ParamId, vocab: usize },
}

/// Two-layer head into the shared space, followed by L2 normalization.
#[derive(Debug, Clone)]
pub struct ProjectionHead {
    pub l1: Linear,
    pub l2: Linear,
    /// GELU between the layers; off only in tests.
    pub activation: bool,
}

impl ProjectionHead {
    pub fn new(ps: &mut ParamSet, name: &str, d: usize, h: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(ProjectionHead {
            l1: Linear::new(ps, &format!("{name}.l1"), d, h, true, rng)?,
            l2: Linear::new(ps, &format!("{name}.l2"), h, h, true, rng)?,
            activation: true,
        })
    }

    pub fn forward(&self, g: &mut Graph, z: Var) -> Result<Var> {
        let mut x = self.l1.forward(g, z)?;
        if self.activation {
            x = g.gelu(x)?;
        }
        let x = self.l2.forward(g, x)?;
        g.l2_normalize(x)
    }
}

/// Transformer encoder for one modality: token embedding, a prepended
/// pooling token, `N` blocks, final layer norm, pooling and head.
#[derive(Debug, Clone)]
pub struct SequenceEncoder {
    pub modality: Modality,
    pub source: TokenSource,
    /// The CLS (or BOS) token.
    pub special: ParamId,
    /// Learned absolute positions, trajectory encoder only.
    pub positions: Option<ParamId>,
    pub blocks: Vec<TransformerBlock>,
    pub final_norm: LayerNorm,
    pub pooling: Pooling,
    pub head: ProjectionHead,
    pub rope: Option<f64>,
}

impl SequenceEncoder {
    fn check_input(&self, input: &EncoderInput) -> Result<()> {
        if input.is_empty() {
            return param_err(format!("empty {} sequence", self.modality));
        }
        match (&self.source, input) {
            (TokenSource::Linear(lin), EncoderInput::Patches(t) | EncoderInput::Points(t)) => {
                if t.cols() != lin.input {
                    return Err(Error::Shape(format!(
                        "{} tokens of width {}, expected {}",
                        self.modality,
                        t.cols(),
                        lin.input
                    )));
                }
            }
            (TokenSource::Table { vocab, .. }, EncoderInput::Ids(ids)) => {
                if let Some(&bad) = ids.iter().find(|&&i| i >= *vocab) {
                    return Err(Error::Vocabulary {
                        id: bad as u32,
                        size: *vocab,
                    });
                }
            }
            _ => return param_err(format!("wrong input kind for the {} encoder", self.modality)),
        }
        Ok(())
    }

    /// Token matrix `[1 + n, d]` with the pooling token first.
    pub fn embed_tokens(&self, g: &mut Graph, input: &EncoderInput) -> Result<Var> {
        self.check_input(input)?;
        let tokens = match (&self.source, input) {
            (TokenSource::Linear(lin), EncoderInput::Patches(t) | EncoderInput::Points(t)) => {
                let x = g.input(t.clone())?;
                lin.forward(g, x)?
            }
            (TokenSource::Table { table, .. }, EncoderInput::Ids(ids)) => {
                let t = g.param(*table);
                g.gather(t, ids)?
            }
            _ => unreachable!("checked above"),
        };
        let special = g.param(self.special);
        let mut x = g.concat_rows(&[special, tokens])?;
        if let Some(pos) = self.positions {
            let n = g.value(x).rows();
            let table = g.param(pos);
            if g.value(table).rows() != n {
                return param_err(format!(
                    "trajectory has {} patches, encoder expects {}",
                    n - 1,
                    g.value(table).rows() - 1
                ));
            }
            x = g.add(x, table)?;
        }
        Ok(x)
    }

    /// Blocks and the final norm over an embedded token matrix.
    pub fn forward_tokens(&self, g: &mut Graph, mut x: Var, mask: Option<&[bool]>) -> Result<Var> {
        for block in &self.blocks {
            x = block.forward(g, x, mask)?;
        }
        self.final_norm.forward(g, x)
    }

    /// Pooled `[1, d]` representation.
    pub fn pool(&self, g: &mut Graph, hidden: Var) -> Result<Var> {
        match self.pooling {
            Pooling::Cls | Pooling::Bos => g.rows(hidden, 0, 1),
            Pooling::Mean => {
                let n = g.value(hidden).rows();
                let w = g.input(Tensor::filled(1, n, 1.0 / n as f64))?;
                g.matmul(w, hidden)
            }
        }
    }

    /// Unit `[1, h]` embedding.
    pub fn encode(&self, g: &mut Graph, input: &EncoderInput) -> Result<Var> {
        let x = self.embed_tokens(g, input)?;
        let hidden = self.forward_tokens(g, x, None)?;
        let z = self.pool(g, hidden)?;
        self.head.forward(g, z)
    }

    /// Pre-head `[1, d]` representation.
    pub fn represent(&self, g: &mut Graph, input: &EncoderInput) -> Result<Var> {
        let x = self.embed_tokens(g, input)?;
        let hidden = self.forward_tokens(g, x, None)?;
        self.pool(g, hidden)
    }
}

/// Concatenate-and-project fusion for one modality subset.
#[derive(Debug, Clone)]
pub struct Fusion {
    pub subset: ModalitySet,
    pub proj: Linear,
}

/// Parameter layout of all encoders, heads and fusion projectors.
#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: EncoderConfig,
    pub traj: SequenceEncoder,
    pub top: SequenceEncoder,
    pub road: SequenceEncoder,
    pub region: SequenceEncoder,
    pub fusions: Vec<Fusion>,
}

const TABLE_SCALE: f64 = 0.5;
const POSITION_SCALE: f64 = 0.1;

#[allow(clippy::too_many_arguments)]
fn build_encoder(
    ps: &mut ParamSet,
    cfg: &EncoderConfig,
    modality: Modality,
    source: TokenSource,
    positions: Option<usize>,
    pooling: Pooling,
    rope: bool,
    rng: &mut ChaCha8Rng,
) -> Result<SequenceEncoder> {
    let name = modality.name();
    let special_name = if pooling == Pooling::Bos { "bos" } else { "cls" };
    let special = ps.add(format!("{name}.{special_name}"), uniform(rng, 1, cfg.d, TABLE_SCALE))?;
    let positions = match positions {
        Some(n) => Some(ps.add(format!("{name}.pos"), uniform(rng, n, cfg.d, POSITION_SCALE))?),
        None => None,
    };
    let rope = rope.then_some(cfg.rope_base);
    let blocks = (0..cfg.blocks)
        .map(|i| TransformerBlock::new(ps, &format!("{name}.block{i}"), cfg.d, cfg.heads, rope, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(SequenceEncoder {
        modality,
        source,
        special,
        positions,
        blocks,
        final_norm: LayerNorm::new(ps, &format!("{name}.norm"), cfg.d)?,
        pooling,
        head: ProjectionHead::new(ps, &format!("{name}.head"), cfg.d, cfg.h, rng)?,
        rope,
    })
}

impl Model {
    /// Fresh parameters drawn from `seed`.
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Result<(Model, ParamSet)> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let d = cfg.d;

        let patch = Linear::new(&mut ps, "traj.patch", 2 * cfg.patch, d, true, &mut rng)?;
        let traj = build_encoder(
            &mut ps,
            cfg,
            Modality::Traj,
            TokenSource::Linear(patch),
            Some(cfg.patches() + 1),
            cfg.pool_traj,
            false,
            &mut rng,
        )?;
        let point = Linear::new(&mut ps, "top.point", 2, d, true, &mut rng)?;
        let top = build_encoder(
            &mut ps,
            cfg,
            Modality::Top,
            TokenSource::Linear(point),
            None,
            cfg.pool_top,
            true,
            &mut rng,
        )?;
        let road_table = ps.add("road.table", uniform(&mut rng, cfg.road_vocab, d, TABLE_SCALE))?;
        let road = build_encoder(
            &mut ps,
            cfg,
            Modality::Road,
            TokenSource::Table {
                table: road_table,
                vocab: cfg.road_vocab,
            },
            None,
            cfg.pool_road,
            true,
            &mut rng,
        )?;
        let region_table = ps.add(
            "region.table",
            uniform(&mut rng, cfg.region_vocab(), d, TABLE_SCALE),
        )?;
        let region = build_encoder(
            &mut ps,
            cfg,
            Modality::Region,
            TokenSource::Table {
                table: region_table,
                vocab: cfg.region_vocab(),
            },
            None,
            cfg.pool_region,
            false,
            &mut rng,
        )?;
        let fusions = fusion_subsets()
            .into_iter()
            .map(|subset| {
                let proj = Linear::new(
                    &mut ps,
                    &format!("fuse.{}", subset.name()),
                    subset.len() * cfg.h,
                    cfg.h,
                    true,
                    &mut rng,
                )?;
                Ok(Fusion { subset, proj })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((
            Model {
                cfg: cfg.clone(),
                traj,
                top,
                road,
                region,
                fusions,
            },
            ps,
        ))
    }

    /// Checks `loaded` has exactly the layout this model expects.
    pub fn check_params(&self, fresh: &ParamSet, loaded: &ParamSet) -> Result<()> {
        if fresh.len() != loaded.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, model expects {}",
                loaded.len(),
                fresh.len()
            )));
        }
        for ((_, a, ta), (_, b, tb)) in fresh.iter().zip(loaded.iter()) {
            if a != b || ta.shape() != tb.shape() {
                return Err(Error::Config(format!(
                    "checkpoint tensor {b} {:?} does not match {a} {:?}",
                    tb.shape(),
                    ta.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn encoder(&self, m: Modality) -> Result<&SequenceEncoder> {
        match m {
            Modality::Traj => Ok(&self.traj),
            Modality::Top => Ok(&self.top),
            Modality::Road => Ok(&self.road),
            Modality::Region => Ok(&self.region),
            Modality::Fused => param_err("fused embeddings have no encoder"),
        }
    }

    pub fn fusion(&self, subset: ModalitySet) -> Option<&Fusion> {
        self.fusions.iter().find(|f| f.subset == subset)
    }

    /// Fuses unit embeddings; `parts` may come in any order.
    pub fn fuse(&self, g: &mut Graph, parts: &[(Modality, Var)]) -> Result<Var> {
        if parts.len() < 2 {
            return param_err("fusion needs at least two embeddings");
        }
        let mods: Vec<Modality> = parts.iter().map(|p| p.0).collect();
        let subset = ModalitySet::of(&mods)?;
        for &(_, v) in parts {
            if g.value(v).shape() != (1, self.cfg.h) {
                return param_err(format!("fusion input of shape {:?}", g.value(v).shape()));
            }
        }
        let fusion = self
            .fusion(subset)
            .ok_or_else(|| Error::Config(format!("no fusion projector for {subset}")))?;
        let ordered: Vec<Var> = subset
            .members()
            .into_iter()
            .map(|m| parts.iter().find(|p| p.0 == m).expect("member").1)
            .collect();
        let cat = g.concat_cols(&ordered)?;
        let y = fusion.proj.forward(g, cat)?;
        g.l2_normalize(y)
    }

    /// Trajectory input from map-coordinate points: frame, resample, patchify.
    pub fn traj_input(&self, points: &[Point]) -> Result<EncoderInput> {
        let local: Vec<Point> = points.iter().map(|&p| self.cfg.frame.to_local(p)).collect();
        let resampled = crate::data::resample_points(&local, self.cfg.resample_len)?;
        self.traj_input_resampled(&resampled.points)
    }

    /// Trajectory input from points already in frame coordinates and
    /// resampled to the configured length.
    pub fn traj_input_resampled(&self, local: &[Point]) -> Result<EncoderInput> {
        if local.len() != self.cfg.resample_len {
            return param_err(format!(
                "trajectory has {} points, expected {} after resampling",
                local.len(),
                self.cfg.resample_len
            ));
        }
        Ok(EncoderInput::Patches(patchify(local, self.cfg.patch)?))
    }

    /// Topology input from map-coordinate keypoints, head-truncated.
    pub fn top_input(&self, points: &[Point]) -> Result<EncoderInput> {
        if points.is_empty() {
            return param_err("empty topology sequence");
        }
        let kept = &points[..points.len().min(self.cfg.max_len_top)];
        let data = kept
            .iter()
            .flat_map(|&p| {
                let l = self.cfg.frame.to_local(p);
                [l.x, l.y]
            })
            .collect();
        Ok(EncoderInput::Points(Tensor::from_vec(kept.len(), 2, data)?))
    }

    /// Road input, head-truncated.
    pub fn road_input(&self, ids: &[u32]) -> Result<EncoderInput> {
        if ids.is_empty() {
            return param_err("empty road sequence");
        }
        let ids = ids[..ids.len().min(self.cfg.max_len_road)].iter().map(|&i| i as usize);
        self.checked_ids(ids.collect(), self.cfg.road_vocab)
    }

    /// Region input: repeats removed (first occurrence kept), head-truncated.
    pub fn region_input(&self, ids: &[u32]) -> Result<EncoderInput> {
        if ids.is_empty() {
            return param_err("empty region sequence");
        }
        let mut seen = std::collections::HashSet::new();
        let mut out: Vec<usize> = ids.iter().filter(|&&i| seen.insert(i)).map(|&i| i as usize).collect();
        out.truncate(self.cfg.max_len_region);
        self.checked_ids(out, self.cfg.region_vocab())
    }

    fn checked_ids(&self, ids: Vec<usize>, vocab: usize) -> Result<EncoderInput> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::Vocabulary {
                id: bad as u32,
                size: vocab,
            });
        }
        Ok(EncoderInput::Ids(ids))
    }

    /// Scalars owned by one encoder including its head.
    pub fn encoder_param_count(&self, ps: &ParamSet, m: Modality) -> usize {
        ps.scalar_count_with_prefix(&format!("{}.", m.name()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Frame;

    fn cfg() -> EncoderConfig {
        EncoderConfig::toy(
            24,
            Frame {
                cx: 0.0,
                cy: 0.0,
                half_extent: 1.0,
            },
        )
    }

    #[test]
    fn patch_counts() {
        let pts: Vec<Point> = (0..200).map(|i| Point::new(i as f64, 0.0)).collect();
        assert_eq!(patchify(&pts, 10).unwrap().shape(), (20, 20));
        let pts: Vec<Point> = (0..7).map(|i| Point::new(i as f64, -(i as f64))).collect();
        let p = patchify(&pts, 2).unwrap();
        assert_eq!(p.shape(), (3, 4));
        let back: Vec<Point> = p.data().chunks(2).map(|c| Point::new(c[0], c[1])).collect();
        assert_eq!(back, pts[..6]);
        assert!(patchify(&pts, 8).is_err());
    }

    #[test]
    fn layout_and_counts() {
        let (model, ps) = Model::init(&cfg(), 0).unwrap();
        let c = &model.cfg;
        let head = c.d * c.h + c.h + c.h * c.h + c.h;
        let stack = c.blocks * TransformerBlock::param_count(c.d) + 2 * c.d + c.d;
        assert_eq!(
            model.encoder_param_count(&ps, Modality::Road),
            stack + head + c.road_vocab * c.d
        );
        assert_eq!(
            model.encoder_param_count(&ps, Modality::Traj),
            stack + head + (2 * c.patch * c.d + c.d) + (c.patches() + 1) * c.d
        );
        assert_eq!(model.fusions.len(), 3);
        let (_, again) = Model::init(&cfg(), 0).unwrap();
        assert_eq!(again, ps);
        model.check_params(&ps, &again).unwrap();
        let (_, other) = Model::init(&EncoderConfig { road_vocab: 30, ..cfg() }, 0).unwrap();
        assert!(matches!(model.check_params(&ps, &other), Err(Error::Config(_))));
    }

    #[test]
    fn input_validation() {
        let (model, _) = Model::init(&cfg(), 0).unwrap();
        assert!(matches!(model.road_input(&[24]), Err(Error::Vocabulary { id: 24, size: 24 })));
        assert!(matches!(model.region_input(&[256]), Err(Error::Vocabulary { .. })));
        assert!(model.top_input(&[]).is_err());
        let short: Vec<Point> = (0..10).map(|i| Point::new(i as f64, 0.0)).collect();
        assert!(model.traj_input_resampled(&short).is_err());
        assert_eq!(
            model.region_input(&[5, 3, 5, 9, 3]).unwrap(),
            EncoderInput::Ids(vec![5, 3, 9])
        );
        let long: Vec<u32> = (0..200).map(|i| i % 24).collect();
        assert_eq!(model.road_input(&long).unwrap().len(), 128);
    }
}
