//! Contrastive objective.

use crate::error::{Error, Result};
use crate::nn::{Graph, ParamSet, Tensor, Var};

pub const DEFAULT_TAU: f64 = 0.07;

/// Mean cross-entropy of each query row against all key rows, positives on
/// the diagonal. Rows are expected to be unit vectors.
pub fn info_nce(queries: &Tensor, keys: &Tensor, tau: f64) -> Result<f64> {
    let ps = ParamSet::new();
    let mut g = Graph::new(&ps);
    let q = g.input(queries.clone())?;
    let k = g.input(keys.clone())?;
    let l = g.info_nce(q, k, tau)?;
    Ok(g.value(l).data()[0])
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossTerm {
    pub target: String,
    pub traj_to_target: f64,
    pub target_to_traj: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub terms: Vec<LossTerm>,
    pub total: f64,
    pub tau: f64,
}

/// Graph nodes of a bidirectional loss.
pub(crate) struct LossNodes {
    pub total: Var,
    pub terms: Vec<(Var, Var)>,
}

pub(crate) fn bidirectional_nodes(g: &mut Graph, traj: Var, targets: &[Var], tau: f64) -> Result<LossNodes> {
    if targets.is_empty() {
        return Err(Error::Parameter("no modality to align with the trajectory".into()));
    }
    let mut terms = Vec::with_capacity(targets.len());
    let mut parts = Vec::with_capacity(2 * targets.len());
    for &t in targets {
        let fwd = g.info_nce(traj, t, tau)?;
        let bwd = g.info_nce(t, traj, tau)?;
        terms.push((fwd, bwd));
        parts.push(fwd);
        parts.push(bwd);
    }
    let stacked = g.concat_cols(&parts)?;
    let total = g.sum(stacked)?;
    Ok(LossNodes { total, terms })
}

/// `Σ_m info_nce(traj, m) + info_nce(m, traj)` over every non-trajectory entry.
pub fn bidirectional_loss(embeddings: &[(&str, Tensor)], tau: f64) -> Result<LossReport> {
    let ps = ParamSet::new();
    let mut g = Graph::new(&ps);
    let traj = embeddings
        .iter()
        .find(|(n, _)| *n == "traj")
        .ok_or_else(|| Error::Parameter("trajectory embeddings missing".into()))?;
    let traj = g.input(traj.1.clone())?;
    let mut names = Vec::new();
    let mut vars = Vec::new();
    for (name, t) in embeddings.iter().filter(|(n, _)| *n != "traj") {
        names.push(name.to_string());
        vars.push(g.input(t.clone())?);
    }
    let nodes = bidirectional_nodes(&mut g, traj, &vars, tau)?;
    let terms = names
        .into_iter()
        .zip(&nodes.terms)
        .map(|(target, &(f, b))| LossTerm {
            target,
            traj_to_target: g.value(f).data()[0],
            target_to_traj: g.value(b).data()[0],
        })
        .collect();
    Ok(LossReport {
        terms,
        total: g.value(nodes.total).data()[0],
        tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::uniform;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_rows(t: Tensor) -> Tensor {
        let mut t = t;
        for r in 0..t.rows() {
            let row = t.row_mut(r);
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            row.iter_mut().for_each(|v| *v /= n);
        }
        t
    }

    #[test]
    fn single_pair_has_zero_loss() {
        let e = Tensor::row_vector(vec![0.6, 0.8]);
        assert_eq!(info_nce(&e, &e, 0.07).unwrap(), 0.0);
    }

    #[test]
    fn uniform_similarities_give_ln_b() {
        let e = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert!((info_nce(&e, &e, 0.07).unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn matches_direct_softmax_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = unit_rows(uniform(&mut rng, 3, 4, 1.0));
        let k = unit_rows(uniform(&mut rng, 3, 4, 1.0));
        let mut want = 0.0;
        for i in 0..3 {
            let sims: Vec<f64> = (0..3)
                .map(|j| q.row(i).iter().zip(k.row(j)).map(|(a, b)| a * b).sum::<f64>() / 0.1)
                .collect();
            let denom: f64 = sims.iter().map(|s| s.exp()).sum();
            want += -(sims[i].exp() / denom).ln();
        }
        want /= 3.0;
        assert!((info_nce(&q, &k, 0.1).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn temperature_must_be_positive() {
        let e = Tensor::row_vector(vec![1.0]);
        assert!(matches!(info_nce(&e, &e, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(info_nce(&e, &e, -1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn invariant_under_common_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = unit_rows(uniform(&mut rng, 5, 3, 1.0));
        let k = unit_rows(uniform(&mut rng, 5, 3, 1.0));
        // orthogonal matrix from Gram-Schmidt on a random basis
        let a = uniform(&mut rng, 3, 3, 1.0);
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for r in 0..3 {
            let mut v = a.row(r).to_vec();
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
        let rot = Tensor::from_rows(&basis).unwrap();
        let before = info_nce(&q, &k, 0.07).unwrap();
        let after = info_nce(&q.matmul(&rot).unwrap(), &k.matmul(&rot).unwrap(), 0.07).unwrap();
        assert!((before - after).abs() < 1e-9);
        assert!(before >= 0.0);
    }

    #[test]
    fn halving_temperature_keeps_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = unit_rows(uniform(&mut rng, 6, 4, 1.0));
        let k = unit_rows(uniform(&mut rng, 6, 4, 1.0));
        let sims = q.matmul(&k.transpose()).unwrap();
        for tau in [0.07, 0.035] {
            for i in 0..6 {
                let row: Vec<f64> = sims.row(i).iter().map(|s| s / tau).collect();
                let arg = (0..6).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
                let raw = (0..6).max_by(|&a, &b| sims.get(i, a).total_cmp(&sims.get(i, b))).unwrap();
                assert_eq!(arg, raw);
            }
        }
    }

    #[test]
    fn symmetric_similarities_give_equal_directions() {
        let t = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.6, 0.8]]).unwrap();
        let r = bidirectional_loss(&[("traj", t.clone()), ("top", t)], 0.5).unwrap();
        assert_eq!(r.terms[0].traj_to_target, r.terms[0].target_to_traj);
    }

    #[test]
    fn three_identical_modalities_closed_form() {
        let t = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let embs = [
            ("traj", t.clone()),
            ("top", t.clone()),
            ("road", t.clone()),
            ("region", t),
        ];
        let r = bidirectional_loss(&embs, 1.0).unwrap();
        let e = std::f64::consts::E;
        let want = 6.0 * -(e / (e + 1.0)).ln();
        assert!((r.total - want).abs() < 1e-12);
        let sum: f64 = r.terms.iter().map(|t| t.traj_to_target + t.target_to_traj).sum();
        assert!((r.total - sum).abs() < 1e-12);
    }

    #[test]
    fn trajectory_required() {
        let t = Tensor::row_vector(vec![1.0]);
        assert!(matches!(
            bidirectional_loss(&[("top", t.clone()), ("road", t)], 0.1),
            Err(Error::Parameter(_))
        ));
        assert!(bidirectional_loss(&[("traj", Tensor::row_vector(vec![1.0]))], 0.1).is_err());
    }
}
