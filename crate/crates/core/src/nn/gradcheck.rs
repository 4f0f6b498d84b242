//! Finite-difference gradient checking.

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Parameter name and flat index of the worst entry.
    pub worst: (String, usize),
}

/// Denominator floor so entries with near-zero gradient are judged on
/// absolute error instead of blowing up the ratio. Central differences at
/// step 1e-5 carry roundoff near 1e-10, so a floor much below 1e-5 would
/// fail structurally zero gradients on noise alone.
const FLOOR: f64 = 1e-5;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences with the given `step`, over every scalar of every
/// parameter (or every `stride`-th scalar when `stride > 1`).
pub fn grad_check<F>(params: &mut ParamSet, step: f64, stride: usize, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let eval = |ps: &ParamSet| -> Result<f64> {
        let mut g = Graph::new(ps);
        let out = f(&mut g)?;
        if g.value(out).shape() != (1, 1) {
            return Err(Error::Shape("gradient check needs a scalar output".into()));
        }
        Ok(g.value(out).data()[0])
    };
    let analytic = {
        let mut g = Graph::new(params);
        let out = f(&mut g)?;
        g.backward_scalar(out)?.params
    };
    let mut report = GradCheck {
        max_rel_err: 0.0,
        checked: 0,
        worst: (String::new(), 0),
    };
    let stride = stride.max(1);
    for p in 0..params.len() {
        let id = ParamId(p);
        let n = params.get(id).len();
        for j in (0..n).step_by(stride) {
            let orig = params.get(id).data()[j];
            params.get_mut(id).data_mut()[j] = orig + step;
            let plus = eval(params)?;
            params.get_mut(id).data_mut()[j] = orig - step;
            let minus = eval(params)?;
            params.get_mut(id).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.get(id).map_or(0.0, |t| t.data()[j]);
            let e = rel_err(a, numeric);
            report.checked += 1;
            if e > report.max_rel_err || report.checked == 1 {
                report.max_rel_err = e;
                report.worst = (params.name(id).to_string(), j);
            }
        }
    }
    Ok(report)
}
