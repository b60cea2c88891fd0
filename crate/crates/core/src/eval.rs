//! Mapping and localization metrics: GOSPA between landmark sets, map
//! extraction from a density, RMSE and MAE helpers.

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::assignment;
use crate::density::PmbmDensity;
use crate::error::{Result, SlamError};
use crate::geometry::{wrap_angle, LandmarkType};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GospaParams {
    /// Cut-off distance (m).
    pub cutoff: f64,
    pub alpha: f64,
    pub order: f64,
}

impl Default for GospaParams {
    fn default() -> Self {
        GospaParams {
            cutoff: 20.0,
            alpha: 2.0,
            order: 2.0,
        }
    }
}

impl GospaParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff > 0.0) || !(self.alpha > 0.0 && self.alpha <= 2.0) || !(self.order >= 1.0) {
            return Err(SlamError::InvalidArgument(format!("invalid GOSPA parameters {self:?}")));
        }
        Ok(())
    }

    fn penalty(&self) -> f64 {
        self.cutoff.powf(self.order) / self.alpha
    }
}

/// GOSPA distance with its decomposition. The parts are the raw p-th power
/// contributions, so `distance = (localization + missed + false_alarms)^(1/p)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Gospa {
    pub distance: f64,
    pub localization: f64,
    pub missed: f64,
    pub false_alarms: f64,
    pub n_missed: usize,
    pub n_false: usize,
}

/// GOSPA between estimated and true point sets (3-D Euclidean base distance).
pub fn gospa(estimates: &[Vector3<f64>], truth: &[Vector3<f64>], params: &GospaParams) -> Result<Gospa> {
    params.validate()?;
    let (n, m) = (estimates.len(), truth.len());
    let p = params.order;
    let penalty = params.penalty();
    // Rows: estimates then one dummy per truth; columns: truths then one dummy per estimate.
    let size = n + m;
    let mut cost = DMatrix::from_element(size, size, 0.0);
    for i in 0..n {
        for j in 0..m {
            let d = (estimates[i] - truth[j]).norm();
            cost[(i, j)] = if d < params.cutoff { d.powf(p) } else { f64::INFINITY };
        }
        for k in 0..n {
            cost[(i, m + k)] = penalty;
        }
    }
    for k in 0..m {
        for j in 0..m {
            cost[(n + k, j)] = penalty;
        }
    }
    let solution = assignment::solve(&cost)?;
    let mut out = Gospa::default();
    for i in 0..n {
        let j = solution.columns[i];
        if j < m {
            out.localization += cost[(i, j)];
        } else {
            out.n_false += 1;
        }
    }
    for k in 0..m {
        if solution.columns[n + k] < m {
            out.n_missed += 1;
        }
    }
    out.missed = penalty * out.n_missed as f64;
    out.false_alarms = penalty * out.n_false as f64;
    out.distance = (out.localization + out.missed + out.false_alarms).powf(1.0 / p);
    Ok(out)
}

/// A landmark reported by the filter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapEstimate {
    pub position: Vector3<f64>,
    pub kind: LandmarkType,
    pub existence: f64,
}

/// Landmarks of the heaviest hypothesis with existence at least `threshold`,
/// each at the mean of its most probable type.
pub fn extract_map(density: &PmbmDensity, threshold: f64) -> Vec<MapEstimate> {
    let Some(best) = density.best_hypothesis() else {
        return Vec::new();
    };
    best.bernoullis
        .iter()
        .filter(|b| b.existence >= threshold)
        .filter_map(|b| {
            let dominant = b.belief.dominant();
            (dominant.gaussian.mean.len() == 3).then(|| MapEstimate {
                position: Vector3::new(dominant.gaussian.mean[0], dominant.gaussian.mean[1], dominant.gaussian.mean[2]),
                kind: dominant.kind,
                existence: b.existence,
            })
        })
        .collect()
}

/// Positions of the estimates of one type.
pub fn positions_of(map: &[MapEstimate], kind: LandmarkType) -> Vec<Vector3<f64>> {
    map.iter().filter(|e| e.kind == kind).map(|e| e.position).collect()
}

pub fn rmse(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(SlamError::InvalidArgument("RMSE of no errors".into()));
    }
    Ok((errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt())
}

pub fn mae(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(SlamError::InvalidArgument("MAE of no errors".into()));
    }
    Ok(errors.iter().map(|e| e.abs()).sum::<f64>() / errors.len() as f64)
}

/// Per-step MAE over runs; `errors[run][step]`.
pub fn mae_per_step(errors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let steps = errors.first().map(Vec::len).ok_or_else(|| SlamError::InvalidArgument("no runs".into()))?;
    if errors.iter().any(|r| r.len() != steps) {
        return Err(SlamError::InvalidArgument("runs have different lengths".into()));
    }
    (0..steps)
        .map(|k| mae(&errors.iter().map(|r| r[k]).collect::<Vec<_>>()))
        .collect()
}

/// Signed heading error wrapped to `(-pi, pi]`.
pub fn heading_error(estimate: f64, truth: f64) -> f64 {
    wrap_angle(estimate - truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{Bernoulli, GaussianComponent, GlobalHypothesis, LandmarkBelief};
    use crate::geometry::PerType;
    use nalgebra::DVector;

    fn p(x: f64) -> Vector3<f64> {
        Vector3::new(x, 0.0, 0.0)
    }

    #[test]
    fn gospa_examples() {
        let d = GospaParams::default();
        assert_eq!(gospa(&[], &[], &d).unwrap().distance, 0.0);
        let one = gospa(&[], &[p(0.0)], &d).unwrap();
        assert!((one.distance - 200f64.sqrt()).abs() < 1e-12);
        assert_eq!(one.n_missed, 1);
        let three = gospa(&[], &[p(0.0), p(50.0), p(100.0)], &d).unwrap();
        assert!((three.distance - 600f64.sqrt()).abs() < 1e-12);
        let exact = gospa(&[p(1.0), p(7.0)], &[p(7.0), p(1.0)], &d).unwrap();
        assert_eq!(exact.distance, 0.0);
        let far = gospa(&[p(0.0)], &[p(30.0)], &d).unwrap();
        assert_eq!((far.n_missed, far.n_false), (1, 1));
        assert!((far.distance - 400f64.sqrt()).abs() < 1e-12);
        let near = gospa(&[p(0.0)], &[p(3.0)], &d).unwrap();
        assert!((near.distance - 3.0).abs() < 1e-12);
    }

    #[test]
    fn gospa_is_symmetric() {
        let d = GospaParams::default();
        let a = [p(0.0), p(5.0), p(40.0)];
        let b = [p(1.0), p(60.0)];
        let ab = gospa(&a, &b, &d).unwrap();
        let ba = gospa(&b, &a, &d).unwrap();
        assert!((ab.distance - ba.distance).abs() < 1e-12);
        assert_eq!((ab.n_missed, ab.n_false), (ba.n_false, ba.n_missed));
    }

    fn density_with(rs: &[f64]) -> PmbmDensity {
        let bern = |r: f64, x: f64| {
            Bernoulli::new(
                r,
                LandmarkBelief::single(
                    LandmarkType::Va,
                    GaussianComponent::new(DVector::from_column_slice(&[x, 0.0, 0.0]), DMatrix::identity(3, 3)).unwrap(),
                ),
            )
        };
        PmbmDensity::new(
            PerType::splat(0.0),
            vec![GlobalHypothesis {
                weight: 1.0,
                bernoullis: rs.iter().enumerate().map(|(i, &r)| bern(r, i as f64)).collect(),
            }],
        )
    }

    #[test]
    fn extraction_threshold() {
        assert!(extract_map(&density_with(&[]), 0.5).is_empty());
        let one = extract_map(&density_with(&[0.9]), 0.5);
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].position, p(0.0));
        assert_eq!(one[0].kind, LandmarkType::Va);
        assert!(extract_map(&density_with(&[0.4999]), 0.5).is_empty());
        assert_eq!(extract_map(&density_with(&[0.5]), 0.5).len(), 1);
    }

    #[test]
    fn error_statistics() {
        assert_eq!(rmse(&[2.0, -2.0]).unwrap(), 2.0);
        assert_eq!(mae(&[2.0, -2.0]).unwrap(), 2.0);
        assert!((rmse(&[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(mae(&[3.0, 4.0]).unwrap(), 3.5);
        let pi = std::f64::consts::PI;
        assert!((heading_error(pi - 0.01, 0.0).abs() - (pi - 0.01)).abs() < 1e-15);
        let wrapped = [heading_error(pi - 0.01, -pi + 0.01 - 0.0), heading_error(-pi + 0.01, pi - 0.01)];
        for w in wrapped {
            assert!((w.abs() - 0.02).abs() < 1e-12);
        }
        assert!((heading_error(pi - 0.01, pi).abs() - 0.01).abs() < 1e-12);
        assert!((heading_error(-pi + 0.01, pi).abs() - 0.01).abs() < 1e-12);
        assert_eq!(mae_per_step(&[vec![1.0, -2.0], vec![3.0, 4.0]]).unwrap(), [2.0, 3.0]);
        assert!(rmse(&[]).is_err());
    }
}
