//! Local association weights, cost matrices, γ-best assignments and the
//! association vectors they translate to.
//!
//! Weights are kept in the log domain: the Gaussian likelihoods at the
//! default noise levels easily span hundreds of orders of magnitude.

use nalgebra::{DMatrix, DVector};

use crate::assignment::{self, Assignment};
use crate::density::{Bernoulli, GaussianComponent, GlobalHypothesis, LandmarkBelief, TypeComponent};
use crate::error::{Result, SlamError};
use crate::geometry::{LandmarkType, Measurement, PerType};
use crate::model::{Linearization, MeasurementModel};
use crate::multimodel;
use crate::update::{birth_from_measurement, FilterConfig};

/// Upper clamp on detection probabilities, keeping misdetection weights positive.
pub const MAX_DETECTION: f64 = 1.0 - 1e-9;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

pub fn clamp_detection(pd: f64) -> f64 {
    pd.clamp(0.0, MAX_DETECTION)
}

pub fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    let values: Vec<f64> = values.into_iter().collect();
    let peak = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() {
        return peak;
    }
    peak + values.iter().map(|v| (v - peak).exp()).sum::<f64>().ln()
}

/// Normalizes log-weights into probabilities.
pub fn normalize_log_weights(logs: &[f64]) -> Result<Vec<f64>> {
    let total = log_sum_exp(logs.iter().copied());
    if !total.is_finite() {
        return Err(SlamError::DegenerateDensity("all association weights vanished".into()));
    }
    Ok(logs.iter().map(|l| (l - total).exp()).collect())
}

/// `ln N(nu; 0, S)` and the squared Mahalanobis distance `nu^T S^-1 nu`.
pub fn log_gaussian(nu: &DVector<f64>, s: &DMatrix<f64>) -> Result<(f64, f64)> {
    let chol = s.clone().cholesky().ok_or_else(|| {
        SlamError::Numerical(format!("innovation covariance ({0}x{0}) is not positive definite", s.nrows()))
    })?;
    let maha = nu.dot(&chol.solve(nu));
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok((-0.5 * (maha + log_det + nu.len() as f64 * LN_2PI), maha))
}

/// Innovation and its covariance for one (sensor, landmark component) pair,
/// with the two priors treated as independent.
pub fn innovation<M: MeasurementModel>(
    model: &M,
    sensor: &GaussianComponent,
    landmark: &GaussianComponent,
    kind: LandmarkType,
    z: &Measurement,
) -> Result<(DVector<f64>, DMatrix<f64>, Linearization)> {
    let lin = model.linearize(&sensor.mean, &landmark.mean, kind)?;
    let s = &lin.jac_sensor * &sensor.cov * lin.jac_sensor.transpose()
        + &lin.jac_landmark * &landmark.cov * lin.jac_landmark.transpose()
        + &z.covariance;
    let nu = model.innovation(&z.value, &lin.predicted);
    Ok((nu, s, lin))
}

/// Per-type ingredients of a detected-again weight.
#[derive(Clone, Debug)]
pub struct TypeLikelihood {
    pub kind: LandmarkType,
    pub detection: f64,
    /// `ln N(z; h, S)`, `-inf` if the geometry is degenerate for this type.
    pub log_likelihood: f64,
    pub mahalanobis2: f64,
}

pub fn detection_probability<M: MeasurementModel>(
    model: &M,
    sensor: &GaussianComponent,
    component: &TypeComponent,
) -> f64 {
    clamp_detection(model.detection_probability(&sensor.mean, &component.gaussian.mean, component.kind))
}

pub fn type_likelihoods<M: MeasurementModel>(
    model: &M,
    prior: &Bernoulli,
    z: &Measurement,
    sensor: &GaussianComponent,
) -> Result<Vec<TypeLikelihood>> {
    prior
        .belief
        .components
        .iter()
        .map(|c| {
            let detection = detection_probability(model, sensor, c);
            match innovation(model, sensor, &c.gaussian, c.kind, z) {
                Ok((nu, s, _)) => {
                    let (ll, maha) = log_gaussian(&nu, &s)?;
                    Ok(TypeLikelihood { kind: c.kind, detection, log_likelihood: ll, mahalanobis2: maha })
                }
                Err(SlamError::DegenerateGeometry(msg)) => {
                    log::debug!("type {} unusable for this measurement: {msg}", c.kind);
                    Ok(TypeLikelihood {
                        kind: c.kind,
                        detection,
                        log_likelihood: f64::NEG_INFINITY,
                        mahalanobis2: f64::INFINITY,
                    })
                }
                Err(e) => Err(e),
            }
        })
        .collect()
}

fn log_detected_from(prior: &Bernoulli, terms: &[TypeLikelihood]) -> f64 {
    let mixed = log_sum_exp(
        prior
            .belief
            .components
            .iter()
            .zip(terms)
            .map(|(c, t)| c.psi.ln() + t.detection.ln() + t.log_likelihood),
    );
    prior.existence.ln() + mixed
}

/// `ln( r * sum_type psi * p_D * N(z; h, S) )`.
pub fn log_weight_detected<M: MeasurementModel>(
    model: &M,
    prior: &Bernoulli,
    z: &Measurement,
    sensor: &GaussianComponent,
) -> Result<f64> {
    let terms = type_likelihoods(model, prior, z, sensor)?;
    Ok(log_detected_from(prior, &terms))
}

pub fn weight_detected<M: MeasurementModel>(
    model: &M,
    prior: &Bernoulli,
    z: &Measurement,
    sensor: &GaussianComponent,
) -> Result<f64> {
    Ok(log_weight_detected(model, prior, z, sensor)?.exp())
}

/// Type-averaged detection probability `sum_type psi * p_D` at the current means.
pub fn mean_detection<M: MeasurementModel>(model: &M, prior: &Bernoulli, sensor: &GaussianComponent) -> f64 {
    prior
        .belief
        .components
        .iter()
        .map(|c| c.psi * detection_probability(model, sensor, c))
        .sum()
}

/// `(1 - r) + r * sum_type psi * (1 - p_D)`.
pub fn weight_misdetected<M: MeasurementModel>(model: &M, prior: &Bernoulli, sensor: &GaussianComponent) -> f64 {
    let r = prior.existence;
    (1.0 - r) + r * (1.0 - mean_detection(model, prior, sensor))
}

/// One candidate type for a newborn landmark.
#[derive(Clone, Debug)]
pub struct BirthComponent {
    pub kind: LandmarkType,
    pub rho: f64,
    pub gaussian: GaussianComponent,
}

/// Weight of "first detection or clutter" for one measurement, with what is
/// needed to build the newborn Bernoulli.
#[derive(Clone, Debug)]
pub struct BirthWeight {
    /// `ln(c + sum_type rho)`
    pub log_total: f64,
    pub components: Vec<BirthComponent>,
}

impl BirthWeight {
    pub fn total(&self) -> f64 {
        self.log_total.exp()
    }

    pub fn existence(&self) -> f64 {
        let rho: f64 = self.components.iter().map(|c| c.rho).sum();
        (rho.ln() - self.log_total).exp().min(1.0)
    }

    /// The newborn Bernoulli, or `None` when no type could explain the measurement.
    pub fn bernoulli(&self) -> Option<Bernoulli> {
        let rho: Vec<f64> = self.components.iter().map(|c| c.rho).collect();
        let psi = multimodel::birth_type_probs(&rho)?;
        let components = self
            .components
            .iter()
            .zip(psi)
            .map(|(c, psi)| TypeComponent { kind: c.kind, psi, gaussian: c.gaussian.clone() })
            .collect();
        Some(Bernoulli::new(self.existence(), LandmarkBelief { components }))
    }
}

/// Birth weight `c(z) + sum_type eta * p_D * N(z; h(m, u_B), S_B)`.
///
/// Types whose inversion fails are skipped; if none succeeds the measurement
/// is clutter-only. With the multi-model switch off only the heaviest type is kept.
pub fn weight_birth<M: MeasurementModel>(
    model: &M,
    z: &Measurement,
    sensor: &GaussianComponent,
    ppp: &PerType<f64>,
    clutter_intensity: f64,
    config: &FilterConfig,
) -> BirthWeight {
    let mut components = Vec::new();
    for kind in LandmarkType::ALL {
        let eta = ppp[kind];
        if kind == LandmarkType::Bs || eta <= 0.0 {
            continue;
        }
        let gaussian = match birth_from_measurement(model, z, sensor, kind, config.birth_max_variance) {
            Ok(g) => g,
            Err(e) => {
                log::debug!("no {kind} birth for measurement: {e}");
                continue;
            }
        };
        let pd = clamp_detection(model.detection_probability(&sensor.mean, &gaussian.mean, kind));
        let rho = match innovation(model, sensor, &gaussian, kind, z).and_then(|(nu, s, _)| log_gaussian(&nu, &s)) {
            Ok((ll, _)) => (eta.ln() + pd.ln() + ll).exp(),
            Err(e) => {
                log::debug!("no {kind} birth for measurement: {e}");
                continue;
            }
        };
        if rho > 0.0 && rho.is_finite() {
            components.push(BirthComponent { kind, rho, gaussian });
        }
    }
    if !config.multi_model && components.len() > 1 {
        let mut best = 0;
        for (k, c) in components.iter().enumerate() {
            if c.rho > components[best].rho {
                best = k;
            }
        }
        let total: f64 = components.iter().map(|c| c.rho).sum();
        let mut keep = components.swap_remove(best);
        keep.rho = total;
        components = vec![keep];
    }
    let log_total = log_sum_exp(
        std::iter::once(clutter_intensity.ln()).chain(components.iter().map(|c| c.rho.ln())),
    )
    // a measurement nothing can explain acts as clutter of vanishing intensity
    .max(f64::MIN_POSITIVE.ln());
    BirthWeight { log_total, components }
}

/// Association costs for one hypothesis: `|Z| x (n + |Z|)`, detected block
/// `-ln(l / l0)`, birth block `-ln l_B` on the diagonal and `+inf` elsewhere.
#[derive(Clone, Debug)]
pub struct CostMatrix {
    pub matrix: DMatrix<f64>,
    pub n_tracks: usize,
    /// `sum_i ln l0_i` over the hypothesis' tracks.
    pub log_missed_sum: f64,
    /// Per-track `ln l0_i`.
    pub log_missed: Vec<f64>,
}

pub fn build_cost_matrix<M: MeasurementModel>(
    model: &M,
    hypothesis: &GlobalHypothesis,
    measurements: &[Measurement],
    sensor: &GaussianComponent,
    births: &[BirthWeight],
    config: &FilterConfig,
) -> Result<CostMatrix> {
    let n = hypothesis.bernoullis.len();
    let m = measurements.len();
    if births.len() != m {
        return Err(SlamError::InvalidArgument("one birth weight per measurement required".into()));
    }
    let log_missed: Vec<f64> = hypothesis
        .bernoullis
        .iter()
        .map(|b| weight_misdetected(model, b, sensor).ln())
        .collect();
    let mut matrix = DMatrix::from_element(m, n + m, f64::INFINITY);
    for (p, z) in measurements.iter().enumerate() {
        for (i, b) in hypothesis.bernoullis.iter().enumerate() {
            let terms = type_likelihoods(model, b, z, sensor)?;
            if let Some(gate) = config.gate {
                let closest = terms
                    .iter()
                    .filter(|t| t.detection > 0.0)
                    .map(|t| t.mahalanobis2)
                    .fold(f64::INFINITY, f64::min);
                if closest > gate {
                    continue;
                }
            }
            let log_l = log_detected_from(b, &terms);
            if log_l.is_finite() {
                matrix[(p, i)] = -(log_l - log_missed[i]);
            }
        }
        matrix[(p, n + p)] = -births[p].log_total;
    }
    Ok(CostMatrix {
        matrix,
        n_tracks: n,
        log_missed_sum: log_missed.iter().sum(),
        log_missed,
    })
}

/// What one track slot does under a data association.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    /// Previously detected track, not detected now.
    Missed,
    /// Track detected by (or, for a new slot, born from) measurement `p` (0-based).
    Detected(usize),
    /// New-track slot whose measurement went elsewhere.
    Absent,
}

/// Association over `n` prior tracks followed by one new-track slot per measurement.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AssociationVector {
    pub n_tracks: usize,
    pub slots: Vec<Slot>,
}

impl AssociationVector {
    pub fn from_assignment(assignment: &Assignment, n_tracks: usize) -> Result<Self> {
        let m = assignment.columns.len();
        let mut slots = vec![Slot::Missed; n_tracks];
        slots.extend(std::iter::repeat_n(Slot::Absent, m));
        for (p, &col) in assignment.columns.iter().enumerate() {
            if col < n_tracks {
                slots[col] = Slot::Detected(p);
            } else if col - n_tracks == p {
                slots[n_tracks + p] = Slot::Detected(p);
            } else {
                return Err(SlamError::Internal(format!(
                    "measurement {p} assigned to off-diagonal birth column {col}"
                )));
            }
        }
        Ok(AssociationVector { n_tracks, slots })
    }

    pub fn n_measurements(&self) -> usize {
        self.slots.len() - self.n_tracks
    }

    pub fn track(&self, i: usize) -> Slot {
        self.slots[i]
    }

    pub fn birth(&self, p: usize) -> Slot {
        self.slots[self.n_tracks + p]
    }

    /// Each measurement is used exactly once across the vector.
    pub fn is_valid(&self) -> bool {
        let m = self.n_measurements();
        let mut count = vec![0usize; m];
        for (t, slot) in self.slots.iter().enumerate() {
            match *slot {
                Slot::Detected(p) if p < m => {
                    if t >= self.n_tracks && t - self.n_tracks != p {
                        return false;
                    }
                    count[p] += 1;
                }
                Slot::Detected(_) => return false,
                Slot::Missed if t >= self.n_tracks => return false,
                Slot::Absent if t < self.n_tracks => return false,
                _ => {}
            }
        }
        count.iter().all(|&c| c == 1)
    }
}

/// The `gamma` best associations with their total costs, best first.
pub fn murty_kbest(costs: &CostMatrix, gamma: usize) -> Result<Vec<(AssociationVector, f64)>> {
    assignment::murty(&costs.matrix, gamma)?
        .into_iter()
        .map(|a| Ok((AssociationVector::from_assignment(&a, costs.n_tracks)?, a.cost)))
        .collect()
}

/// Unnormalized child log-weights `ln w + sum ln l0 - cost`.
pub fn hypothesis_log_weights(parent_weight: f64, costs: &[f64], log_missed_sum: f64) -> Vec<f64> {
    costs
        .iter()
        .map(|c| parent_weight.ln() + log_missed_sum - c)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinearModel;

    fn scalar(mean: f64, var: f64) -> GaussianComponent {
        GaussianComponent::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, var)).unwrap()
    }

    fn meas(z: f64, var: f64) -> Measurement {
        Measurement::new(DVector::from_element(1, z), DMatrix::from_element(1, 1, var)).unwrap()
    }

    /// z = x (landmark only); the 1-D sensor has zero variance and no influence.
    fn toy(pd: f64) -> LinearModel {
        LinearModel::new(DMatrix::zeros(1, 1), DMatrix::identity(1, 1), pd)
    }

    fn sensor() -> GaussianComponent {
        scalar(0.0, 0.0)
    }

    fn bern(r: f64, g: GaussianComponent) -> Bernoulli {
        Bernoulli::new(r, LandmarkBelief::single(LandmarkType::Va, g))
    }

    #[test]
    fn detected_weight_examples() {
        let z = meas(0.0, 1.0);
        let w = weight_detected(&toy(0.9), &bern(1.0, scalar(0.0, 1.0)), &z, &sensor()).unwrap();
        assert!((w - 0.9 / (4.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
        assert!((w - 0.253885).abs() < 1e-6);
        assert_eq!(weight_detected(&toy(0.9), &bern(0.0, scalar(0.0, 1.0)), &z, &sensor()).unwrap(), 0.0);
        assert_eq!(weight_detected(&toy(0.0), &bern(1.0, scalar(0.0, 1.0)), &z, &sensor()).unwrap(), 0.0);
    }

    #[test]
    fn misdetected_weight_examples() {
        let b = |r| bern(r, scalar(0.0, 1.0));
        assert_eq!(weight_misdetected(&toy(0.0), &b(0.7), &sensor()), 1.0);
        assert!((weight_misdetected(&toy(0.9), &b(1.0), &sensor()) - 0.1).abs() < 1e-12);
        assert!((weight_misdetected(&toy(0.9), &b(0.9), &sensor()) - 0.19).abs() < 1e-12);
        assert!(weight_misdetected(&toy(1.0), &b(1.0), &sensor()) > 0.0);
    }

    #[test]
    fn birth_weight_floor_and_toy_value() {
        let cfg = FilterConfig::default();
        let z = meas(2.0, 1.0);
        let none = weight_birth(&toy(0.9), &z, &sensor(), &PerType::splat(0.0), 1.2835e-5, &cfg);
        assert!((none.total() - 1.2835e-5).abs() < 1e-18);
        assert!(none.bernoulli().is_none());

        // Inverting z = x gives u_B = z with C_B = R, so S_B = 2 and
        // rho = eta * p_D * N(0; 0, 2) for each of the two non-BS types.
        let eta = 0.5;
        let b = weight_birth(&toy(0.9), &z, &sensor(), &PerType::new(1.0, eta, eta), 0.01, &cfg);
        let rho = eta * 0.9 / (4.0 * std::f64::consts::PI).sqrt();
        assert!((b.total() - (0.01 + 2.0 * rho)).abs() < 1e-12);
        let born = b.bernoulli().unwrap();
        assert!((born.existence - 2.0 * rho / (0.01 + 2.0 * rho)).abs() < 1e-12);
        assert_eq!(born.belief.components.len(), 2);
        assert!(born.belief.get(LandmarkType::Bs).is_none());
        assert!((born.belief.components[0].psi - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cost_matrix_structure() {
        let cfg = FilterConfig { gate: None, ..FilterConfig::default() };
        let model = toy(0.9);
        let hyp = GlobalHypothesis { weight: 1.0, bernoullis: vec![bern(0.8, scalar(0.0, 1.0))] };
        let zs = [meas(0.3, 1.0), meas(-1.0, 1.0)];
        let births: Vec<BirthWeight> = zs
            .iter()
            .map(|z| weight_birth(&model, z, &sensor(), &PerType::new(0.0, 0.1, 0.0), 1e-3, &cfg))
            .collect();
        let c = build_cost_matrix(&model, &hyp, &zs, &sensor(), &births, &cfg).unwrap();
        assert_eq!(c.matrix.shape(), (2, 3));
        let l0 = weight_misdetected(&model, &hyp.bernoullis[0], &sensor());
        for (p, z) in zs.iter().enumerate() {
            let l = weight_detected(&model, &hyp.bernoullis[0], z, &sensor()).unwrap();
            assert!((c.matrix[(p, 0)] + (l / l0).ln()).abs() < 1e-12);
            assert!((c.matrix[(p, 1 + p)] + births[p].total().ln()).abs() < 1e-12);
            assert_eq!(c.matrix[(p, 1 + (1 - p))], f64::INFINITY);
        }
        assert!((c.log_missed_sum - l0.ln()).abs() < 1e-15);
    }

    #[test]
    fn empty_cases() {
        let cfg = FilterConfig::default();
        let model = toy(0.9);
        let hyp = GlobalHypothesis { weight: 1.0, bernoullis: vec![bern(0.8, scalar(0.0, 1.0))] };
        let c = build_cost_matrix(&model, &hyp, &[], &sensor(), &[], &cfg).unwrap();
        assert_eq!(c.matrix.shape(), (0, 1));
        let sols = murty_kbest(&c, 5).unwrap();
        assert_eq!(sols.len(), 1);
        assert_eq!(sols[0].0.slots, [Slot::Missed]);

        let empty = GlobalHypothesis { weight: 1.0, bernoullis: vec![] };
        let z = [meas(0.0, 1.0)];
        let births = vec![weight_birth(&model, &z[0], &sensor(), &PerType::new(0.0, 0.1, 0.0), 1e-3, &cfg)];
        let c = build_cost_matrix(&model, &empty, &z, &sensor(), &births, &cfg).unwrap();
        assert_eq!(c.matrix.shape(), (1, 1));
        assert!((c.matrix[(0, 0)] + births[0].total().ln()).abs() < 1e-15);
    }

    #[test]
    fn gating_blocks_far_pairs() {
        let cfg = FilterConfig { gate: Some(30.0), ..FilterConfig::default() };
        let model = toy(0.9);
        let hyp = GlobalHypothesis { weight: 1.0, bernoullis: vec![bern(1.0, scalar(0.0, 0.01))] };
        let z = [meas(50.0, 0.01)];
        let births = vec![weight_birth(&model, &z[0], &sensor(), &PerType::new(0.0, 0.1, 0.0), 1e-3, &cfg)];
        let c = build_cost_matrix(&model, &hyp, &z, &sensor(), &births, &cfg).unwrap();
        assert_eq!(c.matrix[(0, 0)], f64::INFINITY);
    }

    #[test]
    fn association_vector_translation() {
        let a = Assignment { columns: vec![0, 3], cost: 0.0 };
        let v = AssociationVector::from_assignment(&a, 2).unwrap();
        assert_eq!(v.slots, [Slot::Detected(0), Slot::Missed, Slot::Absent, Slot::Detected(1)]);
        assert!(v.is_valid());
        let bad = Assignment { columns: vec![3, 0], cost: 0.0 };
        assert!(AssociationVector::from_assignment(&bad, 2).is_err());
    }

    #[test]
    fn child_weights() {
        let one = normalize_log_weights(&hypothesis_log_weights(0.4, &[1.7], -0.3)).unwrap();
        assert_eq!(one, [1.0]);
        let even = normalize_log_weights(&hypothesis_log_weights(1.0, &[2.0, 2.0], 0.0)).unwrap();
        assert!((even[0] - 0.5).abs() < 1e-15);
        let ratio = normalize_log_weights(&hypothesis_log_weights(1.0, &[1.0, 1.0 + 3f64.ln()], 0.0)).unwrap();
        assert!((ratio[0] / ratio[1] - 3.0).abs() < 1e-12);
    }
}
