//! Filter core: sensor prediction, the joint sensor/landmark EK update per
//! data association, newborn landmarks, sensor marginalization and the full
//! EK-PMB / EK-PMBM time step.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix5};
use serde::{Deserialize, Serialize};

use crate::association::{
    self, build_cost_matrix, clamp_detection, hypothesis_log_weights, mean_detection, murty_kbest,
    normalize_log_weights, weight_birth, AssociationVector, BirthWeight, Slot,
};
use crate::density::{
    merge_bernoullis, symmetrized, Bernoulli, GaussianComponent, GlobalHypothesis, PmbmDensity,
};
use crate::error::{Result, SlamError};
use crate::geometry::{wrap_angle, Measurement, PerType, UE_STATE_DIM};
use crate::model::MeasurementModel;
use crate::multimodel::{self, MissedTypeRule};
use crate::reduction;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterKind {
    /// Keeps a single multi-Bernoulli by marginalizing associations every step.
    #[default]
    #[serde(rename = "ek-pmb")]
    Pmb,
    /// Keeps a mixture of global hypotheses.
    #[serde(rename = "ek-pmbm")]
    Pmbm,
}

impl FilterKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterKind::Pmb => "ek-pmb",
            FilterKind::Pmbm => "ek-pmbm",
        }
    }
}

impl std::str::FromStr for FilterKind {
    type Err = SlamError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ek-pmb" => Ok(FilterKind::Pmb),
            "ek-pmbm" => Ok(FilterKind::Pmbm),
            other => Err(SlamError::Config(format!("unknown filter kind '{other}'"))),
        }
    }
}

/// Constant turn-rate motion with known speed and turn rate. The state is
/// `[x, y, z, heading, bias]`; height and bias are carried over.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnModel {
    /// m/s
    pub speed: f64,
    /// rad/s, positive is counterclockwise
    pub turn_rate: f64,
    /// s
    pub dt: f64,
}

impl Default for TurnModel {
    fn default() -> Self {
        TurnModel {
            speed: 22.22,
            turn_rate: PI / 10.0,
            dt: 0.5,
        }
    }
}

impl TurnModel {
    /// Propagated state and the transition Jacobian.
    pub fn transition(&self, s: &[f64]) -> ([f64; 5], Matrix5<f64>) {
        let heading = s[3];
        let turned = heading + self.turn_rate * self.dt;
        let mut f = Matrix5::identity();
        let (dx, dy, dx_dh, dy_dh);
        if self.turn_rate.abs() < 1e-9 {
            let step = self.speed * self.dt;
            dx = step * heading.cos();
            dy = step * heading.sin();
            dx_dh = -step * heading.sin();
            dy_dh = step * heading.cos();
        } else {
            let radius = self.speed / self.turn_rate;
            dx = radius * (turned.sin() - heading.sin());
            dy = radius * (heading.cos() - turned.cos());
            dx_dh = radius * (turned.cos() - heading.cos());
            dy_dh = radius * (turned.sin() - heading.sin());
        }
        f[(0, 3)] = dx_dh;
        f[(1, 3)] = dy_dh;
        (
            [s[0] + dx, s[1] + dy, s[2], wrap_angle(turned), s[4]],
            f,
        )
    }
}

/// Axis-aligned map region over which the undetected-landmark intensity is uniform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapRegion {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for MapRegion {
    fn default() -> Self {
        MapRegion {
            min: [-200.0, -200.0, 0.0],
            max: [200.0, 200.0, 40.0],
        }
    }
}

impl MapRegion {
    pub fn volume(&self) -> f64 {
        (0..3).map(|k| self.max[k] - self.min[k]).product()
    }

    /// Fraction of the region within `radius` of a point on the ground
    /// (`z = 0`), ignoring horizontal clipping.
    pub fn ball_fraction(&self, radius: f64) -> f64 {
        let lo = self.min[2].max(0.0).min(radius);
        let hi = self.max[2].min(radius);
        if hi <= lo {
            return 0.0;
        }
        let slab = |z: f64| PI * (radius * radius * z - z * z * z / 3.0);
        ((slab(hi) - slab(lo)) / self.volume()).min(1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub kind: FilterKind,
    /// Associations kept per parent hypothesis.
    pub gamma: usize,
    pub turn: TurnModel,
    pub process_noise: Matrix5<f64>,
    /// Per-type rate of undetected landmarks (per m^3).
    pub ppp: PerType<f64>,
    /// Constant detection probability used to thin the undetected intensity.
    pub thinning_detection: PerType<f64>,
    pub clutter_intensity: f64,
    /// Squared-Mahalanobis gate on detected-again pairs; `None` disables gating.
    pub gate: Option<f64>,
    pub bernoulli_prune: f64,
    pub hypothesis_prune: f64,
    pub max_hypotheses: usize,
    pub merge_threshold: f64,
    /// Types whose probability falls below this are dropped. A detected track
    /// is pruned before the joint update, where every kept type counts fully.
    pub type_prune: f64,
    pub multi_model: bool,
    pub missed_type_rule: MissedTypeRule,
    pub joseph_form: bool,
    /// Births whose covariance has a larger eigenvalue are rejected.
    pub birth_max_variance: f64,
}

pub const DEFAULT_DETECTION: f64 = 0.9;
pub const DEFAULT_FOV_RADIUS: f64 = 50.0;

/// Clutter intensity for Poisson(1) clutter uniform over
/// `[0, 200] m x (-pi, pi] x [-pi/2, pi/2] x (-pi, pi] x [-pi/2, pi/2]`.
pub fn default_clutter_intensity() -> f64 {
    1.0 / (4.0 * 200.0 * PI.powi(4))
}

impl Default for FilterConfig {
    fn default() -> Self {
        let region = MapRegion::default();
        let eta = 10.0 / region.volume();
        let sp_visible = region.ball_fraction(DEFAULT_FOV_RADIUS);
        FilterConfig {
            kind: FilterKind::Pmb,
            gamma: 10,
            turn: TurnModel::default(),
            process_noise: Matrix5::from_diagonal(&nalgebra::Vector5::new(0.2, 0.2, 0.0, 0.001, 0.2)),
            ppp: PerType::new(0.0, eta, eta),
            thinning_detection: PerType::new(
                DEFAULT_DETECTION,
                DEFAULT_DETECTION,
                DEFAULT_DETECTION * sp_visible,
            ),
            clutter_intensity: default_clutter_intensity(),
            gate: Some(30.0),
            bernoulli_prune: 1e-4,
            hypothesis_prune: 1e-4,
            max_hypotheses: 50,
            merge_threshold: 50.0,
            type_prune: 1e-2,
            multi_model: true,
            missed_type_rule: MissedTypeRule::default(),
            joseph_form: false,
            birth_max_variance: 1e8,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma < 1 {
            return Err(SlamError::Config("gamma must be at least 1".into()));
        }
        if !(self.turn.dt > 0.0) {
            return Err(SlamError::Config("time step must be positive".into()));
        }
        if self.max_hypotheses < 1 {
            return Err(SlamError::Config("max_hypotheses must be at least 1".into()));
        }
        if self.clutter_intensity < 0.0 || self.ppp.bs < 0.0 || self.ppp.va < 0.0 || self.ppp.sp < 0.0 {
            return Err(SlamError::Config("intensities must be non-negative".into()));
        }
        Ok(())
    }
}

/// EK prediction through the turn model: `v(m)`, `F P F^T + Q`.
pub fn predict_sensor(
    belief: &GaussianComponent,
    turn: &TurnModel,
    process_noise: &Matrix5<f64>,
) -> Result<GaussianComponent> {
    if belief.dim() != UE_STATE_DIM {
        return Err(SlamError::InvalidArgument(format!(
            "turn model needs a 5-D sensor state, got {}",
            belief.dim()
        )));
    }
    let (mean, f) = turn.transition(belief.mean.as_slice());
    let p = Matrix5::from_iterator(belief.cov.iter().copied());
    let cov = f * p * f.transpose() + process_noise;
    Ok(GaussianComponent {
        mean: DVector::from_column_slice(&mean),
        cov: symmetrized(&DMatrix::from_iterator(5, 5, cov.iter().copied())),
    })
}

/// Landmarks are static: the map prediction is the identity.
pub fn predict_map(density: &PmbmDensity) -> PmbmDensity {
    density.clone()
}

/// Undetected intensity after a scan: `eta <- (1 - p_D) eta`.
pub fn thin_ppp(ppp: &PerType<f64>, detection: &PerType<f64>) -> PerType<f64> {
    ppp.map(|kind, eta| (1.0 - detection[kind]) * eta)
}

/// Newborn landmark Gaussian: the mean inverts `z` at the sensor mean, the
/// covariance is the landmark marginal of an EK update from a flat prior,
/// `(Hx^T (Hs P Hs^T + R)^-1 Hx)^-1`.
pub fn birth_from_measurement<M: MeasurementModel>(
    model: &M,
    z: &Measurement,
    sensor: &GaussianComponent,
    kind: crate::geometry::LandmarkType,
    max_variance: f64,
) -> Result<GaussianComponent> {
    let mean = model.birth_mean(&z.value, &sensor.mean, kind)?;
    let lin = model.linearize(&sensor.mean, &mean, kind)?;
    let a = &lin.jac_sensor * &sensor.cov * lin.jac_sensor.transpose() + &z.covariance;
    let a_chol = a
        .cholesky()
        .ok_or_else(|| SlamError::Numerical("birth innovation covariance is singular".into()))?;
    let info = lin.jac_landmark.transpose() * a_chol.solve(&lin.jac_landmark);
    let info = symmetrized(&info);
    let eig = info.clone().symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > hi * 1e-14) || !(1.0 / lo <= max_variance) {
        return Err(SlamError::DegenerateGeometry(format!(
            "measurement does not constrain the {kind} position (information eigenvalues {lo:e}..{hi:e})"
        )));
    }
    let cov = info
        .cholesky()
        .ok_or_else(|| SlamError::DegenerateGeometry("birth information is not positive definite".into()))?
        .inverse();
    Ok(GaussianComponent {
        mean,
        cov: symmetrized(&cov),
    })
}

/// Result of one association's joint update.
#[derive(Clone, Debug)]
pub struct JointPosterior {
    pub sensor: GaussianComponent,
    /// Prior tracks, updated, in their original order.
    pub tracks: Vec<Bernoulli>,
    /// One entry per measurement; `Some` where the association starts a new track.
    pub new_tracks: Vec<Option<Bernoulli>>,
}

fn existence_after_miss(r: f64, mean_detection: f64) -> f64 {
    let survive = (1.0 - mean_detection) * r;
    survive / (1.0 - r + survive)
}

/// Joint EK update of the sensor and every detected landmark under one
/// association. Misdetected tracks keep their Gaussians and only update `r`
/// and the type probabilities. Each detected landmark contributes one
/// replicated copy of its measurement per candidate type, with the copies'
/// noise fully correlated.
pub fn joint_update<M: MeasurementModel>(
    model: &M,
    tracks: &[Bernoulli],
    sigma: &AssociationVector,
    sensor_prior: &GaussianComponent,
    measurements: &[Measurement],
    births: &[BirthWeight],
    config: &FilterConfig,
) -> Result<JointPosterior> {
    if sigma.n_tracks != tracks.len() || sigma.n_measurements() != measurements.len() {
        return Err(SlamError::InvalidArgument("association does not match the hypothesis".into()));
    }
    let ns = sensor_prior.dim();
    let nl = model.landmark_dim();
    let nz = model.measurement_dim();

    let mut posterior_tracks: Vec<Bernoulli> = tracks.to_vec();
    let mut sensor = sensor_prior.clone();

    for (i, prior) in tracks.iter().enumerate() {
        let post = &mut posterior_tracks[i];
        let pd: Vec<f64> = prior
            .belief
            .components
            .iter()
            .map(|c| association::detection_probability(model, sensor_prior, c))
            .collect();
        let psi: Vec<f64> = prior.belief.components.iter().map(|c| c.psi).collect();
        let new_psi = match sigma.track(i) {
            Slot::Detected(p) => {
                post.existence = 1.0;
                let terms = association::type_likelihoods(model, prior, &measurements[p], sensor_prior)?;
                let ll: Vec<f64> = terms.iter().map(|t| t.log_likelihood).collect();
                multimodel::update_detected(&psi, &pd, &ll)
            }
            Slot::Missed => {
                post.existence = existence_after_miss(prior.existence, mean_detection(model, prior, sensor_prior));
                multimodel::update_missed(&psi, &pd, config.missed_type_rule)
            }
            Slot::Absent => return Err(SlamError::Internal("prior track marked absent".into())),
        };
        for (c, v) in post.belief.components.iter_mut().zip(new_psi) {
            c.psi = v;
        }
        // Types this detection has ruled out would otherwise have to explain
        // the measurement exactly through the shared noise of the replicas.
        if matches!(sigma.track(i), Slot::Detected(_)) {
            post.belief.prune_types(config.type_prune);
        }
    }


    // Column offset of every (detected track, type component) block.
    let mut blocks: Vec<(usize, usize, usize, usize)> = Vec::new(); // (track, comp, measurement, offset)
    let mut dim = ns;
    for (i, b) in posterior_tracks.iter().enumerate() {
        if let Slot::Detected(p) = sigma.track(i) {
            for c in 0..b.belief.components.len() {
                blocks.push((i, c, p, dim));
                dim += nl;
            }
        }
    }


    if !blocks.is_empty() {
        let rows = blocks.len() * nz;
        let mut mean = DVector::zeros(dim);
        let mut prior_cov = DMatrix::zeros(dim, dim);
        mean.rows_mut(0, ns).copy_from(&sensor_prior.mean);
        prior_cov.view_mut((0, 0), (ns, ns)).copy_from(&sensor_prior.cov);
        let mut h = DMatrix::zeros(rows, dim);
        let mut nu = DVector::zeros(rows);
        let mut noise = DMatrix::zeros(rows, rows);

        for (k, &(i, c, p, off)) in blocks.iter().enumerate() {
            let comp = &posterior_tracks[i].belief.components[c];
            mean.rows_mut(off, nl).copy_from(&comp.gaussian.mean);
            prior_cov.view_mut((off, off), (nl, nl)).copy_from(&comp.gaussian.cov);
            let lin = model.linearize(&sensor_prior.mean, &comp.gaussian.mean, comp.kind)?;
            let r0 = k * nz;
            h.view_mut((r0, 0), (nz, ns)).copy_from(&lin.jac_sensor);
            h.view_mut((r0, off), (nz, nl)).copy_from(&lin.jac_landmark);
            nu.rows_mut(r0, nz).copy_from(&model.innovation(&measurements[p].value, &lin.predicted));
            // Copies of the same measurement share its noise exactly.
            for (k2, &(i2, _, p2, _)) in blocks.iter().enumerate() {
                if i2 == i && p2 == p {
                    noise
                        .view_mut((r0, k2 * nz), (nz, nz))
                        .copy_from(&measurements[p].covariance);
                }
            }
        }

        let hp = &h * &prior_cov;
        let mut s = symmetrized(&(&hp * h.transpose() + &noise));
        let chol = match s.clone().cholesky() {
            Some(ch) => ch,
            None => {
                s += DMatrix::identity(rows, rows) * 1e-9;
                s.clone().cholesky().ok_or_else(|| {
                    SlamError::Numerical(format!("joint innovation covariance ({rows}x{rows}) is singular"))
                })?
            }
        };
        // K = P H^T S^-1 = (S^-1 H P)^T
        let gain_t = chol.solve(&hp);
        let gain = gain_t.transpose();
        let post_mean = &mean + &gain * &nu;
        let post_cov = if config.joseph_form {
            let i_kh = DMatrix::identity(dim, dim) - &gain * &h;
            &i_kh * &prior_cov * i_kh.transpose() + &gain * &noise * gain.transpose()
        } else {
            &prior_cov - hp.transpose() * &gain_t
        };
        let post_cov = symmetrized(&post_cov);

        let mut sensor_mean = post_mean.rows(0, ns).into_owned();
        if ns == UE_STATE_DIM {
            sensor_mean[3] = wrap_angle(sensor_mean[3]);
        }
        sensor = GaussianComponent {
            mean: sensor_mean,
            cov: post_cov.view((0, 0), (ns, ns)).into_owned(),
        };
        for &(i, c, _, off) in &blocks {
            let g = &mut posterior_tracks[i].belief.components[c].gaussian;
            g.mean = post_mean.rows(off, nl).into_owned();
            g.cov = post_cov.view((off, off), (nl, nl)).into_owned();
        }
    }

    let new_tracks = (0..measurements.len())
        .map(|p| match sigma.birth(p) {
            Slot::Detected(_) => births[p].bernoulli(),
            _ => None,
        })
        .collect();

    Ok(JointPosterior {
        sensor,
        tracks: posterior_tracks,
        new_tracks,
    })
}

/// Moment-matched sensor Gaussian over weighted children.
pub fn marginalize_sensor(children: &[(f64, &GaussianComponent)]) -> Result<GaussianComponent> {
    let total: f64 = children.iter().map(|(w, _)| w).sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(SlamError::InvalidArgument(format!("child weights sum to {total}")));
    }
    if children.len() == 1 {
        return Ok(children[0].1.clone());
    }
    // Headings are averaged as offsets from the first child to stay clear of the wrap.
    let anchor = children[0].1.mean.clone();
    let shifted: Vec<(f64, GaussianComponent)> = children
        .iter()
        .map(|(w, g)| {
            let mut g = (*g).clone();
            if g.dim() == UE_STATE_DIM {
                g.mean[3] = anchor[3] + wrap_angle(g.mean[3] - anchor[3]);
            }
            (*w, g)
        })
        .collect();
    let mut out = GaussianComponent::moment_match(shifted.iter().map(|(w, g)| (*w, g)))
        .ok_or_else(|| SlamError::DegenerateDensity("no sensor mass".into()))?;
    if out.dim() == UE_STATE_DIM {
        out.mean[3] = wrap_angle(out.mean[3]);
    }
    Ok(out)
}

/// One posterior data association before reduction.
#[derive(Clone, Debug)]
pub struct PosteriorChild {
    pub weight: f64,
    pub sigma: AssociationVector,
    pub sensor: GaussianComponent,
    pub tracks: Vec<Bernoulli>,
    pub new_tracks: Vec<Option<Bernoulli>>,
}

impl PosteriorChild {
    pub fn into_hypothesis(self) -> GlobalHypothesis {
        let mut bernoullis = self.tracks;
        bernoullis.extend(self.new_tracks.into_iter().flatten());
        GlobalHypothesis {
            weight: self.weight,
            bernoullis,
        }
    }
}

/// Per-step bookkeeping.
#[derive(Clone, Debug, Default)]
pub struct StepReport {
    pub n_measurements: usize,
    pub n_children: usize,
    pub discarded_associations: usize,
    pub n_hypotheses: usize,
    /// Marginal association mass per track; only filled by the PMB reduction.
    pub beta_row_sums: Vec<f64>,
}

/// Children of every hypothesis under its `gamma` best associations, with
/// normalized weights, plus the number of associations whose joint update
/// failed numerically and was dropped.
pub fn posterior_children<M: MeasurementModel>(
    model: &M,
    density: &PmbmDensity,
    sensor: &GaussianComponent,
    measurements: &[Measurement],
    config: &FilterConfig,
) -> Result<(Vec<PosteriorChild>, usize)> {
    let births: Vec<BirthWeight> = measurements
        .iter()
        .map(|z| weight_birth(model, z, sensor, &density.ppp, config.clutter_intensity, config))
        .collect();

    let mut children = Vec::new();
    let mut log_weights = Vec::new();
    let mut discarded = 0;
    for hyp in &density.hypotheses {
        let costs = build_cost_matrix(model, hyp, measurements, sensor, &births, config)?;
        let solutions = murty_kbest(&costs, config.gamma)?;
        let costs_only: Vec<f64> = solutions.iter().map(|(_, c)| *c).collect();
        let logs = hypothesis_log_weights(hyp.weight, &costs_only, costs.log_missed_sum);
        for ((sigma, _), lw) in solutions.into_iter().zip(logs) {
            match joint_update(model, &hyp.bernoullis, &sigma, sensor, measurements, &births, config) {
                Ok(post) => {
                    children.push(PosteriorChild {
                        weight: 0.0,
                        sigma,
                        sensor: post.sensor,
                        tracks: post.tracks,
                        new_tracks: post.new_tracks,
                    });
                    log_weights.push(lw);
                }
                Err(SlamError::Numerical(msg)) => {
                    log::warn!("discarding association: {msg}");
                    discarded += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
    if children.is_empty() {
        return Err(SlamError::Numerical("every data association failed to update".into()));
    }
    let weights = normalize_log_weights(&log_weights)?;
    for (c, w) in children.iter_mut().zip(&weights) {
        c.weight = *w;
    }
    Ok((children, discarded))
}

/// Measurement update of the map and the (already predicted) sensor.
pub fn update<M: MeasurementModel>(
    model: &M,
    density: &PmbmDensity,
    sensor: &GaussianComponent,
    measurements: &[Measurement],
    config: &FilterConfig,
) -> Result<(PmbmDensity, GaussianComponent, StepReport)> {
    let (children, discarded) = posterior_children(model, density, sensor, measurements, config)?;

    let sensor_post = marginalize_sensor(
        &children.iter().map(|c| (c.weight, &c.sensor)).collect::<Vec<_>>(),
    )?;
    let ppp = thin_ppp(&density.ppp, &config.thinning_detection);

    let mut report = StepReport {
        n_measurements: measurements.len(),
        n_children: children.len(),
        discarded_associations: discarded,
        ..StepReport::default()
    };

    let hypotheses = match config.kind {
        FilterKind::Pmbm => children.into_iter().map(PosteriorChild::into_hypothesis).collect(),
        FilterKind::Pmb => {
            if density.hypotheses.len() != 1 {
                return Err(SlamError::Internal(format!(
                    "PMB filter holds {} hypotheses",
                    density.hypotheses.len()
                )));
            }
            let (hyp, table) = reduction::reduce(&children, density.hypotheses[0].bernoullis.len(), measurements.len())?;
            if let Some(table) = table {
                report.beta_row_sums = table.beta_row_sums();
            } else {
                report.beta_row_sums = vec![1.0; hyp.bernoullis.len()];
            }
            vec![hyp]
        }
    };

    let mut posterior = PmbmDensity { ppp, hypotheses }.prune(
        config.bernoulli_prune,
        config.hypothesis_prune,
        config.max_hypotheses,
    )?;
    posterior.prune_types(config.type_prune);
    for h in &mut posterior.hypotheses {
        *h = merge_bernoullis(h, config.merge_threshold);
    }
    report.n_hypotheses = posterior.hypotheses.len();
    Ok((posterior, sensor_post, report))
}

/// Prediction followed by the measurement update.
pub fn step<M: MeasurementModel>(
    model: &M,
    density: &PmbmDensity,
    sensor: &GaussianComponent,
    measurements: &[Measurement],
    config: &FilterConfig,
) -> Result<(PmbmDensity, GaussianComponent, StepReport)> {
    let predicted = predict_sensor(sensor, &config.turn, &config.process_noise)?;
    update(model, &predict_map(density), &predicted, measurements, config)
}

/// Filter state carried between scans.
#[derive(Clone, Debug)]
pub struct Filter<M> {
    pub model: M,
    pub config: FilterConfig,
    pub density: PmbmDensity,
    pub sensor: GaussianComponent,
}

impl<M: MeasurementModel> Filter<M> {
    pub fn new(model: M, config: FilterConfig, density: PmbmDensity, sensor: GaussianComponent) -> Result<Self> {
        config.validate()?;
        sensor.validate()?;
        Ok(Filter {
            model,
            config,
            density,
            sensor,
        })
    }

    pub fn predict(&mut self) -> Result<()> {
        self.sensor = predict_sensor(&self.sensor, &self.config.turn, &self.config.process_noise)?;
        Ok(())
    }

    pub fn update(&mut self, measurements: &[Measurement]) -> Result<StepReport> {
        let (density, sensor, report) = update(&self.model, &self.density, &self.sensor, measurements, &self.config)?;
        self.density = density;
        self.sensor = sensor;
        Ok(report)
    }

    pub fn step(&mut self, measurements: &[Measurement]) -> Result<StepReport> {
        self.predict()?;
        self.update(measurements)
    }
}

/// Detection probability of a track at the current sensor mean, exposed for diagnostics.
pub fn track_detection<M: MeasurementModel>(model: &M, b: &Bernoulli, sensor: &GaussianComponent) -> f64 {
    clamp_detection(mean_detection(model, b, sensor))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{LandmarkBelief, TypeComponent};
    use crate::geometry::{ChannelModel, LandmarkType};
    use crate::model::LinearModel;
    use nalgebra::Vector3;

    fn ue_prior() -> GaussianComponent {
        GaussianComponent::new(
            DVector::from_column_slice(&[70.7285, 0.0, 0.0, PI / 2.0, 300.0]),
            DMatrix::from_diagonal(&DVector::from_column_slice(&[0.3, 0.3, 0.0, 0.0052, 0.3])),
        )
        .unwrap()
    }

    #[test]
    fn turn_prediction_by_hand() {
        let out = predict_sensor(&ue_prior(), &TurnModel::default(), &Matrix5::zeros()).unwrap();
        let radius = 22.22 / (PI / 10.0);
        assert!((radius - 70.72846).abs() < 1e-5);
        let expect = [
            70.7285 + radius * ((PI / 20.0).cos() - 1.0),
            radius * (PI / 20.0).sin(),
            0.0,
            PI / 2.0 + PI / 20.0,
            300.0,
        ];
        for k in 0..5 {
            assert!((out.mean[k] - expect[k]).abs() < 1e-12, "{k}");
        }
        assert!((out.mean[0] - 69.8577).abs() < 1e-4);
        assert!((out.mean[1] - 11.0644).abs() < 1e-4);
    }

    #[test]
    fn zero_step_zero_noise_is_identity() {
        let turn = TurnModel { dt: 0.0, ..TurnModel::default() };
        let prior = ue_prior();
        let out = predict_sensor(&prior, &turn, &Matrix5::zeros()).unwrap();
        assert!((&out.mean - &prior.mean).amax() < 1e-15);
        assert!((&out.cov - &prior.cov).amax() < 1e-15);
    }

    #[test]
    fn covariance_growth_is_process_noise() {
        let q = Matrix5::from_diagonal(&nalgebra::Vector5::new(0.2, 0.2, 0.0, 0.001, 0.2));
        let prior = ue_prior();
        let with = predict_sensor(&prior, &TurnModel::default(), &q).unwrap();
        let without = predict_sensor(&prior, &TurnModel::default(), &Matrix5::zeros()).unwrap();
        let diff = &with.cov - &without.cov;
        assert!((diff - DMatrix::from_iterator(5, 5, q.iter().copied())).amax() < 1e-15);
    }

    #[test]
    fn straight_line_limit_is_continuous() {
        let tiny = TurnModel { turn_rate: 1e-10, ..TurnModel::default() };
        let small = TurnModel { turn_rate: 1e-7, ..TurnModel::default() };
        let s = [1.0, 2.0, 0.0, 0.3, 5.0];
        let (a, fa) = tiny.transition(&s);
        let (b, fb) = small.transition(&s);
        for k in 0..5 {
            assert!((a[k] - b[k]).abs() < 1e-5);
        }
        assert!((fa - fb).amax() < 1e-5);
    }

    #[test]
    fn transition_jacobian_matches_differences() {
        let turn = TurnModel::default();
        let s = [3.0, -4.0, 0.0, 1.1, 2.0];
        let (_, f) = turn.transition(&s);
        let h = 1e-6;
        let mut up = s;
        let mut dn = s;
        up[3] += h;
        dn[3] -= h;
        let (a, _) = turn.transition(&up);
        let (b, _) = turn.transition(&dn);
        assert!(((a[0] - b[0]) / (2.0 * h) - f[(0, 3)]).abs() < 1e-6);
        assert!(((a[1] - b[1]) / (2.0 * h) - f[(1, 3)]).abs() < 1e-6);
    }

    #[test]
    fn thinning() {
        let eta = PerType::new(0.0, 2.0, 4.0);
        let out = thin_ppp(&eta, &PerType::splat(0.9));
        assert!((out.va - 0.2).abs() < 1e-15 && (out.sp - 0.4).abs() < 1e-15);
        assert_eq!(thin_ppp(&eta, &PerType::splat(0.0)), eta);
        let mut k = eta;
        for _ in 0..3 {
            k = thin_ppp(&k, &PerType::splat(0.5));
        }
        assert!((k.sp - 0.5).abs() < 1e-15);
    }

    #[test]
    fn default_thinning_accounts_for_fov() {
        let region = MapRegion::default();
        let frac = region.ball_fraction(50.0);
        let direct = PI * (2500.0 * 40.0 - 40f64.powi(3) / 3.0) / 6.4e6;
        assert!((frac - direct).abs() < 1e-15);
        assert!((FilterConfig::default().thinning_detection.sp - 0.9 * direct).abs() < 1e-15);
    }

    #[test]
    fn marginalize_examples() {
        let g = |m: f64| GaussianComponent::new(DVector::from_element(1, m), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let (a, b) = (g(-1.0), g(1.0));
        let out = marginalize_sensor(&[(0.5, &a), (0.5, &b)]).unwrap();
        assert!(out.mean[0].abs() < 1e-15 && (out.cov[(0, 0)] - 2.0).abs() < 1e-15);
        assert_eq!(marginalize_sensor(&[(1.0, &a)]).unwrap(), a);
        let same = marginalize_sensor(&[(0.3, &a), (0.7, &a)]).unwrap();
        assert!((same.mean[0] + 1.0).abs() < 1e-15 && (same.cov[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn birth_inverts_los_exactly() {
        let model = ChannelModel::new(Vector3::new(0.0, 0.0, 40.0));
        let sensor = ue_prior();
        let ue = crate::geometry::UeState::from_slice(sensor.mean.as_slice());
        let bs = crate::geometry::Landmark::new(LandmarkType::Bs, model.bs_position);
        let z = model.measure(&ue, &bs).unwrap();
        let meas = Measurement::channel(z, nalgebra::Vector5::new(0.01, 1e-4, 1e-4, 1e-4, 1e-4)).unwrap();
        let g = birth_from_measurement(&model, &meas, &sensor, LandmarkType::Bs, 1e8).unwrap();
        assert!((g.mean.fixed_rows::<3>(0) - model.bs_position).norm() < 1e-9);
    }

    #[test]
    fn birth_with_perfect_sensor() {
        let model = ChannelModel::new(Vector3::new(0.0, 0.0, 40.0));
        let mut sensor = ue_prior();
        sensor.cov.fill(0.0);
        let ue = crate::geometry::UeState::from_slice(sensor.mean.as_slice());
        let va = crate::geometry::Landmark::new(LandmarkType::Va, Vector3::new(0.0, 200.0, 40.0));
        let z = model.measure(&ue, &va).unwrap();
        let meas = Measurement::channel(z, nalgebra::Vector5::new(0.01, 1e-4, 1e-4, 1e-4, 1e-4)).unwrap();
        let g = birth_from_measurement(&model, &meas, &sensor, LandmarkType::Va, 1e8).unwrap();
        let jac = model.measure_jacobian(&ue, &va).unwrap();
        let hx = DMatrix::from_fn(5, 3, |r, c| jac[(r, 5 + c)]);
        let rinv = meas.covariance.clone().try_inverse().unwrap();
        let expect = (hx.transpose() * rinv * &hx).try_inverse().unwrap();
        assert!((&g.cov - &expect).amax() / expect.amax() < 1e-9);
    }

    fn linear_track(mean: f64, var: f64, r: f64) -> Bernoulli {
        Bernoulli::new(
            r,
            LandmarkBelief::single(
                LandmarkType::Va,
                GaussianComponent::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, var)).unwrap(),
            ),
        )
    }

    #[test]
    fn misdetection_only_keeps_means() {
        let model = LinearModel::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1), 0.9);
        let sensor = GaussianComponent::new(DVector::from_element(1, 0.5), DMatrix::from_element(1, 1, 2.0)).unwrap();
        let tracks = vec![linear_track(3.0, 1.0, 0.9)];
        let sigma = AssociationVector { n_tracks: 1, slots: vec![Slot::Missed] };
        let out = joint_update(&model, &tracks, &sigma, &sensor, &[], &[], &FilterConfig::default()).unwrap();
        assert_eq!(out.sensor, sensor);
        assert_eq!(out.tracks[0].belief, tracks[0].belief);
        assert!((out.tracks[0].existence - 0.09 / 0.19).abs() < 1e-12);
        assert!((out.tracks[0].existence - 0.47368).abs() < 1e-5);
    }

    #[test]
    fn misdetected_rows_are_omitted_equivalently() {
        // Padding a misdetected landmark with z = 0, h = 0, zero Jacobian rows and
        // unit noise leaves the posterior unchanged, so omitting those rows is exact.
        let ns = 2;
        let p = DMatrix::from_row_slice(4, 4, &[
            2.0, 0.3, 0.0, 0.0,
            0.3, 1.0, 0.0, 0.0,
            0.0, 0.0, 1.5, 0.0,
            0.0, 0.0, 0.0, 0.7,
        ]);
        let h_det = DMatrix::from_row_slice(1, 4, &[1.0, 0.5, 1.0, 0.0]);
        let r = DMatrix::from_element(1, 1, 0.4);
        let nu = DVector::from_element(1, 0.8);
        let cond = |h: &DMatrix<f64>, r: &DMatrix<f64>, nu: &DVector<f64>| {
            let s = h * &p * h.transpose() + r;
            let k = &p * h.transpose() * s.try_inverse().unwrap();
            (&k * nu, &p - &k * h * &p)
        };
        let (dm1, p1) = cond(&h_det, &r, &nu);
        let mut h_pad = DMatrix::zeros(2, 4);
        h_pad.row_mut(0).copy_from(&h_det.row(0));
        let mut r_pad = DMatrix::identity(2, 2);
        r_pad[(0, 0)] = 0.4;
        let nu_pad = DVector::from_column_slice(&[0.8, 0.0]);
        let (dm2, p2) = cond(&h_pad, &r_pad, &nu_pad);
        assert!((dm1 - dm2).amax() < 1e-14);
        assert!((p1 - p2).amax() < 1e-14);
        let _ = ns;
    }

    #[test]
    fn detected_sets_existence_and_types() {
        let model = LinearModel::new(DMatrix::zeros(1, 1), DMatrix::identity(1, 1), 0.9);
        let sensor = GaussianComponent::new(DVector::zeros(1), DMatrix::zeros(1, 1)).unwrap();
        let gauss = |m: f64| GaussianComponent::new(DVector::from_element(1, m), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let track = Bernoulli::new(
            0.4,
            LandmarkBelief::from_components(vec![
                TypeComponent { kind: LandmarkType::Va, psi: 0.5, gaussian: gauss(0.0) },
                TypeComponent { kind: LandmarkType::Sp, psi: 0.5, gaussian: gauss(4.0) },
            ])
            .unwrap(),
        );
        let z = Measurement::new(DVector::from_element(1, 0.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let sigma = AssociationVector { n_tracks: 1, slots: vec![Slot::Detected(0), Slot::Absent] };
        let births = vec![weight_birth(&model, &z, &sensor, &PerType::splat(0.0), 1e-3, &FilterConfig::default())];
        let out = joint_update(&model, &[track], &sigma, &sensor, &[z], &births, &FilterConfig::default()).unwrap();
        let b = &out.tracks[0];
        assert_eq!(b.existence, 1.0);
        // likelihood ratio exp(-(0 - 16)/4) = e^4 in favour of VA
        let expect = 1.0 / (1.0 + (-4.0f64).exp());
        assert!((b.belief.components[0].psi - expect).abs() < 1e-12);
        assert!(out.new_tracks[0].is_none());
    }
}
