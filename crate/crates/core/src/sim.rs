//! Ground-truth scenarios and synthetic channel measurements.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Vector3, Vector5};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SlamError};
use crate::geometry::{
    mirror_bs, wrap_angle, ChannelModel, Landmark, LandmarkType, Measurement, PerType, Plane, UeState, AOA_AZ,
    AOA_EL, AOD_AZ, AOD_EL, TOA,
};
use crate::update::{TurnModel, DEFAULT_DETECTION, DEFAULT_FOV_RADIUS};

/// Per-parameter measurement noise standard deviations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// m
    pub toa_std: f64,
    /// rad, shared by all four angles
    pub angle_std: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            toa_std: 0.1,
            angle_std: 0.01,
        }
    }
}

impl NoiseModel {
    pub fn variances(&self) -> Vector5<f64> {
        let a = self.angle_std * self.angle_std;
        Vector5::new(self.toa_std * self.toa_std, a, a, a, a)
    }
}

/// Mirror image of the BS together with the surface that creates it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VirtualAnchor {
    pub position: Vector3<f64>,
    pub surface: Plane,
}

/// Uniform clutter over `[0, max_toa] x (-pi, pi] x [-pi/2, pi/2] x (-pi, pi] x [-pi/2, pi/2]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClutterModel {
    /// Poisson mean of clutter measurements per scan.
    pub rate: f64,
    /// m
    pub max_toa: f64,
}

impl Default for ClutterModel {
    fn default() -> Self {
        ClutterModel {
            rate: 1.0,
            max_toa: 200.0,
        }
    }
}

impl ClutterModel {
    pub fn volume(&self) -> f64 {
        self.max_toa * 4.0 * PI.powi(4)
    }

    pub fn intensity(&self) -> f64 {
        self.rate / self.volume()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub bs: Vector3<f64>,
    pub virtual_anchors: Vec<VirtualAnchor>,
    pub scatterers: Vec<Vector3<f64>>,
    /// `[x, y, z, heading, bias]`
    pub initial_state: [f64; 5],
    pub initial_variance: [f64; 5],
    pub process_variance: [f64; 5],
    pub turn: TurnModel,
    pub steps: usize,
    pub noise: NoiseModel,
    pub detection_probability: PerType<f64>,
    pub fov_radius: f64,
    pub clutter: ClutterModel,
    pub seed: u64,
}

/// Four walls at `x = +-100` and `y = +-100` around a BS at `[0, 0, 40]`, four
/// scatterers 10 m above ground just inside the walls, and a UE driving a
/// counterclockwise circle of radius 70.7 m that closes after 40 steps.
pub fn default_scenario() -> Scenario {
    let bs = Vector3::new(0.0, 0.0, 40.0);
    let walls = [
        (Vector3::new(100.0, 0.0, 0.0), Vector3::new(-1.0, 0.0, 0.0)),
        (Vector3::new(0.0, 100.0, 0.0), Vector3::new(0.0, -1.0, 0.0)),
        (Vector3::new(-100.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0)),
        (Vector3::new(0.0, -100.0, 0.0), Vector3::new(0.0, 1.0, 0.0)),
    ];
    let virtual_anchors = walls
        .iter()
        .map(|(point, normal)| VirtualAnchor {
            position: mirror_bs(&bs, point, normal).expect("unit normals"),
            surface: Plane {
                point: *point,
                normal: *normal,
            },
        })
        .collect();
    Scenario {
        bs,
        virtual_anchors,
        scatterers: vec![
            Vector3::new(99.0, 0.0, 10.0),
            Vector3::new(0.0, 99.0, 10.0),
            Vector3::new(-99.0, 0.0, 10.0),
            Vector3::new(0.0, -99.0, 10.0),
        ],
        initial_state: [70.7285, 0.0, 0.0, PI / 2.0, 300.0],
        initial_variance: [0.3, 0.3, 0.0, 0.0052, 0.3],
        process_variance: [0.2, 0.2, 0.0, 0.001, 0.2],
        turn: TurnModel::default(),
        steps: 40,
        noise: NoiseModel::default(),
        detection_probability: PerType::splat(DEFAULT_DETECTION),
        fov_radius: DEFAULT_FOV_RADIUS,
        clutter: ClutterModel::default(),
        seed: 0,
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        for (k, va) in self.virtual_anchors.iter().enumerate() {
            let image = mirror_bs(&self.bs, &va.surface.point, &va.surface.normal)
                .map_err(|e| SlamError::Config(format!("virtual anchor {k}: {e}")))?;
            if (image - va.position).norm() > 1e-9 {
                return Err(SlamError::Config(format!(
                    "virtual anchor {k} at {:?} is not the mirror image of the BS ({:?})",
                    va.position.as_slice(),
                    image.as_slice()
                )));
            }
        }
        if self.steps == 0 {
            return Err(SlamError::Config("scenario needs at least one step".into()));
        }
        if self.initial_variance.iter().chain(&self.process_variance).any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(SlamError::Config("variances must be finite and non-negative".into()));
        }
        if !(self.noise.toa_std > 0.0) || !(self.noise.angle_std > 0.0) {
            return Err(SlamError::Config("measurement noise must be positive".into()));
        }
        if !(self.clutter.rate >= 0.0) || !(self.clutter.max_toa > 0.0) {
            return Err(SlamError::Config("invalid clutter model".into()));
        }
        if !(self.turn.dt > 0.0) {
            return Err(SlamError::Config("time step must be positive".into()));
        }
        Ok(())
    }

    pub fn channel_model(&self) -> ChannelModel {
        ChannelModel {
            bs_position: self.bs,
            detection_probability: self.detection_probability,
            fov_radius: self.fov_radius,
        }
    }

    /// All true landmarks in a fixed order: BS, virtual anchors, scatterers.
    pub fn landmarks(&self) -> Vec<Landmark> {
        std::iter::once(Landmark::new(LandmarkType::Bs, self.bs))
            .chain(self.virtual_anchors.iter().map(|v| Landmark::new(LandmarkType::Va, v.position)))
            .chain(self.scatterers.iter().map(|p| Landmark::new(LandmarkType::Sp, *p)))
            .collect()
    }

    pub fn truth_positions(&self, kind: LandmarkType) -> Vec<Vector3<f64>> {
        self.landmarks().into_iter().filter(|l| l.kind == kind).map(|l| l.position).collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SlamError::io(path, e))?;
        Self::from_json(&text)
    }
}

fn normal(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("standard deviation is finite and non-negative")
}

/// UE states for steps `0..=steps`. The initial state is the prior mean; each
/// later state applies the turn model and adds `N(0, Q)` process noise.
pub fn simulate_trajectory<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Vec<UeState> {
    let noise: Vec<Normal<f64>> = scenario.process_variance.iter().map(|v| normal(v.sqrt())).collect();
    let mut state = scenario.initial_state;
    let mut out = Vec::with_capacity(scenario.steps + 1);
    out.push(UeState::from_slice(&state));
    for _ in 0..scenario.steps {
        let (mut next, _) = scenario.turn.transition(&state);
        for (k, n) in noise.iter().enumerate() {
            // z has zero process noise; skipping the draw keeps it exact
            if scenario.process_variance[k] > 0.0 {
                next[k] += n.sample(rng);
            }
        }
        next[3] = wrap_angle(next[3]);
        state = next;
        out.push(UeState::from_slice(&state));
    }
    out
}

/// Where a measurement came from. Kept for diagnostics only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    /// Index into [`Scenario::landmarks`].
    Landmark(usize),
    Clutter,
}

#[derive(Clone, Debug)]
pub struct MeasurementSet {
    pub measurements: Vec<Measurement>,
    pub sources: Vec<Source>,
}

/// One scan: each landmark detected with its detection probability, plus
/// Poisson clutter, in random order.
pub fn generate_measurements<R: Rng + ?Sized>(ue: &UeState, scenario: &Scenario, rng: &mut R) -> Result<MeasurementSet> {
    let model = scenario.channel_model();
    let variances = scenario.noise.variances();
    let toa_noise = normal(scenario.noise.toa_std);
    let angle_noise = normal(scenario.noise.angle_std);
    let mut items: Vec<(Vector5<f64>, Source)> = Vec::new();
    for (k, lm) in scenario.landmarks().iter().enumerate() {
        let pd = model.detection_probability(ue, lm);
        if !(rng.random::<f64>() < pd) {
            continue;
        }
        let mut z = model.measure(ue, lm)?;
        z[TOA] += toa_noise.sample(rng);
        for row in [AOA_AZ, AOA_EL, AOD_AZ, AOD_EL] {
            z[row] += angle_noise.sample(rng);
        }
        items.push((wrap_measurement(z), Source::Landmark(k)));
    }
    let n_clutter = if scenario.clutter.rate > 0.0 {
        Poisson::new(scenario.clutter.rate)
            .map_err(|e| SlamError::Config(format!("clutter rate: {e}")))?
            .sample(rng) as usize
    } else {
        0
    };
    for _ in 0..n_clutter {
        let z = Vector5::new(
            rng.random_range(0.0..scenario.clutter.max_toa),
            uniform_azimuth(rng),
            rng.random_range(-PI / 2.0..=PI / 2.0),
            uniform_azimuth(rng),
            rng.random_range(-PI / 2.0..=PI / 2.0),
        );
        items.push((z, Source::Clutter));
    }
    items.shuffle(rng);
    let mut out = MeasurementSet {
        measurements: Vec::with_capacity(items.len()),
        sources: Vec::with_capacity(items.len()),
    };
    for (z, source) in items {
        out.measurements.push(Measurement::channel(z, variances)?);
        out.sources.push(source);
    }
    Ok(out)
}

fn uniform_azimuth<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    wrap_angle(rng.random_range(-PI..PI))
}

/// Azimuths wrapped, elevations clamped to `[-pi/2, pi/2]`.
fn wrap_measurement(mut z: Vector5<f64>) -> Vector5<f64> {
    z[AOA_AZ] = wrap_angle(z[AOA_AZ]);
    z[AOD_AZ] = wrap_angle(z[AOD_AZ]);
    z[AOA_EL] = z[AOA_EL].clamp(-PI / 2.0, PI / 2.0);
    z[AOD_EL] = z[AOD_EL].clamp(-PI / 2.0, PI / 2.0);
    z
}

/// Ground truth as CSV: `step,x,y,z,heading,bias`.
pub fn trajectory_csv(states: &[UeState]) -> String {
    let mut out = String::from("step,x,y,z,heading,bias\n");
    for (k, s) in states.iter().enumerate() {
        let _ = writeln!(
            out,
            "{k},{},{},{},{},{}",
            s.position.x, s.position.y, s.position.z, s.heading, s.clock_bias
        );
    }
    out
}
