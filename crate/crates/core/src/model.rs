//! Measurement-model abstraction used by the filter.
//!
//! The filter only needs a linearization, an innovation rule, a detection
//! probability and a birth inversion. The bistatic channel implements this;
//! tests plug in linear toy models to compare against closed-form conditioning.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::geometry::LandmarkType;

/// First-order expansion of `h(sensor, landmark)` around a linearization point.
#[derive(Clone, Debug)]
pub struct Linearization {
    pub predicted: DVector<f64>,
    pub jac_sensor: DMatrix<f64>,
    pub jac_landmark: DMatrix<f64>,
}

pub trait MeasurementModel: Sync {
    fn sensor_dim(&self) -> usize;
    fn landmark_dim(&self) -> usize;
    fn measurement_dim(&self) -> usize;

    fn linearize(
        &self,
        sensor: &DVector<f64>,
        landmark: &DVector<f64>,
        kind: LandmarkType,
    ) -> Result<Linearization>;

    /// `z - h`, with any angular components wrapped.
    fn innovation(&self, z: &DVector<f64>, predicted: &DVector<f64>) -> DVector<f64> {
        z - predicted
    }

    fn detection_probability(
        &self,
        sensor: &DVector<f64>,
        landmark: &DVector<f64>,
        kind: LandmarkType,
    ) -> f64;

    /// Landmark position explaining `z` at the given sensor mean.
    fn birth_mean(
        &self,
        z: &DVector<f64>,
        sensor_mean: &DVector<f64>,
        kind: LandmarkType,
    ) -> Result<DVector<f64>>;
}

/// Linear-Gaussian toy model `z = A s + B x`, handy for checking the filter
/// against exact Gaussian conditioning.
#[derive(Clone, Debug)]
pub struct LinearModel {
    pub sensor_map: DMatrix<f64>,
    pub landmark_map: DMatrix<f64>,
    pub detection: f64,
}

impl LinearModel {
    pub fn new(sensor_map: DMatrix<f64>, landmark_map: DMatrix<f64>, detection: f64) -> Self {
        assert_eq!(sensor_map.nrows(), landmark_map.nrows());
        LinearModel {
            sensor_map,
            landmark_map,
            detection,
        }
    }
}

impl MeasurementModel for LinearModel {
    fn sensor_dim(&self) -> usize {
        self.sensor_map.ncols()
    }
    fn landmark_dim(&self) -> usize {
        self.landmark_map.ncols()
    }
    fn measurement_dim(&self) -> usize {
        self.sensor_map.nrows()
    }

    fn linearize(
        &self,
        sensor: &DVector<f64>,
        landmark: &DVector<f64>,
        _kind: LandmarkType,
    ) -> Result<Linearization> {
        Ok(Linearization {
            predicted: &self.sensor_map * sensor + &self.landmark_map * landmark,
            jac_sensor: self.sensor_map.clone(),
            jac_landmark: self.landmark_map.clone(),
        })
    }

    fn detection_probability(&self, _: &DVector<f64>, _: &DVector<f64>, _: LandmarkType) -> f64 {
        self.detection
    }

    fn birth_mean(
        &self,
        z: &DVector<f64>,
        sensor_mean: &DVector<f64>,
        _kind: LandmarkType,
    ) -> Result<DVector<f64>> {
        let rhs = z - &self.sensor_map * sensor_mean;
        let b = &self.landmark_map;
        let normal = b.transpose() * b;
        let chol = normal.cholesky().ok_or_else(|| {
            crate::error::SlamError::DegenerateGeometry("landmark map is rank deficient".into())
        })?;
        Ok(chol.solve(&(b.transpose() * rhs)))
    }
}
