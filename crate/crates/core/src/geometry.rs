//! Landmark models and the bistatic channel geometry.
//!
//! A measurement is the 5-vector `[toa, aoa_az, aoa_el, aod_az, aod_el]`.
//! Delays are path lengths in meters plus the UE clock bias (also in meters).
//! Azimuth is `atan2(dy, dx)` and elevation `atan2(dz, |d_xy|)`. AOD is taken
//! in the global frame at the BS; AOA is taken at the UE, with the azimuth
//! measured relative to the UE heading. The UE array is assumed level, so the
//! AOA elevation does not depend on the heading.
//!
//! Virtual anchors are evaluated through the reflecting plane implied by the
//! BS and the VA itself (normal along `x_VA - x_BS`, through their midpoint),
//! so the filter only has to estimate the VA position.

use std::f64::consts::PI;
use std::ops::{Index, IndexMut};

use nalgebra::{DMatrix, DVector, RowVector3, SMatrix, Vector3, Vector5};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SlamError};
use crate::model::{Linearization, MeasurementModel};

pub const UE_STATE_DIM: usize = 5;
pub const LANDMARK_DIM: usize = 3;
pub const MEASUREMENT_DIM: usize = 5;

/// Row indices into a channel measurement.
pub const TOA: usize = 0;
pub const AOA_AZ: usize = 1;
pub const AOA_EL: usize = 2;
pub const AOD_AZ: usize = 3;
pub const AOD_EL: usize = 4;

const GEOMETRY_EPS: f64 = 1e-9;

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    if angle > -PI && angle <= PI {
        return angle;
    }
    let wrapped = (angle + PI).rem_euclid(2.0 * PI) - PI;
    if wrapped <= -PI {
        wrapped + 2.0 * PI
    } else {
        wrapped
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LandmarkType {
    #[serde(rename = "BS")]
    Bs,
    #[serde(rename = "VA")]
    Va,
    #[serde(rename = "SP")]
    Sp,
}

impl LandmarkType {
    pub const ALL: [LandmarkType; 3] = [LandmarkType::Bs, LandmarkType::Va, LandmarkType::Sp];

    pub fn as_str(self) -> &'static str {
        match self {
            LandmarkType::Bs => "BS",
            LandmarkType::Va => "VA",
            LandmarkType::Sp => "SP",
        }
    }
}

impl std::fmt::Display for LandmarkType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One value per landmark type.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct PerType<T> {
    #[serde(rename = "BS")]
    pub bs: T,
    #[serde(rename = "VA")]
    pub va: T,
    #[serde(rename = "SP")]
    pub sp: T,
}

impl<T: Copy> PerType<T> {
    pub fn new(bs: T, va: T, sp: T) -> Self {
        PerType { bs, va, sp }
    }

    pub fn splat(value: T) -> Self {
        PerType {
            bs: value,
            va: value,
            sp: value,
        }
    }

    pub fn map<U: Copy>(&self, f: impl Fn(LandmarkType, T) -> U) -> PerType<U> {
        PerType {
            bs: f(LandmarkType::Bs, self.bs),
            va: f(LandmarkType::Va, self.va),
            sp: f(LandmarkType::Sp, self.sp),
        }
    }
}

impl<T> Index<LandmarkType> for PerType<T> {
    type Output = T;
    fn index(&self, kind: LandmarkType) -> &T {
        match kind {
            LandmarkType::Bs => &self.bs,
            LandmarkType::Va => &self.va,
            LandmarkType::Sp => &self.sp,
        }
    }
}

impl<T> IndexMut<LandmarkType> for PerType<T> {
    fn index_mut(&mut self, kind: LandmarkType) -> &mut T {
        match kind {
            LandmarkType::Bs => &mut self.bs,
            LandmarkType::Va => &mut self.va,
            LandmarkType::Sp => &mut self.sp,
        }
    }
}

/// UE state `[x, y, z, heading, clock_bias]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UeState {
    pub position: Vector3<f64>,
    pub heading: f64,
    pub clock_bias: f64,
}

impl UeState {
    pub fn new(position: Vector3<f64>, heading: f64, clock_bias: f64) -> Self {
        UeState {
            position,
            heading: wrap_angle(heading),
            clock_bias,
        }
    }

    pub fn from_slice(state: &[f64]) -> Self {
        assert!(state.len() >= UE_STATE_DIM, "UE state needs 5 entries");
        UeState::new(Vector3::new(state[0], state[1], state[2]), state[3], state[4])
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.position.x, self.position.y, self.position.z, self.heading, self.clock_bias]
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.to_array())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub kind: LandmarkType,
    pub position: Vector3<f64>,
}

impl Landmark {
    pub fn new(kind: LandmarkType, position: Vector3<f64>) -> Self {
        Landmark { kind, position }
    }
}

/// A reflecting surface given by a point on it and its unit normal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
}

impl Plane {
    pub fn new(point: Vector3<f64>, normal: Vector3<f64>) -> Result<Self> {
        check_unit(&normal)?;
        Ok(Plane { point, normal })
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        (p - self.point).dot(&self.normal)
    }
}

fn check_unit(normal: &Vector3<f64>) -> Result<()> {
    if (normal.norm() - 1.0).abs() > 1e-9 {
        return Err(SlamError::InvalidArgument(format!(
            "surface normal must have unit norm, got {}",
            normal.norm()
        )));
    }
    Ok(())
}

/// Mirror image of the BS across a reflecting surface: `(I - 2 n n^T) x + 2 (mu^T n) n`.
pub fn mirror_bs(
    bs_position: &Vector3<f64>,
    surface_point: &Vector3<f64>,
    surface_normal: &Vector3<f64>,
) -> Result<Vector3<f64>> {
    check_unit(surface_normal)?;
    let n = surface_normal;
    Ok(bs_position - 2.0 * n * n.dot(bs_position) + 2.0 * surface_point.dot(n) * n)
}

/// A single measurement with its noise covariance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub value: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl Measurement {
    pub fn new(value: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let n = value.len();
        if covariance.shape() != (n, n) {
            return Err(SlamError::InvalidArgument(format!(
                "measurement covariance must be {n}x{n}, got {:?}",
                covariance.shape()
            )));
        }
        let asym = (&covariance - covariance.transpose()).amax();
        if asym > 1e-9 {
            return Err(SlamError::InvalidArgument(format!(
                "measurement covariance is not symmetric (max deviation {asym})"
            )));
        }
        if covariance.clone().cholesky().is_none() {
            return Err(SlamError::InvalidArgument(
                "measurement covariance is not positive definite".into(),
            ));
        }
        Ok(Measurement { value, covariance })
    }

    /// Channel measurement with the given diagonal noise covariance.
    pub fn channel(z: Vector5<f64>, variances: Vector5<f64>) -> Result<Self> {
        Measurement::new(
            DVector::from_column_slice(z.as_slice()),
            DMatrix::from_diagonal(&DVector::from_column_slice(variances.as_slice())),
        )
    }

    pub fn toa(&self) -> f64 {
        self.value[TOA]
    }
    pub fn aoa(&self) -> (f64, f64) {
        (self.value[AOA_AZ], self.value[AOA_EL])
    }
    pub fn aod(&self) -> (f64, f64) {
        (self.value[AOD_AZ], self.value[AOD_EL])
    }
}

fn azimuth(u: &Vector3<f64>) -> f64 {
    u.y.atan2(u.x)
}

fn elevation(u: &Vector3<f64>) -> f64 {
    u.z.atan2(u.xy().norm())
}

fn azimuth_gradient(u: &Vector3<f64>) -> RowVector3<f64> {
    let rho2 = u.x * u.x + u.y * u.y;
    RowVector3::new(-u.y / rho2, u.x / rho2, 0.0)
}

fn elevation_gradient(u: &Vector3<f64>) -> RowVector3<f64> {
    let rho = u.xy().norm();
    let n2 = u.norm_squared();
    RowVector3::new(-u.x * u.z / (rho * n2), -u.y * u.z / (rho * n2), rho / n2)
}

fn unit_direction(azimuth: f64, elevation: f64) -> Vector3<f64> {
    Vector3::new(
        elevation.cos() * azimuth.cos(),
        elevation.cos() * azimuth.sin(),
        elevation.sin(),
    )
}

/// Path geometry shared by the forward model and its Jacobian.
struct Path {
    length: f64,
    /// Global direction of arrival, pointing from the UE toward the apparent source.
    aoa: Vector3<f64>,
    /// Global direction of departure, pointing away from the BS.
    aod: Vector3<f64>,
    d_length_ue: RowVector3<f64>,
    d_length_lm: RowVector3<f64>,
    d_aod_ue: nalgebra::Matrix3<f64>,
    d_aod_lm: nalgebra::Matrix3<f64>,
}

/// Bistatic channel model for a single BS, with the type-dependent
/// detection probability and the SP field-of-view radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub bs_position: Vector3<f64>,
    pub detection_probability: PerType<f64>,
    pub fov_radius: f64,
}

impl ChannelModel {
    pub fn new(bs_position: Vector3<f64>) -> Self {
        ChannelModel {
            bs_position,
            detection_probability: PerType::splat(0.9),
            fov_radius: 50.0,
        }
    }

    fn path(&self, ue: &Vector3<f64>, lm: &Landmark) -> Result<Path> {
        let x = lm.position;
        let eye = nalgebra::Matrix3::identity();
        let path = match lm.kind {
            LandmarkType::Bs => {
                let los = x - ue;
                let r = los.norm();
                if r < GEOMETRY_EPS {
                    return Err(SlamError::DegenerateGeometry("UE coincides with the BS".into()));
                }
                let g = (los / r).transpose();
                Path {
                    length: r,
                    aoa: los,
                    aod: -los,
                    d_length_ue: -g,
                    d_length_lm: g,
                    d_aod_ue: eye,
                    d_aod_lm: -eye,
                }
            }
            LandmarkType::Va => {
                let to_va = x - ue;
                let r = to_va.norm();
                let d = x - self.bs_position;
                let d2 = d.norm_squared();
                if r < GEOMETRY_EPS || d2 < GEOMETRY_EPS * GEOMETRY_EPS {
                    return Err(SlamError::DegenerateGeometry(
                        "VA coincides with the UE or the BS".into(),
                    ));
                }
                // Mirror the UE across the plane implied by (BS, VA); the BS
                // transmits toward that image.
                let mid = 0.5 * (x + self.bs_position);
                let e = ue - mid;
                let c = e.dot(&d) / d2;
                let aod = ue - 2.0 * c * d - self.bs_position;
                let dc_dva = (e - 0.5 * d - 2.0 * c * d).transpose() / d2;
                let g = (to_va / r).transpose();
                Path {
                    length: r,
                    aoa: to_va,
                    aod,
                    d_length_ue: -g,
                    d_length_lm: g,
                    d_aod_ue: eye - 2.0 * d * d.transpose() / d2,
                    d_aod_lm: -2.0 * d * dc_dva - 2.0 * c * eye,
                }
            }
            LandmarkType::Sp => {
                let to_sp = x - ue;
                let from_bs = x - self.bs_position;
                let r1 = from_bs.norm();
                let r2 = to_sp.norm();
                if r1 < GEOMETRY_EPS || r2 < GEOMETRY_EPS {
                    return Err(SlamError::DegenerateGeometry(
                        "SP coincides with the UE or the BS".into(),
                    ));
                }
                let g1 = (from_bs / r1).transpose();
                let g2 = (to_sp / r2).transpose();
                Path {
                    length: r1 + r2,
                    aoa: to_sp,
                    aod: from_bs,
                    d_length_ue: -g2,
                    d_length_lm: g1 + g2,
                    d_aod_ue: nalgebra::Matrix3::zeros(),
                    d_aod_lm: eye,
                }
            }
        };
        if path.aod.norm() < GEOMETRY_EPS {
            return Err(SlamError::DegenerateGeometry("zero-length departure direction".into()));
        }
        Ok(path)
    }

    /// Noise-free channel parameters `[toa, aoa_az, aoa_el, aod_az, aod_el]`.
    pub fn measure(&self, ue: &UeState, lm: &Landmark) -> Result<Vector5<f64>> {
        let path = self.path(&ue.position, lm)?;
        Ok(Vector5::new(
            path.length + ue.clock_bias,
            wrap_angle(azimuth(&path.aoa) - ue.heading),
            elevation(&path.aoa),
            wrap_angle(azimuth(&path.aod)),
            elevation(&path.aod),
        ))
    }

    /// Jacobian of [`measure`](Self::measure) with respect to
    /// `[x, y, z, heading, bias, lx, ly, lz]`.
    pub fn measure_jacobian(&self, ue: &UeState, lm: &Landmark) -> Result<SMatrix<f64, 5, 8>> {
        let path = self.path(&ue.position, lm)?;
        if path.aoa.xy().norm() < GEOMETRY_EPS || path.aod.xy().norm() < GEOMETRY_EPS {
            return Err(SlamError::DegenerateGeometry(
                "azimuth undefined for a vertical path".into(),
            ));
        }
        let mut jac = SMatrix::<f64, 5, 8>::zeros();

        jac.fixed_view_mut::<1, 3>(TOA, 0).copy_from(&path.d_length_ue);
        jac[(TOA, 4)] = 1.0;
        jac.fixed_view_mut::<1, 3>(TOA, 5).copy_from(&path.d_length_lm);

        // aoa = source - ue, so d/d(ue) = -I and d/d(landmark) = I.
        let gaz = azimuth_gradient(&path.aoa);
        let gel = elevation_gradient(&path.aoa);
        jac.fixed_view_mut::<1, 3>(AOA_AZ, 0).copy_from(&(-gaz));
        jac[(AOA_AZ, 3)] = -1.0;
        jac.fixed_view_mut::<1, 3>(AOA_AZ, 5).copy_from(&gaz);
        jac.fixed_view_mut::<1, 3>(AOA_EL, 0).copy_from(&(-gel));
        jac.fixed_view_mut::<1, 3>(AOA_EL, 5).copy_from(&gel);

        let gaz = azimuth_gradient(&path.aod);
        let gel = elevation_gradient(&path.aod);
        jac.fixed_view_mut::<1, 3>(AOD_AZ, 0).copy_from(&(gaz * path.d_aod_ue));
        jac.fixed_view_mut::<1, 3>(AOD_AZ, 5).copy_from(&(gaz * path.d_aod_lm));
        jac.fixed_view_mut::<1, 3>(AOD_EL, 0).copy_from(&(gel * path.d_aod_ue));
        jac.fixed_view_mut::<1, 3>(AOD_EL, 5).copy_from(&(gel * path.d_aod_lm));
        Ok(jac)
    }

    /// Type-dependent detection probability; SPs are only visible inside the FOV radius.
    pub fn detection_probability(&self, ue: &UeState, lm: &Landmark) -> f64 {
        let pd = self.detection_probability[lm.kind];
        match lm.kind {
            LandmarkType::Sp => {
                if (lm.position - ue.position).norm() <= self.fov_radius {
                    pd
                } else {
                    0.0
                }
            }
            _ => pd,
        }
    }

    /// Landmark position that explains `z` exactly for the given type, taking
    /// the UE pose and clock bias from `ue`.
    ///
    /// BS/VA: the source lies along the global AOA ray at the bias-corrected
    /// path length. SP: the point on the AOD ray whose two-leg path length
    /// matches the bias-corrected delay.
    pub fn invert(&self, z: &Vector5<f64>, ue: &UeState, kind: LandmarkType) -> Result<Vector3<f64>> {
        let length = z[TOA] - ue.clock_bias;
        if length <= GEOMETRY_EPS {
            return Err(SlamError::DegenerateGeometry(format!(
                "non-positive path length {length}"
            )));
        }
        match kind {
            LandmarkType::Bs | LandmarkType::Va => {
                let dir = unit_direction(z[AOA_AZ] + ue.heading, z[AOA_EL]);
                Ok(ue.position + length * dir)
            }
            LandmarkType::Sp => {
                let dir = unit_direction(z[AOD_AZ], z[AOD_EL]);
                let a = self.bs_position - ue.position;
                let denom = 2.0 * (a.dot(&dir) + length);
                let t = (length * length - a.norm_squared()) / denom;
                if denom.abs() < GEOMETRY_EPS || !t.is_finite() || t <= 0.0 || t >= length {
                    return Err(SlamError::DegenerateGeometry(
                        "delay and departure ray admit no scattering point".into(),
                    ));
                }
                Ok(self.bs_position + t * dir)
            }
        }
    }
}

impl MeasurementModel for ChannelModel {
    fn sensor_dim(&self) -> usize {
        UE_STATE_DIM
    }
    fn landmark_dim(&self) -> usize {
        LANDMARK_DIM
    }
    fn measurement_dim(&self) -> usize {
        MEASUREMENT_DIM
    }

    fn linearize(
        &self,
        sensor: &DVector<f64>,
        landmark: &DVector<f64>,
        kind: LandmarkType,
    ) -> Result<Linearization> {
        let ue = UeState::from_slice(sensor.as_slice());
        let lm = Landmark::new(kind, Vector3::new(landmark[0], landmark[1], landmark[2]));
        let z = self.measure(&ue, &lm)?;
        let jac = self.measure_jacobian(&ue, &lm)?;
        Ok(Linearization {
            predicted: DVector::from_column_slice(z.as_slice()),
            jac_sensor: DMatrix::from_fn(5, 5, |r, c| jac[(r, c)]),
            jac_landmark: DMatrix::from_fn(5, 3, |r, c| jac[(r, 5 + c)]),
        })
    }

    fn innovation(&self, z: &DVector<f64>, predicted: &DVector<f64>) -> DVector<f64> {
        let mut nu = z - predicted;
        for k in [AOA_AZ, AOA_EL, AOD_AZ, AOD_EL] {
            nu[k] = wrap_angle(nu[k]);
        }
        nu
    }

    fn detection_probability(
        &self,
        sensor: &DVector<f64>,
        landmark: &DVector<f64>,
        kind: LandmarkType,
    ) -> f64 {
        let ue = UeState::from_slice(sensor.as_slice());
        let lm = Landmark::new(kind, Vector3::new(landmark[0], landmark[1], landmark[2]));
        ChannelModel::detection_probability(self, &ue, &lm)
    }

    fn birth_mean(
        &self,
        z: &DVector<f64>,
        sensor_mean: &DVector<f64>,
        kind: LandmarkType,
    ) -> Result<DVector<f64>> {
        let ue = UeState::from_slice(sensor_mean.as_slice());
        let z = Vector5::from_column_slice(z.as_slice());
        let x = self.invert(&z, &ue, kind)?;
        Ok(DVector::from_column_slice(x.as_slice()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::assert_close;
    use proptest::prelude::*;

    mod approx_eq {
        macro_rules! assert_close {
            ($a:expr, $b:expr, $tol:expr) => {{
                let (a, b): (f64, f64) = ($a, $b);
                assert!((a - b).abs() <= $tol, "{} vs {} (tol {})", a, b, $tol);
            }};
        }
        pub(crate) use assert_close;
    }

    fn model() -> ChannelModel {
        ChannelModel::new(Vector3::new(0.0, 0.0, 40.0))
    }

    #[test]
    fn wrap_angle_range() {
        assert_close!(wrap_angle(PI), PI, 0.0);
        assert_close!(wrap_angle(-PI), PI, 0.0);
        assert_close!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, 1e-15);
        assert_close!(wrap_angle(0.3), 0.3, 0.0);
    }

    #[test]
    fn mirror_across_wall() {
        let bs = Vector3::new(0.0, 0.0, 40.0);
        let va = mirror_bs(&bs, &Vector3::new(100.0, 0.0, 0.0), &Vector3::x()).unwrap();
        assert!((va - Vector3::new(200.0, 0.0, 40.0)).norm() < 1e-12);

        let on_plane = mirror_bs(&bs, &Vector3::new(0.0, 0.0, 40.0), &Vector3::z()).unwrap();
        assert!((on_plane - bs).norm() < 1e-12);

        let err = mirror_bs(&bs, &Vector3::zeros(), &Vector3::new(1.0, 1.0, 0.0));
        assert!(matches!(err, Err(SlamError::InvalidArgument(_))));
    }

    #[test]
    fn los_measurement_by_hand() {
        let ue = UeState::new(Vector3::new(10.0, 0.0, 0.0), PI / 2.0, 0.0);
        let bs = Landmark::new(LandmarkType::Bs, Vector3::new(0.0, 0.0, 40.0));
        let z = model().measure(&ue, &bs).unwrap();
        assert_close!(z[TOA], 1700f64.sqrt(), 1e-12);
        assert_close!(z[AOD_AZ], 0.0, 1e-15);
        assert_close!(z[AOD_EL], (-40f64).atan2(10.0), 1e-15);
        assert_close!(z[AOD_EL], -1.32582, 1e-5);
        assert_close!(z[AOA_AZ], PI / 2.0, 1e-12);
        assert_close!(z[AOA_EL], 1.32582, 1e-5);
    }

    #[test]
    fn bias_only_shifts_delay() {
        let m = model();
        let lm = Landmark::new(LandmarkType::Sp, Vector3::new(99.0, 0.0, 10.0));
        let ue = UeState::new(Vector3::new(70.0, 5.0, 0.0), 1.0, 300.0);
        let shifted = UeState { clock_bias: 312.5, ..ue };
        let a = m.measure(&ue, &lm).unwrap();
        let b = m.measure(&shifted, &lm).unwrap();
        assert_close!(b[TOA] - a[TOA], 12.5, 1e-12);
        for k in 1..5 {
            assert_eq!(a[k], b[k]);
        }
    }

    #[test]
    fn va_path_matches_explicit_reflection() {
        let m = model();
        let bs = m.bs_position;
        let plane = Plane::new(Vector3::new(100.0, 0.0, 0.0), Vector3::x()).unwrap();
        let va = mirror_bs(&bs, &plane.point, &plane.normal).unwrap();
        let ue = UeState::new(Vector3::new(60.0, 25.0, 0.0), 0.7, 0.0);
        let z = m.measure(&ue, &Landmark::new(LandmarkType::Va, va)).unwrap();

        // Intersect the segment VA -> UE with the wall, then sum both legs.
        let dir = ue.position - va;
        let s = -plane.signed_distance(&va) / dir.dot(&plane.normal);
        let hit = va + s * dir;
        let two_legs = (hit - bs).norm() + (ue.position - hit).norm();
        assert_close!(z[TOA], two_legs, 1e-9);
        assert_close!(z[TOA], (va - ue.position).norm(), 1e-9);

        let aod = hit - bs;
        assert_close!(z[AOD_AZ], aod.y.atan2(aod.x), 1e-12);
        assert_close!(z[AOD_EL], aod.z.atan2(aod.xy().norm()), 1e-12);
    }

    #[test]
    fn detection_respects_fov() {
        let m = model();
        let ue = UeState::new(Vector3::new(70.7285, 0.0, 0.0), PI / 2.0, 300.0);
        let near = Landmark::new(LandmarkType::Sp, Vector3::new(99.0, 0.0, 10.0));
        let far = Landmark::new(LandmarkType::Sp, Vector3::new(-99.0, 0.0, 10.0));
        let bs = Landmark::new(LandmarkType::Bs, Vector3::new(5000.0, 0.0, 40.0));
        assert_close!((near.position - ue.position).norm(), 30.0, 0.05);
        assert_eq!(m.detection_probability(&ue, &near), 0.9);
        assert_eq!(m.detection_probability(&ue, &far), 0.0);
        assert_eq!(m.detection_probability(&ue, &bs), 0.9);
    }

    #[test]
    fn jacobian_fixed_entries() {
        let m = model();
        let ue = UeState::new(Vector3::new(30.0, -20.0, 0.0), 0.4, 12.0);
        for lm in [
            Landmark::new(LandmarkType::Bs, Vector3::new(0.0, 0.0, 40.0)),
            Landmark::new(LandmarkType::Va, Vector3::new(200.0, 0.0, 40.0)),
            Landmark::new(LandmarkType::Sp, Vector3::new(0.0, -99.0, 10.0)),
        ] {
            let j = m.measure_jacobian(&ue, &lm).unwrap();
            assert_eq!(j[(TOA, 4)], 1.0);
            assert_eq!(j[(AOA_AZ, 3)], -1.0);
            assert_eq!(j[(AOA_EL, 3)], 0.0);
        }
    }

    #[test]
    fn inversion_recovers_sources() {
        let m = model();
        let ue = UeState::new(Vector3::new(50.0, 40.0, 0.0), 2.0, 300.0);
        for (kind, x) in [
            (LandmarkType::Bs, Vector3::new(0.0, 0.0, 40.0)),
            (LandmarkType::Va, Vector3::new(0.0, 200.0, 40.0)),
            (LandmarkType::Sp, Vector3::new(0.0, 99.0, 10.0)),
        ] {
            let z = m.measure(&ue, &Landmark::new(kind, x)).unwrap();
            let back = m.invert(&z, &ue, kind).unwrap();
            assert!((back - x).norm() < 1e-9, "{kind}: {back:?} vs {x:?}");
        }
    }

    #[test]
    fn degenerate_geometry_is_reported() {
        let m = model();
        let ue = UeState::new(Vector3::new(0.0, 0.0, 40.0), 0.0, 0.0);
        let bs = Landmark::new(LandmarkType::Bs, Vector3::new(0.0, 0.0, 40.0));
        assert!(matches!(m.measure(&ue, &bs), Err(SlamError::DegenerateGeometry(_))));
    }

    proptest! {
        #[test]
        fn mirror_is_an_involution(
            px in -300.0..300.0f64, py in -300.0..300.0f64, pz in -50.0..50.0f64,
            nx in -1.0..1.0f64, ny in -1.0..1.0f64, nz in -1.0..1.0f64,
            off in -100.0..100.0f64,
        ) {
            let n = Vector3::new(nx, ny, nz);
            prop_assume!(n.norm() > 0.1);
            let n = n.normalize();
            let mu = off * n;
            let p = Vector3::new(px, py, pz);
            let once = mirror_bs(&p, &mu, &n).unwrap();
            let twice = mirror_bs(&once, &mu, &n).unwrap();
            prop_assert!((twice - p).norm() < 1e-9);
            // distance to the plane is preserved, with the sign flipped
            let plane = Plane { point: mu, normal: n };
            prop_assert!((plane.signed_distance(&once) + plane.signed_distance(&p)).abs() < 1e-9);
        }

        #[test]
        fn angles_stay_in_range(
            x in -90.0..90.0f64, y in -90.0..90.0f64, heading in -10.0..10.0f64,
            bias in 0.0..500.0f64, kind in 0usize..3,
        ) {
            let m = model();
            let ue = UeState::new(Vector3::new(x, y, 0.0), heading, bias);
            let lm = match kind {
                0 => Landmark::new(LandmarkType::Bs, m.bs_position),
                1 => Landmark::new(LandmarkType::Va, Vector3::new(-200.0, 0.0, 40.0)),
                _ => Landmark::new(LandmarkType::Sp, Vector3::new(99.0, 0.0, 10.0)),
            };
            let z = m.measure(&ue, &lm).unwrap();
            for k in [AOA_AZ, AOD_AZ] {
                prop_assert!(z[k] > -PI && z[k] <= PI);
            }
            for k in [AOA_EL, AOD_EL] {
                prop_assert!(z[k] >= -PI / 2.0 && z[k] <= PI / 2.0);
            }
            prop_assert!(z[TOA] >= bias);
        }
    }
}
