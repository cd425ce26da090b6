//! Constant-velocity Kalman filter over `(cx, cy, aspect, height)`.
//!
//! Process and measurement noise scale with the box height.

use nalgebra::{SMatrix, SVector};
use thiserror::Error;

use crate::geometry::BBox;

pub type StateVec = SVector<f64, 8>;
pub type StateCov = SMatrix<f64, 8, 8>;
pub type MeasVec = SVector<f64, 4>;
pub type MeasCov = SMatrix<f64, 4, 4>;

/// 0.95 quantile of the chi-square distribution with 4 degrees of freedom.
pub const CHI2_95_4DOF: f64 = 9.4877;

const STD_WEIGHT_POSITION: f64 = 1.0 / 20.0;
const STD_WEIGHT_VELOCITY: f64 = 1.0 / 160.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KalmanError {
    #[error("innovation covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("invalid measurement box {0:?}")]
    InvalidBox(BBox),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: StateVec,
    pub cov: StateCov,
}

impl KalmanState {
    pub fn bbox(&self) -> BBox {
        BBox::from_xyah([self.mean[0], self.mean[1], self.mean[2], self.mean[3]])
    }

    pub fn velocity(&self) -> [f64; 4] {
        [self.mean[4], self.mean[5], self.mean[6], self.mean[7]]
    }
}

fn transition() -> StateCov {
    let mut f = StateCov::identity();
    for i in 0..4 {
        f[(i, i + 4)] = 1.0;
    }
    f
}

fn observation() -> SMatrix<f64, 4, 8> {
    let mut h = SMatrix::<f64, 4, 8>::zeros();
    for i in 0..4 {
        h[(i, i)] = 1.0;
    }
    h
}

fn measurement(b: &BBox) -> Result<MeasVec, KalmanError> {
    if !b.is_valid() {
        return Err(KalmanError::InvalidBox(*b));
    }
    Ok(MeasVec::from(b.to_xyah()))
}

fn symmetrize(m: &mut StateCov) {
    let t = m.transpose();
    *m = (*m + t) * 0.5;
}

pub fn kf_initiate(b: &BBox) -> Result<KalmanState, KalmanError> {
    let z = measurement(b)?;
    let h = z[3];
    let mut mean = StateVec::zeros();
    mean.fixed_rows_mut::<4>(0).copy_from(&z);
    let std = [
        2.0 * STD_WEIGHT_POSITION * h,
        2.0 * STD_WEIGHT_POSITION * h,
        1e-2,
        2.0 * STD_WEIGHT_POSITION * h,
        10.0 * STD_WEIGHT_VELOCITY * h,
        10.0 * STD_WEIGHT_VELOCITY * h,
        1e-5,
        10.0 * STD_WEIGHT_VELOCITY * h,
    ];
    let cov = StateCov::from_diagonal(&StateVec::from_iterator(std.iter().map(|s| s * s)));
    Ok(KalmanState { mean, cov })
}

pub fn kf_predict(state: &KalmanState) -> KalmanState {
    let h = state.mean[3];
    let std = [
        STD_WEIGHT_POSITION * h,
        STD_WEIGHT_POSITION * h,
        1e-2,
        STD_WEIGHT_POSITION * h,
        STD_WEIGHT_VELOCITY * h,
        STD_WEIGHT_VELOCITY * h,
        1e-5,
        STD_WEIGHT_VELOCITY * h,
    ];
    let q = StateCov::from_diagonal(&StateVec::from_iterator(std.iter().map(|s| s * s)));
    let f = transition();
    let mean = f * state.mean;
    let mut cov = f * state.cov * f.transpose() + q;
    symmetrize(&mut cov);
    KalmanState { mean, cov }
}

/// Predicted measurement distribution.
pub fn kf_project(state: &KalmanState) -> (MeasVec, MeasCov) {
    let h = state.mean[3];
    let std = [
        STD_WEIGHT_POSITION * h,
        STD_WEIGHT_POSITION * h,
        1e-1,
        STD_WEIGHT_POSITION * h,
    ];
    let r = MeasCov::from_diagonal(&MeasVec::from_iterator(std.iter().map(|s| s * s)));
    let obs = observation();
    (obs * state.mean, obs * state.cov * obs.transpose() + r)
}

pub fn kf_update(state: &KalmanState, b: &BBox) -> Result<KalmanState, KalmanError> {
    let z = measurement(b)?;
    let (proj_mean, proj_cov) = kf_project(state);
    let chol = proj_cov.cholesky().ok_or(KalmanError::NotPositiveDefinite)?;
    let obs = observation();
    // K = P Hᵀ S⁻¹, solved as S Kᵀ = H P.
    let gain = chol.solve(&(obs * state.cov)).transpose();
    let innovation = z - proj_mean;
    let mean = state.mean + gain * innovation;
    let mut cov = state.cov - gain * proj_cov * gain.transpose();
    symmetrize(&mut cov);
    Ok(KalmanState { mean, cov })
}

pub fn squared_mahalanobis(state: &KalmanState, b: &BBox) -> Result<f64, KalmanError> {
    let z = measurement(b)?;
    let (proj_mean, proj_cov) = kf_project(state);
    let chol = proj_cov.cholesky().ok_or(KalmanError::NotPositiveDefinite)?;
    let d = z - proj_mean;
    let l = chol.l();
    let w = l.solve_lower_triangular(&d).ok_or(KalmanError::NotPositiveDefinite)?;
    Ok(w.norm_squared())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym_err(c: &StateCov) -> f64 {
        (c - c.transpose()).abs().max()
    }

    #[test]
    fn stationary_object_stays_put() {
        let b = BBox::new(100.0, 50.0, 20.0, 40.0);
        let mut s = kf_initiate(&b).unwrap();
        for _ in 0..10 {
            s = kf_update(&kf_predict(&s), &b).unwrap();
        }
        let (cx, cy) = b.center();
        assert!((s.mean[0] - cx).abs() < 1e-6 && (s.mean[1] - cy).abs() < 1e-6);
        assert!(sym_err(&s.cov) < 1e-9);
    }

    #[test]
    fn predict_grows_position_variance() {
        let mut s = kf_initiate(&BBox::new(0.0, 0.0, 10.0, 30.0)).unwrap();
        for _ in 0..20 {
            let n = kf_predict(&s);
            for i in 0..4 {
                assert!(n.cov[(i, i)] > s.cov[(i, i)]);
            }
            s = n;
        }
    }

    #[test]
    fn mahalanobis_basics() {
        let s = kf_predict(&kf_initiate(&BBox::new(10.0, 10.0, 20.0, 40.0)).unwrap());
        let at_mean = s.bbox();
        assert!(squared_mahalanobis(&s, &at_mean).unwrap() < 1e-18);
        let d1 = squared_mahalanobis(&s, &at_mean.translated(1.5, -0.5)).unwrap();
        let d2 = squared_mahalanobis(&s, &at_mean.translated(3.0, -1.0)).unwrap();
        assert!((d2 - 4.0 * d1).abs() < 1e-9 * d2.max(1.0));
    }

    #[test]
    fn invalid_box_is_rejected() {
        assert!(kf_initiate(&BBox::new(0.0, 0.0, 0.0, 3.0)).is_err());
    }

    #[test]
    fn non_pd_innovation_is_surfaced() {
        let mut s = kf_initiate(&BBox::new(0.0, 0.0, 10.0, 10.0)).unwrap();
        s.cov = -StateCov::identity() * 100.0;
        assert_eq!(
            kf_update(&s, &BBox::new(0.0, 0.0, 10.0, 10.0)),
            Err(KalmanError::NotPositiveDefinite)
        );
    }
}
