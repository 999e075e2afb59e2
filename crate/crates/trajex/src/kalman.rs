//! Constant-velocity Kalman filtering on the 4D road state
//! (x, y, vx, vy), with Joseph-form updates to keep long tracks numerically
//! healthy.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Matrix4x2, Vector2, Vector4};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KalmanError {
    #[error("innovation covariance is not invertible")]
    NumericalBreakdown,
}

/// Gaussian state estimate: mean (x, y, vx, vy) and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: Vector4<f64>,
    pub cov: Matrix4<f64>,
}

impl KalmanState {
    pub fn new(mean: Vector4<f64>, cov: Matrix4<f64>) -> KalmanState {
        KalmanState { mean, cov }
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.mean.x, self.mean.y)
    }

    pub fn velocity(&self) -> Vector2<f64> {
        Vector2::new(self.mean.z, self.mean.w)
    }
}

/// State transition matrix for the constant-velocity model.
pub fn transition_matrix(dt: f64) -> Matrix4<f64> {
    let mut f = Matrix4::identity();
    f[(0, 2)] = dt;
    f[(1, 3)] = dt;
    f
}

/// Discretized continuous white-noise-acceleration process noise, intensity
/// `q` in m^2/s^3, identical and independent per axis.
pub fn process_noise(dt: f64, q: f64) -> Matrix4<f64> {
    let dt2 = dt * dt;
    let dt3 = dt2 * dt;
    let (a, b, c) = (q * dt3 / 3.0, q * dt2 / 2.0, q * dt);
    let mut m = Matrix4::zeros();
    m[(0, 0)] = a;
    m[(0, 2)] = b;
    m[(2, 0)] = b;
    m[(2, 2)] = c;
    m[(1, 1)] = a;
    m[(1, 3)] = b;
    m[(3, 1)] = b;
    m[(3, 3)] = c;
    m
}

/// Predict the state forward by `dt` seconds.
pub fn predict(s: &KalmanState, dt: f64, q: f64) -> KalmanState {
    let f = transition_matrix(dt);
    let mean = f * s.mean;
    let cov = symmetrize(f * s.cov * f.transpose() + process_noise(dt, q));
    KalmanState { mean, cov }
}

/// Position-only measurement update (camera): H selects (x, y).
pub fn update_position(
    s: &KalmanState,
    z: Vector2<f64>,
    r: Matrix2<f64>,
) -> Result<KalmanState, KalmanError> {
    let mut h = Matrix2x4::zeros();
    h[(0, 0)] = 1.0;
    h[(1, 1)] = 1.0;
    let innovation = z - h * s.mean;
    let s_mat = h * s.cov * h.transpose() + r;
    let s_inv = s_mat.try_inverse().ok_or(KalmanError::NumericalBreakdown)?;
    let k: Matrix4x2<f64> = s.cov * h.transpose() * s_inv;
    let mean = s.mean + k * innovation;
    // Joseph form: (I - KH) P (I - KH)' + K R K'
    let ikh = Matrix4::identity() - k * h;
    let cov = symmetrize(ikh * s.cov * ikh.transpose() + k * r * k.transpose());
    Ok(KalmanState { mean, cov })
}

/// Full-state measurement update (radar): H = I.
pub fn update_full(
    s: &KalmanState,
    z: Vector4<f64>,
    r: Matrix4<f64>,
) -> Result<KalmanState, KalmanError> {
    let innovation = z - s.mean;
    let s_mat = s.cov + r;
    let s_inv = s_mat.try_inverse().ok_or(KalmanError::NumericalBreakdown)?;
    let k = s.cov * s_inv;
    let mean = s.mean + k * innovation;
    let ikh = Matrix4::identity() - k;
    let cov = symmetrize(ikh * s.cov * ikh.transpose() + k * r * k.transpose());
    Ok(KalmanState { mean, cov })
}

pub fn symmetrize(m: Matrix4<f64>) -> Matrix4<f64> {
    (m + m.transpose()) * 0.5
}
