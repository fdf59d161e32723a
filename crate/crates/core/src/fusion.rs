//! Quaternion EKF fusing IMU (100 Hz-class) and GPS (10 Hz-class) streams.
//!
//! The tracked state is `[p, v, q]` ∈ R¹⁰: position and velocity in the
//! navigation frame plus the vehicle orientation quaternion, with a full
//! 10×10 covariance. Prediction integrates the IMU specific force and
//! angular rate; updates consume GPS position, scalar speed and a quaternion
//! observation assembled from GPS heading and accelerometer-derived
//! pitch/roll. The quaternion is renormalized after every update with the
//! matching covariance transform.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, SMatrix, SVector};
use thiserror::Error;

use crate::geometry::{
    euler_to_quat_jacobian, quat_exp_jacobian, quat_to_euler_jacobian, rotation_jacobian_wrt_quat,
    EulerAngles, GeometryError, Quaternion, Vec3,
};
use crate::num::Scalar;

/// Speed below which the speed-observation gradient is undefined and the
/// speed row is skipped, m/s.
pub const MIN_SPEED_FOR_UPDATE: f64 = 1e-3;

/// Quaternion norm below which renormalization is meaningless.
pub const MIN_QUAT_NORM: f64 = 1e-6;

pub type StateVector<T> = SVector<T, 10>;
pub type StateCov<T> = SMatrix<T, 10, 10>;
pub type ProcessNoiseCov<T> = SMatrix<T, 9, 9>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FusionError {
    #[error("non-finite sensor input")]
    NonFiniteInput,
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("orientation at gimbal lock, Euler covariance mapping undefined")]
    GimbalLock,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// IMU reading in the vehicle frame: specific force (m/s²) and angular rate
/// (rad/s) at time `t` (s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample<T> {
    pub accel: Vec3<T>,
    pub gyro: Vec3<T>,
    pub t: T,
}

impl<T: Scalar> ImuSample<T> {
    pub fn new(accel: Vec3<T>, gyro: Vec3<T>, t: T) -> Self {
        Self { accel, gyro, t }
    }

    fn is_finite(&self) -> bool {
        self.accel.iter().all(|a| a.is_finite()) && self.gyro.iter().all(|g| g.is_finite())
    }
}

/// GPS-derived observation; each component is optional so partial fixes and
/// outage bridging are expressed in the type.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpsObservation<T> {
    pub pos: Option<Vec3<T>>,
    pub speed: Option<T>,
    /// Orientation assembled from GPS heading plus accelerometer pitch/roll.
    pub quat: Option<Quaternion<T>>,
    pub t: T,
}

/// Sensor and process noise description, plus IMU biases and gravity.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig<T> {
    /// Accelerometer noise std, m/s².
    pub sigma_a: T,
    /// Gyroscope noise std, rad/s.
    pub sigma_omega: T,
    /// GPS position noise std per axis, m.
    pub sigma_gnss: T,
    /// GPS speed noise std, m/s.
    pub sigma_v: T,
    /// Euler-angle observation covariance, rad².
    pub c_gamma: Matrix3<T>,
    pub accel_bias: Vec3<T>,
    pub gyro_bias: Vec3<T>,
    /// Gravity in the navigation frame, m/s².
    pub gravity: Vec3<T>,
}

impl<T: Scalar> Default for NoiseConfig<T> {
    fn default() -> Self {
        let per_axis = T::of(1.0f64.to_radians() / 3.0f64.sqrt());
        Self {
            sigma_a: T::of(0.2),
            sigma_omega: T::of(0.01),
            sigma_gnss: T::of(1.0),
            sigma_v: T::of(0.1),
            c_gamma: Matrix3::from_diagonal_element(per_axis * per_axis),
            accel_bias: Vec3::zeros(),
            gyro_bias: Vec3::zeros(),
            gravity: Vec3::new(T::zero(), T::zero(), T::of(-9.80665)),
        }
    }
}

impl<T: Scalar> NoiseConfig<T> {
    /// Process noise covariance over `[w_pa, w_va, w_ω]`.
    pub fn process_noise_cov(&self) -> ProcessNoiseCov<T> {
        let mut c = ProcessNoiseCov::zeros();
        let sa2 = self.sigma_a * self.sigma_a;
        let so2 = self.sigma_omega * self.sigma_omega;
        for i in 0..3 {
            c[(i, i)] = sa2;
            c[(i + 3, i + 3)] = sa2;
            c[(i + 6, i + 6)] = so2;
        }
        c
    }
}

/// Filter mean and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState<T> {
    pub p: Vec3<T>,
    pub v: Vec3<T>,
    pub q: Quaternion<T>,
    pub cov: StateCov<T>,
}

impl<T: Scalar> FilterState<T> {
    pub fn new(p: Vec3<T>, v: Vec3<T>, q: Quaternion<T>, cov: StateCov<T>) -> Self {
        Self { p, v, q, cov }
    }

    pub fn to_vector(&self) -> StateVector<T> {
        let mut x = StateVector::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.p);
        x.fixed_rows_mut::<3>(3).copy_from(&self.v);
        x.fixed_rows_mut::<4>(6).copy_from(&self.q.as_vector4());
        x
    }

    pub fn from_vector(x: &StateVector<T>, cov: StateCov<T>) -> Self {
        Self {
            p: x.fixed_rows::<3>(0).into_owned(),
            v: x.fixed_rows::<3>(3).into_owned(),
            q: Quaternion::new(x[6], x[7], x[8], x[9]),
            cov,
        }
    }

    /// Position covariance block.
    pub fn position_cov(&self) -> Matrix3<T> {
        self.cov.fixed_view::<3, 3>(0, 0).into_owned()
    }

    /// Quaternion covariance block.
    pub fn quat_cov(&self) -> Matrix4<T> {
        self.cov.fixed_view::<4, 4>(6, 6).into_owned()
    }
}

/// Outcome flags of an update step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateReport {
    /// False when the innovation covariance was singular and the update was
    /// skipped.
    pub applied: bool,
    /// True when the speed row was dropped because the velocity estimate was
    /// too small.
    pub speed_skipped: bool,
}

// ---------------------------------------------------------------------------
// Transition / observation maps and their gradients
// ---------------------------------------------------------------------------

/// State transition over one IMU interval, as a plain function of the state
/// vector and the 9-dim process noise `[w_pa, w_va, w_ω]`.
pub fn transition_map<T: Scalar>(
    theta: &StateVector<T>,
    imu: &ImuSample<T>,
    noise: &SVector<T, 9>,
    cfg: &NoiseConfig<T>,
    dt: T,
) -> StateVector<T> {
    let p = theta.fixed_rows::<3>(0).into_owned();
    let v = theta.fixed_rows::<3>(3).into_owned();
    let q = Quaternion::new(theta[6], theta[7], theta[8], theta[9]);

    let accel_body = imu.accel - cfg.accel_bias;
    let w_pa = noise.fixed_rows::<3>(0).into_owned();
    let w_va = noise.fixed_rows::<3>(3).into_owned();
    let w_omega = noise.fixed_rows::<3>(6).into_owned();

    let accel_nav = q.rotate_homogeneous(&accel_body) + cfg.gravity;
    let half_dt2 = dt * dt * T::of(0.5);

    let p_next = p + v * dt + (accel_nav + w_pa) * half_dt2;
    let v_next = v + (accel_nav + w_va) * dt;
    let rot_vec = (imu.gyro - cfg.gyro_bias + w_omega) * (dt * T::of(0.5));
    let q_next = q.product(&Quaternion::exp(&rot_vec));

    let mut out = StateVector::zeros();
    out.fixed_rows_mut::<3>(0).copy_from(&p_next);
    out.fixed_rows_mut::<3>(3).copy_from(&v_next);
    out.fixed_rows_mut::<4>(6).copy_from(&q_next.as_vector4());
    out
}

/// Observation map `h(θ) = [p, ‖v‖, q]`.
pub fn observation_map<T: Scalar>(theta: &StateVector<T>) -> SVector<T, 8> {
    let mut z = SVector::<T, 8>::zeros();
    z.fixed_rows_mut::<3>(0)
        .copy_from(&theta.fixed_rows::<3>(0));
    z[3] = theta.fixed_rows::<3>(3).norm();
    z.fixed_rows_mut::<4>(4)
        .copy_from(&theta.fixed_rows::<4>(6));
    z
}

/// Analytic gradients of [`transition_map`] with respect to the state (F,
/// 10×10) and the process noise (G, 10×9), evaluated at zero noise.
pub fn transition_jacobians<T: Scalar>(
    state: &FilterState<T>,
    imu: &ImuSample<T>,
    cfg: &NoiseConfig<T>,
    dt: T,
) -> (StateCov<T>, SMatrix<T, 10, 9>) {
    let half_dt2 = dt * dt * T::of(0.5);
    let accel_body = imu.accel - cfg.accel_bias;
    let rot_jac = rotation_jacobian_wrt_quat(&state.q, &accel_body);
    let rot_vec = (imu.gyro - cfg.gyro_bias) * (dt * T::of(0.5));
    let exp_q = Quaternion::exp(&rot_vec);

    let mut f = StateCov::identity();
    for i in 0..3 {
        f[(i, i + 3)] = dt;
    }
    f.fixed_view_mut::<3, 4>(0, 6)
        .copy_from(&(rot_jac * half_dt2));
    f.fixed_view_mut::<3, 4>(3, 6).copy_from(&(rot_jac * dt));
    f.fixed_view_mut::<4, 4>(6, 6)
        .copy_from(&exp_q.right_matrix());

    let mut g = SMatrix::<T, 10, 9>::zeros();
    for i in 0..3 {
        g[(i, i)] = half_dt2;
        g[(i + 3, i + 3)] = dt;
    }
    let dq_dw = state.q.left_matrix() * quat_exp_jacobian(&rot_vec) * (dt * T::of(0.5));
    g.fixed_view_mut::<4, 3>(6, 6).copy_from(&dq_dw);

    (f, g)
}

/// Analytic gradient of [`observation_map`] (H, 8×10). The boolean is false
/// when the speed row was zeroed because ‖v‖ is below
/// [`MIN_SPEED_FOR_UPDATE`].
pub fn observation_jacobian<T: Scalar>(state: &FilterState<T>) -> (SMatrix<T, 8, 10>, bool) {
    let mut h = SMatrix::<T, 8, 10>::zeros();
    for i in 0..3 {
        h[(i, i)] = T::one();
    }
    for i in 0..4 {
        h[(4 + i, 6 + i)] = T::one();
    }
    let speed = state.v.norm();
    let speed_valid = speed > T::of(MIN_SPEED_FOR_UPDATE);
    if speed_valid {
        let grad = state.v / speed;
        for i in 0..3 {
            h[(3, 3 + i)] = grad[i];
        }
    }
    (h, speed_valid)
}

// ---------------------------------------------------------------------------
// Predict / update / renormalize
// ---------------------------------------------------------------------------

fn check_cov<T: Scalar>(cov: &StateCov<T>) -> Result<(), FusionError> {
    for i in 0..10 {
        if !cov[(i, i)].is_finite() {
            return Err(FusionError::NumericalFailure(
                "non-finite covariance".to_string(),
            ));
        }
        if cov[(i, i)] < -T::of(1e-9) {
            return Err(FusionError::NumericalFailure(format!(
                "negative variance {} on diagonal {i}",
                cov[(i, i)].as_f64()
            )));
        }
    }
    Ok(())
}

fn symmetrize<T: Scalar>(m: &mut StateCov<T>) {
    let t = m.transpose();
    *m = (*m + t) * T::of(0.5);
}

/// EKF prediction over one IMU interval: propagates the mean through
/// [`transition_map`] at zero noise and the covariance as
/// `F P Fᵀ + G C_w Gᵀ`.
pub fn predict<T: Scalar>(
    state: &FilterState<T>,
    imu: &ImuSample<T>,
    cfg: &NoiseConfig<T>,
    dt: T,
) -> Result<FilterState<T>, FusionError> {
    if !imu.is_finite() || !dt.is_finite() || dt <= T::zero() {
        return Err(FusionError::NonFiniteInput);
    }
    let x = transition_map(&state.to_vector(), imu, &SVector::<T, 9>::zeros(), cfg, dt);
    let (f, g) = transition_jacobians(state, imu, cfg, dt);
    let mut cov = f * state.cov * f.transpose() + g * cfg.process_noise_cov() * g.transpose();
    symmetrize(&mut cov);
    check_cov(&cov)?;
    let mut next = FilterState::from_vector(&x, cov);
    // counteract float drift; a product of units stays unit to ~1e-15/step
    next.q = next.q.normalized();
    Ok(next)
}

/// EKF measurement update using whichever observation components are present,
/// followed by quaternion renormalization.
///
/// The quaternion observation is sign-aligned to the prediction before the
/// innovation is formed. A singular innovation covariance skips the update
/// and reports it instead of failing.
pub fn update<T: Scalar>(
    state: &FilterState<T>,
    obs: &GpsObservation<T>,
    cfg: &NoiseConfig<T>,
) -> Result<(FilterState<T>, UpdateReport), FusionError> {
    let (h_full, speed_valid) = observation_jacobian(state);
    let h_theta = observation_map(&state.to_vector());

    let mut report = UpdateReport {
        applied: false,
        speed_skipped: false,
    };

    // rows of the full observation model to keep, with their innovations
    let mut rows: Vec<usize> = Vec::with_capacity(8);
    let mut innovation: Vec<T> = Vec::with_capacity(8);

    if let Some(pos) = obs.pos {
        if !pos.iter().all(|x| x.is_finite()) {
            return Err(FusionError::NonFiniteInput);
        }
        for i in 0..3 {
            rows.push(i);
            innovation.push(pos[i] - h_theta[i]);
        }
    }
    if let Some(speed) = obs.speed {
        if !speed.is_finite() {
            return Err(FusionError::NonFiniteInput);
        }
        if speed_valid {
            rows.push(3);
            innovation.push(speed - h_theta[3]);
        } else {
            report.speed_skipped = true;
        }
    }
    let quat_cov = if let Some(zq) = obs.quat {
        zq.ensure_unit()?;
        // q and −q encode the same rotation; align to the prediction
        let zq = if zq.dot(&state.q) < T::zero() {
            zq.scale(-T::one())
        } else {
            zq
        };
        let zq_vec = zq.as_vector4();
        for i in 0..4 {
            rows.push(4 + i);
            innovation.push(zq_vec[i] - h_theta[4 + i]);
        }
        Some(quat_cov_from_euler_cov(&zq, &cfg.c_gamma)?)
    } else {
        None
    };

    if rows.is_empty() {
        return Ok((state.clone(), report));
    }

    let m = rows.len();
    let mut h = DMatrix::<T>::zeros(m, 10);
    let mut c_n = DMatrix::<T>::zeros(m, m);
    for (r, &row) in rows.iter().enumerate() {
        for c in 0..10 {
            h[(r, c)] = h_full[(row, c)];
        }
        match row {
            0..=2 => c_n[(r, r)] = cfg.sigma_gnss * cfg.sigma_gnss,
            3 => c_n[(r, r)] = cfg.sigma_v * cfg.sigma_v,
            _ => {}
        }
    }
    if let Some(cq) = &quat_cov {
        // the quaternion rows are contiguous at the tail
        let base = m - 4;
        for i in 0..4 {
            for j in 0..4 {
                c_n[(base + i, base + j)] = cq[(i, j)];
            }
        }
    }

    let p_full = DMatrix::<T>::from_fn(10, 10, |i, j| state.cov[(i, j)]);
    let s = &h * &p_full * h.transpose() + &c_n;
    let Some(s_inv) = s.clone().try_inverse() else {
        return Ok((state.clone(), report));
    };
    if s_inv.iter().any(|x| !x.is_finite()) {
        return Ok((state.clone(), report));
    }
    report.applied = true;

    let k = &p_full * h.transpose() * s_inv;
    let innov = DVector::<T>::from_vec(innovation);
    let delta = &k * innov;

    let mut x = state.to_vector();
    for i in 0..10 {
        x[i] += delta[i];
    }
    let p_post = &p_full - &k * &h * &p_full;
    let mut cov = StateCov::from_fn(|i, j| p_post[(i, j)]);
    symmetrize(&mut cov);

    let updated = FilterState::from_vector(&x, cov);
    let renormalized = renormalize(&updated)?;
    check_cov(&renormalized.cov)?;
    Ok((renormalized, report))
}

/// Normalizes the quaternion part of the state and transforms the covariance
/// with `J = blkdiag(I₆, q̃ q̃ᵀ / ‖q̃‖³)`.
pub fn renormalize<T: Scalar>(state: &FilterState<T>) -> Result<FilterState<T>, FusionError> {
    let n = state.q.norm();
    if !(n > T::of(MIN_QUAT_NORM)) {
        return Err(FusionError::NumericalFailure(format!(
            "quaternion norm {} too small to renormalize",
            n.as_f64()
        )));
    }
    let qv = state.q.as_vector4();
    let j_block = qv * qv.transpose() / (n * n * n);
    let mut j = StateCov::identity();
    j.fixed_view_mut::<4, 4>(6, 6).copy_from(&j_block);
    let mut cov = j * state.cov * j.transpose();
    symmetrize(&mut cov);
    Ok(FilterState {
        p: state.p,
        v: state.v,
        q: state.q.normalized(),
        cov,
    })
}

/// Maps an Euler-angle covariance to quaternion-component covariance through
/// the linearized Euler → quaternion map at the orientation of `q`.
///
/// The result has rank ≤ 3. Errors at gimbal lock.
pub fn quat_cov_from_euler_cov<T: Scalar>(
    q: &Quaternion<T>,
    c_gamma: &Matrix3<T>,
) -> Result<Matrix4<T>, FusionError> {
    let euler = EulerAngles::from_quaternion(q);
    if euler.is_gimbal_locked() {
        return Err(FusionError::GimbalLock);
    }
    let m = euler_to_quat_jacobian(&euler);
    Ok(m * c_gamma * m.transpose())
}

/// Inverse mapping of [`quat_cov_from_euler_cov`]: recovers an Euler-angle
/// covariance from a quaternion covariance by the linearized quaternion →
/// Euler map at `q`.
pub fn euler_cov_from_quat_cov<T: Scalar>(
    q: &Quaternion<T>,
    c_q: &Matrix4<T>,
) -> Result<Matrix3<T>, FusionError> {
    let j = quat_to_euler_jacobian(q).map_err(|_| FusionError::GimbalLock)?;
    Ok(j * c_q * j.transpose())
}

/// Convenience wrapper owning the state and noise configuration.
#[derive(Debug, Clone)]
pub struct Ekf<T: Scalar> {
    pub state: FilterState<T>,
    pub noise: NoiseConfig<T>,
}

impl<T: Scalar> Ekf<T> {
    pub fn new(state: FilterState<T>, noise: NoiseConfig<T>) -> Self {
        Self { state, noise }
    }

    pub fn predict(&mut self, imu: &ImuSample<T>, dt: T) -> Result<(), FusionError> {
        self.state = predict(&self.state, imu, &self.noise, dt)?;
        Ok(())
    }

    pub fn update(&mut self, obs: &GpsObservation<T>) -> Result<UpdateReport, FusionError> {
        let (state, report) = update(&self.state, obs, &self.noise)?;
        self.state = state;
        Ok(report)
    }
}
