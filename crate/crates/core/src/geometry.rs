//! Reference frames, quaternion algebra, roto-translations and line-of-sight
//! pointing angles.
//!
//! Conventions used throughout the crate:
//! * navigation frame is local ENU (x east, y north, z up), fixed to Earth;
//! * vehicle frame is x forward, y left, z up, centered at the transceiver;
//! * quaternions are scalar-first `(w, x, y, z)` with Hamilton products, and
//!   an orientation quaternion maps vehicle coordinates into navigation
//!   coordinates (`u_nav = q ⊙ u_veh ⊙ q*`);
//! * Euler angles compose intrinsically as yaw (z), then pitch (y), then
//!   roll (x).

use nalgebra::{Matrix3, Matrix4, SMatrix, Vector3};
use thiserror::Error;

use crate::num::Scalar;

/// 3-D vector of positions (meters) or directions.
pub type Vec3<T> = Vector3<T>;

/// Tolerance on the quaternion norm for a value to count as an orientation.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Smallest displacement (meters) with a well-defined LOS direction.
pub const MIN_LOS_DISTANCE_M: f64 = 1e-3;

/// Pitch margin (radians) to ±π/2 below which the Euler extraction is
/// treated as gimbal locked.
pub const GIMBAL_LOCK_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    /// A quaternion that should represent an orientation is not unit norm.
    #[error("quaternion norm {norm} deviates from 1 by more than {tol}")]
    InvalidOrientation { norm: f64, tol: f64 },
    /// Displacement too small to define pointing angles.
    #[error("displacement of {dist} m is below the {min} m LOS threshold")]
    DegenerateGeometry { dist: f64, min: f64 },
    /// An input contained NaN or infinity.
    #[error("non-finite input")]
    NonFinite,
}

// ---------------------------------------------------------------------------
// Quaternion
// ---------------------------------------------------------------------------

/// Scalar-first quaternion `(w, x, y, z)`.
///
/// Unit-norm values represent rotations; the raw component algebra is kept
/// available because the tracking filter manipulates quaternions as plain
/// 4-vectors between renormalizations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion<T> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Scalar> Quaternion<T> {
    pub fn new(w: T, x: T, y: T, z: T) -> Self {
        Self { w, x, y, z }
    }

    /// Identity rotation.
    pub fn identity() -> Self {
        Self::new(T::one(), T::zero(), T::zero(), T::zero())
    }

    /// Rotation of `angle` radians about a unit `axis`.
    pub fn from_axis_angle(axis: &Vec3<T>, angle: T) -> Self {
        let half = angle * T::of(0.5);
        let (s, c) = half.sin_cos();
        Self::new(c, axis.x * s, axis.y * s, axis.z * s)
    }

    /// Quaternion exponential of a rotation vector:
    /// `exp(v) = [cos|v|, (v/|v|) sin|v|]`.
    pub fn exp(v: &Vec3<T>) -> Self {
        let n = v.norm();
        // sin(n)/n with a series fallback near zero
        let sinc = if n < T::of(1e-6) {
            T::one() - n * n / T::of(6.0)
        } else {
            n.sin() / n
        };
        Self::new(n.cos(), v.x * sinc, v.y * sinc, v.z * sinc)
    }

    pub fn norm_squared(&self) -> T {
        self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z
    }

    pub fn norm(&self) -> T {
        self.norm_squared().sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    /// Conjugate (inverse rotation for unit quaternions).
    pub fn conjugate(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn dot(&self, rhs: &Self) -> T {
        self.w * rhs.w + self.x * rhs.x + self.y * rhs.y + self.z * rhs.z
    }

    pub fn scale(&self, s: T) -> Self {
        Self::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    pub fn vector(&self) -> Vec3<T> {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn as_vector4(&self) -> nalgebra::Vector4<T> {
        nalgebra::Vector4::new(self.w, self.x, self.y, self.z)
    }

    pub fn from_vector4(v: &nalgebra::Vector4<T>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    /// Hamilton product `self ⊙ rhs`.
    pub fn product(&self, rhs: &Self) -> Self {
        Self::new(
            self.w * rhs.w - self.x * rhs.x - self.y * rhs.y - self.z * rhs.z,
            self.w * rhs.x + self.x * rhs.w + self.y * rhs.z - self.z * rhs.y,
            self.w * rhs.y - self.x * rhs.z + self.y * rhs.w + self.z * rhs.x,
            self.w * rhs.z + self.x * rhs.y - self.y * rhs.x + self.z * rhs.w,
        )
    }

    /// Checks the unit-norm invariant within [`UNIT_NORM_TOL`].
    pub fn ensure_unit(&self) -> Result<(), GeometryError> {
        let n = self.norm();
        if !n.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        if (n - T::one()).abs() > T::of(UNIT_NORM_TOL) {
            return Err(GeometryError::InvalidOrientation {
                norm: n.as_f64(),
                tol: UNIT_NORM_TOL,
            });
        }
        Ok(())
    }

    /// Rotates `u` by this quaternion: vector part of `q ⊙ [0,u] ⊙ q*`.
    ///
    /// Errors if the quaternion is not unit norm.
    pub fn rotate(&self, u: &Vec3<T>) -> Result<Vec3<T>, GeometryError> {
        self.ensure_unit()?;
        Ok(self.rotate_homogeneous(u))
    }

    /// Rotation action in homogeneous form,
    /// `(w² − v·v) u + 2 (v·u) v + 2 w (v × u)`.
    ///
    /// Agrees with [`Self::rotate`] for unit quaternions and is the form the
    /// filter Jacobians differentiate, so it is exposed for the fusion and
    /// control modules.
    pub fn rotate_homogeneous(&self, u: &Vec3<T>) -> Vec3<T> {
        let v = self.vector();
        let two = T::of(2.0);
        u * (self.w * self.w - v.dot(&v)) + v * (v.dot(u) * two) + v.cross(u) * (two * self.w)
    }

    /// Rotation matrix associated with this unit quaternion.
    pub fn rotation_matrix(&self) -> Result<Matrix3<T>, GeometryError> {
        self.ensure_unit()?;
        Ok(self.rotation_matrix_unchecked())
    }

    pub(crate) fn rotation_matrix_unchecked(&self) -> Matrix3<T> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        let two = T::of(2.0);
        let one = T::one();
        Matrix3::new(
            one - two * (y * y + z * z),
            two * (x * y - w * z),
            two * (x * z + w * y),
            two * (x * y + w * z),
            one - two * (x * x + z * z),
            two * (y * z - w * x),
            two * (x * z - w * y),
            two * (y * z + w * x),
            one - two * (x * x + y * y),
        )
    }

    /// Left-multiplication matrix: `left(a) · b == a ⊙ b` on 4-vectors.
    pub fn left_matrix(&self) -> Matrix4<T> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix4::new(
            w, -x, -y, -z, //
            x, w, -z, y, //
            y, z, w, -x, //
            z, -y, x, w,
        )
    }

    /// Right-multiplication matrix: `right(b) · a == a ⊙ b` on 4-vectors.
    pub fn right_matrix(&self) -> Matrix4<T> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix4::new(
            w, -x, -y, -z, //
            x, w, z, -y, //
            y, -z, w, x, //
            z, y, -x, w,
        )
    }

    /// Builds a quaternion from a rotation matrix (Shepperd's method).
    pub fn from_rotation_matrix(m: &Matrix3<T>) -> Self {
        let quarter = T::of(0.25);
        let one = T::one();
        let two = T::of(2.0);
        let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let q = if trace > T::zero() {
            let s = T::of(0.5) / (trace + one).sqrt();
            Self::new(
                quarter / s,
                (m[(2, 1)] - m[(1, 2)]) * s,
                (m[(0, 2)] - m[(2, 0)]) * s,
                (m[(1, 0)] - m[(0, 1)]) * s,
            )
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = two * (one + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt();
            Self::new(
                (m[(2, 1)] - m[(1, 2)]) / s,
                quarter * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            )
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = two * (one + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt();
            Self::new(
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                quarter * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            )
        } else {
            let s = two * (one + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt();
            Self::new(
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                quarter * s,
            )
        };
        q.normalized()
    }

    /// Spherical linear interpolation toward `other`, `t` in `[0, 1]`.
    ///
    /// Takes the shorter arc; falls back to normalized lerp for nearly
    /// parallel inputs.
    pub fn slerp(&self, other: &Self, t: T) -> Self {
        let mut d = self.dot(other);
        let other = if d < T::zero() {
            d = -d;
            other.scale(-T::one())
        } else {
            *other
        };
        if d > T::of(0.9995) {
            let lerp = Self::new(
                self.w + (other.w - self.w) * t,
                self.x + (other.x - self.x) * t,
                self.y + (other.y - self.y) * t,
                self.z + (other.z - self.z) * t,
            );
            return lerp.normalized();
        }
        let theta = d.clamp(-T::one(), T::one()).acos();
        let sin_theta = theta.sin();
        let s0 = ((T::one() - t) * theta).sin() / sin_theta;
        let s1 = (t * theta).sin() / sin_theta;
        Self::new(
            self.w * s0 + other.w * s1,
            self.x * s0 + other.x * s1,
            self.y * s0 + other.y * s1,
            self.z * s0 + other.z * s1,
        )
    }
}

// ---------------------------------------------------------------------------
// Euler angles
// ---------------------------------------------------------------------------

/// Intrinsic ZYX Euler angles in radians: `roll` about body x, `pitch` about
/// body y, `yaw` (heading) about z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerAngles<T> {
    pub roll: T,
    pub pitch: T,
    pub yaw: T,
}

impl<T: Scalar> EulerAngles<T> {
    pub fn new(roll: T, pitch: T, yaw: T) -> Self {
        Self { roll, pitch, yaw }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    /// True when pitch is within [`GIMBAL_LOCK_TOL`] of ±π/2.
    pub fn is_gimbal_locked(&self) -> bool {
        (self.pitch.abs() - T::frac_pi_2()).abs() < T::of(GIMBAL_LOCK_TOL)
    }

    /// Quaternion for this orientation (yaw, then pitch, then roll).
    pub fn to_quaternion(&self) -> Quaternion<T> {
        let half = T::of(0.5);
        let (sr, cr) = (self.roll * half).sin_cos();
        let (sp, cp) = (self.pitch * half).sin_cos();
        let (sy, cy) = (self.yaw * half).sin_cos();
        Quaternion::new(
            cr * cp * cy + sr * sp * sy,
            sr * cp * cy - cr * sp * sy,
            cr * sp * cy + sr * cp * sy,
            cr * cp * sy - sr * sp * cy,
        )
    }

    /// Extracts Euler angles from a unit quaternion.
    ///
    /// At gimbal lock (|pitch| within [`GIMBAL_LOCK_TOL`] of π/2) yaw is set
    /// to zero by convention and the yaw content folds into roll; callers can
    /// detect the case with [`Self::is_gimbal_locked`].
    pub fn from_quaternion(q: &Quaternion<T>) -> Self {
        let two = T::of(2.0);
        let one = T::one();
        let sinp = two * (q.w * q.y - q.z * q.x);
        // cos(GIMBAL_LOCK_TOL) boundary expressed on sin(pitch)
        let lock = one - T::of(0.5) * T::of(GIMBAL_LOCK_TOL) * T::of(GIMBAL_LOCK_TOL);
        if sinp.abs() >= lock {
            let pitch = if sinp > T::zero() {
                T::frac_pi_2()
            } else {
                -T::frac_pi_2()
            };
            // yaw set to 0; the free combined angle lands in roll
            let roll = two * q.x.atan2(q.w);
            return Self::new(roll, pitch, T::zero());
        }
        let roll = (two * (q.w * q.x + q.y * q.z)).atan2(one - two * (q.x * q.x + q.y * q.y));
        let pitch = sinp.asin();
        let yaw = (two * (q.w * q.z + q.x * q.y)).atan2(one - two * (q.y * q.y + q.z * q.z));
        Self::new(roll, pitch, yaw)
    }
}

// ---------------------------------------------------------------------------
// LOS angles
// ---------------------------------------------------------------------------

/// Pointing direction in the local vehicle frame: azimuth in `(−π, π]`,
/// elevation in `[−π/2, π/2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LosAngles<T> {
    pub azimuth: T,
    pub elevation: T,
}

impl<T: Scalar> LosAngles<T> {
    pub fn new(azimuth: T, elevation: T) -> Self {
        Self { azimuth, elevation }
    }

    /// Unit direction for these angles (inverse of [`los_angles`]).
    pub fn direction(&self) -> Vec3<T> {
        let (sa, ca) = self.azimuth.sin_cos();
        let (se, ce) = self.elevation.sin_cos();
        Vec3::new(ce * ca, ce * sa, se)
    }
}

/// Azimuth/elevation of a displacement expressed in the local frame:
/// `azimuth = atan2(y, x)`, `elevation = asin(z / |dp|)`.
pub fn los_angles<T: Scalar>(dp: &Vec3<T>) -> Result<LosAngles<T>, GeometryError> {
    let dist = dp.norm();
    if !dist.is_finite() {
        return Err(GeometryError::NonFinite);
    }
    if dist <= T::of(MIN_LOS_DISTANCE_M) {
        return Err(GeometryError::DegenerateGeometry {
            dist: dist.as_f64(),
            min: MIN_LOS_DISTANCE_M,
        });
    }
    Ok(LosAngles::new(
        dp.y.atan2(dp.x),
        (dp.z / dist).clamp(-T::one(), T::one()).asin(),
    ))
}

/// Relative position of a peer at `p2` expressed in the frame of the vehicle
/// at `p1` with orientation `q1` (vehicle → navigation):
/// `Δp = R{q1*} (p2 − p1)`.
pub fn relative_position<T: Scalar>(
    p1: &Vec3<T>,
    p2: &Vec3<T>,
    q1: &Quaternion<T>,
) -> Result<Vec3<T>, GeometryError> {
    q1.ensure_unit()?;
    Ok(q1.conjugate().rotate_homogeneous(&(p2 - p1)))
}

/// Wraps an angle difference into `(−π, π]`.
pub fn wrap_angle<T: Scalar>(a: T) -> T {
    let two_pi = T::two_pi();
    let mut a = a - (a / two_pi).round() * two_pi;
    if a <= -T::pi() {
        a += two_pi;
    }
    a
}

// ---------------------------------------------------------------------------
// Jacobians shared by the fusion and control modules
// ---------------------------------------------------------------------------

/// Gradient of the homogeneous rotation action `R{q} u` with respect to the
/// quaternion components, for fixed `u` (3×4).
pub fn rotation_jacobian_wrt_quat<T: Scalar>(q: &Quaternion<T>, u: &Vec3<T>) -> SMatrix<T, 3, 4> {
    let v = q.vector();
    let two = T::of(2.0);
    let mut jac = SMatrix::<T, 3, 4>::zeros();
    let col_w = (u * q.w + v.cross(u)) * two;
    jac.set_column(0, &col_w);
    let axes = [Vec3::x(), Vec3::y(), Vec3::z()];
    for (i, e) in axes.iter().enumerate() {
        let col = (u * (-v[i]) + v * u[i] + e * v.dot(u) + e.cross(u) * q.w) * two;
        jac.set_column(i + 1, &col);
    }
    jac
}

/// Gradient of the quaternion exponential with respect to its rotation-vector
/// argument (4×3), with series fallbacks near zero.
pub fn quat_exp_jacobian<T: Scalar>(s: &Vec3<T>) -> SMatrix<T, 4, 3> {
    let n2 = s.norm_squared();
    let n = n2.sqrt();
    let (sinc, k) = if n < T::of(1e-4) {
        (
            T::one() - n2 / T::of(6.0),
            -T::of(1.0 / 3.0) + n2 / T::of(30.0),
        )
    } else {
        let (sn, cn) = n.sin_cos();
        (sn / n, (n * cn - sn) / (n * n2))
    };
    let mut jac = SMatrix::<T, 4, 3>::zeros();
    for j in 0..3 {
        jac[(0, j)] = -sinc * s[j];
        for i in 0..3 {
            let diag = if i == j { sinc } else { T::zero() };
            jac[(i + 1, j)] = diag + s[i] * s[j] * k;
        }
    }
    jac
}

/// Gradient of the Euler → quaternion map (4×3), columns ordered
/// (roll, pitch, yaw).
pub fn euler_to_quat_jacobian<T: Scalar>(e: &EulerAngles<T>) -> SMatrix<T, 4, 3> {
    let half = T::of(0.5);
    let (sr, cr) = (e.roll * half).sin_cos();
    let (sp, cp) = (e.pitch * half).sin_cos();
    let (sy, cy) = (e.yaw * half).sin_cos();
    SMatrix::<T, 4, 3>::from_row_slice(&[
        // dqw
        half * (-sr * cp * cy + cr * sp * sy),
        half * (-cr * sp * cy + sr * cp * sy),
        half * (-cr * cp * sy + sr * sp * cy),
        // dqx
        half * (cr * cp * cy + sr * sp * sy),
        half * (-sr * sp * cy - cr * cp * sy),
        half * (-sr * cp * sy - cr * sp * cy),
        // dqy
        half * (-sr * sp * cy + cr * cp * sy),
        half * (cr * cp * cy - sr * sp * sy),
        half * (-cr * sp * sy + sr * cp * cy),
        // dqz
        half * (-sr * cp * sy - cr * sp * cy),
        half * (-cr * sp * sy - sr * cp * cy),
        half * (cr * cp * cy + sr * sp * sy),
    ])
}

/// Gradient of the quaternion → Euler map (3×4), rows ordered
/// (roll, pitch, yaw). Errors at gimbal lock where the map is singular.
pub fn quat_to_euler_jacobian<T: Scalar>(
    q: &Quaternion<T>,
) -> Result<SMatrix<T, 3, 4>, GeometryError> {
    let two = T::of(2.0);
    let four = T::of(4.0);
    let one = T::one();
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);

    let s = two * (w * y - z * x);
    let s_guard = one - s * s;
    if s_guard <= T::of(1e-9) {
        return Err(GeometryError::DegenerateGeometry {
            dist: s_guard.as_f64(),
            min: 1e-9,
        });
    }

    let a = two * (w * x + y * z);
    let b = one - two * (x * x + y * y);
    let da = [two * x, two * w, two * z, two * y];
    let db = [T::zero(), -four * x, -four * y, T::zero()];
    let denom_rb = a * a + b * b;

    let c = two * (w * z + x * y);
    let e = one - two * (y * y + z * z);
    let dc = [two * z, two * y, two * x, two * w];
    let de = [T::zero(), T::zero(), -four * y, -four * z];
    let denom_ye = c * c + e * e;

    let pitch_scale = two / s_guard.sqrt();
    let ds = [y, -z, w, -x];

    let mut jac = SMatrix::<T, 3, 4>::zeros();
    for j in 0..4 {
        jac[(0, j)] = (b * da[j] - a * db[j]) / denom_rb;
        jac[(1, j)] = pitch_scale * ds[j];
        jac[(2, j)] = (e * dc[j] - c * de[j]) / denom_ye;
    }
    Ok(jac)
}
