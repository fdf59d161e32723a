//! Sensor-assisted dynamic beamwidth and power control.
//!
//! Each vehicle propagates the exchanged position/orientation estimates and
//! covariances into the variance of its azimuth/elevation pointing angles,
//! opens the beam to cover the ±kσ confidence interval per axis, and sets the
//! transmit power for the worst-case mispointing inside that beam. The
//! fixed-beamwidth baseline shares the power law with a constant beam.

use nalgebra::{Matrix3, Matrix4, SMatrix};
use thiserror::Error;

use crate::channel::{
    max_gain_db, worst_case_tx_power, Beamwidth, ChannelError, LinkConfig, PowerDecision,
};
use crate::geometry::{
    los_angles, rotation_jacobian_wrt_quat, GeometryError, LosAngles, Quaternion, Vec3,
};
use crate::num::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BpcError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("covariance is not symmetric positive semidefinite (min eigenvalue {0})")]
    NotPsd(f64),
}

/// Estimate snapshot a vehicle shares over the control link: position and
/// orientation means with their covariances, stamped with the estimation
/// time (staleness shows up as an old timestamp).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeerEstimate<T> {
    pub p: Vec3<T>,
    pub c_p: Matrix3<T>,
    /// Orientation estimate, vehicle → navigation.
    pub q: Quaternion<T>,
    /// Covariance of the quaternion components of `q`.
    pub c_q: Matrix4<T>,
    pub t: T,
}

impl<T: Scalar> PeerEstimate<T> {
    pub fn new(p: Vec3<T>, c_p: Matrix3<T>, q: Quaternion<T>, c_q: Matrix4<T>, t: T) -> Self {
        Self { p, c_p, q, c_q, t }
    }
}

/// Controller parameters: confidence multiplier and beamwidth limits, plus an
/// optional beamwidth codebook (sorted, radians) that selections snap up to.
#[derive(Debug, Clone, PartialEq)]
pub struct BpcParams<T> {
    pub k: T,
    pub omega_min: T,
    pub omega_max: T,
    pub codebook: Option<Vec<T>>,
}

impl<T: Scalar> Default for BpcParams<T> {
    fn default() -> Self {
        Self {
            k: T::of(3.0),
            omega_min: T::of(1.8f64.to_radians()),
            omega_max: T::of(120.0f64.to_radians()),
            codebook: None,
        }
    }
}

/// One controller decision for the transmitting side.
#[derive(Debug, Clone, PartialEq)]
pub struct BpcDecision<T> {
    /// Own (Tx-side) beamwidth.
    pub beamwidth: Beamwidth<T>,
    pub ptx_dbm: T,
    /// Estimated LOS pointing direction in the own vehicle frame.
    pub pointing: LosAngles<T>,
    pub sigma_alpha: T,
    pub sigma_beta: T,
    pub eirp_clipped: bool,
}

/// Linearization of the estimated-geometry chain at the current estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct BpcGradients<T> {
    /// ∂(R{q*} Δp)/∂q* — with respect to the conjugate (nav → vehicle)
    /// quaternion (3×4).
    pub b_q: SMatrix<T, 3, 4>,
    /// ∂(R{q*} Δp)/∂Δp = R{q*} (3×3).
    pub b_dp: Matrix3<T>,
    /// Azimuth gradient with respect to the vehicle-frame displacement.
    pub b_alpha: Vec3<T>,
    /// Elevation gradient.
    pub b_beta: Vec3<T>,
}

macro_rules! impl_check_psd {
    ($name:ident, $n:literal) => {
        fn $name<T: Scalar>(m: &SMatrix<T, $n, $n>) -> Result<(), BpcError> {
            let sym = (m - m.transpose()).norm();
            let scale = m.norm().max(T::one());
            if sym > scale * T::of(1e-9) {
                return Err(BpcError::NotPsd(f64::NAN));
            }
            let min_eig = m
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .fold(T::of(f64::INFINITY), |acc, &e| acc.min(e));
            if min_eig < -scale * T::of(1e-9) {
                return Err(BpcError::NotPsd(min_eig.as_f64()));
            }
            Ok(())
        }
    };
}

impl_check_psd!(check_psd3, 3);
impl_check_psd!(check_psd4, 4);

/// Covariance of the conjugate quaternion: conjugation flips the vector part,
/// `C* = D C D` with `D = diag(1, −1, −1, −1)`.
fn conjugate_quat_cov<T: Scalar>(c_q: &Matrix4<T>) -> Matrix4<T> {
    let mut out = *c_q;
    for i in 0..4 {
        for j in 0..4 {
            if (i == 0) != (j == 0) {
                out[(i, j)] = -out[(i, j)];
            }
        }
    }
    out
}

/// Gradients of the relative-position and pointing-angle chain evaluated at
/// the exchanged estimates; all are validated against finite differences in
/// the test suite.
pub fn bpc_gradients<T: Scalar>(
    own: &PeerEstimate<T>,
    peer: &PeerEstimate<T>,
) -> Result<BpcGradients<T>, BpcError> {
    own.q.ensure_unit()?;
    let q_conj = own.q.conjugate();
    let dp_nav = peer.p - own.p;
    let dp_veh = q_conj.rotate_homogeneous(&dp_nav);

    let dist = dp_veh.norm();
    if dist <= T::of(crate::geometry::MIN_LOS_DISTANCE_M) {
        return Err(GeometryError::DegenerateGeometry {
            dist: dist.as_f64(),
            min: crate::geometry::MIN_LOS_DISTANCE_M,
        }
        .into());
    }

    let b_q = rotation_jacobian_wrt_quat(&q_conj, &dp_nav);
    let b_dp = q_conj.rotation_matrix_unchecked();

    let (x, y, z) = (dp_veh.x, dp_veh.y, dp_veh.z);
    let planar2 = x * x + y * y;
    let planar = planar2.sqrt();
    let r2 = dist * dist;
    let b_alpha = Vec3::new(-y / planar2, x / planar2, T::zero());
    let b_beta = Vec3::new(-z * x / (r2 * planar), -z * y / (r2 * planar), planar / r2);

    Ok(BpcGradients {
        b_q,
        b_dp,
        b_alpha,
        b_beta,
    })
}

/// Estimated LOS angles plus the standard deviations of the azimuth and
/// elevation pointing errors, from the exchanged estimates.
///
/// The displacement covariance in the own vehicle frame combines the
/// orientation uncertainty (through the conjugate-quaternion gradient) with
/// both position covariances, then projects onto the two pointing angles.
pub fn pointing_statistics<T: Scalar>(
    own: &PeerEstimate<T>,
    peer: &PeerEstimate<T>,
) -> Result<(LosAngles<T>, T, T), BpcError> {
    check_psd3(&own.c_p)?;
    check_psd3(&peer.c_p)?;
    check_psd4(&own.c_q)?;

    let grads = bpc_gradients(own, peer)?;
    let dp_veh = own.q.conjugate().rotate_homogeneous(&(peer.p - own.p));
    let angles = los_angles(&dp_veh)?;

    let c_q_conj = conjugate_quat_cov(&own.c_q);
    let c_dp = grads.b_q * c_q_conj * grads.b_q.transpose()
        + grads.b_dp * (own.c_p + peer.c_p) * grads.b_dp.transpose();

    let var_alpha = (grads.b_alpha.transpose() * c_dp * grads.b_alpha)[(0, 0)].max(T::zero());
    let var_beta = (grads.b_beta.transpose() * c_dp * grads.b_beta)[(0, 0)].max(T::zero());
    Ok((angles, var_alpha.sqrt(), var_beta.sqrt()))
}

/// kσ beamwidth rule: full beamwidths `2kσ` per axis, clamped to the
/// configured range and optionally snapped up to the next codebook entry.
pub fn select_beamwidth<T: Scalar>(
    sigma_alpha: T,
    sigma_beta: T,
    params: &BpcParams<T>,
) -> Beamwidth<T> {
    let two_k = T::of(2.0) * params.k;
    let snap = |w: T| -> T {
        let clamped = w.clamp(params.omega_min, params.omega_max);
        if let Some(book) = &params.codebook {
            for &entry in book {
                if entry >= clamped {
                    return entry;
                }
            }
            if let Some(&last) = book.last() {
                return last;
            }
        }
        clamped
    };
    Beamwidth {
        az: snap(two_k * sigma_alpha),
        el: snap(two_k * sigma_beta),
    }
}

/// Minimum Tx power for the selected beam pair at the estimated distance,
/// with the worst-case in-beam mispointing allowance and the configured
/// margin, clipped to the EIRP limit.
pub fn power_control<T: Scalar>(
    w_own: &Beamwidth<T>,
    w_peer: &Beamwidth<T>,
    d_hat: T,
    cfg: &LinkConfig<T>,
) -> PowerDecision<T> {
    worst_case_tx_power(w_own, w_peer, d_hat, cfg, cfg.power_margin_db)
}

/// Power control of the fixed-beamwidth baseline: both ends keep the same
/// constant beam and only the distance term adapts.
pub fn fixed_power_control<T: Scalar>(
    w: &Beamwidth<T>,
    d_hat: T,
    cfg: &LinkConfig<T>,
) -> PowerDecision<T> {
    power_control(w, w, d_hat, cfg)
}

/// One full controller step for the own (Tx) side: pointing statistics for
/// both ends from the exchanged data, kσ beamwidths, then worst-case power.
pub fn bpc_step<T: Scalar>(
    own: &PeerEstimate<T>,
    peer: &PeerEstimate<T>,
    cfg: &LinkConfig<T>,
    params: &BpcParams<T>,
) -> Result<BpcDecision<T>, BpcError> {
    let (pointing, sigma_alpha, sigma_beta) = pointing_statistics(own, peer)?;
    let w_own = select_beamwidth(sigma_alpha, sigma_beta, params);

    // the peer runs the same rule on the same exchanged data
    let (_, peer_sa, peer_sb) = pointing_statistics(peer, own)?;
    let w_peer = select_beamwidth(peer_sa, peer_sb, params);

    let d_hat = (peer.p - own.p).norm();
    let power = power_control(&w_own, &w_peer, d_hat, cfg);

    debug_assert!(
        power.ptx_dbm + max_gain_db(&w_own, cfg) <= cfg.eirp_max_dbm + T::of(1e-9),
        "EIRP invariant violated"
    );

    Ok(BpcDecision {
        beamwidth: w_own,
        ptx_dbm: power.ptx_dbm,
        pointing,
        sigma_alpha,
        sigma_beta,
        eirp_clipped: power.eirp_clipped,
    })
}
