//! Outage-constrained beamwidth/power benchmark.
//!
//! The benchmark knows the true geometry and the exact error statistics. Per
//! link direction it projects both position covariances and the transmitter
//! orientation covariance onto the plane transverse to the LOS, finds by
//! bisection the beam footprint that leaves exactly the allotted share of the
//! misalignment budget outside, and prices the configuration with the same
//! worst-case power law the online controller uses. Footprint coverage
//! probabilities are bivariate-normal masses over ellipses, evaluated by
//! whitening plus tensor Gauss–Legendre quadrature.

use nalgebra::{Matrix2, Matrix3, Vector2};
use thiserror::Error;

use crate::channel::{max_gain_db, worst_case_tx_power, Beamwidth, LinkConfig, PowerDecision};
use crate::geometry::{EulerAngles, GeometryError, Quaternion, Vec3};
use crate::num::Scalar;
use crate::quad;

/// Default absolute tolerance of the footprint-coverage quadrature.
pub const P_BEAM_COVER_TOL: f64 = 1e-6;

/// Beam half-angles are capped just below π/2 where the footprint projection
/// degenerates.
const MAX_HALF_ANGLE: f64 = 1.55;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizerError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("covariance is not positive semidefinite")]
    NotPsd,
    #[error("LOS direction too close to vertical to build a transverse frame")]
    VerticalLos,
    #[error("quadrature did not converge: last value {last}, last delta {delta}")]
    QuadratureNoConvergence { last: f64, delta: f64 },
    #[error("outage budget {0} outside (0, 0.5)")]
    InvalidBudget(f64),
}

/// 2×2 error covariance on the plane transverse to the LOS (meters²).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LosPlaneCovariance<T>(pub Matrix2<T>);

impl<T: Scalar> LosPlaneCovariance<T> {
    pub fn zero() -> Self {
        Self(Matrix2::zeros())
    }
}

impl<T: Scalar> std::ops::Add for LosPlaneCovariance<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self(self.0 + rhs.0)
    }
}

/// LOS-aligned frame of one link direction: `y` along the LOS, `x`/`z`
/// spanning the transverse plane.
#[derive(Debug, Clone, PartialEq)]
pub struct LosFrame<T> {
    /// Rotation from the vehicle frame into the LOS frame.
    pub r_bar: Matrix3<T>,
    /// Rotation from the navigation frame into the LOS frame.
    pub nav_to_los: Matrix3<T>,
    /// LOS distance, m.
    pub d: T,
}

/// Builds the LOS frame of a vehicle with orientation `q` (vehicle → nav)
/// toward a peer displaced by `dp_nav`.
pub fn los_frame<T: Scalar>(
    q: &Quaternion<T>,
    dp_nav: &Vec3<T>,
) -> Result<LosFrame<T>, OptimizerError> {
    q.ensure_unit().map_err(OptimizerError::from)?;
    let d = dp_nav.norm();
    if d <= T::of(crate::geometry::MIN_LOS_DISTANCE_M) {
        return Err(GeometryError::DegenerateGeometry {
            dist: d.as_f64(),
            min: crate::geometry::MIN_LOS_DISTANCE_M,
        }
        .into());
    }
    let nav_to_veh = q.conjugate().rotation_matrix_unchecked();
    let u = nav_to_veh * (dp_nav / d);
    // transverse z: vehicle up projected off the LOS axis
    let up = Vec3::z();
    let z_raw = up - u * u.dot(&up);
    let z_norm = z_raw.norm();
    if z_norm < T::of(1e-6) {
        return Err(OptimizerError::VerticalLos);
    }
    let z_los = z_raw / z_norm;
    let x_los = u.cross(&z_los);
    let r_bar = Matrix3::from_rows(&[x_los.transpose(), u.transpose(), z_los.transpose()]);
    Ok(LosFrame {
        nav_to_los: r_bar * nav_to_veh,
        r_bar,
        d,
    })
}

/// Rotates a navigation-frame position covariance into the LOS frame and
/// keeps the transverse (x, z) block.
pub fn project_position_cov<T: Scalar>(
    c_p: &Matrix3<T>,
    frame: &LosFrame<T>,
) -> Result<LosPlaneCovariance<T>, OptimizerError> {
    let full = project_position_cov_3d(c_p, frame)?;
    Ok(LosPlaneCovariance(Matrix2::new(
        full[(0, 0)],
        full[(0, 2)],
        full[(2, 0)],
        full[(2, 2)],
    )))
}

pub(crate) fn project_position_cov_3d<T: Scalar>(
    c_p: &Matrix3<T>,
    frame: &LosFrame<T>,
) -> Result<Matrix3<T>, OptimizerError> {
    check_psd3(c_p)?;
    Ok(frame.nav_to_los * c_p * frame.nav_to_los.transpose())
}

fn check_psd3<T: Scalar>(m: &Matrix3<T>) -> Result<(), OptimizerError> {
    let scale = m.norm().max(T::one());
    if (m - m.transpose()).norm() > scale * T::of(1e-9) {
        return Err(OptimizerError::NotPsd);
    }
    let min_eig = m
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(T::of(f64::INFINITY), |a, &e| a.min(e));
    if min_eig < -scale * T::of(1e-9) {
        return Err(OptimizerError::NotPsd);
    }
    Ok(())
}

/// Intrinsic ZYX Euler rotation matrix (vehicle → navigation); the reference
/// the partial derivatives below are validated against.
#[cfg(test)]
pub(crate) fn euler_rotation<T: Scalar>(e: &EulerAngles<T>) -> Matrix3<T> {
    let (sr, cr) = e.roll.sin_cos();
    let (sp, cp) = e.pitch.sin_cos();
    let (sy, cy) = e.yaw.sin_cos();
    let rx = Matrix3::new(
        T::one(),
        T::zero(),
        T::zero(),
        T::zero(),
        cr,
        -sr,
        T::zero(),
        sr,
        cr,
    );
    let ry = Matrix3::new(
        cp,
        T::zero(),
        sp,
        T::zero(),
        T::one(),
        T::zero(),
        -sp,
        T::zero(),
        cp,
    );
    let rz = Matrix3::new(
        cy,
        -sy,
        T::zero(),
        sy,
        cy,
        T::zero(),
        T::zero(),
        T::zero(),
        T::one(),
    );
    rz * ry * rx
}

/// Partial derivatives of [`euler_rotation`] with respect to roll, pitch and
/// yaw.
fn euler_rotation_partials<T: Scalar>(e: &EulerAngles<T>) -> [Matrix3<T>; 3] {
    let (sr, cr) = e.roll.sin_cos();
    let (sp, cp) = e.pitch.sin_cos();
    let (sy, cy) = e.yaw.sin_cos();
    let z = T::zero();
    let rx = Matrix3::new(T::one(), z, z, z, cr, -sr, z, sr, cr);
    let ry = Matrix3::new(cp, z, sp, z, T::one(), z, -sp, z, cp);
    let rz = Matrix3::new(cy, -sy, z, sy, cy, z, z, z, T::one());
    let drx = Matrix3::new(z, z, z, z, -sr, -cr, z, cr, -sr);
    let dry = Matrix3::new(-sp, z, cp, z, z, z, -cp, z, -sp);
    let drz = Matrix3::new(-sy, -cy, z, cy, -sy, z, z, z, z);
    [rz * ry * drx, rz * dry * rx, drz * ry * rx]
}

/// Covariance of the two transverse angular errors (about the LOS-frame z
/// and x axes, ordered to match the plane's (x, z) displacement axes) caused
/// by an Euler-angle error of the transmitting vehicle.
pub fn orientation_cov_to_los_plane<T: Scalar>(
    c_gamma: &Matrix3<T>,
    q: &Quaternion<T>,
    dp_nav: &Vec3<T>,
    frame: &LosFrame<T>,
) -> Result<Matrix2<T>, OptimizerError> {
    check_psd3(c_gamma)?;
    let euler = EulerAngles::from_quaternion(q);
    let partials = euler_rotation_partials(&euler);
    // d(R̄ R{γ}ᵀ dp)/dγ_i; rows x and z scaled by 1/d are angle gradients
    let mut b_gamma = Matrix3::zeros();
    for (i, dr) in partials.iter().enumerate() {
        let col = frame.r_bar * (dr.transpose() * dp_nav);
        b_gamma.set_column(i, &col);
    }
    let mut b_tilde = nalgebra::SMatrix::<T, 2, 3>::zeros();
    for i in 0..3 {
        b_tilde[(0, i)] = b_gamma[(0, i)] / frame.d;
        b_tilde[(1, i)] = b_gamma[(2, i)] / frame.d;
    }
    Ok(b_tilde * c_gamma * b_tilde.transpose())
}

/// Total transverse-plane covariance: both position contributions plus the
/// orientation contribution scaled onto the plane at distance `d`.
pub fn combined_los_cov<T: Scalar>(
    c1: &LosPlaneCovariance<T>,
    c2: &LosPlaneCovariance<T>,
    c_orient: &Matrix2<T>,
    d: T,
) -> LosPlaneCovariance<T> {
    LosPlaneCovariance(c1.0 + c2.0 + c_orient * (d * d))
}

// ---------------------------------------------------------------------------
// Footprint coverage probability
// ---------------------------------------------------------------------------

fn eigen2<T: Scalar>(c: &Matrix2<T>) -> (T, T, Vector2<T>) {
    let half = T::of(0.5);
    let mid = (c[(0, 0)] + c[(1, 1)]) * half;
    let diff = (c[(0, 0)] - c[(1, 1)]) * half;
    let disc = (diff * diff + c[(0, 1)] * c[(0, 1)]).sqrt();
    let l1 = mid + disc;
    let l2 = mid - disc;
    let v1 = if c[(0, 1)].abs() > T::of(1e-300) {
        Vector2::new(c[(0, 1)], l1 - c[(0, 0)]).normalize()
    } else if c[(0, 0)] >= c[(1, 1)] {
        Vector2::new(T::one(), T::zero())
    } else {
        Vector2::new(T::zero(), T::one())
    };
    (l1, l2, v1)
}

/// Probability that a zero-mean bivariate normal with covariance `c` falls
/// inside the beam footprint: the origin-centered ellipse with semi-axes
/// `d·tan(az/2)` (plane x) and `d·tan(el/2)` (plane z).
///
/// Whitens the covariance and integrates the standard normal over the
/// transformed ellipse with an adaptively refined tensor Gauss–Legendre rule
/// in polar coordinates to [`P_BEAM_COVER_TOL`] absolute. Singular
/// covariances take rank-reduced paths.
pub fn p_beam_cover<T: Scalar>(
    w: &Beamwidth<T>,
    c: &LosPlaneCovariance<T>,
    d: T,
) -> Result<T, OptimizerError> {
    let half = T::of(0.5);
    let a = d * (w.az * half).min(T::of(MAX_HALF_ANGLE)).tan();
    let b = d * (w.el * half).min(T::of(MAX_HALF_ANGLE)).tan();
    if !(a > T::zero() && b > T::zero()) {
        return Err(GeometryError::NonFinite.into());
    }
    let m = &c.0;
    let scale = m[(0, 0)].max(m[(1, 1)]);
    let sym_tol = scale.max(T::one()) * T::of(1e-9);
    if (m[(0, 1)] - m[(1, 0)]).abs() > sym_tol {
        return Err(OptimizerError::NotPsd);
    }
    let (l1, l2, v1) = eigen2(m);
    if l2 < -scale.max(T::one()) * T::of(1e-12) {
        return Err(OptimizerError::NotPsd);
    }

    // rank 0: all the mass sits at the beam center
    if l1 <= T::of(1e-30) {
        return Ok(T::one());
    }
    // rank 1: mass on a line through the origin
    if l2 <= l1 * T::of(1e-12) {
        let tx = v1[0] / a;
        let tz = v1[1] / b;
        let boundary = T::one() / (tx * tx + tz * tz).sqrt();
        let z0 = boundary / l1.sqrt();
        if z0 >= T::of(12.0) {
            return Ok(T::one());
        }
        let inv_norm = T::one() / (T::two_pi()).sqrt();
        let mass = quad::integrate_1d(
            |s: T| (-s * s * half).exp() * inv_norm,
            (-z0, z0),
            96,
        );
        return Ok(mass.clamp(T::zero(), T::one()));
    }

    // full rank: whiten with the Cholesky factor and reduce the transformed
    // ellipse to principal axes
    let l11 = m[(0, 0)].sqrt();
    let l21 = m[(0, 1)] / l11;
    let l22 = (m[(1, 1)] - l21 * l21).max(T::zero()).sqrt();
    let inv_a2 = T::one() / (a * a);
    let inv_b2 = T::one() / (b * b);
    let mm = Matrix2::new(
        l11 * l11 * inv_a2 + l21 * l21 * inv_b2,
        l21 * l22 * inv_b2,
        l21 * l22 * inv_b2,
        l22 * l22 * inv_b2,
    );
    let (mu1, mu2, _) = eigen2(&mm);
    // whitened-ellipse radii in standard deviations
    let r_small = T::one() / mu1.sqrt();
    let r_large = T::one() / mu2.sqrt();
    if r_small >= T::of(40.0) {
        return Ok(T::one());
    }

    let two_pi = T::two_pi();
    let integrand = |t: T, theta: T| {
        let (s, cth) = theta.sin_cos();
        let rho = (r_small * cth) * (r_small * cth) + (r_large * s) * (r_large * s);
        (-t * t * rho * half).exp() * t
    };
    let prefactor = r_small * r_large / two_pi;

    let tol = T::of(P_BEAM_COVER_TOL) * T::of(0.25);
    let mut last = T::of(f64::NAN);
    let (mut n_t, mut n_th) = (24usize, 32usize);
    for level in 0..6 {
        let val = prefactor
            * quad::tensor_integrate(integrand, (T::zero(), T::one()), (T::zero(), two_pi), n_t, n_th);
        if level > 0 {
            let delta = (val - last).abs();
            if delta <= tol {
                return Ok(val.clamp(T::zero(), T::one()));
            }
        }
        last = val;
        n_t *= 2;
        n_th *= 2;
    }
    Err(OptimizerError::QuadratureNoConvergence {
        last: last.as_f64(),
        delta: f64::NAN,
    })
}

/// Total misalignment probability of the two-sided link (union of the Tx and
/// Rx misalignment events).
pub fn p_mis_total<T: Scalar>(p_tx: T, p_rx: T) -> T {
    p_tx + p_rx - p_tx * p_rx
}

/// Small-probability approximation of [`p_mis_total`].
pub fn p_mis_approx<T: Scalar>(p_tx: T, p_rx: T) -> T {
    p_tx + p_rx
}

/// Worst-case transmit power of a beam pair; shared with the controller's
/// power law (zero margin).
pub fn required_ptx_worstcase<T: Scalar>(
    w1: &Beamwidth<T>,
    w2: &Beamwidth<T>,
    d: T,
    cfg: &LinkConfig<T>,
) -> PowerDecision<T> {
    worst_case_tx_power(w1, w2, d, cfg, T::zero())
}

// ---------------------------------------------------------------------------
// The optimization problem
// ---------------------------------------------------------------------------

/// Problem data: true geometry, error statistics and the outage budget.
#[derive(Debug, Clone, PartialEq)]
pub struct OptProblem<T> {
    pub p1: Vec3<T>,
    pub p2: Vec3<T>,
    /// Orientations, vehicle → navigation.
    pub q1: Quaternion<T>,
    pub q2: Quaternion<T>,
    /// Position error covariances in the navigation frame.
    pub c_p1: Matrix3<T>,
    pub c_p2: Matrix3<T>,
    /// Euler-angle error covariances.
    pub c_gamma1: Matrix3<T>,
    pub c_gamma2: Matrix3<T>,
    pub p_out_max: T,
    pub link: LinkConfig<T>,
    pub omega_min: T,
    pub omega_max: T,
}

/// Solution: beam pair, power, realized misalignment probability.
#[derive(Debug, Clone, PartialEq)]
pub struct OptSolution<T> {
    pub w1: Beamwidth<T>,
    pub w2: Beamwidth<T>,
    pub ptx_dbm: T,
    /// Misalignment probability of the returned physical beams (union).
    pub p_mis: T,
    /// Per-side probability the bisection solved on the principal-axis
    /// ellipse, before circumscribing to the azimuth/elevation axes.
    pub solved_side_mis: [T; 2],
    pub feasible: bool,
    pub eirp_clipped: bool,
}

struct SideSolution<T> {
    w: Beamwidth<T>,
    solved: T,
    physical: T,
}

fn solve_side<T: Scalar>(
    c_total: &LosPlaneCovariance<T>,
    d: T,
    target: T,
    omega_min: T,
    omega_max: T,
) -> Result<SideSolution<T>, OptimizerError> {
    let floor_axis = T::of(1e-9);
    let m = &c_total.0;
    let (l1, l2, _) = eigen2(m);

    // no uncertainty: the minimum beam already covers everything
    if l1 <= T::of(1e-24) {
        let w = Beamwidth {
            az: omega_min,
            el: omega_min,
        };
        let physical = T::one() - p_beam_cover(&w, c_total, d)?;
        return Ok(SideSolution {
            w,
            solved: T::zero(),
            physical,
        });
    }

    let s1 = l1.max(T::zero()).sqrt();
    let s2 = l2.max(T::zero()).sqrt();
    let c_principal = LosPlaneCovariance(Matrix2::new(l1, T::zero(), T::zero(), l2.max(T::zero())));

    let p_mis_of_scale = |s: T| -> Result<T, OptimizerError> {
        let az = T::of(2.0) * ((s * s1).max(floor_axis) / d).atan();
        let el = T::of(2.0) * ((s * s2).max(floor_axis) / d).atan();
        let w = Beamwidth { az, el };
        Ok(T::one() - p_beam_cover(&w, &c_principal, d)?)
    };

    // bracket then bisect on the footprint scale
    let mut iterations = 0usize;
    let mut lo = T::of(1e-3);
    let mut hi = T::of(4.0);
    while p_mis_of_scale(hi)? > target {
        hi *= T::of(2.0);
        iterations += 1;
        if iterations > 20 {
            return Err(OptimizerError::QuadratureNoConvergence {
                last: hi.as_f64(),
                delta: f64::NAN,
            });
        }
    }
    let mut s_mid = (lo + hi) * T::of(0.5);
    let mut solved = p_mis_of_scale(s_mid)?;
    while iterations < 60 {
        s_mid = (lo + hi) * T::of(0.5);
        solved = p_mis_of_scale(s_mid)?;
        if (solved - target).abs() <= T::of(1e-7) {
            break;
        }
        if solved > target {
            lo = s_mid;
        } else {
            hi = s_mid;
        }
        iterations += 1;
    }

    // circumscribe the principal ellipse with azimuth/elevation axes: the
    // bounding half-extents are the marginal standard deviations
    let ux = (s_mid * m[(0, 0)].max(T::zero()).sqrt()).max(floor_axis);
    let uz = (s_mid * m[(1, 1)].max(T::zero()).sqrt()).max(floor_axis);
    let w = Beamwidth {
        az: (T::of(2.0) * (ux / d).atan()).clamp(omega_min, omega_max),
        el: (T::of(2.0) * (uz / d).atan()).clamp(omega_min, omega_max),
    };
    let physical = T::one() - p_beam_cover(&w, c_total, d)?;
    Ok(SideSolution {
        w,
        solved,
        physical,
    })
}

/// Solves the outage-constrained minimum-power beam configuration.
///
/// The misalignment budget is split evenly between the two sides through the
/// union formula; each side's footprint scale is found by bisection against
/// [`p_beam_cover`]; the transmit power is the worst-case law on the
/// resulting beams. An EIRP violation is reported through `feasible`, not an
/// error.
pub fn optimize<T: Scalar>(prob: &OptProblem<T>) -> Result<OptSolution<T>, OptimizerError> {
    if !(prob.p_out_max > T::zero() && prob.p_out_max < T::of(0.5)) {
        return Err(OptimizerError::InvalidBudget(prob.p_out_max.as_f64()));
    }
    let dp = prob.p2 - prob.p1;
    // equal split of the union: 1 − √(1 − budget) per side
    let target_side = T::one() - (T::one() - prob.p_out_max).sqrt();

    let mut sides: Vec<SideSolution<T>> = Vec::with_capacity(2);
    for (q, c_gamma, dp_signed) in [
        (&prob.q1, &prob.c_gamma1, dp),
        (&prob.q2, &prob.c_gamma2, -dp),
    ] {
        let frame = los_frame(q, &dp_signed)?;
        let c1 = project_position_cov(&prob.c_p1, &frame)?;
        let c2 = project_position_cov(&prob.c_p2, &frame)?;
        let c_orient = orientation_cov_to_los_plane(c_gamma, q, &dp_signed, &frame)?;
        let c_total = combined_los_cov(&c1, &c2, &c_orient, frame.d);
        sides.push(solve_side(
            &c_total,
            frame.d,
            target_side,
            prob.omega_min,
            prob.omega_max,
        )?);
    }
    let side2 = sides.pop().expect("two sides");
    let side1 = sides.pop().expect("two sides");

    let d = dp.norm();
    let power = required_ptx_worstcase(&side1.w, &side2.w, d, &prob.link);
    let p_mis = p_mis_total(side1.physical, side2.physical);
    let feasible = !power.eirp_clipped && p_mis <= prob.p_out_max + T::of(1e-5);

    debug_assert!(
        power.ptx_dbm + max_gain_db(&side1.w, &prob.link) <= prob.link.eirp_max_dbm + T::of(1e-9)
    );

    Ok(OptSolution {
        w1: side1.w,
        w2: side2.w,
        ptx_dbm: power.ptx_dbm,
        p_mis,
        solved_side_mis: [side1.solved, side2.solved],
        feasible,
        eirp_clipped: power.eirp_clipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bpc::{bpc_step, BpcParams, PeerEstimate};
    use crate::fusion::quat_cov_from_euler_cov;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn frame_along_x() -> LosFrame<f64> {
        los_frame(&Quaternion::identity(), &Vec3::new(20.0, 0.0, 0.0)).unwrap()
    }

    #[test]
    fn euler_rotation_matches_quaternion() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        for _ in 0..100 {
            let e = EulerAngles::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.2..1.2),
                rng.random_range(-3.0..3.0),
            );
            let via_euler = euler_rotation(&e);
            let via_quat = e.to_quaternion().rotation_matrix().unwrap();
            assert_relative_eq!(via_euler, via_quat, epsilon = 1e-12);
        }
    }

    #[test]
    fn los_frame_axes() {
        let f = frame_along_x();
        // y of the LOS frame is the LOS direction, z stays up
        let u = f.nav_to_los * Vec3::new(1.0, 0.0, 0.0);
        assert_relative_eq!(u, Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
        let z = f.nav_to_los * Vec3::new(0.0, 0.0, 1.0);
        assert_relative_eq!(z, Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-12);
        assert!(matches!(
            los_frame(&Quaternion::<f64>::identity(), &Vec3::new(0.0, 0.0, 10.0)),
            Err(OptimizerError::VerticalLos)
        ));
    }

    #[test]
    fn project_position_cov_isotropic_invariant() {
        let mut rng = ChaCha12Rng::seed_from_u64(32);
        for _ in 0..20 {
            let e = EulerAngles::new(
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-3.0..3.0),
            );
            let q = e.to_quaternion();
            let dp = Vec3::new(
                rng.random_range(-40.0..40.0),
                rng.random_range(-40.0..40.0),
                rng.random_range(-4.0..4.0),
            );
            if dp.norm() < 5.0 {
                continue;
            }
            let frame = los_frame(&q, &dp).unwrap();
            let sigma2 = 0.49;
            let c = Matrix3::from_diagonal_element(sigma2);
            let out = project_position_cov(&c, &frame).unwrap();
            assert_relative_eq!(out.0, Matrix2::identity() * sigma2, epsilon = 1e-12);
        }
    }

    #[test]
    fn project_position_cov_drops_radial_component() {
        // LOS along x, error variance purely radial (along x): nothing lands
        // on the transverse plane
        let frame = frame_along_x();
        let c = Matrix3::from_diagonal(&Vec3::new(4.0, 0.0, 0.0));
        let out = project_position_cov(&c, &frame).unwrap();
        assert!(out.0.norm() < 1e-12);
    }

    #[test]
    fn projection_preserves_trace_before_extraction() {
        let mut rng = ChaCha12Rng::seed_from_u64(33);
        for _ in 0..20 {
            let a: Matrix3<f64> = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let c = a * a.transpose();
            let e = EulerAngles::new(0.1, -0.2, rng.random_range(-3.0..3.0));
            let frame = los_frame(&e.to_quaternion(), &Vec3::new(15.0, 8.0, 1.0)).unwrap();
            let full = project_position_cov_3d(&c, &frame).unwrap();
            assert_relative_eq!(full.trace(), c.trace(), epsilon = 1e-12);
        }
    }

    #[test]
    fn orientation_cov_zero_gives_zero() {
        let frame = frame_along_x();
        let out = orientation_cov_to_los_plane(
            &Matrix3::zeros(),
            &Quaternion::identity(),
            &Vec3::new(20.0, 0.0, 0.0),
            &frame,
        )
        .unwrap();
        assert_eq!(out, Matrix2::zeros());
    }

    /// Yaw-only orientation error at boresight maps to the azimuthal (plane
    /// x) angular component with the same variance; verified by Monte Carlo
    /// through the exact rotation chain.
    #[test]
    fn orientation_cov_yaw_only_matches_monte_carlo() {
        let sigma_yaw = 1.0f64.to_radians();
        let yaw0 = 0.8;
        let e0 = EulerAngles::new(0.0, 0.0, yaw0);
        let q0 = e0.to_quaternion();
        let d = 20.0;
        let dp = q0.rotate(&Vec3::new(d, 0.0, 0.0)).unwrap();
        let frame = los_frame(&q0, &dp).unwrap();
        let mut c_gamma = Matrix3::zeros();
        c_gamma[(2, 2)] = sigma_yaw * sigma_yaw;
        let out = orientation_cov_to_los_plane(&c_gamma, &q0, &dp, &frame).unwrap();
        assert_relative_eq!(out[(0, 0)], sigma_yaw * sigma_yaw, max_relative = 0.01);

        // Monte Carlo: perturb yaw, measure the transverse-x displacement of
        // the pointing direction over d
        let mut rng = ChaCha12Rng::seed_from_u64(34);
        let n = 1_000_000usize;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let dyaw: f64 = {
                let x: f64 = StandardNormal.sample(&mut rng);
                x * sigma_yaw
            };
            let e = EulerAngles::new(0.0, 0.0, yaw0 + dyaw);
            let moved = frame.r_bar * (euler_rotation(&e).transpose() * dp);
            let angle_x = moved.x / d;
            sum2 += angle_x * angle_x;
        }
        let mc_var = sum2 / n as f64;
        assert!(
            ((mc_var - out[(0, 0)]) / mc_var).abs() < 0.02,
            "MC {mc_var}, analytic {}",
            out[(0, 0)]
        );
    }

    #[test]
    fn orientation_cov_output_psd() {
        let mut rng = ChaCha12Rng::seed_from_u64(35);
        for _ in 0..20 {
            let a: Matrix3<f64> = Matrix3::from_fn(|_, _| rng.random_range(-0.02..0.02));
            let c_gamma = a * a.transpose();
            let e = EulerAngles::new(0.05, -0.1, rng.random_range(-3.0..3.0));
            let q = e.to_quaternion();
            let dp = Vec3::new(
                rng.random_range(5.0..50.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(-2.0..2.0),
            );
            let frame = los_frame(&q, &dp).unwrap();
            let out = orientation_cov_to_los_plane(&c_gamma, &q, &dp, &frame).unwrap();
            let (l1, l2, _) = eigen2(&out);
            assert!(l2 > -1e-15 * l1.max(1.0));
        }
    }

    #[test]
    fn combined_cov_arithmetic() {
        let zero = LosPlaneCovariance::<f64>::zero();
        assert_eq!(
            combined_los_cov(&zero, &zero, &Matrix2::zeros(), 10.0).0,
            Matrix2::zeros()
        );
        let c1 = LosPlaneCovariance(Matrix2::identity());
        let c_or = Matrix2::identity() * (1.0f64.to_radians()).powi(2);
        // d = 0: orientation contribution vanishes
        assert_relative_eq!(
            combined_los_cov(&c1, &c1, &c_or, 0.0).0,
            Matrix2::identity() * 2.0,
            epsilon = 1e-15
        );
        // 1 m position errors each plus 1 degree at 20 m
        let out = combined_los_cov(&c1, &c1, &c_or, 20.0);
        let expected = 2.0 + (20.0 * 1.0f64.to_radians()).powi(2);
        assert_relative_eq!(out.0[(0, 0)], expected, epsilon = 1e-12);
        assert_relative_eq!(out.0[(1, 1)], expected, epsilon = 1e-12);
    }

    #[test]
    fn p_beam_cover_full_coverage() {
        // footprint spanning ±10σ on both axes
        let sigma = 0.5f64;
        let d = 20.0;
        let half = (10.0 * sigma / d).atan();
        let w = Beamwidth::new(2.0 * half, 2.0 * half).unwrap();
        let c = LosPlaneCovariance(Matrix2::identity() * sigma * sigma);
        let p = p_beam_cover(&w, &c, d).unwrap();
        assert!(p >= 1.0 - 1e-9, "p = {p}");
    }

    /// Isotropic covariance and circular footprint: the Rayleigh closed form
    /// is an independent oracle for the quadrature.
    #[test]
    fn p_beam_cover_matches_rayleigh_closed_form() {
        let d = 25.0;
        for sigma in [0.2f64, 0.7, 2.0] {
            for r_sigma in [0.5f64, 1.0, 2.0, 3.0, 4.0] {
                let r = r_sigma * sigma;
                let half = (r / d).atan();
                let w = Beamwidth::new(2.0 * half, 2.0 * half).unwrap();
                let c = LosPlaneCovariance(Matrix2::identity() * sigma * sigma);
                let p = p_beam_cover(&w, &c, d).unwrap();
                let expected = 1.0 - (-r * r / (2.0 * sigma * sigma)).exp();
                assert!(
                    (p - expected).abs() < 1e-6,
                    "sigma {sigma} r {r_sigma}σ: quadrature {p}, closed form {expected}"
                );
            }
        }
    }

    /// Anisotropic, correlated instances against a Monte Carlo oracle.
    #[test]
    fn p_beam_cover_matches_monte_carlo() {
        let mut rng = ChaCha12Rng::seed_from_u64(36);
        let d = 20.0;
        for _ in 0..5 {
            let sx: f64 = rng.random_range(0.2..1.5);
            let sz: f64 = rng.random_range(0.2..1.5);
            let rho: f64 = rng.random_range(-0.8..0.8);
            let c = Matrix2::new(sx * sx, rho * sx * sz, rho * sx * sz, sz * sz);
            let a: f64 = rng.random_range(1.0..4.0) * sx;
            let b: f64 = rng.random_range(1.0..4.0) * sz;
            let w = Beamwidth::new(2.0 * (a / d).atan(), 2.0 * (b / d).atan()).unwrap();
            let p = p_beam_cover(&w, &LosPlaneCovariance(c), d).unwrap();

            let l11 = sx;
            let l21 = rho * sz;
            let l22 = (sz * sz - l21 * l21).sqrt();
            let n = 1_000_000usize;
            let mut inside = 0usize;
            for _ in 0..n {
                let z1: f64 = StandardNormal.sample(&mut rng);
                let z2: f64 = StandardNormal.sample(&mut rng);
                let x = l11 * z1;
                let y = l21 * z1 + l22 * z2;
                if (x / a).powi(2) + (y / b).powi(2) <= 1.0 {
                    inside += 1;
                }
            }
            let mc = inside as f64 / n as f64;
            let se = (mc * (1.0 - mc) / n as f64).sqrt().max(1e-7);
            assert!(
                (p - mc).abs() < 4.0 * se + 2e-6,
                "quadrature {p}, MC {mc} ± {se}"
            );
        }
    }

    #[test]
    fn p_beam_cover_rank_one_against_erf() {
        // variance only along a 30° line: coverage is a 1-D normal mass
        let theta: f64 = 30f64.to_radians();
        let sigma = 0.8f64;
        let v = Vector2::new(theta.cos(), theta.sin());
        let c = Matrix2::from_fn(|i, j| sigma * sigma * v[i] * v[j]);
        let d = 20.0;
        let (a, b) = (1.5f64, 2.5f64);
        let w = Beamwidth::new(2.0 * (a / d).atan(), 2.0 * (b / d).atan()).unwrap();
        let p = p_beam_cover(&w, &LosPlaneCovariance(c), d).unwrap();
        let boundary = 1.0 / ((v[0] / a).powi(2) + (v[1] / b).powi(2)).sqrt();
        let z0 = boundary / sigma;
        let expected = libm::erf(z0 / std::f64::consts::SQRT_2);
        assert!((p - expected).abs() < 1e-6, "p {p}, erf {expected}");
    }

    #[test]
    fn p_beam_cover_monotonicity() {
        let d = 20.0;
        let c = LosPlaneCovariance(Matrix2::new(0.8, 0.2, 0.2, 0.5));
        let w = |az_deg: f64, el_deg: f64| {
            Beamwidth::new(az_deg.to_radians(), el_deg.to_radians()).unwrap()
        };
        let base = p_beam_cover(&w(8.0, 6.0), &c, d).unwrap();
        assert!(p_beam_cover(&w(10.0, 6.0), &c, d).unwrap() >= base);
        assert!(p_beam_cover(&w(8.0, 8.0), &c, d).unwrap() >= base);
        // inflating the covariance cannot increase coverage
        let inflated = LosPlaneCovariance(c.0 + Matrix2::identity() * 0.3);
        assert!(p_beam_cover(&w(8.0, 6.0), &inflated, d).unwrap() <= base);
    }

    #[test]
    fn p_mis_total_cases() {
        assert_eq!(p_mis_total(0.0, 0.0), 0.0);
        assert_eq!(p_mis_total(1.0, 0.0), 1.0);
        // direct arithmetic: 6e-4 − (3e-4)² = 5.9991e-4
        let p = p_mis_total(3e-4, 3e-4);
        assert_relative_eq!(p, 5.9991e-4, epsilon = 1e-12);
        assert_relative_eq!(p_mis_approx(3e-4, 3e-4), 6e-4, epsilon = 1e-12);
        assert!((p_mis_approx(3e-4f64, 3e-4f64) - p).abs() < 1e-7);

        let mut rng = ChaCha12Rng::seed_from_u64(37);
        for _ in 0..200 {
            let a: f64 = rng.random_range(0.0..1.0);
            let b: f64 = rng.random_range(0.0..1.0);
            let u = p_mis_total(a, b);
            assert!(u >= a.max(b) - 1e-15);
            assert!(u <= a + b + 1e-15);
        }
    }

    #[test]
    fn required_ptx_matches_power_control_bit_for_bit() {
        let mut rng = ChaCha12Rng::seed_from_u64(38);
        let mut cfg = LinkConfig::<f64>::default();
        cfg.power_margin_db = 0.0;
        for _ in 0..100 {
            let w1 = Beamwidth::new(
                rng.random_range(0.02..1.5),
                rng.random_range(0.02..1.5),
            )
            .unwrap();
            let w2 = Beamwidth::new(
                rng.random_range(0.02..1.5),
                rng.random_range(0.02..1.5),
            )
            .unwrap();
            let d = rng.random_range(5.0..120.0);
            assert_eq!(
                required_ptx_worstcase(&w1, &w2, d, &cfg),
                crate::bpc::power_control(&w1, &w2, d, &cfg)
            );
        }
    }

    fn problem(
        d: f64,
        sigma_p_axis: f64,
        sigma_g_axis: f64,
        budget: f64,
    ) -> OptProblem<f64> {
        let e1 = EulerAngles::new(0.0, 0.0, 0.4);
        let q1 = e1.to_quaternion();
        let p2 = q1.rotate(&Vec3::new(d, 0.0, 0.0)).unwrap();
        let e2 = EulerAngles::new(0.0, 0.0, 0.4 + 3.0);
        OptProblem {
            p1: Vec3::zeros(),
            p2,
            q1,
            q2: e2.to_quaternion(),
            c_p1: Matrix3::from_diagonal_element(sigma_p_axis * sigma_p_axis),
            c_p2: Matrix3::from_diagonal_element(sigma_p_axis * sigma_p_axis),
            c_gamma1: Matrix3::from_diagonal_element(sigma_g_axis * sigma_g_axis),
            c_gamma2: Matrix3::from_diagonal_element(sigma_g_axis * sigma_g_axis),
            p_out_max: budget,
            link: LinkConfig::default(),
            omega_min: 1.8f64.to_radians(),
            omega_max: 120.0f64.to_radians(),
        }
    }

    #[test]
    fn optimize_zero_covariance_returns_minimum_beams() {
        let mut prob = problem(30.0, 0.0, 0.0, 6e-4);
        prob.c_p1 = Matrix3::zeros();
        prob.c_p2 = Matrix3::zeros();
        prob.c_gamma1 = Matrix3::zeros();
        prob.c_gamma2 = Matrix3::zeros();
        let sol = optimize(&prob).unwrap();
        assert_relative_eq!(sol.w1.az, prob.omega_min, epsilon = 1e-12);
        assert_relative_eq!(sol.w2.el, prob.omega_min, epsilon = 1e-12);
        assert!(sol.feasible);
        assert!(sol.p_mis < 1e-9);
    }

    #[test]
    fn optimize_hits_per_side_target() {
        let prob = problem(30.0, 0.5 / 3.0f64.sqrt(), 0.5f64.to_radians() / 3.0f64.sqrt(), 6e-4);
        let sol = optimize(&prob).unwrap();
        let target = 1.0 - (1.0 - prob.p_out_max).sqrt();
        for side in sol.solved_side_mis {
            assert!(
                (side - target).abs() <= 1e-6,
                "solved {side} vs target {target}"
            );
        }
        assert!(sol.feasible);
        // physical beams are conservative: achieved within budget
        assert!(sol.p_mis <= prob.p_out_max + 1e-5);
        // EIRP invariant
        assert!(
            sol.ptx_dbm + max_gain_db(&sol.w1, &prob.link) <= prob.link.eirp_max_dbm + 1e-9
        );
    }

    /// Paired heuristic-vs-optimizer comparison at matched misalignment
    /// budget: the optimizer never needs more power than the kσ heuristic
    /// run on the same true covariances.
    #[test]
    fn optimizer_never_worse_than_heuristic_at_matched_budget() {
        let mut rng = ChaCha12Rng::seed_from_u64(39);
        let link = LinkConfig::<f64>::default();
        let params = BpcParams::<f64> {
            omega_min: 1e-4,
            ..BpcParams::default()
        };
        for _ in 0..200 {
            let d: f64 = rng.random_range(15.0..60.0);
            let yaw1: f64 = rng.random_range(-3.0..3.0);
            let sigma_p: f64 = rng.random_range(0.2..0.8);
            let sigma_g: f64 = rng.random_range(0.1f64.to_radians()..0.8f64.to_radians());

            let e1 = EulerAngles::new(0.0, 0.0, yaw1);
            let q1 = e1.to_quaternion();
            let p2 = q1
                .rotate(&Vec3::new(
                    d * 0.9,
                    d * 0.3,
                    rng.random_range(-0.05 * d..0.05 * d),
                ))
                .unwrap();
            let e2 = EulerAngles::new(0.0, 0.0, yaw1 + rng.random_range(2.5..3.5));
            let q2 = e2.to_quaternion();

            let c_p = Matrix3::from_diagonal_element(sigma_p * sigma_p);
            let c_g = Matrix3::from_diagonal_element(sigma_g * sigma_g);

            // heuristic at the true means with the true covariances
            let est1 = PeerEstimate::new(
                Vec3::zeros(),
                c_p,
                q1,
                quat_cov_from_euler_cov(&q1, &c_g).unwrap(),
                0.0,
            );
            let est2 = PeerEstimate::new(
                p2,
                c_p,
                q2,
                quat_cov_from_euler_cov(&q2, &c_g).unwrap(),
                0.0,
            );
            let dec1 = bpc_step(&est1, &est2, &link, &params).unwrap();
            let dec2 = bpc_step(&est2, &est1, &link, &params).unwrap();

            // the heuristic's realized misalignment budget
            let dp = p2;
            let mut achieved = [0.0f64; 2];
            for (i, (q, cg, dps, w)) in [
                (q1, c_g, dp, dec1.beamwidth),
                (q2, c_g, -dp, dec2.beamwidth),
            ]
            .into_iter()
            .enumerate()
            {
                let frame = los_frame(&q, &dps).unwrap();
                let c1 = project_position_cov(&c_p, &frame).unwrap();
                let c2 = project_position_cov(&c_p, &frame).unwrap();
                let c_or = orientation_cov_to_los_plane(&cg, &q, &dps, &frame).unwrap();
                let c_tot = combined_los_cov(&c1, &c2, &c_or, frame.d);
                achieved[i] = 1.0 - p_beam_cover(&w, &c_tot, frame.d).unwrap();
            }
            let budget = p_mis_total(achieved[0], achieved[1]).max(1e-9);

            let prob = OptProblem {
                p1: Vec3::zeros(),
                p2,
                q1,
                q2,
                c_p1: c_p,
                c_p2: c_p,
                c_gamma1: c_g,
                c_gamma2: c_g,
                p_out_max: budget.min(0.49),
                link: link.clone(),
                omega_min: params.omega_min,
                omega_max: params.omega_max,
            };
            let sol = optimize(&prob).unwrap();
            assert!(
                sol.ptx_dbm <= dec1.ptx_dbm + 0.1,
                "optimizer {} dBm vs heuristic {} dBm (budget {budget:.2e})",
                sol.ptx_dbm,
                dec1.ptx_dbm
            );
        }
    }
}
