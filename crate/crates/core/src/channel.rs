//! Beam-based LOS link budget: Gaussian beam pattern, beamwidth-dependent
//! gain, free-space path loss, SNR and the EIRP-limited worst-case transmit
//! power.
//!
//! All link-budget arithmetic is carried out in dB/dBm; pattern and maximum
//! gains are exchanged as linear values.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Scalar;

/// Speed of light, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Distance below which the free-space model is out of its validity range;
/// smaller distances are clamped to this value.
pub const NEAR_FIELD_LIMIT_M: f64 = 1.0;

/// Worst-case two-sided mispointing allowance: both ends offset by half the
/// beamwidth on both axes, i.e. a 1/16 power factor (−12.04 dB).
pub fn worst_case_pointing_db<T: Scalar>() -> T {
    T::of(10.0) * T::of(16.0).log10()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("beamwidth must be positive and finite, got az={az} el={el} rad")]
    InvalidBeamwidth { az: f64, el: f64 },
    #[error("BER target must lie in (0, 0.5), got {0}")]
    InvalidBerTarget(f64),
}

/// Full −3 dB beamwidths in radians, azimuth and elevation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Beamwidth<T> {
    pub az: T,
    pub el: T,
}

impl<T: Scalar> Beamwidth<T> {
    pub fn new(az: T, el: T) -> Result<Self, ChannelError> {
        if az <= T::zero() || el <= T::zero() || !az.is_finite() || !el.is_finite() {
            return Err(ChannelError::InvalidBeamwidth {
                az: az.as_f64(),
                el: el.as_f64(),
            });
        }
        Ok(Self { az, el })
    }

    /// Circular beam of the given full width.
    pub fn circular(width: T) -> Result<Self, ChannelError> {
        Self::new(width, width)
    }
}

/// Pointing offsets from boresight, radians.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PointingError<T> {
    pub d_az: T,
    pub d_el: T,
}

impl<T: Scalar> PointingError<T> {
    pub fn new(d_az: T, d_el: T) -> Self {
        Self { d_az, d_el }
    }
}

/// Link parameters; defaults follow the 28 GHz mmWave V2V setup used across
/// the crate (400 MHz bandwidth, −81 dBm noise, 43 dBm EIRP cap).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig<T> {
    pub f0_hz: T,
    pub bandwidth_hz: T,
    pub noise_power_dbm: T,
    pub eirp_max_dbm: T,
    /// Calibration constant of the maximum-gain law `G_max = K / (az · el)`.
    pub gain_constant: T,
    pub snr_min_db: T,
    pub power_margin_db: T,
}

impl<T: Scalar> Default for LinkConfig<T> {
    fn default() -> Self {
        let f0 = T::of(28e9);
        Self {
            f0_hz: f0,
            bandwidth_hz: T::of(400e6),
            noise_power_dbm: T::of(-81.0),
            eirp_max_dbm: T::of(43.0),
            gain_constant: calibrate_gain_constant(f0, T::of(-81.0)).gain_constant,
            // error-free BPSK with a 25% FEC overhead (1.3e-2 channel BER)
            snr_min_db: snr_min_from_ber(T::of(1.3e-2)).expect("valid default BER"),
            power_margin_db: T::zero(),
        }
    }
}

/// Normalized Gaussian beam pattern gain in `(0, 1]`.
///
/// The −3 dB point sits at half the full beamwidth on each axis:
/// `g = exp(−ln2 [(2 δaz/Ωaz)² + (2 δel/Ωel)²])`.
pub fn pattern_gain<T: Scalar>(e: &PointingError<T>, w: &Beamwidth<T>) -> T {
    let two = T::of(2.0);
    let az = two * e.d_az / w.az;
    let el = two * e.d_el / w.el;
    (-T::ln_2() * (az * az + el * el)).exp()
}

/// Maximum (boresight) array gain, linear: `K / (az · el)` with beamwidths in
/// radians.
pub fn max_gain<T: Scalar>(w: &Beamwidth<T>, cfg: &LinkConfig<T>) -> T {
    cfg.gain_constant / (w.az * w.el)
}

/// Maximum gain in dB.
pub fn max_gain_db<T: Scalar>(w: &Beamwidth<T>, cfg: &LinkConfig<T>) -> T {
    T::of(10.0) * max_gain(w, cfg).log10()
}

/// Free-space path loss in dB: `20 log10(4π d f0 / c)`.
///
/// Distances below [`NEAR_FIELD_LIMIT_M`] are clamped to that limit.
pub fn path_loss_db<T: Scalar>(d_m: T, f0_hz: T) -> T {
    let d = d_m.max(T::of(NEAR_FIELD_LIMIT_M));
    T::of(20.0) * (T::two_pi() * T::of(2.0) * d * f0_hz / T::of(SPEED_OF_LIGHT)).log10()
}

/// Link SNR in dB for transmit power `ptx` (dBm) and the two linear total
/// gains (pattern × maximum) at distance `d`.
pub fn snr_db<T: Scalar>(ptx_dbm: T, g1: T, g2: T, d_m: T, cfg: &LinkConfig<T>) -> T {
    let ten = T::of(10.0);
    ptx_dbm + ten * g1.log10() + ten * g2.log10()
        - path_loss_db(d_m, cfg.f0_hz)
        - cfg.noise_power_dbm
}

/// Minimum SNR (dB) for BPSK at the given channel BER target, from
/// `BER = Q(√(2 SNR))`.
///
/// Returns negative infinity as the BER target approaches 0.5 (no SNR
/// requirement).
pub fn snr_min_from_ber<T: Scalar>(ber_target: T) -> Result<T, ChannelError> {
    if !(ber_target > T::zero() && ber_target <= T::of(0.5)) {
        return Err(ChannelError::InvalidBerTarget(ber_target.as_f64()));
    }
    // Q^{-1}(ber) = -probit(ber)
    let z = -probit(ber_target);
    if z <= T::zero() {
        return Ok(T::of(f64::NEG_INFINITY));
    }
    Ok(T::of(10.0) * (z * z / T::of(2.0)).log10())
}

/// Transmit power decision: requested power and whether the EIRP cap clipped
/// it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerDecision<T> {
    pub ptx_dbm: T,
    pub eirp_clipped: bool,
}

/// Minimum transmit power (dBm) that keeps the link at `snr_min` with both
/// ends mispointed by half a beamwidth on both axes, clipped to the EIRP cap.
///
/// `margin_db` is added on top of the requirement before clipping.
pub fn worst_case_tx_power<T: Scalar>(
    w1: &Beamwidth<T>,
    w2: &Beamwidth<T>,
    d_m: T,
    cfg: &LinkConfig<T>,
    margin_db: T,
) -> PowerDecision<T> {
    let g1 = max_gain_db(w1, cfg);
    let g2 = max_gain_db(w2, cfg);
    let ptx = cfg.snr_min_db + path_loss_db(d_m, cfg.f0_hz) + cfg.noise_power_dbm
        - (g1 + g2 - worst_case_pointing_db::<T>())
        + margin_db;
    if ptx + g1 > cfg.eirp_max_dbm {
        PowerDecision {
            ptx_dbm: cfg.eirp_max_dbm - g1,
            eirp_clipped: true,
        }
    } else {
        PowerDecision {
            ptx_dbm: ptx,
            eirp_clipped: false,
        }
    }
}

/// Result of solving the gain constant against the built-in 28 GHz anchor
/// link budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration<T> {
    /// Solved constant of `G_max = K / (az · el)`.
    pub gain_constant: T,
    /// Per-antenna boresight gain at the 20°×20° anchor, dB.
    pub anchor_gain_db: T,
    /// Tx power the calibrated model needs at the second (10°×10°) anchor.
    pub second_anchor_ptx_dbm: T,
    /// Deviation of the second anchor from its −12.2 dBm reference, dB.
    pub second_anchor_error_db: T,
}

/// Anchor values: 20°×20° beams at 100 m need ≈0 dBm for 10 dB SNR, and the
/// same link with 10°×10° beams needs ≈−12.2 dBm.
pub const CAL_ANCHOR_BEAM_DEG: f64 = 20.0;
pub const CAL_ANCHOR_DISTANCE_M: f64 = 100.0;
pub const CAL_ANCHOR_SNR_DB: f64 = 10.0;
pub const CAL_ANCHOR_PTX_DBM: f64 = 0.0;
pub const CAL_SECOND_BEAM_DEG: f64 = 10.0;
pub const CAL_SECOND_PTX_DBM: f64 = -12.2;

/// Solves the gain constant from the anchor budget in closed form and
/// evaluates the model at the second anchor.
pub fn calibrate_gain_constant<T: Scalar>(f0_hz: T, noise_power_dbm: T) -> Calibration<T> {
    let ten = T::of(10.0);
    let anchor_beam = T::of(CAL_ANCHOR_BEAM_DEG.to_radians());
    let d = T::of(CAL_ANCHOR_DISTANCE_M);
    // SNR = ptx + 2 G − PL − Pn  ⇒  G = (SNR − ptx + PL + Pn) / 2
    let gain_db = (T::of(CAL_ANCHOR_SNR_DB) - T::of(CAL_ANCHOR_PTX_DBM)
        + path_loss_db(d, f0_hz)
        + noise_power_dbm)
        / T::of(2.0);
    let gain_constant = ten.powf(gain_db / ten) * anchor_beam * anchor_beam;

    let cfg = LinkConfig {
        f0_hz,
        bandwidth_hz: T::of(400e6),
        noise_power_dbm,
        eirp_max_dbm: T::of(f64::INFINITY),
        gain_constant,
        snr_min_db: T::of(CAL_ANCHOR_SNR_DB),
        power_margin_db: T::zero(),
    };
    let second_beam = Beamwidth::circular(T::of(CAL_SECOND_BEAM_DEG.to_radians())).unwrap();
    let g2 = max_gain_db(&second_beam, &cfg);
    let second_ptx =
        T::of(CAL_ANCHOR_SNR_DB) + path_loss_db(d, f0_hz) + noise_power_dbm - T::of(2.0) * g2;
    Calibration {
        gain_constant,
        anchor_gain_db: gain_db,
        second_anchor_ptx_dbm: second_ptx,
        second_anchor_error_db: second_ptx - T::of(CAL_SECOND_PTX_DBM),
    }
}

/// Inverse standard normal CDF (Acklam's rational approximation,
/// |relative error| < 1.2e-9 over the full range).
pub(crate) fn probit<T: Scalar>(p: T) -> T {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let p_low = T::of(0.02425);
    let one = T::one();

    let tail = |q: T, sign: T| {
        let num = ((((T::of(C[0]) * q + T::of(C[1])) * q + T::of(C[2])) * q + T::of(C[3])) * q
            + T::of(C[4]))
            * q
            + T::of(C[5]);
        let den = (((T::of(D[0]) * q + T::of(D[1])) * q + T::of(D[2])) * q + T::of(D[3])) * q + one;
        sign * num / den
    };

    if p < p_low {
        let q = (-T::of(2.0) * p.ln()).sqrt();
        tail(q, T::one())
    } else if p > one - p_low {
        let q = (-T::of(2.0) * (one - p).ln()).sqrt();
        tail(q, -T::one())
    } else {
        let q = p - T::of(0.5);
        let r = q * q;
        let num = ((((T::of(A[0]) * r + T::of(A[1])) * r + T::of(A[2])) * r + T::of(A[3])) * r
            + T::of(A[4]))
            * r
            + T::of(A[5]);
        let den = ((((T::of(B[0]) * r + T::of(B[1])) * r + T::of(B[2])) * r + T::of(B[3])) * r
            + T::of(B[4]))
            * r
            + one;
        num * q / den
    }
}
