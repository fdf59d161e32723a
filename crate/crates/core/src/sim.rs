//! Two-vehicle experiment engine: estimate generation (sampled errors or a
//! full EKF per vehicle), control-link latency, mode-dependent beam/power
//! decisions, exact truth evaluation of SNR and outage, and metric
//! aggregation.
//!
//! Runs are deterministic in the seed: identical configuration, trajectory
//! and seed reproduce byte-identical outputs.

use std::fs::File;
use std::io::{BufWriter, Write as IoWrite};
use std::path::Path;

use nalgebra::Matrix3;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bpc::{
    bpc_step, fixed_power_control, BpcError, BpcParams, PeerEstimate,
};
use crate::channel::{
    max_gain, max_gain_db, pattern_gain, snr_db, Beamwidth, ChannelError, LinkConfig,
    PointingError,
};
use crate::fusion::{
    euler_cov_from_quat_cov, quat_cov_from_euler_cov, Ekf, FilterState, FusionError,
    GpsObservation, NoiseConfig, StateCov,
};
use crate::geometry::{los_angles, wrap_angle, EulerAngles, GeometryError, LosAngles, Vec3};
use crate::optimizer::{optimize, OptProblem, OptimizerError};
use crate::trajectory::{pair_vehicles, PairedSample, TrajectoryError, TrajectorySample, VehicleTruth};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Bpc(#[from] BpcError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<SimError>,
    },
}

fn at_step<E: Into<SimError>>(step: usize) -> impl FnOnce(E) -> SimError {
    move |e| SimError::Step {
        step,
        source: Box::new(e.into()),
    }
}

/// Beam/power decision policy per step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Covariance-driven kσ beamwidths with worst-case power.
    Heuristic,
    /// Constant beamwidth, distance-adapted power.
    Fixed,
    /// Outage-constrained benchmark solved on the true geometry.
    Optimizer,
}

/// How per-vehicle estimates are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Draw estimate errors from the scenario covariances around truth.
    Sampled,
    /// Run a full EKF per vehicle on noisy synthetic sensors.
    FullEkf,
}

/// Experiment configuration. Defaults reproduce the 28 GHz two-vehicle setup:
/// 3 s gap, 10 ms latency, 100 Hz sensors, current-mobility (S1) accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub delta_t_gap_s: f64,
    pub latency_tau_s: f64,
    pub f_data_hz: f64,
    /// GPS update rate of the full-EKF mode.
    pub gps_rate_hz: f64,
    /// 3-D rms position error of the exchanged estimates, m.
    pub sigma_p_m: f64,
    /// 3-D rms orientation error, radians.
    pub sigma_gamma_rad: f64,
    pub k: f64,
    pub omega_min_rad: f64,
    pub omega_max_rad: f64,
    /// Beam of the fixed baseline (circular), radians.
    pub fixed_beam_rad: f64,
    /// Outage budget of the optimizer benchmark.
    pub p_out_max: f64,
    pub link: LinkConfig<f64>,
    pub noise: NoiseConfig<f64>,
    pub seed: u64,
    pub mode: Mode,
    pub fusion_mode: FusionMode,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            delta_t_gap_s: 3.0,
            latency_tau_s: 0.01,
            f_data_hz: 100.0,
            gps_rate_hz: 10.0,
            sigma_p_m: 1.5,
            sigma_gamma_rad: 1.5f64.to_radians(),
            k: 3.0,
            omega_min_rad: 1.8f64.to_radians(),
            omega_max_rad: 120.0f64.to_radians(),
            fixed_beam_rad: 13.0f64.to_radians(),
            p_out_max: 6e-4,
            link: LinkConfig::default(),
            noise: NoiseConfig::default(),
            seed: 1,
            mode: Mode::Heuristic,
            fusion_mode: FusionMode::Sampled,
        }
    }
}

impl SimConfig {
    /// Current-mobility accuracy: σ_p = 1.5 m, σ_γ = 1.5°, 13° fixed beam.
    pub fn s1() -> Self {
        Self::default()
    }

    /// Next-generation accuracy: σ_p = 0.15 m, σ_γ = 0.15°, 2.5° fixed beam.
    pub fn s2() -> Self {
        Self {
            sigma_p_m: 0.15,
            sigma_gamma_rad: 0.15f64.to_radians(),
            fixed_beam_rad: 2.5f64.to_radians(),
            ..Self::default()
        }
    }

    pub fn bpc_params(&self) -> BpcParams<f64> {
        BpcParams {
            k: self.k,
            omega_min: self.omega_min_rad,
            omega_max: self.omega_max_rad,
            codebook: None,
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        if !(self.delta_t_gap_s > 0.0) {
            return Err(SimError::InvalidConfig("delta_t_gap must be > 0".into()));
        }
        if !(self.f_data_hz > 0.0) || self.latency_tau_s < 0.0 {
            return Err(SimError::InvalidConfig(
                "f_data must be > 0 and latency >= 0".into(),
            ));
        }
        if !(self.sigma_p_m >= 0.0 && self.sigma_gamma_rad >= 0.0) {
            return Err(SimError::InvalidConfig("noise sigmas must be >= 0".into()));
        }
        Ok(())
    }

    fn delay_steps(&self) -> usize {
        (self.latency_tau_s * self.f_data_hz).round() as usize
    }

    fn position_cov(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal_element(self.sigma_p_m * self.sigma_p_m / 3.0)
    }

    fn euler_cov(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal_element(self.sigma_gamma_rad * self.sigma_gamma_rad / 3.0)
    }
}

/// One evaluated simulation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeStepRecord {
    pub t: f64,
    /// True inter-vehicle distance, m.
    pub d: f64,
    pub omega1_az: f64,
    pub omega1_el: f64,
    pub omega2_az: f64,
    pub omega2_el: f64,
    pub ptx_dbm: f64,
    pub snr_db: f64,
    pub outage: bool,
    pub err_az1: f64,
    pub err_el1: f64,
    pub err_az2: f64,
    pub err_el2: f64,
}

/// Full run output: per-step records plus the covariance traces feeding the
/// σ_p/σ_γ metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub records: Vec<TimeStepRecord>,
    pub mean_cp_trace: f64,
    pub mean_cgamma_trace: f64,
    pub snr_min_db: f64,
}

/// Aggregate metrics of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub steps: usize,
    pub sigma_p_m: f64,
    pub sigma_gamma_rad: f64,
    pub outage_rate: f64,
    pub ptx_mean_dbm: f64,
    pub ptx_median_dbm: f64,
    pub beam_min_rad: f64,
    pub beam_max_rad: f64,
    pub beam_mean_rad: f64,
    pub snr_mean_db: f64,
}

// ---------------------------------------------------------------------------
// Estimate generation
// ---------------------------------------------------------------------------

fn normal(rng: &mut ChaCha12Rng, sigma: f64) -> f64 {
    let x: f64 = StandardNormal.sample(rng);
    x * sigma
}

fn sampled_estimate(
    rng: &mut ChaCha12Rng,
    truth: &VehicleTruth,
    cfg: &SimConfig,
    t: f64,
    previous: Option<&PeerEstimate<f64>>,
) -> Result<PeerEstimate<f64>, SimError> {
    if !truth.gps_valid {
        // information outage: the vehicle keeps broadcasting its last
        // estimate snapshot
        if let Some(prev) = previous {
            return Ok(*prev);
        }
    }
    let sp = (cfg.sigma_p_m * cfg.sigma_p_m / 3.0).sqrt();
    let sg = (cfg.sigma_gamma_rad * cfg.sigma_gamma_rad / 3.0).sqrt();
    let p_hat = truth.p + Vec3::new(normal(rng, sp), normal(rng, sp), normal(rng, sp));
    let e_true = EulerAngles::from_quaternion(&truth.q);
    let e_hat = EulerAngles::new(
        e_true.roll + normal(rng, sg),
        e_true.pitch + normal(rng, sg),
        e_true.yaw + normal(rng, sg),
    );
    let q_hat = e_hat.to_quaternion();
    let c_q = quat_cov_from_euler_cov(&q_hat, &cfg.euler_cov())?;
    Ok(PeerEstimate::new(p_hat, cfg.position_cov(), q_hat, c_q, t))
}

struct EkfTrack {
    filter: Ekf<f64>,
    next_gps_t: f64,
}

impl EkfTrack {
    fn init(rng: &mut ChaCha12Rng, truth: &VehicleTruth, cfg: &SimConfig, t: f64) -> Self {
        let noise = &cfg.noise;
        let p0_sig = noise.sigma_gnss;
        let v0_sig = noise.sigma_v.max(0.2);
        let mut cov = StateCov::zeros();
        for i in 0..3 {
            cov[(i, i)] = p0_sig * p0_sig;
            cov[(i + 3, i + 3)] = v0_sig * v0_sig;
        }
        let e_true = EulerAngles::from_quaternion(&truth.q);
        let g_sig = noise.c_gamma[(0, 0)].sqrt();
        let e0 = EulerAngles::new(
            e_true.roll + normal(rng, g_sig),
            e_true.pitch + normal(rng, g_sig),
            e_true.yaw + normal(rng, g_sig),
        );
        let q0 = e0.to_quaternion();
        if let Ok(cq) = quat_cov_from_euler_cov(&q0, &noise.c_gamma) {
            cov.fixed_view_mut::<4, 4>(6, 6).copy_from(&cq);
        }
        let state = FilterState::new(
            truth.p + Vec3::new(normal(rng, p0_sig), normal(rng, p0_sig), normal(rng, p0_sig)),
            truth.v + Vec3::new(normal(rng, v0_sig), normal(rng, v0_sig), normal(rng, v0_sig)),
            q0,
            cov,
        );
        Self {
            filter: Ekf::new(state, noise.clone()),
            next_gps_t: t,
        }
    }

    fn step(
        &mut self,
        rng: &mut ChaCha12Rng,
        truth: &VehicleTruth,
        cfg: &SimConfig,
        t: f64,
        dt: f64,
    ) -> Result<PeerEstimate<f64>, SimError> {
        let noise = &self.filter.noise.clone();
        let imu = crate::fusion::ImuSample::new(
            truth.imu.accel
                + noise.accel_bias
                + Vec3::new(
                    normal(rng, noise.sigma_a),
                    normal(rng, noise.sigma_a),
                    normal(rng, noise.sigma_a),
                ),
            truth.imu.gyro
                + noise.gyro_bias
                + Vec3::new(
                    normal(rng, noise.sigma_omega),
                    normal(rng, noise.sigma_omega),
                    normal(rng, noise.sigma_omega),
                ),
            t,
        );
        self.filter.predict(&imu, dt)?;

        if t + 1e-9 >= self.next_gps_t {
            self.next_gps_t += 1.0 / cfg.gps_rate_hz;
            // GPS gaps become predict-only stretches, but the draws still
            // advance so latency sweeps stay sample-aligned
            let g_sig = noise.c_gamma[(0, 0)].sqrt();
            let pos = truth.p
                + Vec3::new(
                    normal(rng, noise.sigma_gnss),
                    normal(rng, noise.sigma_gnss),
                    normal(rng, noise.sigma_gnss),
                );
            let speed = truth.v.norm() + normal(rng, noise.sigma_v);
            let e_true = EulerAngles::from_quaternion(&truth.q);
            let e_obs = EulerAngles::new(
                e_true.roll + normal(rng, g_sig),
                e_true.pitch + normal(rng, g_sig),
                e_true.yaw + normal(rng, g_sig),
            );
            if truth.gps_valid {
                let obs = GpsObservation {
                    pos: Some(pos),
                    speed: Some(speed),
                    quat: Some(e_obs.to_quaternion()),
                    t,
                };
                self.filter.update(&obs)?;
            }
        }
        let s = &self.filter.state;
        Ok(PeerEstimate::new(
            s.p,
            s.position_cov(),
            s.q,
            s.quat_cov(),
            t,
        ))
    }
}

// ---------------------------------------------------------------------------
// Per-step decision
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
struct StepDecision {
    w1: Beamwidth<f64>,
    w2: Beamwidth<f64>,
    ptx_dbm: f64,
    pointing1: LosAngles<f64>,
    pointing2: LosAngles<f64>,
}

fn estimated_pointing(
    own: &PeerEstimate<f64>,
    peer: &PeerEstimate<f64>,
) -> Result<LosAngles<f64>, SimError> {
    let dp = own.q.conjugate().rotate(&(peer.p - own.p))?;
    Ok(los_angles(&dp)?)
}

fn decide(
    cfg: &SimConfig,
    params: &BpcParams<f64>,
    pair: &PairedSample,
    est1: &PeerEstimate<f64>,
    est2: &PeerEstimate<f64>,
    view1_of_2: &PeerEstimate<f64>,
    view2_of_1: &PeerEstimate<f64>,
    optimizer_cache: Option<&StepDecision>,
) -> Result<StepDecision, SimError> {
    match cfg.mode {
        Mode::Heuristic => {
            let d1 = bpc_step(est1, view1_of_2, &cfg.link, params)?;
            let d2 = bpc_step(est2, view2_of_1, &cfg.link, params)?;
            Ok(StepDecision {
                w1: d1.beamwidth,
                w2: d2.beamwidth,
                ptx_dbm: d1.ptx_dbm,
                pointing1: d1.pointing,
                pointing2: d2.pointing,
            })
        }
        Mode::Fixed => {
            let w = Beamwidth::circular(cfg.fixed_beam_rad)?;
            let pointing1 = estimated_pointing(est1, view1_of_2)?;
            let pointing2 = estimated_pointing(est2, view2_of_1)?;
            let d_hat = (view1_of_2.p - est1.p).norm();
            let power = fixed_power_control(&w, d_hat, &cfg.link);
            Ok(StepDecision {
                w1: w,
                w2: w,
                ptx_dbm: power.ptx_dbm,
                pointing1,
                pointing2,
            })
        }
        Mode::Optimizer => {
            let (w1, w2, ptx) = if let Some(cached) = optimizer_cache {
                (cached.w1, cached.w2, cached.ptx_dbm)
            } else {
                let prob = OptProblem {
                    p1: pair.lead.p,
                    p2: pair.follow.p,
                    q1: pair.lead.q,
                    q2: pair.follow.q,
                    c_p1: est1.c_p,
                    c_p2: est2.c_p,
                    c_gamma1: euler_cov_from_quat_cov(&est1.q, &est1.c_q)?,
                    c_gamma2: euler_cov_from_quat_cov(&est2.q, &est2.c_q)?,
                    p_out_max: cfg.p_out_max,
                    link: cfg.link.clone(),
                    omega_min: cfg.omega_min_rad,
                    omega_max: cfg.omega_max_rad,
                };
                let sol = optimize(&prob)?;
                (sol.w1, sol.w2, sol.ptx_dbm)
            };
            let pointing1 = estimated_pointing(est1, view1_of_2)?;
            let pointing2 = estimated_pointing(est2, view2_of_1)?;
            Ok(StepDecision {
                w1,
                w2,
                ptx_dbm: ptx,
                pointing1,
                pointing2,
            })
        }
    }
}

struct TruthEvaluation {
    record: TimeStepRecord,
    misaligned_tx: bool,
    misaligned_rx: bool,
}

fn evaluate_truth(
    cfg: &SimConfig,
    pair: &PairedSample,
    decision: &StepDecision,
) -> Result<TruthEvaluation, SimError> {
    let true_a1 = los_angles(
        &pair
            .lead
            .q
            .conjugate()
            .rotate(&(pair.follow.p - pair.lead.p))?,
    )?;
    let true_a2 = los_angles(
        &pair
            .follow
            .q
            .conjugate()
            .rotate(&(pair.lead.p - pair.follow.p))?,
    )?;
    let d = (pair.follow.p - pair.lead.p).norm();

    let err1 = PointingError::new(
        wrap_angle(decision.pointing1.azimuth - true_a1.azimuth),
        decision.pointing1.elevation - true_a1.elevation,
    );
    let err2 = PointingError::new(
        wrap_angle(decision.pointing2.azimuth - true_a2.azimuth),
        decision.pointing2.elevation - true_a2.elevation,
    );
    let g1 = pattern_gain(&err1, &decision.w1) * max_gain(&decision.w1, &cfg.link);
    let g2 = pattern_gain(&err2, &decision.w2) * max_gain(&decision.w2, &cfg.link);
    let snr = snr_db(decision.ptx_dbm, g1, g2, d, &cfg.link);

    // EIRP invariant holds on every record
    if decision.ptx_dbm + max_gain_db(&decision.w1, &cfg.link) > cfg.link.eirp_max_dbm + 1e-9 {
        return Err(SimError::InvalidConfig(format!(
            "EIRP limit violated at t={}",
            pair.t
        )));
    }

    let inside = |e: &PointingError<f64>, w: &Beamwidth<f64>| -> bool {
        let qx = e.d_az.tan() / (w.az / 2.0).tan();
        let qz = e.d_el.tan() / (w.el / 2.0).tan();
        qx * qx + qz * qz <= 1.0
    };

    Ok(TruthEvaluation {
        misaligned_tx: !inside(&err1, &decision.w1),
        misaligned_rx: !inside(&err2, &decision.w2),
        record: TimeStepRecord {
            t: pair.t,
            d,
            omega1_az: decision.w1.az,
            omega1_el: decision.w1.el,
            omega2_az: decision.w2.az,
            omega2_el: decision.w2.el,
            ptx_dbm: decision.ptx_dbm,
            snr_db: snr,
            outage: snr < cfg.link.snr_min_db,
            err_az1: err1.d_az,
            err_el1: err1.d_el,
            err_az2: err2.d_az,
            err_el2: err2.d_el,
        },
    })
}

// ---------------------------------------------------------------------------
// Run
// ---------------------------------------------------------------------------

struct Engine<'a> {
    cfg: &'a SimConfig,
    params: BpcParams<f64>,
    pairs: Vec<PairedSample>,
    delay: usize,
    dt: f64,
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a SimConfig, samples: &[TrajectorySample]) -> Result<Self, SimError> {
        cfg.validate()?;
        let pairs = pair_vehicles(samples, cfg.delta_t_gap_s)?;
        let delay = cfg.delay_steps();
        if pairs.len() <= delay + 1 {
            return Err(SimError::InvalidConfig(
                "trajectory too short for the configured latency".into(),
            ));
        }
        Ok(Self {
            cfg,
            params: cfg.bpc_params(),
            pairs,
            delay,
            dt: 1.0 / cfg.f_data_hz,
        })
    }

    /// One full pass over the trajectory with fresh estimate draws; invokes
    /// `emit` for every evaluated step.
    fn pass(
        &self,
        rng: &mut ChaCha12Rng,
        optimizer_cache: &mut Vec<Option<StepDecision>>,
        mut emit: impl FnMut(usize, &TruthEvaluation, &PeerEstimate<f64>, &PeerEstimate<f64>),
    ) -> Result<(), SimError> {
        let cfg = self.cfg;
        let mut est1: Vec<PeerEstimate<f64>> = Vec::with_capacity(self.pairs.len());
        let mut est2: Vec<PeerEstimate<f64>> = Vec::with_capacity(self.pairs.len());
        let mut ekf1: Option<EkfTrack> = None;
        let mut ekf2: Option<EkfTrack> = None;
        if matches!(cfg.fusion_mode, FusionMode::FullEkf) {
            ekf1 = Some(EkfTrack::init(rng, &self.pairs[0].lead, cfg, self.pairs[0].t));
            ekf2 = Some(EkfTrack::init(
                rng,
                &self.pairs[0].follow,
                cfg,
                self.pairs[0].t,
            ));
        }
        if optimizer_cache.is_empty() {
            optimizer_cache.resize(self.pairs.len(), None);
        }

        for (i, pair) in self.pairs.iter().enumerate() {
            match cfg.fusion_mode {
                FusionMode::Sampled => {
                    let e1 = sampled_estimate(rng, &pair.lead, cfg, pair.t, est1.last())
                        .map_err(at_step(i))?;
                    let e2 = sampled_estimate(rng, &pair.follow, cfg, pair.t, est2.last())
                        .map_err(at_step(i))?;
                    est1.push(e1);
                    est2.push(e2);
                }
                FusionMode::FullEkf => {
                    let e1 = ekf1
                        .as_mut()
                        .unwrap()
                        .step(rng, &pair.lead, cfg, pair.t, self.dt)
                        .map_err(at_step(i))?;
                    let e2 = ekf2
                        .as_mut()
                        .unwrap()
                        .step(rng, &pair.follow, cfg, pair.t, self.dt)
                        .map_err(at_step(i))?;
                    est1.push(e1);
                    est2.push(e2);
                }
            }

            if i < self.delay {
                continue;
            }
            let stale = i - self.delay;
            let decision = decide(
                cfg,
                &self.params,
                pair,
                &est1[i],
                &est2[i],
                &est2[stale],
                &est1[stale],
                optimizer_cache[i].as_ref(),
            )
            .map_err(at_step(i))?;
            if matches!(cfg.mode, Mode::Optimizer) && optimizer_cache[i].is_none() {
                optimizer_cache[i] = Some(decision);
            }
            let eval = evaluate_truth(cfg, pair, &decision).map_err(at_step(i))?;
            emit(i, &eval, &est1[i], &est2[i]);
        }
        Ok(())
    }
}

/// Runs the experiment over a prepared trajectory.
pub fn run(cfg: &SimConfig, samples: &[TrajectorySample]) -> Result<RunResult, SimError> {
    let engine = Engine::new(cfg, samples)?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut cache = Vec::new();

    let mut records = Vec::with_capacity(engine.pairs.len());
    let mut cp_trace = 0.0;
    let mut cgamma_trace = 0.0;
    let mut trace_count = 0usize;
    engine.pass(&mut rng, &mut cache, |_, eval, e1, e2| {
        records.push(eval.record);
        cp_trace += 0.5 * (e1.c_p.trace() + e2.c_p.trace());
        let cg = |e: &PeerEstimate<f64>| {
            euler_cov_from_quat_cov(&e.q, &e.c_q)
                .map(|c| c.trace())
                .unwrap_or(f64::NAN)
        };
        cgamma_trace += 0.5 * (cg(e1) + cg(e2));
        trace_count += 1;
    })?;

    let n = trace_count.max(1) as f64;
    Ok(RunResult {
        records,
        mean_cp_trace: cp_trace / n,
        mean_cgamma_trace: cgamma_trace / n,
        snr_min_db: cfg.link.snr_min_db,
    })
}

/// Aggregates a run into headline metrics.
pub fn metrics(result: &RunResult) -> Summary {
    let n = result.records.len();
    let mut ptx: Vec<f64> = result.records.iter().map(|r| r.ptx_dbm).collect();
    ptx.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let ptx_mean = ptx.iter().sum::<f64>() / n.max(1) as f64;
    let ptx_median = if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        ptx[n / 2]
    } else {
        0.5 * (ptx[n / 2 - 1] + ptx[n / 2])
    };

    let mut beam_min = f64::INFINITY;
    let mut beam_max = 0.0f64;
    let mut beam_sum = 0.0;
    let mut outages = 0usize;
    let mut snr_sum = 0.0;
    for r in &result.records {
        for w in [r.omega1_az, r.omega1_el, r.omega2_az, r.omega2_el] {
            beam_min = beam_min.min(w);
            beam_max = beam_max.max(w);
            beam_sum += w;
        }
        if r.outage {
            outages += 1;
        }
        snr_sum += r.snr_db;
    }

    Summary {
        steps: n,
        sigma_p_m: result.mean_cp_trace.sqrt(),
        sigma_gamma_rad: result.mean_cgamma_trace.sqrt(),
        outage_rate: outages as f64 / n.max(1) as f64,
        ptx_mean_dbm: ptx_mean,
        ptx_median_dbm: ptx_median,
        beam_min_rad: beam_min,
        beam_max_rad: beam_max,
        beam_mean_rad: beam_sum / (4 * n.max(1)) as f64,
        snr_mean_db: snr_sum / n.max(1) as f64,
    }
}

/// Empirical SNR CDF on a 0.1 dB grid: `(snr_db, P(SNR ≤ snr_db))`.
pub fn snr_cdf(result: &RunResult) -> Vec<(f64, f64)> {
    if result.records.is_empty() {
        return Vec::new();
    }
    let mut snrs: Vec<f64> = result.records.iter().map(|r| r.snr_db).collect();
    snrs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = (snrs[0] * 10.0).floor() as i64;
    let hi = (snrs[snrs.len() - 1] * 10.0).ceil() as i64;
    let n = snrs.len() as f64;
    let mut grid = Vec::with_capacity((hi - lo + 1) as usize);
    let mut idx = 0usize;
    for g in lo..=hi {
        let x = g as f64 / 10.0;
        while idx < snrs.len() && snrs[idx] <= x + 1e-12 {
            idx += 1;
        }
        grid.push((x, idx as f64 / n));
    }
    grid
}

/// Monte Carlo event estimate over repeated error draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutageEstimate {
    /// Empirical P(SNR < SNR_min).
    pub outage: f64,
    pub outage_se: f64,
    /// Empirical probability that the true peer leaves either beam footprint
    /// (union of the two sides, which share position errors and are
    /// therefore positively correlated).
    pub misalignment: f64,
    pub misalignment_se: f64,
    /// Per-side footprint-exit rates.
    pub misalignment_tx: f64,
    pub misalignment_rx: f64,
    pub trials: usize,
}

impl OutageEstimate {
    /// Binomial standard error of an arbitrary per-trial rate from this
    /// estimate.
    pub fn se_of(&self, rate: f64) -> f64 {
        (rate * (1.0 - rate) / self.trials as f64).sqrt()
    }
}

/// Estimates outage (SNR below threshold) and misalignment (footprint exit)
/// probabilities by whole-trajectory passes with independent error draws
/// until at least `n_trials` step-trials accumulate.
pub fn estimate_outage(
    cfg: &SimConfig,
    samples: &[TrajectorySample],
    n_trials: usize,
) -> Result<OutageEstimate, SimError> {
    let engine = Engine::new(cfg, samples)?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut cache = Vec::new();
    let mut trials = 0usize;
    let mut outages = 0usize;
    let mut misses = 0usize;
    let mut misses_tx = 0usize;
    let mut misses_rx = 0usize;
    while trials < n_trials {
        engine.pass(&mut rng, &mut cache, |_, eval, _, _| {
            trials += 1;
            if eval.record.outage {
                outages += 1;
            }
            if eval.misaligned_tx {
                misses_tx += 1;
            }
            if eval.misaligned_rx {
                misses_rx += 1;
            }
            if eval.misaligned_tx || eval.misaligned_rx {
                misses += 1;
            }
        })?;
    }
    let n = trials as f64;
    let p_out = outages as f64 / n;
    let p_mis = misses as f64 / n;
    Ok(OutageEstimate {
        outage: p_out,
        outage_se: (p_out * (1.0 - p_out) / n).sqrt(),
        misalignment: p_mis,
        misalignment_se: (p_mis * (1.0 - p_mis) / n).sqrt(),
        misalignment_tx: misses_tx as f64 / n,
        misalignment_rx: misses_rx as f64 / n,
        trials,
    })
}

// ---------------------------------------------------------------------------
// Emission
// ---------------------------------------------------------------------------

/// Results CSV header; angles are emitted in degrees.
pub const RESULTS_HEADER: &str =
    "t,d,omega1_az,omega1_el,omega2_az,omega2_el,ptx_dbm,snr_db,outage,err_az1,err_el1,err_az2,err_el2";

pub fn write_results_csv(path: &Path, result: &RunResult) -> Result<(), SimError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{RESULTS_HEADER}")?;
    for r in &result.records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.d,
            r.omega1_az.to_degrees(),
            r.omega1_el.to_degrees(),
            r.omega2_az.to_degrees(),
            r.omega2_el.to_degrees(),
            r.ptx_dbm,
            r.snr_db,
            u8::from(r.outage),
            r.err_az1.to_degrees(),
            r.err_el1.to_degrees(),
            r.err_az2.to_degrees(),
            r.err_el2.to_degrees(),
        )?;
    }
    Ok(())
}

/// Flat key-value summary block.
pub fn write_summary(path: &Path, summary: &Summary) -> Result<(), SimError> {
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "{}", summary_text(summary))?;
    Ok(())
}

pub fn summary_text(s: &Summary) -> String {
    format!(
        "steps={}\nsigma_p_m={}\nsigma_gamma_deg={}\noutage_rate={}\nptx_mean_dbm={}\nptx_median_dbm={}\nbeam_min_deg={}\nbeam_max_deg={}\nbeam_mean_deg={}\nsnr_mean_db={}\n",
        s.steps,
        s.sigma_p_m,
        s.sigma_gamma_rad.to_degrees(),
        s.outage_rate,
        s.ptx_mean_dbm,
        s.ptx_median_dbm,
        s.beam_min_rad.to_degrees(),
        s.beam_max_rad.to_degrees(),
        s.beam_mean_rad.to_degrees(),
        s.snr_mean_db,
    )
}

pub fn write_cdf_csv(path: &Path, cdf: &[(f64, f64)]) -> Result<(), SimError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "snr_db,cdf")?;
    for (snr, p) in cdf {
        writeln!(out, "{snr:.1},{p}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{curvy_default, generate_trajectory};
    use approx::assert_relative_eq;

    fn quick_cfg() -> SimConfig {
        SimConfig {
            seed: 42,
            ..SimConfig::s1()
        }
    }

    fn short_trajectory() -> Vec<TrajectorySample> {
        generate_trajectory(&curvy_default(100.0)).unwrap()
    }

    #[test]
    fn zero_noise_zero_latency_has_no_outage() {
        let cfg = SimConfig {
            sigma_p_m: 0.0,
            sigma_gamma_rad: 0.0,
            latency_tau_s: 0.0,
            ..quick_cfg()
        };
        let samples = short_trajectory();
        let result = run(&cfg, &samples).unwrap();
        let summary = metrics(&result);
        assert_eq!(summary.outage_rate, 0.0);
        // beams pinned at the lower clamp
        assert_relative_eq!(summary.beam_min_rad, cfg.omega_min_rad, epsilon = 1e-12);
        assert_relative_eq!(summary.beam_max_rad, cfg.omega_min_rad, epsilon = 1e-12);
    }

    #[test]
    fn deterministic_repeat_is_bit_identical() {
        let cfg = quick_cfg();
        let samples = short_trajectory();
        let a = run(&cfg, &samples).unwrap();
        let b = run(&cfg, &samples).unwrap();
        assert_eq!(a, b);

        let dir = std::env::temp_dir().join("bpc_sim_det");
        std::fs::create_dir_all(&dir).unwrap();
        let fa = dir.join("a.csv");
        let fb = dir.join("b.csv");
        write_results_csv(&fa, &a).unwrap();
        write_results_csv(&fb, &b).unwrap();
        assert_eq!(std::fs::read(&fa).unwrap(), std::fs::read(&fb).unwrap());
    }

    #[test]
    fn sampled_mode_reports_scenario_sigmas() {
        let cfg = quick_cfg();
        let samples = short_trajectory();
        let summary = metrics(&run(&cfg, &samples).unwrap());
        assert_relative_eq!(summary.sigma_p_m, cfg.sigma_p_m, max_relative = 1e-6);
        assert_relative_eq!(
            summary.sigma_gamma_rad,
            cfg.sigma_gamma_rad,
            max_relative = 1e-3
        );
    }

    #[test]
    fn truth_evaluation_is_reproducible_from_records() {
        let cfg = quick_cfg();
        let samples = short_trajectory();
        let result = run(&cfg, &samples).unwrap();
        for r in result.records.iter().step_by(97) {
            let w1 = Beamwidth::new(r.omega1_az, r.omega1_el).unwrap();
            let w2 = Beamwidth::new(r.omega2_az, r.omega2_el).unwrap();
            let g1 = pattern_gain(&PointingError::new(r.err_az1, r.err_el1), &w1)
                * max_gain(&w1, &cfg.link);
            let g2 = pattern_gain(&PointingError::new(r.err_az2, r.err_el2), &w2)
                * max_gain(&w2, &cfg.link);
            let snr = snr_db(r.ptx_dbm, g1, g2, r.d, &cfg.link);
            assert!(
                (snr - r.snr_db).abs() < 1e-9,
                "recomputed {snr} vs logged {}",
                r.snr_db
            );
        }
    }

    #[test]
    fn cdf_is_monotone_and_ends_at_one() {
        let cfg = quick_cfg();
        let samples = short_trajectory();
        let result = run(&cfg, &samples).unwrap();
        let cdf = snr_cdf(&result);
        assert!(!cdf.is_empty());
        let mut last = 0.0;
        for &(_, p) in &cdf {
            assert!(p >= last);
            last = p;
        }
        assert_relative_eq!(cdf.last().unwrap().1, 1.0);
    }

    #[test]
    fn s1_beam_band_is_qualitatively_right() {
        let cfg = quick_cfg();
        let samples = short_trajectory();
        let summary = metrics(&run(&cfg, &samples).unwrap());
        let min_deg = summary.beam_min_rad.to_degrees();
        let max_deg = summary.beam_max_rad.to_degrees();
        assert!((1.8..=15.0).contains(&min_deg), "min beam {min_deg}");
        assert!((30.0..=120.0).contains(&max_deg), "max beam {max_deg}");
    }

    #[test]
    fn fixed_mode_costs_more_power_than_heuristic() {
        let samples = short_trajectory();
        let heuristic = metrics(&run(&quick_cfg(), &samples).unwrap());
        let fixed_cfg = SimConfig {
            mode: Mode::Fixed,
            fixed_beam_rad: heuristic.beam_mean_rad,
            ..quick_cfg()
        };
        let fixed = metrics(&run(&fixed_cfg, &samples).unwrap());
        assert!(
            fixed.ptx_mean_dbm > heuristic.ptx_mean_dbm,
            "fixed {} vs heuristic {}",
            fixed.ptx_mean_dbm,
            heuristic.ptx_mean_dbm
        );
    }

    #[test]
    fn estimate_outage_zero_errors_is_zero() {
        let cfg = SimConfig {
            sigma_p_m: 0.0,
            sigma_gamma_rad: 0.0,
            latency_tau_s: 0.0,
            ..quick_cfg()
        };
        let samples = short_trajectory();
        let est = estimate_outage(&cfg, &samples, 10_000).unwrap();
        assert_eq!(est.outage, 0.0);
        assert_eq!(est.misalignment, 0.0);
        assert!(est.trials >= 10_000);
    }

    #[test]
    fn full_ekf_mode_runs_and_tracks() {
        let cfg = SimConfig {
            fusion_mode: FusionMode::FullEkf,
            ..quick_cfg()
        };
        let samples = short_trajectory();
        let result = run(&cfg, &samples).unwrap();
        let summary = metrics(&result);
        // the filter-reported position error should be bounded by the GPS noise
        assert!(summary.sigma_p_m < 2.0 * cfg.noise.sigma_gnss);
        assert!(summary.steps > 1000);
    }

    #[test]
    fn gps_gap_reuses_estimates_in_sampled_mode() {
        let mut samples = short_trajectory();
        let gap = 2000..2100;
        for i in gap.clone() {
            samples[i].gps_valid = false;
        }
        let cfg = quick_cfg();
        let result = run(&cfg, &samples).unwrap();
        assert!(result.records.len() > 3000);
    }

    #[test]
    fn latency_longer_than_trajectory_is_rejected() {
        let cfg = SimConfig {
            latency_tau_s: 1e6,
            ..quick_cfg()
        };
        let samples = short_trajectory();
        assert!(matches!(
            run(&cfg, &samples),
            Err(SimError::InvalidConfig(_))
        ));
    }
}
