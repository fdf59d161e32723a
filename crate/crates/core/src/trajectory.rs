//! Trajectory sourcing: a segment-based synthetic generator with exact
//! kinematics and IMU synthesis, CSV ingestion/emission, and the two-vehicle
//! pairing by time gap.
//!
//! The generator covers the profile the experiments need — straights with
//! linear speed ramps alternating with constant-speed circular arcs — while
//! the CSV path ingests any externally recorded log with the same schema.

use std::fs::File;
use std::io::{BufWriter, Write as IoWrite};
use std::path::Path;

use thiserror::Error;

use crate::fusion::ImuSample;
use crate::geometry::{EulerAngles, Quaternion, Vec3};

/// Standard gravity used for IMU synthesis, m/s² (ENU z-up, so the vector is
/// negative-z).
pub const GRAVITY: f64 = 9.80665;

/// Yaw-rate ceiling for generated arcs, rad/s (20 deg/s, a sharp turn).
pub const MAX_YAW_RATE: f64 = 0.35;

/// Trajectory CSV column layout.
pub const CSV_HEADER: &str = "t,px,py,pz,vx,vy,vz,roll,pitch,yaw,ax,ay,az,wx,wy,wz,gps_valid";

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("invalid segment {index}: {reason}")]
    InvalidSegment { index: usize, reason: String },
    #[error("trajectory input is empty")]
    EmptyInput,
    #[error("csv line {line}: {reason}")]
    CsvFormat { line: u64, reason: String },
    #[error("timestamps not strictly increasing at line {line}")]
    NonMonotoneTime { line: u64 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("time gap {gap} s invalid for a trajectory of {duration} s")]
    InvalidGap { gap: f64, duration: f64 },
}

/// One planned motion segment. Straights ramp the speed linearly in time to
/// `end_speed_mps` over their length; arcs run at the entry speed along a
/// circle (positive sweep turns left).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Segment {
    Straight { length_m: f64, end_speed_mps: f64 },
    Arc { radius_m: f64, sweep_rad: f64 },
}

/// Plan for the synthetic generator.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySpec {
    pub initial_speed_mps: f64,
    pub segments: Vec<Segment>,
    pub f_data_hz: f64,
}

/// One truth sample: kinematic state plus the noise-free IMU reading
/// consistent with it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub p: Vec3<f64>,
    pub v: Vec3<f64>,
    pub euler: EulerAngles<f64>,
    pub imu: ImuSample<f64>,
    pub gps_valid: bool,
}

impl TrajectorySample {
    pub fn quaternion(&self) -> Quaternion<f64> {
        self.euler.to_quaternion()
    }
}

// precomputed per-segment initial conditions
enum SegmentState {
    Straight {
        accel: f64,
    },
    Arc {
        center: (f64, f64),
        omega: f64,
        radial0: (f64, f64),
    },
}

struct SegmentRun {
    t0: f64,
    duration: f64,
    x0: f64,
    y0: f64,
    heading0: f64,
    speed0: f64,
    state: SegmentState,
}

fn plan_segments(spec: &TrajectorySpec) -> Result<Vec<SegmentRun>, TrajectoryError> {
    let mut runs = Vec::with_capacity(spec.segments.len());
    let (mut t, mut x, mut y) = (0.0, 0.0, 0.0);
    let mut heading = 0.0f64;
    let mut speed = spec.initial_speed_mps;
    if !(speed > 0.0) {
        return Err(TrajectoryError::InvalidSegment {
            index: 0,
            reason: format!("initial speed {speed} must be positive"),
        });
    }
    for (index, seg) in spec.segments.iter().enumerate() {
        match *seg {
            Segment::Straight {
                length_m,
                end_speed_mps,
            } => {
                if !(length_m > 0.0) || !(end_speed_mps > 0.0) {
                    return Err(TrajectoryError::InvalidSegment {
                        index,
                        reason: "length and end speed must be positive".into(),
                    });
                }
                let duration = 2.0 * length_m / (speed + end_speed_mps);
                let accel = (end_speed_mps - speed) / duration;
                runs.push(SegmentRun {
                    t0: t,
                    duration,
                    x0: x,
                    y0: y,
                    heading0: heading,
                    speed0: speed,
                    state: SegmentState::Straight { accel },
                });
                x += length_m * heading.cos();
                y += length_m * heading.sin();
                t += duration;
                speed = end_speed_mps;
            }
            Segment::Arc {
                radius_m,
                sweep_rad,
            } => {
                if !(radius_m > 0.0) || sweep_rad == 0.0 || !sweep_rad.is_finite() {
                    return Err(TrajectoryError::InvalidSegment {
                        index,
                        reason: "radius must be positive and sweep nonzero".into(),
                    });
                }
                let rate = speed / radius_m;
                if rate > MAX_YAW_RATE + 1e-9 {
                    return Err(TrajectoryError::InvalidSegment {
                        index,
                        reason: format!(
                            "yaw rate {:.1} deg/s above the {:.0} deg/s limit",
                            rate.to_degrees(),
                            MAX_YAW_RATE.to_degrees()
                        ),
                    });
                }
                let omega = sweep_rad.signum() * rate;
                let side = sweep_rad.signum();
                let center = (
                    x + side * radius_m * (-heading.sin()),
                    y + side * radius_m * heading.cos(),
                );
                let radial0 = (x - center.0, y - center.1);
                let duration = sweep_rad.abs() / rate;
                runs.push(SegmentRun {
                    t0: t,
                    duration,
                    x0: x,
                    y0: y,
                    heading0: heading,
                    speed0: speed,
                    state: SegmentState::Arc {
                        center,
                        omega,
                        radial0,
                    },
                });
                let (sin_s, cos_s) = (omega * duration).sin_cos();
                x = center.0 + radial0.0 * cos_s - radial0.1 * sin_s;
                y = center.1 + radial0.0 * sin_s + radial0.1 * cos_s;
                heading += sweep_rad;
                t += duration;
            }
        }
    }
    Ok(runs)
}

fn eval_segment(run: &SegmentRun, local_t: f64) -> TrajectorySample {
    let (x, y, heading, speed, accel_body, gyro_z);
    match run.state {
        SegmentState::Straight { accel } => {
            let s = run.speed0 * local_t + 0.5 * accel * local_t * local_t;
            x = run.x0 + s * run.heading0.cos();
            y = run.y0 + s * run.heading0.sin();
            heading = run.heading0;
            speed = run.speed0 + accel * local_t;
            accel_body = (accel, 0.0);
            gyro_z = 0.0;
        }
        SegmentState::Arc {
            center,
            omega,
            radial0,
        } => {
            let (sin_s, cos_s) = (omega * local_t).sin_cos();
            x = center.0 + radial0.0 * cos_s - radial0.1 * sin_s;
            y = center.1 + radial0.0 * sin_s + radial0.1 * cos_s;
            heading = run.heading0 + omega * local_t;
            speed = run.speed0;
            accel_body = (0.0, speed * omega);
            gyro_z = omega;
        }
    }
    let t = run.t0 + local_t;
    let euler = EulerAngles::new(0.0, 0.0, heading);
    let v = Vec3::new(speed * heading.cos(), speed * heading.sin(), 0.0);
    // specific force: body acceleration minus body-frame gravity
    let imu = ImuSample::new(
        Vec3::new(accel_body.0, accel_body.1, GRAVITY),
        Vec3::new(0.0, 0.0, gyro_z),
        t,
    );
    TrajectorySample {
        t,
        p: Vec3::new(x, y, 0.0),
        v,
        euler,
        imu,
        gps_valid: true,
    }
}

/// Generates kinematically consistent truth samples at `f_data_hz`.
pub fn generate_trajectory(spec: &TrajectorySpec) -> Result<Vec<TrajectorySample>, TrajectoryError> {
    if spec.segments.is_empty() {
        return Err(TrajectoryError::EmptyInput);
    }
    if !(spec.f_data_hz > 0.0) {
        return Err(TrajectoryError::InvalidSegment {
            index: 0,
            reason: format!("sampling rate {} Hz must be positive", spec.f_data_hz),
        });
    }
    let runs = plan_segments(spec)?;
    let total: f64 = runs.iter().map(|r| r.duration).sum();
    let dt = 1.0 / spec.f_data_hz;
    let n = (total / dt).floor() as usize + 1;
    let mut samples = Vec::with_capacity(n);
    let mut seg_idx = 0usize;
    for k in 0..n {
        let t = k as f64 * dt;
        while seg_idx + 1 < runs.len() && t >= runs[seg_idx].t0 + runs[seg_idx].duration {
            seg_idx += 1;
        }
        let run = &runs[seg_idx];
        samples.push(eval_segment(run, (t - run.t0).min(run.duration)));
    }
    Ok(samples)
}

/// The default experiment route: fast straights alternating with sharp
/// arcs and a slow section, speeds 2–27 m/s. With a 3 s pairing gap the
/// inter-vehicle distance spans roughly 6–81 m.
pub fn curvy_default_segments() -> Vec<Segment> {
    vec![
        Segment::Straight {
            length_m: 150.0,
            end_speed_mps: 25.0,
        },
        Segment::Straight {
            length_m: 100.0,
            end_speed_mps: 27.0,
        },
        Segment::Straight {
            length_m: 60.0,
            end_speed_mps: 8.0,
        },
        Segment::Arc {
            radius_m: 25.0,
            sweep_rad: std::f64::consts::PI,
        },
        Segment::Straight {
            length_m: 80.0,
            end_speed_mps: 15.0,
        },
        Segment::Arc {
            radius_m: 45.0,
            sweep_rad: -2.0 * std::f64::consts::FRAC_PI_3,
        },
        Segment::Straight {
            length_m: 50.0,
            end_speed_mps: 2.0,
        },
        Segment::Straight {
            length_m: 60.0,
            end_speed_mps: 2.0,
        },
        Segment::Straight {
            length_m: 60.0,
            end_speed_mps: 14.0,
        },
        Segment::Arc {
            radius_m: 42.0,
            sweep_rad: std::f64::consts::FRAC_PI_2,
        },
        Segment::Straight {
            length_m: 120.0,
            end_speed_mps: 27.0,
        },
        Segment::Straight {
            length_m: 80.0,
            end_speed_mps: 27.0,
        },
        Segment::Straight {
            length_m: 40.0,
            end_speed_mps: 10.0,
        },
    ]
}

/// Default spec for [`curvy_default_segments`] at the given sampling rate.
pub fn curvy_default(f_data_hz: f64) -> TrajectorySpec {
    TrajectorySpec {
        initial_speed_mps: 10.0,
        segments: curvy_default_segments(),
        f_data_hz,
    }
}

// ---------------------------------------------------------------------------
// CSV interface
// ---------------------------------------------------------------------------

/// Writes samples with full float precision so reloading reproduces them
/// exactly.
pub fn write_trajectory_csv(
    path: &Path,
    samples: &[TrajectorySample],
) -> Result<(), TrajectoryError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{CSV_HEADER}")?;
    for s in samples {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            s.t,
            s.p.x,
            s.p.y,
            s.p.z,
            s.v.x,
            s.v.y,
            s.v.z,
            s.euler.roll,
            s.euler.pitch,
            s.euler.yaw,
            s.imu.accel.x,
            s.imu.accel.y,
            s.imu.accel.z,
            s.imu.gyro.x,
            s.imu.gyro.y,
            s.imu.gyro.z,
            u8::from(s.gps_valid),
        )?;
    }
    Ok(())
}

/// Loads a trajectory CSV, validating the header, the field count and the
/// strictly increasing time column.
pub fn load_trajectory(path: &Path) -> Result<Vec<TrajectorySample>, TrajectoryError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| TrajectoryError::CsvFormat {
            line: 0,
            reason: e.to_string(),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| TrajectoryError::CsvFormat {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let expected: Vec<&str> = CSV_HEADER.split(',').collect();
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(TrajectoryError::CsvFormat {
            line: 1,
            reason: format!("header mismatch: expected `{CSV_HEADER}`, got `{}`", got.join(",")),
        });
    }

    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| TrajectoryError::CsvFormat {
            line: e
                .position()
                .map(|p| p.line())
                .unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 17 {
            return Err(TrajectoryError::CsvFormat {
                line,
                reason: format!("expected 17 fields, got {}", record.len()),
            });
        }
        let field = |i: usize| -> Result<f64, TrajectoryError> {
            let raw = record.get(i).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| TrajectoryError::CsvFormat {
                line,
                reason: format!("field {} (`{raw}`) is not a number", i + 1),
            })?;
            if !v.is_finite() {
                return Err(TrajectoryError::CsvFormat {
                    line,
                    reason: format!("field {} is not finite", i + 1),
                });
            }
            Ok(v)
        };
        let gps_raw = record.get(16).unwrap_or("");
        let gps_valid = match gps_raw {
            "0" | "false" => false,
            "1" | "true" => true,
            other => {
                return Err(TrajectoryError::CsvFormat {
                    line,
                    reason: format!("gps_valid must be 0/1, got `{other}`"),
                })
            }
        };
        let t = field(0)?;
        if let Some(last) = samples.last() {
            let last: &TrajectorySample = last;
            if t <= last.t {
                return Err(TrajectoryError::NonMonotoneTime { line });
            }
        }
        samples.push(TrajectorySample {
            t,
            p: Vec3::new(field(1)?, field(2)?, field(3)?),
            v: Vec3::new(field(4)?, field(5)?, field(6)?),
            euler: EulerAngles::new(field(7)?, field(8)?, field(9)?),
            imu: ImuSample::new(
                Vec3::new(field(10)?, field(11)?, field(12)?),
                Vec3::new(field(13)?, field(14)?, field(15)?),
                t,
            ),
            gps_valid,
        });
    }
    if samples.is_empty() {
        return Err(TrajectoryError::EmptyInput);
    }
    Ok(samples)
}

// ---------------------------------------------------------------------------
// Two-vehicle pairing
// ---------------------------------------------------------------------------

/// Truth state of one vehicle at a paired instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleTruth {
    pub p: Vec3<f64>,
    pub v: Vec3<f64>,
    pub q: Quaternion<f64>,
    pub imu: ImuSample<f64>,
    pub gps_valid: bool,
}

impl VehicleTruth {
    fn from_sample(s: &TrajectorySample) -> Self {
        Self {
            p: s.p,
            v: s.v,
            q: s.quaternion(),
            imu: s.imu,
            gps_valid: s.gps_valid,
        }
    }
}

/// Synchronized leader/follower pair on the common time grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedSample {
    pub t: f64,
    pub lead: VehicleTruth,
    pub follow: VehicleTruth,
}

/// Pairs a single trajectory with itself delayed by `delta_t_gap`: the
/// follower occupies the leader's state of `delta_t_gap` seconds earlier
/// (linear interpolation for position/velocity/IMU, spherical for the
/// orientation).
pub fn pair_vehicles(
    samples: &[TrajectorySample],
    delta_t_gap: f64,
) -> Result<Vec<PairedSample>, TrajectoryError> {
    if samples.is_empty() {
        return Err(TrajectoryError::EmptyInput);
    }
    let duration = samples.last().unwrap().t - samples[0].t;
    if !(delta_t_gap > 0.0) || delta_t_gap >= duration {
        return Err(TrajectoryError::InvalidGap {
            gap: delta_t_gap,
            duration,
        });
    }
    let mut out = Vec::new();
    let mut lo = 0usize;
    for lead in samples {
        let target = lead.t - delta_t_gap;
        if target < samples[0].t {
            continue;
        }
        while lo + 1 < samples.len() && samples[lo + 1].t <= target {
            lo += 1;
        }
        let follow = if samples[lo].t == target || lo + 1 >= samples.len() {
            VehicleTruth::from_sample(&samples[lo])
        } else {
            let a = &samples[lo];
            let b = &samples[lo + 1];
            let w = (target - a.t) / (b.t - a.t);
            let lerp3 = |x: &Vec3<f64>, y: &Vec3<f64>| x + (y - x) * w;
            VehicleTruth {
                p: lerp3(&a.p, &b.p),
                v: lerp3(&a.v, &b.v),
                q: a.quaternion().slerp(&b.quaternion(), w),
                imu: ImuSample::new(
                    lerp3(&a.imu.accel, &b.imu.accel),
                    lerp3(&a.imu.gyro, &b.imu.gyro),
                    target,
                ),
                gps_valid: a.gps_valid,
            }
        };
        out.push(PairedSample {
            t: lead.t,
            lead: VehicleTruth::from_sample(lead),
            follow,
        });
    }
    if out.is_empty() {
        return Err(TrajectoryError::InvalidGap {
            gap: delta_t_gap,
            duration,
        });
    }
    Ok(out)
}
