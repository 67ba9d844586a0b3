//! Scenario simulation: ground-truth trajectories, sensor poses and
//! per-sensor measurement sets under the point-object models.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix4, Vector2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cov_from_rows, wrap_angle, Cov4, Pos, State};

/// Constant-velocity transition `F` and the discretised white-noise
/// acceleration covariance `Q` for a `[px, py, vx, vy]` state.
pub fn motion_matrices(dt: f64, noise_var: f64) -> Result<(Matrix4<f64>, Cov4)> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("scan time must be positive, got {dt}")));
    }
    if !(noise_var >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "process noise must be nonnegative, got {noise_var}"
        )));
    }
    let mut f = Matrix4::identity();
    f[(0, 2)] = dt;
    f[(1, 3)] = dt;
    let a = dt.powi(3) / 3.0;
    let b = dt.powi(2) / 2.0;
    let mut q = Cov4::zeros();
    for k in 0..2 {
        q[(k, k)] = a;
        q[(k, k + 2)] = b;
        q[(k + 2, k)] = b;
        q[(k + 2, k + 2)] = dt;
    }
    Ok((f, q * noise_var))
}

/// Position-selecting measurement matrix.
pub fn measurement_matrix() -> nalgebra::Matrix2x4<f64> {
    nalgebra::Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SensorConfig {
    pub position: [f64; 2],
    /// Boresight angle in radians.
    pub orientation: f64,
    /// Full angular width of the fan-shaped field of view, radians.
    pub fov_bearing: f64,
    pub fov_radius: f64,
    #[serde(default)]
    pub mobile: bool,
    /// Standard deviation parameter of the sensor's own CV motion.
    #[serde(default)]
    pub motion_noise_std: f64,
    #[serde(default)]
    pub initial_velocity: [f64; 2],
}

impl SensorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fov_radius > 0.0) {
            return Err(Error::Config(format!(
                "fov_radius must be > 0, got {}",
                self.fov_radius
            )));
        }
        if !(self.fov_bearing > 0.0 && self.fov_bearing <= 2.0 * PI + 1e-12) {
            return Err(Error::Config(format!(
                "fov_bearing must lie in (0, 2pi], got {}",
                self.fov_bearing
            )));
        }
        if self.motion_noise_std < 0.0 {
            return Err(Error::Config("motion_noise_std must be >= 0".into()));
        }
        Ok(())
    }

    pub fn fov_area(&self) -> f64 {
        0.5 * self.fov_bearing * self.fov_radius * self.fov_radius
    }
}

/// Sensor position and (constant) orientation at one time step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Pos,
    pub orientation: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScenarioConfig {
    pub sensors: Vec<SensorConfig>,
    pub horizon: usize,
    /// sigma_q^2
    pub process_noise: f64,
    /// sigma_z^2
    pub measurement_noise: f64,
    pub scan_time: f64,
    pub birth_rate: f64,
    pub clutter_rate: f64,
    pub survival_prob: f64,
    pub detection_prob: f64,
    pub birth_mean: [f64; 4],
    pub birth_covariance: [[f64; 4]; 4],
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        for s in &self.sensors {
            s.validate()?;
        }
        let probs = [
            ("survival_prob", self.survival_prob),
            ("detection_prob", self.detection_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0,1], got {p}")));
            }
        }
        let rates = [
            ("birth_rate", self.birth_rate),
            ("clutter_rate", self.clutter_rate),
            ("process_noise", self.process_noise),
            ("measurement_noise", self.measurement_noise),
        ];
        for (name, r) in rates {
            if !(r >= 0.0) || !r.is_finite() {
                return Err(Error::Config(format!("{name} must be >= 0, got {r}")));
            }
        }
        if !(self.scan_time > 0.0) {
            return Err(Error::Config(format!("scan_time must be > 0, got {}", self.scan_time)));
        }
        let cov = self.birth_cov();
        if cov.cholesky().is_none() {
            return Err(Error::Config("birth_covariance must be positive definite".into()));
        }
        Ok(())
    }

    pub fn birth_mean(&self) -> State {
        State::from_column_slice(&self.birth_mean)
    }

    pub fn birth_cov(&self) -> Cov4 {
        cov_from_rows(&self.birth_covariance)
    }

    pub fn motion(&self) -> Result<(Matrix4<f64>, Cov4)> {
        motion_matrices(self.scan_time, self.process_noise)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthTrajectory {
    pub birth_time: usize,
    pub states: Vec<State>,
}

impl GroundTruthTrajectory {
    pub fn death_time(&self) -> usize {
        self.birth_time + self.states.len() - 1
    }

    pub fn state_at(&self, t: usize) -> Option<&State> {
        if t < self.birth_time {
            return None;
        }
        self.states.get(t - self.birth_time)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub time: usize,
    pub sensor: usize,
    pub measurements: Vec<Pos>,
}

pub(crate) fn sample_gaussian<R: Rng + ?Sized>(rng: &mut R, mean: &State, cov: &Cov4) -> State {
    let z = State::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
    match cov.cholesky() {
        Some(ch) => mean + ch.l() * z,
        None => {
            // singular (e.g. zero-noise) covariance: fall back to an
            // eigen factor so degenerate directions stay exact
            let eig = cov.symmetric_eigen();
            let sq = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
            mean + eig.eigenvectors * Matrix4::from_diagonal(&sq) * z
        }
    }
}

fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> usize {
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).map(|p| p.sample(rng) as usize).unwrap_or(0)
}

/// Ground truth for horizon `1..=T`. `initial` objects are alive at `t = 1`
/// in addition to Poisson births.
pub fn simulate_ground_truth<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    initial: &[State],
    rng: &mut R,
) -> Result<Vec<GroundTruthTrajectory>> {
    cfg.validate()?;
    let (f, q) = cfg.motion()?;
    let birth_mean = cfg.birth_mean();
    let birth_cov = cfg.birth_cov();
    let mut done = Vec::new();
    let mut alive: Vec<GroundTruthTrajectory> = Vec::new();
    for t in 1..=cfg.horizon {
        if t == 1 {
            for x in initial {
                alive.push(GroundTruthTrajectory {
                    birth_time: 1,
                    states: vec![*x],
                });
            }
        } else {
            let mut next = Vec::with_capacity(alive.len());
            for mut traj in alive.drain(..) {
                if rng.random::<f64>() < cfg.survival_prob {
                    let last = *traj.states.last().expect("nonempty trajectory");
                    traj.states.push(sample_gaussian(rng, &(f * last), &q));
                    next.push(traj);
                } else {
                    done.push(traj);
                }
            }
            alive = next;
        }
        for _ in 0..sample_poisson(rng, cfg.birth_rate) {
            alive.push(GroundTruthTrajectory {
                birth_time: t,
                states: vec![sample_gaussian(rng, &birth_mean, &birth_cov)],
            });
        }
    }
    done.extend(alive);
    done.sort_by_key(|t| t.birth_time);
    Ok(done)
}

/// Simulated poses of one sensor over `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorTrack {
    pub poses: Vec<Pose>,
}

impl SensorTrack {
    pub fn simulate<R: Rng + ?Sized>(cfg: &SensorConfig, horizon: usize, dt: f64, rng: &mut R) -> Result<Self> {
        let orientation = cfg.orientation;
        let start = Pos::new(cfg.position[0], cfg.position[1]);
        if !cfg.mobile {
            return Ok(SensorTrack {
                poses: vec![
                    Pose {
                        position: start,
                        orientation
                    };
                    horizon
                ],
            });
        }
        let var = cfg.motion_noise_std * cfg.motion_noise_std;
        let (f, q) = motion_matrices(dt, var)?;
        let mut x = State::new(start.x, start.y, cfg.initial_velocity[0], cfg.initial_velocity[1]);
        let mut poses = Vec::with_capacity(horizon);
        for t in 1..=horizon {
            if t > 1 {
                x = sample_gaussian(rng, &(f * x), &q);
            }
            poses.push(Pose {
                position: Pos::new(x[0], x[1]),
                orientation,
            });
        }
        Ok(SensorTrack { poses })
    }

    /// Pose at 1-based time `t`.
    pub fn pose(&self, t: usize) -> Pose {
        self.poses[t - 1]
    }
}

pub fn in_fov(pose: &Pose, sensor: &SensorConfig, pos: &Pos) -> bool {
    let d = pos - pose.position;
    let range = d.norm();
    if range > sensor.fov_radius {
        return false;
    }
    if range == 0.0 {
        return true;
    }
    let rel = wrap_angle(d.y.atan2(d.x) - pose.orientation);
    rel.abs() <= 0.5 * sensor.fov_bearing
}

/// Uniform sample over the fan-shaped field of view.
pub fn sample_in_fov<R: Rng + ?Sized>(pose: &Pose, sensor: &SensorConfig, rng: &mut R) -> Pos {
    let r = sensor.fov_radius * rng.random::<f64>().sqrt();
    let a = pose.orientation + (rng.random::<f64>() - 0.5) * sensor.fov_bearing;
    pose.position + Vector2::new(r * a.cos(), r * a.sin())
}

/// Axis-aligned bounding box `[xmin, ymin, xmax, ymax]` of one field of view.
pub fn fov_bounds(pose: &Pose, sensor: &SensorConfig) -> [f64; 4] {
    let mut pts = vec![pose.position];
    let half = 0.5 * sensor.fov_bearing;
    let lo = pose.orientation - half;
    let hi = pose.orientation + half;
    let arc = |a: f64| pose.position + Vector2::new(a.cos(), a.sin()) * sensor.fov_radius;
    pts.push(arc(lo));
    pts.push(arc(hi));
    // axis-extreme directions that fall inside the sector
    for k in -4i32..=4 {
        let a = k as f64 * PI / 2.0;
        if a >= lo && a <= hi {
            pts.push(arc(a));
        }
    }
    let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for p in pts {
        b[0] = b[0].min(p.x);
        b[1] = b[1].min(p.y);
        b[2] = b[2].max(p.x);
        b[3] = b[3].max(p.y);
    }
    b
}

/// One sensor's scan at time `t`. Returns the measurement set and the indices
/// (into `truth`) of objects that produced a detection.
pub fn generate_measurements<R: Rng + ?Sized>(
    truth: &[GroundTruthTrajectory],
    cfg: &ScenarioConfig,
    sensor: usize,
    pose: &Pose,
    t: usize,
    rng: &mut R,
) -> (MeasurementSet, Vec<usize>) {
    let scfg = &cfg.sensors[sensor];
    let h = measurement_matrix();
    let r = Matrix2::identity() * cfg.measurement_noise;
    let mut zs = Vec::new();
    let mut detected = Vec::new();
    for (idx, traj) in truth.iter().enumerate() {
        let Some(x) = traj.state_at(t) else { continue };
        let pos = Pos::new(x[0], x[1]);
        if !in_fov(pose, scfg, &pos) {
            continue;
        }
        if rng.random::<f64>() < cfg.detection_prob {
            let n = Vector2::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
            zs.push(h * x + r.map(f64::sqrt) * n);
            detected.push(idx);
        }
    }
    for _ in 0..sample_poisson(rng, cfg.clutter_rate) {
        zs.push(sample_in_fov(pose, scfg, rng));
    }
    zs.shuffle(rng);
    (
        MeasurementSet {
            time: t,
            sensor,
            measurements: zs,
        },
        detected,
    )
}

/// Everything one Monte Carlo run of a scenario produces.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub truth: Vec<GroundTruthTrajectory>,
    pub sensor_tracks: Vec<SensorTrack>,
    /// `measurements[s][t - 1]`
    pub measurements: Vec<Vec<MeasurementSet>>,
    /// `ever_detected[i]` for each ground-truth trajectory.
    pub ever_detected: Vec<bool>,
}

impl Scenario {
    /// Objects alive at the final step that were detected at least once.
    pub fn final_truth(&self) -> Vec<State> {
        let horizon = self.sensor_tracks.first().map(|t| t.poses.len()).unwrap_or(0);
        self.truth
            .iter()
            .zip(&self.ever_detected)
            .filter(|(_, d)| **d)
            .filter_map(|(tr, _)| tr.state_at(horizon).copied())
            .collect()
    }

    /// Bounding box of the union of every sensor's field of view over time.
    pub fn fov_bounds(&self, cfg: &ScenarioConfig) -> [f64; 4] {
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for (s, track) in self.sensor_tracks.iter().enumerate() {
            for pose in &track.poses {
                let fb = fov_bounds(pose, &cfg.sensors[s]);
                b[0] = b[0].min(fb[0]);
                b[1] = b[1].min(fb[1]);
                b[2] = b[2].max(fb[2]);
                b[3] = b[3].max(fb[3]);
            }
        }
        b
    }
}

pub fn simulate_scenario<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<Scenario> {
    let truth = simulate_ground_truth(cfg, &[], rng)?;
    let mut sensor_tracks = Vec::with_capacity(cfg.sensors.len());
    for s in &cfg.sensors {
        sensor_tracks.push(SensorTrack::simulate(s, cfg.horizon, cfg.scan_time, rng)?);
    }
    let mut ever_detected = vec![false; truth.len()];
    let mut measurements = Vec::with_capacity(cfg.sensors.len());
    for (s, track) in sensor_tracks.iter().enumerate() {
        let mut per_t = Vec::with_capacity(cfg.horizon);
        for t in 1..=cfg.horizon {
            let (set, det) = generate_measurements(&truth, cfg, s, &track.pose(t), t, rng);
            for i in det {
                ever_detected[i] = true;
            }
            per_t.push(set);
        }
        measurements.push(per_t);
    }
    Ok(Scenario {
        truth,
        sensor_tracks,
        measurements,
        ever_detected,
    })
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;

    pub(crate) fn cfg() -> ScenarioConfig {
        ScenarioConfig {
            sensors: vec![SensorConfig {
                position: [0.0, 0.0],
                orientation: 0.0,
                fov_bearing: 2.0 * PI / 3.0,
                fov_radius: 20.0,
                mobile: false,
                motion_noise_std: 0.0,
                initial_velocity: [0.0, 0.0],
            }],
            horizon: 10,
            process_noise: 0.5,
            measurement_noise: 0.01,
            scan_time: 0.1,
            birth_rate: 0.0,
            clutter_rate: 0.0,
            survival_prob: 1.0,
            detection_prob: 1.0,
            birth_mean: [10.0, 0.0, 0.0, 0.0],
            birth_covariance: [
                [4.0, 0.0, 0.0, 0.0],
                [0.0, 4.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
            ],
            seed: 0,
        }
    }
}
