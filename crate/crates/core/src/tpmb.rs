//! Linear-Gaussian trajectory Poisson multi-Bernoulli (TPMB) filter.
//!
//! Each Bernoulli carries a Gaussian over its whole state sequence together
//! with a length distribution, so dead and alive trajectories share one
//! representation. Data association is resolved with Murty's k-best
//! assignments and projected back to PMB form per track.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix2x4, Matrix4};
use serde::{Deserialize, Serialize};

use crate::assign;
use crate::error::{Error, Result};
use crate::linalg::{gaussian_logpdf2, log_sum_exp, mahalanobis2, symmetrize, symmetrize4, Cov4, Pos, State};
use crate::sim::{self, in_fov, MeasurementSet, Pose, ScenarioConfig, SensorConfig};

/// Alive mass below which a trajectory is no longer extended in time.
const MIN_ALIVE_MASS: f64 = 1e-9;
/// Floor for likelihoods that enter the association cost in log form.
const LOG_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSettings {
    /// Threshold on the squared Mahalanobis innovation distance.
    pub gate_size: f64,
    pub max_hypotheses: usize,
    pub mb_weight_prune: f64,
    pub existence_prune: f64,
    pub ppp_weight_prune: f64,
    pub estimation_threshold: f64,
}

impl Default for FilterSettings {
    fn default() -> Self {
        FilterSettings {
            gate_size: 20.0,
            max_hypotheses: 100,
            mb_weight_prune: 1e-3,
            existence_prune: 1e-3,
            ppp_weight_prune: 1e-5,
            estimation_threshold: 0.5,
        }
    }
}

impl FilterSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.gate_size > 0.0) || self.max_hypotheses == 0 {
            return Err(Error::Config("gate_size and max_hypotheses must be positive".into()));
        }
        for (name, v) in [
            ("mb_weight_prune", self.mb_weight_prune),
            ("existence_prune", self.existence_prune),
            ("ppp_weight_prune", self.ppp_weight_prune),
            ("estimation_threshold", self.estimation_threshold),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0,1), got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: State,
    pub cov: Cov4,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoissonIntensity {
    pub components: Vec<GaussianComponent>,
}

impl PoissonIntensity {
    pub fn total_weight(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }
}

/// One potential detected trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBernoulli {
    pub existence: f64,
    /// 1-based time of the first state.
    pub start_time: usize,
    /// `length_probs[j - 1]` = probability that the trajectory has length `j`.
    pub length_probs: Vec<f64>,
    /// Stacked state sequence, `4 * max_length` entries.
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl TrajectoryBernoulli {
    pub fn new_single(existence: f64, start_time: usize, mean: State, cov: Cov4) -> Self {
        TrajectoryBernoulli {
            existence,
            start_time,
            length_probs: vec![1.0],
            mean: DVector::from_column_slice(mean.as_slice()),
            cov: DMatrix::from_column_slice(4, 4, cov.as_slice()),
        }
    }

    pub fn max_length(&self) -> usize {
        self.length_probs.len()
    }

    /// Time of the last state in the stored sequence.
    pub fn end_time(&self) -> usize {
        self.start_time + self.max_length() - 1
    }

    /// Probability mass of the trajectory being alive at time `t`.
    pub fn alive_mass(&self, t: usize) -> f64 {
        if self.end_time() == t {
            *self.length_probs.last().unwrap_or(&0.0)
        } else {
            0.0
        }
    }

    pub fn state_mean(&self, j: usize) -> State {
        State::from_column_slice(&self.mean.as_slice()[4 * j..4 * j + 4])
    }

    pub fn state_cov(&self, j: usize) -> Cov4 {
        self.cov.fixed_view::<4, 4>(4 * j, 4 * j).into_owned()
    }

    pub fn last_mean(&self) -> State {
        self.state_mean(self.max_length() - 1)
    }

    pub fn last_cov(&self) -> Cov4 {
        self.state_cov(self.max_length() - 1)
    }

    pub fn check_invariants(&self, tol: f64) -> std::result::Result<(), String> {
        if !(-tol..=1.0 + tol).contains(&self.existence) {
            return Err(format!("existence {} out of range", self.existence));
        }
        let s: f64 = self.length_probs.iter().sum();
        if (s - 1.0).abs() > tol || self.length_probs.iter().any(|w| *w < -tol) {
            return Err(format!("length distribution sums to {s}"));
        }
        let n = 4 * self.max_length();
        if self.mean.len() != n || self.cov.nrows() != n || self.cov.ncols() != n {
            return Err("dimension mismatch".into());
        }
        if crate::linalg::max_asymmetry(&self.cov) > tol {
            return Err("covariance not symmetric".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPmb {
    pub poisson: PoissonIntensity,
    pub bernoullis: Vec<TrajectoryBernoulli>,
    pub sensor: usize,
    pub time: usize,
}

impl TrajectoryPmb {
    pub fn empty(sensor: usize) -> Self {
        TrajectoryPmb {
            poisson: PoissonIntensity::default(),
            bernoullis: Vec::new(),
            sensor,
            time: 0,
        }
    }
}

/// Linear-Gaussian motion model shared by objects and the filter.
#[derive(Debug, Clone)]
pub struct MotionModel {
    pub transition: Matrix4<f64>,
    pub noise: Cov4,
    pub survival_prob: f64,
}

/// Per-scan measurement model of one sensor.
#[derive(Debug, Clone)]
pub struct SensorModel<'a> {
    pub noise: Matrix2<f64>,
    pub detection_prob: f64,
    /// Clutter intensity per unit area.
    pub clutter_density: f64,
    pub sensor: &'a SensorConfig,
    pub pose: Pose,
    /// When false the field of view is ignored and every state is detectable.
    pub use_fov: bool,
}

impl SensorModel<'_> {
    fn detection_prob_at(&self, mean: &State) -> f64 {
        if !self.use_fov || in_fov(&self.pose, self.sensor, &Pos::new(mean[0], mean[1])) {
            self.detection_prob
        } else {
            0.0
        }
    }
}

fn h() -> Matrix2x4<f64> {
    sim::measurement_matrix()
}

/// Time update of the whole trajectory PMB.
pub fn predict(state: &TrajectoryPmb, motion: &MotionModel, birth: &PoissonIntensity) -> Result<TrajectoryPmb> {
    let t = state.time;
    let f = &motion.transition;
    let ps = motion.survival_prob;
    let mut bernoullis = Vec::with_capacity(state.bernoullis.len());
    for b in &state.bernoullis {
        let alive = b.alive_mass(t);
        // with ps = 0 every alive trajectory ends at `t`, which the stored
        // length distribution already expresses
        if alive * b.existence < MIN_ALIVE_MASS || ps <= 0.0 {
            bernoullis.push(b.clone());
            continue;
        }
        let l = b.max_length();
        let n = 4 * l;
        let mut w = b.length_probs.clone();
        w[l - 1] = alive * (1.0 - ps);
        w.push(alive * ps);

        let last = b.last_mean();
        let mut mean = DVector::zeros(n + 4);
        mean.rows_mut(0, n).copy_from(&b.mean);
        mean.rows_mut(n, 4).copy_from(&(f * last));

        let mut cov = DMatrix::zeros(n + 4, n + 4);
        cov.view_mut((0, 0), (n, n)).copy_from(&b.cov);
        // cross terms P[:, last] F^T
        let p_col = b.cov.view((0, n - 4), (n, 4));
        let f_dyn = DMatrix::from_column_slice(4, 4, f.as_slice());
        let cross = p_col * f_dyn.transpose();
        cov.view_mut((0, n), (n, 4)).copy_from(&cross);
        cov.view_mut((n, 0), (4, n)).copy_from(&cross.transpose());
        let p_ll = b.last_cov();
        let pred = symmetrize4(&(f * p_ll * f.transpose() + motion.noise));
        cov.view_mut((n, n), (4, 4)).copy_from(&pred);
        symmetrize(&mut cov);
        if pred.diagonal().iter().any(|v| !(v.is_finite() && *v >= -1e-9)) {
            return Err(Error::numerical(
                t + 1,
                "predicted covariance lost positive semidefiniteness",
            ));
        }
        bernoullis.push(TrajectoryBernoulli {
            existence: b.existence,
            start_time: b.start_time,
            length_probs: w,
            mean,
            cov,
        });
    }
    let mut poisson = PoissonIntensity {
        components: state
            .poisson
            .components
            .iter()
            .map(|c| GaussianComponent {
                weight: c.weight * ps,
                mean: f * c.mean,
                cov: symmetrize4(&(f * c.cov * f.transpose() + motion.noise)),
            })
            .collect(),
    };
    poisson.components.extend(birth.components.iter().cloned());
    Ok(TrajectoryPmb {
        poisson,
        bernoullis,
        sensor: state.sensor,
        time: t + 1,
    })
}

/// Indices and renormalised weights of the global hypotheses with weight
/// `>= threshold`. The largest hypothesis is always kept.
pub fn prune_hypotheses(weights: &[f64], threshold: f64) -> Vec<(usize, f64)> {
    let Some(best) = weights
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
    else {
        return Vec::new();
    };
    let kept: Vec<(usize, f64)> = weights
        .iter()
        .copied()
        .enumerate()
        .filter(|&(i, w)| i == best || w >= threshold)
        .collect();
    let s: f64 = kept.iter().map(|(_, w)| w).sum();
    kept.into_iter().map(|(i, w)| (i, w / s)).collect()
}

pub fn prune_hypothesis_weights(weights: &[f64], threshold: f64) -> Vec<f64> {
    prune_hypotheses(weights, threshold)
        .into_iter()
        .map(|(_, w)| w)
        .collect()
}

struct Detection {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

fn kalman_update_trajectory(
    b: &TrajectoryBernoulli,
    z: &Pos,
    r: &Matrix2<f64>,
    step: usize,
) -> Result<(Detection, f64)> {
    let l = b.max_length();
    let n = 4 * l;
    let hm = h();
    let x_last = b.last_mean();
    let p_ll = b.last_cov();
    let s = hm * p_ll * hm.transpose() + r;
    let s_inv = s
        .try_inverse()
        .filter(|_| s.determinant() > 1e-300)
        .ok_or_else(|| Error::numerical(step, "degenerate innovation covariance"))?;
    let innov = z - hm * x_last;
    let ll = gaussian_logpdf2(z, &(hm * x_last), &s)
        .ok_or_else(|| Error::numerical(step, "degenerate innovation covariance"))?;
    // P[:, last] H^T
    let p_col = b.cov.view((0, n - 4), (n, 4)).into_owned();
    let h_dyn = DMatrix::from_column_slice(2, 4, hm.as_slice());
    let pht = &p_col * h_dyn.transpose();
    let s_inv_dyn = DMatrix::from_column_slice(2, 2, s_inv.as_slice());
    let gain = &pht * &s_inv_dyn;
    let innov_dyn = DVector::from_column_slice(innov.as_slice());
    let mean = &b.mean + &gain * innov_dyn;
    let mut cov = &b.cov - &gain * pht.transpose();
    symmetrize(&mut cov);
    Ok((Detection { mean, cov }, ll))
}

/// Measurement update with k-best data association and track-oriented
/// projection back to PMB form.
pub fn update(
    state: &TrajectoryPmb,
    scan: &MeasurementSet,
    model: &SensorModel<'_>,
    settings: &FilterSettings,
) -> Result<TrajectoryPmb> {
    let t = state.time;
    let hm = h();
    let r = model.noise;
    let zs = &scan.measurements;
    let m = zs.len();
    let n = state.bernoullis.len();

    // per-Bernoulli detection quantities
    let mut miss_w = vec![1.0; n];
    let mut pd_alive = vec![0.0; n];
    for (i, b) in state.bernoullis.iter().enumerate() {
        let alive = b.alive_mass(t);
        let pd = if alive > 0.0 {
            model.detection_prob_at(&b.last_mean())
        } else {
            0.0
        };
        pd_alive[i] = alive * pd;
        miss_w[i] = 1.0 - b.existence * alive * pd;
    }

    // association log-likelihood ratios
    let mut cost = DMatrix::from_element(m, n + m, f64::INFINITY);
    let mut detections: Vec<Vec<Option<Detection>>> = (0..n).map(|_| (0..m).map(|_| None).collect()).collect();
    for (i, b) in state.bernoullis.iter().enumerate() {
        if pd_alive[i] <= 0.0 || b.existence <= 0.0 {
            continue;
        }
        let x = b.last_mean();
        let s = hm * b.last_cov() * hm.transpose() + r;
        for (j, z) in zs.iter().enumerate() {
            let d2 = mahalanobis2(&(z - hm * x), &s)
                .ok_or_else(|| Error::numerical(t, "degenerate innovation covariance"))?;
            if d2 > settings.gate_size {
                continue;
            }
            let (det, ll) = kalman_update_trajectory(b, z, &r, t)?;
            let log_lik = (b.existence * pd_alive[i]).ln() + ll;
            cost[(j, i)] = -(log_lik - miss_w[i].max(LOG_FLOOR).ln());
            detections[i][j] = Some(det);
        }
    }

    // new-trajectory candidates from the Poisson intensity
    let mut new_bernoullis: Vec<Option<(f64, State, Cov4)>> = Vec::with_capacity(m);
    for (j, z) in zs.iter().enumerate() {
        let mut logws = Vec::new();
        let mut posts = Vec::new();
        for c in &state.poisson.components {
            let pd = model.detection_prob_at(&c.mean);
            if pd <= 0.0 || c.weight <= 0.0 {
                continue;
            }
            let s = hm * c.cov * hm.transpose() + r;
            let Some(ll) = gaussian_logpdf2(z, &(hm * c.mean), &s) else {
                return Err(Error::numerical(t, "degenerate innovation covariance"));
            };
            let s_inv = s
                .try_inverse()
                .ok_or_else(|| Error::numerical(t, "degenerate innovation covariance"))?;
            let k = c.cov * hm.transpose() * s_inv;
            let mean = c.mean + k * (z - hm * c.mean);
            let cov = symmetrize4(&(c.cov - k * s * k.transpose()));
            logws.push((c.weight * pd).ln() + ll);
            posts.push((mean, cov));
        }
        let log_e = log_sum_exp(&logws);
        let clutter = model.clutter_density;
        let log_total = log_sum_exp(&[log_e, if clutter > 0.0 { clutter.ln() } else { f64::NEG_INFINITY }]);
        cost[(j, n + j)] = -log_total.max(LOG_FLOOR.ln());
        if log_e == f64::NEG_INFINITY {
            new_bernoullis.push(None);
            continue;
        }
        // moment match the posterior mixture
        let mut mean = State::zeros();
        let mut wsum = 0.0;
        let ws: Vec<f64> = logws.iter().map(|lw| (lw - log_e).exp()).collect();
        for (w, (mu, _)) in ws.iter().zip(&posts) {
            mean += mu * *w;
            wsum += w;
        }
        mean /= wsum;
        let mut cov = Cov4::zeros();
        for (w, (mu, p)) in ws.iter().zip(&posts) {
            let d = mu - mean;
            cov += (p + d * d.transpose()) * (*w / wsum);
        }
        let exist = (log_e - log_total).exp();
        new_bernoullis.push(Some((exist, mean, symmetrize4(&cov))));
    }

    // k-best global hypotheses
    let hyps = assign::murty(&cost, settings.max_hypotheses);
    if m > 0 && hyps.is_empty() {
        return Err(Error::numerical(t, "no feasible association hypothesis"));
    }
    let (hyp_cols, weights): (Vec<Vec<usize>>, Vec<f64>) = if m == 0 {
        (vec![Vec::new()], vec![1.0])
    } else {
        let best = hyps[0].cost;
        let raw: Vec<f64> = hyps.iter().map(|h| (-(h.cost - best)).exp()).collect();
        let s: f64 = raw.iter().sum();
        let normalized: Vec<f64> = raw.iter().map(|w| w / s).collect();
        prune_hypotheses(&normalized, settings.mb_weight_prune)
            .into_iter()
            .map(|(h, w)| (hyps[h].cols.clone(), w))
            .unzip()
    };

    // marginal association probabilities rho[j][col]
    let mut rho = DMatrix::zeros(m, n + m);
    for (cols, w) in hyp_cols.iter().zip(&weights) {
        for (j, &c) in cols.iter().enumerate() {
            rho[(j, c)] += w;
        }
    }

    let mut out = Vec::with_capacity(n + m);
    for (i, b) in state.bernoullis.iter().enumerate() {
        let p_det: Vec<f64> = (0..m).map(|j| rho[(j, i)]).collect();
        let p_miss = (1.0 - p_det.iter().sum::<f64>()).max(0.0);
        let l = b.max_length();
        let mut parts: Vec<Hypothesis> = Vec::new();
        let miss_len;
        if p_miss > 0.0 {
            let alive = b.alive_mass(t);
            let pd = if alive > 0.0 { pd_alive[i] / alive } else { 0.0 };
            let denom = miss_w[i];
            let r_miss = if denom > 0.0 {
                (b.existence * (1.0 - alive * pd) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut w = b.length_probs.clone();
            if alive > 0.0 {
                w[l - 1] = alive * (1.0 - pd);
            }
            let ws: f64 = w.iter().sum();
            if ws > 0.0 {
                w.iter_mut().for_each(|v| *v /= ws);
            } else {
                w = b.length_probs.clone();
            }
            miss_len = w;
            parts.push((p_miss, r_miss, miss_len.clone(), &b.mean, &b.cov));
        }
        let mut one_hot = vec![0.0; l];
        one_hot[l - 1] = 1.0;
        for (j, pj) in p_det.iter().enumerate() {
            if *pj > 0.0 {
                let det = detections[i][j]
                    .as_ref()
                    .ok_or_else(|| Error::numerical(t, "association to a gated-out pair"))?;
                parts.push((*pj, 1.0, one_hot.clone(), &det.mean, &det.cov));
            }
        }
        if let Some(merged) = merge_parts(b.start_time, &parts) {
            out.push(merged);
        }
    }
    for (j, nb) in new_bernoullis.into_iter().enumerate() {
        let Some((exist, mean, cov)) = nb else { continue };
        let r = rho[(j, n + j)] * exist;
        if r > 0.0 {
            out.push(TrajectoryBernoulli::new_single(r.min(1.0), t, mean, cov));
        }
    }

    let poisson = PoissonIntensity {
        components: state
            .poisson
            .components
            .iter()
            .map(|c| GaussianComponent {
                weight: c.weight * (1.0 - model.detection_prob_at(&c.mean)),
                mean: c.mean,
                cov: c.cov,
            })
            .collect(),
    };
    for b in &out {
        if b.last_cov().diagonal().iter().any(|v| !(v.is_finite() && *v >= -1e-9)) {
            return Err(Error::numerical(t, "updated covariance lost positive semidefiniteness"));
        }
    }
    Ok(TrajectoryPmb {
        poisson,
        bernoullis: out,
        sensor: state.sensor,
        time: t,
    })
}

/// Probability, existence, length probabilities, mean and covariance of one
/// single-trajectory hypothesis.
type Hypothesis<'a> = (f64, f64, Vec<f64>, &'a DVector<f64>, &'a DMatrix<f64>);

/// Moment-match a mixture of single-trajectory hypotheses into one Bernoulli.
fn merge_parts(start_time: usize, parts: &[Hypothesis]) -> Option<TrajectoryBernoulli> {
    let r: f64 = parts.iter().map(|(p, r, ..)| p * r).sum();
    if !(r > 0.0) {
        return None;
    }
    if parts.len() == 1 {
        let (_, _, w, mean, cov) = &parts[0];
        return Some(TrajectoryBernoulli {
            existence: r.min(1.0),
            start_time,
            length_probs: w.clone(),
            mean: (*mean).clone(),
            cov: (*cov).clone(),
        });
    }
    let dim = parts[0].3.len();
    let l = parts[0].2.len();
    let mut w = vec![0.0; l];
    let mut mean = DVector::zeros(dim);
    for (p, rr, lw, mu, _) in parts {
        let beta = p * rr / r;
        for (acc, v) in w.iter_mut().zip(lw) {
            *acc += beta * v;
        }
        mean += *mu * beta;
    }
    let mut cov = DMatrix::zeros(dim, dim);
    for (p, rr, _, mu, p_cov) in parts {
        let beta = p * rr / r;
        if beta == 0.0 {
            continue;
        }
        let d = *mu - &mean;
        cov += (*p_cov + &d * d.transpose()) * beta;
    }
    symmetrize(&mut cov);
    let ws: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= ws);
    Some(TrajectoryBernoulli {
        existence: r.min(1.0),
        start_time,
        length_probs: w,
        mean,
        cov,
    })
}

/// Drop low-existence Bernoullis and low-weight Poisson components.
pub fn reduce(state: &TrajectoryPmb, settings: &FilterSettings) -> TrajectoryPmb {
    TrajectoryPmb {
        poisson: PoissonIntensity {
            components: state
                .poisson
                .components
                .iter()
                .filter(|c| c.weight >= settings.ppp_weight_prune)
                .cloned()
                .collect(),
        },
        bernoullis: state
            .bernoullis
            .iter()
            .filter(|b| b.existence >= settings.existence_prune)
            .cloned()
            .collect(),
        sensor: state.sensor,
        time: state.time,
    }
}

/// One emitted trajectory estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEstimate {
    pub start_time: usize,
    pub existence: f64,
    pub states: Vec<State>,
}

/// MAP-length mean sequences of the Bernoullis with `r >= threshold`.
pub fn estimate(state: &TrajectoryPmb, settings: &FilterSettings) -> Vec<TrajectoryEstimate> {
    state
        .bernoullis
        .iter()
        .filter(|b| b.existence >= settings.estimation_threshold)
        .map(|b| {
            let map_len = b
                .length_probs
                .iter()
                .enumerate()
                .fold(
                    (0usize, f64::NEG_INFINITY),
                    |acc, (j, w)| if *w > acc.1 { (j, *w) } else { acc },
                )
                .0
                + 1;
            TrajectoryEstimate {
                start_time: b.start_time,
                existence: b.existence,
                states: (0..map_len).map(|j| b.state_mean(j)).collect(),
            }
        })
        .collect()
}

/// Filter configuration assembled from a scenario.
#[derive(Debug, Clone)]
pub struct FilterModel {
    pub motion: MotionModel,
    pub birth: PoissonIntensity,
    pub initial: PoissonIntensity,
    pub measurement_noise: Matrix2<f64>,
    pub detection_prob: f64,
    pub clutter_rate: f64,
    pub use_fov: bool,
}

impl FilterModel {
    pub fn from_scenario(cfg: &ScenarioConfig) -> Result<Self> {
        let (transition, noise) = cfg.motion()?;
        Ok(FilterModel {
            motion: MotionModel {
                transition,
                noise,
                survival_prob: cfg.survival_prob,
            },
            birth: PoissonIntensity {
                components: if cfg.birth_rate > 0.0 {
                    vec![GaussianComponent {
                        weight: cfg.birth_rate,
                        mean: cfg.birth_mean(),
                        cov: cfg.birth_cov(),
                    }]
                } else {
                    Vec::new()
                },
            },
            initial: PoissonIntensity::default(),
            measurement_noise: Matrix2::identity() * cfg.measurement_noise,
            detection_prob: cfg.detection_prob,
            clutter_rate: cfg.clutter_rate,
            use_fov: true,
        })
    }
}

/// Run predict / update / reduce over `scans` (times `1..=T` in order).
pub fn run_filter(
    scans: &[MeasurementSet],
    poses: &[Pose],
    sensor_index: usize,
    sensor: &SensorConfig,
    model: &FilterModel,
    settings: &FilterSettings,
) -> Result<TrajectoryPmb> {
    let mut state = TrajectoryPmb::empty(sensor_index);
    state.poisson = model.initial.clone();
    let clutter_density = model.clutter_rate / sensor.fov_area();
    for (k, scan) in scans.iter().enumerate() {
        let t = k + 1;
        if scan.time != t {
            return Err(Error::InvalidArgument(format!(
                "scan {k} has time {} (expected contiguous steps)",
                scan.time
            )));
        }
        let step = || -> Result<TrajectoryPmb> {
            let predicted = predict(&state, &model.motion, &model.birth)?;
            let sm = SensorModel {
                noise: model.measurement_noise,
                detection_prob: model.detection_prob,
                clutter_density,
                sensor,
                pose: poses[k],
                use_fov: model.use_fov,
            };
            let updated = update(&predicted, scan, &sm, settings)?;
            Ok(reduce(&updated, settings))
        };
        state = step().map_err(|e| match e {
            Error::Numerical { what, .. } => Error::Numerical { step: t, what },
            other => other,
        })?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sensor() -> SensorConfig {
        SensorConfig {
            position: [0.0, 0.0],
            orientation: 0.0,
            fov_bearing: 2.0 * PI,
            fov_radius: 1000.0,
            mobile: false,
            motion_noise_std: 0.0,
            initial_velocity: [0.0, 0.0],
        }
    }

    fn motion(ps: f64) -> MotionModel {
        let (f, q) = sim::motion_matrices(0.1, 0.5).unwrap();
        MotionModel {
            transition: f,
            noise: q,
            survival_prob: ps,
        }
    }

    fn one_bernoulli(r: f64) -> TrajectoryPmb {
        TrajectoryPmb {
            poisson: PoissonIntensity::default(),
            bernoullis: vec![TrajectoryBernoulli::new_single(
                r,
                1,
                State::new(1.0, 2.0, 0.5, -0.5),
                Cov4::identity() * 0.1,
            )],
            sensor: 0,
            time: 1,
        }
    }

    #[test]
    fn survival_split() {
        let p = predict(&one_bernoulli(1.0), &motion(0.9), &PoissonIntensity::default()).unwrap();
        let w = &p.bernoullis[0].length_probs;
        assert_eq!(w.len(), 2);
        assert!((w[0] - 0.1).abs() < 1e-15 && (w[1] - 0.9).abs() < 1e-15);
        assert_eq!(p.time, 2);
    }

    #[test]
    fn birth_added_to_poisson() {
        let birth = PoissonIntensity {
            components: vec![GaussianComponent {
                weight: 0.1,
                mean: State::zeros(),
                cov: Cov4::identity(),
            }],
        };
        let p = predict(&TrajectoryPmb::empty(0), &motion(0.9), &birth).unwrap();
        assert_eq!(p.poisson.components.len(), 1);
        assert_eq!(p.poisson.components[0].weight, 0.1);
    }

    #[test]
    fn misdetection_existence() {
        let s = sensor();
        let sm = SensorModel {
            noise: Matrix2::identity() * 0.01,
            detection_prob: 0.95,
            clutter_density: 0.01,
            sensor: &s,
            pose: Pose {
                position: Pos::zeros(),
                orientation: 0.0,
            },
            use_fov: true,
        };
        let scan = MeasurementSet {
            time: 1,
            sensor: 0,
            measurements: vec![],
        };
        let u = update(&one_bernoulli(0.5), &scan, &sm, &FilterSettings::default()).unwrap();
        let expect = 0.5 * 0.05 / (1.0 - 0.475);
        assert!((u.bernoullis[0].existence - expect).abs() < 1e-12);
        assert!((expect - 0.047619047619).abs() < 1e-10);
    }

    #[test]
    fn gate_excludes_distant_measurement() {
        let s = sensor();
        let sm = SensorModel {
            noise: Matrix2::identity() * 1.0,
            detection_prob: 0.95,
            clutter_density: 0.01,
            sensor: &s,
            pose: Pose {
                position: Pos::zeros(),
                orientation: 0.0,
            },
            use_fov: true,
        };
        // innovation covariance is 1.1 * I; place z at Mahalanobis^2 = 25
        let mut b = one_bernoulli(0.9);
        b.bernoullis[0].cov = DMatrix::identity(4, 4) * 0.1;
        let d = (25.0f64 * 1.1).sqrt();
        let scan = MeasurementSet {
            time: 1,
            sensor: 0,
            measurements: vec![Pos::new(1.0 + d, 2.0)],
        };
        let u = update(&b, &scan, &sm, &FilterSettings::default()).unwrap();
        // the existing track is only misdetected; its mean is untouched
        assert_eq!(u.bernoullis[0].mean, b.bernoullis[0].mean);
        assert!(u.bernoullis[0].existence < 0.9);
    }

    #[test]
    fn hypothesis_weight_pruning() {
        let w = prune_hypothesis_weights(&[0.6, 0.4e-4], 1e-3);
        assert_eq!(w, vec![1.0]);
        let w = prune_hypothesis_weights(&[0.5, 0.5], 1e-3);
        assert_eq!(w, vec![0.5, 0.5]);
    }

    #[test]
    fn reduce_prunes_by_thresholds() {
        let mut s = one_bernoulli(5e-4);
        s.bernoullis.push(one_bernoulli(0.7).bernoullis.remove(0));
        s.poisson.components.push(GaussianComponent {
            weight: 1e-6,
            mean: State::zeros(),
            cov: Cov4::identity(),
        });
        let r = reduce(&s, &FilterSettings::default());
        assert_eq!(r.bernoullis.len(), 1);
        assert_eq!(r.bernoullis[0].existence, 0.7);
        assert!(r.poisson.components.is_empty());
        let keep = reduce(&one_bernoulli(0.7), &FilterSettings::default());
        assert_eq!(keep, one_bernoulli(0.7));
    }

    #[test]
    fn estimate_uses_threshold_and_map_length() {
        let mut s = one_bernoulli(0.4);
        assert!(estimate(&s, &FilterSettings::default()).is_empty());
        s = predict(&one_bernoulli(0.9), &motion(0.9), &PoissonIntensity::default()).unwrap();
        s.bernoullis[0].length_probs = vec![0.2, 0.8];
        let e = estimate(&s, &FilterSettings::default());
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].states.len(), 2);
        assert!(estimate(&TrajectoryPmb::empty(0), &FilterSettings::default()).is_empty());
    }

    #[test]
    fn empty_run_is_prior() {
        let cfg = crate::sim::tests_support::cfg();
        let model = FilterModel::from_scenario(&cfg).unwrap();
        let out = run_filter(&[], &[], 0, &cfg.sensors[0], &model, &FilterSettings::default()).unwrap();
        assert_eq!(out, TrajectoryPmb::empty(0));
    }
}
