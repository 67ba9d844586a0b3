//! Model-based fusion baseline: marginalise each local trajectory density to
//! the final time, associate components across sensors, and fuse matched
//! Gaussians by covariance intersection.

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::assign;
use crate::error::{Error, Result};
use crate::linalg::{mahalanobis2, symmetrize4, Cov4, Pos, State};
use crate::mb::{BernoulliComponent, Estimate, FusionOutput};
use crate::sim::{in_fov, Pose, SensorConfig};
use crate::tpmb::{GaussianComponent, PoissonIntensity, TrajectoryPmb};

/// Default existence threshold for baseline estimates.
pub const ESTIMATE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionSettings {
    /// Squared Mahalanobis gate on position for cross-sensor association.
    pub gate: f64,
    /// Sweeps of pairwise weight refinement for clusters of three or more.
    pub ci_sweeps: usize,
}

impl Default for FusionSettings {
    fn default() -> Self {
        FusionSettings {
            gate: 13.8,
            ci_sweeps: 50,
        }
    }
}

/// One sensor's PMB over current object states.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentPmb {
    pub poisson: PoissonIntensity,
    pub bernoullis: Vec<BernoulliComponent>,
    pub sensor: SensorConfig,
    pub pose: Pose,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FusedDensity {
    pub mb: FusionOutput,
    pub poisson: PoissonIntensity,
}

/// Keep the trajectories alive at `time`, weighting existence by the
/// probability that the trajectory lasts through `time`.
pub fn marginalize_to_current(
    tpmb: &TrajectoryPmb,
    time: usize,
    sensor: &SensorConfig,
    pose: Pose,
) -> Result<CurrentPmb> {
    if tpmb.time != time {
        return Err(Error::InvalidArgument(format!(
            "density is at time {}, asked for {time}",
            tpmb.time
        )));
    }
    let bernoullis = tpmb
        .bernoullis
        .iter()
        .filter(|b| b.end_time() == time)
        .map(|b| BernoulliComponent {
            existence: b.existence * b.alive_mass(time),
            mean: b.last_mean(),
            cov: b.last_cov(),
        })
        .collect();
    Ok(CurrentPmb {
        poisson: tpmb.poisson.clone(),
        bernoullis,
        sensor: sensor.clone(),
        pose,
    })
}

fn position_cov(c: &Cov4) -> Matrix2<f64> {
    c.fixed_view::<2, 2>(0, 0).into_owned()
}

fn position(x: &State) -> Pos {
    Pos::new(x[0], x[1])
}

struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.parent[r] != r {
            r = self.parent[r];
        }
        let mut c = x;
        while self.parent[c] != r {
            let next = self.parent[c];
            self.parent[c] = r;
            c = next;
        }
        r
    }
}

/// `trace((sum_s w_s P_s)^-1)` for information matrices `P_s`.
fn ci_trace(info: &[Cov4], w: &[f64]) -> f64 {
    let total: Cov4 = info.iter().zip(w).map(|(p, wi)| p * *wi).sum();
    total.try_inverse().map_or(f64::INFINITY, |c| c.trace())
}

/// Minimise a unimodal function on `[0, 1]` by golden-section search,
/// comparing against both endpoints.
fn golden_min(f: impl Fn(f64) -> f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (0.0f64, 1.0f64);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    [(0.0, f(0.0)), (1.0, f(1.0)), (mid, f(mid))]
        .into_iter()
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .map(|x| x.0)
        .expect("three candidates")
}

/// Trace-minimising covariance-intersection weights.
pub fn ci_weights(covs: &[Cov4], sweeps: usize) -> Option<Vec<f64>> {
    let info: Vec<Cov4> = covs.iter().map(|c| c.try_inverse()).collect::<Option<_>>()?;
    let n = info.len();
    if n == 1 {
        return Some(vec![1.0]);
    }
    if n == 2 {
        let w = golden_min(|a| ci_trace(&info, &[a, 1.0 - a]));
        return Some(vec![w, 1.0 - w]);
    }
    let mut w = vec![1.0 / n as f64; n];
    let mut best = ci_trace(&info, &w);
    for _ in 0..sweeps {
        let before = best;
        for i in 0..n {
            for j in (i + 1)..n {
                let mass = w[i] + w[j];
                if mass <= 0.0 {
                    continue;
                }
                let eval = |a: f64| {
                    let mut trial = w.clone();
                    trial[i] = a * mass;
                    trial[j] = (1.0 - a) * mass;
                    ci_trace(&info, &trial)
                };
                let a = golden_min(eval);
                let value = eval(a);
                if value < best {
                    best = value;
                    w[i] = a * mass;
                    w[j] = (1.0 - a) * mass;
                }
            }
        }
        if before - best <= 1e-12 * best.abs() {
            break;
        }
    }
    Some(w)
}

/// Covariance intersection with the given weights.
pub fn covariance_intersection(means: &[State], covs: &[Cov4], weights: &[f64]) -> Option<(State, Cov4)> {
    let mut info = Cov4::zeros();
    let mut vec = State::zeros();
    for ((m, c), w) in means.iter().zip(covs).zip(weights) {
        let inv = c.try_inverse()?;
        info += inv * *w;
        vec += inv * m * *w;
    }
    let cov = symmetrize4(&info.try_inverse()?);
    Some((cov * vec, cov))
}

/// Fuse local current-time PMBs into one global density.
pub fn fuse(locals: &[CurrentPmb], settings: &FusionSettings) -> Result<FusedDensity> {
    if locals.is_empty() {
        return Err(Error::InvalidArgument("fusion needs at least one local density".into()));
    }
    let offsets: Vec<usize> = locals
        .iter()
        .scan(0, |acc, l| {
            let o = *acc;
            *acc += l.bernoullis.len();
            Some(o)
        })
        .collect();
    let total = offsets.last().unwrap() + locals.last().unwrap().bernoullis.len();
    let node_sensor: Vec<usize> = (0..locals.len())
        .flat_map(|s| std::iter::repeat_n(s, locals[s].bernoullis.len()))
        .collect();

    let mut edges: Vec<(f64, usize, usize)> = Vec::new();
    for a in 0..locals.len() {
        for b in (a + 1)..locals.len() {
            let (ba, bb) = (&locals[a].bernoullis, &locals[b].bernoullis);
            if ba.is_empty() || bb.is_empty() {
                continue;
            }
            let mut d2 = nalgebra::DMatrix::from_element(ba.len(), bb.len(), f64::INFINITY);
            for (i, x) in ba.iter().enumerate() {
                for (j, y) in bb.iter().enumerate() {
                    let s = position_cov(&x.cov) + position_cov(&y.cov);
                    if let Some(v) = mahalanobis2(&(position(&x.mean) - position(&y.mean)), &s) {
                        if v < settings.gate {
                            d2[(i, j)] = v;
                        }
                    }
                }
            }
            let half = 0.5 * settings.gate;
            let sol = assign::partial(&d2, &vec![half; ba.len()], &vec![half; bb.len()])
                .expect("unmatched slots are always feasible");
            for (i, m) in sol.rows.iter().enumerate() {
                if let Some(j) = m {
                    edges.push((d2[(i, *j)], offsets[a] + i, offsets[b] + *j));
                }
            }
        }
    }
    edges.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

    let mut sets = DisjointSets {
        parent: (0..total).collect(),
    };
    let mut members: Vec<Vec<usize>> = (0..total).map(|i| vec![i]).collect();
    for (_, u, v) in edges {
        let (ru, rv) = (sets.find(u), sets.find(v));
        if ru == rv {
            continue;
        }
        let clash = members[ru]
            .iter()
            .any(|&x| members[rv].iter().any(|&y| node_sensor[x] == node_sensor[y]));
        if clash {
            continue;
        }
        let (keep, gone) = if ru < rv { (ru, rv) } else { (rv, ru) };
        sets.parent[gone] = keep;
        let moved = std::mem::take(&mut members[gone]);
        members[keep].extend(moved);
    }

    let component = |node: usize| {
        let s = node_sensor[node];
        (s, &locals[s].bernoullis[node - offsets[s]])
    };
    let mut mb = FusionOutput::default();
    for (root, group) in members.iter().enumerate() {
        if sets.find(root) != root {
            continue;
        }
        let mut group = group.clone();
        group.sort_unstable();
        if group.len() == 1 {
            mb.components.push(component(group[0]).1.clone());
            continue;
        }
        let parts: Vec<(usize, &BernoulliComponent)> = group.iter().map(|&n| component(n)).collect();
        let means: Vec<State> = parts.iter().map(|(_, c)| c.mean).collect();
        let covs: Vec<Cov4> = parts.iter().map(|(_, c)| c.cov).collect();
        let singular = |node: usize| {
            let (s, _) = component(node);
            Error::SingularCovariance {
                component: format!("sensor {s} bernoulli {}", node - offsets[s]),
                what: "covariance intersection needs invertible covariances".into(),
            }
        };
        if let Some(bad) = group.iter().find(|&&n| component(n).1.cov.try_inverse().is_none()) {
            return Err(singular(*bad));
        }
        let weights = ci_weights(&covs, settings.ci_sweeps).ok_or_else(|| singular(group[0]))?;
        let (mean, cov) = covariance_intersection(&means, &covs, &weights).ok_or_else(|| singular(group[0]))?;
        let at = position(&mean);
        let covering: Vec<f64> = parts
            .iter()
            .filter(|(s, _)| in_fov(&locals[*s].pose, &locals[*s].sensor, &at))
            .map(|(_, c)| c.existence)
            .collect();
        let rs: Vec<f64> = if covering.is_empty() {
            parts.iter().map(|(_, c)| c.existence).collect()
        } else {
            covering
        };
        let existence = 1.0 - rs.iter().map(|r| 1.0 - r).product::<f64>();
        mb.components.push(BernoulliComponent { existence, mean, cov });
    }

    let scale = 1.0 / locals.len() as f64;
    let poisson = PoissonIntensity {
        components: locals
            .iter()
            .flat_map(|l| {
                l.poisson
                    .components
                    .iter()
                    .filter(|c| in_fov(&l.pose, &l.sensor, &position(&c.mean)))
                    .map(|c| GaussianComponent {
                        weight: c.weight * scale,
                        ..c.clone()
                    })
            })
            .collect(),
    };
    Ok(FusedDensity { mb, poisson })
}

pub fn extract_estimates(fused: &FusedDensity, threshold: f64) -> Vec<Estimate> {
    fused.mb.extract(threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tpmb::TrajectoryBernoulli;
    use nalgebra::{DMatrix, DVector};
    use std::f64::consts::PI;

    fn sensor() -> SensorConfig {
        SensorConfig {
            position: [0.0, 0.0],
            orientation: 0.0,
            fov_bearing: 2.0 * PI,
            fov_radius: 100.0,
            mobile: false,
            motion_noise_std: 0.0,
            initial_velocity: [0.0, 0.0],
        }
    }

    fn pose() -> Pose {
        Pose {
            position: Pos::zeros(),
            orientation: 0.0,
        }
    }

    fn local(comps: Vec<BernoulliComponent>) -> CurrentPmb {
        CurrentPmb {
            poisson: PoissonIntensity::default(),
            bernoullis: comps,
            sensor: sensor(),
            pose: pose(),
        }
    }

    fn comp(r: f64, x: f64, cov: Cov4) -> BernoulliComponent {
        BernoulliComponent {
            existence: r,
            mean: State::new(x, 1.0, 0.5, 0.0),
            cov,
        }
    }

    #[test]
    fn marginalisation_examples() {
        let mut b = TrajectoryBernoulli::new_single(0.9, 1, State::new(1.0, 2.0, 3.0, 4.0), Cov4::identity());
        b.length_probs = vec![0.2, 0.8];
        b.mean = DVector::from_fn(8, |i, _| i as f64);
        b.cov = DMatrix::from_fn(8, 8, |i, j| if i == j { 1.0 + i as f64 } else { 0.0 });
        let dead = TrajectoryBernoulli::new_single(0.9, 1, State::zeros(), Cov4::identity());
        let single = TrajectoryBernoulli::new_single(0.4, 2, State::new(5.0, 6.0, 7.0, 8.0), Cov4::identity() * 3.0);
        let tpmb = TrajectoryPmb {
            poisson: PoissonIntensity::default(),
            bernoullis: vec![b, dead, single],
            sensor: 0,
            time: 2,
        };
        let cur = marginalize_to_current(&tpmb, 2, &sensor(), pose()).unwrap();
        assert_eq!(cur.bernoullis.len(), 2);
        assert!((cur.bernoullis[0].existence - 0.72).abs() < 1e-15);
        assert_eq!(cur.bernoullis[0].mean, State::new(4.0, 5.0, 6.0, 7.0));
        assert_eq!(
            cur.bernoullis[0].cov,
            Cov4::from_diagonal(&State::new(5.0, 6.0, 7.0, 8.0))
        );
        assert_eq!(cur.bernoullis[1].mean, State::new(5.0, 6.0, 7.0, 8.0));
        assert_eq!(cur.bernoullis[1].cov, Cov4::identity() * 3.0);
        assert!(marginalize_to_current(&tpmb, 3, &sensor(), pose()).is_err());
    }

    #[test]
    fn single_sensor_is_identity() {
        let l = local(vec![comp(0.7, 1.0, Cov4::identity()), comp(0.2, 5.0, Cov4::identity())]);
        let f = fuse(std::slice::from_ref(&l), &FusionSettings::default()).unwrap();
        assert_eq!(f.mb.components, l.bernoullis);
    }

    #[test]
    fn identical_components() {
        let c = comp(0.6, 2.0, Cov4::identity() * 0.5);
        let f = fuse(
            &[local(vec![c.clone()]), local(vec![c.clone()])],
            &FusionSettings::default(),
        )
        .unwrap();
        assert_eq!(f.mb.len(), 1);
        let out = &f.mb.components[0];
        assert!((out.mean - c.mean).norm() < 1e-12);
        assert!((out.cov - c.cov).norm() < 1e-12);
        assert!((out.existence - (1.0 - 0.4 * 0.4)).abs() < 1e-15);
    }

    #[test]
    fn ci_puts_all_weight_on_smaller_covariance() {
        let w = ci_weights(&[Cov4::identity(), Cov4::identity() * 2.0], 10).unwrap();
        assert_eq!(w, vec![1.0, 0.0]);
        let f = fuse(
            &[
                local(vec![comp(0.5, 0.0, Cov4::identity())]),
                local(vec![comp(0.5, 0.0, Cov4::identity() * 2.0)]),
            ],
            &FusionSettings::default(),
        )
        .unwrap();
        assert!((f.mb.components[0].cov - Cov4::identity()).norm() < 1e-12);
    }

    #[test]
    fn far_apart_components_stay_separate() {
        let f = fuse(
            &[
                local(vec![comp(0.5, 0.0, Cov4::identity())]),
                local(vec![comp(0.5, 50.0, Cov4::identity())]),
            ],
            &FusionSettings::default(),
        )
        .unwrap();
        assert_eq!(f.mb.len(), 2);
        assert_eq!(f.mb.components[1].mean[0], 50.0);
    }

    #[test]
    fn singular_covariance_reports_component() {
        let mut degenerate = Cov4::identity();
        degenerate[(3, 3)] = 0.0;
        match fuse(
            &[
                local(vec![comp(0.5, 0.0, Cov4::identity())]),
                local(vec![comp(0.5, 0.0, degenerate)]),
            ],
            &FusionSettings::default(),
        ) {
            Err(Error::SingularCovariance { component, .. }) => assert_eq!(component, "sensor 1 bernoulli 0"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn extraction_is_strict() {
        let f = FusedDensity {
            mb: FusionOutput {
                components: vec![comp(0.6, 0.0, Cov4::identity()), comp(0.5, 0.0, Cov4::identity())],
            },
            poisson: PoissonIntensity::default(),
        };
        assert_eq!(extract_estimates(&f, ESTIMATE_THRESHOLD).len(), 1);
        assert!(extract_estimates(&FusedDensity::default(), 0.5).is_empty());
    }
}
