//! Conversion of per-sensor trajectory multi-Bernoulli densities into the
//! flat vector sequence consumed by the fusion network.
//!
//! Vector layout (`BASE_DIM = 15`):
//!
//! | index  | content                                         |
//! |--------|-------------------------------------------------|
//! | 0..4   | state mean `[px, py, vx, vy]`                   |
//! | 4..14  | covariance upper triangle, row-major            |
//! | 14     | marginal existence `r * w_j`                    |
//!
//! The pose-augmented layout (`POSE_DIM = 18`) inserts the sensor position
//! (2) and orientation (1) at 14..17 and moves the existence to 17.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{Cov4, State};
use crate::sim::SensorTrack;
use crate::tpmb::{TrajectoryBernoulli, TrajectoryPmb};

pub const BASE_DIM: usize = 15;
pub const POSE_DIM: usize = 18;

/// Row-major `(i, j)`, `j >= i` index pairs of a 4x4 upper triangle.
pub const UPPER_PAIRS: [(usize, usize); 10] = [
    (0, 0),
    (0, 1),
    (0, 2),
    (0, 3),
    (1, 1),
    (1, 2),
    (1, 3),
    (2, 2),
    (2, 3),
    (3, 3),
];

#[derive(Debug, Clone, PartialEq)]
pub struct InputVector {
    pub values: Vec<f64>,
    /// Absolute time step `t^{s,i} + j - 1`.
    pub time: usize,
    /// 1-based position inside the trajectory.
    pub traj_index: usize,
    /// 0-based sensor index.
    pub sensor: usize,
}

impl InputVector {
    pub fn state(&self) -> State {
        State::from_column_slice(&self.values[0..4])
    }

    pub fn cov(&self) -> Cov4 {
        let mut c = [0.0; 10];
        c.copy_from_slice(&self.values[4..14]);
        devectorize_upper_triangle(&c)
    }

    pub fn existence(&self) -> f64 {
        *self.values.last().expect("nonempty vector")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputSequence {
    pub dim: usize,
    pub vectors: Vec<InputVector>,
}

impl InputSequence {
    pub fn empty(dim: usize) -> Self {
        InputSequence {
            dim,
            vectors: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

pub fn prune_bernoullis(mbs: &[TrajectoryBernoulli], p_ber: f64) -> Vec<TrajectoryBernoulli> {
    mbs.iter().filter(|b| b.existence >= p_ber).cloned().collect()
}

/// Per-step 4x4 diagonal blocks of a stacked `4l x 4l` trajectory covariance.
pub fn extract_block_covariances(p: &DMatrix<f64>, len: usize) -> Result<Vec<Cov4>> {
    if p.nrows() != 4 * len || p.ncols() != 4 * len {
        return Err(Error::InvalidArgument(format!(
            "covariance is {}x{}, expected {}x{}",
            p.nrows(),
            p.ncols(),
            4 * len,
            4 * len
        )));
    }
    Ok((0..len)
        .map(|j| p.fixed_view::<4, 4>(4 * j, 4 * j).into_owned())
        .collect())
}

pub fn vectorize_upper_triangle(c: &Cov4) -> Result<[f64; 10]> {
    for i in 0..4 {
        for j in (i + 1)..4 {
            if (c[(i, j)] - c[(j, i)]).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "covariance block not symmetric at ({i},{j})"
                )));
            }
        }
    }
    let mut out = [0.0; 10];
    for (k, &(i, j)) in UPPER_PAIRS.iter().enumerate() {
        out[k] = c[(i, j)];
    }
    Ok(out)
}

pub fn devectorize_upper_triangle(c: &[f64; 10]) -> Cov4 {
    let mut m = Cov4::zeros();
    for (k, &(i, j)) in UPPER_PAIRS.iter().enumerate() {
        m[(i, j)] = c[k];
        m[(j, i)] = c[k];
    }
    m
}

pub fn marginal_existence(r: f64, w: &[f64]) -> Vec<f64> {
    w.iter().map(|wj| r * wj).collect()
}

/// Flatten `S` trajectory MB densities into one sequence, ordered by sensor,
/// then Bernoulli, then step within the trajectory.
///
/// `tracks[s]` supplies the sensor poses used by the pose-augmented layout.
pub fn build_sequence(
    pmbs: &[TrajectoryPmb],
    tracks: &[SensorTrack],
    p_ber: f64,
    with_pose: bool,
) -> Result<InputSequence> {
    if with_pose && tracks.len() < pmbs.len() {
        return Err(Error::InvalidArgument("missing sensor poses".into()));
    }
    let horizon = pmbs.first().map(|p| p.time).unwrap_or(0);
    if pmbs.iter().any(|p| p.time != horizon) {
        return Err(Error::InvalidArgument(
            "sensor densities have different horizons".into(),
        ));
    }
    let dim = if with_pose { POSE_DIM } else { BASE_DIM };
    let mut vectors = Vec::new();
    for (s, pmb) in pmbs.iter().enumerate() {
        for b in prune_bernoullis(&pmb.bernoullis, p_ber) {
            let len = b.max_length();
            let covs = extract_block_covariances(&b.cov, len)?;
            let w_hat = marginal_existence(b.existence, &b.length_probs);
            for (j, cov) in covs.iter().enumerate() {
                let time = b.start_time + j;
                let mut values = Vec::with_capacity(dim);
                values.extend_from_slice(b.state_mean(j).as_slice());
                values.extend_from_slice(&vectorize_upper_triangle(cov)?);
                if with_pose {
                    let pose = tracks[s].pose(time);
                    values.push(pose.position.x);
                    values.push(pose.position.y);
                    values.push(pose.orientation);
                }
                values.push(w_hat[j]);
                vectors.push(InputVector {
                    values,
                    time,
                    traj_index: j + 1,
                    sensor: s,
                });
            }
        }
    }
    Ok(InputSequence { dim, vectors })
}

/// Affine map from world coordinates into the unit box spanned by the
/// fields of view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    pub min: [f64; 2],
    pub scale: [f64; 2],
}

impl Normalizer {
    /// `bounds = [xmin, ymin, xmax, ymax]`.
    pub fn from_bounds(bounds: [f64; 4]) -> Result<Self> {
        let sx = bounds[2] - bounds[0];
        let sy = bounds[3] - bounds[1];
        if !(sx > 0.0 && sy > 0.0 && sx.is_finite() && sy.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "degenerate field-of-view bounds {bounds:?}"
            )));
        }
        Ok(Normalizer {
            min: [bounds[0], bounds[1]],
            scale: [sx, sy],
        })
    }

    pub fn bounds(&self) -> [f64; 4] {
        [
            self.min[0],
            self.min[1],
            self.min[0] + self.scale[0],
            self.min[1] + self.scale[1],
        ]
    }

    /// Scale of state coordinate `k` (positions and velocities share axes).
    fn coord_scale(&self, k: usize) -> f64 {
        self.scale[k % 2]
    }

    pub fn state_to_unit(&self, x: &State) -> State {
        State::new(
            (x[0] - self.min[0]) / self.scale[0],
            (x[1] - self.min[1]) / self.scale[1],
            x[2] / self.scale[0],
            x[3] / self.scale[1],
        )
    }

    pub fn state_to_world(&self, x: &State) -> State {
        State::new(
            x[0] * self.scale[0] + self.min[0],
            x[1] * self.scale[1] + self.min[1],
            x[2] * self.scale[0],
            x[3] * self.scale[1],
        )
    }

    pub fn cov_to_unit(&self, c: &Cov4) -> Cov4 {
        Cov4::from_fn(|i, j| c[(i, j)] / (self.coord_scale(i) * self.coord_scale(j)))
    }

    pub fn cov_to_world(&self, c: &Cov4) -> Cov4 {
        Cov4::from_fn(|i, j| c[(i, j)] * self.coord_scale(i) * self.coord_scale(j))
    }

    /// log |det| of the world-from-unit Jacobian on the 4-D state.
    pub fn log_jacobian(&self) -> f64 {
        2.0 * (self.scale[0].ln() + self.scale[1].ln())
    }

    fn map_vector(&self, v: &[f64], forward: bool) -> Vec<f64> {
        let mut out = v.to_vec();
        let s = |k: usize| self.coord_scale(k);
        for k in 0..4 {
            let off = if k < 2 { self.min[k] } else { 0.0 };
            out[k] = if forward {
                (v[k] - off) / s(k)
            } else {
                v[k] * s(k) + off
            };
        }
        for (idx, &(i, j)) in UPPER_PAIRS.iter().enumerate() {
            let f = s(i) * s(j);
            out[4 + idx] = if forward { v[4 + idx] / f } else { v[4 + idx] * f };
        }
        if v.len() == POSE_DIM {
            for k in 0..2 {
                out[14 + k] = if forward {
                    (v[14 + k] - self.min[k]) / self.scale[k]
                } else {
                    v[14 + k] * self.scale[k] + self.min[k]
                };
            }
            out[16] = if forward { v[16] / PI } else { v[16] * PI };
        }
        out
    }

    pub fn normalize(&self, seq: &InputSequence) -> InputSequence {
        self.apply(seq, true)
    }

    pub fn denormalize(&self, seq: &InputSequence) -> InputSequence {
        self.apply(seq, false)
    }

    fn apply(&self, seq: &InputSequence, forward: bool) -> InputSequence {
        InputSequence {
            dim: seq.dim,
            vectors: seq
                .vectors
                .iter()
                .map(|v| InputVector {
                    values: self.map_vector(&v.values, forward),
                    ..v.clone()
                })
                .collect(),
        }
    }
}

/// Normalise a sequence into the unit box given by `bounds`.
pub fn normalize(seq: &InputSequence, bounds: [f64; 4]) -> Result<InputSequence> {
    Ok(Normalizer::from_bounds(bounds)?.normalize(seq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Pos;
    use crate::sim::Pose;
    use nalgebra::DVector;

    fn bern(r: f64, start: usize, w: Vec<f64>) -> TrajectoryBernoulli {
        let l = w.len();
        TrajectoryBernoulli {
            existence: r,
            start_time: start,
            length_probs: w,
            mean: DVector::from_fn(4 * l, |i, _| i as f64),
            cov: DMatrix::identity(4 * l, 4 * l),
        }
    }

    fn pmb(sensor: usize, bs: Vec<TrajectoryBernoulli>, time: usize) -> TrajectoryPmb {
        TrajectoryPmb {
            poisson: Default::default(),
            bernoullis: bs,
            sensor,
            time,
        }
    }

    #[test]
    fn pruning_examples() {
        let bs = vec![bern(0.9, 1, vec![1.0]), bern(0.05, 1, vec![1.0])];
        assert_eq!(prune_bernoullis(&bs, 0.1).len(), 1);
        assert_eq!(prune_bernoullis(&bs, 0.0).len(), 2);
        let bs = vec![bern(1.0, 1, vec![1.0]), bern(0.999, 1, vec![1.0])];
        let kept = prune_bernoullis(&bs, 1.0);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].existence, 1.0);
    }

    #[test]
    fn block_extraction() {
        let p = DMatrix::from_fn(4, 4, |i, j| (i + j) as f64);
        assert_eq!(
            extract_block_covariances(&p, 1).unwrap()[0],
            Cov4::from_fn(|i, j| (i + j) as f64)
        );
        let a = Cov4::identity() * 2.0;
        let b = Cov4::identity() * 3.0;
        let mut bd = DMatrix::zeros(8, 8);
        bd.view_mut((0, 0), (4, 4)).copy_from(&a);
        bd.view_mut((4, 4), (4, 4)).copy_from(&b);
        assert_eq!(extract_block_covariances(&bd, 2).unwrap(), vec![a, b]);
        assert!(extract_block_covariances(&bd, 3).is_err());
    }

    #[test]
    fn vectorize_identity_and_zero() {
        let v = vectorize_upper_triangle(&Cov4::identity()).unwrap();
        assert_eq!(v, [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(vectorize_upper_triangle(&Cov4::zeros()).unwrap(), [0.0; 10]);
        let mut asym = Cov4::identity();
        asym[(0, 1)] = 1e-6;
        assert!(vectorize_upper_triangle(&asym).is_err());
    }

    #[test]
    fn marginal_existence_examples() {
        assert_eq!(marginal_existence(0.8, &[0.5, 0.5]), vec![0.4, 0.4]);
        assert_eq!(marginal_existence(0.0, &[0.3, 0.7]), vec![0.0, 0.0]);
        assert_eq!(marginal_existence(1.0, &[0.2, 0.3, 0.5]), vec![0.2, 0.3, 0.5]);
    }

    #[test]
    fn sequence_length_and_metadata() {
        let a = pmb(0, vec![bern(0.9, 2, vec![0.2, 0.3, 0.5])], 4);
        let b = pmb(1, vec![bern(0.9, 3, vec![0.5, 0.5]), bern(0.5, 1, vec![0.25; 4])], 4);
        let seq = build_sequence(&[a.clone(), b], &[], 0.1, false).unwrap();
        assert_eq!(seq.len(), 9);
        assert_eq!(seq.dim, BASE_DIM);
        let first = &seq.vectors[0];
        assert_eq!((first.time, first.traj_index, first.sensor), (2, 1, 0));
        assert_eq!(seq.vectors[3].sensor, 1);
        assert_eq!(seq.vectors[4].time, 4);
        let none = build_sequence(&[a], &[], 0.95, false).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn hand_assembled_vector() {
        let mut b = bern(0.8, 1, vec![1.0]);
        b.mean = DVector::from_column_slice(&[1.0, 2.0, 3.0, 4.0]);
        b.cov = DMatrix::from_row_slice(
            4,
            4,
            &[
                4.0, 0.1, 0.2, 0.3, 0.1, 5.0, 0.4, 0.5, 0.2, 0.4, 6.0, 0.6, 0.3, 0.5, 0.6, 7.0,
            ],
        );
        let track = SensorTrack {
            poses: vec![Pose {
                position: Pos::new(-1.0, 9.0),
                orientation: 0.25,
            }],
        };
        let seq = build_sequence(&[pmb(0, vec![b], 1)], &[track], 0.1, true).unwrap();
        let expect = vec![
            1.0, 2.0, 3.0, 4.0, 4.0, 0.1, 0.2, 0.3, 5.0, 0.4, 0.5, 6.0, 0.6, 7.0, -1.0, 9.0, 0.25, 0.8,
        ];
        assert_eq!(seq.vectors[0].values, expect);
    }

    #[test]
    fn normalisation_edges() {
        let n = Normalizer::from_bounds([-10.0, 0.0, 30.0, 20.0]).unwrap();
        let lo = n.state_to_unit(&State::new(-10.0, 0.0, 0.0, 0.0));
        let hi = n.state_to_unit(&State::new(30.0, 20.0, 0.0, 0.0));
        assert_eq!((lo[0], lo[1]), (0.0, 0.0));
        assert_eq!((hi[0], hi[1]), (1.0, 1.0));
        assert!(Normalizer::from_bounds([0.0, 0.0, 0.0, 1.0]).is_err());
    }
}
