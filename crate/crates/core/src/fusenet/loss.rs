//! Multi-Bernoulli negative log-likelihood under the best single association.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix4};

use super::tape::Mat;
use crate::assign;
use crate::error::{Error, Result};
use crate::linalg::{gaussian_logpdf4, Cov4, State};
use crate::mb::FusionOutput;

/// Cost of a ground-truth object left without a matching component.
pub const DEFAULT_UNMATCHED_PENALTY: f64 = 20.0;

/// Standard deviation of the covariance head at zero raw output.
pub const COV_ORIGIN_STD: f64 = 0.1;

/// Strictly-lower entries of the Cholesky factor, in raw-output order after
/// the four log-diagonal entries.
pub const LOWER_PAIRS: [(usize, usize); 6] = [(1, 0), (2, 0), (2, 1), (3, 0), (3, 1), (3, 2)];

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Lower-triangular factor from the ten raw covariance-head outputs:
/// `L = s0 * (diag(exp(d)) + strictly_lower(n))`.
pub fn cov_factor(raw: &[f64], sigma0: f64) -> Matrix4<f64> {
    let mut l = Matrix4::zeros();
    for i in 0..4 {
        l[(i, i)] = sigma0 * raw[i].exp();
    }
    for (k, &(i, j)) in LOWER_PAIRS.iter().enumerate() {
        l[(i, j)] = sigma0 * raw[4 + k];
    }
    l
}

pub fn cov_from_raw(raw: &[f64], sigma0: f64) -> Cov4 {
    let l = cov_factor(raw, sigma0);
    l * l.transpose()
}

/// Loss value, chosen association and gradients with respect to the raw
/// head outputs.
#[derive(Debug, Clone)]
pub struct RawNll {
    pub loss: f64,
    /// `matching[i] = Some(j)` when component `i` explains truth `j`.
    pub matching: Vec<Option<usize>>,
    pub grad_logits: Mat,
    pub grad_mean: Mat,
    pub grad_raw: Mat,
}

struct GaussTerm {
    nll: f64,
    grad_mean: [f64; 4],
    grad_raw: [f64; 10],
}

fn gauss_term(y: &State, mean: &[f64], raw: &[f64], sigma0: f64) -> Option<GaussTerm> {
    let l = cov_factor(raw, sigma0);
    let delta = y - State::from_column_slice(mean);
    let z = l.solve_lower_triangular(&delta)?;
    let v = l.tr_solve_lower_triangular(&z)?;
    let logdet_half: f64 = (0..4).map(|i| l[(i, i)].ln()).sum();
    let nll = 0.5 * z.dot(&z) + logdet_half + 2.0 * (2.0 * PI).ln();
    let mut grad_raw = [0.0; 10];
    for i in 0..4 {
        grad_raw[i] = 1.0 - v[i] * z[i] * l[(i, i)];
    }
    for (k, &(i, j)) in LOWER_PAIRS.iter().enumerate() {
        grad_raw[4 + k] = -v[i] * z[j] * sigma0;
    }
    Some(GaussTerm {
        nll,
        grad_mean: [-v[0], -v[1], -v[2], -v[3]],
        grad_raw,
    })
}

/// MB NLL of `truth` under components given as raw head outputs
/// (`logits: k x 1`, `mean: k x 4`, `raw: k x 10`).
pub fn raw_nll(logits: &Mat, mean: &Mat, raw: &Mat, truth: &[State], penalty: f64, sigma0: f64) -> RawNll {
    let k = logits.nrows();
    let n = truth.len();
    let mut terms: Vec<Vec<Option<GaussTerm>>> = Vec::with_capacity(k);
    let mut pair = DMatrix::from_element(k, n, f64::INFINITY);
    for i in 0..k {
        let m = mean.row(i);
        let r = raw.row(i);
        let row: Vec<Option<GaussTerm>> = truth
            .iter()
            .map(|y| {
                gauss_term(
                    y,
                    m.as_slice().expect("contiguous"),
                    r.as_slice().expect("contiguous"),
                    sigma0,
                )
            })
            .collect();
        for (j, t) in row.iter().enumerate() {
            if let Some(t) = t {
                pair[(i, j)] = softplus(-logits[(i, 0)]) + t.nll;
            }
        }
        terms.push(row);
    }
    let row_miss: Vec<f64> = (0..k).map(|i| softplus(logits[(i, 0)])).collect();
    let col_miss = vec![penalty; n];
    let sol = assign::partial(&pair, &row_miss, &col_miss).expect("unmatched slots are always feasible");

    let mut grad_logits = Mat::zeros((k, 1));
    let mut grad_mean = Mat::zeros((k, 4));
    let mut grad_raw = Mat::zeros((k, 10));
    for (i, m) in sol.rows.iter().enumerate() {
        let r = sigmoid(logits[(i, 0)]);
        match m {
            Some(j) => {
                grad_logits[(i, 0)] = r - 1.0;
                let t = terms[i][*j].as_ref().expect("finite matched pair");
                for c in 0..4 {
                    grad_mean[(i, c)] = t.grad_mean[c];
                }
                for c in 0..10 {
                    grad_raw[(i, c)] = t.grad_raw[c];
                }
            }
            None => grad_logits[(i, 0)] = r,
        }
    }
    RawNll {
        loss: sol.cost,
        matching: sol.rows,
        grad_logits,
        grad_mean,
        grad_raw,
    }
}

/// MB NLL of `truth` under `output`, approximated by its best association.
pub fn mb_nll_loss(output: &FusionOutput, truth: &[State], penalty: f64) -> Result<f64> {
    let k = output.components.len();
    let mut pair = DMatrix::from_element(k, truth.len(), f64::INFINITY);
    for (i, c) in output.components.iter().enumerate() {
        if c.cov.cholesky().is_none() {
            return Err(Error::SingularCovariance {
                component: i.to_string(),
                what: "covariance is not positive definite".into(),
            });
        }
        for (j, y) in truth.iter().enumerate() {
            let lp = gaussian_logpdf4(y, &c.mean, &c.cov).expect("checked above");
            pair[(i, j)] = -c.existence.ln() - lp;
        }
    }
    let row_miss: Vec<f64> = output.components.iter().map(|c| -(1.0 - c.existence).ln()).collect();
    let col_miss = vec![penalty; truth.len()];
    Ok(assign::partial(&pair, &row_miss, &col_miss).map_or(f64::INFINITY, |a| a.cost))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mb::BernoulliComponent;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_raw(rng: &mut ChaCha8Rng, k: usize) -> (Mat, Mat, Mat) {
        (
            Mat::from_shape_fn((k, 1), |_| rng.random_range(-3.0..3.0)),
            Mat::from_shape_fn((k, 4), |_| rng.random_range(-1.0..1.0)),
            Mat::from_shape_fn((k, 10), |_| rng.random_range(-0.5..0.5)),
        )
    }

    fn to_output(logits: &Mat, mean: &Mat, raw: &Mat) -> FusionOutput {
        FusionOutput {
            components: (0..logits.nrows())
                .map(|i| BernoulliComponent {
                    existence: sigmoid(logits[(i, 0)]),
                    mean: State::from_iterator(mean.row(i).iter().copied()),
                    cov: cov_from_raw(raw.row(i).as_slice().unwrap(), COV_ORIGIN_STD),
                })
                .collect(),
        }
    }

    fn brute(out: &FusionOutput, truth: &[State], penalty: f64) -> f64 {
        // every injective map truth -> component or "unmatched"
        fn rec(out: &FusionOutput, truth: &[State], j: usize, used: &mut Vec<bool>, acc: f64, p: f64, best: &mut f64) {
            if j == truth.len() {
                let miss: f64 = out
                    .components
                    .iter()
                    .zip(used.iter())
                    .filter(|(_, u)| !**u)
                    .map(|(c, _)| -(1.0 - c.existence).ln())
                    .sum();
                *best = best.min(acc + miss);
                return;
            }
            rec(out, truth, j + 1, used, acc + p, p, best);
            for i in 0..out.components.len() {
                if !used[i] {
                    let c = &out.components[i];
                    let t = -c.existence.ln() - gaussian_logpdf4(&truth[j], &c.mean, &c.cov).unwrap();
                    used[i] = true;
                    rec(out, truth, j + 1, used, acc + t, p, best);
                    used[i] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(out, truth, 0, &mut vec![false; out.len()], 0.0, penalty, &mut best);
        best
    }

    #[test]
    fn perfect_match_limit() {
        let out = FusionOutput {
            components: vec![BernoulliComponent {
                existence: 1.0 - 1e-15,
                mean: State::new(1.0, 2.0, 0.0, 0.0),
                cov: Cov4::identity() * 0.5,
            }],
        };
        let v = mb_nll_loss(&out, &[State::new(1.0, 2.0, 0.0, 0.0)], 20.0).unwrap();
        let expect = 0.5 * ((2.0 * PI * 0.5f64).powi(4)).ln();
        assert!((v - expect).abs() < 1e-9);
    }

    #[test]
    fn empty_truth_vanishing_existence() {
        let mut out = to_output(
            &Mat::from_elem((3, 1), -40.0),
            &Mat::zeros((3, 4)),
            &Mat::zeros((3, 10)),
        );
        assert!(mb_nll_loss(&out, &[], 20.0).unwrap() < 1e-15);
        out.components.clear();
        assert_eq!(mb_nll_loss(&out, &[State::zeros()], 7.0).unwrap(), 7.0);
    }

    #[test]
    fn matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let k = rng.random_range(0..=3);
            let n = rng.random_range(0..=3);
            let (lg, mu, raw) = rand_raw(&mut rng, k);
            let truth: Vec<State> = (0..n)
                .map(|_| State::from_fn(|_, _| rng.random_range(-0.5..0.5)))
                .collect();
            let out = to_output(&lg, &mu, &raw);
            let want = brute(&out, &truth, DEFAULT_UNMATCHED_PENALTY);
            let got = mb_nll_loss(&out, &truth, DEFAULT_UNMATCHED_PENALTY).unwrap();
            let got_raw = raw_nll(&lg, &mu, &raw, &truth, DEFAULT_UNMATCHED_PENALTY, COV_ORIGIN_STD).loss;
            assert!((want - got).abs() < 1e-8 * (1.0 + want.abs()), "{want} vs {got}");
            assert!(
                (want - got_raw).abs() < 1e-8 * (1.0 + want.abs()),
                "{want} vs {got_raw}"
            );
        }
    }

    #[test]
    fn cov_origin_is_scaled_identity() {
        let c = cov_from_raw(&[0.0; 10], COV_ORIGIN_STD);
        assert!((c - Cov4::identity() * COV_ORIGIN_STD.powi(2)).norm() < 1e-18);
    }

    #[test]
    fn rejects_non_pd() {
        let out = FusionOutput {
            components: vec![BernoulliComponent {
                existence: 0.5,
                mean: State::zeros(),
                cov: Cov4::zeros(),
            }],
        };
        assert!(matches!(
            mb_nll_loss(&out, &[], 20.0),
            Err(Error::SingularCovariance { .. })
        ));
    }
}
