//! GOSPA and PMB negative log-likelihood with their three-way decompositions.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::assign;
use crate::error::{Error, Result};
use crate::linalg::{gaussian_logpdf4, log_sum_exp, State};
use crate::mb::FusionOutput;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub total: f64,
    pub localization: f64,
    pub missed: f64,
    pub false_detection: f64,
}

impl MetricReport {
    pub fn parts_sum(&self) -> f64 {
        self.localization + self.missed + self.false_detection
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GospaConfig {
    pub cutoff: f64,
    pub order: f64,
    pub alpha: f64,
    /// Measure distance on position only rather than the full state.
    pub position_only: bool,
}

impl Default for GospaConfig {
    fn default() -> Self {
        GospaConfig {
            cutoff: 2.0,
            order: 1.0,
            alpha: 2.0,
            position_only: true,
        }
    }
}

impl GospaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff > 0.0) || !(self.order >= 1.0) || !(self.alpha > 0.0 && self.alpha <= 2.0) {
            return Err(Error::Config(format!(
                "GOSPA needs c > 0, p >= 1, 0 < alpha <= 2 (got {self:?})"
            )));
        }
        Ok(())
    }

    pub fn distance(&self, a: &State, b: &State) -> f64 {
        if self.position_only {
            ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
        } else {
            (a - b).norm()
        }
    }
}

/// GOSPA between `estimates` and `truth`.
///
/// The parts are reported on the `p`-th power scale: `localization` is the
/// sum of matched `d^p`, `missed` and `false_detection` are `c^p / alpha`
/// per unmatched truth and estimate. `total` is their sum raised to `1/p`,
/// so for `p = 1` the parts add up to the total.
pub fn gospa(estimates: &[State], truth: &[State], cfg: &GospaConfig) -> Result<MetricReport> {
    cfg.validate()?;
    let penalty = cfg.cutoff.powf(cfg.order) / cfg.alpha;
    let mut pair = DMatrix::from_element(truth.len(), estimates.len(), f64::INFINITY);
    for (i, x) in truth.iter().enumerate() {
        for (j, y) in estimates.iter().enumerate() {
            let d = cfg.distance(x, y);
            if d < cfg.cutoff {
                pair[(i, j)] = d.powf(cfg.order);
            }
        }
    }
    let sol = assign::partial(&pair, &vec![penalty; truth.len()], &vec![penalty; estimates.len()])
        .expect("unmatched slots are always feasible");
    Ok(gospa_from_assignment(
        &pair,
        &sol.rows,
        estimates.len(),
        penalty,
        cfg.order,
    ))
}

/// Decomposed GOSPA value of one fixed assignment `rows[truth] = estimate`.
pub fn gospa_from_assignment(
    pair: &DMatrix<f64>,
    rows: &[Option<usize>],
    num_estimates: usize,
    penalty: f64,
    order: f64,
) -> MetricReport {
    let mut localization = 0.0;
    let mut matched = 0usize;
    for (i, m) in rows.iter().enumerate() {
        if let Some(j) = m {
            localization += pair[(i, *j)];
            matched += 1;
        }
    }
    let missed = penalty * (rows.len() - matched) as f64;
    let false_detection = penalty * (num_estimates - matched) as f64;
    let sum = localization + missed + false_detection;
    MetricReport {
        total: if order == 1.0 { sum } else { sum.powf(1.0 / order) },
        localization,
        missed,
        false_detection,
    }
}

/// Uniform Poisson floor added to a fused MB density before scoring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PppFloor {
    /// Intensity per unit state volume.
    pub intensity: f64,
    /// Surveillance area; the expected PPP count is `intensity * area`.
    pub area: f64,
}

/// Largest number of Bernoulli components scored by exact summation over
/// associations.
pub const EXACT_NLL_MAX_COMPONENTS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct NllResult {
    pub report: MetricReport,
    /// Whether `total` is the exact sum over associations.
    pub exact: bool,
    /// Set when the density vanishes at the ground truth.
    pub diagnostic: Option<String>,
}

struct NllTerms {
    /// `match_cost[(i, j)] = -ln r_i - ln N(y_j; mu_i, S_i)`
    match_cost: DMatrix<f64>,
    /// `-ln(1 - r_i)`
    miss_cost: Vec<f64>,
    /// `-ln(intensity)`
    ppp_cost: f64,
    ppp_mass: f64,
}

fn nll_terms(fused: &FusionOutput, floor: &PppFloor, truth: &[State]) -> Result<NllTerms> {
    let k = fused.components.len();
    let mut match_cost = DMatrix::from_element(k, truth.len(), f64::INFINITY);
    for (i, c) in fused.components.iter().enumerate() {
        if c.cov.cholesky().is_none() {
            return Err(Error::SingularCovariance {
                component: i.to_string(),
                what: "covariance is not positive definite".into(),
            });
        }
        for (j, y) in truth.iter().enumerate() {
            let lp = gaussian_logpdf4(y, &c.mean, &c.cov).expect("checked above");
            match_cost[(i, j)] = -c.existence.ln() - lp;
        }
    }
    Ok(NllTerms {
        match_cost,
        miss_cost: fused.components.iter().map(|c| -(1.0 - c.existence).ln()).collect(),
        ppp_cost: -floor.intensity.ln(),
        ppp_mass: floor.intensity * floor.area,
    })
}

/// `-ln` of the sum over all associations, by dynamic programming over the
/// set of used components.
fn exact_log_sum(t: &NllTerms, n: usize) -> f64 {
    let k = t.miss_cost.len();
    let size = 1usize << k;
    let mut dp = vec![f64::NEG_INFINITY; size];
    dp[0] = 0.0;
    for j in 0..n {
        let mut next = vec![f64::NEG_INFINITY; size];
        for mask in 0..size {
            if dp[mask] == f64::NEG_INFINITY {
                continue;
            }
            let via_ppp = dp[mask] - t.ppp_cost;
            next[mask] = log_sum_exp(&[next[mask], via_ppp]);
            for i in 0..k {
                if mask & (1 << i) == 0 {
                    let v = dp[mask] - t.match_cost[(i, j)];
                    let m = mask | (1 << i);
                    next[m] = log_sum_exp(&[next[m], v]);
                }
            }
        }
        dp = next;
    }
    let terms: Vec<f64> = (0..size)
        .map(|mask| {
            let unused: f64 = (0..k).filter(|i| mask & (1 << i) == 0).map(|i| t.miss_cost[i]).sum();
            dp[mask] - unused
        })
        .collect();
    -log_sum_exp(&terms)
}

/// NLL of the PMB formed by `fused` plus the Poisson floor, at `truth`.
///
/// The decomposition follows the best single association: matched
/// components go to `localization`, truths left to the Poisson floor to
/// `missed`, unmatched components and the floor's expected count to
/// `false_detection`. When the total is exact, its gap to the best
/// association is added to `localization`.
pub fn nll(fused: &FusionOutput, floor: &PppFloor, truth: &[State]) -> Result<NllResult> {
    if !(floor.intensity >= 0.0) || !(floor.area >= 0.0) {
        return Err(Error::InvalidArgument("Poisson floor must be nonnegative".into()));
    }
    let t = nll_terms(fused, floor, truth)?;
    let n = truth.len();
    let k = t.miss_cost.len();
    let col_miss = vec![t.ppp_cost; n];
    let best = assign::partial(&t.match_cost, &t.miss_cost, &col_miss);
    let Some(best) = best else {
        return Ok(NllResult {
            report: MetricReport {
                total: f64::INFINITY,
                localization: f64::INFINITY,
                missed: f64::INFINITY,
                false_detection: f64::INFINITY,
            },
            exact: k <= EXACT_NLL_MAX_COMPONENTS,
            diagnostic: Some(format!(
                "density is zero at the ground truth ({n} objects, {k} components, floor {})",
                floor.intensity
            )),
        });
    };
    let mut localization = 0.0;
    let mut used = vec![false; n];
    let mut false_detection = t.ppp_mass;
    for (i, m) in best.rows.iter().enumerate() {
        match m {
            Some(j) => {
                localization += t.match_cost[(i, *j)];
                used[*j] = true;
            }
            None => false_detection += t.miss_cost[i],
        }
    }
    let missed = t.ppp_cost * used.iter().filter(|u| !**u).count() as f64;
    let best_total = localization + missed + false_detection;
    let exact = k <= EXACT_NLL_MAX_COMPONENTS;
    let total = if exact {
        exact_log_sum(&t, n) + t.ppp_mass
    } else {
        best_total
    };
    let report = MetricReport {
        total,
        localization: localization + (total - best_total),
        missed,
        false_detection,
    };
    let diagnostic = (!total.is_finite()).then(|| "density is zero at the ground truth".to_string());
    Ok(NllResult {
        report,
        exact,
        diagnostic,
    })
}

/// Best-association NLL regardless of the number of components.
pub fn nll_best_association(fused: &FusionOutput, floor: &PppFloor, truth: &[State]) -> Result<f64> {
    let t = nll_terms(fused, floor, truth)?;
    let col_miss = vec![t.ppp_cost; truth.len()];
    Ok(assign::partial(&t.match_cost, &t.miss_cost, &col_miss).map_or(f64::INFINITY, |a| a.cost + t.ppp_mass))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PppSearch {
    pub lower: f64,
    pub upper: f64,
    pub grid_points: usize,
    pub refine_iterations: usize,
}

impl Default for PppSearch {
    fn default() -> Self {
        PppSearch {
            lower: 1e-6,
            upper: 1.0,
            grid_points: 25,
            refine_iterations: 40,
        }
    }
}

/// One validation case for Poisson floor tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct TuningCase {
    pub fused: FusionOutput,
    pub truth: Vec<State>,
    pub area: f64,
}

fn mean_nll(cases: &[TuningCase], intensity: f64) -> Result<f64> {
    let mut sum = 0.0;
    for c in cases {
        let floor = PppFloor {
            intensity,
            area: c.area,
        };
        sum += nll(&c.fused, &floor, &c.truth)?.report.total;
    }
    Ok(sum / cases.len() as f64)
}

/// Floor intensity minimising the mean NLL over `cases`: a logarithmic grid
/// followed by golden-section refinement around the best grid point.
pub fn tune_ppp(cases: &[TuningCase], search: &PppSearch) -> Result<f64> {
    if cases.is_empty() {
        return Err(Error::InvalidArgument("tuning batch is empty".into()));
    }
    if !(search.lower > 0.0 && search.upper >= search.lower) || search.grid_points == 0 {
        return Err(Error::Config(
            "PPP search needs 0 < lower <= upper and a nonempty grid".into(),
        ));
    }
    let (lo, hi) = (search.lower.ln(), search.upper.ln());
    let n = search.grid_points;
    let grid: Vec<f64> = (0..n)
        .map(|i| {
            if n == 1 {
                lo
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect();
    let mut values = Vec::with_capacity(n);
    for g in &grid {
        values.push(mean_nll(cases, g.exp())?);
    }
    let best = (0..n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .expect("nonempty grid");
    let mut best_x = grid[best];
    let mut best_v = values[best];
    if n > 1 {
        let mut a = grid[best.saturating_sub(1)];
        let mut b = grid[(best + 1).min(n - 1)];
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let mut fc = mean_nll(cases, c.exp())?;
        let mut fd = mean_nll(cases, d.exp())?;
        for _ in 0..search.refine_iterations {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = mean_nll(cases, c.exp())?;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = mean_nll(cases, d.exp())?;
            }
        }
        for (x, v) in [(c, fc), (d, fd)] {
            if v < best_v {
                best_v = v;
                best_x = x;
            }
        }
    }
    Ok(if best_x == lo { search.lower } else { best_x.exp() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Cov4;
    use crate::mb::BernoulliComponent;
    use std::f64::consts::PI;

    fn p(x: f64, y: f64) -> State {
        State::new(x, y, 0.0, 0.0)
    }

    #[test]
    fn gospa_examples() {
        let cfg = GospaConfig::default();
        assert_eq!(gospa(&[], &[], &cfg).unwrap().total, 0.0);
        let r = gospa(&[], &[p(0.0, 0.0)], &cfg).unwrap();
        assert_eq!((r.missed, r.total), (1.0, 1.0));
        let r = gospa(&[p(0.5, 0.0)], &[p(0.0, 0.0), p(10.0, 0.0)], &cfg).unwrap();
        assert_eq!(
            (r.localization, r.missed, r.false_detection, r.total),
            (0.5, 1.0, 0.0, 1.5)
        );
        assert!(gospa(&[], &[], &GospaConfig { alpha: 3.0, ..cfg }).is_err());
    }

    fn bern(r: f64, mean: State) -> BernoulliComponent {
        BernoulliComponent {
            existence: r,
            mean,
            cov: Cov4::identity(),
        }
    }

    #[test]
    fn nll_closed_forms() {
        let zero = PppFloor {
            intensity: 0.0,
            area: 100.0,
        };
        let out = FusionOutput {
            components: vec![bern(0.3, p(0.0, 0.0))],
        };
        let r = nll(&out, &zero, &[]).unwrap();
        assert!((r.report.total + 0.7f64.ln()).abs() < 1e-12);
        let out = FusionOutput {
            components: vec![bern(1.0 - 1e-15, p(1.0, 1.0))],
        };
        let r = nll(&out, &zero, &[p(1.0, 1.0)]).unwrap();
        assert!((r.report.total - 0.5 * (2.0 * PI).powi(4).ln()).abs() < 1e-9);
    }

    #[test]
    fn zero_density_is_infinite_with_diagnostic() {
        let zero = PppFloor {
            intensity: 0.0,
            area: 1.0,
        };
        let r = nll(&FusionOutput::default(), &zero, &[p(0.0, 0.0)]).unwrap();
        assert_eq!(r.report.total, f64::INFINITY);
        assert!(r.diagnostic.is_some());
    }

    #[test]
    fn decomposition_adds_up() {
        let out = FusionOutput {
            components: vec![bern(0.9, p(0.0, 0.0)), bern(0.4, p(3.0, 0.0)), bern(0.2, p(9.0, 9.0))],
        };
        let floor = PppFloor {
            intensity: 1e-3,
            area: 400.0,
        };
        let truth = [p(0.2, 0.1), p(3.5, 0.0), p(-20.0, 5.0)];
        let r = nll(&out, &floor, &truth).unwrap();
        assert!(r.exact);
        assert!((r.report.total - r.report.parts_sum()).abs() < 1e-9);
        assert!(r.report.total <= nll_best_association(&out, &floor, &truth).unwrap() + 1e-12);
    }

    #[test]
    fn tuning_limits() {
        let perfect = TuningCase {
            fused: FusionOutput {
                components: vec![BernoulliComponent {
                    existence: 0.999,
                    mean: p(0.0, 0.0),
                    cov: Cov4::identity() * 0.01,
                }],
            },
            truth: vec![p(0.0, 0.0)],
            area: 100.0,
        };
        let search = PppSearch::default();
        assert_eq!(tune_ppp(std::slice::from_ref(&perfect), &search).unwrap(), search.lower);
        let missed = TuningCase {
            truth: vec![p(0.0, 0.0), p(5.0, 5.0), p(-5.0, 2.0)],
            ..perfect.clone()
        };
        assert!(tune_ppp(&[missed], &search).unwrap() > search.lower);
        let single = PppSearch {
            lower: 0.01,
            upper: 0.01,
            grid_points: 1,
            refine_iterations: 10,
        };
        assert_eq!(tune_ppp(&[perfect], &single).unwrap(), 0.01);
    }
}
