//! Optimal assignment and k-best assignment enumeration.
//!
//! Costs are given as a dense row-major `rows x cols` matrix with
//! `rows <= cols`; every row must be assigned to a distinct column.
//! `f64::INFINITY` marks a forbidden pair.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DMatrix;

/// A full row assignment: `cols[i]` is the column assigned to row `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub cols: Vec<usize>,
    pub cost: f64,
}

/// Shortest-augmenting-path Hungarian algorithm with potentials.
///
/// Returns `None` when no assignment avoids all forbidden pairs.
pub fn solve(cost: &DMatrix<f64>) -> Option<Assignment> {
    let n = cost.nrows();
    let m = cost.ncols();
    assert!(n <= m, "assignment needs rows <= cols ({n} > {m})");
    if n == 0 {
        return Some(Assignment {
            cols: Vec::new(),
            cost: 0.0,
        });
    }
    if cost.iter().any(|c| c.is_nan() || *c == f64::NEG_INFINITY) {
        return None;
    }
    // 1-based bookkeeping, index 0 is the virtual root column
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = usize::MAX;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            if j1 == usize::MAX || !delta.is_finite() {
                return None;
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut cols = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            cols[p[j] - 1] = j - 1;
        }
    }
    let total: f64 = cols.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
    if !total.is_finite() {
        return None;
    }
    Some(Assignment { cols, cost: total })
}

#[derive(Debug)]
struct Node {
    solution: Assignment,
    forced: Vec<(usize, usize)>,
    forbidden: Vec<(usize, usize)>,
    seq: usize,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // min-heap on cost, ties broken by creation order
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .solution
            .cost
            .total_cmp(&self.solution.cost)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

fn constrained(cost: &DMatrix<f64>, forced: &[(usize, usize)], forbidden: &[(usize, usize)]) -> DMatrix<f64> {
    let mut c = cost.clone();
    for &(i, j) in forced {
        for jj in 0..c.ncols() {
            if jj != j {
                c[(i, jj)] = f64::INFINITY;
            }
        }
        for ii in 0..c.nrows() {
            if ii != i {
                c[(ii, j)] = f64::INFINITY;
            }
        }
    }
    for &(i, j) in forbidden {
        c[(i, j)] = f64::INFINITY;
    }
    c
}

/// Murty's algorithm: the `k` lowest-cost assignments in nondecreasing order.
pub fn murty(cost: &DMatrix<f64>, k: usize) -> Vec<Assignment> {
    let mut out = Vec::new();
    if k == 0 {
        return out;
    }
    let Some(first) = solve(cost) else {
        return out;
    };
    let mut seq = 0usize;
    let mut heap = BinaryHeap::new();
    heap.push(Node {
        solution: first,
        forced: Vec::new(),
        forbidden: Vec::new(),
        seq,
    });
    while let Some(node) = heap.pop() {
        let n = node.solution.cols.len();
        let mut forced = node.forced.clone();
        for row in 0..n {
            let col = node.solution.cols[row];
            if forced.iter().any(|&(i, _)| i == row) {
                continue;
            }
            let mut forbidden = node.forbidden.clone();
            forbidden.push((row, col));
            let sub = constrained(cost, &forced, &forbidden);
            if let Some(mut sol) = solve(&sub) {
                sol.cost = sol.cols.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
                seq += 1;
                heap.push(Node {
                    solution: sol,
                    forced: forced.clone(),
                    forbidden,
                    seq,
                });
            }
            forced.push((row, col));
        }
        out.push(node.solution);
        if out.len() >= k {
            break;
        }
    }
    out
}

/// Result of an assignment in which rows and columns may stay unassigned.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialAssignment {
    /// `rows[i] = Some(j)` when row `i` is matched to column `j`.
    pub rows: Vec<Option<usize>>,
    pub cost: f64,
}

impl PartialAssignment {
    pub fn matched_cols(&self) -> Vec<bool> {
        let ncols = self.rows.iter().flatten().map(|j| j + 1).max().unwrap_or(0);
        let mut used = vec![false; ncols];
        for j in self.rows.iter().flatten() {
            used[*j] = true;
        }
        used
    }
}

/// Minimum-cost partial matching.
///
/// A matched pair `(i, j)` costs `pair[(i, j)]` (infinite = not allowed), an
/// unmatched row `i` costs `row_miss[i]`, an unmatched column `j` costs
/// `col_miss[j]`.
pub fn partial(pair: &DMatrix<f64>, row_miss: &[f64], col_miss: &[f64]) -> Option<PartialAssignment> {
    let n = pair.nrows();
    let m = pair.ncols();
    assert_eq!(row_miss.len(), n);
    assert_eq!(col_miss.len(), m);
    // square augmented problem: dummy column m + i leaves row i unmatched,
    // dummy row n + j leaves column j unmatched, dummy pairs cost nothing
    let size = n + m;
    let mut c = DMatrix::from_element(size, size, f64::INFINITY);
    for i in 0..n {
        for j in 0..m {
            c[(i, j)] = pair[(i, j)];
        }
        c[(i, m + i)] = row_miss[i];
    }
    for j in 0..m {
        c[(n + j, j)] = col_miss[j];
        for i in 0..n {
            c[(n + j, m + i)] = 0.0;
        }
    }
    let sol = solve(&c)?;
    let rows: Vec<Option<usize>> = sol.cols[..n].iter().map(|&j| (j < m).then_some(j)).collect();
    let mut used = vec![false; m];
    let mut cost = 0.0;
    for (i, r) in rows.iter().enumerate() {
        match r {
            Some(j) => {
                used[*j] = true;
                cost += pair[(i, *j)];
            }
            None => cost += row_miss[i],
        }
    }
    for (j, u) in used.iter().enumerate() {
        if !u {
            cost += col_miss[j];
        }
    }
    Some(PartialAssignment { rows, cost })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_all(cost: &DMatrix<f64>) -> Vec<f64> {
        fn rec(cost: &DMatrix<f64>, row: usize, used: &mut Vec<bool>, acc: f64, out: &mut Vec<f64>) {
            if row == cost.nrows() {
                if acc.is_finite() {
                    out.push(acc);
                }
                return;
            }
            for j in 0..cost.ncols() {
                if !used[j] {
                    used[j] = true;
                    rec(cost, row + 1, used, acc + cost[(row, j)], out);
                    used[j] = false;
                }
            }
        }
        let mut out = Vec::new();
        rec(cost, 0, &mut vec![false; cost.ncols()], 0.0, &mut out);
        out.sort_by(f64::total_cmp);
        out
    }

    #[test]
    fn hungarian_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..300 {
            let n = rng.random_range(1..=5);
            let m = rng.random_range(n..=6);
            let cost = DMatrix::from_fn(n, m, |_, _| {
                if rng.random_bool(0.15) {
                    f64::INFINITY
                } else {
                    rng.random_range(-5.0..5.0)
                }
            });
            let all = brute_all(&cost);
            match solve(&cost) {
                Some(a) => assert!((a.cost - all[0]).abs() < 1e-9),
                None => assert!(all.is_empty()),
            }
        }
    }

    #[test]
    fn murty_enumerates_in_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.random_range(1..=4);
            let m = rng.random_range(n..=5);
            let cost = DMatrix::from_fn(n, m, |_, _| rng.random_range(0.0..10.0));
            let all = brute_all(&cost);
            let k = rng.random_range(1..=all.len() + 2);
            let best = murty(&cost, k);
            assert_eq!(best.len(), k.min(all.len()));
            for (a, b) in best.iter().zip(&all) {
                assert!((a.cost - b).abs() < 1e-9);
            }
            let mut seen: Vec<_> = best.iter().map(|a| a.cols.clone()).collect();
            seen.sort();
            seen.dedup();
            assert_eq!(seen.len(), best.len());
        }
    }

    #[test]
    fn forbidden_everywhere_is_infeasible() {
        let cost = DMatrix::from_row_slice(2, 2, &[1.0, f64::INFINITY, 2.0, f64::INFINITY]);
        assert!(solve(&cost).is_none());
        assert!(murty(&cost, 3).is_empty());
    }

    #[test]
    fn empty_problem() {
        let cost = DMatrix::<f64>::zeros(0, 3);
        assert_eq!(solve(&cost).unwrap().cost, 0.0);
    }

    fn brute_partial(pair: &DMatrix<f64>, row_miss: &[f64], col_miss: &[f64]) -> f64 {
        fn rec(pair: &DMatrix<f64>, rm: &[f64], cm: &[f64], i: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if i == pair.nrows() {
                let rest: f64 = used.iter().zip(cm).filter(|(u, _)| !**u).map(|(_, c)| *c).sum();
                *best = best.min(acc + rest);
                return;
            }
            rec(pair, rm, cm, i + 1, used, acc + rm[i], best);
            for j in 0..pair.ncols() {
                if !used[j] && pair[(i, j)].is_finite() {
                    used[j] = true;
                    rec(pair, rm, cm, i + 1, used, acc + pair[(i, j)], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(
            pair,
            row_miss,
            col_miss,
            0,
            &mut vec![false; pair.ncols()],
            0.0,
            &mut best,
        );
        best
    }

    #[test]
    fn partial_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draw = |rng: &mut ChaCha8Rng| {
            if rng.random_bool(0.2) {
                f64::INFINITY
            } else {
                rng.random_range(0.0..4.0)
            }
        };
        for _ in 0..300 {
            let n = rng.random_range(0..=4);
            let m = rng.random_range(0..=4);
            let pair = DMatrix::from_fn(n, m, |_, _| draw(&mut rng));
            let rm: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
            let cm: Vec<f64> = (0..m).map(|_| draw(&mut rng)).collect();
            let want = brute_partial(&pair, &rm, &cm);
            match partial(&pair, &rm, &cm) {
                Some(a) => assert!((a.cost - want).abs() < 1e-9, "{} vs {want}", a.cost),
                None => assert_eq!(want, f64::INFINITY),
            }
        }
    }

    #[test]
    fn partial_prefers_cheaper_side() {
        let pair = DMatrix::from_row_slice(1, 2, &[3.0, 0.5]);
        let a = partial(&pair, &[1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(a.rows, vec![Some(1)]);
        assert!((a.cost - 1.5).abs() < 1e-12);
        let a = partial(&pair, &[0.1], &[0.1, 0.1]).unwrap();
        assert_eq!(a.rows, vec![None]);
        assert!((a.cost - 0.3).abs() < 1e-12);
    }
}
