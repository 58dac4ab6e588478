//! Dense primal simplex for small LPs of the form
//! `min cᵀx  s.t.  A x = b, x ≥ 0` started from a known feasible basis.
//!
//! Pivoting is deterministic: Dantzig's rule with lowest-index tie breaks,
//! falling back to Bland's rule after a run of degenerate pivots.

use crate::error::{Error, Result};

const PIVOT_EPS: f64 = 1e-11;
const COST_EPS: f64 = 1e-12;
const DEGENERATE_RUN: usize = 50;

#[derive(Clone, Debug)]
pub struct StandardLp {
    /// Row-major `rows × cols` constraint matrix.
    pub a: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    /// Right-hand side, must be non-negative.
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    /// Column index of the identity column basic in each row.
    pub basis: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub objective: f64,
    pub x: Vec<f64>,
    pub iterations: usize,
}

impl StandardLp {
    /// Solves to optimality, or stops as soon as the objective drops to
    /// `good_enough` or below.
    pub fn solve(&self, good_enough: f64) -> Result<LpSolution> {
        let (m, n) = (self.rows, self.cols);
        debug_assert_eq!(self.a.len(), m * n);
        debug_assert!(self.b.iter().all(|&v| v >= 0.0));
        let w = n + 1;
        let mut t = vec![0.0; m * w];
        for i in 0..m {
            t[i * w..i * w + n].copy_from_slice(&self.a[i * n..(i + 1) * n]);
            t[i * w + n] = self.b[i];
        }
        let mut basis = self.basis.clone();
        // reduced costs; last entry holds -objective
        let mut r = vec![0.0; w];
        r[..n].copy_from_slice(&self.c);
        for i in 0..m {
            let cb = self.c[basis[i]];
            if cb != 0.0 {
                for j in 0..w {
                    r[j] -= cb * t[i * w + j];
                }
            }
        }

        let limit = 50 * (m + n) + 1000;
        let mut degenerate = 0usize;
        let mut iterations = 0usize;
        loop {
            let objective = -r[n];
            if objective <= good_enough {
                break;
            }
            let bland = degenerate >= DEGENERATE_RUN;
            let entering = if bland {
                (0..n).find(|&j| r[j] < -COST_EPS)
            } else {
                let mut best = None;
                let mut best_val = -COST_EPS;
                for (j, &rj) in r[..n].iter().enumerate() {
                    if rj < best_val {
                        best_val = rj;
                        best = Some(j);
                    }
                }
                best
            };
            let Some(e) = entering else { break };

            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                let aie = t[i * w + e];
                if aie > PIVOT_EPS {
                    let ratio = t[i * w + n] / aie;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - 1e-15 || (ratio <= lr + 1e-15 && basis[i] < basis[li]) {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    }
                }
            }
            let Some((p, ratio)) = leave else {
                return Err(Error::SolverFailure("unbounded objective".into()));
            };
            if ratio <= 1e-15 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }

            let piv = t[p * w + e];
            for j in 0..w {
                t[p * w + j] /= piv;
            }
            let (before, rest) = t.split_at_mut(p * w);
            let (prow, after) = rest.split_at_mut(w);
            for row in before.chunks_exact_mut(w).chain(after.chunks_exact_mut(w)) {
                let f = row[e];
                if f != 0.0 {
                    for j in 0..w {
                        row[j] -= f * prow[j];
                    }
                }
            }
            let f = r[e];
            for j in 0..w {
                r[j] -= f * prow[j];
            }
            basis[p] = e;

            iterations += 1;
            if iterations > limit {
                return Err(Error::SolverFailure(format!("iteration limit {limit} exceeded")));
            }
        }

        let mut x = vec![0.0; n];
        for i in 0..m {
            x[basis[i]] = t[i * w + n];
        }
        let objective = self.c.iter().zip(&x).map(|(c, x)| c * x).sum();
        Ok(LpSolution { objective, x, iterations })
    }
}
