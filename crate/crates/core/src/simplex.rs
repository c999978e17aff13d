//! Dense two-phase primal simplex with Bland's rule.
//!
//! Sized for the small policy programs the oracle builds (hundreds of rows
//! and columns). Bland's rule makes every pivot choice deterministic and
//! rules out cycling, so a given program always returns the same vertex.

use thiserror::Error;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rel {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    /// Sparse (variable, coefficient) pairs; variables may repeat (summed).
    pub coeffs: Vec<(usize, f64)>,
    pub rel: Rel,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub num_vars: usize,
    /// Minimized objective, one coefficient per variable.
    pub minimize: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

#[derive(Debug, Error)]
pub enum LpError {
    #[error("objective length {0} does not match variable count {1}")]
    BadObjective(usize, usize),
    #[error("constraint references variable {0} out of {1}")]
    BadVariable(usize, usize),
    #[error("iteration limit reached ({0} pivots)")]
    IterationLimit(usize),
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    cost: Vec<f64>,
    cost_value: f64,
    basis: Vec<usize>,
    banned: Vec<bool>,
}

impl Tableau {
    fn pivot(&mut self, row: usize, col: usize) {
        let piv = self.rows[row][col];
        let inv = 1.0 / piv;
        for v in self.rows[row].iter_mut() {
            *v *= inv;
        }
        self.rhs[row] *= inv;
        for r in 0..self.rows.len() {
            if r == row {
                continue;
            }
            let factor = self.rows[r][col];
            if factor.abs() > 0.0 {
                let (pivot_row, target_row) = if r < row {
                    let (a, b) = self.rows.split_at_mut(row);
                    (&b[0], &mut a[r])
                } else {
                    let (a, b) = self.rows.split_at_mut(r);
                    (&a[row], &mut b[0])
                };
                for (t, p) in target_row.iter_mut().zip(pivot_row) {
                    *t -= factor * p;
                }
                self.rhs[r] -= factor * self.rhs[row];
                if self.rhs[r].abs() < 1e-13 {
                    self.rhs[r] = 0.0;
                }
            }
        }
        let factor = self.cost[col];
        if factor.abs() > 0.0 {
            for (c, p) in self.cost.iter_mut().zip(&self.rows[row]) {
                *c -= factor * p;
            }
            self.cost_value -= factor * self.rhs[row];
        }
        self.basis[row] = col;
    }

    /// Run simplex iterations until optimal, unbounded, or the pivot cap.
    fn run(&mut self, max_iter: usize) -> Result<bool, LpError> {
        for _ in 0..max_iter {
            // Bland: entering variable is the lowest-index improving column.
            let mut entering = None;
            for j in 0..self.cost.len() {
                if !self.banned[j] && self.cost[j] < -EPS {
                    entering = Some(j);
                    break;
                }
            }
            let Some(col) = entering else {
                return Ok(true);
            };
            // Ratio test; ties go to the row with the smallest basis index.
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows.len() {
                let a = self.rows[r][col];
                if a > EPS {
                    let ratio = self.rhs[r] / a;
                    match leave {
                        None => leave = Some((r, ratio)),
                        Some((br, brat)) => {
                            if ratio < brat - EPS
                                || (ratio < brat + EPS && self.basis[r] < self.basis[br])
                            {
                                leave = Some((r, ratio));
                            }
                        }
                    }
                }
            }
            let Some((row, _)) = leave else {
                return Ok(false); // unbounded direction
            };
            self.pivot(row, col);
        }
        Err(LpError::IterationLimit(max_iter))
    }
}

/// Solve a linear program, returning an optimal basic solution, or an
/// infeasibility/unboundedness verdict.
pub fn solve(lp: &LinearProgram) -> Result<LpOutcome, LpError> {
    let n = lp.num_vars;
    if lp.minimize.len() != n {
        return Err(LpError::BadObjective(lp.minimize.len(), n));
    }
    for c in &lp.constraints {
        for &(j, _) in &c.coeffs {
            if j >= n {
                return Err(LpError::BadVariable(j, n));
            }
        }
    }
    let m = lp.constraints.len();

    // Normalize rows to nonnegative rhs, then count extra columns.
    let mut rel = Vec::with_capacity(m);
    let mut dense: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut rhs = Vec::with_capacity(m);
    for c in &lp.constraints {
        let mut row = vec![0.0; n];
        for &(j, a) in &c.coeffs {
            row[j] += a;
        }
        let (mut r, mut b) = (c.rel, c.rhs);
        if b < 0.0 {
            for v in row.iter_mut() {
                *v = -*v;
            }
            b = -b;
            r = match r {
                Rel::Le => Rel::Ge,
                Rel::Ge => Rel::Le,
                Rel::Eq => Rel::Eq,
            };
        }
        rel.push(r);
        dense.push(row);
        rhs.push(b);
    }

    let num_slack = rel.iter().filter(|r| matches!(r, Rel::Le | Rel::Ge)).count();
    let num_art = rel.iter().filter(|r| matches!(r, Rel::Ge | Rel::Eq)).count();
    let total = n + num_slack + num_art;

    let mut rows = vec![vec![0.0; total]; m];
    let mut basis = vec![0usize; m];
    let mut art_cols = Vec::new();
    let mut slack_at = n;
    let mut art_at = n + num_slack;
    for (i, r) in rel.iter().enumerate() {
        rows[i][..n].copy_from_slice(&dense[i]);
        match r {
            Rel::Le => {
                rows[i][slack_at] = 1.0;
                basis[i] = slack_at;
                slack_at += 1;
            }
            Rel::Ge => {
                rows[i][slack_at] = -1.0;
                slack_at += 1;
                rows[i][art_at] = 1.0;
                basis[i] = art_at;
                art_cols.push(art_at);
                art_at += 1;
            }
            Rel::Eq => {
                rows[i][art_at] = 1.0;
                basis[i] = art_at;
                art_cols.push(art_at);
                art_at += 1;
            }
        }
    }

    let max_iter = 2000 + 200 * (m + total);

    // Phase 1: minimize the sum of artificials.
    let mut t = Tableau {
        rows,
        rhs,
        cost: {
            let mut c = vec![0.0; total];
            for &j in &art_cols {
                c[j] = 1.0;
            }
            c
        },
        cost_value: 0.0,
        basis,
        banned: vec![false; total],
    };
    // Canonicalize: basic artificials must have zero reduced cost.
    for i in 0..m {
        if art_cols.contains(&t.basis[i]) {
            let row = t.rows[i].clone();
            let b = t.rhs[i];
            for (c, p) in t.cost.iter_mut().zip(&row) {
                *c -= *p;
            }
            t.cost_value -= b;
        }
    }
    if !art_cols.is_empty() {
        let finished = t.run(max_iter)?;
        debug_assert!(finished, "phase 1 is bounded below by construction");
        // cost_value holds -(objective); objective = -cost_value.
        if -t.cost_value > 1e-7 {
            return Ok(LpOutcome::Infeasible);
        }
        // Pivot remaining artificials out where possible; ban them all.
        for i in 0..m {
            if art_cols.contains(&t.basis[i]) {
                if let Some(col) = (0..n + num_slack).find(|&j| t.rows[i][j].abs() > EPS) {
                    t.pivot(i, col);
                }
            }
        }
        for &j in &art_cols {
            t.banned[j] = true;
        }
    }

    // Phase 2: original objective.
    t.cost = {
        let mut c = vec![0.0; total];
        c[..n].copy_from_slice(&lp.minimize);
        c
    };
    t.cost_value = 0.0;
    for i in 0..m {
        let j = t.basis[i];
        let factor = t.cost[j];
        if factor.abs() > 0.0 {
            let row = t.rows[i].clone();
            let b = t.rhs[i];
            for (c, p) in t.cost.iter_mut().zip(&row) {
                *c -= factor * p;
            }
            t.cost_value -= factor * b;
        }
    }
    let finished = t.run(max_iter)?;
    if !finished {
        return Ok(LpOutcome::Unbounded);
    }

    let mut x = vec![0.0; n];
    for i in 0..m {
        if t.basis[i] < n {
            x[t.basis[i]] = t.rhs[i].max(0.0);
        }
    }
    let value = lp
        .minimize
        .iter()
        .zip(&x)
        .map(|(c, v)| c * v)
        .sum::<f64>();
    Ok(LpOutcome::Optimal { x, value })
}
