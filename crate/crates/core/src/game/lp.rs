//! Dense two-phase simplex for the small linear programs that certify
//! core non-emptiness.
//!
//! Solves `minimize c'x subject to A x (<=|=|>=) b, x >= 0`. Pivoting
//! follows Bland's rule (lowest-index entering column, lowest-index
//! leaving variable on ratio ties), so degenerate problems terminate.

use thiserror::Error;

const EPS: f64 = 1e-11;
const MAX_PIVOTS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Constraint {
    pub fn new(coeffs: Vec<f64>, relation: Relation, rhs: f64) -> Self {
        Constraint {
            coeffs,
            relation,
            rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub objective: f64,
    pub x: Vec<f64>,
    /// Row multipliers `y` of the dual `max b'y s.t. A'y <= c`, one per
    /// constraint in input order.
    pub duals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LpError {
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex exceeded {0} pivots")]
    PivotLimit(usize),
    #[error("malformed linear program: {0}")]
    Malformed(String),
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    /// Number of columns excluding the right-hand side.
    width: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.width]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.rows[r][c];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, &pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut red = cost.to_vec();
        for (i, row) in self.rows.iter().enumerate() {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                for (r, &a) in red.iter_mut().zip(row) {
                    *r -= cb * a;
                }
            }
        }
        red
    }

    /// Runs Bland-rule pivots until optimal for `cost`.
    fn optimize(&mut self, cost: &[f64], allowed: &[bool], pivots: &mut usize) -> Result<(), LpError> {
        loop {
            let red = self.reduced_costs(cost);
            let Some(enter) = (0..self.width).find(|&j| allowed[j] && red[j] < -EPS) else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][enter];
                if a > EPS {
                    let ratio = self.rhs(i) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((l, best)) => {
                            if ratio < best - EPS
                                || (ratio <= best + EPS && self.basis[i] < self.basis[l])
                            {
                                Some((i, ratio))
                            } else {
                                Some((l, best))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else {
                return Err(LpError::Unbounded);
            };
            *pivots += 1;
            if *pivots > MAX_PIVOTS {
                return Err(LpError::PivotLimit(MAX_PIVOTS));
            }
            self.pivot(r, enter);
        }
    }
}

/// Minimizes `costs'x` over `x >= 0` subject to `constraints`.
pub fn tiny_lp_solve(costs: &[f64], constraints: &[Constraint]) -> Result<LpSolution, LpError> {
    let n = costs.len();
    let m = constraints.len();
    if let Some((i, c)) = constraints.iter().enumerate().find(|(_, c)| c.coeffs.len() != n) {
        return Err(LpError::Malformed(format!(
            "row {i} has {} coefficients for {n} variables",
            c.coeffs.len()
        )));
    }
    if costs.iter().chain(constraints.iter().flat_map(|c| c.coeffs.iter().chain([&c.rhs]))).any(|v| !v.is_finite()) {
        return Err(LpError::Malformed("non-finite coefficient".into()));
    }

    // Flip rows so every right-hand side is non-negative.
    let sign: Vec<f64> = constraints.iter().map(|c| if c.rhs < 0.0 { -1.0 } else { 1.0 }).collect();
    let relation: Vec<Relation> = constraints
        .iter()
        .zip(&sign)
        .map(|(c, &s)| match (c.relation, s < 0.0) {
            (Relation::Le, true) => Relation::Ge,
            (Relation::Ge, true) => Relation::Le,
            (r, _) => r,
        })
        .collect();

    // Column layout: originals, one slack/surplus per inequality, one
    // artificial per >= or = row.
    let mut width = n;
    let mut slack_col = vec![None; m];
    for (i, r) in relation.iter().enumerate() {
        if *r != Relation::Eq {
            slack_col[i] = Some(width);
            width += 1;
        }
    }
    let mut art_col = vec![None; m];
    for (i, r) in relation.iter().enumerate() {
        if *r != Relation::Le {
            art_col[i] = Some(width);
            width += 1;
        }
    }

    let mut rows = vec![vec![0.0; width + 1]; m];
    let mut basis = vec![0; m];
    // identity column of each row in the starting basis
    let mut unit_col = vec![0; m];
    for i in 0..m {
        let c = &constraints[i];
        for (cell, a) in rows[i][..n].iter_mut().zip(&c.coeffs) {
            *cell = sign[i] * a;
        }
        rows[i][width] = sign[i] * c.rhs;
        match relation[i] {
            Relation::Le => {
                let s = slack_col[i].unwrap();
                rows[i][s] = 1.0;
                basis[i] = s;
            }
            Relation::Ge => {
                rows[i][slack_col[i].unwrap()] = -1.0;
                let a = art_col[i].unwrap();
                rows[i][a] = 1.0;
                basis[i] = a;
            }
            Relation::Eq => {
                let a = art_col[i].unwrap();
                rows[i][a] = 1.0;
                basis[i] = a;
            }
        }
        unit_col[i] = basis[i];
    }
    let mut tab = Tableau { rows, basis, width };
    let is_art: Vec<bool> = {
        let mut v = vec![false; width];
        for a in art_col.iter().flatten() {
            v[*a] = true;
        }
        v
    };
    let mut pivots = 0;

    if art_col.iter().any(Option::is_some) {
        let phase1: Vec<f64> = (0..width).map(|j| if is_art[j] { 1.0 } else { 0.0 }).collect();
        let all = vec![true; width];
        tab.optimize(&phase1, &all, &mut pivots)?;
        let infeasibility: f64 = (0..m).filter(|&i| is_art[tab.basis[i]]).map(|i| tab.rhs(i)).sum();
        if infeasibility > 1e-9 {
            return Err(LpError::Infeasible);
        }
        // Pivot zero-level artificials out of the basis where a real
        // column can replace them; rows with none left are redundant.
        for i in 0..m {
            if is_art[tab.basis[i]] {
                if let Some(j) = (0..width).find(|&j| !is_art[j] && tab.rows[i][j].abs() > 1e-9) {
                    tab.pivot(i, j);
                }
            }
        }
    }

    let mut phase2 = vec![0.0; width];
    phase2[..n].copy_from_slice(costs);
    let allowed: Vec<bool> = is_art.iter().map(|a| !a).collect();
    tab.optimize(&phase2, &allowed, &mut pivots)?;

    let mut x = vec![0.0; n];
    for (i, &b) in tab.basis.iter().enumerate() {
        if b < n {
            x[b] = tab.rhs(i);
        }
    }
    let objective = costs.iter().zip(&x).map(|(c, v)| c * v).sum();
    let duals = (0..m)
        .map(|r| {
            let y: f64 = (0..m).map(|k| phase2[tab.basis[k]] * tab.rows[k][unit_col[r]]).sum();
            sign[r] * y
        })
        .collect();
    Ok(LpSolution { objective, x, duals })
}
