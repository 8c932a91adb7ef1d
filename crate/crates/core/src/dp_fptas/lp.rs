//! Dense two-phase simplex with Bland's pivoting rule.

use crate::error::{BamError, Result};

const PIVOT_EPS: f64 = 1e-9;
const COST_EPS: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearConstraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `maximize objective·x` subject to the constraints, with `x_j >= 0` unless `free[j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub constraints: Vec<LinearConstraint>,
    pub free: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub values: Vec<f64>,
    pub objective_value: f64,
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        let n = objective.len();
        Self { objective, constraints: Vec::new(), free: vec![false; n] }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) {
        debug_assert_eq!(coeffs.len(), self.num_vars());
        self.constraints.push(LinearConstraint { coeffs, relation, rhs });
    }

    pub fn set_free(&mut self, j: usize) {
        self.free[j] = true;
    }
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    width: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.width]
    }

    fn pivot(&mut self, r: usize, c: usize, red: &mut [f64], red_val: &mut f64) {
        let p = self.rows[r][c];
        for x in self.rows[r].iter_mut() {
            *x /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (x, y) in row.iter_mut().zip(&pivot_row) {
                    *x -= f * y;
                }
                row[c] = 0.0;
            }
        }
        let f = red[c];
        if f != 0.0 {
            for (x, y) in red.iter_mut().zip(&pivot_row[..self.width]) {
                *x -= f * y;
            }
            *red_val -= f * pivot_row[self.width];
            red[c] = 0.0;
        }
        self.basis[r] = c;
    }

    /// Reduced costs `c_j - c_B·col_j` and the current objective `c_B·rhs`.
    fn reduced(&self, cost: &[f64]) -> (Vec<f64>, f64) {
        let mut red = cost.to_vec();
        let mut val = 0.0;
        for (i, row) in self.rows.iter().enumerate() {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                for (x, y) in red.iter_mut().zip(&row[..self.width]) {
                    *x -= cb * y;
                }
                val += cb * row[self.width];
            }
        }
        (red, val)
    }

    /// Maximizes `cost·x` over columns allowed to enter.
    fn optimize(&mut self, cost: &[f64], allowed: usize) -> Result<()> {
        let (mut red, mut val) = self.reduced(cost);
        loop {
            let Some(c) = (0..allowed).find(|&j| red[j] > COST_EPS) else {
                return Ok(());
            };
            let mut best: Option<(f64, usize, usize)> = None;
            for (i, row) in self.rows.iter().enumerate() {
                if row[c] > PIVOT_EPS {
                    let ratio = row[self.width] / row[c];
                    let better = match best {
                        None => true,
                        Some((b, _, bv)) => ratio < b - 1e-12 || (ratio <= b + 1e-12 && self.basis[i] < bv),
                    };
                    if better {
                        best = Some((ratio, i, self.basis[i]));
                    }
                }
            }
            let Some((_, r, _)) = best else {
                return Err(BamError::LpUnbounded);
            };
            self.pivot(r, c, &mut red, &mut val);
        }
    }
}

/// Solves the LP and returns an optimal basic solution.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    let n = lp.num_vars();
    // structural columns: x_j (or x_j^+ and x_j^-)
    let mut col_of = Vec::with_capacity(n);
    let mut width = 0;
    for j in 0..n {
        col_of.push(width);
        width += if lp.free[j] { 2 } else { 1 };
    }
    let structural = width;
    let rows_in: Vec<(Vec<f64>, Relation, f64)> = lp
        .constraints
        .iter()
        .map(|c| {
            let mut row = vec![0.0; structural];
            for j in 0..n {
                row[col_of[j]] = c.coeffs[j];
                if lp.free[j] {
                    row[col_of[j] + 1] = -c.coeffs[j];
                }
            }
            if c.rhs < 0.0 {
                let flipped = match c.relation {
                    Relation::Le => Relation::Ge,
                    Relation::Ge => Relation::Le,
                    Relation::Eq => Relation::Eq,
                };
                (row.iter().map(|x| -x).collect(), flipped, -c.rhs)
            } else {
                (row, c.relation, c.rhs)
            }
        })
        .collect();
    let slack_count = rows_in.iter().filter(|r| r.1 != Relation::Eq).count();
    let art_count = rows_in.iter().filter(|r| r.1 != Relation::Le).count();
    let real_width = structural + slack_count;
    let total = real_width + art_count;
    let m = rows_in.len();
    let mut rows = Vec::with_capacity(m);
    let mut basis = Vec::with_capacity(m);
    let (mut s, mut a) = (structural, real_width);
    for (coeffs, rel, rhs) in rows_in {
        let mut row = vec![0.0; total + 1];
        row[..structural].copy_from_slice(&coeffs);
        row[total] = rhs;
        match rel {
            Relation::Le => {
                row[s] = 1.0;
                basis.push(s);
                s += 1;
            }
            Relation::Ge => {
                row[s] = -1.0;
                s += 1;
                row[a] = 1.0;
                basis.push(a);
                a += 1;
            }
            Relation::Eq => {
                row[a] = 1.0;
                basis.push(a);
                a += 1;
            }
        }
        rows.push(row);
    }
    let mut tab = Tableau { rows, basis, width: total };

    if art_count > 0 {
        let mut phase1 = vec![0.0; total];
        for c in phase1.iter_mut().skip(real_width) {
            *c = -1.0;
        }
        tab.optimize(&phase1, total)?;
        let infeas: f64 = (0..m).filter(|&i| tab.basis[i] >= real_width).map(|i| tab.rhs(i)).sum();
        let scale = lp.constraints.iter().fold(1.0f64, |acc, c| acc.max(c.rhs.abs()));
        if infeas > 1e-8 * scale {
            return Err(BamError::LpInfeasible);
        }
        // drive remaining artificials out, dropping redundant rows
        let mut i = 0;
        while i < tab.rows.len() {
            if tab.basis[i] >= real_width {
                match (0..real_width).find(|&j| tab.rows[i][j].abs() > PIVOT_EPS) {
                    Some(c) => {
                        let mut dummy = vec![0.0; total];
                        let mut dv = 0.0;
                        tab.pivot(i, c, &mut dummy, &mut dv);
                        i += 1;
                    }
                    None => {
                        tab.rows.remove(i);
                        tab.basis.remove(i);
                    }
                }
            } else {
                i += 1;
            }
        }
    }

    let mut cost = vec![0.0; total];
    for j in 0..n {
        cost[col_of[j]] = lp.objective[j];
        if lp.free[j] {
            cost[col_of[j] + 1] = -lp.objective[j];
        }
    }
    tab.optimize(&cost, real_width)?;

    let mut x = vec![0.0; total];
    for (i, &b) in tab.basis.iter().enumerate() {
        x[b] = tab.rhs(i);
    }
    let values: Vec<f64> = (0..n)
        .map(|j| if lp.free[j] { x[col_of[j]] - x[col_of[j] + 1] } else { x[col_of[j]] })
        .collect();
    let objective_value = values.iter().zip(&lp.objective).map(|(v, c)| v * c).sum();
    Ok(LpSolution { values, objective_value })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounded_by_one() {
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.add(vec![1.0], Relation::Le, 1.0);
        let s = solve_lp(&lp).unwrap();
        assert_eq!(s.values, vec![1.0]);
    }

    #[test]
    fn equality_system_has_one_point() {
        let mut lp = LinearProgram::new(vec![0.0, 0.0]);
        lp.add(vec![1.0, 1.0], Relation::Eq, 3.0);
        lp.add(vec![1.0, -1.0], Relation::Eq, 1.0);
        lp.add(vec![2.0, 2.0], Relation::Eq, 6.0);
        let s = solve_lp(&lp).unwrap();
        assert!((s.values[0] - 2.0).abs() < 1e-12 && (s.values[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.add(vec![1.0], Relation::Ge, 2.0);
        lp.add(vec![1.0], Relation::Le, 1.0);
        assert_eq!(solve_lp(&lp), Err(BamError::LpInfeasible));
        let mut lp = LinearProgram::new(vec![1.0, 0.0]);
        lp.add(vec![1.0, -1.0], Relation::Le, 1.0);
        assert_eq!(solve_lp(&lp), Err(BamError::LpUnbounded));
    }

    #[test]
    fn free_variable_goes_negative() {
        let mut lp = LinearProgram::new(vec![-1.0]);
        lp.set_free(0);
        lp.add(vec![1.0], Relation::Ge, -2.5);
        let s = solve_lp(&lp).unwrap();
        assert!((s.values[0] + 2.5).abs() < 1e-12);
    }
}
