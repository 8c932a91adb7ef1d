use super::lp::{solve_lp, LinearProgram, Relation};
use super::piecewise::PiecewiseLinearConcave;
use super::sandwich::sandwich;
use crate::error::{BamError, Result};
use crate::model::{Instance, StageDistribution};
use crate::stage_mechs::myerson_stage;

/// Positive-probability support of a one-item stage, sorted ascending, with a zero-value
/// point of probability zero prepended when the support has no zero.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressedStage {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
}

impl CompressedStage {
    pub fn new(dist: &StageDistribution, stage: usize) -> Result<Self> {
        if dist.items() != 1 {
            return Err(BamError::UnsupportedMultiItem { stage });
        }
        let n = dist.support_len().ok_or(BamError::UnsupportedContinuous { stage })?;
        let mut pts: Vec<(f64, f64)> =
            (0..n).filter(|&i| dist.prob(i) > 0.0).map(|i| (dist.value(i)[0], dist.prob(i))).collect();
        pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        if pts.first().is_none_or(|p| p.0 > 0.0) {
            pts.insert(0, (0.0, 0.0));
        }
        Ok(Self { values: pts.iter().map(|p| p.0).collect(), probs: pts.iter().map(|p| p.1).collect() })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `y(v) = Σ_{v^j <= v} w^j`: sale probability of the price mixture.
    pub fn alloc_at(&self, w: &[f64], v: f64) -> f64 {
        self.values.iter().zip(w).filter(|(p, _)| **p <= v).map(|(_, x)| x).sum::<f64>().min(1.0)
    }

    /// `û(v) = Σ_j w^j (v - v^j)^+`.
    pub fn utility_at(&self, w: &[f64], v: f64) -> f64 {
        self.values.iter().zip(w).map(|(p, x)| x * (v - p).max(0.0)).sum()
    }

    pub fn expected_utility(&self, w: &[f64]) -> f64 {
        self.values.iter().zip(&self.probs).map(|(v, p)| p * self.utility_at(w, *v)).sum()
    }

    /// `c_t = max_{i<k} Pr^i v^i / (Pr^{i+1} (v^{i+1} - v^i))`, a bound on how fast
    /// expected welfare from sales can grow per unit of promised utility.
    pub fn slope_constant(&self) -> f64 {
        (0..self.len().saturating_sub(1))
            .map(|i| {
                let num = self.probs[i] * self.values[i];
                if num == 0.0 {
                    0.0
                } else {
                    num / (self.probs[i + 1] * (self.values[i + 1] - self.values[i]))
                }
            })
            .fold(0.0, f64::max)
    }

    /// `Pr^k v^k`: revenue of the top posted price.
    pub fn top_revenue(&self) -> f64 {
        let k = self.len() - 1;
        self.probs[k] * self.values[k]
    }
}

/// Optimum of the stage program at one promise.
#[derive(Clone, Debug, PartialEq)]
pub struct StageValue {
    pub value: f64,
    /// Posted-price mixture over the compressed support values.
    pub weights: Vec<f64>,
}

/// Stage-program solver with lazily generated epigraph cuts.
///
/// `ζ^i <= piece(g^i)` for every piece of the concave `next` is a valid encoding of
/// `ζ^i <= next(g^i)` only because the objective maximizes `ζ^i`; cuts are added for the
/// piece active at the current `g^i` until no `ζ^i` exceeds `next(g^i)`.
pub struct StageSolver<'a> {
    stage: &'a CompressedStage,
    next: &'a PiecewiseLinearConcave,
    pieces: Vec<super::piecewise::Piece>,
    /// `c[i][j]`: coefficient of `w^j` in `g^i - ξ`.
    coef: Vec<Vec<f64>>,
    exp_coef: Vec<f64>,
    positive: Vec<usize>,
    warm: Vec<Vec<usize>>,
    pub lp_count: usize,
}

impl<'a> StageSolver<'a> {
    pub fn new(stage: &'a CompressedStage, next: &'a PiecewiseLinearConcave) -> Self {
        let k = stage.len();
        let v = &stage.values;
        let exp_coef: Vec<f64> =
            (0..k).map(|j| (0..k).map(|l| stage.probs[l] * (v[l] - v[j]).max(0.0)).sum()).collect();
        let coef = (0..k).map(|i| (0..k).map(|j| (v[i] - v[j]).max(0.0) - exp_coef[j]).collect()).collect();
        let positive: Vec<usize> = (0..k).filter(|&i| stage.probs[i] > 0.0).collect();
        let pieces = next.pieces_with_tail();
        let last = pieces.len() - 1;
        Self { stage, next, pieces, coef, exp_coef, warm: vec![vec![0, last]; positive.len()], positive, lp_count: 0 }
    }

    fn promise(&self, i: usize, xi: f64, w: &[f64]) -> f64 {
        xi + self.coef[i].iter().zip(w).map(|(c, x)| c * x).sum::<f64>()
    }

    pub fn solve(&mut self, xi: f64) -> Result<StageValue> {
        let k = self.stage.len();
        let np = self.positive.len();
        let v = &self.stage.values;
        let pr = &self.stage.probs;
        let mut objective: Vec<f64> = (0..k).map(|j| (j..k).map(|i| pr[i] * v[i]).sum()).collect();
        objective.extend(self.positive.iter().map(|&i| pr[i]));
        let mut cuts: Vec<Vec<usize>> = self.warm.clone();
        for c in &mut cuts {
            c.sort_unstable();
            c.dedup();
        }
        let max_rounds = self.pieces.len() * np + 4;
        for _ in 0..max_rounds {
            let mut lp = LinearProgram::new(objective.clone());
            for m in 0..np {
                lp.set_free(k + m);
            }
            let mut row = vec![1.0; k];
            row.extend(std::iter::repeat_n(0.0, np));
            lp.add(row, Relation::Eq, 1.0);
            let mut row = self.exp_coef.clone();
            row.extend(std::iter::repeat_n(0.0, np));
            lp.add(row, Relation::Le, xi);
            for (m, set) in cuts.iter().enumerate() {
                let i = self.positive[m];
                for &p in set {
                    let pc = self.pieces[p];
                    let mut row: Vec<f64> = self.coef[i].iter().map(|c| -pc.slope * c).collect();
                    row.extend((0..np).map(|q| if q == m { 1.0 } else { 0.0 }));
                    lp.add(row, Relation::Le, pc.value + pc.slope * (xi - pc.at));
                }
            }
            let sol = solve_lp(&lp)?;
            self.lp_count += 1;
            let w: Vec<f64> = sol.values[..k].iter().map(|x| x.clamp(0.0, 1.0)).collect();
            let mut violated = false;
            for m in 0..np {
                let g = self.promise(self.positive[m], xi, &w);
                let (fv, idx) = self.next.eval_extended(g);
                if sol.values[k + m] > fv + 1e-10 * fv.abs().max(1.0) && !cuts[m].contains(&idx) {
                    cuts[m].push(idx);
                    violated = true;
                }
            }
            if !violated {
                let mut value = 0.0;
                let last = self.pieces.len() - 1;
                for i in 0..k {
                    value += pr[i] * self.stage.alloc_at(&w, v[i]) * v[i];
                }
                for m in 0..np {
                    let i = self.positive[m];
                    let g = self.promise(i, xi, &w);
                    let (fv, idx) = self.next.eval_extended(g);
                    value += pr[i] * fv;
                    let mut set = vec![0, last, idx];
                    if idx > 0 {
                        set.push(idx - 1);
                    }
                    if idx < last {
                        set.push(idx + 1);
                    }
                    self.warm[m] = set;
                }
                return Ok(StageValue { value, weights: w });
            }
        }
        Err(BamError::InvalidArgument("cutting-plane loop did not converge".into()))
    }
}

/// `max Σ Pr^i (y^i v^i + next(g^i))` over posted-price mixtures at promise `xi`.
/// Beyond its last breakpoint `next` continues with slope `-1`.
pub fn stage_value(xi: f64, dist: &StageDistribution, next: &PiecewiseLinearConcave) -> Result<StageValue> {
    if !(xi >= 0.0) {
        return Err(BamError::InvalidArgument(format!("promise {xi} is negative")));
    }
    let stage = CompressedStage::new(dist, 0)?;
    StageSolver::new(&stage, next).solve(xi)
}

/// Result of the backward dynamic program.
#[derive(Clone, Debug, PartialEq)]
pub struct SolvedPolicy {
    /// `lower[t]`, `upper[t]` bound the revenue-to-go `φ_t` on `[0, Σ_{τ>=t} Val_τ]`.
    pub lower: Vec<PiecewiseLinearConcave>,
    pub upper: Vec<PiecewiseLinearConcave>,
    pub xi_star: f64,
    pub value_lower: f64,
    pub value_upper: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub lp_count: usize,
    pub stages: Vec<CompressedStage>,
}

impl SolvedPolicy {
    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn per_stage_breakpoint_counts(&self) -> Vec<usize> {
        self.lower[..self.num_stages()].iter().map(|f| f.len()).collect()
    }

    /// Optimal mixture at stage `t` for promise `xi`, solved against `lower[t + 1]`.
    pub fn mixture(&self, t: usize, xi: f64) -> Result<StageValue> {
        StageSolver::new(&self.stages[t], &self.lower[t + 1]).solve(xi)
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Pass {
    Lower,
    Upper,
}

fn run_pass(stages: &[CompressedStage], suffix: &[f64], delta: f64, pass: Pass) -> Result<(Vec<PiecewiseLinearConcave>, usize)> {
    let t_max = stages.len();
    let mut funcs = vec![PiecewiseLinearConcave::new(vec![0.0], vec![0.0])?];
    let mut lps = 0;
    for t in (0..t_max).rev() {
        let next = funcs.last().unwrap();
        let mut solver = StageSolver::new(&stages[t], next);
        let b = suffix[t];
        let f_a = solver.solve(0.0)?.value;
        let f = if b <= 0.0 {
            PiecewiseLinearConcave::new(vec![0.0], vec![f_a])?
        } else {
            let f_b = solver.solve(b)?.value;
            let beta_a = stages[t].slope_constant() + next.first_slope();
            let r = sandwich(&mut |x| Ok(solver.solve(x)?.value), 0.0, b, f_a, f_b, beta_a, -1.0, delta)?;
            match pass {
                Pass::Lower => r.lower,
                Pass::Upper => r.upper,
            }
        };
        lps += solver.lp_count;
        funcs.push(f);
    }
    funcs.reverse();
    Ok((funcs, lps))
}

/// Backward dynamic program over promised utility with sandwiched value functions.
/// The gap parameter starts at `ε/(2T)` times the sum of per-stage Myerson revenues
/// and is halved until `max φ̄_0 - max φ̲_0 <= ε·max φ̄_0`.
pub fn backward_dp(inst: &Instance, epsilon: f64) -> Result<SolvedPolicy> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(BamError::InvalidArgument(format!("epsilon {epsilon} not in (0, 1)")));
    }
    let t_max = inst.num_stages();
    let mut stages = Vec::with_capacity(t_max);
    let mut myerson = 0.0;
    for (t, dist) in inst.stages().iter().enumerate() {
        let s = CompressedStage::new(dist, t)?;
        myerson += myerson_stage(dist)?.expected_revenue(dist)?;
        stages.push(s);
    }
    let vals = inst.vals();
    let mut suffix = vec![0.0; t_max + 1];
    for t in (0..t_max).rev() {
        suffix[t] = suffix[t + 1] + vals[t];
    }
    let base = if myerson > 0.0 { myerson } else { 1.0 };
    let mut kappa = epsilon / (2.0 * t_max as f64);
    let mut lp_count = 0;
    for _ in 0..40 {
        let delta = kappa * base;
        let (lower, l1) = run_pass(&stages, &suffix, delta, Pass::Lower)?;
        let (upper, l2) = run_pass(&stages, &suffix, delta, Pass::Upper)?;
        lp_count += l1 + l2;
        let (xi_star, value_lower) = lower[0].argmax();
        let value_upper = upper[0].argmax().1;
        if value_upper - value_lower <= epsilon * value_upper + 1e-12 {
            return Ok(SolvedPolicy { lower, upper, xi_star, value_lower, value_upper, epsilon, delta, lp_count, stages });
        }
        kappa /= 2.0;
    }
    Err(BamError::InvalidArgument("value bracket did not close".into()))
}
