//! Incentive and participation checkers, BAM condition checks, the brute-force optimal
//! mechanism LP, deviation evaluation and Monte Carlo estimation.

use std::collections::BTreeMap;

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use serde::Serialize;

use crate::bam_engine::{run_bam, tabulate_unchecked, BankAccountMechanism};
use crate::error::{BamError, Result};
use crate::model::{
    dot, enumerate_paths, promised_utilities, sample_path, stage_utilities, DirectMechanism, HistoryTree,
    Instance, StageOutcome,
};

/// Default tolerance for mechanisms that come out of linear programs.
pub const DEFAULT_TOL: f64 = 1e-7;
/// Tolerance for analytically constructed mechanisms.
pub const STRICT_TOL: f64 = 1e-12;
const MAX_WITNESSES: usize = 20;

/// One violated (or tight) constraint.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Witness {
    pub constraint: String,
    pub history: Vec<usize>,
    pub deviation: Vec<usize>,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
}

impl Witness {
    pub fn new(constraint: &str, history: Vec<usize>, deviation: Vec<usize>, lhs: f64, rhs: f64, slack: f64) -> Self {
        Self { constraint: constraint.to_string(), history, deviation, lhs, rhs, slack }
    }
}

/// Named verdicts plus witnesses for the failing ones.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct VerificationReport {
    pub verdicts: BTreeMap<String, bool>,
    pub witnesses: Vec<Witness>,
}

impl VerificationReport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a verdict that passes until a witness fails it.
    pub fn verdict(&mut self, name: &str) {
        self.verdicts.entry(name.to_string()).or_insert(true);
    }

    pub fn fail(&mut self, w: Witness) {
        self.verdicts.insert(w.constraint.clone(), false);
        let count = self.witnesses.iter().filter(|x| x.constraint == w.constraint).count();
        if count < MAX_WITNESSES {
            self.witnesses.push(w);
        }
    }

    pub fn passed(&self) -> bool {
        self.verdicts.values().all(|&v| v)
    }

    pub fn merge(&mut self, other: VerificationReport) {
        for (k, v) in other.verdicts {
            let e = self.verdicts.entry(k).or_insert(true);
            *e = *e && v;
        }
        self.witnesses.extend(other.witnesses);
    }

    /// Failing verdict names with the first witness of each.
    pub fn summary(&self) -> String {
        let failed: Vec<String> = self
            .verdicts
            .iter()
            .filter(|(_, &ok)| !ok)
            .map(|(name, _)| match self.witnesses.iter().find(|w| &w.constraint == name) {
                Some(w) => format!("{name} at {:?} vs {:?} (slack {:.3e})", w.history, w.deviation, w.slack),
                None => name.clone(),
            })
            .collect();
        if failed.is_empty() {
            "all checks passed".into()
        } else {
            failed.join("; ")
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Stage-wise IC: `u_t(v) + U_t(v) >= u_t(v'; v) + U_t(v')` at every node.
pub fn check_ic(mech: &DirectMechanism, inst: &Instance, tol: f64) -> Result<VerificationReport> {
    let tree = mech.validate(inst)?;
    let big_u = promised_utilities(mech, inst)?;
    let mut rep = VerificationReport::new();
    rep.verdict("stagewise_ic");
    for t in 0..tree.depth() {
        let dist = inst.stage(t);
        let n = tree.radix(t);
        for pid in 0..tree.level_size(t) {
            for i in 0..n {
                let v = dist.value(i);
                let ci = tree.child(t, pid, i);
                let truth = mech.outcome(t, ci).utility(v) + big_u[t + 1][ci];
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let cj = tree.child(t, pid, j);
                    let lie = mech.outcome(t, cj).utility(v) + big_u[t + 1][cj];
                    if truth < lie - tol {
                        rep.fail(Witness::new("stagewise_ic", tree.history(t + 1, ci), tree.history(t + 1, cj), truth, lie, truth - lie));
                    }
                }
            }
        }
    }
    Ok(rep)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IrMode {
    ExPost,
    StageWise,
}

/// Ex-post IR over full paths, or stage-wise IR at every node.
pub fn check_ir(mech: &DirectMechanism, inst: &Instance, mode: IrMode, tol: f64) -> Result<VerificationReport> {
    let tree = mech.validate(inst)?;
    let u = stage_utilities(mech, inst)?;
    let mut rep = VerificationReport::new();
    match mode {
        IrMode::StageWise => {
            rep.verdict("stagewise_ir");
            for d in 1..=tree.depth() {
                for (id, &x) in u[d].iter().enumerate() {
                    if x < -tol {
                        rep.fail(Witness::new("stagewise_ir", tree.history(d, id), vec![], x, 0.0, x));
                    }
                }
            }
            if rep.passed() {
                debug_assert!(check_ir(mech, inst, IrMode::ExPost, tol * tree.depth() as f64)?.passed());
            }
        }
        IrMode::ExPost => {
            rep.verdict("expost_ir");
            let mut acc = vec![0.0];
            for d in 1..=tree.depth() {
                acc = (0..tree.level_size(d)).map(|id| acc[tree.parent(d, id).0] + u[d][id]).collect();
            }
            for (id, &x) in acc.iter().enumerate() {
                if x < -tol {
                    rep.fail(Witness::new("expost_ir", tree.history(tree.depth(), id), vec![], x, 0.0, x));
                }
            }
        }
    }
    Ok(rep)
}

/// Per-balance single-shot IC, the spend identity across reachable balances, `û >= d`,
/// and the account rules `s <= bal`, `d >= 0`, `q >= 0`.
pub fn check_bam_conditions(bam: &dyn BankAccountMechanism, inst: &Instance, tol: f64) -> Result<VerificationReport> {
    let tree = HistoryTree::new(inst)?;
    let table = tabulate_unchecked(bam, inst)?;
    let mut rep = VerificationReport::new();
    for name in ["bam_ic", "bam_spend_identity", "bam_ir", "bam_structural"] {
        rep.verdict(name);
    }
    for t in 0..tree.depth() {
        let dist = inst.stage(t);
        let n = tree.radix(t);
        let mut gaps: Vec<(f64, usize)> = Vec::with_capacity(tree.level_size(t));
        for pid in 0..tree.level_size(t) {
            let kids: Vec<usize> = (0..n).map(|j| tree.child(t, pid, j)).collect();
            let nodes: Vec<_> = kids.iter().map(|&c| &table.levels[t][c]).collect();
            let (bal, s) = (nodes[0].bal, nodes[0].s);
            let h = tree.history(t, pid);
            if s > bal + tol {
                rep.fail(Witness::new("bam_structural", h.clone(), vec![], s, bal, bal - s));
            }
            let mut eu = 0.0;
            for i in 0..n {
                let v = dist.value(i);
                let own = dot(&nodes[i].z, v) - nodes[i].q;
                eu += dist.prob(i) * own;
                if nodes[i].d < -tol || nodes[i].q < -tol {
                    let x = nodes[i].d.min(nodes[i].q);
                    rep.fail(Witness::new("bam_structural", tree.history(t + 1, kids[i]), vec![], x, 0.0, x));
                }
                if own < nodes[i].d - tol {
                    rep.fail(Witness::new("bam_ir", tree.history(t + 1, kids[i]), vec![], own, nodes[i].d, own - nodes[i].d));
                }
                for j in 0..n {
                    let lie = dot(&nodes[j].z, v) - nodes[j].q;
                    if own < lie - tol {
                        rep.fail(Witness::new("bam_ic", tree.history(t + 1, kids[i]), tree.history(t + 1, kids[j]), own, lie, own - lie));
                    }
                }
            }
            gaps.push((s - eu, pid));
        }
        let lo = gaps.iter().cloned().fold((f64::INFINITY, 0), |m, x| if x.0 < m.0 { x } else { m });
        let hi = gaps.iter().cloned().fold((f64::NEG_INFINITY, 0), |m, x| if x.0 > m.0 { x } else { m });
        if hi.0 - lo.0 > tol {
            rep.fail(Witness::new(
                "bam_spend_identity",
                tree.history(t, hi.1),
                tree.history(t, lo.1),
                hi.0,
                lo.0,
                lo.0 - hi.0,
            ));
        }
    }
    Ok(rep)
}

/// Optimal revenue over randomized dynamic mechanisms that are stage-wise IC and
/// ex-post IR, with the optimal mechanism.
#[derive(Clone, Debug, PartialEq)]
pub struct BruteForce {
    pub revenue: f64,
    pub mech: DirectMechanism,
}

pub const DEFAULT_NODE_CAP: usize = 5000;

/// Node cap from `BAMLAB_NODE_CAP`, else the default.
pub fn node_cap() -> usize {
    std::env::var("BAMLAB_NODE_CAP").ok().and_then(|s| s.trim().parse().ok()).unwrap_or(DEFAULT_NODE_CAP)
}

pub fn bruteforce_opt(inst: &Instance) -> Result<BruteForce> {
    bruteforce_opt_with_cap(inst, node_cap())
}

/// LP over allocations `x(h)` and `G(h) = u_t(h) + U_t(h)`; payments follow as
/// `p = x·v + U - G` with `U(h) = Σ_j Pr_j G(h·j)`.
pub fn bruteforce_opt_with_cap(inst: &Instance, cap: usize) -> Result<BruteForce> {
    let tree = HistoryTree::new(inst)?;
    let nodes: usize = (1..=tree.depth()).map(|d| tree.level_size(d)).sum();
    if nodes > cap {
        return Err(BamError::InstanceTooLarge { nodes, cap });
    }
    let depth = tree.depth();
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let mut xs = Vec::with_capacity(depth);
    let mut gs = Vec::with_capacity(depth);
    for t in 0..depth {
        let dist = inst.stage(t);
        let k = dist.items();
        let mut xrow = Vec::with_capacity(tree.level_size(t + 1));
        let mut grow = Vec::with_capacity(tree.level_size(t + 1));
        for id in 0..tree.level_size(t + 1) {
            let pr = tree.prob(t + 1, id);
            let v = dist.value(tree.parent(t + 1, id).1);
            xrow.push((0..k).map(|c| lp.add_var(pr * v[c], (0.0, 1.0))).collect::<Vec<_>>());
            let obj = if t == 0 { -pr } else { 0.0 };
            // continuation utilities may be taken non-negative without losing revenue
            grow.push(lp.add_var(obj, (0.0, f64::INFINITY)));
        }
        xs.push(xrow);
        gs.push(grow);
    }
    // stage-wise IC
    for t in 0..depth {
        let dist = inst.stage(t);
        let n = tree.radix(t);
        for pid in 0..tree.level_size(t) {
            for i in 0..n {
                let ci = tree.child(t, pid, i);
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let cj = tree.child(t, pid, j);
                    // G(ci) - G(cj) - x(cj)·(v_i - v_j) >= 0
                    let mut expr = vec![(gs[t][ci], 1.0), (gs[t][cj], -1.0)];
                    for (c, &var) in xs[t][cj].iter().enumerate() {
                        let diff = dist.value(i)[c] - dist.value(j)[c];
                        if diff != 0.0 {
                            expr.push((var, -diff));
                        }
                    }
                    lp.add_constraint(&expr, ComparisonOp::Ge, 0.0);
                }
            }
        }
    }
    // ex-post IR: Σ_t (G(h_t) - U(h_t)) >= 0 on every leaf path
    for leaf in 0..tree.level_size(depth) {
        let mut coef: BTreeMap<microlp::Variable, f64> = BTreeMap::new();
        let mut id = leaf;
        for d in (1..=depth).rev() {
            *coef.entry(gs[d - 1][id]).or_insert(0.0) += 1.0;
            if d < depth {
                let dist = inst.stage(d);
                for j in 0..tree.radix(d) {
                    let c = tree.child(d, id, j);
                    *coef.entry(gs[d][c]).or_insert(0.0) -= dist.prob(j);
                }
            }
            id = tree.parent(d, id).0;
        }
        let expr: Vec<(microlp::Variable, f64)> = coef.into_iter().filter(|(_, c)| *c != 0.0).collect();
        lp.add_constraint(&expr, ComparisonOp::Ge, 0.0);
    }
    let sol = lp.solve().map_err(|e| match e {
        microlp::Error::Infeasible => BamError::LpInfeasible,
        microlp::Error::Unbounded => BamError::LpUnbounded,
        other => BamError::InvalidArgument(format!("LP solver failed: {other:?}")),
    })?;
    let sol = sol.into_solution().map_err(|_| BamError::InvalidArgument("LP solve interrupted".into()))?;
    let g: Vec<Vec<f64>> = gs.iter().map(|row| row.iter().map(|&v| sol[v]).collect()).collect();
    let mut levels = Vec::with_capacity(depth);
    for t in 0..depth {
        let dist = inst.stage(t);
        let row = (0..tree.level_size(t + 1))
            .map(|id| {
                let alloc: Vec<f64> = xs[t][id].iter().map(|&v| sol[v].clamp(0.0, 1.0)).collect();
                let v = dist.value(tree.parent(t + 1, id).1);
                let promised = if t + 1 < depth {
                    let next = inst.stage(t + 1);
                    (0..tree.radix(t + 1)).map(|j| next.prob(j) * g[t + 1][tree.child(t + 1, id, j)]).sum()
                } else {
                    0.0
                };
                StageOutcome { payment: dot(&alloc, v) + promised - g[t][id], allocation: alloc }
            })
            .collect();
        levels.push(row);
    }
    Ok(BruteForce { revenue: sol.objective(), mech: DirectMechanism::new(levels) })
}

/// A buyer reporting strategy. `truth` holds the true indices up to and including the
/// current stage; `reported` the reports of earlier stages.
pub trait DeviationStrategy {
    fn report(&self, stage: usize, truth: &[usize], reported: &[usize]) -> usize;
}

pub struct Truthful;

impl DeviationStrategy for Truthful {
    fn report(&self, stage: usize, truth: &[usize], _: &[usize]) -> usize {
        truth[stage]
    }
}

impl<F: Fn(usize, &[usize], &[usize]) -> usize> DeviationStrategy for F {
    fn report(&self, stage: usize, truth: &[usize], reported: &[usize]) -> usize {
        self(stage, truth, reported)
    }
}

/// Expected buyer utility when reports follow `strategy`.
pub fn evaluate_deviation(mech: &DirectMechanism, inst: &Instance, strategy: &dyn DeviationStrategy) -> Result<f64> {
    let tree = mech.validate(inst)?;
    let mut total = 0.0;
    for (path, prob) in enumerate_paths(inst)? {
        let mut reported: Vec<usize> = Vec::with_capacity(path.len());
        let mut id = 0;
        let mut u = 0.0;
        for t in 0..path.len() {
            let r = strategy.report(t, &path[..=t], &reported);
            if r >= tree.radix(t) {
                return Err(BamError::BadHistory { history: reported });
            }
            reported.push(r);
            id = tree.child(t, id, r);
            u += mech.outcome(t, id).utility(inst.stage(t).value(path[t]));
        }
        total += prob * u;
    }
    Ok(total)
}

/// Buyer utility under the best reporting strategy, by backward induction over
/// reported histories (future true types do not depend on the reports).
pub fn optimal_deviation_utility(mech: &DirectMechanism, inst: &Instance) -> Result<f64> {
    let tree = mech.validate(inst)?;
    let mut value = vec![0.0; tree.level_size(tree.depth())];
    for t in (0..tree.depth()).rev() {
        let dist = inst.stage(t);
        value = (0..tree.level_size(t))
            .map(|pid| {
                (0..tree.radix(t))
                    .map(|j| {
                        let best = (0..tree.radix(t))
                            .map(|k| {
                                let c = tree.child(t, pid, k);
                                mech.outcome(t, c).utility(dist.value(j)) + value[c]
                            })
                            .fold(f64::NEG_INFINITY, f64::max);
                        dist.prob(j) * best
                    })
                    .sum()
            })
            .collect();
    }
    Ok(value[0])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MonteCarloEstimate {
    pub revenue_mean: f64,
    pub utility_mean: f64,
    /// Standard error of `revenue_mean`.
    pub stderr: f64,
}

/// Sample means over `sample_path(instance, seed, i)` for `i < samples`.
pub fn monte_carlo(bam: &dyn BankAccountMechanism, inst: &Instance, samples: u64, seed: u64) -> Result<MonteCarloEstimate> {
    if samples == 0 {
        return Err(BamError::InvalidArgument("samples must be at least 1".into()));
    }
    let (mut mean, mut m2, mut umean) = (0.0, 0.0, 0.0);
    for i in 0..samples {
        let path = sample_path(inst, seed, i);
        let trace = run_bam(bam, &path)?;
        let rev: f64 = trace.outcomes.iter().map(|o| o.payment).sum();
        let util: f64 = trace.outcomes.iter().zip(&path).map(|(o, ty)| o.utility(&ty.value)).sum();
        let n = (i + 1) as f64;
        let d = rev - mean;
        mean += d / n;
        m2 += d * (rev - mean);
        umean += (util - umean) / n;
    }
    let n = samples as f64;
    let stderr = if samples > 1 { (m2 / (n - 1.0)).sqrt() / n.sqrt() } else { 0.0 };
    Ok(MonteCarloEstimate { revenue_mean: mean, utility_mean: umean, stderr })
}
