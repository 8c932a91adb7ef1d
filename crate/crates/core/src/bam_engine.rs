//! BAM execution, conversions to direct mechanisms, the core-BAM construction and
//! the payment-shifting and symmetrization transforms.

use serde::{Deserialize, Serialize};

use crate::error::{BamError, Result};
use crate::model::{
    conditional_utilities, dot, stage_utilities, DirectMechanism, HistoryTree, Instance, StageOutcome,
    StageType,
};
use crate::verify::{VerificationReport, Witness};

/// Tolerance used to decide that two balances or utilities are equal.
pub const CLASS_TOL: f64 = 1e-9;

/// Allocation, payment and deposit chosen after the spend.
#[derive(Clone, Debug, PartialEq)]
pub struct BamResponse {
    pub alloc: Vec<f64>,
    pub pay: f64,
    pub deposit: f64,
}

/// A bank account mechanism. Stages are 0-based.
pub trait BankAccountMechanism {
    fn num_stages(&self) -> usize;
    /// `s_t(bal)`.
    fn spend(&self, stage: usize, bal: f64) -> Result<f64>;
    /// `(z_t, q_t, d_t)` at balance `bal` (already before the spend) for the reported type.
    fn respond(&self, stage: usize, bal: f64, ty: &StageType) -> Result<BamResponse>;
}

/// `û_t(bal, v'; v) = z(bal, v')·v - q(bal, v')`.
pub fn stage_utility(
    bam: &dyn BankAccountMechanism,
    stage: usize,
    bal: f64,
    report: &StageType,
    value: &[f64],
) -> Result<f64> {
    let r = bam.respond(stage, bal, report)?;
    Ok(dot(&r.alloc, value) - r.pay)
}

/// Execution trace along one path. `balances` has `T + 1` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct AccountTrace {
    pub outcomes: Vec<StageOutcome>,
    pub balances: Vec<f64>,
    pub spends: Vec<f64>,
    pub deposits: Vec<f64>,
}

fn check_step(stage: usize, bal: f64, spend: f64, deposit: f64) -> Result<()> {
    if !(spend <= bal + 1e-9 * bal.abs().max(1.0)) {
        return Err(BamError::SpendExceedsBalance { stage, spend, balance: bal });
    }
    if !(deposit >= -1e-12) {
        return Err(BamError::NegativeDeposit { stage, deposit });
    }
    Ok(())
}

/// Runs the BAM along a full path: spend, then outcome, then deposit.
pub fn run_bam(bam: &dyn BankAccountMechanism, path: &[StageType]) -> Result<AccountTrace> {
    if path.len() != bam.num_stages() {
        return Err(BamError::BadHistory { history: path.iter().filter_map(|t| t.index).collect() });
    }
    let mut bal = 0.0;
    let mut trace = AccountTrace { outcomes: vec![], balances: vec![0.0], spends: vec![], deposits: vec![] };
    for (t, ty) in path.iter().enumerate() {
        let s = bam.spend(t, bal)?;
        let r = bam.respond(t, bal, ty)?;
        check_step(t, bal, s, r.deposit)?;
        bal = bal - s + r.deposit;
        trace.outcomes.push(StageOutcome { allocation: r.alloc, payment: s + r.pay });
        trace.spends.push(s);
        trace.deposits.push(r.deposit);
        trace.balances.push(bal);
    }
    Ok(trace)
}

/// Account state at one history node, before the stage of that node's depth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BamNode {
    pub history: Vec<usize>,
    pub bal: f64,
    pub z: Vec<f64>,
    pub q: f64,
    pub d: f64,
    pub s: f64,
}

/// A BAM tabulated over the whole discrete history tree. `levels[t][id]` describes stage
/// `t` at the depth-`t + 1` node `id`; `bal` is the balance before that stage's spend.
#[derive(Clone, Debug, PartialEq)]
pub struct BamTable {
    pub levels: Vec<Vec<BamNode>>,
}

#[derive(Serialize, Deserialize)]
struct BamTableFile {
    nodes: Vec<BamNode>,
}

impl BamTable {
    pub fn to_direct(&self) -> DirectMechanism {
        DirectMechanism::new(
            self.levels
                .iter()
                .map(|l| l.iter().map(|n| StageOutcome { allocation: n.z.clone(), payment: n.s + n.q }).collect())
                .collect(),
        )
    }

    pub fn to_json(&self) -> String {
        let nodes = self.levels.iter().flatten().cloned().collect();
        serde_json::to_string(&BamTableFile { nodes }).expect("table serializes")
    }

    /// Balance after the last stage at each leaf.
    pub fn final_balances(&self) -> Vec<f64> {
        self.levels.last().map(|l| l.iter().map(|n| n.bal - n.s + n.d).collect()).unwrap_or_default()
    }
}

/// Tabulates the BAM without enforcing the account rules.
pub fn tabulate_unchecked(bam: &dyn BankAccountMechanism, inst: &Instance) -> Result<BamTable> {
    let tree = HistoryTree::new(inst)?;
    if bam.num_stages() != tree.depth() {
        return Err(BamError::InvalidArgument("BAM and instance have different stage counts".into()));
    }
    let mut levels: Vec<Vec<BamNode>> = Vec::with_capacity(tree.depth());
    let mut bals = vec![0.0];
    for t in 0..tree.depth() {
        let dist = inst.stage(t);
        let mut row = Vec::with_capacity(tree.level_size(t + 1));
        let mut next = Vec::with_capacity(tree.level_size(t + 1));
        for (pid, &bal) in bals.iter().enumerate() {
            let s = bam.spend(t, bal)?;
            for j in 0..tree.radix(t) {
                let r = bam.respond(t, bal, &dist.stage_type(j))?;
                let id = tree.child(t, pid, j);
                next.push(bal - s + r.deposit);
                row.push(BamNode { history: tree.history(t + 1, id), bal, z: r.alloc, q: r.pay, d: r.deposit, s });
            }
        }
        levels.push(row);
        bals = next;
    }
    Ok(BamTable { levels })
}

/// Tabulates the BAM, failing on any spend above balance or negative deposit.
pub fn tabulate(bam: &dyn BankAccountMechanism, inst: &Instance) -> Result<BamTable> {
    let table = tabulate_unchecked(bam, inst)?;
    for (t, level) in table.levels.iter().enumerate() {
        for n in level {
            check_step(t, n.bal, n.s, n.d)?;
        }
    }
    Ok(table)
}

/// `x_t = z_t(bal_t, v_t)`, `p_t = s_t(bal_t) + q_t(bal_t, v_t)` over the full tree.
pub fn induce_direct(bam: &dyn BankAccountMechanism, inst: &Instance) -> Result<DirectMechanism> {
    Ok(tabulate(bam, inst)?.to_direct())
}

/// Conditional-utility function `g` and allocation `y` defining a core BAM.
/// `g[d][id]` covers depths `0..=T`; `y[t][id]` is the stage-`t` allocation at depth `t + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoreBamSpec {
    pub g: Vec<Vec<f64>>,
    pub y: Vec<Vec<Vec<f64>>>,
}

impl CoreBamSpec {
    fn check_shape(&self, tree: &HistoryTree) -> Result<()> {
        let ok = self.g.len() == tree.depth() + 1
            && self.y.len() == tree.depth()
            && (0..=tree.depth()).all(|d| self.g[d].len() == tree.level_size(d))
            && (0..tree.depth()).all(|t| self.y[t].len() == tree.level_size(t + 1));
        if ok {
            Ok(())
        } else {
            Err(BamError::CoreBamInvalid("g or y does not match the history tree".into()))
        }
    }
}

/// Validity conditions of a core BAM spec (subgradient, consistency, symmetry, monotonicity) at tolerance `1e-9`.
pub fn validate_core(spec: &CoreBamSpec, inst: &Instance) -> Result<VerificationReport> {
    validate_core_with_tol(spec, inst, CLASS_TOL)
}

pub fn validate_core_with_tol(spec: &CoreBamSpec, inst: &Instance, tol: f64) -> Result<VerificationReport> {
    let tree = HistoryTree::new(inst)?;
    spec.check_shape(&tree)?;
    let mut rep = VerificationReport::new();
    for name in ["core_subgradient", "core_consistency", "core_symmetry", "core_monotone"] {
        rep.verdict(name);
    }
    for t in 0..tree.depth() {
        let dist = inst.stage(t);
        let n = tree.radix(t);
        // (a) subgradient and allocation range, (d) monotonicity
        for pid in 0..tree.level_size(t) {
            let kids: Vec<usize> = (0..n).map(|j| tree.child(t, pid, j)).collect();
            for i in 0..n {
                let yi = &spec.y[t][kids[i]];
                if yi.iter().any(|&x| x < -tol || x > 1.0 + tol) {
                    rep.fail(Witness::new("core_subgradient", tree.history(t + 1, kids[i]), vec![], 0.0, 0.0, -1.0));
                }
                let gi = spec.g[t + 1][kids[i]];
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let gj = spec.g[t + 1][kids[j]];
                    let diff: Vec<f64> = dist.value(i).iter().zip(dist.value(j)).map(|(a, b)| a - b).collect();
                    let rhs = gj + dot(&spec.y[t][kids[j]], &diff);
                    if gi < rhs - tol {
                        rep.fail(Witness::new("core_subgradient", tree.history(t + 1, kids[i]), vec![j], gi, rhs, gi - rhs));
                    }
                    let dominates = diff.iter().all(|&x| x >= 0.0);
                    if dominates && gi < gj - tol {
                        rep.fail(Witness::new("core_monotone", tree.history(t + 1, kids[i]), vec![j], gi, gj, gi - gj));
                    }
                    if dist.items() == 1 && diff[0] > 0.0 && yi[0] < spec.y[t][kids[j]][0] - tol {
                        rep.fail(Witness::new(
                            "core_subgradient",
                            tree.history(t + 1, kids[i]),
                            vec![j],
                            yi[0],
                            spec.y[t][kids[j]][0],
                            yi[0] - spec.y[t][kids[j]][0],
                        ));
                    }
                }
            }
        }
        // (b) consistency gap constant across histories of depth t
        let gaps: Vec<f64> = (0..tree.level_size(t))
            .map(|pid| {
                let e: f64 = (0..n).map(|j| dist.prob(j) * spec.g[t + 1][tree.child(t, pid, j)]).sum();
                spec.g[t][pid] - e
            })
            .collect();
        let (lo, hi) = argminmax(&gaps);
        if gaps[hi] - gaps[lo] > tol {
            rep.fail(Witness::new(
                "core_consistency",
                tree.history(t, hi),
                tree.history(t, lo),
                gaps[hi],
                gaps[lo],
                gaps[lo] - gaps[hi],
            ));
        }
    }
    // (c) symmetry: equal g at depth d means identical continuations
    for d in 1..tree.depth() {
        for class in utility_classes(&spec.g[d], tol) {
            let head = class[0];
            for &m in &class[1..] {
                if let Some((e, s)) = first_subtree_mismatch(&tree, spec, d, head, m, tol) {
                    let a = tree.history(e, m * span(&tree, d, e) + s);
                    let b = tree.history(e, head * span(&tree, d, e) + s);
                    rep.fail(Witness::new("core_symmetry", a, b, spec.g[e][m * span(&tree, d, e) + s], spec.g[e][head * span(&tree, d, e) + s], -1.0));
                }
            }
        }
    }
    Ok(rep)
}

fn argminmax(xs: &[f64]) -> (usize, usize) {
    let mut lo = 0;
    let mut hi = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x < xs[lo] {
            lo = i;
        }
        if x > xs[hi] {
            hi = i;
        }
    }
    (lo, hi)
}

/// Number of depth-`e` descendants of a depth-`d` node.
fn span(tree: &HistoryTree, d: usize, e: usize) -> usize {
    (d..e).map(|t| tree.radix(t)).product()
}

fn first_subtree_mismatch(
    tree: &HistoryTree,
    spec: &CoreBamSpec,
    d: usize,
    a: usize,
    b: usize,
    tol: f64,
) -> Option<(usize, usize)> {
    for e in d + 1..=tree.depth() {
        let r = span(tree, d, e);
        for s in 0..r {
            let (ia, ib) = (a * r + s, b * r + s);
            let same_g = (spec.g[e][ia] - spec.g[e][ib]).abs() <= tol;
            let same_y = spec.y[e - 1][ia].iter().zip(&spec.y[e - 1][ib]).all(|(x, y)| (x - y).abs() <= tol);
            if !same_g || !same_y {
                return Some((e, s));
            }
        }
    }
    None
}

/// Groups node ids by value: sorted, and a class spans at most `tol` from its first member.
fn utility_classes(values: &[f64], tol: f64) -> Vec<Vec<usize>> {
    let mut ids: Vec<usize> = (0..values.len()).collect();
    ids.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap().then(a.cmp(&b)));
    let mut classes: Vec<Vec<usize>> = Vec::new();
    let mut start = f64::NEG_INFINITY;
    for id in ids {
        if values[id] - start > tol || classes.is_empty() {
            start = values[id];
            classes.push(vec![id]);
        } else {
            classes.last_mut().unwrap().push(id);
        }
    }
    for c in &mut classes {
        c.sort_unstable();
    }
    classes
}

#[derive(Clone, Debug, PartialEq)]
struct BalanceClass {
    bal: f64,
    spend: f64,
    responses: Vec<BamResponse>,
}

/// A BAM given by tables keyed on (stage, balance class, support index).
#[derive(Clone, Debug, PartialEq)]
pub struct TabularBam {
    stages: Vec<Vec<BalanceClass>>,
}

impl TabularBam {
    fn class(&self, stage: usize, bal: f64) -> Result<&BalanceClass> {
        let classes = self.stages.get(stage).ok_or(BamError::BadHistory { history: vec![] })?;
        let pos = classes.partition_point(|c| c.bal < bal - CLASS_TOL);
        classes
            .get(pos)
            .filter(|c| (c.bal - bal).abs() <= CLASS_TOL)
            .ok_or_else(|| BamError::InvalidArgument(format!("balance {bal} is not reachable at stage {stage}")))
    }

    /// Number of distinct reachable balances per stage.
    pub fn balance_counts(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.len()).collect()
    }
}

impl BankAccountMechanism for TabularBam {
    fn num_stages(&self) -> usize {
        self.stages.len()
    }

    fn spend(&self, stage: usize, bal: f64) -> Result<f64> {
        Ok(self.class(stage, bal)?.spend)
    }

    fn respond(&self, stage: usize, bal: f64, ty: &StageType) -> Result<BamResponse> {
        let c = self.class(stage, bal)?;
        let i = ty.index.filter(|&i| i < c.responses.len()).ok_or(BamError::BadHistory { history: vec![] })?;
        Ok(c.responses[i].clone())
    }
}

fn responses_match(a: &[BamResponse], b: &[BamResponse]) -> bool {
    a.iter().zip(b).all(|(x, y)| {
        (x.pay - y.pay).abs() <= CLASS_TOL
            && (x.deposit - y.deposit).abs() <= CLASS_TOL
            && x.alloc.iter().zip(&y.alloc).all(|(p, q)| (p - q).abs() <= CLASS_TOL)
    })
}

/// Builds the core BAM `B^{g,y}`.
///
/// The stage utility is `û(h, v) = g_t(h·v) - min_{v'} g_t(h·v')`, which keeps the spend a
/// function of the balance alone; for one-item supports where adjacent downward IC binds
/// it coincides with the usual telescoping payment.
pub fn construct_core_bam(spec: &CoreBamSpec, inst: &Instance) -> Result<TabularBam> {
    let report = validate_core(spec, inst)?;
    if !report.passed() {
        return Err(BamError::CoreBamInvalid(report.summary()));
    }
    build_core_bam(spec, inst)
}

fn build_core_bam(spec: &CoreBamSpec, inst: &Instance) -> Result<TabularBam> {
    let tree = HistoryTree::new(inst)?;
    spec.check_shape(&tree)?;
    let depth = tree.depth();
    let mu: Vec<f64> = (0..=depth)
        .map(|d| {
            let inf = spec.g[d].iter().cloned().fold(f64::INFINITY, f64::min);
            match d {
                0 => 0.0,
                d if d == depth => inf.min(0.0),
                _ => inf,
            }
        })
        .collect();
    let bal = |d: usize, id: usize| if d == 0 { 0.0 } else { spec.g[d][id] - mu[d] };
    let mut stages = Vec::with_capacity(depth);
    for t in 0..depth {
        let dist = inst.stage(t);
        let mut classes: Vec<BalanceClass> = Vec::new();
        for pid in 0..tree.level_size(t) {
            let kids: Vec<usize> = (0..tree.radix(t)).map(|j| tree.child(t, pid, j)).collect();
            let m = kids.iter().map(|&c| spec.g[t + 1][c]).fold(f64::INFINITY, f64::min);
            let b = bal(t, pid);
            let spend = b - m + mu[t + 1];
            let responses: Vec<BamResponse> = kids
                .iter()
                .enumerate()
                .map(|(j, &c)| {
                    let u = spec.g[t + 1][c] - m;
                    let z = spec.y[t][c].clone();
                    let q = dot(&z, dist.value(j)) - u;
                    BamResponse { alloc: z, pay: if q < 0.0 && q > -CLASS_TOL { 0.0 } else { q }, deposit: u }
                })
                .collect();
            match classes.iter().find(|c| (c.bal - b).abs() <= CLASS_TOL) {
                Some(c) => {
                    if (c.spend - spend).abs() > CLASS_TOL || !responses_match(&c.responses, &responses) {
                        return Err(BamError::CoreBamInvalid(format!(
                            "histories with balance {b} at stage {t} need different policies"
                        )));
                    }
                }
                None => classes.push(BalanceClass { bal: b, spend, responses }),
            }
        }
        classes.sort_by(|a, b| a.bal.partial_cmp(&b.bal).unwrap());
        stages.push(classes);
    }
    Ok(TabularBam { stages })
}

/// Same allocations and pathwise total payment, with `p'_t = x_t·v_t` for `t < T` and
/// the remainder charged at the last stage.
pub fn shift_to_stagewise_ir(mech: &DirectMechanism, inst: &Instance) -> Result<DirectMechanism> {
    let tree = mech.validate(inst)?;
    let u = stage_utilities(mech, inst)?;
    let depth = tree.depth();
    let mut realized = vec![vec![0.0]];
    let mut paid = vec![vec![0.0]];
    let mut xv = vec![vec![0.0]];
    for d in 1..=depth {
        let dist = inst.stage(d - 1);
        let mut r = Vec::with_capacity(tree.level_size(d));
        let mut p = Vec::with_capacity(tree.level_size(d));
        let mut w = Vec::with_capacity(tree.level_size(d));
        for id in 0..tree.level_size(d) {
            let (pid, j) = tree.parent(d, id);
            let o = mech.outcome(d - 1, id);
            r.push(realized[d - 1][pid] + u[d][id]);
            p.push(paid[d - 1][pid] + o.payment);
            w.push(xv[d - 1][pid] + dot(&o.allocation, dist.value(j)));
        }
        realized.push(r);
        paid.push(p);
        xv.push(w);
    }
    for (id, &total) in realized[depth].iter().enumerate() {
        if total < -1e-7 {
            return Err(BamError::NotExPostIR { path: tree.history(depth, id), utility: total });
        }
    }
    let mut out = mech.clone();
    for t in 0..depth {
        let dist = inst.stage(t);
        for id in 0..tree.level_size(t + 1) {
            let j = tree.parent(t + 1, id).1;
            let o = out.outcome_mut(t, id);
            o.payment = if t + 1 < depth {
                dot(&o.allocation, dist.value(j))
            } else {
                paid[depth][id] - xv[depth - 1][tree.parent(depth, id).0]
            };
        }
    }
    Ok(out)
}

/// Expected payments from stages after depth `d`, for every node at each depth.
fn continuation_revenue(mech: &DirectMechanism, tree: &HistoryTree, inst: &Instance) -> Vec<Vec<f64>> {
    let depth = tree.depth();
    let mut r: Vec<Vec<f64>> = (0..=depth).map(|d| vec![0.0; tree.level_size(d)]).collect();
    for d in (0..depth).rev() {
        let dist = inst.stage(d);
        for id in 0..tree.level_size(d) {
            r[d][id] = (0..tree.radix(d))
                .map(|j| {
                    let c = tree.child(d, id, j);
                    dist.prob(j) * (mech.outcome(d, c).payment + r[d + 1][c])
                })
                .sum();
        }
    }
    r
}

/// Grafts, at each depth `1..T-1`, the highest-revenue continuation of every class of
/// histories with equal conditional utility onto all class members.
/// Expects a mechanism with zero stage utility before the last stage.
pub fn symmetrize(mech: &DirectMechanism, inst: &Instance) -> Result<DirectMechanism> {
    let tree = mech.validate(inst)?;
    let mut cur = mech.clone();
    for d in 1..tree.depth() {
        let g = conditional_utilities(&cur, inst)?;
        let pi = continuation_revenue(&cur, &tree, inst);
        for class in utility_classes(&g[d], CLASS_TOL) {
            if class.len() < 2 {
                continue;
            }
            let mut rep = class[0];
            for &m in &class[1..] {
                if pi[d][m] > pi[d][rep] + 1e-12 * pi[d][rep].abs().max(1.0) {
                    rep = m;
                }
            }
            for &m in &class {
                if m == rep {
                    continue;
                }
                for e in d + 1..=tree.depth() {
                    let r = span(&tree, d, e);
                    for s in 0..r {
                        let o = cur.outcome(e - 1, rep * r + s).clone();
                        *cur.outcome_mut(e - 1, m * r + s) = o;
                    }
                }
            }
        }
    }
    Ok(cur)
}

/// Core-BAM spec with `g = Utl(M | h)` and `y = x`.
pub fn core_spec_from_mechanism(mech: &DirectMechanism, inst: &Instance) -> Result<CoreBamSpec> {
    let g = conditional_utilities(mech, inst)?;
    let y = mech.levels().iter().map(|l| l.iter().map(|o| o.allocation.clone()).collect()).collect();
    Ok(CoreBamSpec { g, y })
}

/// The core BAM of a symmetric, stage-wise IC and IR mechanism.
pub fn core_bam_from_symmetric(mech: &DirectMechanism, inst: &Instance) -> Result<TabularBam> {
    let spec = core_spec_from_mechanism(mech, inst)?;
    let report = validate_core(&spec, inst)?;
    if !report.passed() {
        return Err(BamError::NotSymmetricOrNotIC(report.summary()));
    }
    build_core_bam(&spec, inst)
}
