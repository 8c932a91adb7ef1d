//! Approximately optimal BAMs: the spend-maximizing reference, the revenue upper bound,
//! the randomized mixture mechanism, the deterministic σ family, and the two-stage
//! equal-revenue example.

use std::fmt;

use serde::Serialize;

use crate::bam_engine::{induce_direct, run_bam, BamResponse, BankAccountMechanism};
use crate::error::{BamError, Result};
use crate::model::{enumerate_paths, expected_totals, DistKind, Instance, StageDistribution, StageType, Totals};
use crate::stage_mechs::{bundle_price_for_utility, myerson_stage, StageMechanism};

/// Exact expected revenue and utility of a BAM over the discrete history tree.
pub fn exact_totals(bam: &dyn BankAccountMechanism, inst: &Instance) -> Result<Totals> {
    expected_totals(&induce_direct(bam, inst)?, inst)
}

fn bundle_price(dist: &StageDistribution, theta: f64) -> Result<f64> {
    Ok(bundle_price_for_utility(dist, theta.min(dist.val()))?.price)
}

/// Deposits `1·v`, spends `min{bal, Val_t}`, gives everything away for free.
#[derive(Clone, Debug, PartialEq)]
pub struct BStar {
    vals: Vec<f64>,
}

pub fn b_star(inst: &Instance) -> BStar {
    BStar { vals: inst.vals() }
}

impl BankAccountMechanism for BStar {
    fn num_stages(&self) -> usize {
        self.vals.len()
    }

    fn spend(&self, stage: usize, bal: f64) -> Result<f64> {
        Ok(bal.min(self.vals[stage]))
    }

    fn respond(&self, _: usize, _: f64, ty: &StageType) -> Result<BamResponse> {
        Ok(BamResponse { alloc: vec![1.0; ty.value.len()], pay: 0.0, deposit: ty.bundle() })
    }
}

/// Per-stage Myerson prices for one-item stages; price 1 for equal-revenue stages.
pub fn default_msm(inst: &Instance) -> Result<Vec<StageMechanism>> {
    inst.stages()
        .iter()
        .enumerate()
        .map(|(t, d)| match d.kind() {
            DistKind::EqualRevenue { .. } => Ok(StageMechanism::PostedBundle { items: 1, price: 1.0 }),
            DistKind::Discrete { .. } => myerson_stage(d).map_err(|e| match e {
                BamError::UseProvidedStageMechanism { items, .. } => BamError::UseProvidedStageMechanism { stage: t, items },
                other => other,
            }),
        })
        .collect()
}

fn resolve_msm(inst: &Instance, msm: Option<&[StageMechanism]>) -> Result<Vec<StageMechanism>> {
    match msm {
        Some(m) if m.len() == inst.num_stages() => Ok(m.to_vec()),
        Some(_) => Err(BamError::InvalidArgument("one stage mechanism per stage is required".into())),
        None => default_msm(inst),
    }
}

/// Runs a fixed stage mechanism in every stage, with no account activity.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryIndependentBam {
    mechs: Vec<StageMechanism>,
}

pub fn msm_bam(inst: &Instance, msm: Option<&[StageMechanism]>) -> Result<HistoryIndependentBam> {
    Ok(HistoryIndependentBam { mechs: resolve_msm(inst, msm)? })
}

impl BankAccountMechanism for HistoryIndependentBam {
    fn num_stages(&self) -> usize {
        self.mechs.len()
    }

    fn spend(&self, _: usize, _: f64) -> Result<f64> {
        Ok(0.0)
    }

    fn respond(&self, stage: usize, _: f64, ty: &StageType) -> Result<BamResponse> {
        let o = self.mechs[stage].outcome(ty)?;
        Ok(BamResponse { alloc: o.allocation, pay: o.payment, deposit: 0.0 })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct UpperBound {
    pub msm_revenue: f64,
    pub expected_spend_star: f64,
    pub total: f64,
}

/// `Rev(M^SM) + E[Σ s*_τ]`, an upper bound on the revenue of every dynamic mechanism.
pub fn revenue_upper_bound(inst: &Instance, msm: Option<&[StageMechanism]>) -> Result<UpperBound> {
    inst.require_discrete()?;
    let mechs = resolve_msm(inst, msm)?;
    let msm_revenue =
        mechs.iter().zip(inst.stages()).map(|(m, d)| m.expected_revenue(d)).sum::<Result<f64>>()?;
    let star = b_star(inst);
    let mut expected_spend_star = 0.0;
    for (path, prob) in enumerate_paths(inst)? {
        let types: Vec<StageType> = path.iter().enumerate().map(|(t, &i)| inst.stage(t).stage_type(i)).collect();
        expected_spend_star += prob * run_bam(&star, &types)?.spends.iter().sum::<f64>();
    }
    Ok(UpperBound { msm_revenue, expected_spend_star, total: msm_revenue + expected_spend_star })
}

/// Fractional mixture of a stage mechanism (weight `1/(2α+1)`), give-for-free and the
/// grand-bundle price with parameter `(2 + 1/α)·s_t` (weight `α/(2α+1)` each).
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureBam {
    mechs: Vec<StageMechanism>,
    dists: Vec<StageDistribution>,
    alpha: f64,
}

impl MixtureBam {
    pub fn weights(&self) -> (f64, f64) {
        let a = 1.0 / (2.0 * self.alpha + 1.0);
        (a, self.alpha * a)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Bundle-price parameter for a given spend.
    pub fn theta(&self, spend: f64) -> f64 {
        (2.0 + 1.0 / self.alpha) * spend
    }
}

pub fn corollary_alpha(inst: &Instance, approx_msm: &[StageMechanism], alpha: f64) -> Result<MixtureBam> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(BamError::InvalidArgument(format!("alpha {alpha} not in (0, 1]")));
    }
    if approx_msm.len() != inst.num_stages() {
        return Err(BamError::InvalidArgument("one stage mechanism per stage is required".into()));
    }
    Ok(MixtureBam { mechs: approx_msm.to_vec(), dists: inst.stages().to_vec(), alpha })
}

/// The mixture with `α = 1`: equal thirds of the stage mechanism, give-for-free and the
/// grand-bundle price at `3·s_t`, with deposit `1·v/3` and spend `min{bal, Val_t/3}`.
pub fn three_approx(inst: &Instance, msm: Option<&[StageMechanism]>) -> Result<MixtureBam> {
    corollary_alpha(inst, &resolve_msm(inst, msm)?, 1.0)
}

impl BankAccountMechanism for MixtureBam {
    fn num_stages(&self) -> usize {
        self.dists.len()
    }

    fn spend(&self, stage: usize, bal: f64) -> Result<f64> {
        Ok(bal.min(self.weights().1 * self.dists[stage].val()))
    }

    fn respond(&self, stage: usize, bal: f64, ty: &StageType) -> Result<BamResponse> {
        let (a, b) = self.weights();
        let dist = &self.dists[stage];
        let theta = self.theta(self.spend(stage, bal)?);
        let price = bundle_price(dist, theta)?;
        let sold = ty.bundle() >= price;
        let m = self.mechs[stage].outcome(ty)?;
        let bundle = if sold { b } else { 0.0 };
        let alloc = m.allocation.iter().map(|x| a * x + b + bundle).collect();
        let pay = a * m.payment + if sold { b * price } else { 0.0 };
        Ok(BamResponse { alloc, pay, deposit: b * ty.bundle() })
    }
}

/// Bit `t` selects give-for-free (`false`) or spend-and-sell-the-bundle (`true`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SigmaString {
    pub bits: Vec<bool>,
}

impl SigmaString {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    /// Bit `t` is bit `t` of `mask`.
    pub fn from_mask(stages: usize, mask: u64) -> Self {
        Self { bits: (0..stages).map(|t| (mask >> t) & 1 == 1).collect() }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// The string with bits `0..=t` flipped.
    pub fn prefix_flip(&self, t: usize) -> Self {
        Self { bits: self.bits.iter().enumerate().map(|(i, &b)| if i <= t { !b } else { b }).collect() }
    }
}

impl fmt::Display for SigmaString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SigmaBam {
    sigma: SigmaString,
    dists: Vec<StageDistribution>,
}

impl SigmaBam {
    pub fn sigma(&self) -> &SigmaString {
        &self.sigma
    }
}

pub fn sigma_bam(inst: &Instance, sigma: SigmaString) -> Result<SigmaBam> {
    if sigma.len() != inst.num_stages() {
        return Err(BamError::InvalidArgument(format!("sigma has {} bits for {} stages", sigma.len(), inst.num_stages())));
    }
    Ok(SigmaBam { sigma, dists: inst.stages().to_vec() })
}

impl BankAccountMechanism for SigmaBam {
    fn num_stages(&self) -> usize {
        self.dists.len()
    }

    fn spend(&self, stage: usize, bal: f64) -> Result<f64> {
        Ok(if self.sigma.bits[stage] { bal.min(self.dists[stage].val()) } else { 0.0 })
    }

    fn respond(&self, stage: usize, bal: f64, ty: &StageType) -> Result<BamResponse> {
        let k = ty.value.len();
        if !self.sigma.bits[stage] {
            return Ok(BamResponse { alloc: vec![1.0; k], pay: 0.0, deposit: ty.bundle() });
        }
        let price = bundle_price(&self.dists[stage], self.spend(stage, bal)?)?;
        Ok(if ty.bundle() >= price {
            BamResponse { alloc: vec![1.0; k], pay: price, deposit: 0.0 }
        } else {
            BamResponse { alloc: vec![0.0; k], pay: 0.0, deposit: 0.0 }
        })
    }
}

/// Either the history-independent composition or a σ-BAM.
#[derive(Clone, Debug, PartialEq)]
pub enum DeterministicBam {
    Msm(HistoryIndependentBam),
    Sigma(SigmaBam),
}

impl DeterministicBam {
    pub fn name(&self) -> String {
        match self {
            DeterministicBam::Msm(_) => "msm".into(),
            DeterministicBam::Sigma(s) => format!("sigma-{}", s.sigma),
        }
    }

    fn inner(&self) -> &dyn BankAccountMechanism {
        match self {
            DeterministicBam::Msm(m) => m,
            DeterministicBam::Sigma(s) => s,
        }
    }
}

impl BankAccountMechanism for DeterministicBam {
    fn num_stages(&self) -> usize {
        self.inner().num_stages()
    }

    fn spend(&self, stage: usize, bal: f64) -> Result<f64> {
        self.inner().spend(stage, bal)
    }

    fn respond(&self, stage: usize, bal: f64, ty: &StageType) -> Result<BamResponse> {
        self.inner().respond(stage, bal, ty)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BestDeterministic {
    pub mech: DeterministicBam,
    pub revenue: f64,
    pub msm_revenue: f64,
    pub best_sigma_revenue: f64,
    /// `α/(4α+1)`.
    pub guarantee: f64,
}

pub const MAX_SIGMA_STAGES: usize = 20;

/// Best of the deterministic stage-mechanism composition and all `2^T` σ-BAMs, by
/// exact evaluation. Ties keep the earlier candidate (composition first, then σ by mask).
pub fn best_deterministic(inst: &Instance, det_msm: Option<&[StageMechanism]>, alpha: f64) -> Result<BestDeterministic> {
    let t_max = inst.num_stages();
    if t_max > MAX_SIGMA_STAGES {
        return Err(BamError::SigmaEnumerationTooLarge { stages: t_max });
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(BamError::InvalidArgument(format!("alpha {alpha} not in (0, 1]")));
    }
    let mechs = resolve_msm(inst, det_msm)?;
    if let Some(t) = mechs.iter().position(|m| !m.is_deterministic()) {
        return Err(BamError::InvalidArgument(format!("stage mechanism {t} is randomized")));
    }
    let msm = HistoryIndependentBam { mechs };
    let msm_revenue = exact_totals(&msm, inst)?.revenue;
    let mut best = (DeterministicBam::Msm(msm), msm_revenue);
    let mut best_sigma_revenue = f64::NEG_INFINITY;
    for mask in 0..(1u64 << t_max) {
        let s = sigma_bam(inst, SigmaString::from_mask(t_max, mask))?;
        let rev = exact_totals(&s, inst)?.revenue;
        best_sigma_revenue = best_sigma_revenue.max(rev);
        if rev > best.1 {
            best = (DeterministicBam::Sigma(s), rev);
        }
    }
    Ok(BestDeterministic {
        mech: best.0,
        revenue: best.1,
        msm_revenue,
        best_sigma_revenue,
        guarantee: alpha / (4.0 * alpha + 1.0),
    })
}

/// Two equal-revenue stages, optionally separated by zero-value stages: the first sells
/// at price 1 and banks `v - 1`, the last spends the balance (capped at `ln v_max`) and
/// posts `v_max·e^{-s}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Example1Bam {
    pub v_max: f64,
    pub capped: bool,
    pub gap: usize,
}

pub fn example1_bam(v_max: f64) -> Result<Example1Bam> {
    Example1Bam::new(v_max, true, 0)
}

impl Example1Bam {
    pub fn new(v_max: f64, capped: bool, gap: usize) -> Result<Self> {
        if !(v_max > 1.0) || !v_max.is_finite() {
            return Err(BamError::InvalidArgument(format!("v_max {v_max} must exceed 1")));
        }
        Ok(Self { v_max, capped, gap })
    }

    fn last(&self) -> usize {
        self.gap + 1
    }

    /// Last-stage posted price at balance `bal`.
    pub fn final_price(&self, bal: f64) -> f64 {
        let s = if self.capped { bal.min(self.v_max.ln()) } else { bal };
        self.v_max * (-s).exp()
    }
}

impl BankAccountMechanism for Example1Bam {
    fn num_stages(&self) -> usize {
        self.gap + 2
    }

    fn spend(&self, stage: usize, bal: f64) -> Result<f64> {
        Ok(if stage == self.last() {
            if self.capped {
                bal.min(self.v_max.ln())
            } else {
                bal
            }
        } else {
            0.0
        })
    }

    fn respond(&self, stage: usize, bal: f64, ty: &StageType) -> Result<BamResponse> {
        let v = ty.bundle();
        let none = BamResponse { alloc: vec![0.0; ty.value.len()], pay: 0.0, deposit: 0.0 };
        if stage == 0 {
            return Ok(if v >= 1.0 {
                BamResponse { alloc: vec![1.0], pay: 1.0, deposit: v - 1.0 }
            } else {
                none
            });
        }
        if stage == self.last() {
            let price = self.final_price(bal);
            if v >= price {
                return Ok(BamResponse { alloc: vec![1.0], pay: price, deposit: 0.0 });
            }
        }
        Ok(none)
    }
}

/// Two independent equal-revenue stages.
pub fn example1_instance(v_max: f64) -> Result<Instance> {
    example2_instance(v_max, 0)
}

/// Equal-revenue stages at both ends with `zero_stages` value-zero stages between.
pub fn example2_instance(v_max: f64, zero_stages: usize) -> Result<Instance> {
    let er = StageDistribution::equal_revenue(v_max)?;
    let zero = StageDistribution::scalar(&[0.0], &[1.0])?;
    let mut stages = vec![er.clone()];
    stages.extend(std::iter::repeat_n(zero, zero_stages));
    stages.push(er);
    Instance::new(stages)
}

/// Expected revenue of `Example1Bam` under equal-revenue stages, by adaptive Simpson
/// quadrature of the last-stage revenue against the first-stage density.
pub fn example1_revenue(v_max: f64, capped: bool) -> Result<f64> {
    let bam = Example1Bam::new(v_max, capped, 0)?;
    let l = v_max.ln();
    // spend plus last-stage revenue of price `r`: 1 while r >= 1, else r
    let h = |v: f64| {
        let s = if capped { (v - 1.0).min(l) } else { v - 1.0 };
        let r = bam.final_price(v - 1.0);
        s + if r >= 1.0 { 1.0 } else { r }
    };
    let density = |v: f64| h(v) / (v * v);
    let kink = (1.0 + l).min(v_max);
    let body = adaptive_simpson(&density, 1.0, kink, 1e-13) + adaptive_simpson(&density, kink, v_max, 1e-13);
    Ok(1.0 + body + h(v_max) / v_max)
}

pub(crate) fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let diff = left + right - whole;
        if depth == 0 || diff.abs() <= 15.0 * tol {
            left + right + diff / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    if b <= a {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    rec(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, 48)
}

/// One report line for an approximation mechanism.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ApproxReport {
    pub mechanism_name: String,
    pub exact_revenue: f64,
    pub upper_bound: f64,
    pub ratio_vs_bound: f64,
    pub ratio_vs_bruteforce: Option<f64>,
}

impl ApproxReport {
    pub fn new(name: &str, revenue: f64, upper_bound: f64, opt: Option<f64>) -> Self {
        let ratio = |d: f64| if d > 0.0 { revenue / d } else { 1.0 };
        Self {
            mechanism_name: name.into(),
            exact_revenue: revenue,
            upper_bound,
            ratio_vs_bound: ratio(upper_bound),
            ratio_vs_bruteforce: opt.map(ratio),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HistoryTree;

    fn uni(vals: &[f64]) -> StageDistribution {
        let p = 1.0 / vals.len() as f64;
        StageDistribution::scalar(vals, &vec![p; vals.len()]).unwrap()
    }

    fn types(inst: &Instance, path: &[usize]) -> Vec<StageType> {
        path.iter().enumerate().map(|(t, &i)| inst.stage(t).stage_type(i)).collect()
    }

    #[test]
    fn b_star_spends() {
        let inst = Instance::new(vec![uni(&[1.0, 2.0]), uni(&[1.0, 2.0])]).unwrap();
        let tr = run_bam(&b_star(&inst), &types(&inst, &[1, 0])).unwrap();
        assert_eq!(tr.spends, vec![0.0, 1.5]);
        assert_eq!(tr.balances[1], 2.0);
        let one = Instance::new(vec![uni(&[1.0, 2.0])]).unwrap();
        assert_eq!(run_bam(&b_star(&one), &types(&one, &[1])).unwrap().spends, vec![0.0]);
    }

    #[test]
    fn upper_bound_examples() {
        let inst = Instance::new(vec![uni(&[1.0, 2.0]), uni(&[1.0, 2.0])]).unwrap();
        let ub = revenue_upper_bound(&inst, None).unwrap();
        assert!((ub.msm_revenue - 2.0).abs() < 1e-12);
        assert!((ub.expected_spend_star - 1.25).abs() < 1e-12);
        assert!((ub.total - 3.25).abs() < 1e-12);
        let one = Instance::new(vec![StageDistribution::scalar(&[0.0, 1.0, 2.0], &[0.25, 0.5, 0.25]).unwrap()]).unwrap();
        assert!((revenue_upper_bound(&one, None).unwrap().total - 0.75).abs() < 1e-12);
    }

    #[test]
    fn three_approx_single_stage() {
        let d = StageDistribution::scalar(&[0.0, 1.0, 2.0], &[0.25, 0.5, 0.25]).unwrap();
        let inst = Instance::new(vec![d]).unwrap();
        let rev = exact_totals(&three_approx(&inst, None).unwrap(), &inst).unwrap().revenue;
        assert!((rev - (0.75 / 3.0 + 2.0 * 0.25 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn three_approx_allocations_are_thirds() {
        let inst = Instance::new(vec![uni(&[1.0, 2.0]), uni(&[1.0, 2.0])]).unwrap();
        let m = induce_direct(&three_approx(&inst, None).unwrap(), &inst).unwrap();
        for o in m.levels().iter().flatten() {
            let x = o.allocation[0] * 3.0;
            assert!([1.0, 2.0, 3.0].iter().any(|k| (x - k).abs() < 1e-12), "{x}");
        }
    }

    #[test]
    fn alpha_half_weights() {
        let inst = Instance::new(vec![uni(&[1.0, 2.0])]).unwrap();
        let m = corollary_alpha(&inst, &default_msm(&inst).unwrap(), 0.5).unwrap();
        assert_eq!(m.weights(), (0.5, 0.25));
        assert_eq!(m.theta(1.0), 4.0);
    }

    #[test]
    fn sigma_extremes() {
        let inst = Instance::new(vec![uni(&[1.0, 2.0]), uni(&[1.0, 3.0])]).unwrap();
        let zero = sigma_bam(&inst, SigmaString::from_mask(2, 0)).unwrap();
        assert_eq!(exact_totals(&zero, &inst).unwrap().revenue, 0.0);
        let s = sigma_bam(&inst, SigmaString::new(vec![false, true])).unwrap();
        let tr = run_bam(&s, &types(&inst, &[1, 1])).unwrap();
        assert_eq!(tr.deposits[0], 2.0);
        assert_eq!(tr.spends[1], 2.0);
        assert!(induce_direct(&s, &inst).unwrap().is_deterministic());
        assert!(sigma_bam(&inst, SigmaString::from_mask(3, 0)).is_err());
    }

    #[test]
    fn best_deterministic_single_stage_is_myerson() {
        let d = StageDistribution::scalar(&[0.0, 1.0, 2.0], &[0.25, 0.5, 0.25]).unwrap();
        let inst = Instance::new(vec![d]).unwrap();
        let b = best_deterministic(&inst, None, 1.0).unwrap();
        assert!((b.revenue - 0.75).abs() < 1e-12);
        assert_eq!(b.mech.name(), "msm");
        assert!((b.best_sigma_revenue - 0.5).abs() < 1e-12);
        assert_eq!(b.guarantee, 0.2);
    }

    #[test]
    fn sigma_enumeration_guard() {
        let stages = vec![uni(&[1.0]); 21];
        let inst = Instance::new(stages).unwrap();
        assert!(matches!(best_deterministic(&inst, None, 1.0), Err(BamError::SigmaEnumerationTooLarge { stages: 21 })));
    }

    #[test]
    fn example1_paths() {
        let v_max = 20.0f64;
        let bam = example1_bam(v_max).unwrap();
        let ty = |v: f64| StageType { index: None, value: vec![v] };
        let tr = run_bam(&bam, &[ty(2.0), ty(v_max)]).unwrap();
        assert_eq!(tr.balances, vec![0.0, 1.0, 0.0]);
        assert_eq!(tr.spends, vec![0.0, 1.0]);
        assert!((tr.outcomes[1].payment - (1.0 + v_max / 1f64.exp())).abs() < 1e-12);
        let tr = run_bam(&bam, &[ty(v_max), ty(v_max)]).unwrap();
        assert!((bam.final_price(tr.balances[1]) - 1.0).abs() < 1e-12);
        let tr = run_bam(&bam, &[ty(0.5), ty(2.0)]).unwrap();
        assert_eq!(tr.outcomes[0].allocation, vec![0.0]);
        assert_eq!(tr.outcomes[1].allocation, vec![0.0]);
    }

    #[test]
    fn example1_revenue_above_two() {
        for v_max in [std::f64::consts::E.powi(2), 50.0] {
            let r = example1_revenue(v_max, true).unwrap();
            assert!(r > 2.0);
        }
        assert!(example1_revenue(1.5, true).unwrap() > 2.0);
    }

    #[test]
    fn example2_instance_shape() {
        let inst = example2_instance(10.0, 3).unwrap();
        assert_eq!(inst.num_stages(), 5);
        let bam = Example1Bam::new(10.0, true, 3).unwrap();
        assert_eq!(bam.num_stages(), 5);
    }

    #[test]
    fn msm_bam_is_history_independent() {
        let inst = Instance::new(vec![uni(&[1.0, 2.0]), uni(&[1.0, 3.0])]).unwrap();
        let m = induce_direct(&msm_bam(&inst, None).unwrap(), &inst).unwrap();
        let tree = HistoryTree::new(&inst).unwrap();
        for id in 0..tree.level_size(2) {
            let j = tree.parent(2, id).1;
            assert_eq!(m.outcome(1, id), m.outcome(1, j));
        }
    }
}
