//! History-independent single-stage mechanisms.

use crate::error::{BamError, Result};
use crate::model::{dot, DistKind, StageDistribution, StageOutcome, StageType};

/// A single-stage mechanism.
#[derive(Clone, Debug, PartialEq)]
pub enum StageMechanism {
    /// Sell the grand bundle iff `1·v >= price`. Price zero is give-for-free.
    PostedBundle { items: usize, price: f64 },
    /// Outcome per support index of a discrete stage.
    Table { alloc: Vec<Vec<f64>>, pay: Vec<f64> },
}

impl StageMechanism {
    pub fn outcome(&self, ty: &StageType) -> Result<StageOutcome> {
        match self {
            StageMechanism::PostedBundle { items, price } => {
                if ty.bundle() >= *price {
                    Ok(StageOutcome { allocation: vec![1.0; *items], payment: *price })
                } else {
                    Ok(StageOutcome::zero(*items))
                }
            }
            StageMechanism::Table { alloc, pay } => {
                let i = ty.index.filter(|&i| i < pay.len()).ok_or(BamError::BadHistory { history: vec![] })?;
                Ok(StageOutcome { allocation: alloc[i].clone(), payment: pay[i] })
            }
        }
    }

    pub fn is_deterministic(&self) -> bool {
        match self {
            StageMechanism::PostedBundle { .. } => true,
            StageMechanism::Table { alloc, .. } => {
                alloc.iter().flatten().all(|&x| x == 0.0 || x == 1.0)
            }
        }
    }

    /// Expected seller revenue.
    pub fn expected_revenue(&self, dist: &StageDistribution) -> Result<f64> {
        match (self, dist.kind()) {
            (StageMechanism::PostedBundle { price, .. }, DistKind::EqualRevenue { v_max }) => {
                Ok(if *price > *v_max {
                    0.0
                } else if *price >= 1.0 {
                    1.0
                } else {
                    *price
                })
            }
            (_, DistKind::EqualRevenue { .. }) => Err(BamError::UnsupportedContinuous { stage: 0 }),
            (_, DistKind::Discrete { probs, .. }) => {
                let mut acc = 0.0;
                for (i, p) in probs.iter().enumerate() {
                    acc += p * self.outcome(&dist.stage_type(i))?.payment;
                }
                Ok(acc)
            }
        }
    }

    /// Expected buyer utility under truthful reporting.
    pub fn expected_utility(&self, dist: &StageDistribution) -> Result<f64> {
        match (self, dist.kind()) {
            (StageMechanism::PostedBundle { price, .. }, DistKind::EqualRevenue { v_max }) => {
                Ok(equal_revenue_bundle_utility(*v_max, *price))
            }
            (_, DistKind::EqualRevenue { .. }) => Err(BamError::UnsupportedContinuous { stage: 0 }),
            (_, DistKind::Discrete { probs, .. }) => {
                let mut acc = 0.0;
                for (i, p) in probs.iter().enumerate() {
                    let ty = dist.stage_type(i);
                    acc += p * self.outcome(&ty)?.utility(&ty.value);
                }
                Ok(acc)
            }
        }
    }
}

/// `E[(v - r)^+]` under the equal-revenue distribution.
fn equal_revenue_bundle_utility(v_max: f64, r: f64) -> f64 {
    if r >= v_max {
        0.0
    } else if r >= 1.0 {
        (v_max / r).ln()
    } else {
        1.0 + v_max.ln() - r.max(0.0)
    }
}

/// Optimal posted price over support points for a one-item discrete stage.
/// Revenue ties go to the lowest price.
pub fn myerson_stage(dist: &StageDistribution) -> Result<StageMechanism> {
    if dist.items() != 1 {
        return Err(BamError::UseProvidedStageMechanism { stage: 0, items: dist.items() });
    }
    let n = dist.support_len().ok_or(BamError::UnsupportedContinuous { stage: 0 })?;
    let mut prices: Vec<f64> = (0..n).map(|i| dist.bundle(i)).collect();
    prices.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut best = (0.0f64, 0.0);
    for &r in &prices {
        let sold: f64 = (0..n).filter(|&i| dist.bundle(i) >= r).map(|i| dist.prob(i)).sum();
        let rev = r * sold;
        if rev > best.0 + 1e-12 * best.0.max(1.0) {
            best = (rev, r);
        }
    }
    Ok(StageMechanism::PostedBundle { items: 1, price: best.1 })
}

pub fn give_for_free(dist: &StageDistribution) -> StageMechanism {
    StageMechanism::PostedBundle { items: dist.items(), price: 0.0 }
}

/// Grand-bundle price calibrated to a target expected buyer utility.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrandBundlePrice {
    pub theta: f64,
    pub price: f64,
}

/// Finds `r` with `E[(1·v - r)^+] = theta`.
pub fn bundle_price_for_utility(dist: &StageDistribution, theta: f64) -> Result<GrandBundlePrice> {
    let val = dist.val();
    let slack = 1e-9 * val.max(1.0);
    if !theta.is_finite() || theta < -slack || theta > val + slack {
        return Err(BamError::ThetaOutOfRange { theta, val });
    }
    let th = theta.clamp(0.0, val);
    let price = match dist.kind() {
        DistKind::EqualRevenue { v_max } => {
            if th <= v_max.ln() {
                v_max * (-th).exp()
            } else {
                val - th
            }
        }
        DistKind::Discrete { probs, .. } => {
            // distinct positive-mass bundle values, descending
            let mut pts: Vec<(f64, f64)> = Vec::new();
            for (i, &p) in probs.iter().enumerate() {
                if p > 0.0 {
                    pts.push((dist.bundle(i), p));
                }
            }
            pts.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
            let mut merged: Vec<(f64, f64)> = Vec::new();
            for (b, p) in pts {
                match merged.last_mut() {
                    Some(last) if last.0 == b => last.1 += p,
                    _ => merged.push((b, p)),
                }
            }
            let mut mass = 0.0;
            let mut sum = 0.0;
            let mut r = merged[0].0;
            for m in 0..merged.len() {
                mass += merged[m].1;
                sum += merged[m].1 * merged[m].0;
                // on [next, c_m] the utility is sum - mass * r
                let next = if m + 1 < merged.len() { merged[m + 1].0 } else { 0.0 };
                let u_next = sum - mass * next;
                if th <= u_next || m + 1 == merged.len() {
                    r = ((sum - th) / mass).clamp(next, merged[m].0);
                    break;
                }
            }
            if th == 0.0 {
                r = merged[0].0;
            }
            r
        }
    };
    Ok(GrandBundlePrice { theta: th, price })
}

/// Posted price for the grand bundle with expected buyer utility `theta`.
pub fn grand_bundle_mech(dist: &StageDistribution, theta: f64) -> Result<StageMechanism> {
    let r = bundle_price_for_utility(dist, theta)?;
    Ok(StageMechanism::PostedBundle { items: dist.items(), price: r.price })
}

/// Single-shot IC and IR over the whole discrete support.
pub fn single_shot_violations(mech: &StageMechanism, dist: &StageDistribution, tol: f64) -> Result<Vec<(usize, usize)>> {
    let n = dist.support_len().ok_or(BamError::UnsupportedContinuous { stage: 0 })?;
    let outs: Vec<StageOutcome> = (0..n).map(|i| mech.outcome(&dist.stage_type(i))).collect::<Result<_>>()?;
    let mut bad = Vec::new();
    for i in 0..n {
        let v = dist.value(i);
        let truth = outs[i].utility(v);
        if truth < -tol {
            bad.push((i, i));
        }
        for (j, o) in outs.iter().enumerate() {
            if dot(&o.allocation, v) - o.payment > truth + tol {
                bad.push((i, j));
            }
        }
    }
    Ok(bad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn price_of(m: &StageMechanism) -> f64 {
        match m {
            StageMechanism::PostedBundle { price, .. } => *price,
            _ => panic!(),
        }
    }

    #[test]
    fn myerson_examples() {
        let d = StageDistribution::scalar(&[0.0, 1.0, 2.0], &[0.25, 0.5, 0.25]).unwrap();
        let m = myerson_stage(&d).unwrap();
        assert_eq!(price_of(&m), 1.0);
        assert_eq!(m.expected_revenue(&d).unwrap(), 0.75);
        let d = StageDistribution::scalar(&[5.0], &[1.0]).unwrap();
        assert_eq!(myerson_stage(&d).unwrap().expected_revenue(&d).unwrap(), 5.0);
        let d = StageDistribution::scalar(&[1.0, 2.0], &[0.5, 0.5]).unwrap();
        assert_eq!(price_of(&myerson_stage(&d).unwrap()), 1.0);
    }

    #[test]
    fn myerson_rejects_bundles() {
        let d = StageDistribution::discrete(vec![vec![1.0, 1.0]], vec![1.0]).unwrap();
        assert!(matches!(myerson_stage(&d), Err(BamError::UseProvidedStageMechanism { .. })));
    }

    #[test]
    fn free_gives_val() {
        let d = StageDistribution::discrete(vec![vec![1.0, 2.0], vec![0.0, 4.0]], vec![0.5, 0.5]).unwrap();
        let m = give_for_free(&d);
        assert_eq!(m.outcome(&d.stage_type(0)).unwrap(), StageOutcome { allocation: vec![1.0, 1.0], payment: 0.0 });
        assert_eq!(m.expected_utility(&d).unwrap(), d.val());
        assert!(single_shot_violations(&m, &d, 1e-12).unwrap().is_empty());
    }

    #[test]
    fn bundle_price_examples() {
        let d = StageDistribution::scalar(&[1.0, 2.0], &[0.5, 0.5]).unwrap();
        assert_eq!(bundle_price_for_utility(&d, 0.0).unwrap().price, 2.0);
        assert_eq!(bundle_price_for_utility(&d, 0.25).unwrap().price, 1.5);
        assert_eq!(bundle_price_for_utility(&d, 1.5).unwrap().price, 0.0);
        let m = grand_bundle_mech(&d, 0.25).unwrap();
        assert_eq!(m.outcome(&d.stage_type(0)).unwrap().allocation, vec![0.0]);
        assert_eq!(m.outcome(&d.stage_type(1)).unwrap().payment, 1.5);
        assert_eq!(m.expected_utility(&d).unwrap(), 0.25);
        assert!(matches!(bundle_price_for_utility(&d, 1.6), Err(BamError::ThetaOutOfRange { .. })));
    }

    #[test]
    fn equal_revenue_price() {
        let d = StageDistribution::equal_revenue(E * E).unwrap();
        let r = bundle_price_for_utility(&d, 1.0).unwrap().price;
        assert!((r - E).abs() < 1e-12);
        // quadrature of the survival function 1/x over [r, v_max]
        let n = 20_000;
        let h = (E * E - r) / n as f64;
        let mut q = 0.0;
        for k in 0..n {
            let a = r + k as f64 * h;
            q += h / 6.0 * (1.0 / a + 4.0 / (a + h / 2.0) + 1.0 / (a + h));
        }
        assert!((q - 1.0).abs() < 1e-10);
    }

    #[test]
    fn example_one_stage_two_price() {
        let v_max = 20.0;
        let d = StageDistribution::equal_revenue(v_max).unwrap();
        let v1: f64 = 2.5;
        let r = bundle_price_for_utility(&d, v1 - 1.0).unwrap().price;
        assert!((r - v_max / (v1 - 1.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn zero_mass_top_value_is_skipped() {
        let d = StageDistribution::scalar(&[1.0, 3.0], &[1.0, 0.0]).unwrap();
        assert_eq!(bundle_price_for_utility(&d, 0.0).unwrap().price, 1.0);
        assert_eq!(bundle_price_for_utility(&d, 0.5).unwrap().price, 0.5);
    }
}
