#![allow(dead_code)]

use bamlab::dp_fptas::{backward_dp, extract_mechanism, PiecewiseLinearConcave};
use bamlab::model::{DirectMechanism, HistoryTree, Instance, StageDistribution, StageOutcome};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_probs(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
    let s: f64 = w.iter().sum();
    let mut p: Vec<f64> = w.iter().map(|x| x / s).collect();
    let head: f64 = p[..k - 1].iter().sum();
    p[k - 1] = 1.0 - head;
    p
}

/// One-item stage with up to `max_support` distinct values; `grid` snaps values to
/// multiples of `grid` so that ties between histories are common.
pub fn random_stage(rng: &mut ChaCha8Rng, max_support: usize, grid: Option<f64>) -> StageDistribution {
    let k = rng.gen_range(1..=max_support);
    let mut vals: Vec<f64> = Vec::new();
    while vals.len() < k {
        let v: f64 = rng.gen_range(0.0..=10.0);
        let v = match grid {
            Some(g) => (v / g).round() * g,
            None => (v * 100.0).round() / 100.0,
        };
        if !vals.contains(&v) {
            vals.push(v);
        }
    }
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let p = random_probs(rng, k);
    StageDistribution::scalar(&vals, &p).unwrap()
}

/// `T ∈ {1,2,3}`, one item per stage, support at most 3, values in `[0, 10]`.
pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let t = rng.gen_range(1..=3);
    Instance::new((0..t).map(|_| random_stage(rng, 3, None)).collect()).unwrap()
}

/// The fixed family of 50 instances shared by the solver and approximation checks.
pub fn instance_family() -> Vec<Instance> {
    let mut r = rng(20_240_601);
    (0..50).map(|_| random_instance(&mut r)).collect()
}

pub fn grid_instance(rng: &mut ChaCha8Rng, max_stages: usize, max_support: usize) -> Instance {
    let t = rng.gen_range(1..=max_stages);
    Instance::new((0..t).map(|_| random_stage(rng, max_support, Some(1.0))).collect()).unwrap()
}

/// Random concave piecewise-linear function on `[0, b]` with decreasing slopes.
pub fn random_concave(rng: &mut ChaCha8Rng, b: f64) -> PiecewiseLinearConcave {
    let n = rng.gen_range(1..=8);
    let mut xs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..b)).collect();
    xs.push(0.0);
    xs.push(b);
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup_by(|a, b| (*a - *b).abs() < 1e-6 * b.abs().max(1.0));
    let mut slopes: Vec<f64> = (0..xs.len() - 1).map(|_| rng.gen_range(-3.0..3.0)).collect();
    slopes.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut vals = vec![rng.gen_range(-2.0..2.0)];
    for i in 0..slopes.len() {
        let last = vals[i];
        vals.push(last + slopes[i] * (xs[i + 1] - xs[i]));
    }
    PiecewiseLinearConcave::new(xs, vals).unwrap()
}

/// Envelope payments for per-node monotone scalar allocations. Each parent's lowest
/// utility is set so that every stage utility is non-negative, which makes the result
/// stage-wise IC and ex-post IR.
pub fn project_payments(inst: &Instance, alloc: &[Vec<f64>]) -> DirectMechanism {
    let tree = HistoryTree::new(inst).unwrap();
    let depth = tree.depth();
    let mut g_next: Vec<f64> = vec![0.0; tree.level_size(depth)];
    let mut levels: Vec<Vec<StageOutcome>> = vec![Vec::new(); depth];
    for t in (0..depth).rev() {
        let dist = inst.stage(t);
        let n = tree.radix(t);
        let cont: Vec<f64> = (0..tree.level_size(t + 1))
            .map(|id| {
                if t + 1 == depth {
                    0.0
                } else {
                    (0..tree.radix(t + 1)).map(|j| inst.stage(t + 1).prob(j) * g_next[tree.child(t + 1, id, j)]).sum()
                }
            })
            .collect();
        let mut g = vec![0.0; tree.level_size(t + 1)];
        let mut row = vec![StageOutcome::zero(1); tree.level_size(t + 1)];
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| dist.bundle(a).partial_cmp(&dist.bundle(b)).unwrap());
        for pid in 0..tree.level_size(t) {
            let ids: Vec<usize> = order.iter().map(|&j| tree.child(t, pid, j)).collect();
            let mut acc = vec![0.0; n];
            for k in 1..n {
                acc[k] = acc[k - 1] + alloc[t][ids[k - 1]] * (dist.bundle(order[k]) - dist.bundle(order[k - 1]));
            }
            let base = (0..n).map(|k| cont[ids[k]] - acc[k]).fold(f64::NEG_INFINITY, f64::max);
            for k in 0..n {
                let id = ids[k];
                g[id] = base + acc[k];
                let x = alloc[t][id];
                row[id] = StageOutcome { allocation: vec![x], payment: x * dist.bundle(order[k]) + cont[id] - g[id] };
            }
        }
        levels[t] = row;
        g_next = g;
    }
    DirectMechanism::new(levels)
}

/// Perturbs the allocations of a solver-extracted mechanism, restores monotonicity
/// per node and reprices with envelope payments. `deterministic` rounds to 0/1.
pub fn random_ic_ir_mechanism(rng: &mut ChaCha8Rng, inst: &Instance, deterministic: bool) -> DirectMechanism {
    let tree = HistoryTree::new(inst).unwrap();
    let base = extract_mechanism(&backward_dp(inst, 0.2).unwrap(), inst).unwrap();
    let mut alloc: Vec<Vec<f64>> = Vec::new();
    for t in 0..tree.depth() {
        let dist = inst.stage(t);
        let n = tree.radix(t);
        let mut row = vec![0.0; tree.level_size(t + 1)];
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| dist.bundle(a).partial_cmp(&dist.bundle(b)).unwrap());
        for pid in 0..tree.level_size(t) {
            let mut xs: Vec<f64> = (0..n)
                .map(|j| {
                    let x = base.outcome(t, tree.child(t, pid, j)).allocation[0] + rng.gen_range(-0.4..0.4);
                    let x = x.clamp(0.0, 1.0);
                    if deterministic {
                        if x >= 0.5 {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        x
                    }
                })
                .collect();
            if rng.gen_bool(0.2) {
                xs.shuffle(rng);
            }
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (k, &j) in order.iter().enumerate() {
                row[tree.child(t, pid, j)] = xs[k];
            }
        }
        alloc.push(row);
    }
    project_payments(inst, &alloc)
}
