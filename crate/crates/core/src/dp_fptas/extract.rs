use super::backward_dp::SolvedPolicy;
use crate::error::{BamError, Result};
use crate::model::{DirectMechanism, HistoryTree, Instance, StageOutcome};

/// Forward pass from `ξ*_0`: each node runs the optimal posted-price mixture for its
/// promise and hands every child the promise `g = ξ + û(v) - E[û]`.
///
/// Payments are set so that the realized utility after each stage equals the child's
/// promise: the first stage pays out `ξ*_0 - E[û]` up front and later stages charge
/// `E[û]` on top of the mixture price. Every path ends with non-negative utility and
/// no stage changes the expected continuation.
pub fn extract_mechanism(policy: &SolvedPolicy, inst: &Instance) -> Result<DirectMechanism> {
    let tree = HistoryTree::new(inst)?;
    if tree.depth() != policy.num_stages() {
        return Err(BamError::InvalidArgument("policy and instance have different stage counts".into()));
    }
    let mut promises = vec![policy.xi_star];
    let mut levels = Vec::with_capacity(tree.depth());
    for t in 0..tree.depth() {
        let dist = inst.stage(t);
        let stage = &policy.stages[t];
        let mut row = Vec::with_capacity(tree.level_size(t + 1));
        let mut next = Vec::with_capacity(tree.level_size(t + 1));
        for (pid, &xi) in promises.iter().enumerate() {
            let w = policy.mixture(t, xi)?.weights;
            let eu = stage.expected_utility(&w);
            let spend = if t == 0 { eu - xi } else { eu };
            for j in 0..tree.radix(t) {
                let v = dist.value(j)[0];
                let y = stage.alloc_at(&w, v);
                let u = stage.utility_at(&w, v);
                let g = xi + u - eu;
                if g < -1e-9 {
                    return Err(BamError::PromiseUnderflow { history: tree.history(t + 1, tree.child(t, pid, j)), promise: g });
                }
                next.push(g.max(0.0));
                row.push(StageOutcome { allocation: vec![y], payment: y * v - u + spend });
            }
        }
        levels.push(row);
        promises = next;
    }
    Ok(DirectMechanism::new(levels))
}
