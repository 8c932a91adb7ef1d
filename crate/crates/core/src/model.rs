//! Instances, histories and tabular direct mechanisms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BamError, Result};

/// Absolute tolerance for probability sums.
pub const PROB_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub enum DistKind {
    Discrete { support: Vec<Vec<f64>>, probs: Vec<f64> },
    /// `Pr[v >= r] = 1/r` on `[1, v_max]`, with an atom of mass `1/v_max` at `v_max`.
    EqualRevenue { v_max: f64 },
}

/// Type distribution of one stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageDistribution {
    items: usize,
    kind: DistKind,
}

/// A realized (or reported) stage type. `index` is the support index for discrete stages.
#[derive(Clone, Debug, PartialEq)]
pub struct StageType {
    pub index: Option<usize>,
    pub value: Vec<f64>,
}

impl StageType {
    pub fn bundle(&self) -> f64 {
        self.value.iter().sum()
    }
}

impl StageDistribution {
    pub fn discrete(support: Vec<Vec<f64>>, probs: Vec<f64>) -> Result<Self> {
        let bad = |m: String| Err(BamError::InvalidInstance(m));
        if support.is_empty() {
            return bad("empty support".into());
        }
        if support.len() != probs.len() {
            return bad(format!("{} support points but {} probabilities", support.len(), probs.len()));
        }
        let items = support[0].len();
        if items == 0 {
            return bad("valuation vectors must have at least one item".into());
        }
        for v in &support {
            if v.len() != items {
                return bad("valuation vectors have different lengths".into());
            }
            if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return bad(format!("valuation {v:?} has a negative or non-finite coordinate"));
            }
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return bad("probabilities must be finite and non-negative".into());
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_TOL {
            return bad(format!("probabilities sum to {total}"));
        }
        for i in 0..support.len() {
            for j in 0..i {
                if support[i] == support[j] {
                    return bad(format!("support point {:?} repeated", support[i]));
                }
            }
        }
        Ok(Self { items, kind: DistKind::Discrete { support, probs } })
    }

    /// One-item discrete distribution.
    pub fn scalar(values: &[f64], probs: &[f64]) -> Result<Self> {
        Self::discrete(values.iter().map(|v| vec![*v]).collect(), probs.to_vec())
    }

    pub fn equal_revenue(v_max: f64) -> Result<Self> {
        if !v_max.is_finite() || v_max <= 1.0 {
            return Err(BamError::InvalidInstance(format!("equal revenue needs v_max > 1, got {v_max}")));
        }
        Ok(Self { items: 1, kind: DistKind::EqualRevenue { v_max } })
    }

    pub fn items(&self) -> usize {
        self.items
    }

    pub fn kind(&self) -> &DistKind {
        &self.kind
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.kind, DistKind::Discrete { .. })
    }

    /// Support size, `None` for continuous stages.
    pub fn support_len(&self) -> Option<usize> {
        match &self.kind {
            DistKind::Discrete { probs, .. } => Some(probs.len()),
            DistKind::EqualRevenue { .. } => None,
        }
    }

    /// Valuation vector of support point `i`. Panics on continuous stages.
    pub fn value(&self, i: usize) -> &[f64] {
        match &self.kind {
            DistKind::Discrete { support, .. } => &support[i],
            DistKind::EqualRevenue { .. } => panic!("continuous stage has no support index"),
        }
    }

    pub fn prob(&self, i: usize) -> f64 {
        match &self.kind {
            DistKind::Discrete { probs, .. } => probs[i],
            DistKind::EqualRevenue { .. } => panic!("continuous stage has no support index"),
        }
    }

    pub fn probs(&self) -> &[f64] {
        match &self.kind {
            DistKind::Discrete { probs, .. } => probs,
            DistKind::EqualRevenue { .. } => &[],
        }
    }

    /// Grand-bundle value `1·v` of support point `i`.
    pub fn bundle(&self, i: usize) -> f64 {
        self.value(i).iter().sum()
    }

    /// Stage type for support point `i`.
    pub fn stage_type(&self, i: usize) -> StageType {
        StageType { index: Some(i), value: self.value(i).to_vec() }
    }

    /// Expected total valuation `E[1·v]`.
    pub fn val(&self) -> f64 {
        match &self.kind {
            DistKind::Discrete { probs, .. } => {
                (0..probs.len()).map(|i| probs[i] * self.bundle(i)).sum()
            }
            DistKind::EqualRevenue { v_max } => 1.0 + v_max.ln(),
        }
    }

    /// Inverse-CDF draw from a uniform `u` in `[0, 1)`.
    pub fn sample_with(&self, u: f64) -> StageType {
        match &self.kind {
            DistKind::Discrete { probs, .. } => {
                let mut acc = 0.0;
                let mut pick = probs.len() - 1;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                // never land on a zero-mass point through rounding at the top
                while probs[pick] == 0.0 && pick > 0 {
                    pick -= 1;
                }
                self.stage_type(pick)
            }
            DistKind::EqualRevenue { v_max } => {
                let v = if u >= 1.0 - 1.0 / v_max { *v_max } else { (1.0 / (1.0 - u)).min(*v_max) };
                StageType { index: None, value: vec![v] }
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum StageSpec {
    Discrete { support: Vec<Vec<f64>>, probs: Vec<f64> },
    EqualRevenue { v_max: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct InstanceSpec {
    stages: Vec<StageSpec>,
}

/// A multi-stage instance with independent stage distributions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceSpec", into = "InstanceSpec")]
pub struct Instance {
    stages: Vec<StageDistribution>,
}

impl TryFrom<InstanceSpec> for Instance {
    type Error = BamError;

    fn try_from(spec: InstanceSpec) -> Result<Self> {
        let stages = spec
            .stages
            .into_iter()
            .map(|s| match s {
                StageSpec::Discrete { support, probs } => StageDistribution::discrete(support, probs),
                StageSpec::EqualRevenue { v_max } => StageDistribution::equal_revenue(v_max),
            })
            .collect::<Result<Vec<_>>>()?;
        Instance::new(stages)
    }
}

impl From<Instance> for InstanceSpec {
    fn from(inst: Instance) -> Self {
        let stages = inst
            .stages
            .into_iter()
            .map(|d| match d.kind {
                DistKind::Discrete { support, probs } => StageSpec::Discrete { support, probs },
                DistKind::EqualRevenue { v_max } => StageSpec::EqualRevenue { v_max },
            })
            .collect();
        InstanceSpec { stages }
    }
}

impl Instance {
    pub fn new(stages: Vec<StageDistribution>) -> Result<Self> {
        if stages.is_empty() {
            return Err(BamError::InvalidInstance("an instance needs at least one stage".into()));
        }
        Ok(Self { stages })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| BamError::InvalidInstance(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("instance serializes")
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn stage(&self, t: usize) -> &StageDistribution {
        &self.stages[t]
    }

    pub fn stages(&self) -> &[StageDistribution] {
        &self.stages
    }

    pub fn is_discrete(&self) -> bool {
        self.stages.iter().all(|s| s.is_discrete())
    }

    pub fn require_discrete(&self) -> Result<()> {
        match self.stages.iter().position(|s| !s.is_discrete()) {
            Some(stage) => Err(BamError::UnsupportedContinuous { stage }),
            None => Ok(()),
        }
    }

    /// `Val_t` for every stage.
    pub fn vals(&self) -> Vec<f64> {
        self.stages.iter().map(|s| s.val()).collect()
    }
}

/// Shape of the discrete history tree. Nodes at depth `d` (histories of length `d`)
/// are numbered in lexicographic order of their support-index paths.
#[derive(Clone, Debug)]
pub struct HistoryTree {
    radix: Vec<usize>,
    level_sizes: Vec<usize>,
    probs: Vec<Vec<f64>>,
}

impl HistoryTree {
    pub fn new(inst: &Instance) -> Result<Self> {
        inst.require_discrete()?;
        let radix: Vec<usize> = inst.stages.iter().map(|s| s.support_len().unwrap()).collect();
        let mut level_sizes = vec![1usize];
        for (t, r) in radix.iter().enumerate() {
            let n = level_sizes[t].checked_mul(*r).ok_or(BamError::InstanceTooLarge {
                nodes: usize::MAX,
                cap: usize::MAX,
            })?;
            level_sizes.push(n);
        }
        let mut probs = vec![vec![1.0]];
        for t in 0..radix.len() {
            let dist = inst.stage(t);
            let prev = &probs[t];
            let mut next = Vec::with_capacity(level_sizes[t + 1]);
            for p in prev {
                for j in 0..radix[t] {
                    next.push(p * dist.prob(j));
                }
            }
            probs.push(next);
        }
        Ok(Self { radix, level_sizes, probs })
    }

    /// Number of stages `T`.
    pub fn depth(&self) -> usize {
        self.radix.len()
    }

    /// Support size of stage `t` (0-based).
    pub fn radix(&self, t: usize) -> usize {
        self.radix[t]
    }

    pub fn level_size(&self, depth: usize) -> usize {
        self.level_sizes[depth]
    }

    /// Nodes with non-empty histories.
    pub fn num_nodes(&self) -> usize {
        self.level_sizes[1..].iter().sum()
    }

    pub fn child(&self, depth: usize, id: usize, j: usize) -> usize {
        id * self.radix[depth] + j
    }

    /// Parent id and last support index of a node at `depth >= 1`.
    pub fn parent(&self, depth: usize, id: usize) -> (usize, usize) {
        let r = self.radix[depth - 1];
        (id / r, id % r)
    }

    pub fn prob(&self, depth: usize, id: usize) -> f64 {
        self.probs[depth][id]
    }

    pub fn history(&self, depth: usize, mut id: usize) -> Vec<usize> {
        let mut h = vec![0; depth];
        for d in (0..depth).rev() {
            h[d] = id % self.radix[d];
            id /= self.radix[d];
        }
        h
    }

    pub fn id_of(&self, h: &[usize]) -> Result<usize> {
        if h.len() > self.depth() {
            return Err(BamError::BadHistory { history: h.to_vec() });
        }
        let mut id = 0;
        for (d, &j) in h.iter().enumerate() {
            if j >= self.radix[d] {
                return Err(BamError::BadHistory { history: h.to_vec() });
            }
            id = id * self.radix[d] + j;
        }
        Ok(id)
    }
}

/// Iterator over full type paths and their probabilities.
pub struct PathIter {
    radix: Vec<usize>,
    probs: Vec<Vec<f64>>,
    cur: Option<Vec<usize>>,
}

impl Iterator for PathIter {
    type Item = (Vec<usize>, f64);

    fn next(&mut self) -> Option<Self::Item> {
        let cur = self.cur.as_mut()?;
        let out = cur.clone();
        let p = out.iter().enumerate().map(|(t, &j)| self.probs[t][j]).product();
        let mut t = cur.len();
        loop {
            if t == 0 {
                self.cur = None;
                break;
            }
            t -= 1;
            cur[t] += 1;
            if cur[t] < self.radix[t] {
                break;
            }
            cur[t] = 0;
        }
        Some((out, p))
    }
}

/// Every full type path with its product probability.
pub fn enumerate_paths(inst: &Instance) -> Result<PathIter> {
    inst.require_discrete()?;
    Ok(PathIter {
        radix: inst.stages.iter().map(|s| s.support_len().unwrap()).collect(),
        probs: inst.stages.iter().map(|s| s.probs().to_vec()).collect(),
        cur: Some(vec![0; inst.num_stages()]),
    })
}

/// Deterministic draw of a full path, a pure function of `(seed, index)`.
pub fn sample_path(inst: &Instance, seed: u64, index: u64) -> Vec<StageType> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    inst.stages.iter().map(|s| s.sample_with(rng.gen::<f64>())).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub allocation: Vec<f64>,
    pub payment: f64,
}

impl StageOutcome {
    pub fn zero(items: usize) -> Self {
        Self { allocation: vec![0.0; items], payment: 0.0 }
    }

    pub fn utility(&self, value: &[f64]) -> f64 {
        dot(&self.allocation, value) - self.payment
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MechanismNode {
    pub history: Vec<usize>,
    pub alloc: Vec<f64>,
    pub pay: f64,
}

/// Tabular mechanism file: one record per non-root history node.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MechanismFile {
    pub nodes: Vec<MechanismNode>,
}

/// Direct mechanism over the discrete history tree. `levels[t][id]` is the stage-`t`
/// outcome (0-based stage) at the node of depth `t + 1` with the given id.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectMechanism {
    levels: Vec<Vec<StageOutcome>>,
}

impl DirectMechanism {
    pub fn new(levels: Vec<Vec<StageOutcome>>) -> Self {
        Self { levels }
    }

    pub fn from_fn(tree: &HistoryTree, mut f: impl FnMut(usize, usize) -> StageOutcome) -> Self {
        let levels = (0..tree.depth())
            .map(|t| (0..tree.level_size(t + 1)).map(|id| f(t, id)).collect())
            .collect();
        Self { levels }
    }

    pub fn num_stages(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[Vec<StageOutcome>] {
        &self.levels
    }

    pub fn outcome(&self, t: usize, id: usize) -> &StageOutcome {
        &self.levels[t][id]
    }

    pub fn outcome_mut(&mut self, t: usize, id: usize) -> &mut StageOutcome {
        &mut self.levels[t][id]
    }

    /// Checks that the table matches the instance's tree.
    pub fn validate(&self, inst: &Instance) -> Result<HistoryTree> {
        let tree = HistoryTree::new(inst)?;
        if self.levels.len() != tree.depth() {
            return Err(BamError::IncompleteMechanism(format!(
                "{} stages in mechanism, {} in instance",
                self.levels.len(),
                tree.depth()
            )));
        }
        for (t, level) in self.levels.iter().enumerate() {
            if level.len() != tree.level_size(t + 1) {
                return Err(BamError::IncompleteMechanism(format!(
                    "stage {t} has {} nodes, expected {}",
                    level.len(),
                    tree.level_size(t + 1)
                )));
            }
            let k = inst.stage(t).items();
            for (id, o) in level.iter().enumerate() {
                let bad_alloc = o.allocation.len() != k
                    || o.allocation.iter().any(|x| !x.is_finite() || *x < -1e-9 || *x > 1.0 + 1e-9);
                if bad_alloc || !o.payment.is_finite() {
                    return Err(BamError::IncompleteMechanism(format!(
                        "invalid outcome at history {:?}",
                        tree.history(t + 1, id)
                    )));
                }
            }
        }
        Ok(tree)
    }

    pub fn is_deterministic(&self) -> bool {
        self.levels
            .iter()
            .flatten()
            .all(|o| o.allocation.iter().all(|&x| x.abs() <= 1e-12 || (x - 1.0).abs() <= 1e-12))
    }

    pub fn to_file(&self, tree: &HistoryTree) -> MechanismFile {
        let mut nodes = Vec::new();
        for (t, level) in self.levels.iter().enumerate() {
            for (id, o) in level.iter().enumerate() {
                nodes.push(MechanismNode {
                    history: tree.history(t + 1, id),
                    alloc: o.allocation.clone(),
                    pay: o.payment,
                });
            }
        }
        MechanismFile { nodes }
    }

    pub fn from_file(file: &MechanismFile, inst: &Instance) -> Result<Self> {
        let tree = HistoryTree::new(inst)?;
        let mut levels: Vec<Vec<Option<StageOutcome>>> =
            (0..tree.depth()).map(|t| vec![None; tree.level_size(t + 1)]).collect();
        for node in &file.nodes {
            if node.history.is_empty() {
                return Err(BamError::BadHistory { history: vec![] });
            }
            let id = tree.id_of(&node.history)?;
            levels[node.history.len() - 1][id] =
                Some(StageOutcome { allocation: node.alloc.clone(), payment: node.pay });
        }
        let mut out = Vec::with_capacity(levels.len());
        for (t, level) in levels.into_iter().enumerate() {
            let mut row = Vec::with_capacity(level.len());
            for (id, o) in level.into_iter().enumerate() {
                row.push(o.ok_or_else(|| {
                    BamError::IncompleteMechanism(format!("missing history {:?}", tree.history(t + 1, id)))
                })?);
            }
            out.push(row);
        }
        let mech = Self { levels: out };
        mech.validate(inst)?;
        Ok(mech)
    }

    pub fn from_json(text: &str, inst: &Instance) -> Result<Self> {
        let file: MechanismFile =
            serde_json::from_str(text).map_err(|e| BamError::IncompleteMechanism(e.to_string()))?;
        Self::from_file(&file, inst)
    }

    pub fn to_json(&self, inst: &Instance) -> Result<String> {
        let tree = HistoryTree::new(inst)?;
        Ok(serde_json::to_string(&self.to_file(&tree)).expect("mechanism serializes"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub revenue: f64,
    pub utility: f64,
    pub welfare: f64,
}

/// Realized stage utility `u_t` at every node, by depth `1..=T` (index 0 unused).
pub fn stage_utilities(mech: &DirectMechanism, inst: &Instance) -> Result<Vec<Vec<f64>>> {
    let tree = mech.validate(inst)?;
    let mut out = vec![vec![]];
    for t in 0..tree.depth() {
        let dist = inst.stage(t);
        let row = (0..tree.level_size(t + 1))
            .map(|id| {
                let j = tree.parent(t + 1, id).1;
                mech.outcome(t, id).utility(dist.value(j))
            })
            .collect();
        out.push(row);
    }
    Ok(out)
}

/// Promised utility `U_t(h)` for every node at depths `0..=T`.
pub fn promised_utilities(mech: &DirectMechanism, inst: &Instance) -> Result<Vec<Vec<f64>>> {
    let tree = mech.validate(inst)?;
    let u = stage_utilities(mech, inst)?;
    let depth = tree.depth();
    let mut big_u: Vec<Vec<f64>> = (0..=depth).map(|d| vec![0.0; tree.level_size(d)]).collect();
    for d in (0..depth).rev() {
        let dist = inst.stage(d);
        for id in 0..tree.level_size(d) {
            let mut acc = 0.0;
            for j in 0..tree.radix(d) {
                let c = tree.child(d, id, j);
                acc += dist.prob(j) * (u[d + 1][c] + big_u[d + 1][c]);
            }
            big_u[d][id] = acc;
        }
    }
    Ok(big_u)
}

/// Conditional utility `Utl(M | h)` for every node at depths `0..=T`.
pub fn conditional_utilities(mech: &DirectMechanism, inst: &Instance) -> Result<Vec<Vec<f64>>> {
    let tree = mech.validate(inst)?;
    let u = stage_utilities(mech, inst)?;
    let big_u = promised_utilities(mech, inst)?;
    let mut realized: Vec<Vec<f64>> = vec![vec![0.0]];
    for d in 1..=tree.depth() {
        let row = (0..tree.level_size(d))
            .map(|id| realized[d - 1][tree.parent(d, id).0] + u[d][id])
            .collect();
        realized.push(row);
    }
    Ok(realized
        .iter()
        .zip(&big_u)
        .map(|(r, f)| r.iter().zip(f).map(|(a, b)| a + b).collect())
        .collect())
}

/// `Utl(M | h)` for one history prefix.
pub fn conditional_utility(mech: &DirectMechanism, inst: &Instance, h: &[usize]) -> Result<f64> {
    let tree = mech.validate(inst)?;
    let id = tree.id_of(h)?;
    Ok(conditional_utilities(mech, inst)?[h.len()][id])
}

/// Expected revenue, buyer utility and welfare.
pub fn expected_totals(mech: &DirectMechanism, inst: &Instance) -> Result<Totals> {
    let tree = mech.validate(inst)?;
    let mut revenue = 0.0;
    let mut utility = 0.0;
    for t in 0..tree.depth() {
        let dist = inst.stage(t);
        for id in 0..tree.level_size(t + 1) {
            let p = tree.prob(t + 1, id);
            let o = mech.outcome(t, id);
            let j = tree.parent(t + 1, id).1;
            revenue += p * o.payment;
            utility += p * o.utility(dist.value(j));
        }
    }
    Ok(Totals { revenue, utility, welfare: revenue + utility })
}
