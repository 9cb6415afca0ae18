//! Classification-tree induction over auxiliary variables.
//!
//! Internal nodes test one call-count variable against a threshold (`<=`
//! goes left), leaves hold the empirical distribution of class labels seen
//! during training. Splits are chosen greedily by Gini impurity decrease,
//! with thresholds at midpoints between consecutive distinct observed
//! values. Columns are sorted once up front so datasets with thousands of
//! auxiliary variables stay cheap to split.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affine::AffineModel;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("need at least two labeled rows to learn a tree, got {0}")]
    TooFewRows(usize),
    #[error("need at least one auxiliary variable")]
    NoAuxVariables,
    #[error("row {row} has {got} auxiliary values, expected {expected}")]
    RowWidth {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("row {row}: non-finite auxiliary value")]
    NonFinite { row: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },
    #[error("routing vector has {got} values, expected {expected}")]
    RouteWidth { got: usize, expected: usize },
    #[error("tree has no attached models")]
    ModelsNotAttached,
    #[error("{models} models attached for {classes} classes")]
    ModelCount { models: usize, classes: usize },
    #[error("{folds} folds for {rows} rows")]
    BadFolds { folds: usize, rows: usize },
}

/// Labeled auxiliary-variable rows: the training set for tree induction.
#[derive(Debug, Clone)]
pub struct LabeledAuxSet {
    aux_names: Vec<String>,
    values: Vec<f64>, // row-major n_rows x n_vars
    labels: Vec<usize>,
    n_vars: usize,
    n_classes: usize,
}

impl LabeledAuxSet {
    /// Builds a labeled set, inferring the class count from the labels.
    pub fn new(aux_names: Vec<String>, rows: Vec<(Vec<f64>, usize)>) -> Result<Self, TreeError> {
        let classes = rows.iter().map(|(_, l)| l + 1).max().unwrap_or(0);
        Self::with_classes(aux_names, rows, classes)
    }

    /// Builds a labeled set with an explicit class count (so classes with no
    /// rows still occupy a slot in leaf distributions).
    pub fn with_classes(
        aux_names: Vec<String>,
        rows: Vec<(Vec<f64>, usize)>,
        n_classes: usize,
    ) -> Result<Self, TreeError> {
        let n_vars = aux_names.len();
        let mut values = Vec::with_capacity(rows.len() * n_vars);
        let mut labels = Vec::with_capacity(rows.len());
        for (i, (z, label)) in rows.into_iter().enumerate() {
            if z.len() != n_vars {
                return Err(TreeError::RowWidth {
                    row: i,
                    got: z.len(),
                    expected: n_vars,
                });
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(TreeError::NonFinite { row: i });
            }
            if label >= n_classes {
                return Err(TreeError::LabelRange {
                    label,
                    classes: n_classes,
                });
            }
            values.extend_from_slice(&z);
            labels.push(label);
        }
        Ok(LabeledAuxSet {
            aux_names,
            values,
            labels,
            n_vars,
            n_classes,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn aux_names(&self) -> &[String] {
        &self.aux_names
    }

    pub fn label(&self, row: usize) -> usize {
        self.labels[row]
    }

    #[inline]
    fn value(&self, row: usize, var: usize) -> f64 {
        self.values[row * self.n_vars + var]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.n_vars..(row + 1) * self.n_vars]
    }
}

/// Tree growth limits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_height: usize,
    pub min_leaf: usize,
    pub min_impurity_decrease: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_height: 10,
            min_leaf: 5,
            min_impurity_decrease: 1e-4,
        }
    }
}

/// A leaf: empirical distribution over the class labels (and, once attached,
/// the affine models) plus how many training rows landed here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    pub distribution: Vec<f64>,
    pub support: usize,
}

impl Leaf {
    pub fn argmax_label(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.distribution.iter().enumerate() {
            if p > self.distribution[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Split {
        var: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf(Leaf),
}

impl TreeNode {
    fn height(&self) -> usize {
        match self {
            TreeNode::Leaf(_) => 0,
            TreeNode::Split { left, right, .. } => 1 + left.height().max(right.height()),
        }
    }

    fn leaf_count(&self) -> usize {
        match self {
            TreeNode::Leaf(_) => 1,
            TreeNode::Split { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    /// Variable indices used by any split in this subtree.
    pub fn collect_split_vars(&self, out: &mut Vec<usize>) {
        if let TreeNode::Split {
            var, left, right, ..
        } = self
        {
            out.push(*var);
            left.collect_split_vars(out);
            right.collect_split_vars(out);
        }
    }
}

/// Binary discriminant tree: threshold tests over auxiliary variables at
/// internal nodes, class distributions (weighting the attached affine
/// models) at leaves.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscriminantTree {
    pub root: TreeNode,
    /// Affine models indexed by class label; empty until attached.
    pub models: Vec<AffineModel>,
    pub aux_names: Vec<String>,
    pub height: usize,
    pub leaf_count: usize,
    pub flags: Vec<String>,
}

impl DiscriminantTree {
    /// Attaches one affine model per class label.
    pub fn with_models(mut self, models: Vec<AffineModel>) -> Result<Self, TreeError> {
        let classes = self.n_classes();
        if models.len() != classes {
            return Err(TreeError::ModelCount {
                models: models.len(),
                classes,
            });
        }
        self.models = models;
        Ok(self)
    }

    pub fn n_classes(&self) -> usize {
        fn first_leaf(node: &TreeNode) -> &Leaf {
            match node {
                TreeNode::Leaf(l) => l,
                TreeNode::Split { left, .. } => first_leaf(left),
            }
        }
        first_leaf(&self.root).distribution.len()
    }

    /// Routes an auxiliary valuation to its unique leaf (`<=` goes left).
    pub fn route(&self, z: &[f64]) -> Result<&Leaf, TreeError> {
        if z.len() != self.aux_names.len() {
            return Err(TreeError::RouteWidth {
                got: z.len(),
                expected: self.aux_names.len(),
            });
        }
        let mut node = &self.root;
        loop {
            match node {
                TreeNode::Leaf(leaf) => return Ok(leaf),
                TreeNode::Split {
                    var,
                    threshold,
                    left,
                    right,
                } => {
                    node = if z[*var] <= *threshold { left } else { right };
                }
            }
        }
    }

    /// Most likely class label for an auxiliary valuation.
    pub fn predict_label(&self, z: &[f64]) -> Result<usize, TreeError> {
        Ok(self.route(z)?.argmax_label())
    }

    /// Mixture prediction: the routed leaf's distribution weights the
    /// attached models evaluated at `x`.
    pub fn predict_output(&self, z: &[f64], x: &[f64]) -> Result<f64, TreeError> {
        if self.models.is_empty() {
            return Err(TreeError::ModelsNotAttached);
        }
        let leaf = self.route(z)?;
        debug_assert_eq!(leaf.distribution.len(), self.models.len());
        Ok(leaf
            .distribution
            .iter()
            .zip(&self.models)
            .filter(|(d, _)| **d > 0.0)
            .map(|(d, m)| d * m.eval(x))
            .sum())
    }

    /// Variable indices appearing in at least one split.
    pub fn used_variables(&self) -> Vec<usize> {
        let mut vars = Vec::new();
        self.root.collect_split_vars(&mut vars);
        vars.sort_unstable();
        vars.dedup();
        vars
    }
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    let mut sum_sq = 0.0;
    for &c in counts {
        let p = c as f64 / n;
        sum_sq += p * p;
    }
    1.0 - sum_sq
}

#[derive(Debug, Clone, Copy)]
struct SplitCandidate {
    decrease: f64,
    var: usize,
    threshold: f64,
}

impl SplitCandidate {
    /// Total order: larger decrease wins, ties broken by lowest variable
    /// index then lowest threshold, so parallel reduction is deterministic.
    fn better_than(&self, other: &SplitCandidate) -> bool {
        if self.decrease != other.decrease {
            return self.decrease > other.decrease;
        }
        if self.var != other.var {
            return self.var < other.var;
        }
        self.threshold < other.threshold
    }
}

/// Shared split-search state: per-variable presorted row orders over the
/// full data set, reused across cross-validation folds.
pub struct TreeBuilder<'a> {
    data: &'a LabeledAuxSet,
    presort: Vec<Vec<u32>>,
}

impl<'a> TreeBuilder<'a> {
    pub fn new(data: &'a LabeledAuxSet) -> Result<Self, TreeError> {
        if data.n_vars() == 0 {
            return Err(TreeError::NoAuxVariables);
        }
        let n = data.n_rows();
        let presort: Vec<Vec<u32>> = (0..data.n_vars())
            .into_par_iter()
            .map(|v| {
                let mut idx: Vec<u32> = (0..n as u32).collect();
                idx.sort_by(|&a, &b| {
                    data.value(a as usize, v)
                        .partial_cmp(&data.value(b as usize, v))
                        .expect("aux values are finite")
                        .then(a.cmp(&b))
                });
                idx
            })
            .collect();
        Ok(TreeBuilder { data, presort })
    }

    /// Learns a tree over a subset of the rows.
    pub fn fit(&self, rows: &[u32], params: &TreeParams) -> Result<DiscriminantTree, TreeError> {
        if rows.len() < 2 {
            return Err(TreeError::TooFewRows(rows.len()));
        }
        let min_leaf = params.min_leaf.max(1);
        let mut membership = vec![false; self.data.n_rows()];
        let mut flags = Vec::new();
        let root = self.build(rows, 0, params, min_leaf, &mut membership, &mut flags);
        let height = root.height();
        let leaf_count = root.leaf_count();
        Ok(DiscriminantTree {
            root,
            models: Vec::new(),
            aux_names: self.data.aux_names().to_vec(),
            height,
            leaf_count,
            flags,
        })
    }

    fn build(
        &self,
        rows: &[u32],
        depth: usize,
        params: &TreeParams,
        min_leaf: usize,
        membership: &mut Vec<bool>,
        flags: &mut Vec<String>,
    ) -> TreeNode {
        let data = self.data;
        let mut counts = vec![0usize; data.n_classes()];
        for &r in rows {
            counts[data.label(r as usize)] += 1;
        }
        let n = rows.len();
        let parent_gini = gini(&counts, n);

        let make_leaf = |counts: &[usize]| {
            let distribution = counts.iter().map(|&c| c as f64 / n as f64).collect();
            TreeNode::Leaf(Leaf {
                distribution,
                support: n,
            })
        };

        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= params.max_height || n < 2 * min_leaf {
            return make_leaf(&counts);
        }

        for &r in rows {
            membership[r as usize] = true;
        }
        let best = (0..data.n_vars())
            .into_par_iter()
            .filter_map(|var| {
                self.best_split_for_var(var, n, &counts, parent_gini, min_leaf, membership)
            })
            .reduce_with(|a, b| if b.better_than(&a) { b } else { a });
        for &r in rows {
            membership[r as usize] = false;
        }

        let best = match best {
            Some(c) if c.decrease >= params.min_impurity_decrease => c,
            Some(_) => return make_leaf(&counts),
            None => {
                // No boundary anywhere: every auxiliary column is constant
                // over this node.
                if depth == 0 {
                    flags.push("all auxiliary columns constant; single-leaf tree".into());
                }
                return make_leaf(&counts);
            }
        };

        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = rows
            .iter()
            .partition(|&&r| data.value(r as usize, best.var) <= best.threshold);
        debug_assert!(left_rows.len() >= min_leaf && right_rows.len() >= min_leaf);

        let left = self.build(&left_rows, depth + 1, params, min_leaf, membership, flags);
        let right = self.build(&right_rows, depth + 1, params, min_leaf, membership, flags);
        TreeNode::Split {
            var: best.var,
            threshold: best.threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    /// Sweeps one variable's presorted order restricted to the node, scoring
    /// every midpoint between consecutive distinct values.
    fn best_split_for_var(
        &self,
        var: usize,
        node_n: usize,
        node_counts: &[usize],
        parent_gini: f64,
        min_leaf: usize,
        membership: &[bool],
    ) -> Option<SplitCandidate> {
        let data = self.data;
        let mut left_counts = vec![0usize; data.n_classes()];
        let mut left_n = 0usize;
        let mut prev_value = f64::NAN;
        let mut best: Option<SplitCandidate> = None;

        for &r in &self.presort[var] {
            let row = r as usize;
            if !membership[row] {
                continue;
            }
            let value = data.value(row, var);
            if left_n > 0 && value > prev_value {
                let right_n = node_n - left_n;
                if left_n >= min_leaf && right_n >= min_leaf {
                    let ln = left_n as f64;
                    let rn = right_n as f64;
                    let mut lsq = 0.0;
                    let mut rsq = 0.0;
                    for (i, &lc) in left_counts.iter().enumerate() {
                        let rc = node_counts[i] - lc;
                        let lp = lc as f64 / ln;
                        let rp = rc as f64 / rn;
                        lsq += lp * lp;
                        rsq += rp * rp;
                    }
                    let weighted = (ln * (1.0 - lsq) + rn * (1.0 - rsq)) / node_n as f64;
                    let decrease = (parent_gini - weighted).max(0.0);
                    let candidate = SplitCandidate {
                        decrease,
                        var,
                        threshold: 0.5 * (prev_value + value),
                    };
                    if best.is_none() || candidate.better_than(best.as_ref().unwrap()) {
                        best = Some(candidate);
                    }
                }
            }
            left_counts[data.label(row)] += 1;
            left_n += 1;
            prev_value = value;
        }
        best
    }
}

/// Learns a classification tree over all rows of the labeled set.
pub fn learn_tree(data: &LabeledAuxSet, params: &TreeParams) -> Result<DiscriminantTree, TreeError> {
    let builder = TreeBuilder::new(data)?;
    let rows: Vec<u32> = (0..data.n_rows() as u32).collect();
    builder.fit(&rows, params)
}

/// Cross-validation outcome.
#[derive(Debug, Clone)]
pub struct CrossValReport {
    /// Pooled held-out accuracy over all folds.
    pub accuracy: f64,
    pub fold_accuracies: Vec<f64>,
    /// False when some class had fewer rows than folds and fold assignment
    /// fell back to a plain shuffle.
    pub stratified: bool,
}

/// K-fold cross-validated accuracy of the tree learner on the labeled set.
/// Folds are stratified by label when every class is large enough.
pub fn cross_validate(
    data: &LabeledAuxSet,
    params: &TreeParams,
    folds: usize,
    seed: u64,
) -> Result<CrossValReport, TreeError> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let n = data.n_rows();
    if folds < 2 || folds > n {
        return Err(TreeError::BadFolds { folds, rows: n });
    }

    let mut class_rows: Vec<Vec<u32>> = vec![Vec::new(); data.n_classes()];
    for r in 0..n {
        class_rows[data.label(r)].push(r as u32);
    }
    let stratified = class_rows.iter().all(|c| c.is_empty() || c.len() >= folds);

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0usize; n];
    if stratified {
        for rows in &mut class_rows {
            rows.shuffle(&mut rng);
            for (i, &r) in rows.iter().enumerate() {
                fold_of[r as usize] = i % folds;
            }
        }
    } else {
        let mut all: Vec<u32> = (0..n as u32).collect();
        all.shuffle(&mut rng);
        for (i, &r) in all.iter().enumerate() {
            fold_of[r as usize] = i % folds;
        }
    }

    let builder = TreeBuilder::new(data)?;
    let per_fold: Vec<Result<(usize, usize), TreeError>> = (0..folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<u32> = (0..n as u32).filter(|&r| fold_of[r as usize] != f).collect();
            let test: Vec<u32> = (0..n as u32).filter(|&r| fold_of[r as usize] == f).collect();
            let tree = builder.fit(&train, params)?;
            let mut correct = 0usize;
            for &r in &test {
                if tree.predict_label(data.row(r as usize))? == data.label(r as usize) {
                    correct += 1;
                }
            }
            Ok((correct, test.len()))
        })
        .collect();

    let mut total_correct = 0usize;
    let mut total = 0usize;
    let mut fold_accuracies = Vec::with_capacity(folds);
    for r in per_fold {
        let (correct, count) = r?;
        total_correct += correct;
        total += count;
        fold_accuracies.push(if count == 0 {
            1.0
        } else {
            correct as f64 / count as f64
        });
    }
    Ok(CrossValReport {
        accuracy: total_correct as f64 / total as f64,
        fold_accuracies,
        stratified,
    })
}
