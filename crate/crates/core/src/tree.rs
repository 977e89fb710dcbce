//! CART regression trees grown best-first.
//!
//! Split search is exact: every boundary between distinct sorted values of a
//! numeric feature is a candidate. Rows whose split feature is missing are
//! tried on both sides of every candidate and the better side is stored as
//! the node's default direction. Categorical features are ordered by the mean
//! target of each category and then scanned like a numeric feature.
//!
//! Inside the learner a missing cell is encoded as `NaN` and a category as
//! its integer code stored in an `f64`.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

/// Column-major feature table consumed by the tree learner.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_rows: usize,
    kinds: Vec<FeatureKind>,
    columns: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn new(kinds: Vec<FeatureKind>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if kinds.len() != columns.len() {
            return Err(Error::Schema(format!(
                "{} feature kinds for {} columns",
                kinds.len(),
                columns.len()
            )));
        }
        let n_rows = columns.first().map_or(0, Vec::len);
        if let Some(j) = columns.iter().position(|c| c.len() != n_rows) {
            return Err(Error::data(format!(
                "column {j} has {} rows, expected {n_rows}",
                columns[j].len()
            )));
        }
        Ok(Self {
            n_rows,
            kinds,
            columns,
        })
    }

    /// Build from row-major rows, all columns numeric.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_features = rows.first().map_or(0, Vec::len);
        let mut columns = vec![Vec::with_capacity(rows.len()); n_features];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_features {
                return Err(Error::data(format!("row {i} is ragged")));
            }
            for (col, &v) in columns.iter_mut().zip(row) {
                col.push(v);
            }
        }
        Self::new(vec![FeatureKind::Numeric; n_features], columns)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn kinds(&self) -> &[FeatureKind] {
        &self.kinds
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    /// Replace one column in place; the length must not change.
    pub fn replace_column(&mut self, j: usize, values: Vec<f64>) {
        assert_eq!(values.len(), self.n_rows, "replacement column length");
        self.columns[j] = values;
    }

    pub fn value(&self, row: usize, j: usize) -> f64 {
        self.columns[j][row]
    }

    pub fn row(&self, row: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[row]).collect()
    }
}

/// Per-column row orders, ascending by value with missing rows last.
/// Categorical columns carry no order.
#[derive(Debug, Clone)]
pub struct SortedColumns {
    orders: Vec<Vec<u32>>,
}

impl SortedColumns {
    pub fn build(matrix: &FeatureMatrix) -> Self {
        let orders = (0..matrix.n_features())
            .into_par_iter()
            .map(|j| column_order(matrix, j))
            .collect();
        Self { orders }
    }

    /// Recompute the order of one column after [`FeatureMatrix::replace_column`].
    pub fn refresh(&mut self, matrix: &FeatureMatrix, j: usize) {
        self.orders[j] = column_order(matrix, j);
    }
}

fn column_order(matrix: &FeatureMatrix, j: usize) -> Vec<u32> {
    if matrix.kinds[j] == FeatureKind::Categorical {
        return Vec::new();
    }
    let col = &matrix.columns[j];
    let mut order: Vec<u32> = (0..matrix.n_rows as u32).collect();
    order.sort_by(|&a, &b| cmp_missing_last(col[a as usize], col[b as usize]));
    order
}

fn cmp_missing_last(a: f64, b: f64) -> Ordering {
    match (a.is_nan(), b.is_nan()) {
        (false, false) => a.partial_cmp(&b).unwrap(),
        (false, true) => Ordering::Less,
        (true, false) => Ordering::Greater,
        (true, true) => Ordering::Equal,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub num_leaves: usize,
    pub min_samples_leaf: usize,
    pub learning_rate: f64,
    /// Categorical features with more distinct categories than this at a node
    /// are not considered for splitting there.
    pub max_categorical_cardinality: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            num_leaves: 101,
            min_samples_leaf: 20,
            learning_rate: 1.0,
            max_categorical_cardinality: 256,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_leaves < 2 {
            return Err(Error::invalid("num_leaves must be at least 2"));
        }
        if self.min_samples_leaf < 1 {
            return Err(Error::invalid("min_samples_leaf must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SplitRule {
    /// Go left when `value <= threshold`.
    Threshold(f64),
    /// Go left when the category is in `left`, right when it is in `right`.
    /// Anything else (missing or unseen) follows the default direction.
    Categories { left: Vec<u32>, right: Vec<u32> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Child {
    Node(u32),
    Leaf(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitNode {
    pub feature: u32,
    pub rule: SplitRule,
    pub default_left: bool,
    pub left: Child,
    pub right: Child,
    /// Training SSE reduction achieved by this split.
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    n_features: usize,
    root: Child,
    nodes: Vec<SplitNode>,
    leaves: Vec<f64>,
}

impl DecisionTree {
    /// A single-leaf tree.
    pub fn constant(n_features: usize, value: f64) -> Self {
        Self {
            n_features,
            root: Child::Leaf(0),
            nodes: Vec::new(),
            leaves: vec![value],
        }
    }

    /// Assemble a tree from raw parts, checking structural validity.
    pub fn from_parts(
        n_features: usize,
        root: Child,
        nodes: Vec<SplitNode>,
        leaves: Vec<f64>,
    ) -> Result<Self> {
        let tree = Self {
            n_features,
            root,
            nodes,
            leaves,
        };
        tree.check_structure()?;
        Ok(tree)
    }

    fn check_structure(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ModelFormat(msg));
        if self.leaves.iter().any(|v| !v.is_finite()) {
            return bad("non-finite leaf value".into());
        }
        if self.leaves.len() != self.nodes.len() + 1 {
            return bad(format!(
                "{} nodes cannot have {} leaves",
                self.nodes.len(),
                self.leaves.len()
            ));
        }
        // Every node and leaf must be reached exactly once from the root.
        let mut seen_nodes = vec![false; self.nodes.len()];
        let mut seen_leaves = vec![false; self.leaves.len()];
        let mut stack = vec![self.root];
        while let Some(c) = stack.pop() {
            match c {
                Child::Leaf(l) => {
                    let l = l as usize;
                    if l >= self.leaves.len() || seen_leaves[l] {
                        return bad(format!("leaf {l} invalid or shared"));
                    }
                    seen_leaves[l] = true;
                }
                Child::Node(n) => {
                    let n = n as usize;
                    if n >= self.nodes.len() || seen_nodes[n] {
                        return bad(format!("node {n} invalid or cyclic"));
                    }
                    seen_nodes[n] = true;
                    let node = &self.nodes[n];
                    if node.feature as usize >= self.n_features {
                        return bad(format!("node {n} splits on unknown feature"));
                    }
                    stack.push(node.right);
                    stack.push(node.left);
                }
            }
        }
        if seen_nodes.iter().chain(&seen_leaves).any(|s| !s) {
            return bad("unreachable node or leaf".into());
        }
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn root(&self) -> Child {
        self.root
    }

    pub fn nodes(&self) -> &[SplitNode] {
        &self.nodes
    }

    pub fn leaves(&self) -> &[f64] {
        &self.leaves
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    pub(crate) fn leaves_mut(&mut self) -> &mut [f64] {
        &mut self.leaves
    }

    /// Leaf index reached by a row whose feature `j` is `get(j)`.
    pub fn leaf_index_with(&self, get: impl Fn(usize) -> f64) -> usize {
        let mut cur = self.root;
        loop {
            match cur {
                Child::Leaf(l) => return l as usize,
                Child::Node(n) => {
                    let node = &self.nodes[n as usize];
                    cur = if goes_left(node, get(node.feature as usize)) {
                        node.left
                    } else {
                        node.right
                    };
                }
            }
        }
    }

    pub fn predict_with(&self, get: impl Fn(usize) -> f64) -> f64 {
        self.leaves[self.leaf_index_with(get)]
    }

    pub fn predict_row(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.n_features {
            return Err(Error::Schema(format!(
                "row has {} features, tree expects {}",
                row.len(),
                self.n_features
            )));
        }
        Ok(self.predict_with(|j| row[j]))
    }

    pub fn predict_matrix(&self, matrix: &FeatureMatrix) -> Result<Vec<f64>> {
        if matrix.n_features() != self.n_features {
            return Err(Error::Schema(format!(
                "matrix has {} features, tree expects {}",
                matrix.n_features(),
                self.n_features
            )));
        }
        Ok((0..matrix.n_rows())
            .map(|i| self.predict_with(|j| matrix.columns[j][i]))
            .collect())
    }

    /// Total SSE reduction contributed by each feature's splits.
    pub fn gain_importance(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_features];
        for node in &self.nodes {
            out[node.feature as usize] += node.gain;
        }
        out
    }
}

fn goes_left(node: &SplitNode, value: f64) -> bool {
    if value.is_nan() {
        return node.default_left;
    }
    match &node.rule {
        SplitRule::Threshold(th) => value <= *th,
        SplitRule::Categories { left, right } => match category_code(value) {
            Some(code) if left.binary_search(&code).is_ok() => true,
            Some(code) if right.binary_search(&code).is_ok() => false,
            _ => node.default_left,
        },
    }
}

fn category_code(value: f64) -> Option<u32> {
    (value >= 0.0 && value.fract() == 0.0 && value <= u32::MAX as f64).then_some(value as u32)
}

/// A fitted tree together with the leaf each training row landed in.
#[derive(Debug, Clone)]
pub struct TreeFit {
    pub tree: DecisionTree,
    pub leaf_of_row: Vec<u32>,
}

/// Fit a regression tree on squared error.
pub fn fit_tree(matrix: &FeatureMatrix, targets: &[f64], params: &TreeParams) -> Result<DecisionTree> {
    let sorted = SortedColumns::build(matrix);
    Ok(fit_tree_presorted(matrix, &sorted, targets, params)?.tree)
}

/// Fit a regression tree reusing precomputed column orders.
pub fn fit_tree_presorted(
    matrix: &FeatureMatrix,
    sorted: &SortedColumns,
    targets: &[f64],
    params: &TreeParams,
) -> Result<TreeFit> {
    params.validate()?;
    let n = matrix.n_rows();
    if n == 0 || matrix.n_features() == 0 {
        return Err(Error::data("cannot fit a tree on empty data"));
    }
    if targets.len() != n {
        return Err(Error::data(format!(
            "{} targets for {n} rows",
            targets.len()
        )));
    }
    if let Some(i) = targets.iter().position(|t| !t.is_finite()) {
        return Err(Error::data(format!("target at row {i} is not finite")));
    }
    if sorted.orders.len() != matrix.n_features() {
        return Err(Error::Schema("sorted orders do not match matrix".into()));
    }
    Ok(Grower::new(matrix, sorted, targets, params).grow())
}

#[derive(Debug, Clone)]
struct Candidate {
    feature: usize,
    gain: f64,
    rule: SplitRule,
    default_left: bool,
}

struct GrowLeaf {
    start: usize,
    end: usize,
    sum: f64,
    parent: Option<(usize, bool)>,
    best: Option<Candidate>,
}

struct Grower<'a> {
    matrix: &'a FeatureMatrix,
    targets: &'a [f64],
    params: &'a TreeParams,
    rows: Vec<u32>,
    orders: Vec<Vec<u32>>,
    goes_left: Vec<bool>,
}

impl<'a> Grower<'a> {
    fn new(
        matrix: &'a FeatureMatrix,
        sorted: &SortedColumns,
        targets: &'a [f64],
        params: &'a TreeParams,
    ) -> Self {
        let n = matrix.n_rows();
        Self {
            matrix,
            targets,
            params,
            rows: (0..n as u32).collect(),
            orders: sorted.orders.clone(),
            goes_left: vec![false; n],
        }
    }

    fn grow(mut self) -> TreeFit {
        let n = self.rows.len();
        let sum = self.targets.iter().sum();
        let mut leaves = vec![GrowLeaf {
            start: 0,
            end: n,
            sum,
            parent: None,
            best: None,
        }];
        leaves[0].best = self.best_split(0, n, sum);

        let mut nodes: Vec<SplitNode> = Vec::new();
        let mut root = Child::Leaf(0);

        while leaves.len() < self.params.num_leaves {
            let mut pick: Option<usize> = None;
            for (id, leaf) in leaves.iter().enumerate() {
                if let Some(c) = &leaf.best {
                    if pick.is_none_or(|p| c.gain > leaves[p].best.as_ref().unwrap().gain) {
                        pick = Some(id);
                    }
                }
            }
            let Some(id) = pick else { break };
            let cand = leaves[id].best.take().unwrap();
            let (start, end) = (leaves[id].start, leaves[id].end);
            let mid = self.partition(start, end, &cand);

            let node_id = nodes.len();
            let right_id = leaves.len();
            nodes.push(SplitNode {
                feature: cand.feature as u32,
                rule: cand.rule,
                default_left: cand.default_left,
                left: Child::Leaf(id as u32),
                right: Child::Leaf(right_id as u32),
                gain: cand.gain,
            });
            match leaves[id].parent {
                None => root = Child::Node(node_id as u32),
                Some((p, true)) => nodes[p].left = Child::Node(node_id as u32),
                Some((p, false)) => nodes[p].right = Child::Node(node_id as u32),
            }

            let left_sum = self.sum_rows(start, mid);
            let right_sum = self.sum_rows(mid, end);
            leaves[id] = GrowLeaf {
                start,
                end: mid,
                sum: left_sum,
                parent: Some((node_id, true)),
                best: None,
            };
            leaves.push(GrowLeaf {
                start: mid,
                end,
                sum: right_sum,
                parent: Some((node_id, false)),
                best: None,
            });
            if leaves.len() < self.params.num_leaves {
                leaves[id].best = self.best_split(start, mid, left_sum);
                leaves[right_id].best = self.best_split(mid, end, right_sum);
            }
        }

        let mut leaf_of_row = vec![0u32; n];
        let values = leaves
            .iter()
            .enumerate()
            .map(|(id, leaf)| {
                for &r in &self.rows[leaf.start..leaf.end] {
                    leaf_of_row[r as usize] = id as u32;
                }
                leaf.sum / (leaf.end - leaf.start) as f64 * self.params.learning_rate
            })
            .collect();

        TreeFit {
            tree: DecisionTree {
                n_features: self.matrix.n_features(),
                root,
                nodes,
                leaves: values,
            },
            leaf_of_row,
        }
    }

    fn sum_rows(&self, start: usize, end: usize) -> f64 {
        self.rows[start..end]
            .iter()
            .map(|&r| self.targets[r as usize])
            .sum()
    }

    fn best_split(&self, start: usize, end: usize, sum: f64) -> Option<Candidate> {
        let count = end - start;
        if count < 2 * self.params.min_samples_leaf {
            return None;
        }
        // Centre targets on the leaf mean so gains do not cancel catastrophically.
        let mean = sum / count as f64;
        let rows = &self.rows[start..end];
        let total: f64 = rows.iter().map(|&r| self.targets[r as usize] - mean).sum();
        let sse: f64 = rows
            .iter()
            .map(|&r| (self.targets[r as usize] - mean).powi(2))
            .sum();
        if !(sse > 0.0) {
            return None;
        }
        let ctx = LeafStats {
            mean,
            total,
            count,
            min_gain: sse * 1e-12,
        };

        let per_feature: Vec<Option<Candidate>> = (0..self.matrix.n_features())
            .into_par_iter()
            .map(|f| match self.matrix.kinds[f] {
                FeatureKind::Numeric => self.numeric_split(f, start, end, &ctx),
                FeatureKind::Categorical => self.categorical_split(f, start, end, &ctx),
            })
            .collect();

        let mut best: Option<Candidate> = None;
        for cand in per_feature.into_iter().flatten() {
            if best.as_ref().is_none_or(|b| cand.gain > b.gain) {
                best = Some(cand);
            }
        }
        best
    }

    fn numeric_split(&self, f: usize, start: usize, end: usize, ctx: &LeafStats) -> Option<Candidate> {
        let col = &self.matrix.columns[f];
        let order = &self.orders[f][start..end];
        let n_present = order
            .iter()
            .rposition(|&r| !col[r as usize].is_nan())
            .map_or(0, |p| p + 1);
        if n_present == 0 {
            return None;
        }
        let miss_sum: f64 = order[n_present..]
            .iter()
            .map(|&r| self.targets[r as usize] - ctx.mean)
            .sum();
        let miss = Side {
            sum: miss_sum,
            count: order.len() - n_present,
        };

        let mut scan = Scan::new(ctx, miss);
        let mut acc = Side::default();
        for i in 0..n_present {
            let r = order[i] as usize;
            acc.sum += self.targets[r] - ctx.mean;
            acc.count += 1;
            let v = col[r];
            let threshold = if i + 1 < n_present {
                let next = col[order[i + 1] as usize];
                if next <= v {
                    continue;
                }
                let mid = v + (next - v) / 2.0;
                if mid < next {
                    mid
                } else {
                    v
                }
            } else {
                v
            };
            scan.offer(acc, self.params.min_samples_leaf, || SplitRule::Threshold(threshold));
        }
        scan.finish(f)
    }

    fn categorical_split(
        &self,
        f: usize,
        start: usize,
        end: usize,
        ctx: &LeafStats,
    ) -> Option<Candidate> {
        let col = &self.matrix.columns[f];
        // (code, centred sum, count); sorted by code for a deterministic base order.
        let mut cats: Vec<(u32, f64, usize)> = Vec::new();
        let mut miss = Side::default();
        let mut by_code: std::collections::BTreeMap<u32, (f64, usize)> = Default::default();
        for &r in &self.rows[start..end] {
            let g = self.targets[r as usize] - ctx.mean;
            match category_code(col[r as usize]) {
                Some(code) => {
                    let e = by_code.entry(code).or_insert((0.0, 0));
                    e.0 += g;
                    e.1 += 1;
                }
                None => {
                    miss.sum += g;
                    miss.count += 1;
                }
            }
        }
        if by_code.is_empty() || by_code.len() > self.params.max_categorical_cardinality {
            return None;
        }
        cats.extend(by_code.into_iter().map(|(c, (s, n))| (c, s, n)));
        cats.sort_by(|a, b| {
            let ma = a.1 / a.2 as f64;
            let mb = b.1 / b.2 as f64;
            ma.partial_cmp(&mb).unwrap().then(a.0.cmp(&b.0))
        });

        let mut scan = Scan::new(ctx, miss);
        let mut acc = Side::default();
        for k in 0..cats.len() {
            acc.sum += cats[k].1;
            acc.count += cats[k].2;
            scan.offer(acc, self.params.min_samples_leaf, || {
                let mut left: Vec<u32> = cats[..=k].iter().map(|c| c.0).collect();
                let mut right: Vec<u32> = cats[k + 1..].iter().map(|c| c.0).collect();
                left.sort_unstable();
                right.sort_unstable();
                SplitRule::Categories { left, right }
            });
        }
        scan.finish(f)
    }

    /// Stable partition of the leaf segment; returns the first right-child index.
    fn partition(&mut self, start: usize, end: usize, cand: &Candidate) -> usize {
        let col = &self.matrix.columns[cand.feature];
        let node = SplitNode {
            feature: cand.feature as u32,
            rule: cand.rule.clone(),
            default_left: cand.default_left,
            left: Child::Leaf(0),
            right: Child::Leaf(0),
            gain: cand.gain,
        };
        for &r in &self.rows[start..end] {
            self.goes_left[r as usize] = goes_left(&node, col[r as usize]);
        }
        let goes = &self.goes_left;
        let mid = stable_partition(&mut self.rows[start..end], goes) + start;
        self.orders
            .par_iter_mut()
            .filter(|o| !o.is_empty())
            .for_each(|o| {
                stable_partition(&mut o[start..end], goes);
            });
        mid
    }
}

fn stable_partition(seg: &mut [u32], goes_left: &[bool]) -> usize {
    let mut right = Vec::new();
    let mut w = 0;
    for i in 0..seg.len() {
        let r = seg[i];
        if goes_left[r as usize] {
            seg[w] = r;
            w += 1;
        } else {
            right.push(r);
        }
    }
    seg[w..].copy_from_slice(&right);
    w
}

struct LeafStats {
    mean: f64,
    total: f64,
    count: usize,
    min_gain: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Side {
    sum: f64,
    count: usize,
}

/// Running best over ordered split candidates for one feature.
struct Scan<'c> {
    ctx: &'c LeafStats,
    miss: Side,
    best: Option<(f64, bool, SplitRule)>,
}

impl<'c> Scan<'c> {
    fn new(ctx: &'c LeafStats, miss: Side) -> Self {
        Self {
            ctx,
            miss,
            best: None,
        }
    }

    fn gain(&self, left: Side) -> Option<f64> {
        let right = Side {
            sum: self.ctx.total - left.sum,
            count: self.ctx.count - left.count,
        };
        if left.count == 0 || right.count == 0 {
            return None;
        }
        let parent = self.ctx.total * self.ctx.total / self.ctx.count as f64;
        Some(
            left.sum * left.sum / left.count as f64 + right.sum * right.sum / right.count as f64
                - parent,
        )
    }

    /// Offer the candidate whose present-value left side is `present_left`.
    /// Missing rows are tried on the left, then on the right; the first
    /// strictly better one is kept.
    fn offer(&mut self, present_left: Side, min_leaf: usize, rule: impl FnOnce() -> SplitRule) {
        let mut options: [Option<(f64, bool)>; 2] = [None, None];
        let sides: &[bool] = if self.miss.count == 0 { &[true] } else { &[true, false] };
        for (slot, &miss_left) in sides.iter().enumerate() {
            let left = if miss_left {
                Side {
                    sum: present_left.sum + self.miss.sum,
                    count: present_left.count + self.miss.count,
                }
            } else {
                present_left
            };
            let right_count = self.ctx.count - left.count;
            if left.count < min_leaf || right_count < min_leaf {
                continue;
            }
            if let Some(g) = self.gain(left) {
                let default_left = if self.miss.count == 0 {
                    left.count >= right_count
                } else {
                    miss_left
                };
                options[slot] = Some((g, default_left));
            }
        }
        let mut rule = Some(rule);
        for (g, default_left) in options.into_iter().flatten() {
            if g > self.ctx.min_gain && self.best.as_ref().is_none_or(|b| g > b.0) {
                let r = match rule.take() {
                    Some(f) => f(),
                    None => self.best.as_ref().unwrap().2.clone(),
                };
                self.best = Some((g, default_left, r));
            }
        }
    }

    fn finish(self, feature: usize) -> Option<Candidate> {
        self.best.map(|(gain, default_left, rule)| Candidate {
            feature,
            gain,
            rule,
            default_left,
        })
    }
}
