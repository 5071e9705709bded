//! Variance-reduction regression trees (CART) and their honest variant.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Design, InterpretableError};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    /// Samples with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub root: Node,
}

impl RegressionTree {
    pub fn constant(value: f64) -> Self {
        RegressionTree {
            root: Node::Leaf { value },
        }
    }

    pub fn predict(&self, features: &[f64]) -> f64 {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if features[*feature] <= *threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(n: &Node) -> usize {
            match n {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(left).max(go(right)),
            }
        }
        go(&self.root)
    }

    pub fn n_leaves(&self) -> usize {
        fn go(n: &Node) -> usize {
            match n {
                Node::Leaf { .. } => 1,
                Node::Split { left, right, .. } => go(left) + go(right),
            }
        }
        go(&self.root)
    }

    /// Indented text form, one line per node.
    pub fn render(&self, names: &[String]) -> String {
        fn go(n: &Node, names: &[String], indent: usize, out: &mut String) {
            let pad = "  ".repeat(indent);
            match n {
                Node::Leaf { value } => out.push_str(&format!("{pad}predict {value:.6}\n")),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let name = names.get(*feature).cloned().unwrap_or_else(|| format!("f{feature}"));
                    out.push_str(&format!("{pad}if {name} <= {threshold:.6}:\n"));
                    go(left, names, indent + 1, out);
                    out.push_str(&format!("{pad}else:\n"));
                    go(right, names, indent + 1, out);
                }
            }
        }
        let mut out = String::new();
        go(&self.root, names, 0, &mut out);
        out
    }
}

/// Tree growth limits plus optional per-split feature subsampling.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GrowParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Number of candidate features drawn per split; `None` uses all.
    pub max_features: Option<usize>,
}

struct Grower<'a, R> {
    design: &'a Design,
    params: GrowParams,
    rng: Option<&'a mut R>,
}

fn mean_of(design: &Design, idx: &[usize]) -> f64 {
    idx.iter().map(|&i| design.y[i]).sum::<f64>() / idx.len() as f64
}

impl<R: Rng> Grower<'_, R> {
    fn candidate_features(&mut self) -> Vec<usize> {
        let p = self.design.n_features();
        match (self.params.max_features, self.rng.as_deref_mut()) {
            (Some(m), Some(rng)) if m < p => {
                let mut f = index::sample(rng, p, m).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..p).collect(),
        }
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize) -> Node {
        let n = idx.len();
        let mean = mean_of(self.design, idx);
        let leaf = Node::Leaf { value: mean };
        if depth >= self.params.max_depth || n < 2 * self.params.min_leaf.max(1) {
            return leaf;
        }
        let centered: Vec<f64> = idx.iter().map(|&i| self.design.y[i] - mean).collect();
        let sse: f64 = centered.iter().map(|v| v * v).sum();
        let scale: f64 = idx.iter().map(|&i| self.design.y[i] * self.design.y[i]).sum::<f64>();
        if sse <= 1e-24 * scale.max(1.0) {
            return leaf;
        }
        let total: f64 = centered.iter().sum();
        let base = total * total / n as f64;

        let mut best: Option<(f64, usize, f64)> = None;
        let mut order: Vec<(f64, f64)> = Vec::with_capacity(n);
        for feature in self.candidate_features() {
            order.clear();
            order.extend(idx.iter().zip(&centered).map(|(&i, &c)| (self.design.rows[i][feature], c)));
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            for p in 1..n {
                left_sum += order[p - 1].1;
                if p < self.params.min_leaf || n - p < self.params.min_leaf {
                    continue;
                }
                let (lo, hi) = (order[p - 1].0, order[p].0);
                if lo >= hi {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / p as f64 + right_sum * right_sum / (n - p) as f64 - base;
                if best.is_none_or(|(g, _, _)| gain > g) {
                    let mut threshold = 0.5 * (lo + hi);
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some((gain, feature, threshold));
                }
            }
        }
        let Some((gain, feature, threshold)) = best else {
            return leaf;
        };
        if gain <= 1e-12 * sse {
            return leaf;
        }
        let rows = &self.design.rows;
        idx.sort_by(|&a, &b| {
            let la = rows[a][feature] <= threshold;
            let lb = rows[b][feature] <= threshold;
            lb.cmp(&la)
        });
        let n_left = idx.iter().take_while(|&&i| rows[i][feature] <= threshold).count();
        let (l, r) = idx.split_at_mut(n_left);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        Node::Split {
            feature,
            threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }
}

pub(crate) fn grow_tree<R: Rng>(design: &Design, idx: &mut [usize], params: GrowParams, rng: Option<&mut R>) -> RegressionTree {
    let mut grower = Grower { design, params, rng };
    RegressionTree {
        root: grower.grow(idx, 0),
    }
}

/// Greedy CART on every sample of `design`.
pub fn cart_fit(design: &Design, max_depth: usize, min_leaf: usize) -> Result<RegressionTree, InterpretableError> {
    design.check()?;
    if min_leaf == 0 {
        return Err(InterpretableError::InvalidSpec("min_leaf must be at least 1".into()));
    }
    if design.len() < min_leaf {
        return Err(InterpretableError::TooFewSamples {
            needed: min_leaf,
            got: design.len(),
        });
    }
    let mut idx: Vec<usize> = (0..design.len()).collect();
    let params = GrowParams {
        max_depth,
        min_leaf,
        max_features: None,
    };
    Ok(grow_tree::<rand_chacha::ChaCha8Rng>(design, &mut idx, params, None))
}

/// Replace every leaf value by the mean label of the `estimation` samples that
/// reach it; a node reached by none inherits its parent's value.
pub fn reestimate_leaves(tree: &RegressionTree, design: &Design, estimation: &[usize]) -> RegressionTree {
    fn go(node: &Node, design: &Design, idx: &[usize], inherited: f64) -> Node {
        let value = if idx.is_empty() { inherited } else { mean_of(design, idx) };
        match node {
            Node::Leaf { .. } => Node::Leaf { value },
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| design.rows[i][*feature] <= *threshold);
                Node::Split {
                    feature: *feature,
                    threshold: *threshold,
                    left: Box::new(go(left, design, &l, value)),
                    right: Box::new(go(right, design, &r, value)),
                }
            }
        }
    }
    if estimation.is_empty() {
        return tree.clone();
    }
    RegressionTree {
        root: go(&tree.root, design, estimation, 0.0),
    }
}

/// Seeded halving of `0..n`: `(structure, estimation)`.
pub fn honest_halves(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed::derive(seed, "honest-halves", 0)));
    let n_struct = n.div_ceil(2);
    let est = order.split_off(n_struct);
    (order, est)
}

/// Structure grown by CART on one half, leaf values estimated on the other.
pub fn honest_tree_fit(design: &Design, max_depth: usize, min_leaf: usize, seed: u64) -> Result<RegressionTree, InterpretableError> {
    design.check()?;
    if design.len() < 2 {
        return Err(InterpretableError::TooFewSamples { needed: 2, got: design.len() });
    }
    if min_leaf == 0 {
        return Err(InterpretableError::InvalidSpec("min_leaf must be at least 1".into()));
    }
    let (mut structure, estimation) = honest_halves(design.len(), seed);
    let params = GrowParams {
        max_depth,
        min_leaf,
        max_features: None,
    };
    let tree = grow_tree::<rand_chacha::ChaCha8Rng>(design, &mut structure, params, None);
    Ok(reestimate_leaves(&tree, design, &estimation))
}
