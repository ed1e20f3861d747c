//! Exact interventional Shapley attributions for tree models.
//!
//! For a foreground row `x` and a background row `z`, a feature subset `S`
//! defines the hybrid input that takes `x` on `S` and `z` elsewhere. The
//! game value `v(S)` is the model output on that hybrid, averaged over the
//! background set. Per tree and background row, the Shapley values of this
//! game are obtained in one traversal: wherever `x` and `z` disagree at a
//! split on a feature not yet seen on the path, both branches are followed,
//! one tagging the feature as taken from `x` and the other from `z`. A leaf
//! reached with `a` features from `x` and `b` from `z` contributes
//! `v·(a-1)!·b!/(a+b)!` to each `x` feature and `-v·a!·(b-1)!/(a+b)!` to
//! each `z` feature. Forest attributions are the mean over trees.

mod bruteforce;
mod text;

pub use bruteforce::{shapley_bruteforce, BRUTEFORCE_MAX_FEATURES};
pub use text::{textual_explanation, Direction, Explanation, Sentence, Verdict};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trees::{NodeKind, Tree};

/// Absolute tolerance of the local-accuracy identity.
pub const LOCAL_ACCURACY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplainedOutput {
    /// Classifier probability of the pass class.
    PassProbability,
    /// Regressor output in grade points.
    GradePoints,
}

/// The scalar a set of trees produces: mean over trees of
/// `leaf.value[output_index]`.
#[derive(Debug, Clone, Copy)]
pub struct TreeOutput<'a> {
    pub trees: &'a [Tree],
    pub output_index: usize,
    pub kind: ExplainedOutput,
}

impl<'a> TreeOutput<'a> {
    pub fn regressor(tree: &'a Tree) -> Self {
        TreeOutput {
            trees: std::slice::from_ref(tree),
            output_index: 0,
            kind: ExplainedOutput::GradePoints,
        }
    }

    pub fn classifier(trees: &'a [Tree], class: usize) -> Self {
        TreeOutput {
            trees,
            output_index: class,
            kind: ExplainedOutput::PassProbability,
        }
    }

    pub fn n_features(&self) -> usize {
        self.trees.first().map_or(0, |t| t.n_features)
    }

    fn check(&self, x: &[f64], background: &[Vec<f64>]) -> Result<()> {
        if self.trees.is_empty() {
            return Err(Error::Empty("model trees"));
        }
        if background.is_empty() {
            return Err(Error::Empty("background set"));
        }
        let d = self.n_features();
        if self.trees.iter().any(|t| t.n_features != d) {
            return Err(Error::Validation("trees disagree on feature count".into()));
        }
        if self.trees.iter().any(|t| t.root().value.len() <= self.output_index) {
            return Err(Error::Validation("output index outside leaf value".into()));
        }
        for row in std::iter::once(x).chain(background.iter().map(Vec::as_slice)) {
            if row.len() != d {
                return Err(Error::SchemaMismatch {
                    expected: d,
                    got: row.len(),
                });
            }
        }
        Ok(())
    }

    /// Model output, summing trees in order.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.leaf_for(x).value[self.output_index]).sum();
        sum / self.trees.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub output: ExplainedOutput,
    /// Mean model output over the background set.
    pub base_value: f64,
    /// One contribution per schema feature, in schema order.
    pub phi: Vec<f64>,
    pub prediction: f64,
}

impl Attribution {
    /// `|base + Σφ − prediction|`.
    pub fn local_accuracy_gap(&self) -> f64 {
        (self.base_value + self.phi.iter().sum::<f64>() - self.prediction).abs()
    }

    pub fn check_local_accuracy(&self) -> Result<()> {
        let gap = self.local_accuracy_gap();
        if gap <= LOCAL_ACCURACY_TOL {
            Ok(())
        } else {
            Err(Error::Validation(format!("attribution violates local accuracy by {gap:e}")))
        }
    }

    pub fn named<'s>(&'s self, names: &'s [String]) -> impl Iterator<Item = (&'s str, f64)> + 's {
        names.iter().map(String::as_str).zip(self.phi.iter().copied())
    }
}

/// Upper bound on leaf visits for one exact attribution. Exceeding it is an
/// error; the computation never falls back to sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapleyBudget {
    pub max_leaf_visits: u64,
}

impl Default for ShapleyBudget {
    fn default() -> Self {
        ShapleyBudget {
            max_leaf_visits: 200_000_000,
        }
    }
}

/// `(a-1)!·b!/(a+b)!` for `a >= 1`, computed as `1 / ((a+b)·C(a+b-1, b))`.
fn subset_weight(a: usize, b: usize) -> f64 {
    debug_assert!(a >= 1);
    let n = a + b - 1;
    let k = b.min(n - b);
    let mut binom = 1.0;
    for i in 0..k {
        binom = binom * (n - i) as f64 / (i + 1) as f64;
    }
    1.0 / ((a + b) as f64 * binom)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    Foreground,
    Background,
}

struct Walk<'a> {
    tree: &'a Tree,
    output_index: usize,
    x: &'a [f64],
    z: &'a [f64],
    path: Vec<(usize, Side)>,
    phi: &'a mut [f64],
    visits: u64,
}

impl Walk<'_> {
    fn side_of(&self, feature: usize) -> Option<Side> {
        self.path.iter().find(|(f, _)| *f == feature).map(|&(_, s)| s)
    }

    fn run(&mut self, node: usize) {
        let n = &self.tree.nodes[node];
        match n.kind {
            NodeKind::Leaf => {
                self.visits += 1;
                let v = n.value[self.output_index];
                let a = self.path.iter().filter(|(_, s)| *s == Side::Foreground).count();
                let b = self.path.len() - a;
                if v == 0.0 || (a == 0 && b == 0) {
                    return;
                }
                let pos = if a > 0 { v * subset_weight(a, b) } else { 0.0 };
                let neg = if b > 0 { v * subset_weight(b, a) } else { 0.0 };
                for &(f, s) in &self.path {
                    match s {
                        Side::Foreground => self.phi[f] += pos,
                        Side::Background => self.phi[f] -= neg,
                    }
                }
            }
            NodeKind::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let x_child = if self.x[feature] <= threshold { left } else { right };
                let z_child = if self.z[feature] <= threshold { left } else { right };
                if x_child == z_child {
                    self.run(x_child);
                    return;
                }
                match self.side_of(feature) {
                    Some(Side::Foreground) => self.run(x_child),
                    Some(Side::Background) => self.run(z_child),
                    None => {
                        self.path.push((feature, Side::Foreground));
                        self.run(x_child);
                        self.path.pop();
                        self.path.push((feature, Side::Background));
                        self.run(z_child);
                        self.path.pop();
                    }
                }
            }
        }
    }
}

/// Per-tree sum over background rows of the Shapley vectors, plus the
/// number of leaf visits.
fn tree_phi(tree: &Tree, output_index: usize, x: &[f64], background: &[Vec<f64>], budget: u64) -> Result<(Vec<f64>, u64)> {
    let mut phi = vec![0.0; tree.n_features];
    let mut visits = 0;
    for z in background {
        let mut walk = Walk {
            tree,
            output_index,
            x,
            z,
            path: Vec::new(),
            phi: &mut phi,
            visits: 0,
        };
        walk.run(0);
        visits += walk.visits;
        if visits > budget {
            return Err(Error::Budget(format!("exact attribution needs more than {budget} leaf visits")));
        }
    }
    Ok((phi, visits))
}

/// Exact interventional Shapley values of `model` at `x` against
/// `background`. Trees are processed in parallel and reduced in tree order,
/// so the result is bit-identical for any thread count.
pub fn shapley_exact(model: TreeOutput<'_>, x: &[f64], background: &[Vec<f64>], budget: ShapleyBudget) -> Result<Attribution> {
    model.check(x, background)?;
    let per_tree_budget = budget.max_leaf_visits / model.trees.len() as u64;
    let parts: Vec<(Vec<f64>, u64)> = model
        .trees
        .par_iter()
        .map(|t| tree_phi(t, model.output_index, x, background, per_tree_budget))
        .collect::<Result<_>>()?;
    let d = model.n_features();
    let mut phi = vec![0.0; d];
    for (p, _) in &parts {
        for (acc, v) in phi.iter_mut().zip(p) {
            *acc += v;
        }
    }
    let scale = (model.trees.len() * background.len()) as f64;
    phi.iter_mut().for_each(|p| *p /= scale);
    Ok(Attribution {
        output: model.kind,
        base_value: background_mean(model, background),
        phi,
        prediction: model.eval(x),
    })
}

fn background_mean(model: TreeOutput<'_>, background: &[Vec<f64>]) -> f64 {
    let sum: f64 = background.iter().map(|z| model.eval(z)).sum();
    sum / background.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trees::{Criterion, Node};

    fn leaf(n: usize, v: f64) -> Node {
        Node {
            kind: NodeKind::Leaf,
            n_samples: n,
            value: vec![v],
        }
    }

    pub(crate) fn stump(d: usize, feature: usize, t: f64, a: f64, b: f64) -> Tree {
        Tree {
            n_features: d,
            criterion: Criterion::Mse,
            nodes: vec![
                Node {
                    kind: NodeKind::Split {
                        feature,
                        threshold: t,
                        left: 1,
                        right: 2,
                    },
                    n_samples: 2,
                    value: vec![(a + b) / 2.0],
                },
                leaf(1, a),
                leaf(1, b),
            ],
        }
    }

    #[test]
    fn weights() {
        // a=1,b=0 → 1; a=1,b=1 → 1/2; a=2,b=1 → 1!·1!/3! = 1/6; a=1,b=2 → 0!·2!/3! = 1/3
        assert_eq!(subset_weight(1, 0), 1.0);
        assert_eq!(subset_weight(1, 1), 0.5);
        assert!((subset_weight(2, 1) - 1.0 / 6.0).abs() < 1e-16);
        assert!((subset_weight(1, 2) - 1.0 / 3.0).abs() < 1e-16);
        assert!((subset_weight(3, 4) - 2.0 * 24.0 / 5040.0).abs() < 1e-16);
    }

    #[test]
    fn constant_model_has_zero_phi() {
        let t = Tree::single_leaf(3, Criterion::Mse, 5, vec![61.5]);
        let bg = vec![vec![0.0, 1.0, 2.0], vec![3.0, 4.0, 5.0]];
        let a = shapley_exact(TreeOutput::regressor(&t), &[9.0, 9.0, 9.0], &bg, ShapleyBudget::default()).unwrap();
        assert_eq!(a.phi, vec![0.0; 3]);
        assert_eq!(a.base_value, 61.5);
        assert_eq!(a.prediction, 61.5);
    }

    #[test]
    fn stump_attribution() {
        let t = stump(3, 0, 5.0, 60.0, 80.0);
        let bg = vec![vec![1.0, 7.0, 7.0], vec![2.0, -1.0, 3.0]];
        let x = [9.0, 0.0, 0.0];
        let a = shapley_exact(TreeOutput::regressor(&t), &x, &bg, ShapleyBudget::default()).unwrap();
        assert_eq!(a.phi, vec![20.0, 0.0, 0.0]);
        assert_eq!(a.base_value, 60.0);
        assert_eq!(a.prediction, 80.0);
        a.check_local_accuracy().unwrap();
    }

    #[test]
    fn errors() {
        let t = stump(2, 0, 0.5, 0.0, 1.0);
        let m = TreeOutput::regressor(&t);
        assert!(matches!(shapley_exact(m, &[1.0, 1.0], &[], ShapleyBudget::default()), Err(Error::Empty(_))));
        assert!(matches!(
            shapley_exact(m, &[1.0], &[vec![0.0, 0.0]], ShapleyBudget::default()),
            Err(Error::SchemaMismatch { .. })
        ));
        let tiny = ShapleyBudget { max_leaf_visits: 1 };
        assert!(matches!(
            shapley_exact(m, &[1.0, 1.0], &vec![vec![0.0, 0.0]; 3], tiny),
            Err(Error::Budget(_))
        ));
    }
}
