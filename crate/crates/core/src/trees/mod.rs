//! CART decision trees (gini classification, variance regression), a
//! bagged random-forest classifier and constant baselines.

mod baseline;
mod cart;
mod forest;
mod rng;

pub use baseline::{baseline_majority, baseline_mean, MajorityBaseline, MeanBaseline};
pub use cart::{best_root_split, fit_tree, SplitChoice};
pub use forest::{argmax, fit_forest, ForestModel, ForestParams, MaxFeatures};
pub use rng::{PortableRng, RngKind};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Gini,
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeParams {
    /// `None` grows until another stopping rule fires.
    #[serde(default)]
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
    pub criterion: Criterion,
    #[serde(default)]
    pub seed: u64,
}

impl TreeParams {
    pub fn classifier_default() -> Self {
        TreeParams {
            max_depth: Some(8),
            min_samples_leaf: 2,
            min_samples_split: 4,
            criterion: Criterion::Gini,
            seed: 0,
        }
    }

    pub fn regressor_default() -> Self {
        TreeParams {
            max_depth: Some(6),
            min_samples_leaf: 3,
            min_samples_split: 6,
            criterion: Criterion::Mse,
            seed: 0,
        }
    }

    pub fn unlimited(criterion: Criterion) -> Self {
        TreeParams {
            max_depth: None,
            min_samples_leaf: 1,
            min_samples_split: 2,
            criterion,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_samples_leaf == 0 {
            return Err(Error::Validation("min_samples_leaf must be at least 1".into()));
        }
        if self.min_samples_split < 2 {
            return Err(Error::Validation("min_samples_split must be at least 2".into()));
        }
        Ok(())
    }
}

/// Training targets: class labels `0..n_classes` or real values.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    Classes { labels: &'a [usize], n_classes: usize },
    Values(&'a [f64]),
}

impl Targets<'_> {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes { labels, .. } => labels.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn key(&self, i: usize) -> f64 {
        match self {
            Targets::Classes { labels, .. } => labels[i] as f64,
            Targets::Values(v) => v[i],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NodeKind {
    Leaf,
    /// Samples with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Flat node record, the persisted shape of a [`Node`].
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    feature_index: Option<usize>,
    threshold: Option<f64>,
    left: Option<usize>,
    right: Option<usize>,
    n_samples: usize,
    value: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "NodeRecord", try_from = "NodeRecord")]
pub struct Node {
    pub kind: NodeKind,
    pub n_samples: usize,
    /// Class-probability vector (classification) or `[mean]` (regression).
    pub value: Vec<f64>,
}

impl From<Node> for NodeRecord {
    fn from(n: Node) -> Self {
        let (feature_index, threshold, left, right) = match n.kind {
            NodeKind::Leaf => (None, None, None, None),
            NodeKind::Split {
                feature,
                threshold,
                left,
                right,
            } => (Some(feature), Some(threshold), Some(left), Some(right)),
        };
        NodeRecord {
            feature_index,
            threshold,
            left,
            right,
            n_samples: n.n_samples,
            value: n.value,
        }
    }
}

impl TryFrom<NodeRecord> for Node {
    type Error = String;

    fn try_from(r: NodeRecord) -> std::result::Result<Self, String> {
        let kind = match (r.feature_index, r.threshold, r.left, r.right) {
            (None, None, None, None) => NodeKind::Leaf,
            (Some(feature), Some(threshold), Some(left), Some(right)) => NodeKind::Split {
                feature,
                threshold,
                left,
                right,
            },
            _ => return Err("node must set all or none of feature_index, threshold, left, right".into()),
        };
        Ok(Node {
            kind,
            n_samples: r.n_samples,
            value: r.value,
        })
    }
}

/// A fitted tree as a flat node array; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub n_features: usize,
    pub criterion: Criterion,
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn single_leaf(n_features: usize, criterion: Criterion, n_samples: usize, value: Vec<f64>) -> Self {
        Tree {
            n_features,
            criterion,
            nodes: vec![Node {
                kind: NodeKind::Leaf,
                n_samples,
                value,
            }],
        }
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.root().kind, NodeKind::Leaf)
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i].kind {
                NodeKind::Leaf => 0,
                NodeKind::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }

    /// Leaf reached by `x`, without a length check.
    pub fn leaf_for(&self, x: &[f64]) -> &Node {
        let mut i = 0;
        loop {
            let node = &self.nodes[i];
            match node.kind {
                NodeKind::Leaf => return node,
                NodeKind::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    /// Features used by any split.
    pub fn used_features(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match n.kind {
                NodeKind::Split { feature, .. } => Some(feature),
                NodeKind::Leaf => None,
            })
            .collect();
        f.sort_unstable();
        f.dedup();
        f
    }

    /// Structural checks run after loading a model file.
    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Format("tree has no nodes".into()));
        }
        let width = self.root().value.len();
        for (i, n) in self.nodes.iter().enumerate() {
            if n.value.len() != width {
                return Err(Error::Format(format!("node {i}: value width differs from root")));
            }
            if let NodeKind::Split {
                feature, left, right, ..
            } = n.kind
            {
                if feature >= self.n_features || left <= i || right <= i || left >= self.nodes.len() || right >= self.nodes.len()
                {
                    return Err(Error::Format(format!("node {i}: bad split reference")));
                }
                if self.nodes[left].n_samples + self.nodes[right].n_samples != n.n_samples {
                    return Err(Error::Format(format!("node {i}: children do not partition samples")));
                }
            }
        }
        Ok(())
    }
}

/// Value of the leaf reached by `x` (`<=` descends left).
pub fn predict_tree<'t>(tree: &'t Tree, x: &[f64]) -> Result<&'t [f64]> {
    if x.len() != tree.n_features {
        return Err(Error::SchemaMismatch {
            expected: tree.n_features,
            got: x.len(),
        });
    }
    Ok(&tree.leaf_for(x).value)
}

/// Gini impurity `1 - Σ p²` of a class histogram.
pub fn gini(counts: &[f64]) -> Result<f64> {
    if counts.iter().any(|&c| c < 0.0 || !c.is_finite()) {
        return Err(Error::Validation("class counts must be finite and non-negative".into()));
    }
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return Err(Error::Empty("class histogram"));
    }
    Ok(1.0 - counts.iter().map(|&c| (c / total) * (c / total)).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&[10.0, 0.0]).unwrap(), 0.0);
        assert_eq!(gini(&[5.0, 5.0]).unwrap(), 0.5);
        assert_eq!(gini(&[1.0, 1.0, 1.0, 1.0]).unwrap(), 0.75);
        assert!(matches!(gini(&[0.0, 0.0]), Err(Error::Empty(_))));
        assert!(gini(&[]).is_err());
    }

    #[test]
    fn single_leaf_predicts_constant() {
        let t = Tree::single_leaf(3, Criterion::Mse, 4, vec![42.0]);
        assert_eq!(predict_tree(&t, &[1.0, -5.0, 9.0]).unwrap(), &[42.0]);
        assert!(matches!(
            predict_tree(&t, &[1.0]),
            Err(Error::SchemaMismatch { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn node_record_round_trip() {
        let t = Tree {
            n_features: 1,
            criterion: Criterion::Gini,
            nodes: vec![
                Node {
                    kind: NodeKind::Split {
                        feature: 0,
                        threshold: 0.1 + 0.2,
                        left: 1,
                        right: 2,
                    },
                    n_samples: 3,
                    value: vec![1.0 / 3.0, 2.0 / 3.0],
                },
                Node {
                    kind: NodeKind::Leaf,
                    n_samples: 1,
                    value: vec![1.0, 0.0],
                },
                Node {
                    kind: NodeKind::Leaf,
                    n_samples: 2,
                    value: vec![0.0, 1.0],
                },
            ],
        };
        t.validate().unwrap();
        let s = serde_json::to_string(&t).unwrap();
        assert!(s.contains("\"feature_index\":0"));
        let back: Tree = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
        assert_eq!(serde_json::to_string(&back).unwrap(), s);
        assert!(serde_json::from_str::<Node>(r#"{"feature_index":0,"threshold":null,"left":null,"right":null,"n_samples":1,"value":[]}"#).is_err());
    }
}
