use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cart::{grow, FeatureSampler};
use super::rng::{PortableRng, RngKind};
use super::{Targets, Tree, TreeParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    /// ⌈√d⌉ candidate features per split.
    #[default]
    Sqrt,
    All,
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize) -> usize {
        let k = match self {
            MaxFeatures::Sqrt => (n_features as f64).sqrt().ceil() as usize,
            MaxFeatures::All => n_features,
            MaxFeatures::Count(k) => k,
        };
        k.clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    pub tree: TreeParams,
    #[serde(default)]
    pub max_features: MaxFeatures,
    /// Disabling bootstrap trains every tree on the full sample.
    #[serde(default = "default_true")]
    pub bootstrap: bool,
    #[serde(default)]
    pub rng: RngKind,
}

fn default_true() -> bool {
    true
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            tree: TreeParams::classifier_default(),
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
            rng: RngKind::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub n_features: usize,
    pub n_classes: usize,
    pub n_trees: usize,
    /// Resolved per-split candidate count.
    pub feature_subsample: usize,
    pub rng: RngKind,
    pub per_tree_seed: Vec<u64>,
    /// `oob_mask[t][i]` is true when row `i` was not drawn for tree `t`.
    pub oob_mask: Vec<Vec<bool>>,
    pub trees: Vec<Tree>,
}

impl ForestModel {
    /// Mean of per-tree class-probability vectors, summed in tree order.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_features {
            return Err(Error::SchemaMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        let mut acc = vec![0.0; self.n_classes];
        for t in &self.trees {
            for (a, v) in acc.iter_mut().zip(&t.leaf_for(x).value) {
                *a += v;
            }
        }
        let n = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(acc)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.predict_proba(x)?))
    }

    pub fn validate(&self) -> Result<()> {
        if self.trees.len() != self.n_trees || self.per_tree_seed.len() != self.n_trees {
            return Err(Error::Format("forest tree/seed counts disagree".into()));
        }
        for t in &self.trees {
            t.validate()?;
            if t.n_features != self.n_features || t.root().value.len() != self.n_classes {
                return Err(Error::Format("forest tree schema differs".into()));
            }
        }
        Ok(())
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in v.iter().enumerate().skip(1) {
        if p > v[best] {
            best = i;
        }
    }
    best
}

/// Bagged CART classifiers. Tree `t` is seeded with `seed + t`, so the
/// result does not depend on how trees are scheduled across threads.
pub fn fit_forest(x: &[Vec<f64>], labels: &[usize], n_classes: usize, params: &ForestParams) -> Result<ForestModel> {
    if params.n_trees == 0 {
        return Err(Error::Validation("forest needs at least one tree".into()));
    }
    if x.is_empty() {
        return Err(Error::Empty("training rows"));
    }
    let n = x.len();
    let width = x[0].len();
    let k = params.max_features.resolve(width);
    let seeds: Vec<u64> = (0..params.n_trees as u64)
        .map(|t| params.tree.seed.wrapping_add(t))
        .collect();
    let fitted: Vec<(Tree, Vec<bool>)> = seeds
        .par_iter()
        .map(|&seed| {
            let mut rng = PortableRng::new(params.rng, seed);
            let (samples, oob) = if params.bootstrap {
                let mut drawn = vec![false; n];
                let samples: Vec<usize> = (0..n)
                    .map(|_| {
                        let i = rng.random_range(0..n);
                        drawn[i] = true;
                        i
                    })
                    .collect();
                (samples, drawn.into_iter().map(|d| !d).collect())
            } else {
                ((0..n).collect(), vec![false; n])
            };
            let sampler = (k < width).then_some(FeatureSampler { rng: &mut rng, count: k });
            let targets = Targets::Classes { labels, n_classes };
            grow(x, targets, &params.tree, samples, sampler).map(|t| (t, oob))
        })
        .collect::<Result<_>>()?;
    let (trees, oob_mask) = fitted.into_iter().unzip();
    Ok(ForestModel {
        n_features: width,
        n_classes,
        n_trees: params.n_trees,
        feature_subsample: k,
        rng: params.rng,
        per_tree_seed: seeds,
        oob_mask,
        trees,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trees::{fit_tree, predict_tree, Criterion};

    fn toy() -> (Vec<Vec<f64>>, Vec<usize>) {
        let x: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![i as f64, ((i * 7) % 11) as f64, ((i * 3) % 5) as f64])
            .collect();
        let y = x.iter().map(|r| usize::from(r[0] + r[1] > 22.0)).collect();
        (x, y)
    }

    #[test]
    fn degenerate_forest_matches_single_tree() {
        let (x, y) = toy();
        let params = ForestParams {
            n_trees: 1,
            tree: TreeParams::classifier_default(),
            max_features: MaxFeatures::All,
            bootstrap: false,
            rng: RngKind::default(),
        };
        let f = fit_forest(&x, &y, 2, &params).unwrap();
        let t = fit_tree(&x, Targets::Classes { labels: &y, n_classes: 2 }, &params.tree).unwrap();
        assert_eq!(f.trees[0], t);
        for row in &x {
            assert_eq!(f.predict_proba(row).unwrap(), predict_tree(&t, row).unwrap());
        }
    }

    #[test]
    fn pure_labels_give_leaves() {
        let (x, _) = toy();
        let y = vec![1; x.len()];
        let f = fit_forest(&x, &y, 2, &ForestParams::default()).unwrap();
        assert!(f.trees.iter().all(Tree::is_leaf));
        assert_eq!(f.predict_proba(&x[3]).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn thread_count_does_not_change_model() {
        let (x, y) = toy();
        let params = ForestParams {
            n_trees: 25,
            ..ForestParams::default()
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| fit_forest(&x, &y, 2, &params).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a, b);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.per_tree_seed, (0..25).collect::<Vec<u64>>());
    }

    #[test]
    fn probabilities_sum_to_one_and_oob_recorded() {
        let (x, y) = toy();
        for rng in [RngKind::Xoshiro256PlusPlus, RngKind::Pcg64] {
            let params = ForestParams {
                n_trees: 30,
                rng,
                ..ForestParams::default()
            };
            let f = fit_forest(&x, &y, 2, &params).unwrap();
            f.validate().unwrap();
            assert_eq!(f.feature_subsample, 2);
            for row in &x {
                let p = f.predict_proba(row).unwrap();
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            // with 40 draws from 40 rows some rows are always left out
            assert!(f.oob_mask.iter().all(|m| m.iter().any(|&o| o)));
        }
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.2, 0.8]), 1);
    }

    #[test]
    fn sqrt_rule() {
        assert_eq!(MaxFeatures::Sqrt.resolve(35), 6);
        assert_eq!(MaxFeatures::Sqrt.resolve(16), 4);
        assert_eq!(MaxFeatures::Count(100).resolve(3), 3);
    }

    #[test]
    fn rejects_zero_trees() {
        let (x, y) = toy();
        let params = ForestParams {
            n_trees: 0,
            ..ForestParams::default()
        };
        assert!(fit_forest(&x, &y, 2, &params).is_err());
        let _ = Criterion::Gini;
    }
}
