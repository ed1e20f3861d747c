use super::{background_mean, Attribution, TreeOutput};
use crate::error::{Error, Result};

/// Subset enumeration is `2^d`; beyond this it is refused.
pub const BRUTEFORCE_MAX_FEATURES: usize = 15;

/// Textbook Shapley values over all feature subsets, with absent features
/// replaced by each background row in turn. Reference oracle for
/// [`super::shapley_exact`].
pub fn shapley_bruteforce(model: TreeOutput<'_>, x: &[f64], background: &[Vec<f64>]) -> Result<Attribution> {
    model.check(x, background)?;
    let d = model.n_features();
    if d > BRUTEFORCE_MAX_FEATURES {
        return Err(Error::Budget(format!(
            "brute-force Shapley limited to {BRUTEFORCE_MAX_FEATURES} features, got {d}"
        )));
    }
    let n_subsets = 1usize << d;
    let mut value = vec![0.0; n_subsets];
    let mut hybrid = vec![0.0; d];
    for (mask, v) in value.iter_mut().enumerate() {
        let mut sum = 0.0;
        for z in background {
            for (i, h) in hybrid.iter_mut().enumerate() {
                *h = if mask >> i & 1 == 1 { x[i] } else { z[i] };
            }
            sum += model.eval(&hybrid);
        }
        *v = sum / background.len() as f64;
    }

    // |S|!(d-|S|-1)!/d! indexed by |S|
    let fact = |n: usize| (1..=n).map(|k| k as f64).product::<f64>();
    let weight: Vec<f64> = (0..d).map(|s| fact(s) * fact(d - s - 1) / fact(d)).collect();
    let mut phi = vec![0.0; d];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        for mask in (0..n_subsets).filter(|m| m & bit == 0) {
            *p += weight[mask.count_ones() as usize] * (value[mask | bit] - value[mask]);
        }
    }
    Ok(Attribution {
        output: model.kind,
        base_value: background_mean(model, background),
        phi,
        prediction: model.eval(x),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::{shapley_exact, ShapleyBudget};
    use crate::trees::{Criterion, Node, NodeKind, Tree};

    fn leaf(v: f64) -> Node {
        Node {
            kind: NodeKind::Leaf,
            n_samples: 1,
            value: vec![v],
        }
    }

    fn split(feature: usize, threshold: f64, left: usize, right: usize) -> Node {
        Node {
            kind: NodeKind::Split {
                feature,
                threshold,
                left,
                right,
            },
            n_samples: 2,
            value: vec![0.0],
        }
    }

    /// f(x) = [x0 > 0.5] + [x1 > 0.5] as a depth-2 tree.
    fn additive() -> Tree {
        Tree {
            n_features: 2,
            criterion: Criterion::Mse,
            nodes: vec![
                split(0, 0.5, 1, 4),
                split(1, 0.5, 2, 3),
                leaf(0.0),
                leaf(1.0),
                split(1, 0.5, 5, 6),
                leaf(1.0),
                leaf(2.0),
            ],
        }
    }

    #[test]
    fn symmetric_model_symmetric_phi() {
        let t = additive();
        let bg = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.2, 0.2]];
        let a = shapley_bruteforce(TreeOutput::regressor(&t), &[1.0, 1.0], &bg).unwrap();
        assert!((a.phi[0] - a.phi[1]).abs() < 1e-12);
        a.check_local_accuracy().unwrap();
        let e = shapley_exact(TreeOutput::regressor(&t), &[1.0, 1.0], &bg, ShapleyBudget::default()).unwrap();
        assert!((e.phi[0] - a.phi[0]).abs() < 1e-12);
    }

    #[test]
    fn single_feature_gets_everything() {
        let t = Tree {
            n_features: 1,
            criterion: Criterion::Mse,
            nodes: vec![split(0, 3.0, 1, 2), leaf(10.0), leaf(25.0)],
        };
        let bg = vec![vec![1.0], vec![4.0], vec![2.0]];
        let a = shapley_bruteforce(TreeOutput::regressor(&t), &[5.0], &bg).unwrap();
        assert!((a.phi[0] - (a.prediction - a.base_value)).abs() < 1e-12);
        assert_eq!(a.prediction, 25.0);
        assert_eq!(a.base_value, 15.0);
    }

    #[test]
    fn refuses_wide_models() {
        let t = Tree::single_leaf(16, Criterion::Mse, 1, vec![0.0]);
        let err = shapley_bruteforce(TreeOutput::regressor(&t), &[0.0; 16], &[vec![0.0; 16]]).unwrap_err();
        assert!(matches!(err, Error::Budget(_)));
    }
}
