use serde::{Deserialize, Serialize};

use super::{Criterion, Tree};
use crate::error::{Error, Result};

/// Always predicts the most frequent training class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MajorityBaseline {
    pub class: usize,
    pub n_classes: usize,
    pub n_samples: usize,
}

impl MajorityBaseline {
    /// One-hot probability vector on the majority class.
    pub fn proba(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.n_classes];
        p[self.class] = 1.0;
        p
    }

    pub fn as_tree(&self, n_features: usize) -> Tree {
        Tree::single_leaf(n_features, Criterion::Gini, self.n_samples, self.proba())
    }
}

/// Always predicts the training mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanBaseline {
    pub mean: f64,
    pub n_samples: usize,
}

impl MeanBaseline {
    pub fn as_tree(&self, n_features: usize) -> Tree {
        Tree::single_leaf(n_features, Criterion::Mse, self.n_samples, vec![self.mean])
    }
}

/// Ties go to the lower class index.
pub fn baseline_majority(labels: &[usize], n_classes: usize) -> Result<MajorityBaseline> {
    if labels.is_empty() {
        return Err(Error::Empty("labels"));
    }
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        *counts
            .get_mut(l)
            .ok_or_else(|| Error::Validation(format!("label {l} outside 0..{n_classes}")))? += 1;
    }
    let mut class = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[class] {
            class = i;
        }
    }
    Ok(MajorityBaseline {
        class,
        n_classes,
        n_samples: labels.len(),
    })
}

pub fn baseline_mean(y: &[f64]) -> Result<MeanBaseline> {
    if y.is_empty() {
        return Err(Error::Empty("targets"));
    }
    Ok(MeanBaseline {
        mean: y.iter().sum::<f64>() / y.len() as f64,
        n_samples: y.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    // class 0 = pass, class 1 = at risk
    #[test]
    fn majority_examples() {
        assert_eq!(baseline_majority(&[0, 0, 1], 2).unwrap().class, 0);
        assert_eq!(baseline_majority(&[1, 0, 1], 2).unwrap().class, 1);
        assert_eq!(baseline_majority(&[0, 1], 2).unwrap().class, 0);
        assert_eq!(baseline_majority(&[1, 0], 2).unwrap().proba(), vec![1.0, 0.0]);
        assert!(baseline_majority(&[], 2).is_err());
        assert!(baseline_majority(&[3], 2).is_err());
    }

    #[test]
    fn mean_examples() {
        assert_eq!(baseline_mean(&[60.0, 80.0]).unwrap().mean, 70.0);
        assert!(baseline_mean(&[]).is_err());
        let t = baseline_mean(&[60.0, 80.0]).unwrap().as_tree(4);
        assert_eq!(t.root().value, vec![70.0]);
    }
}
