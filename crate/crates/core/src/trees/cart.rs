use std::cmp::Ordering;

use rand::Rng;

use super::rng::PortableRng;
use super::{Criterion, Node, NodeKind, Targets, Tree, TreeParams};
use crate::error::{Error, Result};

/// Best split found at a node. `impurity` is the sample-weighted mean of
/// the child impurities; `gain` is parent impurity minus that.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub impurity: f64,
    pub gain: f64,
    pub n_left: usize,
}

/// Per-split feature subsampling for forests: visit features in a random
/// order and keep the first `count` that are not constant in the node.
pub(crate) struct FeatureSampler<'r> {
    pub rng: &'r mut PortableRng,
    pub count: usize,
}

fn validate_inputs(x: &[Vec<f64>], targets: &Targets<'_>, params: &TreeParams) -> Result<usize> {
    params.validate()?;
    if x.is_empty() || targets.is_empty() {
        return Err(Error::Empty("training rows"));
    }
    if x.len() != targets.len() {
        return Err(Error::Validation(format!(
            "{} feature rows but {} targets",
            x.len(),
            targets.len()
        )));
    }
    let width = x[0].len();
    for row in x {
        if row.len() != width {
            return Err(Error::SchemaMismatch {
                expected: width,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite feature value".into()));
        }
    }
    match (targets, params.criterion) {
        (Targets::Classes { labels, n_classes }, Criterion::Gini) => {
            if *n_classes == 0 || labels.iter().any(|&l| l >= *n_classes) {
                return Err(Error::Validation("class label out of range".into()));
            }
        }
        (Targets::Values(v), Criterion::Mse) => {
            if v.iter().any(|t| !t.is_finite()) {
                return Err(Error::Validation("non-finite regression target".into()));
            }
        }
        _ => return Err(Error::Validation("criterion does not match target type".into())),
    }
    Ok(width)
}

/// Greedy CART. Each node takes the split minimising weighted child
/// impurity over thresholds at midpoints of consecutive distinct values;
/// ties go to the lowest feature index, then the lowest threshold.
pub fn fit_tree(x: &[Vec<f64>], targets: Targets<'_>, params: &TreeParams) -> Result<Tree> {
    let samples: Vec<usize> = (0..x.len()).collect();
    grow(x, targets, params, samples, None)
}

pub(crate) fn grow(
    x: &[Vec<f64>],
    targets: Targets<'_>,
    params: &TreeParams,
    samples: Vec<usize>,
    sampler: Option<FeatureSampler<'_>>,
) -> Result<Tree> {
    let width = validate_inputs(x, &targets, params)?;
    let mut builder = Builder {
        x,
        targets,
        params,
        width,
        sampler,
        nodes: Vec::new(),
    };
    builder.build(samples, 0);
    Ok(Tree {
        n_features: width,
        criterion: params.criterion,
        nodes: builder.nodes,
    })
}

/// Root split over all features, as [`fit_tree`] would choose it.
pub fn best_root_split(x: &[Vec<f64>], targets: Targets<'_>, params: &TreeParams) -> Result<Option<SplitChoice>> {
    let width = validate_inputs(x, &targets, params)?;
    let builder = Builder {
        x,
        targets,
        params,
        width,
        sampler: None,
        nodes: Vec::new(),
    };
    let samples: Vec<usize> = (0..x.len()).collect();
    let features: Vec<usize> = (0..width).collect();
    Ok(builder.best_split(&samples, &features))
}

struct Builder<'a, 'r> {
    x: &'a [Vec<f64>],
    targets: Targets<'a>,
    params: &'a TreeParams,
    width: usize,
    sampler: Option<FeatureSampler<'r>>,
    nodes: Vec<Node>,
}

impl Builder<'_, '_> {
    fn node_value(&self, samples: &[usize]) -> Vec<f64> {
        match self.targets {
            Targets::Classes { labels, n_classes } => {
                let mut counts = vec![0usize; n_classes];
                for &i in samples {
                    counts[labels[i]] += 1;
                }
                let n = samples.len() as f64;
                counts.into_iter().map(|c| c as f64 / n).collect()
            }
            Targets::Values(y) => {
                // sum in sorted order so the mean does not depend on row order
                let mut v: Vec<f64> = samples.iter().map(|&i| y[i]).collect();
                v.sort_by(f64::total_cmp);
                vec![v.iter().sum::<f64>() / v.len() as f64]
            }
        }
    }

    fn is_pure(&self, samples: &[usize]) -> bool {
        let first = self.targets.key(samples[0]);
        samples.iter().all(|&i| self.targets.key(i) == first)
    }

    fn build(&mut self, samples: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node {
            kind: NodeKind::Leaf,
            n_samples: samples.len(),
            value: self.node_value(&samples),
        });
        let n = samples.len();
        let p = self.params;
        if p.max_depth.is_some_and(|d| depth >= d)
            || n < p.min_samples_split
            || n < 2 * p.min_samples_leaf
            || self.is_pure(&samples)
        {
            return id;
        }
        let features = self.candidate_features(&samples);
        let Some(split) = self.best_split(&samples, &features) else {
            return id;
        };
        let (left, right): (Vec<usize>, Vec<usize>) = samples
            .into_iter()
            .partition(|&i| self.x[i][split.feature] <= split.threshold);
        let l = self.build(left, depth + 1);
        let r = self.build(right, depth + 1);
        self.nodes[id].kind = NodeKind::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: l,
            right: r,
        };
        id
    }

    fn candidate_features(&mut self, samples: &[usize]) -> Vec<usize> {
        let Some(sampler) = self.sampler.as_mut() else {
            return (0..self.width).collect();
        };
        let mut order: Vec<usize> = (0..self.width).collect();
        let mut chosen = Vec::with_capacity(sampler.count);
        for k in 0..order.len() {
            if chosen.len() == sampler.count {
                break;
            }
            let j = sampler.rng.random_range(k..order.len());
            order.swap(k, j);
            let f = order[k];
            let first = self.x[samples[0]][f];
            if samples.iter().any(|&i| self.x[i][f] != first) {
                chosen.push(f);
            }
        }
        chosen.sort_unstable();
        chosen
    }

    fn best_split(&self, samples: &[usize], features: &[usize]) -> Option<SplitChoice> {
        let parent = self.impurity_of(samples);
        let mut best: Option<SplitChoice> = None;
        let mut order = samples.to_vec();
        for &f in features {
            order.sort_by(|&a, &b| {
                self.x[a][f]
                    .total_cmp(&self.x[b][f])
                    .then_with(|| self.targets.key(a).total_cmp(&self.targets.key(b)))
            });
            self.scan_feature(f, &order, parent, &mut best);
        }
        best
    }

    fn impurity_of(&self, samples: &[usize]) -> f64 {
        match self.targets {
            Targets::Classes { labels, n_classes } => {
                let mut counts = vec![0.0; n_classes];
                for &i in samples {
                    counts[labels[i]] += 1.0;
                }
                gini_counts(&counts, samples.len() as f64)
            }
            Targets::Values(y) => {
                let n = samples.len() as f64;
                let (s, sq) = samples.iter().fold((0.0, 0.0), |(s, sq), &i| (s + y[i], sq + y[i] * y[i]));
                (sq - s * s / n).max(0.0) / n
            }
        }
    }

    fn scan_feature(&self, f: usize, order: &[usize], parent: f64, best: &mut Option<SplitChoice>) {
        let n = order.len();
        let msl = self.params.min_samples_leaf;
        let nf = n as f64;
        let consider = |pos: usize, weighted: f64, best: &mut Option<SplitChoice>| {
            let lo = self.x[order[pos - 1]][f];
            let hi = self.x[order[pos]][f];
            if lo >= hi || pos < msl || n - pos < msl {
                return;
            }
            let mut threshold = lo + (hi - lo) / 2.0;
            if threshold >= hi {
                threshold = lo;
            }
            if is_better(weighted, best.as_ref()) {
                *best = Some(SplitChoice {
                    feature: f,
                    threshold,
                    impurity: weighted,
                    gain: parent - weighted,
                    n_left: pos,
                });
            }
        };
        match self.targets {
            Targets::Classes { labels, n_classes } => {
                let mut total = vec![0.0; n_classes];
                for &i in order {
                    total[labels[i]] += 1.0;
                }
                let mut left = vec![0.0; n_classes];
                let mut right = total;
                for pos in 1..n {
                    let c = labels[order[pos - 1]];
                    left[c] += 1.0;
                    right[c] -= 1.0;
                    let nl = pos as f64;
                    let nr = nf - nl;
                    let weighted = (nl * gini_counts(&left, nl) + nr * gini_counts(&right, nr)) / nf;
                    consider(pos, weighted, best);
                }
            }
            Targets::Values(y) => {
                let (tot_s, tot_sq) = order.iter().fold((0.0, 0.0), |(s, sq), &i| (s + y[i], sq + y[i] * y[i]));
                let (mut s, mut sq) = (0.0, 0.0);
                for pos in 1..n {
                    let v = y[order[pos - 1]];
                    s += v;
                    sq += v * v;
                    let nl = pos as f64;
                    let nr = nf - nl;
                    let sse_l = (sq - s * s / nl).max(0.0);
                    let (rs, rsq) = (tot_s - s, tot_sq - sq);
                    let sse_r = (rsq - rs * rs / nr).max(0.0);
                    consider(pos, (sse_l + sse_r) / nf, best);
                }
            }
        }
    }
}

fn gini_counts(counts: &[f64], n: f64) -> f64 {
    1.0 - counts.iter().map(|&c| (c / n) * (c / n)).sum::<f64>()
}

/// Strict improvement with a relative tolerance, so float noise cannot
/// override the lowest-index tie rule.
fn is_better(candidate: f64, best: Option<&SplitChoice>) -> bool {
    match best {
        None => true,
        Some(b) => {
            let tol = 1e-12 * (1.0 + b.impurity.abs());
            candidate.partial_cmp(&(b.impurity - tol)) == Some(Ordering::Less)
        }
    }
}
