use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{at_risk_labels, fit_pair, score_with, AssessmentCalendar, PipelineParams, CLASS_AT_RISK};
use crate::error::{Error, Result};
use crate::explain::Verdict;
use crate::features::{extract_features, Checkpoint};
use crate::grading::GradeScheme;
use crate::ingest::Cohort;
use crate::trees::{baseline_majority, baseline_mean, PortableRng, RngKind};

/// Binary confusion counts with at-risk as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u32,
    pub fp: u32,
    pub tn: u32,
    #[serde(rename = "fn")]
    pub fn_: u32,
}

impl Confusion {
    /// `predicted[i]` and `actual[i]` are true for at-risk.
    pub fn tally(predicted: &[bool], actual: &[bool]) -> Self {
        let mut c = Confusion::default();
        for (&p, &a) in predicted.iter().zip(actual) {
            match (p, a) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u32 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Zero when nothing was flagged.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// Zero when nobody actually failed.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(num: u32, den: u32) -> f64 {
    if den == 0 {
        0.0
    } else {
        f64::from(num) / f64::from(den)
    }
}

fn mean_abs(errors: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for e in errors {
        sum += e.abs();
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineEval {
    pub confusion: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Mean-baseline MAE over the model's gated-pass population.
    pub mae_gated_pass: Option<f64>,
    pub mae_all: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEval {
    pub checkpoint: u8,
    pub label: String,
    pub n_students: usize,
    pub n_features: usize,
    pub confusion: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// MAE in grade points over students who truly passed and were gated
    /// pass; `None` when that population is empty.
    pub mae_gated_pass: Option<f64>,
    pub n_gated_pass: usize,
    /// MAE of the regressor over every student.
    pub mae_all: f64,
    pub baseline: BaselineEval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub folds: usize,
    pub risk_threshold: f64,
    pub checkpoints: Vec<CheckpointEval>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

impl EvalReport {
    /// Aligned plain-text table, one row per checkpoint.
    pub fn render_table(&self) -> String {
        let header = [
            "cp", "month", "n", "feat", "TP", "FP", "TN", "FN", "prec", "recall", "F1", "MAE", "MAE_all", "base_prec",
            "base_MAE",
        ];
        let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for c in &self.checkpoints {
            rows.push(vec![
                c.checkpoint.to_string(),
                c.label.clone(),
                c.n_students.to_string(),
                c.n_features.to_string(),
                c.confusion.tp.to_string(),
                c.confusion.fp.to_string(),
                c.confusion.tn.to_string(),
                c.confusion.fn_.to_string(),
                format!("{:.3}", c.precision),
                format!("{:.3}", c.recall),
                format!("{:.3}", c.f1),
                fmt_opt(c.mae_gated_pass),
                format!("{:.2}", c.mae_all),
                format!("{:.3}", c.baseline.precision),
                fmt_opt(c.baseline.mae_gated_pass),
            ]);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|j| rows.iter().map(|r| r[j].len()).max().unwrap_or(0))
            .collect();
        let mut out = format!(
            "{}-fold cross-validation, seed {}, risk threshold {}\n",
            self.folds, self.seed, self.risk_threshold
        );
        for r in &rows {
            let line: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(j, (cell, &w))| if j == 1 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        out
    }
}

/// Seeded shuffle of `0..n` cut into `k` folds whose sizes differ by at
/// most one (the first `n % k` folds get the extra row). Each fold is
/// returned sorted.
pub fn fold_assignment(n: usize, k: usize, seed: u64, rng: RngKind) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Validation("cross-validation needs at least 2 folds".into()));
    }
    if n < k {
        return Err(Error::Validation(format!("{n} students cannot fill {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut PortableRng::new(rng, seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut at = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut fold = order[at..at + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        at += size;
    }
    Ok(folds)
}

fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_add((fold as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

struct Outcome {
    at_risk: bool,
    raw_points: f64,
    baseline_at_risk: bool,
    baseline_points: f64,
}

/// k-fold cross-validation of the cascade at one checkpoint. Every student
/// is scored exactly once, by the models trained on the other folds.
pub fn cross_validate(
    cohort: &Cohort,
    cp: &Checkpoint,
    scheme: &GradeScheme,
    params: &PipelineParams,
) -> Result<CheckpointEval> {
    params.validate()?;
    let matrix = extract_features(cohort, cp, scheme)?;
    let (labels, points) = at_risk_labels(cohort, &matrix)?;
    let x = matrix.dense();
    let n = x.len();
    let folds = fold_assignment(n, params.folds, params.seed, params.forest.rng)?;

    let per_fold: Vec<Vec<(usize, Outcome)>> = folds
        .par_iter()
        .enumerate()
        .map(|(f, test)| {
            let mut in_test = vec![false; n];
            test.iter().for_each(|&i| in_test[i] = true);
            let train: Vec<usize> = (0..n).filter(|&i| !in_test[i]).collect();
            let tx: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
            let tl: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
            let tp: Vec<f64> = train.iter().map(|&i| points[i]).collect();
            let fold_params = params.reseeded(fold_seed(params.seed, f));
            let pair = fit_pair(&tx, &tl, &tp, &fold_params)?;
            let majority = baseline_majority(&tl, 2)?;
            let mean = baseline_mean(&tp)?;
            test.iter()
                .map(|&i| {
                    let s = score_with(&pair.gate, &pair.regressor, params.risk_threshold, &x[i])?;
                    Ok((
                        i,
                        Outcome {
                            at_risk: s.verdict == Verdict::AtRisk,
                            raw_points: s.raw_points,
                            baseline_at_risk: majority.class == CLASS_AT_RISK,
                            baseline_points: mean.mean,
                        },
                    ))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut slots: Vec<Option<Outcome>> = (0..n).map(|_| None).collect();
    for (i, o) in per_fold.into_iter().flatten() {
        slots[i] = Some(o);
    }
    let outcomes: Vec<Outcome> = slots
        .into_iter()
        .map(|o| o.ok_or_else(|| Error::Validation("fold assignment left a student unscored".into())))
        .collect::<Result<_>>()?;

    let actual: Vec<bool> = labels.iter().map(|&l| l == CLASS_AT_RISK).collect();
    let predicted: Vec<bool> = outcomes.iter().map(|o| o.at_risk).collect();
    let base_predicted: Vec<bool> = outcomes.iter().map(|o| o.baseline_at_risk).collect();
    let confusion = Confusion::tally(&predicted, &actual);
    let base_confusion = Confusion::tally(&base_predicted, &actual);
    let gated: Vec<usize> = (0..n).filter(|&i| !actual[i] && !predicted[i]).collect();

    Ok(CheckpointEval {
        checkpoint: cp.index,
        label: cp.label.clone(),
        n_students: n,
        n_features: matrix.width(),
        confusion,
        precision: confusion.precision(),
        recall: confusion.recall(),
        f1: confusion.f1(),
        mae_gated_pass: mean_abs(gated.iter().map(|&i| outcomes[i].raw_points - points[i])),
        n_gated_pass: gated.len(),
        mae_all: mean_abs((0..n).map(|i| outcomes[i].raw_points - points[i])).unwrap_or(0.0),
        baseline: BaselineEval {
            confusion: base_confusion,
            precision: base_confusion.precision(),
            recall: base_confusion.recall(),
            f1: base_confusion.f1(),
            mae_gated_pass: mean_abs(gated.iter().map(|&i| outcomes[i].baseline_points - points[i])),
            mae_all: mean_abs((0..n).map(|i| outcomes[i].baseline_points - points[i])).unwrap_or(0.0),
        },
    })
}

/// Cross-validates every checkpoint of `calendar` in order.
pub fn evaluate_all(
    cohort: &Cohort,
    calendar: &AssessmentCalendar,
    scheme: &GradeScheme,
    params: &PipelineParams,
) -> Result<EvalReport> {
    calendar.validate(scheme)?;
    let checkpoints = calendar
        .checkpoints
        .par_iter()
        .map(|cp| cross_validate(cohort, cp, scheme, params))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        seed: params.seed,
        folds: params.folds,
        risk_threshold: params.risk_threshold,
        checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ten_student_fixture() {
        // students 0..3 failed; the gate flags 0, 1 and 3
        let actual = [true, true, true, false, false, false, false, false, false, false];
        let predicted = [true, true, false, true, false, false, false, false, false, false];
        let c = Confusion::tally(&predicted, &actual);
        assert_eq!(
            c,
            Confusion {
                tp: 2,
                fp: 1,
                tn: 6,
                fn_: 1
            }
        );
        assert_eq!(c.total(), 10);
        assert_eq!(c.precision(), 2.0 / 3.0);
        assert_eq!(c.recall(), 2.0 / 3.0);
        assert!((c.f1() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn no_positive_predictions() {
        let c = Confusion::tally(&[false; 4], &[true, false, false, false]);
        assert_eq!((c.precision(), c.recall(), c.f1()), (0.0, 0.0, 0.0));
    }

    #[test]
    fn confusion_serializes_fn() {
        let v = serde_json::to_value(Confusion::default()).unwrap();
        assert!(v.get("fn").is_some());
    }

    #[test]
    fn leave_one_out() {
        let folds = fold_assignment(7, 7, 3, RngKind::default()).unwrap();
        assert!(folds.iter().all(|f| f.len() == 1));
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn too_small_cohort() {
        assert!(fold_assignment(4, 5, 0, RngKind::default()).is_err());
        assert!(fold_assignment(10, 1, 0, RngKind::default()).is_err());
    }

    proptest! {
        #[test]
        fn folds_partition(n in 2usize..200, k in 2usize..12, seed in any::<u64>()) {
            prop_assume!(n >= k);
            let folds = fold_assignment(n, k, seed, RngKind::Pcg64).unwrap();
            prop_assert_eq!(folds.len(), k);
            let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            let mut seen = vec![false; n];
            for &i in folds.iter().flatten() {
                prop_assert!(!seen[i]);
                seen[i] = true;
            }
            prop_assert!(seen.iter().all(|&s| s));
            prop_assert_eq!(&folds, &fold_assignment(n, k, seed, RngKind::Pcg64).unwrap());
        }
    }
}
