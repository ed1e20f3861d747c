//! The two-stage cascade: a random-forest gate separates at-risk students
//! from passing ones, and a regression tree predicts grade points for the
//! students the gate lets through. One model pair is trained per monthly
//! checkpoint.

mod cv;

pub use cv::{
    cross_validate, evaluate_all, fold_assignment, BaselineEval, CheckpointEval, Confusion, EvalReport,
};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::{shapley_exact, Attribution, ShapleyBudget, TreeOutput, Verdict};
use crate::features::{extract_features, Checkpoint, Feature, FeatureMatrix};
use crate::grading::{grade_from_points, GradeScheme, StudentId, CHECKPOINTS};
use crate::ingest::Cohort;
use crate::trees::{
    baseline_majority, fit_forest, fit_tree, ForestModel, ForestParams, MajorityBaseline, Targets, Tree, TreeParams,
};

/// Bumped whenever the persisted model layout changes.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Gate class indices.
pub const CLASS_PASS: usize = 0;
pub const CLASS_AT_RISK: usize = 1;

/// Lowest and highest points a passing prediction may show.
pub const PASS_POINTS_MIN: f64 = 50.0;
pub const PASS_POINTS_MAX: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineParams {
    pub forest: ForestParams,
    pub regressor: TreeParams,
    /// At-risk probability at or above which the gate flags a student.
    pub risk_threshold: f64,
    pub folds: usize,
    /// Master seed; forest and fold seeds derive from it.
    pub seed: u64,
    #[serde(default)]
    pub shapley_budget: ShapleyBudget,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            forest: ForestParams::default(),
            regressor: TreeParams::regressor_default(),
            risk_threshold: 0.5,
            folds: 5,
            seed: 42,
            shapley_budget: ShapleyBudget::default(),
        }
    }
}

impl PipelineParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.risk_threshold) {
            return Err(Error::Validation(format!(
                "risk_threshold {} outside [0, 1]",
                self.risk_threshold
            )));
        }
        if self.folds < 2 {
            return Err(Error::Validation("cross-validation needs at least 2 folds".into()));
        }
        if self.forest.n_trees == 0 {
            return Err(Error::Validation("forest needs at least one tree".into()));
        }
        self.forest.tree.validate()?;
        self.regressor.validate()
    }

    /// Same parameters with every stochastic component reseeded from `seed`.
    pub fn reseeded(&self, seed: u64) -> Self {
        let mut p = self.clone();
        p.seed = seed;
        p.forest.tree.seed = seed;
        p.regressor.seed = seed;
        p
    }
}

/// Release checkpoint of every grade item plus the checkpoint cutoffs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssessmentCalendar {
    pub checkpoints: Vec<Checkpoint>,
    pub releases: BTreeMap<String, Option<u8>>,
}

impl AssessmentCalendar {
    /// Monthly cutoffs from `semester_start` and the scheme's own releases.
    pub fn monthly(scheme: &GradeScheme, semester_start: NaiveDate) -> Result<Self> {
        Ok(AssessmentCalendar {
            checkpoints: Checkpoint::series(semester_start)?,
            releases: scheme
                .items
                .iter()
                .map(|i| (i.id.clone(), i.release_checkpoint))
                .collect(),
        })
    }

    /// Explicit cutoffs, one per checkpoint in order.
    pub fn with_cutoffs(scheme: &GradeScheme, cutoffs: &[NaiveDate]) -> Result<Self> {
        let checkpoints = cutoffs
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let index = u8::try_from(i + 1).map_err(|_| Error::Validation("too many checkpoints".into()))?;
                Checkpoint::with_cutoff(index, c)
            })
            .collect::<Result<Vec<_>>>()?;
        let cal = AssessmentCalendar {
            checkpoints,
            releases: scheme
                .items
                .iter()
                .map(|i| (i.id.clone(), i.release_checkpoint))
                .collect(),
        };
        cal.validate(scheme)?;
        Ok(cal)
    }

    pub fn validate(&self, scheme: &GradeScheme) -> Result<()> {
        if self.checkpoints.len() != usize::from(CHECKPOINTS) {
            return Err(Error::Validation(format!(
                "calendar must list {CHECKPOINTS} checkpoints, got {}",
                self.checkpoints.len()
            )));
        }
        for (i, cp) in self.checkpoints.iter().enumerate() {
            if usize::from(cp.index) != i + 1 {
                return Err(Error::Validation(format!("checkpoint at position {} has index {}", i + 1, cp.index)));
            }
            if i > 0 && cp.cutoff <= self.checkpoints[i - 1].cutoff {
                return Err(Error::Validation("checkpoint cutoffs must increase".into()));
            }
        }
        let declared: BTreeMap<String, Option<u8>> = scheme
            .items
            .iter()
            .map(|i| (i.id.clone(), i.release_checkpoint))
            .collect();
        if declared != self.releases {
            return Err(Error::Validation("calendar releases disagree with the grade scheme".into()));
        }
        Ok(())
    }

    pub fn checkpoint(&self, index: u8) -> Result<&Checkpoint> {
        self.checkpoints
            .iter()
            .find(|c| c.index == index)
            .ok_or_else(|| Error::Domain(format!("checkpoint {index} outside 1..={CHECKPOINTS}")))
    }
}

/// Pass/fail stage of the cascade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Gate {
    Forest(ForestModel),
    /// Used when the training labels contain a single class.
    Majority(MajorityBaseline),
}

impl Gate {
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Gate::Forest(f) => f.predict_proba(x),
            Gate::Majority(m) => Ok(m.proba()),
        }
    }

    /// Trees whose mean output is the gate's class probability.
    pub fn trees(&self, n_features: usize) -> Vec<Tree> {
        match self {
            Gate::Forest(f) => f.trees.clone(),
            Gate::Majority(m) => vec![m.as_tree(n_features)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointModel {
    pub format_version: u32,
    pub checkpoint: Checkpoint,
    pub gate: Gate,
    /// Set when the gate fell back to the majority baseline.
    pub degenerate_labels: bool,
    pub regressor: Tree,
    pub schema: Vec<Feature>,
    pub background: FeatureMatrix,
    pub risk_threshold: f64,
    /// Data-as-of instant (the checkpoint cutoff), not wall-clock time.
    pub trained_at: DateTime<Utc>,
    pub training_year: String,
    pub seed: u64,
}

impl CheckpointModel {
    pub fn width(&self) -> usize {
        self.schema.len()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.schema.iter().map(|f| f.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "model format {} is not the supported {MODEL_FORMAT_VERSION}",
                self.format_version
            )));
        }
        let w = self.width();
        if self.background.schema != self.schema {
            return Err(Error::Format("background schema differs from model schema".into()));
        }
        self.background.validate()?;
        if self.background.rows.is_empty() {
            return Err(Error::Format("model has an empty background set".into()));
        }
        self.regressor.validate()?;
        if self.regressor.n_features != w {
            return Err(Error::SchemaMismatch {
                expected: w,
                got: self.regressor.n_features,
            });
        }
        if let Gate::Forest(f) = &self.gate {
            f.validate()?;
            if f.n_features != w {
                return Err(Error::SchemaMismatch {
                    expected: w,
                    got: f.n_features,
                });
            }
        }
        Ok(())
    }

    fn background_rows(&self) -> Vec<Vec<f64>> {
        self.background.dense()
    }
}

/// Gate and regressor outputs for one row, without attribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub verdict: Verdict,
    pub risk_probability: f64,
    /// Unclamped regressor output.
    pub raw_points: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub student: StudentId,
    pub checkpoint: u8,
    pub verdict: Verdict,
    pub risk_probability: f64,
    /// Clamped to 50..=100; absent for at-risk students.
    pub predicted_points: Option<f64>,
    pub predicted_grade: Option<u8>,
    /// Explains the pass probability for at-risk verdicts and the grade
    /// points otherwise.
    pub attribution: Attribution,
    /// Regressor output before clamping; kept for metrics only.
    #[serde(skip)]
    pub raw_points: f64,
}

fn at_risk_labels(cohort: &Cohort, matrix: &FeatureMatrix) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut labels = Vec::with_capacity(matrix.rows.len());
    let mut points = Vec::with_capacity(matrix.rows.len());
    for s in matrix.students() {
        let o = cohort
            .outcomes
            .get(s)
            .ok_or_else(|| Error::MissingOutcomes(s.to_string()))?;
        labels.push(if o.passed { CLASS_PASS } else { CLASS_AT_RISK });
        points.push(f64::from(o.total_points));
    }
    Ok((labels, points))
}

pub(crate) struct FittedPair {
    pub gate: Gate,
    pub degenerate: bool,
    pub regressor: Tree,
}

/// Gate on `labels` (majority fallback for a single class) and regressor on
/// `points`, both over the same rows.
pub(crate) fn fit_pair(x: &[Vec<f64>], labels: &[usize], points: &[f64], params: &PipelineParams) -> Result<FittedPair> {
    let single_class = labels.iter().all(|&l| l == labels[0]);
    let (gate, degenerate) = if single_class {
        tracing::warn!("training labels contain a single class; gate falls back to the majority baseline");
        (Gate::Majority(baseline_majority(labels, 2)?), true)
    } else {
        (Gate::Forest(fit_forest(x, labels, 2, &params.forest)?), false)
    };
    let regressor = fit_tree(x, Targets::Values(points), &params.regressor)?;
    Ok(FittedPair {
        gate,
        degenerate,
        regressor,
    })
}

/// Trains the gate on `at_risk = not passed` and the regressor on total
/// points over every student.
pub fn train_checkpoint(
    cohort: &Cohort,
    cp: &Checkpoint,
    scheme: &GradeScheme,
    params: &PipelineParams,
) -> Result<CheckpointModel> {
    params.validate()?;
    if !cohort.has_all_outcomes() {
        let missing = cohort
            .students()
            .find(|s| !cohort.outcomes.contains_key(*s))
            .map_or_else(|| "empty cohort".to_string(), ToString::to_string);
        return Err(Error::MissingOutcomes(missing));
    }
    let matrix = extract_features(cohort, cp, scheme)?;
    let (labels, points) = at_risk_labels(cohort, &matrix)?;
    let x = matrix.dense();
    let pair = fit_pair(&x, &labels, &points, params)?;
    let model = CheckpointModel {
        format_version: MODEL_FORMAT_VERSION,
        checkpoint: cp.clone(),
        gate: pair.gate,
        degenerate_labels: pair.degenerate,
        regressor: pair.regressor,
        schema: matrix.schema.clone(),
        background: matrix,
        risk_threshold: params.risk_threshold,
        trained_at: cp.cutoff_instant(),
        training_year: cohort.meta.academic_year.clone(),
        seed: params.seed,
    };
    model.validate()?;
    Ok(model)
}

/// All checkpoints of `calendar`, trained in parallel and returned in
/// checkpoint order.
pub fn train_all(
    cohort: &Cohort,
    calendar: &AssessmentCalendar,
    scheme: &GradeScheme,
    params: &PipelineParams,
) -> Result<Vec<CheckpointModel>> {
    calendar.validate(scheme)?;
    calendar
        .checkpoints
        .par_iter()
        .map(|cp| train_checkpoint(cohort, cp, scheme, params))
        .collect()
}

pub(crate) fn score_with(gate: &Gate, regressor: &Tree, threshold: f64, x: &[f64]) -> Result<Score> {
    let proba = gate.predict_proba(x)?;
    let risk_probability = proba[CLASS_AT_RISK];
    let verdict = if risk_probability >= threshold {
        Verdict::AtRisk
    } else {
        Verdict::Pass
    };
    let raw_points = crate::trees::predict_tree(regressor, x)?[0];
    Ok(Score {
        verdict,
        risk_probability,
        raw_points,
    })
}

pub fn score(model: &CheckpointModel, x: &[f64]) -> Result<Score> {
    if x.len() != model.width() {
        return Err(Error::SchemaMismatch {
            expected: model.width(),
            got: x.len(),
        });
    }
    score_with(&model.gate, &model.regressor, model.risk_threshold, x)
}

/// Clamps a passing regressor output into 50..=100 and grades it.
pub fn clamp_pass_points(raw: f64) -> Result<(f64, u8)> {
    let points = raw.clamp(PASS_POINTS_MIN, PASS_POINTS_MAX);
    let grade = grade_from_points(points.round() as u32)?;
    Ok((points, grade))
}

/// Runs the cascade on one feature row and explains the decisive output.
/// The returned attribution has already passed the local-accuracy check.
pub fn predict_student(model: &CheckpointModel, student: &StudentId, x: &[f64]) -> Result<Prediction> {
    predict_student_with(model, student, x, ShapleyBudget::default())
}

pub fn predict_student_with(
    model: &CheckpointModel,
    student: &StudentId,
    x: &[f64],
    budget: ShapleyBudget,
) -> Result<Prediction> {
    let s = score(model, x)?;
    let background = model.background_rows();
    let (predicted_points, predicted_grade, attribution) = match s.verdict {
        Verdict::AtRisk => {
            let trees = model.gate.trees(model.width());
            let a = shapley_exact(
                TreeOutput::classifier(&trees, CLASS_PASS),
                x,
                &background,
                budget,
            )?;
            (None, None, a)
        }
        Verdict::Pass => {
            let (p, g) = clamp_pass_points(s.raw_points)?;
            let a = shapley_exact(TreeOutput::regressor(&model.regressor), x, &background, budget)?;
            (Some(p), Some(g), a)
        }
    };
    attribution.check_local_accuracy()?;
    Ok(Prediction {
        student: student.clone(),
        checkpoint: model.checkpoint.index,
        verdict: s.verdict,
        risk_probability: s.risk_probability,
        predicted_points,
        predicted_grade,
        attribution,
        raw_points: s.raw_points,
    })
}

pub fn model_file_name(checkpoint: u8) -> String {
    format!("model_cp{checkpoint}.json")
}

/// Writes one JSON file per model; returns the paths in checkpoint order.
pub fn save_models(dir: &Path, models: &[CheckpointModel]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    models
        .iter()
        .map(|m| {
            let path = dir.join(model_file_name(m.checkpoint.index));
            let mut bytes = serde_json::to_vec_pretty(m)?;
            bytes.push(b'\n');
            std::fs::write(&path, bytes)?;
            Ok(path)
        })
        .collect()
}

/// Loads and validates all four checkpoint models from `dir`.
pub fn load_models(dir: &Path) -> Result<Vec<CheckpointModel>> {
    (1..=CHECKPOINTS)
        .map(|cp| {
            let path = dir.join(model_file_name(cp));
            let file = std::fs::File::open(&path)
                .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
            let model: CheckpointModel = serde_json::from_reader(std::io::BufReader::new(file))?;
            model.validate()?;
            if model.checkpoint.index != cp {
                return Err(Error::Format(format!("{} holds checkpoint {}", path.display(), model.checkpoint.index)));
            }
            Ok(model)
        })
        .collect()
}

/// Runs `f` on a dedicated rayon pool of `workers` threads (0 = rayon's
/// default).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Validation(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}
