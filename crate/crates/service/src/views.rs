//! Response bodies of the `/api/v1` endpoints. Every type here has a
//! matching document under `schemas/`.

use gradecast_core::explain::{textual_explanation, ExplainedOutput, Sentence, Verdict, LOCAL_ACCURACY_TOL};
use gradecast_core::features::{behavior_stats, percentile_of, BehaviorStats, Checkpoint};
use gradecast_core::ingest::{Cohort, DateRange, EffortSurvey};
use gradecast_core::pipeline::{CheckpointModel, Prediction};
use gradecast_core::{GradeScheme, ItemKind, StudentId};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiEntry {
    pub feature: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionView {
    pub output: ExplainedOutput,
    pub base: f64,
    pub prediction: f64,
    /// Schema order.
    pub phi: Vec<PhiEntry>,
}

impl AttributionView {
    pub fn local_accuracy_gap(&self) -> f64 {
        (self.base + self.phi.iter().map(|p| p.value).sum::<f64>() - self.prediction).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionView {
    pub student: String,
    pub checkpoint: u8,
    pub label: String,
    pub verdict: Verdict,
    pub risk_probability: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_points: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_grade: Option<u8>,
    pub attribution: AttributionView,
    pub sentences: Vec<Sentence>,
    pub model_version: u64,
}

impl PredictionView {
    pub fn new(p: &Prediction, model: &CheckpointModel, top_k: usize, model_version: u64) -> Self {
        let explanation = textual_explanation(&p.attribution, &model.schema, top_k, p.verdict);
        let a = &p.attribution;
        PredictionView {
            student: p.student.to_string(),
            checkpoint: p.checkpoint,
            label: model.checkpoint.label.clone(),
            verdict: p.verdict,
            risk_probability: p.risk_probability,
            predicted_points: p.predicted_points,
            predicted_grade: p.predicted_grade,
            attribution: AttributionView {
                output: a.output,
                base: a.base_value,
                prediction: a.prediction,
                phi: model
                    .schema
                    .iter()
                    .zip(&a.phi)
                    .map(|(f, &value)| PhiEntry {
                        feature: f.name.clone(),
                        value,
                    })
                    .collect(),
            },
            sentences: explanation.sentences,
            model_version,
        }
    }

    /// Re-checks the identity on the exact numbers about to be sent.
    pub fn check_local_accuracy(&self) -> Result<(), String> {
        let gap = self.attribution.local_accuracy_gap();
        if gap <= LOCAL_ACCURACY_TOL {
            Ok(())
        } else {
            Err(format!("attribution for {} violates local accuracy by {gap:e}", self.student))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeItemView {
    pub id: String,
    pub kind: ItemKind,
    pub max_points: u32,
    pub release_checkpoint: Option<u8>,
    pub released: bool,
    /// `None` until released, or when released but not yet graded.
    pub earned: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradesView {
    pub student: String,
    pub checkpoint: u8,
    pub items: Vec<GradeItemView>,
    pub earned_total: u32,
    pub released_max_total: u32,
    pub max_total: u32,
    /// `earned_total / max_total`.
    pub progress: f64,
}

impl GradesView {
    pub fn new(cohort: &Cohort, scheme: &GradeScheme, s: &StudentId, checkpoint: u8) -> Self {
        let earned = cohort.grades.get(s);
        let items: Vec<GradeItemView> = scheme
            .items
            .iter()
            .map(|i| {
                let released = i.released_by(checkpoint);
                GradeItemView {
                    id: i.id.clone(),
                    kind: i.kind,
                    max_points: i.max_points,
                    release_checkpoint: i.release_checkpoint,
                    released,
                    earned: released.then(|| earned.and_then(|g| g.get(&i.id).copied())).flatten(),
                }
            })
            .collect();
        let earned_total = items.iter().filter_map(|i| i.earned).sum();
        let released_max_total = items.iter().filter(|i| i.released).map(|i| i.max_points).sum();
        let max_total: u32 = scheme.items.iter().map(|i| i.max_points).sum();
        GradesView {
            student: s.to_string(),
            checkpoint,
            items,
            earned_total,
            released_max_total,
            max_total,
            progress: f64::from(earned_total) / f64::from(max_total),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorView {
    pub student: String,
    pub checkpoint: u8,
    #[serde(flatten)]
    pub stats: BehaviorStats,
}

impl BehaviorView {
    /// Activity from the semester start up to the checkpoint cutoff.
    pub fn new(cohort: &Cohort, s: &StudentId, cp: &Checkpoint) -> gradecast_core::Result<Self> {
        let window = DateRange::new(cohort.semester_start(), cp.cutoff)?;
        Ok(BehaviorView {
            student: s.to_string(),
            checkpoint: cp.index,
            stats: behavior_stats(cohort, s, window)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileView {
    pub student: String,
    pub checkpoint: u8,
    pub percentile: f64,
}

impl PercentileView {
    pub fn new(cohort: &Cohort, scheme: &GradeScheme, s: &StudentId, cp: &Checkpoint) -> gradecast_core::Result<Self> {
        Ok(PercentileView {
            student: s.to_string(),
            checkpoint: cp.index,
            percentile: percentile_of(cohort, s, cp, scheme)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffortBucketView {
    pub label: String,
    pub low_hours: u32,
    pub high_hours: Option<u32>,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffortView {
    pub course_year: String,
    pub respondents: u32,
    pub buckets: Vec<EffortBucketView>,
}

impl From<&EffortSurvey> for EffortView {
    fn from(s: &EffortSurvey) -> Self {
        EffortView {
            course_year: s.course_year.clone(),
            respondents: s.buckets.iter().map(|b| b.count).sum(),
            buckets: s
                .buckets
                .iter()
                .map(|b| EffortBucketView {
                    label: b.label(),
                    low_hours: b.low_hours,
                    high_hours: b.high_hours,
                    count: b.count,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResponse {
    pub new_version: u64,
}
