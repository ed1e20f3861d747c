//! Versioned, atomically swapped model snapshots.
//!
//! Readers clone an `Arc<Snapshot>` and never block on training; a
//! retrain builds a complete new snapshot off to the side, persists the
//! models and only then replaces the pointer. Swaps are serialized.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use gradecast_core::explain::ShapleyBudget;
use gradecast_core::features::{cohort_trends, extract_features, FeatureMatrix, TrendSeries};
use gradecast_core::ingest::{load_cohort_dir, Cohort};
use gradecast_core::pipeline::{
    load_models, model_file_name, predict_student_with, save_models, train_all, with_workers, AssessmentCalendar,
    CheckpointModel, PipelineParams, MODEL_FORMAT_VERSION,
};
use gradecast_core::grading::CHECKPOINTS;
use gradecast_core::{GradeScheme, StudentId};

use crate::config::ServiceConfig;
use crate::views::PredictionView;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error(transparent)]
    Core(#[from] gradecast_core::Error),
    /// Stored models do not fit the configured scheme, calendar or cohort.
    #[error("model mismatch: {0}")]
    Mismatch(String),
}

pub type StoreResult<T> = Result<T, StoreError>;

/// What a store needs besides its data.
#[derive(Debug, Clone)]
pub struct StoreSettings {
    pub scheme: GradeScheme,
    pub params: PipelineParams,
    pub cohort_dir: PathBuf,
    pub model_dir: PathBuf,
    pub cutoffs: Vec<chrono::NaiveDate>,
    pub workers: usize,
    pub top_k: usize,
}

impl StoreSettings {
    pub fn from_config(c: &ServiceConfig) -> Self {
        StoreSettings {
            scheme: c.scheme.clone(),
            params: c.pipeline_params(),
            cohort_dir: c.data.cohort_dir.clone(),
            model_dir: c.data.model_dir.clone(),
            cutoffs: c.checkpoint_cutoffs.clone(),
            workers: c.workers,
            top_k: c.top_k,
        }
    }

    pub fn calendar(&self, cohort: &Cohort) -> gradecast_core::Result<AssessmentCalendar> {
        if self.cutoffs.is_empty() {
            AssessmentCalendar::monthly(&self.scheme, cohort.semester_start())
        } else {
            AssessmentCalendar::with_cutoffs(&self.scheme, &self.cutoffs)
        }
    }

    pub fn load_cohort(&self) -> gradecast_core::Result<Cohort> {
        let loaded = load_cohort_dir(&self.cohort_dir, &self.scheme)?;
        if loaded.dropped_events > 0 {
            tracing::info!(dropped = loaded.dropped_events, "events outside the cohort window were dropped");
        }
        Ok(loaded.cohort)
    }
}

/// One immutable, internally consistent set of models and the cohort they
/// serve.
#[derive(Debug)]
pub struct Snapshot {
    pub version: u64,
    pub cohort: Arc<Cohort>,
    pub calendar: AssessmentCalendar,
    /// Index `cp - 1`.
    pub models: Vec<CheckpointModel>,
    /// Serving-time feature rows, index `cp - 1`.
    pub features: Vec<FeatureMatrix>,
    /// `None` when the cohort has no final outcomes yet.
    pub trends: Option<TrendSeries>,
    cache: Mutex<HashMap<(StudentId, u8), Arc<PredictionView>>>,
}

impl Snapshot {
    pub fn build(
        version: u64,
        cohort: Arc<Cohort>,
        calendar: AssessmentCalendar,
        models: Vec<CheckpointModel>,
        scheme: &GradeScheme,
    ) -> StoreResult<Self> {
        calendar.validate(scheme)?;
        if models.len() != usize::from(CHECKPOINTS) {
            return Err(StoreError::Mismatch(format!("expected {CHECKPOINTS} models, got {}", models.len())));
        }
        let mut features = Vec::with_capacity(models.len());
        for (m, cp) in models.iter().zip(&calendar.checkpoints) {
            if m.format_version != MODEL_FORMAT_VERSION {
                return Err(StoreError::Mismatch(format!(
                    "checkpoint {} model has format {}, this build reads {MODEL_FORMAT_VERSION}",
                    cp.index, m.format_version
                )));
            }
            if &m.checkpoint != cp {
                return Err(StoreError::Mismatch(format!(
                    "checkpoint {} model was trained for cutoff {}, calendar says {}",
                    cp.index, m.checkpoint.cutoff, cp.cutoff
                )));
            }
            let matrix = extract_features(&cohort, cp, scheme)?;
            if matrix.schema != m.schema {
                return Err(StoreError::Mismatch(format!(
                    "checkpoint {} feature schema differs from the cohort's ({} vs {} columns)",
                    cp.index,
                    m.schema.len(),
                    matrix.schema.len()
                )));
            }
            features.push(matrix);
        }
        let trends = if cohort.has_all_outcomes() {
            Some(cohort_trends(&cohort)?)
        } else {
            None
        };
        Ok(Snapshot {
            version,
            cohort,
            calendar,
            models,
            features,
            trends,
            cache: Mutex::new(HashMap::new()),
        })
    }

    /// `cp` must already be range-checked.
    pub fn model(&self, cp: u8) -> &CheckpointModel {
        &self.models[usize::from(cp) - 1]
    }

    pub fn knows(&self, s: &StudentId) -> bool {
        self.cohort.roster.contains_key(s)
    }

    /// Uncached prediction and explanation.
    pub fn compute_prediction(
        &self,
        s: &StudentId,
        cp: u8,
        top_k: usize,
        budget: ShapleyBudget,
    ) -> gradecast_core::Result<PredictionView> {
        let model = self.model(cp);
        let x = self.features[usize::from(cp) - 1].row(s)?;
        let p = predict_student_with(model, s, x, budget)?;
        Ok(PredictionView::new(&p, model, top_k, self.version))
    }

    /// Cached per (student, checkpoint) for the lifetime of this snapshot.
    pub fn prediction(
        &self,
        s: &StudentId,
        cp: u8,
        top_k: usize,
        budget: ShapleyBudget,
    ) -> gradecast_core::Result<Arc<PredictionView>> {
        let key = (s.clone(), cp);
        if let Some(hit) = self.cache.lock().expect("cache poisoned").get(&key) {
            return Ok(Arc::clone(hit));
        }
        let view = Arc::new(self.compute_prediction(s, cp, top_k, budget)?);
        self.cache
            .lock()
            .expect("cache poisoned")
            .insert(key, Arc::clone(&view));
        Ok(view)
    }

    pub fn cached_predictions(&self) -> usize {
        self.cache.lock().expect("cache poisoned").len()
    }
}

pub struct ModelStore {
    settings: StoreSettings,
    current: RwLock<Arc<Snapshot>>,
    train_lock: Mutex<()>,
}

impl std::fmt::Debug for ModelStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelStore").field("version", &self.version()).finish()
    }
}

fn models_present(dir: &Path) -> usize {
    (1..=CHECKPOINTS)
        .filter(|&cp| dir.join(model_file_name(cp)).exists())
        .count()
}

impl ModelStore {
    /// Loads the cohort and the models on disk, training and persisting a
    /// fresh set when the model directory is empty. Stored models that do
    /// not match the cohort or configuration are an error.
    pub fn open(settings: StoreSettings) -> StoreResult<Self> {
        let cohort = Arc::new(settings.load_cohort()?);
        let calendar = settings.calendar(&cohort)?;
        let models = match models_present(&settings.model_dir) {
            0 => {
                tracing::info!(dir = %settings.model_dir.display(), "no stored models; training");
                let models = Self::train(&settings, &cohort, &calendar)?;
                save_models(&settings.model_dir, &models)?;
                models
            }
            n if n == usize::from(CHECKPOINTS) => load_models(&settings.model_dir)?,
            n => {
                return Err(StoreError::Mismatch(format!(
                    "{} holds {n} of {CHECKPOINTS} model files",
                    settings.model_dir.display()
                )))
            }
        };
        let snapshot = Snapshot::build(1, cohort, calendar, models, &settings.scheme)?;
        Ok(Self::with_snapshot(settings, snapshot))
    }

    pub fn with_snapshot(settings: StoreSettings, snapshot: Snapshot) -> Self {
        ModelStore {
            settings,
            current: RwLock::new(Arc::new(snapshot)),
            train_lock: Mutex::new(()),
        }
    }

    pub fn settings(&self) -> &StoreSettings {
        &self.settings
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        Arc::clone(&self.current.read().expect("snapshot lock poisoned"))
    }

    pub fn version(&self) -> u64 {
        self.snapshot().version
    }

    fn train(settings: &StoreSettings, cohort: &Cohort, calendar: &AssessmentCalendar) -> StoreResult<Vec<CheckpointModel>> {
        Ok(with_workers(settings.workers, || {
            train_all(cohort, calendar, &settings.scheme, &settings.params)
        })??)
    }

    /// Trains all checkpoint models on `cohort`, persists them and swaps
    /// them in. Blocks the calling thread; concurrent calls run one after
    /// the other. On error the serving snapshot and the files on disk are
    /// left as they were.
    pub fn train_and_swap(&self, cohort: Cohort) -> StoreResult<u64> {
        let _guard = self.train_lock.lock().unwrap_or_else(|e| e.into_inner());
        let cohort = Arc::new(cohort);
        let calendar = self.settings.calendar(&cohort)?;
        let models = Self::train(&self.settings, &cohort, &calendar)?;
        let version = self.version() + 1;
        let snapshot = Snapshot::build(version, cohort, calendar, models, &self.settings.scheme)?;
        self.persist(&snapshot.models)?;
        *self.current.write().expect("snapshot lock poisoned") = Arc::new(snapshot);
        tracing::info!(version, "model snapshot swapped");
        Ok(version)
    }

    /// Re-ingests the configured cohort directory and retrains.
    pub fn retrain_from_disk(&self) -> StoreResult<u64> {
        let cohort = self.settings.load_cohort()?;
        self.train_and_swap(cohort)
    }

    /// Writes into a staging directory first so a failed write never
    /// clobbers the serving files; each final rename is atomic.
    fn persist(&self, models: &[CheckpointModel]) -> StoreResult<()> {
        let dir = &self.settings.model_dir;
        let staging = dir.join(".staging");
        if staging.exists() {
            std::fs::remove_dir_all(&staging).map_err(gradecast_core::Error::from)?;
        }
        let written = save_models(&staging, models)?;
        for path in written {
            let name = path.file_name().expect("model file name");
            std::fs::rename(&path, dir.join(name)).map_err(gradecast_core::Error::from)?;
        }
        std::fs::remove_dir(&staging).map_err(gradecast_core::Error::from)?;
        Ok(())
    }
}
