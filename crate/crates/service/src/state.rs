//! Shared service state: the served snapshot, matrix versions, feedback and
//! the retrain job table.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use smoothdate_core::datastore::{
    feedback_append, feedback_load, load_dataset, partition, DatasetFormat,
};
use smoothdate_core::model::{Trainer, TrainingConfig};
use smoothdate_core::pipeline::build_index;
use smoothdate_core::{
    DocumentRecord, LossConfig, ProjectionModel, RelevanceMatrix, Result as CoreResult,
    RetrievalIndex,
};

use crate::config::Config;
use crate::error::{ApiError, ServiceError};

/// What queries are answered from. Replaced wholesale, never mutated.
#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    pub model: Option<Arc<ProjectionModel>>,
    pub model_version: Option<String>,
    pub previous_model_version: Option<String>,
    /// Matrix version the served model was trained with, when known.
    pub matrix_version: Option<String>,
    pub index: Arc<RetrievalIndex>,
}

impl Snapshot {
    pub fn require_model(&self) -> Result<&ProjectionModel, ApiError> {
        self.model.as_deref().ok_or_else(ApiError::no_model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixVersionInfo {
    pub version: String,
    /// Version this one was derived from by an edit.
    pub parent: Option<String>,
    pub provenance: smoothdate_core::Provenance,
    pub years: usize,
}

/// Append-only list of matrix versions; the last one is current.
#[derive(Debug, Default)]
pub struct MatrixStore {
    versions: Vec<(MatrixVersionInfo, Arc<RelevanceMatrix>)>,
}

impl MatrixStore {
    pub fn push(&mut self, matrix: RelevanceMatrix, parent: Option<String>) -> String {
        let version = format!("v{}", self.versions.len());
        let info = MatrixVersionInfo {
            version: version.clone(),
            parent,
            provenance: matrix.provenance(),
            years: matrix.len(),
        };
        self.versions.push((info, Arc::new(matrix)));
        version
    }

    pub fn current(&self) -> (String, Arc<RelevanceMatrix>) {
        let (info, m) = self.versions.last().expect("store is never empty");
        (info.version.clone(), m.clone())
    }

    pub fn get(&self, version: &str) -> Option<Arc<RelevanceMatrix>> {
        self.versions
            .iter()
            .find(|(info, _)| info.version == version)
            .map(|(_, m)| m.clone())
    }

    pub fn list(&self) -> Vec<MatrixVersionInfo> {
        self.versions.iter().map(|(info, _)| info.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running {
        iteration: usize,
        loss: Option<f64>,
    },
    Done {
        model_version: String,
        iterations: usize,
        final_loss: f64,
        losses: Vec<f64>,
        /// Feedback records left out because their year is not in the matrix.
        skipped_records: usize,
    },
    Failed {
        reason: String,
        iteration: Option<usize>,
    },
}

impl JobState {
    pub fn is_terminal(&self) -> bool {
        matches!(self, JobState::Done { .. } | JobState::Failed { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            JobState::Queued => "queued",
            JobState::Running { .. } => "running",
            JobState::Done { .. } => "done",
            JobState::Failed { .. } => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainJob {
    pub job_id: String,
    pub state: JobState,
    /// Distinct states entered so far, in order.
    pub history: Vec<String>,
    pub config: TrainingConfig,
    pub tau: f64,
    pub warm_start: bool,
    pub matrix_version: String,
}

impl RetrainJob {
    fn enter(&mut self, state: JobState) {
        if self.history.last().map(String::as_str) != Some(state.name()) {
            self.history.push(state.name().to_string());
        }
        self.state = state;
    }
}

#[derive(Debug, Default)]
pub struct JobTable {
    jobs: BTreeMap<String, RetrainJob>,
    active: Option<String>,
    issued: usize,
}

impl JobTable {
    pub fn get(&self, id: &str) -> Option<&RetrainJob> {
        self.jobs.get(id)
    }
}

/// Feedback records held in memory, mirroring the journal (last write wins).
#[derive(Debug, Default)]
pub struct FeedbackState {
    records: BTreeMap<String, DocumentRecord>,
}

impl FeedbackState {
    pub fn records(&self) -> Vec<DocumentRecord> {
        self.records.values().cloned().collect()
    }
}

pub struct AppState {
    pub config: Config,
    snapshot: RwLock<Arc<Snapshot>>,
    pub matrices: RwLock<MatrixStore>,
    pub jobs: Mutex<JobTable>,
    /// Serializes index mutations (feedback upserts and retrain swaps).
    feedback: Mutex<FeedbackState>,
    feedback_path: PathBuf,
    pub train: Vec<DocumentRecord>,
    pub test: Vec<DocumentRecord>,
    /// Feature dimension of the dataset, when one is loaded.
    pub feature_dim: Option<usize>,
    model_versions_issued: Mutex<usize>,
}

pub type SharedState = Arc<AppState>;

/// Training inputs for a retrain job.
pub struct RetrainPlan {
    pub config: TrainingConfig,
    pub loss: LossConfig,
    pub warm_start: bool,
    pub matrix_version: String,
}

impl AppState {
    /// Loads dataset, checkpoint, matrix and feedback journal per `config`.
    pub fn load(config: Config) -> Result<SharedState, ServiceError> {
        let data = &config.data;
        let (train, test) = match &data.dataset {
            Some(p) => {
                let path = data.resolve(p);
                let (records, report) =
                    load_dataset(&path, DatasetFormat::from_path(&path), false)?;
                for w in &report.warnings {
                    log::warn!("{}: {w}", path.display());
                }
                let split = partition(&records, data.test_fraction, data.split_seed)?;
                (split.train, split.test)
            }
            None => (Vec::new(), Vec::new()),
        };
        let model = match &data.checkpoint {
            Some(p) => Some(ProjectionModel::load(data.resolve(p))?),
            None => None,
        };
        let matrix = match &data.matrix {
            Some(p) => RelevanceMatrix::load(data.resolve(p))?,
            None => {
                let mut years: Vec<i32> =
                    train.iter().chain(&test).filter_map(|r| r.year).collect();
                years.sort_unstable();
                years.dedup();
                if years.is_empty() {
                    return Err(ServiceError::Config(crate::error::ConfigError::Invalid {
                        key: "data.matrix".into(),
                        message: "no matrix file and no labeled dataset to derive years from"
                            .into(),
                    }));
                }
                RelevanceMatrix::build(&years, &config.relevance)?
            }
        };
        let feedback_path = data.resolve(&data.feedback);
        let store = feedback_load(&feedback_path)?;
        for w in &store.warnings {
            log::warn!("{}: {w}", feedback_path.display());
        }
        Self::from_parts(
            config,
            train,
            test,
            model,
            matrix,
            store.records,
            feedback_path,
        )
    }

    /// Assembles state from in-memory parts.
    pub fn from_parts(
        config: Config,
        train: Vec<DocumentRecord>,
        test: Vec<DocumentRecord>,
        model: Option<ProjectionModel>,
        matrix: RelevanceMatrix,
        feedback: Vec<DocumentRecord>,
        feedback_path: PathBuf,
    ) -> Result<SharedState, ServiceError> {
        let feature_dim = train
            .iter()
            .chain(&test)
            .chain(&feedback)
            .map(|r| r.features.len())
            .next()
            .or(model.as_ref().map(ProjectionModel::input_dim));
        let mut matrices = MatrixStore::default();
        matrices.push(matrix, None);
        let feedback = FeedbackState {
            records: feedback
                .into_iter()
                .map(|r| (r.doc_id.clone(), r))
                .collect(),
        };
        let state = AppState {
            config,
            snapshot: RwLock::new(Arc::new(Snapshot::default())),
            matrices: RwLock::new(matrices),
            jobs: Mutex::new(JobTable::default()),
            feedback: Mutex::new(FeedbackState::default()),
            feedback_path,
            train,
            test,
            feature_dim,
            model_versions_issued: Mutex::new(0),
        };
        if let Some(model) = model {
            if let Some(dim) = state.feature_dim {
                if dim != model.input_dim() {
                    return Err(ServiceError::Core(smoothdate_core::Error::InvalidInput(
                        format!(
                            "checkpoint expects {} features, dataset has {dim}",
                            model.input_dim()
                        ),
                    )));
                }
            }
            let snapshot = state.assemble(model, None, &feedback.records())?;
            *state.snapshot.write().expect("snapshot lock") = Arc::new(snapshot);
        }
        *state.feedback.lock().expect("feedback lock") = feedback;
        Ok(Arc::new(state))
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    fn next_model_version(&self) -> String {
        let mut n = self.model_versions_issued.lock().expect("version lock");
        let v = format!("model-{n}");
        *n += 1;
        v
    }

    /// Builds a snapshot for `model` over train + `feedback`.
    fn assemble(
        &self,
        model: ProjectionModel,
        matrix_version: Option<String>,
        feedback: &[DocumentRecord],
    ) -> CoreResult<Snapshot> {
        let index = build_index(&model, &self.train, feedback)?;
        let previous = self.snapshot().model_version.clone();
        Ok(Snapshot {
            model: Some(Arc::new(model)),
            model_version: Some(self.next_model_version()),
            previous_model_version: previous,
            matrix_version,
            index: Arc::new(index),
        })
    }

    /// Journals `record` and, when a model is served, upserts its embedding.
    /// Returns the index size afterwards.
    pub fn add_feedback(&self, record: DocumentRecord) -> Result<usize, ApiError> {
        record.validate()?;
        if record.year.is_none() {
            return Err(ApiError::unprocessable(
                "invalid_input",
                "feedback needs a year",
            ));
        }
        if let Some(dim) = self.feature_dim {
            if record.features.len() != dim {
                return Err(ApiError::unprocessable(
                    "dimension_mismatch",
                    format!("expected {dim} features, found {}", record.features.len()),
                ));
            }
        }
        let mut feedback = self.feedback.lock().expect("feedback lock");
        let current = self.snapshot();
        let embedded = match &current.model {
            Some(model) => Some(smoothdate_core::pipeline::embed_records(
                model,
                std::slice::from_ref(&record),
                smoothdate_core::Source::UserFeedback,
            )?),
            None => None,
        };
        feedback_append(&self.feedback_path, std::slice::from_ref(&record))?;
        feedback.records.insert(record.doc_id.clone(), record);
        let Some(docs) = embedded else {
            return Ok(current.index.len());
        };
        let mut index = (*current.index).clone();
        index.add(docs)?;
        let size = index.len();
        let next = Snapshot {
            index: Arc::new(index),
            ..(*current).clone()
        };
        *self.snapshot.write().expect("snapshot lock") = Arc::new(next);
        Ok(size)
    }

    /// Registers a queued job, enforcing the single-active-job rule.
    pub fn submit_job(&self, plan: &RetrainPlan) -> Result<String, ApiError> {
        let mut jobs = self.jobs.lock().expect("jobs lock");
        if let Some(active) = &jobs.active {
            return Err(ApiError::conflict(
                "job_running",
                format!("retrain job {active} has not finished"),
            )
            .with_details(serde_json::json!({ "job_id": active })));
        }
        let job_id = format!("job-{}", jobs.issued);
        jobs.issued += 1;
        let job = RetrainJob {
            job_id: job_id.clone(),
            state: JobState::Queued,
            history: vec![JobState::Queued.name().to_string()],
            config: plan.config.clone(),
            tau: plan.loss.tau,
            warm_start: plan.warm_start,
            matrix_version: plan.matrix_version.clone(),
        };
        jobs.jobs.insert(job_id.clone(), job);
        jobs.active = Some(job_id.clone());
        Ok(job_id)
    }

    fn update_job(&self, job_id: &str, state: JobState) {
        let mut jobs = self.jobs.lock().expect("jobs lock");
        let terminal = state.is_terminal();
        if let Some(job) = jobs.jobs.get_mut(job_id) {
            job.enter(state);
        }
        if terminal && jobs.active.as_deref() == Some(job_id) {
            jobs.active = None;
        }
    }

    /// Runs a submitted job to completion on the calling thread, swapping the
    /// served snapshot on success.
    pub fn run_job(&self, job_id: &str, plan: RetrainPlan) {
        let outcome = self.train_and_swap(job_id, &plan);
        let state = match outcome {
            Ok(done) => done,
            Err((reason, iteration)) => {
                log::error!("retrain {job_id} failed: {reason}");
                JobState::Failed { reason, iteration }
            }
        };
        self.update_job(job_id, state);
    }

    fn train_and_swap(
        &self,
        job_id: &str,
        plan: &RetrainPlan,
    ) -> Result<JobState, (String, Option<usize>)> {
        let fail = |e: smoothdate_core::Error| {
            let iteration = match &e {
                smoothdate_core::Error::NumericFailure { iteration, .. } => Some(*iteration),
                _ => None,
            };
            (e.to_string(), iteration)
        };
        let matrix = self
            .matrices
            .read()
            .expect("matrix lock")
            .get(&plan.matrix_version)
            .ok_or_else(|| {
                (
                    format!("unknown matrix version {}", plan.matrix_version),
                    None,
                )
            })?;
        let feedback = self.feedback.lock().expect("feedback lock").records();
        let mut dataset: Vec<DocumentRecord> = self.train.clone();
        let mut skipped = 0;
        for r in &feedback {
            match r.year {
                Some(y) if matrix.contains_year(y) => dataset.push(r.clone()),
                _ => skipped += 1,
            }
        }
        if skipped > 0 {
            log::warn!("retrain {job_id}: {skipped} feedback record(s) outside the matrix years");
        }
        let input_dim = self
            .feature_dim
            .ok_or_else(|| ("no training data is loaded".to_string(), None))?;
        let current = self.snapshot();
        let model = match (&current.model, plan.warm_start) {
            (Some(m), true) => (**m).clone(),
            _ => ProjectionModel::init(
                &self.config.model.layer_dims(input_dim),
                self.config.model.activation,
                self.config.model.seed,
            )
            .map_err(fail)?,
        };

        self.update_job(
            job_id,
            JobState::Running {
                iteration: 0,
                loss: None,
            },
        );
        let mut trainer =
            Trainer::new(model, &dataset, &matrix, plan.config.clone(), plan.loss).map_err(fail)?;
        while !trainer.is_finished() {
            let loss = trainer.step().map_err(fail)?;
            self.update_job(
                job_id,
                JobState::Running {
                    iteration: trainer.iterations_done(),
                    loss: Some(loss),
                },
            );
        }
        let (model, report) = trainer.finish();

        // Holding the feedback lock makes the swap include every label
        // accepted so far, embedded with the new model.
        let feedback = self.feedback.lock().expect("feedback lock");
        let next = self
            .assemble(
                model,
                Some(plan.matrix_version.clone()),
                &feedback.records(),
            )
            .map_err(fail)?;
        let model_version = next.model_version.clone().expect("assembled with a model");
        *self.snapshot.write().expect("snapshot lock") = Arc::new(next);
        drop(feedback);
        Ok(JobState::Done {
            model_version,
            iterations: report.losses.len(),
            final_loss: report.losses.last().copied().unwrap_or(f64::NAN),
            losses: report.losses,
            skipped_records: skipped,
        })
    }
}
