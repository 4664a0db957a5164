//! Persistent FIFO job queue executed by a fixed number of device slots.
//!
//! Each job lives in `<workspace>/jobs/<id>/` with `job.json` (the record),
//! `inputs/` (decoded request images) and `artifacts/` (run outputs). The
//! in-memory table is the source of truth while the service runs; the record
//! file is rewritten on every state change so a restart can rebuild it.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use omnitext_core::pipeline::TaskKind;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};
use uuid::Uuid;

use crate::config::ServiceConfig;
use crate::error::{ServiceError, ServiceResult};
use crate::imaging::ImageRef;
use crate::run::{build_inputs, execute, open_session, InputImages, JobSpec, RunObserver, RunParams, ATTENTION_DIR};

const RECORD_FILE: &str = "job.json";
const INPUTS_DIR: &str = "inputs";
const ARTIFACTS_DIR: &str = "artifacts";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn is_finished(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: String,
    /// Submission order.
    pub seq: u64,
    pub spec: JobSpec,
    pub state: JobState,
    /// Fraction of sampling steps completed.
    pub progress: f64,
    pub artifacts: Vec<String>,
    pub error: Option<String>,
    /// Seconds per phase.
    pub timings: BTreeMap<String, f64>,
    /// Logical clock of the last result or snapshot read, for retention.
    pub last_access: u64,
}

/// Body of `POST /jobs`.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobRequest {
    pub task: TaskKind,
    pub image: ImageRef,
    pub mask: ImageRef,
    #[serde(default)]
    pub removal_mask: Option<ImageRef>,
    #[serde(default, alias = "ref")]
    pub reference: Option<ImageRef>,
    #[serde(default, alias = "ref_mask")]
    pub reference_mask: Option<ImageRef>,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub source_text: Option<String>,
    #[serde(default)]
    pub params: RunParams,
}

impl JobRequest {
    pub fn spec(&self) -> JobSpec {
        JobSpec {
            task: self.task,
            text: self.text.clone(),
            source_text: self.source_text.clone(),
            params: self.params.clone(),
        }
    }

    pub fn images(&self, workspace: &Path) -> ServiceResult<InputImages> {
        let gray = |r: &Option<ImageRef>| r.as_ref().map(|r| r.load(workspace).map(|i| i.to_luma8())).transpose();
        Ok(InputImages {
            image: self.image.load(workspace)?.to_rgb8(),
            mask: self.mask.load(workspace)?.to_luma8(),
            removal_mask: gray(&self.removal_mask)?,
            reference: self.reference.as_ref().map(|r| r.load(workspace).map(|i| i.to_rgb8())).transpose()?,
            reference_mask: gray(&self.reference_mask)?,
        })
    }
}

/// Why a result cannot be returned.
#[derive(Debug)]
pub enum ResultError {
    NotFound,
    NotReady(JobRecord),
}

struct Inner {
    jobs: HashMap<String, JobRecord>,
    queue: VecDeque<String>,
    next_seq: u64,
    clock: u64,
    shutdown: bool,
}

struct Shared {
    config: ServiceConfig,
    inner: Mutex<Inner>,
    wake: Condvar,
    workers: Mutex<Vec<JoinHandle<()>>>,
}

#[derive(Clone)]
pub struct JobManager {
    shared: Arc<Shared>,
}

impl JobManager {
    /// Loads persisted jobs without starting workers. Jobs that were running
    /// when the previous process stopped are queued again with their
    /// artifacts removed.
    pub fn open(config: ServiceConfig) -> ServiceResult<Self> {
        config.validate()?;
        let root = config.jobs_dir();
        std::fs::create_dir_all(&root)?;
        let mut jobs = HashMap::new();
        for entry in std::fs::read_dir(&root)? {
            let dir = entry?.path();
            let file = dir.join(RECORD_FILE);
            let record: JobRecord = match std::fs::read(&file).map_err(ServiceError::from).and_then(|b| Ok(serde_json::from_slice(&b)?)) {
                Ok(r) => r,
                Err(e) => {
                    warn!("skipping {}: {e}", dir.display());
                    continue;
                }
            };
            jobs.insert(record.id.clone(), record);
        }
        let mut requeue: Vec<&mut JobRecord> = jobs.values_mut().filter(|r| !r.state.is_finished()).collect();
        requeue.sort_by_key(|r| r.seq);
        let mut queue = VecDeque::new();
        for record in requeue {
            if record.state == JobState::Running {
                info!("requeueing interrupted job {}", record.id);
                let artifacts = root.join(&record.id).join(ARTIFACTS_DIR);
                if artifacts.exists() {
                    std::fs::remove_dir_all(&artifacts)?;
                }
                record.state = JobState::Queued;
                record.progress = 0.0;
                record.artifacts.clear();
                record.timings.clear();
                write_record(&root, record)?;
            }
            queue.push_back(record.id.clone());
        }
        let next_seq = jobs.values().map(|r| r.seq + 1).max().unwrap_or(0);
        let clock = jobs.values().map(|r| r.last_access).max().unwrap_or(0);
        let manager = Self {
            shared: Arc::new(Shared {
                config,
                inner: Mutex::new(Inner {
                    jobs,
                    queue,
                    next_seq,
                    clock,
                    shutdown: false,
                }),
                wake: Condvar::new(),
                workers: Mutex::new(Vec::new()),
            }),
        };
        manager.prune(&mut manager.lock())?;
        Ok(manager)
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.shared.config
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.shared.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn root(&self) -> PathBuf {
        self.shared.config.jobs_dir()
    }

    pub fn job_dir(&self, id: &str) -> PathBuf {
        self.root().join(id)
    }

    pub fn artifacts_dir(&self, id: &str) -> PathBuf {
        self.job_dir(id).join(ARTIFACTS_DIR)
    }

    /// Starts one worker thread per device slot.
    pub fn start(&self) {
        let mut workers = self.shared.workers.lock().unwrap_or_else(|p| p.into_inner());
        for slot in 0..self.shared.config.device_slots {
            let this = self.clone();
            let handle = std::thread::Builder::new()
                .name(format!("omnitext-slot-{slot}"))
                .spawn(move || this.worker_loop())
                .expect("spawning a worker thread");
            workers.push(handle);
        }
    }

    /// Stops the workers after their current job and waits for them.
    pub fn shutdown(&self) {
        self.lock().shutdown = true;
        self.shared.wake.notify_all();
        let handles: Vec<_> = self.shared.workers.lock().unwrap_or_else(|p| p.into_inner()).drain(..).collect();
        for h in handles {
            let _ = h.join();
        }
    }

    /// Validates and enqueues a request.
    pub fn submit(&self, request: &JobRequest) -> ServiceResult<String> {
        let spec = request.spec();
        let images = request.images(&self.shared.config.workspace)?;
        build_inputs(&spec, images.clone(), &self.shared.config)?;
        let id = Uuid::new_v4().simple().to_string();
        images.save(&self.job_dir(&id).join(INPUTS_DIR))?;
        let mut inner = self.lock();
        let record = JobRecord {
            id: id.clone(),
            seq: inner.next_seq,
            spec,
            state: JobState::Queued,
            progress: 0.0,
            artifacts: Vec::new(),
            error: None,
            timings: BTreeMap::new(),
            last_access: inner.clock,
        };
        inner.next_seq += 1;
        write_record(&self.root(), &record)?;
        inner.jobs.insert(id.clone(), record);
        inner.queue.push_back(id.clone());
        drop(inner);
        self.shared.wake.notify_one();
        Ok(id)
    }

    pub fn status(&self, id: &str) -> Option<JobRecord> {
        self.lock().jobs.get(id).cloned()
    }

    /// All jobs in submission order.
    pub fn list(&self) -> Vec<JobRecord> {
        let mut all: Vec<JobRecord> = self.lock().jobs.values().cloned().collect();
        all.sort_by_key(|r| r.seq);
        all
    }

    /// Ids waiting to run, in start order.
    pub fn queued(&self) -> Vec<String> {
        self.lock().queue.iter().cloned().collect()
    }

    /// The record of a finished job; marks it as recently used.
    pub fn result(&self, id: &str) -> Result<JobRecord, ResultError> {
        let mut inner = self.lock();
        let record = inner.jobs.get(id).cloned().ok_or(ResultError::NotFound)?;
        if record.state != JobState::Done {
            return Err(ResultError::NotReady(record));
        }
        Ok(self.touch(&mut inner, id).unwrap_or(record))
    }

    /// Attention heatmaps written at a global sampling step, as
    /// `(file name, png bytes)` sorted by name.
    pub fn attention(&self, id: &str, step: usize) -> ServiceResult<Vec<(String, Vec<u8>)>> {
        {
            let mut inner = self.lock();
            if !inner.jobs.contains_key(id) {
                return Err(ServiceError::NotFound(format!("job {id}")));
            }
            self.touch(&mut inner, id);
        }
        let dir = self.artifacts_dir(id).join(ATTENTION_DIR).join(step.to_string());
        if !dir.is_dir() {
            return Err(ServiceError::NotFound(format!("no attention snapshot for step {step}")));
        }
        let mut files = Vec::new();
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "png") {
                let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
                files.push((name, std::fs::read(&path)?));
            }
        }
        files.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(files)
    }

    /// Polls until the job finishes or `timeout` passes.
    pub fn wait(&self, id: &str, timeout: Duration) -> Option<JobRecord> {
        let start = Instant::now();
        loop {
            let record = self.status(id)?;
            if record.state.is_finished() || start.elapsed() >= timeout {
                return Some(record);
            }
            std::thread::sleep(Duration::from_millis(10));
        }
    }

    fn touch(&self, inner: &mut Inner, id: &str) -> Option<JobRecord> {
        inner.clock += 1;
        let clock = inner.clock;
        let record = inner.jobs.get_mut(id)?;
        record.last_access = clock;
        if let Err(e) = write_record(&self.root(), record) {
            warn!("persisting job {id}: {e}");
        }
        Some(record.clone())
    }

    /// Deletes the least recently used finished jobs beyond the retention
    /// limit.
    fn prune(&self, inner: &mut Inner) -> ServiceResult<()> {
        let mut finished: Vec<(u64, u64, String)> = inner
            .jobs
            .values()
            .filter(|r| r.state.is_finished())
            .map(|r| (r.last_access, r.seq, r.id.clone()))
            .collect();
        let keep = self.shared.config.retention;
        if finished.len() <= keep {
            return Ok(());
        }
        finished.sort();
        let excess = finished.len() - keep;
        for (_, _, id) in finished.into_iter().take(excess) {
            inner.jobs.remove(&id);
            let dir = self.job_dir(&id);
            if dir.exists() {
                std::fs::remove_dir_all(&dir)?;
            }
            info!("pruned job {id}");
        }
        Ok(())
    }

    fn update(&self, id: &str, f: impl FnOnce(&mut JobRecord)) {
        let mut inner = self.lock();
        if let Some(record) = inner.jobs.get_mut(id) {
            f(record);
            if let Err(e) = write_record(&self.root(), record) {
                warn!("persisting job {id}: {e}");
            }
        }
        if let Err(e) = self.prune(&mut inner) {
            warn!("pruning jobs: {e}");
        }
    }

    fn next_job(&self) -> Option<JobRecord> {
        let mut inner = self.lock();
        loop {
            if inner.shutdown {
                return None;
            }
            if let Some(id) = inner.queue.pop_front() {
                let Some(record) = inner.jobs.get_mut(&id) else { continue };
                record.state = JobState::Running;
                record.progress = 0.0;
                let snapshot = record.clone();
                if let Err(e) = write_record(&self.root(), &snapshot) {
                    warn!("persisting job {id}: {e}");
                }
                return Some(snapshot);
            }
            inner = self.shared.wake.wait(inner).unwrap_or_else(|p| p.into_inner());
        }
    }

    fn worker_loop(&self) {
        let session = open_session(&self.shared.config);
        while let Some(job) = self.next_job() {
            info!("running job {} ({})", job.id, job.spec.task);
            let outcome = match &session {
                Ok(session) => catch_unwind(AssertUnwindSafe(|| self.run_job(&job, session)))
                    .unwrap_or_else(|_| Err(ServiceError::Pipeline("job panicked".into()))),
                Err(e) => Err(ServiceError::Pipeline(format!("backbone unavailable: {e}"))),
            };
            match outcome {
                Ok((artifacts, timings)) => self.update(&job.id, |r| {
                    r.state = JobState::Done;
                    r.progress = 1.0;
                    r.artifacts = artifacts;
                    r.timings = timings;
                }),
                Err(e) => {
                    warn!("job {} failed: {e}", job.id);
                    self.update(&job.id, |r| {
                        r.state = JobState::Failed;
                        r.error = Some(e.to_string());
                    })
                }
            }
        }
    }

    fn run_job(
        &self,
        job: &JobRecord,
        session: &omnitext_core::pipeline::BackboneSession,
    ) -> ServiceResult<(Vec<String>, BTreeMap<String, f64>)> {
        let dir = self.job_dir(&job.id);
        let images = InputImages::load(&dir.join(INPUTS_DIR))?;
        let inputs = build_inputs(&job.spec, images, &self.shared.config)?;
        let out = dir.join(ARTIFACTS_DIR);
        if out.exists() {
            std::fs::remove_dir_all(&out)?;
        }
        let id = job.id.clone();
        let mut observer = RunObserver::new(job.spec.task, inputs.schedule.total_steps)
            .with_attention(out.join(ATTENTION_DIR), self.shared.config.attention_stride)
            .with_progress(|p| {
                if let Some(r) = self.lock().jobs.get_mut(&id) {
                    r.progress = p;
                }
            });
        let artifacts = execute(job.spec.task, &inputs, session, &out, &mut observer)?;
        Ok((artifacts, observer.timings()))
    }
}

fn write_record(root: &Path, record: &JobRecord) -> ServiceResult<()> {
    let dir = root.join(&record.id);
    std::fs::create_dir_all(&dir)?;
    let tmp = dir.join(format!("{RECORD_FILE}.tmp"));
    std::fs::write(&tmp, serde_json::to_vec_pretty(record)?)?;
    std::fs::rename(&tmp, dir.join(RECORD_FILE))?;
    Ok(())
}
