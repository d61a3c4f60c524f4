use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{validate_id, write_atomic, BlobRef, Clock, LockGuard, Result, StoreError, SystemClock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Generate,
    CompileRender,
    Score,
}

impl JobKind {
    pub const ALL: [JobKind; 3] = [JobKind::Generate, JobKind::CompileRender, JobKind::Score];

    fn dir_name(self) -> &'static str {
        match self {
            JobKind::Generate => "generate",
            JobKind::CompileRender => "compile_render",
            JobKind::Score => "score",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub job_id: String,
    pub kind: JobKind,
    pub payload_ref: BlobRef,
    /// Milliseconds since the Unix epoch; `None` until first leased.
    pub lease_deadline: Option<u64>,
    pub attempts: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Ready,
    Leased,
    Done,
}

#[derive(Debug, Serialize, Deserialize)]
struct JobRecord {
    job: Job,
    state: JobState,
    seq: u64,
}

/// At-least-once job queue with visibility timeouts.
///
/// State lives under `<root>/queue/`:
///
/// ```text
/// queue.lock              advisory lock serializing every mutation
/// seq                     monotonically increasing enqueue counter
/// jobs/<job_id>.json      canonical job record (ready / leased / done)
/// ready/<kind>/<seq>      FIFO index of leasable jobs, file body = job id
/// leased/<kind>/<job_id>  index of jobs with a live or expired lease
/// ```
///
/// Several handles (or processes) may share a root; every operation takes
/// the lock, so each is linearizable per job.
pub struct FsJobQueue {
    root: PathBuf,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for FsJobQueue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FsJobQueue").field("root", &self.root).finish()
    }
}

impl FsJobQueue {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        Self::with_clock(root, Arc::new(SystemClock))
    }

    pub fn with_clock(root: impl AsRef<Path>, clock: Arc<dyn Clock>) -> Result<Self> {
        let root = root.as_ref().join("queue");
        fs::create_dir_all(root.join("jobs"))?;
        for kind in JobKind::ALL {
            fs::create_dir_all(root.join("ready").join(kind.dir_name()))?;
            fs::create_dir_all(root.join("leased").join(kind.dir_name()))?;
        }
        Ok(FsJobQueue { root, clock })
    }

    fn lock(&self) -> Result<LockGuard> {
        LockGuard::acquire(&self.root.join("queue.lock"))
    }

    fn job_path(&self, job_id: &str) -> PathBuf {
        self.root.join("jobs").join(format!("{job_id}.json"))
    }

    fn ready_dir(&self, kind: JobKind) -> PathBuf {
        self.root.join("ready").join(kind.dir_name())
    }

    fn leased_dir(&self, kind: JobKind) -> PathBuf {
        self.root.join("leased").join(kind.dir_name())
    }

    fn next_seq(&self) -> Result<u64> {
        let path = self.root.join("seq");
        let current = match fs::read_to_string(&path) {
            Ok(s) => s.trim().parse::<u64>().map_err(|_| {
                StoreError::InvalidArgument(format!("corrupt sequence file {}", path.display()))
            })?,
            Err(e) if e.kind() == ErrorKind::NotFound => 0,
            Err(e) => return Err(e.into()),
        };
        write_atomic(&path, (current + 1).to_string().as_bytes())?;
        Ok(current)
    }

    fn read_record(&self, job_id: &str) -> Result<Option<JobRecord>> {
        match fs::read(self.job_path(job_id)) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn write_record(&self, record: &JobRecord) -> Result<()> {
        write_atomic(
            &self.job_path(&record.job.job_id),
            &serde_json::to_vec(record)?,
        )
    }

    fn push_ready(&self, record: &JobRecord) -> Result<()> {
        let marker = self.ready_dir(record.job.kind).join(format!("{:020}", record.seq));
        write_atomic(&marker, record.job.job_id.as_bytes())
    }

    /// Enqueues a job under a fresh generated id.
    pub fn enqueue(&self, kind: JobKind, payload_ref: BlobRef) -> Result<Job> {
        let _guard = self.lock()?;
        let seq = self.next_seq()?;
        let job_id = format!("job-{seq:012}");
        self.insert_locked(job_id, kind, payload_ref, seq)
    }

    /// Enqueues a job under a caller-chosen id. Returns `false` without
    /// touching anything if the id was ever enqueued before (in any state),
    /// which makes re-submission after a crash safe.
    pub fn enqueue_with_id(&self, job_id: &str, kind: JobKind, payload_ref: BlobRef) -> Result<bool> {
        validate_id(job_id)?;
        let _guard = self.lock()?;
        if self.job_path(job_id).exists() {
            return Ok(false);
        }
        let seq = self.next_seq()?;
        self.insert_locked(job_id.to_string(), kind, payload_ref, seq)?;
        Ok(true)
    }

    fn insert_locked(&self, job_id: String, kind: JobKind, payload_ref: BlobRef, seq: u64) -> Result<Job> {
        let record = JobRecord {
            job: Job {
                job_id,
                kind,
                payload_ref,
                lease_deadline: None,
                attempts: 0,
            },
            state: JobState::Ready,
            seq,
        };
        self.write_record(&record)?;
        self.push_ready(&record)?;
        Ok(record.job)
    }

    /// Leases the oldest available job of `kind`. Jobs whose lease expired
    /// are redelivered before never-leased ones.
    pub fn lease_job(&self, kind: JobKind, visibility_timeout: Duration) -> Result<Option<Job>> {
        let timeout_ms = visibility_timeout.as_millis() as u64;
        if timeout_ms == 0 {
            return Err(StoreError::InvalidArgument(
                "visibility timeout must be positive".into(),
            ));
        }
        let _guard = self.lock()?;
        let now = self.clock.now_ms();

        let mut expired: Vec<JobRecord> = Vec::new();
        for entry in fs::read_dir(self.leased_dir(kind))? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if let Some(record) = self.read_record(&name)? {
                if record.state == JobState::Leased
                    && record.job.lease_deadline.is_some_and(|d| d <= now)
                {
                    expired.push(record);
                }
            }
        }
        if let Some(mut record) = expired.into_iter().min_by_key(|r| r.seq) {
            record.job.attempts += 1;
            record.job.lease_deadline = Some(now + timeout_ms);
            self.write_record(&record)?;
            return Ok(Some(record.job));
        }

        let mut markers: Vec<String> = fs::read_dir(self.ready_dir(kind))?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.bytes().all(|b| b.is_ascii_digit()))
            .collect();
        markers.sort();
        for marker in markers {
            let marker_path = self.ready_dir(kind).join(&marker);
            let job_id = fs::read_to_string(&marker_path)?;
            fs::remove_file(&marker_path)?;
            let Some(mut record) = self.read_record(&job_id)? else {
                continue;
            };
            if record.state != JobState::Ready {
                continue;
            }
            record.state = JobState::Leased;
            record.job.attempts += 1;
            record.job.lease_deadline = Some(now + timeout_ms);
            self.write_record(&record)?;
            write_atomic(&self.leased_dir(kind).join(&record.job.job_id), b"")?;
            return Ok(Some(record.job));
        }
        Ok(None)
    }

    /// Permanently removes a leased job. Returns `false` if it was already
    /// completed, so at most one caller ever observes `true` per job id.
    pub fn complete_job(&self, job_id: &str) -> Result<bool> {
        validate_id(job_id)?;
        let _guard = self.lock()?;
        let mut record = self
            .read_record(job_id)?
            .ok_or_else(|| StoreError::NotFound(job_id.to_string()))?;
        match record.state {
            JobState::Done => Ok(false),
            JobState::Ready => Err(StoreError::NotLeased(job_id.to_string())),
            JobState::Leased => {
                record.state = JobState::Done;
                record.job.lease_deadline = None;
                self.write_record(&record)?;
                remove_if_exists(&self.leased_dir(record.job.kind).join(job_id))?;
                Ok(true)
            }
        }
    }

    /// Gives a leased job back immediately (e.g. after a transient failure)
    /// instead of waiting for its lease to run out.
    pub fn release_job(&self, job_id: &str) -> Result<()> {
        validate_id(job_id)?;
        let _guard = self.lock()?;
        let mut record = self
            .read_record(job_id)?
            .ok_or_else(|| StoreError::NotFound(job_id.to_string()))?;
        if record.state != JobState::Leased {
            return Err(StoreError::NotLeased(job_id.to_string()));
        }
        record.state = JobState::Ready;
        record.job.lease_deadline = None;
        record.seq = self.next_seq()?;
        self.write_record(&record)?;
        remove_if_exists(&self.leased_dir(record.job.kind).join(job_id))?;
        self.push_ready(&record)
    }

    pub fn state(&self, job_id: &str) -> Result<Option<JobState>> {
        validate_id(job_id)?;
        let _guard = self.lock()?;
        Ok(self.read_record(job_id)?.map(|r| r.state))
    }

    /// Jobs of `kind` that are not done yet (ready or leased).
    pub fn pending(&self, kind: JobKind) -> Result<usize> {
        let _guard = self.lock()?;
        let ready = fs::read_dir(self.ready_dir(kind))?.count();
        let leased = fs::read_dir(self.leased_dir(kind))?.count();
        Ok(ready + leased)
    }
}

fn remove_if_exists(path: &Path) -> Result<()> {
    match fs::remove_file(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == ErrorKind::NotFound => Ok(()),
        Err(e) => Err(e.into()),
    }
}
