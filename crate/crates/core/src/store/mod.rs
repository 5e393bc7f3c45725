//! File-backed record store.
//!
//! Layout under the store root:
//!
//! ```text
//! frames/<frame_id>/frame.r000001.json            frame record revisions
//! frames/<frame_id>/captions/<caption_id>/r000001.json
//! frames/<frame_id>/ratings.jsonl                 append-only rating log
//! splits.json
//! tasks/<name>.json                               service task claims
//! ```
//!
//! Every record file is an envelope `{schema, revision, sha256, payload}`
//! where `sha256` is the hex digest of the exact payload bytes. New
//! revisions are written to a temporary file and hard-linked into place, so
//! a revision either exists completely or not at all, and two writers racing
//! for the same revision cannot both win.

pub mod corpus;
pub mod import;
pub mod ingest;
pub mod labelmap;
pub mod splits;

use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use chrono::{DateTime, SubsecRound, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::markup::parse_caption;
use crate::metrics::report::RatingRecord;
use crate::model::{Detection, Frame};

pub const FRAME_SCHEMA: &str = "groundcap.frame/1";
pub const CAPTION_SCHEMA: &str = "groundcap.caption/1";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("conflict on {what}: based on revision {base}, but revision {next} already exists")]
    Conflict { what: String, base: u64, next: u64 },
    #[error("corrupt record {path}: {reason}")]
    Corrupt { path: String, reason: String },
    #[error("duplicate: {0}")]
    Duplicate(String),
    #[error("invalid: {0}")]
    Invalid(String),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: io::Error },
}

impl StoreError {
    fn io(path: &Path, source: io::Error) -> Self {
        StoreError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

/// Ids used as path components: ASCII letters, digits, `_` and `-`.
pub fn is_safe_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

fn check_id(kind: &str, id: &str) -> Result<()> {
    if is_safe_id(id) {
        Ok(())
    } else {
        Err(StoreError::Invalid(format!(
            "{kind} id `{id}` must match [A-Za-z0-9_-]{{1,128}}"
        )))
    }
}

/// Current UTC time at second resolution.
pub fn now() -> DateTime<Utc> {
    Utc::now().trunc_subsecs(0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Serialize)]
struct EnvelopeOut<'a> {
    schema: &'a str,
    revision: u64,
    sha256: String,
    payload: &'a RawValue,
}

#[derive(Deserialize)]
struct EnvelopeIn {
    schema: String,
    revision: u64,
    sha256: String,
    payload: Box<RawValue>,
}

/// Where a frame's detections came from, for re-decomposition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationSource {
    pub labelmap: String,
    pub legend: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: Frame,
    pub detections: Vec<Detection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<SegmentationSource>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaptionSource {
    Auto,
    Human,
    Model,
}

impl CaptionSource {
    pub const ALL: [CaptionSource; 3] = [CaptionSource::Auto, CaptionSource::Human, CaptionSource::Model];

    pub fn name(self) -> &'static str {
        match self {
            CaptionSource::Auto => "auto",
            CaptionSource::Human => "human",
            CaptionSource::Model => "model",
        }
    }
}

impl std::str::FromStr for CaptionSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        CaptionSource::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown caption source `{s}` (expected auto, human or model)"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub caption_id: String,
    pub frame_id: String,
    pub source: CaptionSource,
    pub text: String,
    pub revision: u64,
    pub created_at: DateTime<Utc>,
    /// Rater who wrote this revision, for human edits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub author: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Versioned<T> {
    pub revision: u64,
    pub value: T,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

fn revision_of(name: &str, prefix: &str) -> Option<u64> {
    let digits = name.strip_prefix(prefix)?.strip_suffix(".json")?;
    (digits.len() == 6 && digits.bytes().all(|b| b.is_ascii_digit()))
        .then(|| digits.parse().ok())
        .flatten()
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| StoreError::io(path, e))
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for d in ["frames", "tasks"] {
            let p = root.join(d);
            fs::create_dir_all(&p).map_err(|e| StoreError::io(&p, e))?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Resolves a stored relative path (such as an image ref) against the root.
    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    fn frame_dir(&self, frame_id: &str) -> PathBuf {
        self.root.join("frames").join(frame_id)
    }

    fn caption_dir(&self, frame_id: &str, caption_id: &str) -> PathBuf {
        self.frame_dir(frame_id).join("captions").join(caption_id)
    }

    fn tmp_path(dir: &Path) -> PathBuf {
        let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
        dir.join(format!(".tmp.{}.{n}", std::process::id()))
    }

    /// Writes `bytes` to `target` only if it does not exist yet.
    fn create_new(dir: &Path, target: &Path, bytes: &[u8]) -> Result<bool> {
        fs::create_dir_all(dir).map_err(|e| StoreError::io(dir, e))?;
        let tmp = Self::tmp_path(dir);
        let write = || -> io::Result<()> {
            let mut f = File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()
        };
        if let Err(e) = write() {
            let _ = fs::remove_file(&tmp);
            return Err(StoreError::io(&tmp, e));
        }
        let linked = fs::hard_link(&tmp, target);
        let _ = fs::remove_file(&tmp);
        match linked {
            Ok(()) => Ok(true),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Ok(false),
            Err(e) => Err(StoreError::io(target, e)),
        }
    }

    fn revisions(dir: &Path, prefix: &str) -> Result<Vec<u64>> {
        let entries = match fs::read_dir(dir) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(StoreError::io(dir, e)),
        };
        let mut revs: Vec<u64> = entries
            .filter_map(|e| e.ok())
            .filter_map(|e| revision_of(&e.file_name().to_string_lossy(), prefix))
            .collect();
        revs.sort_unstable();
        Ok(revs)
    }

    fn write_revision<T: Serialize>(
        dir: &Path,
        prefix: &str,
        schema: &str,
        base: u64,
        what: &str,
        value: &T,
    ) -> Result<u64> {
        let next = base + 1;
        let latest = Self::revisions(dir, prefix)?.last().copied().unwrap_or(0);
        if base > latest {
            return Err(StoreError::Invalid(format!(
                "{what}: base revision {base} is ahead of latest {latest}"
            )));
        }
        let payload = serde_json::to_string(value).map_err(|e| StoreError::Invalid(e.to_string()))?;
        let raw = RawValue::from_string(payload).map_err(|e| StoreError::Invalid(e.to_string()))?;
        let env = EnvelopeOut {
            schema,
            revision: next,
            sha256: sha256_hex(raw.get().as_bytes()),
            payload: &raw,
        };
        let mut bytes = serde_json::to_vec_pretty(&env).map_err(|e| StoreError::Invalid(e.to_string()))?;
        bytes.push(b'\n');
        let target = dir.join(format!("{prefix}{next:06}.json"));
        if Self::create_new(dir, &target, &bytes)? {
            Ok(next)
        } else {
            Err(StoreError::Conflict {
                what: what.to_owned(),
                base,
                next,
            })
        }
    }

    fn read_record<T: DeserializeOwned>(path: &Path, schema: &str) -> Result<Versioned<T>> {
        let text = read_to_string(path)?;
        let corrupt = |reason: String| StoreError::Corrupt {
            path: path.display().to_string(),
            reason,
        };
        let env: EnvelopeIn = serde_json::from_str(&text).map_err(|e| corrupt(format!("bad envelope: {e}")))?;
        if env.schema != schema {
            return Err(corrupt(format!("schema `{}`, expected `{schema}`", env.schema)));
        }
        let digest = sha256_hex(env.payload.get().as_bytes());
        if digest != env.sha256 {
            return Err(corrupt(format!(
                "checksum mismatch (stored {}, computed {digest})",
                env.sha256
            )));
        }
        let value = serde_json::from_str(env.payload.get()).map_err(|e| corrupt(format!("bad payload: {e}")))?;
        Ok(Versioned {
            revision: env.revision,
            value,
        })
    }

    pub fn frame_ids(&self) -> Result<Vec<String>> {
        let dir = self.root.join("frames");
        let mut ids: Vec<String> = fs::read_dir(&dir)
            .map_err(|e| StoreError::io(&dir, e))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|id| is_safe_id(id))
            .filter(|id| Self::revisions(&self.frame_dir(id), "frame.r").is_ok_and(|r| !r.is_empty()))
            .collect();
        ids.sort();
        Ok(ids)
    }

    pub fn frame_revision(&self, frame_id: &str) -> Result<Option<u64>> {
        check_id("frame", frame_id)?;
        Ok(Self::revisions(&self.frame_dir(frame_id), "frame.r")?.last().copied())
    }

    pub fn load_frame(&self, frame_id: &str) -> Result<Versioned<FrameRecord>> {
        let rev = self
            .frame_revision(frame_id)?
            .ok_or_else(|| StoreError::NotFound(format!("frame {frame_id}")))?;
        self.load_frame_revision(frame_id, rev)
    }

    pub fn load_frame_revision(&self, frame_id: &str, revision: u64) -> Result<Versioned<FrameRecord>> {
        check_id("frame", frame_id)?;
        let path = self.frame_dir(frame_id).join(format!("frame.r{revision:06}.json"));
        if !path.exists() {
            return Err(StoreError::NotFound(format!("frame {frame_id} revision {revision}")));
        }
        Self::read_record(&path, FRAME_SCHEMA)
    }

    /// Writes a new revision on top of `base` (0 for a new frame).
    pub fn save_frame(&self, record: &FrameRecord, base: u64) -> Result<u64> {
        let fid = &record.frame.frame_id;
        check_id("frame", fid)?;
        for (i, d) in record.detections.iter().enumerate() {
            d.check(record.frame.width, record.frame.height)
                .map_err(|e| StoreError::Invalid(format!("detection {i}: {e}")))?;
        }
        Self::write_revision(
            &self.frame_dir(fid),
            "frame.r",
            FRAME_SCHEMA,
            base,
            &format!("frame {fid}"),
            record,
        )
    }

    /// Saves only when the stored content differs from the latest revision
    /// (masks are not stored, so they do not count). Returns the current
    /// revision and whether a new one was written.
    pub fn upsert_frame(&self, record: &FrameRecord) -> Result<(u64, bool)> {
        let stored = |r: &FrameRecord| serde_json::to_vec(r).map_err(|e| StoreError::Invalid(e.to_string()));
        let bytes = stored(record)?;
        loop {
            let base = match self.load_frame(&record.frame.frame_id) {
                Ok(v) if stored(&v.value)? == bytes => return Ok((v.revision, false)),
                Ok(v) => v.revision,
                Err(StoreError::NotFound(_)) => 0,
                Err(e) => return Err(e),
            };
            match self.save_frame(record, base) {
                Ok(rev) => return Ok((rev, true)),
                Err(StoreError::Conflict { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
    }

    pub fn caption_ids(&self, frame_id: &str) -> Result<Vec<String>> {
        check_id("frame", frame_id)?;
        let dir = self.frame_dir(frame_id).join("captions");
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(StoreError::io(&dir, e)),
        };
        let mut ids: Vec<String> = entries
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|id| is_safe_id(id))
            .filter(|id| Self::revisions(&self.caption_dir(frame_id, id), "r").is_ok_and(|r| !r.is_empty()))
            .collect();
        ids.sort();
        Ok(ids)
    }

    pub fn caption_revisions(&self, frame_id: &str, caption_id: &str) -> Result<Vec<u64>> {
        check_id("frame", frame_id)?;
        check_id("caption", caption_id)?;
        Self::revisions(&self.caption_dir(frame_id, caption_id), "r")
    }

    pub fn load_caption_revision(&self, frame_id: &str, caption_id: &str, revision: u64) -> Result<CaptionRecord> {
        check_id("frame", frame_id)?;
        check_id("caption", caption_id)?;
        let path = self
            .caption_dir(frame_id, caption_id)
            .join(format!("r{revision:06}.json"));
        if !path.exists() {
            return Err(StoreError::NotFound(format!(
                "caption {frame_id}/{caption_id} revision {revision}"
            )));
        }
        let v: Versioned<CaptionRecord> = Self::read_record(&path, CAPTION_SCHEMA)?;
        if v.value.revision != v.revision {
            return Err(StoreError::Corrupt {
                path: path.display().to_string(),
                reason: format!(
                    "payload revision {} in envelope revision {}",
                    v.value.revision, v.revision
                ),
            });
        }
        Ok(v.value)
    }

    pub fn load_caption(&self, frame_id: &str, caption_id: &str) -> Result<CaptionRecord> {
        let rev = self
            .caption_revisions(frame_id, caption_id)?
            .last()
            .copied()
            .ok_or_else(|| StoreError::NotFound(format!("caption {frame_id}/{caption_id}")))?;
        self.load_caption_revision(frame_id, caption_id, rev)
    }

    pub fn caption_history(&self, frame_id: &str, caption_id: &str) -> Result<Vec<CaptionRecord>> {
        self.caption_revisions(frame_id, caption_id)?
            .into_iter()
            .map(|r| self.load_caption_revision(frame_id, caption_id, r))
            .collect()
    }

    /// Stores `record` as revision `record.revision`, which must be exactly one
    /// past the latest stored revision.
    pub fn save_caption(&self, record: &CaptionRecord) -> Result<u64> {
        check_id("frame", &record.frame_id)?;
        check_id("caption", &record.caption_id)?;
        if record.revision == 0 {
            return Err(StoreError::Invalid("caption revisions start at 1".into()));
        }
        if let Err(e) = parse_caption(&record.text) {
            return Err(StoreError::Invalid(format!(
                "caption {} does not parse: {}",
                record.caption_id,
                e.errors.first().map(|s| s.to_string()).unwrap_or_default()
            )));
        }
        if self.frame_revision(&record.frame_id)?.is_none() {
            return Err(StoreError::NotFound(format!("frame {}", record.frame_id)));
        }
        Self::write_revision(
            &self.caption_dir(&record.frame_id, &record.caption_id),
            "r",
            CAPTION_SCHEMA,
            record.revision - 1,
            &format!("caption {}/{}", record.frame_id, record.caption_id),
            record,
        )
    }

    /// Appends a caption revision unless the latest revision already has the
    /// same text and source. Returns the current revision.
    pub fn put_caption_text(
        &self,
        frame_id: &str,
        caption_id: &str,
        source: CaptionSource,
        text: &str,
        author: Option<&str>,
    ) -> Result<(u64, bool)> {
        loop {
            let base = match self.load_caption(frame_id, caption_id) {
                Ok(c) if c.text == text && c.source == source && c.author.as_deref() == author => {
                    return Ok((c.revision, false))
                }
                Ok(c) => c.revision,
                Err(StoreError::NotFound(_)) => 0,
                Err(e) => return Err(e),
            };
            let record = CaptionRecord {
                caption_id: caption_id.to_owned(),
                frame_id: frame_id.to_owned(),
                source,
                text: text.to_owned(),
                revision: base + 1,
                created_at: now(),
                author: author.map(str::to_owned),
            };
            match self.save_caption(&record) {
                Ok(rev) => return Ok((rev, true)),
                Err(StoreError::Conflict { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
    }

    fn ratings_path(&self, frame_id: &str) -> PathBuf {
        self.frame_dir(frame_id).join("ratings.jsonl")
    }

    /// Appends to the rated frame's log under an exclusive file lock; a task
    /// id may appear only once.
    pub fn append_rating(&self, rating: &RatingRecord) -> Result<()> {
        let frame_id = rating.frame_id.as_str();
        check_id("frame", frame_id)?;
        if !self.frame_dir(frame_id).is_dir() {
            return Err(StoreError::NotFound(format!("frame {frame_id}")));
        }
        rating.check().map_err(|e| StoreError::Invalid(e.to_string()))?;
        let path = self.ratings_path(frame_id);
        let mut f = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(&path)
            .map_err(|e| StoreError::io(&path, e))?;
        f.lock().map_err(|e| StoreError::io(&path, e))?;
        let mut text = String::new();
        f.read_to_string(&mut text).map_err(|e| StoreError::io(&path, e))?;
        let (complete, existing) = parse_rating_lines(&text, &path)?;
        if existing.iter().any(|r| r.task_id == rating.task_id) {
            return Err(StoreError::Duplicate(format!("rating for task {}", rating.task_id)));
        }
        let same_item = |r: &RatingRecord| {
            (&r.rater_id, &r.caption_id, r.caption_revision)
                == (&rating.rater_id, &rating.caption_id, rating.caption_revision)
        };
        if existing.iter().any(same_item) {
            return Err(StoreError::Duplicate(format!(
                "{} already rated {} revision {}",
                rating.rater_id, rating.caption_id, rating.caption_revision
            )));
        }
        // Drop a torn final line left by an interrupted append.
        f.set_len(complete as u64).map_err(|e| StoreError::io(&path, e))?;
        f.seek(SeekFrom::Start(complete as u64))
            .map_err(|e| StoreError::io(&path, e))?;
        let mut line = serde_json::to_string(rating).map_err(|e| StoreError::Invalid(e.to_string()))?;
        line.push('\n');
        f.write_all(line.as_bytes()).map_err(|e| StoreError::io(&path, e))?;
        f.sync_all().map_err(|e| StoreError::io(&path, e))?;
        Ok(())
    }

    pub fn ratings(&self, frame_id: &str) -> Result<Vec<RatingRecord>> {
        check_id("frame", frame_id)?;
        let path = self.ratings_path(frame_id);
        let f = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(StoreError::io(&path, e)),
        };
        f.lock_shared().map_err(|e| StoreError::io(&path, e))?;
        let mut text = String::new();
        (&f).read_to_string(&mut text).map_err(|e| StoreError::io(&path, e))?;
        Ok(parse_rating_lines(&text, &path)?.1)
    }

    pub fn all_ratings(&self) -> Result<Vec<RatingRecord>> {
        let mut out = Vec::new();
        for fid in self.frame_ids()? {
            out.extend(self.ratings(&fid)?);
        }
        Ok(out)
    }

    pub fn save_splits(&self, table: &splits::SplitTable) -> Result<()> {
        let path = self.root.join("splits.json");
        let tmp = Self::tmp_path(&self.root);
        let mut bytes = serde_json::to_vec_pretty(table).map_err(|e| StoreError::Invalid(e.to_string()))?;
        bytes.push(b'\n');
        fs::write(&tmp, bytes).map_err(|e| StoreError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| StoreError::io(&path, e))
    }

    pub fn load_splits(&self) -> Result<splits::SplitTable> {
        let path = self.root.join("splits.json");
        if !path.exists() {
            return Err(StoreError::NotFound("splits.json".into()));
        }
        serde_json::from_str(&read_to_string(&path)?).map_err(|e| StoreError::Corrupt {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    /// Atomically creates `tasks/<name>.json`; false when it already exists.
    pub fn claim<T: Serialize>(&self, name: &str, body: &T) -> Result<bool> {
        if !name.bytes().all(|b| b.is_ascii_alphanumeric() || b"_-.".contains(&b)) || name.is_empty() {
            return Err(StoreError::Invalid(format!("claim name `{name}`")));
        }
        let dir = self.root.join("tasks");
        let bytes = serde_json::to_vec_pretty(body).map_err(|e| StoreError::Invalid(e.to_string()))?;
        Self::create_new(&dir, &dir.join(format!("{name}.json")), &bytes)
    }

    pub fn read_claim<T: DeserializeOwned>(&self, name: &str) -> Result<Option<T>> {
        let path = self.root.join("tasks").join(format!("{name}.json"));
        match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).map(Some).map_err(|e| StoreError::Corrupt {
                path: path.display().to_string(),
                reason: e.to_string(),
            }),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(StoreError::io(&path, e)),
        }
    }

    /// Claim names starting with `prefix`, sorted.
    pub fn claims(&self, prefix: &str) -> Result<Vec<String>> {
        let dir = self.root.join("tasks");
        let mut names: Vec<String> = fs::read_dir(&dir)
            .map_err(|e| StoreError::io(&dir, e))?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter_map(|n| n.strip_suffix(".json").map(str::to_owned))
            .filter(|n| n.starts_with(prefix))
            .collect();
        names.sort();
        Ok(names)
    }
}

/// Parsed records and the byte length of the complete (newline-terminated)
/// prefix. A torn last line is ignored; a bad complete line is corruption.
fn parse_rating_lines(text: &str, path: &Path) -> Result<(usize, Vec<RatingRecord>)> {
    let complete = text.rfind('\n').map_or(0, |i| i + 1);
    let records = text[..complete]
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| StoreError::Corrupt {
                path: path.display().to_string(),
                reason: format!("line {}: {e}", i + 1),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((complete, records))
}
