//! Structured run logs.
//!
//! Every component reports through an [`EventBuffer`]; the run loop drains the
//! buffer into a [`LogSink`], which assigns the per-run sequence number and
//! writes one canonical-JSON [`LogRecord`] per line. Records carry simulation
//! time only, so a log is a pure function of (run file, seed).

pub mod canonical;
mod compare;
mod summary;

pub use compare::{compare, ComparisonTable};
pub use summary::{summaries_to_csv, summarize, summarize_reader, RunSummary};

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub use canonical::to_canonical_string;

/// Record kinds written by this crate. Anything else is tolerated by the
/// summarizer and counted as unknown.
pub const KNOWN_KINDS: &[&str] = &[
    "run.start",
    "run.end",
    "phase.start",
    "phase.end",
    "kernel.step",
    "grid.state",
    "market.offer",
    "market.clearing",
    "net.send",
    "net.deliver",
    "net.drop",
    "net.rule",
    "net.restart",
    "agent.episode",
    "agent.generation",
    "agent.action",
    "agent.warning",
];

pub const LOG_SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("sink is closed")]
    Closed,
    #[error("unserializable payload: {0}")]
    Unserializable(String),
    #[error("t_sim {t} precedes {last} for source {source_name:?}")]
    TimeRegression { source_name: String, t: f64, last: f64 },
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("{0}")]
    Compare(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub run_id: String,
    pub seq: u64,
    pub t_sim: f64,
    pub source: String,
    pub kind: String,
    pub payload: Map<String, Value>,
}

impl LogRecord {
    pub fn to_canonical_line(&self) -> Result<String, TelemetryError> {
        let v = serde_json::to_value(self).map_err(|e| TelemetryError::Unserializable(e.to_string()))?;
        to_canonical_string(&v)
    }

    pub fn parse(line: &str) -> Result<Self, String> {
        serde_json::from_str(line).map_err(|e| e.to_string())
    }
}

enum Target {
    File {
        writer: BufWriter<File>,
        partial: PathBuf,
        path: PathBuf,
    },
    Memory(Vec<u8>),
}

/// Single-writer JSONL sink for one run.
pub struct LogSink {
    run_id: String,
    next_seq: u64,
    last_t: BTreeMap<String, f64>,
    target: Target,
    closed: bool,
}

impl LogSink {
    /// Writes `<dir>/<run_id>.jsonl`. Data goes to a `.partial` file that is
    /// renamed into place on [`LogSink::close`].
    pub fn create(dir: &Path, run_id: &str) -> Result<Self, TelemetryError> {
        fs::create_dir_all(dir)?;
        let path = dir.join(format!("{run_id}.jsonl"));
        let partial = dir.join(format!("{run_id}.jsonl.partial"));
        let writer = BufWriter::new(File::create(&partial)?);
        Ok(Self::with_target(run_id, Target::File { writer, partial, path }))
    }

    pub fn in_memory(run_id: &str) -> Self {
        Self::with_target(run_id, Target::Memory(Vec::new()))
    }

    fn with_target(run_id: &str, target: Target) -> Self {
        Self {
            run_id: run_id.to_string(),
            next_seq: 0,
            last_t: BTreeMap::new(),
            target,
            closed: false,
        }
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn records_written(&self) -> u64 {
        self.next_seq
    }

    /// Appends a record and returns its sequence number.
    pub fn emit(
        &mut self,
        t_sim: f64,
        source: &str,
        kind: &str,
        payload: Map<String, Value>,
    ) -> Result<u64, TelemetryError> {
        if self.closed {
            return Err(TelemetryError::Closed);
        }
        if let Some(&last) = self.last_t.get(source) {
            if t_sim < last {
                return Err(TelemetryError::TimeRegression {
                    source_name: source.to_string(),
                    t: t_sim,
                    last,
                });
            }
        }
        let record = LogRecord {
            run_id: self.run_id.clone(),
            seq: self.next_seq,
            t_sim,
            source: source.to_string(),
            kind: kind.to_string(),
            payload,
        };
        let mut line = record.to_canonical_line()?;
        line.push('\n');
        match &mut self.target {
            Target::File { writer, .. } => writer.write_all(line.as_bytes())?,
            Target::Memory(buf) => buf.extend_from_slice(line.as_bytes()),
        }
        self.last_t.insert(source.to_string(), t_sim);
        self.next_seq += 1;
        Ok(record.seq)
    }

    /// Flushes and finalizes the log. Returns the final path for file sinks.
    pub fn close(&mut self) -> Result<Option<PathBuf>, TelemetryError> {
        if self.closed {
            return Err(TelemetryError::Closed);
        }
        self.closed = true;
        match &mut self.target {
            Target::Memory(_) => Ok(None),
            Target::File { writer, partial, path } => {
                writer.flush()?;
                fs::rename(&*partial, &*path)?;
                Ok(Some(path.clone()))
            }
        }
    }

    /// Bytes written so far by an in-memory sink.
    pub fn contents(&self) -> Option<&[u8]> {
        match &self.target {
            Target::Memory(buf) => Some(buf),
            Target::File { .. } => None,
        }
    }

    /// Drops an unfinished file log without leaving anything behind.
    pub fn discard(mut self) -> Result<(), TelemetryError> {
        if let Target::File { partial, .. } = &self.target {
            if !self.closed {
                self.closed = true;
                fs::remove_file(partial)?;
            }
        }
        Ok(())
    }
}

impl Drop for LogSink {
    fn drop(&mut self) {
        if let Target::File { writer, .. } = &mut self.target {
            let _ = writer.flush();
        }
    }
}

/// Record not yet sequenced by a sink.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingRecord {
    pub t_sim: f64,
    pub source: String,
    pub kind: String,
    pub payload: Map<String, Value>,
}

/// Shared, single-threaded collector that simulators push records into.
/// Cloning yields another handle to the same buffer. A disabled buffer
/// drops everything pushed to it.
#[derive(Debug, Clone, Default)]
pub struct EventBuffer {
    inner: Rc<RefCell<BufferInner>>,
}

#[derive(Debug, Default)]
struct BufferInner {
    disabled: bool,
    only_prefix: Option<String>,
    offset: f64,
    records: Vec<PendingRecord>,
}

impl EventBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_enabled(&self, enabled: bool) {
        self.inner.borrow_mut().disabled = !enabled;
    }

    pub fn is_enabled(&self) -> bool {
        !self.inner.borrow().disabled
    }

    /// While set, only kinds starting with `prefix` are kept.
    pub fn set_kind_filter(&self, prefix: Option<&str>) {
        self.inner.borrow_mut().only_prefix = prefix.map(str::to_string);
    }

    /// Added to every pushed `t_sim`; used to lay episodes end to end.
    pub fn set_time_offset(&self, offset: f64) {
        self.inner.borrow_mut().offset = offset;
    }

    pub fn push(&self, t_sim: f64, source: &str, kind: &str, payload: Value) {
        let mut inner = self.inner.borrow_mut();
        if inner.disabled || inner.only_prefix.as_ref().is_some_and(|p| !kind.starts_with(p.as_str())) {
            return;
        }
        let payload = match payload {
            Value::Object(m) => m,
            Value::Null => Map::new(),
            other => {
                let mut m = Map::new();
                m.insert("value".into(), other);
                m
            }
        };
        let t_sim = t_sim + inner.offset;
        inner.records.push(PendingRecord {
            t_sim,
            source: source.to_string(),
            kind: kind.to_string(),
            payload,
        });
    }

    pub fn drain(&self) -> Vec<PendingRecord> {
        std::mem::take(&mut self.inner.borrow_mut().records)
    }

    pub fn drain_into(&self, sink: &mut LogSink) -> Result<(), TelemetryError> {
        for r in self.drain() {
            sink.emit(r.t_sim, &r.source, &r.kind, r.payload)?;
        }
        Ok(())
    }
}

/// Builds a JSON object payload from `key => value` pairs.
#[macro_export]
macro_rules! payload {
    ($($key:literal => $value:expr),* $(,)?) => {{
        let mut m = serde_json::Map::new();
        $( m.insert($key.to_string(), serde_json::json!($value)); )*
        serde_json::Value::Object(m)
    }};
}
