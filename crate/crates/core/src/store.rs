//! Append-only store of disposal records.
//!
//! Records live in memory with an id index and, when opened on a path, in a
//! JSONL file (one canonical record per line). Records are immutable once
//! written except for `bin_real`, which manual review fills in later; every
//! annotation is also written to an audit log next to the store file.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{BinColor, DisposalRecord, OutcomeKind};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("record {0} already exists")]
    Duplicate(String),
    #[error("unknown record {0}")]
    UnknownRecord(String),
    #[error("record {record_id} at {time} is older than the last stored record ({last})")]
    OutOfOrder {
        record_id: String,
        time: DateTime<Utc>,
        last: DateTime<Utc>,
    },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One change of `bin_real`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub record_id: String,
    pub previous: Option<BinColor>,
    pub real: BinColor,
    #[serde(with = "crate::domain::utc_seconds")]
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QueryFilter {
    /// Inclusive lower bound.
    pub from: Option<DateTime<Utc>>,
    /// Exclusive upper bound.
    pub until: Option<DateTime<Utc>>,
    /// Empty means any outcome.
    pub outcomes: Vec<OutcomeKind>,
    /// Skip records whose item never went into a bin.
    pub disposed_only: bool,
}

impl QueryFilter {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn disposed() -> Self {
        QueryFilter {
            disposed_only: true,
            ..Self::default()
        }
    }

    pub fn outcome(kind: OutcomeKind) -> Self {
        QueryFilter {
            outcomes: vec![kind],
            ..Self::default()
        }
    }

    pub fn matches(&self, r: &DisposalRecord) -> bool {
        self.from.is_none_or(|f| r.time() >= f)
            && self.until.is_none_or(|u| r.time() < u)
            && (self.outcomes.is_empty() || self.outcomes.contains(&r.outcome().kind()))
            && (!self.disposed_only || r.is_disposed())
    }
}

#[derive(Debug, Default)]
pub struct EventStore {
    records: Vec<DisposalRecord>,
    index: HashMap<String, usize>,
    audit: Vec<Annotation>,
    path: Option<PathBuf>,
}

pub type SharedStore = Arc<RwLock<EventStore>>;

fn audit_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".audit");
    PathBuf::from(p)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, StoreError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| StoreError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                source,
            })
        })
        .collect()
}

impl EventStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates on first append) a file-backed store.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let path = path.into();
        let mut store = EventStore::in_memory();
        for r in read_jsonl::<DisposalRecord>(&path)? {
            store.insert(r)?;
        }
        store.audit = read_jsonl(&audit_path(&path))?;
        store.path = Some(path);
        Ok(store)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[DisposalRecord] {
        &self.records
    }

    pub fn get(&self, record_id: &str) -> Option<&DisposalRecord> {
        self.index.get(record_id).map(|&i| &self.records[i])
    }

    pub fn audit_log(&self) -> &[Annotation] {
        &self.audit
    }

    fn insert(&mut self, r: DisposalRecord) -> Result<String, StoreError> {
        if self.index.contains_key(r.record_id()) {
            return Err(StoreError::Duplicate(r.record_id().to_string()));
        }
        if let Some(last) = self.records.last() {
            if r.time() < last.time() {
                return Err(StoreError::OutOfOrder {
                    record_id: r.record_id().to_string(),
                    time: r.time(),
                    last: last.time(),
                });
            }
        }
        let id = r.record_id().to_string();
        self.index.insert(id.clone(), self.records.len());
        self.records.push(r);
        Ok(id)
    }

    pub fn append(&mut self, r: DisposalRecord) -> Result<String, StoreError> {
        let line = r.to_json_line();
        let id = self.insert(r)?;
        if let Some(path) = &self.path {
            let written = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .and_then(|mut f| writeln!(f, "{line}").and_then(|_| f.sync_data()));
            if let Err(e) = written {
                // keep memory and file in step
                self.records.pop();
                self.index.remove(&id);
                return Err(e.into());
            }
        }
        Ok(id)
    }

    pub fn annotate_real(&mut self, record_id: &str, real: BinColor) -> Result<DisposalRecord, StoreError> {
        self.annotate_real_at(record_id, real, Utc::now())
    }

    /// Sets `bin_real`, overwriting any earlier annotation; the change is
    /// appended to the audit log.
    pub fn annotate_real_at(
        &mut self,
        record_id: &str,
        real: BinColor,
        at: DateTime<Utc>,
    ) -> Result<DisposalRecord, StoreError> {
        let &i = self
            .index
            .get(record_id)
            .ok_or_else(|| StoreError::UnknownRecord(record_id.to_string()))?;
        let entry = Annotation {
            record_id: record_id.to_string(),
            previous: self.records[i].bin_real(),
            real,
            at,
        };
        self.records[i].set_bin_real(real);
        if let Some(path) = self.path.clone() {
            self.write_all(&path)?;
            let mut f = OpenOptions::new().create(true).append(true).open(audit_path(&path))?;
            writeln!(f, "{}", serde_json::to_string(&entry).expect("annotation serializes"))?;
        }
        self.audit.push(entry);
        Ok(self.records[i].clone())
    }

    /// Matching records in storage (= time) order.
    pub fn query(&self, filter: &QueryFilter) -> Vec<DisposalRecord> {
        self.records.iter().filter(|r| filter.matches(r)).cloned().collect()
    }

    pub fn to_jsonl(&self) -> String {
        self.records.iter().map(|r| r.to_json_line() + "\n").collect()
    }

    fn write_all(&self, path: &Path) -> Result<(), StoreError> {
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            for r in &self.records {
                writeln!(w, "{}", r.to_json_line())?;
            }
            w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn export(&self, path: &Path) -> Result<usize, StoreError> {
        self.write_all(path)?;
        Ok(self.records.len())
    }

    /// Appends every record of a JSONL file. Stops at the first rejected
    /// record; records before it stay imported.
    pub fn import(&mut self, path: &Path) -> Result<usize, StoreError> {
        let incoming: Vec<DisposalRecord> = read_jsonl(path)?;
        let n = incoming.len();
        for r in incoming {
            self.append(r)?;
        }
        Ok(n)
    }

    pub fn shared(self) -> SharedStore {
        Arc::new(RwLock::new(self))
    }
}
