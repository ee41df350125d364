//! Durable storage on an embedded SQLite database.
//!
//! All access goes through [`Store::read`] and [`Store::write`]. A write
//! closure runs inside one transaction: if it returns an error (or panics)
//! nothing it did is kept.

use std::path::Path;
use std::sync::{Mutex, MutexGuard};

use chrono::{DateTime, Utc};
use rusqlite::{params, Connection, ErrorCode, OptionalExtension, Transaction, TransactionBehavior};

use crate::auto_screen::{ClassifierKind, QaPrediction, TrainedClassifier};
use crate::catalog::{
    DecisionOrigin, PaperId, PaperRecord, ReviewId, ReviewProtocol, ReviewerId, ScreeningDecision,
};
use crate::dedup::{CorpusIndex, KeyEntry};
use crate::error::{Error, Result};
use crate::search::SearchRun;

/// Forward-only migrations, applied in order.
const MIGRATIONS: &[(u32, &str)] = &[(1, include_str!("../migrations/0001_init.sql"))];

pub const SCHEMA_VERSION: u32 = 1;

pub struct Store {
    conn: Mutex<Connection>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").finish_non_exhaustive()
    }
}

fn configure(conn: &Connection) -> Result<()> {
    conn.pragma_update(None, "foreign_keys", true)?;
    conn.busy_timeout(std::time::Duration::from_secs(5))?;
    Ok(())
}

fn current_version(conn: &Connection) -> Result<u32> {
    let exists: bool = conn.query_row(
        "SELECT EXISTS (SELECT 1 FROM sqlite_master WHERE type = 'table' AND name = 'schema_migrations')",
        [],
        |r| r.get(0),
    )?;
    if !exists {
        return Ok(0);
    }
    let v: Option<u32> = conn.query_row("SELECT MAX(version) FROM schema_migrations", [], |r| r.get(0))?;
    Ok(v.unwrap_or(0))
}

fn apply_migrations(conn: &mut Connection) -> Result<u32> {
    conn.execute_batch(
        "CREATE TABLE IF NOT EXISTS schema_migrations (version INTEGER PRIMARY KEY, applied_at TEXT NOT NULL)",
    )?;
    let start = current_version(conn)?;
    let mut version = start;
    for &(v, sql) in MIGRATIONS.iter().filter(|(v, _)| *v > start) {
        let tx = conn.transaction()?;
        tx.execute_batch(sql)?;
        tx.execute(
            "INSERT INTO schema_migrations (version, applied_at) VALUES (?1, ?2)",
            params![v, Utc::now().to_rfc3339()],
        )?;
        tx.commit()?;
        tracing::info!(version = v, "applied migration");
        version = v;
    }
    Ok(version)
}

impl Store {
    /// Opens an existing database whose schema is current.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let conn = Connection::open(path)?;
        configure(&conn)?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        let found = current_version(&conn)?;
        if found != SCHEMA_VERSION {
            return Err(Error::SchemaMismatch { found, expected: SCHEMA_VERSION });
        }
        Ok(Store { conn: Mutex::new(conn) })
    }

    /// Brings the database at `path` (created if missing) to the current
    /// schema; returns the resulting version.
    pub fn migrate(path: impl AsRef<Path>) -> Result<u32> {
        let mut conn = Connection::open(path)?;
        configure(&conn)?;
        apply_migrations(&mut conn)
    }

    /// A migrated private in-memory database.
    pub fn in_memory() -> Result<Self> {
        let mut conn = Connection::open_in_memory()?;
        configure(&conn)?;
        apply_migrations(&mut conn)?;
        Ok(Store { conn: Mutex::new(conn) })
    }

    fn lock(&self) -> MutexGuard<'_, Connection> {
        // a panic inside a closure already rolled its transaction back
        self.conn.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }

    pub fn schema_version(&self) -> Result<u32> {
        current_version(&self.lock())
    }

    /// Runs `f` in a read transaction: one consistent snapshot.
    pub fn read<T>(&self, f: impl FnOnce(&Tx<'_>) -> Result<T>) -> Result<T> {
        let mut conn = self.lock();
        let tx = Tx(conn.transaction_with_behavior(TransactionBehavior::Deferred)?);
        f(&tx)
    }

    /// Runs `f` in a write transaction, committing only if it succeeds.
    pub fn write<T>(&self, f: impl FnOnce(&Tx<'_>) -> Result<T>) -> Result<T> {
        let mut conn = self.lock();
        let tx = Tx(conn.transaction_with_behavior(TransactionBehavior::Immediate)?);
        let out = f(&tx)?;
        tx.0.commit()?;
        Ok(out)
    }
}

/// An open transaction with typed accessors.
pub struct Tx<'c>(Transaction<'c>);

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string(value)?)
}

fn from_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    Ok(serde_json::from_str(text)?)
}

fn is_constraint(e: &rusqlite::Error) -> bool {
    matches!(e, rusqlite::Error::SqliteFailure(f, _) if f.code == ErrorCode::ConstraintViolation)
}

fn next_seq(tx: &Transaction<'_>, table: &str, review_id: &ReviewId) -> Result<i64> {
    let sql = format!("SELECT COALESCE(MAX(seq), -1) + 1 FROM {table} WHERE review_id = ?1");
    Ok(tx.query_row(&sql, [review_id.as_str()], |r| r.get(0))?)
}

/// A stored decision with its position in the review's decision log.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedDecision {
    pub seq: i64,
    pub decision: ScreeningDecision,
}

/// A cached response for an idempotency key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdempotentResponse {
    pub fingerprint: String,
    pub status: u16,
    pub body: String,
}

impl Tx<'_> {
    // reviews

    pub fn insert_review(&self, protocol: &ReviewProtocol, created_at: DateTime<Utc>) -> Result<()> {
        self.0
            .execute(
                "INSERT INTO reviews (review_id, protocol, created_at) VALUES (?1, ?2, ?3)",
                params![protocol.review_id.as_str(), to_json(protocol)?, created_at.to_rfc3339()],
            )
            .map_err(|e| {
                if is_constraint(&e) {
                    Error::Conflict(format!("review {} already exists", protocol.review_id))
                } else {
                    e.into()
                }
            })?;
        Ok(())
    }

    pub fn update_protocol(&self, protocol: &ReviewProtocol) -> Result<()> {
        let n = self.0.execute(
            "UPDATE reviews SET protocol = ?2 WHERE review_id = ?1",
            params![protocol.review_id.as_str(), to_json(protocol)?],
        )?;
        if n == 0 {
            return Err(Error::not_found("review", protocol.review_id.as_str()));
        }
        Ok(())
    }

    pub fn protocol(&self, review_id: &ReviewId) -> Result<ReviewProtocol> {
        let text: Option<String> = self
            .0
            .query_row("SELECT protocol FROM reviews WHERE review_id = ?1", [review_id.as_str()], |r| r.get(0))
            .optional()?;
        match text {
            Some(t) => from_json(&t),
            None => Err(Error::not_found("review", review_id.as_str())),
        }
    }

    pub fn review_ids(&self) -> Result<Vec<ReviewId>> {
        let mut stmt = self.0.prepare("SELECT review_id FROM reviews ORDER BY created_at, review_id")?;
        let rows = stmt.query_map([], |r| r.get::<_, String>(0))?;
        Ok(rows.map(|r| r.map(ReviewId::new)).collect::<rusqlite::Result<_>>()?)
    }

    /// Removes the review and everything stored under it.
    pub fn delete_review(&self, review_id: &ReviewId) -> Result<()> {
        // decisions and predictions hang off papers; papers off the review
        let n = self.0.execute("DELETE FROM reviews WHERE review_id = ?1", [review_id.as_str()])?;
        if n == 0 {
            return Err(Error::not_found("review", review_id.as_str()));
        }
        Ok(())
    }

    fn require_review(&self, review_id: &ReviewId) -> Result<()> {
        let found: bool = self.0.query_row(
            "SELECT EXISTS (SELECT 1 FROM reviews WHERE review_id = ?1)",
            [review_id.as_str()],
            |r| r.get(0),
        )?;
        if found {
            Ok(())
        } else {
            Err(Error::not_found("review", review_id.as_str()))
        }
    }

    // corpus

    /// Inserts already-deduplicated records and their index keys.
    ///
    /// An id or DOI key that is already taken means another writer got there
    /// first; the whole batch is refused with a retriable conflict.
    pub fn upsert_papers(&self, review_id: &ReviewId, records: &[PaperRecord]) -> Result<Vec<PaperId>> {
        if records.is_empty() {
            return Ok(Vec::new());
        }
        self.require_review(review_id)?;
        let mut seq = next_seq(&self.0, "papers", review_id)?;
        let mut insert_paper = self
            .0
            .prepare_cached("INSERT INTO papers (review_id, paper_id, seq, record) VALUES (?1, ?2, ?3, ?4)")?;
        let mut insert_key = self.0.prepare_cached(
            "INSERT INTO paper_keys (review_id, key, paper_id, has_doi) VALUES (?1, ?2, ?3, ?4)",
        )?;
        let conflict = |e: rusqlite::Error, id: &PaperId| {
            if is_constraint(&e) {
                Error::Conflict(format!("paper {id} collides with a stored paper"))
            } else {
                e.into()
            }
        };
        let mut ids = Vec::with_capacity(records.len());
        for record in records {
            insert_paper
                .execute(params![review_id.as_str(), record.id.as_str(), seq, to_json(record)?])
                .map_err(|e| conflict(e, &record.id))?;
            for entry in KeyEntry::for_record(record) {
                insert_key
                    .execute(params![review_id.as_str(), entry.key, entry.paper_id.as_str(), entry.has_doi])
                    .map_err(|e| conflict(e, &record.id))?;
            }
            seq += 1;
            ids.push(record.id.clone());
        }
        Ok(ids)
    }

    /// Replaces a stored record's metadata, re-indexing its keys.
    pub fn update_paper(&self, review_id: &ReviewId, record: &PaperRecord) -> Result<()> {
        let n = self.0.execute(
            "UPDATE papers SET record = ?3 WHERE review_id = ?1 AND paper_id = ?2",
            params![review_id.as_str(), record.id.as_str(), to_json(record)?],
        )?;
        if n == 0 {
            return Err(Error::not_found("paper", record.id.as_str()));
        }
        self.0.execute(
            "DELETE FROM paper_keys WHERE review_id = ?1 AND paper_id = ?2",
            params![review_id.as_str(), record.id.as_str()],
        )?;
        for entry in KeyEntry::for_record(record) {
            self.0
                .execute(
                    "INSERT INTO paper_keys (review_id, key, paper_id, has_doi) VALUES (?1, ?2, ?3, ?4)",
                    params![review_id.as_str(), entry.key, entry.paper_id.as_str(), entry.has_doi],
                )
                .map_err(|e| {
                    if is_constraint(&e) {
                        Error::Conflict(format!("paper {} collides with a stored paper", record.id))
                    } else {
                        e.into()
                    }
                })?;
        }
        Ok(())
    }

    pub fn paper(&self, review_id: &ReviewId, paper_id: &PaperId) -> Result<Option<PaperRecord>> {
        let text: Option<String> = self
            .0
            .query_row(
                "SELECT record FROM papers WHERE review_id = ?1 AND paper_id = ?2",
                params![review_id.as_str(), paper_id.as_str()],
                |r| r.get(0),
            )
            .optional()?;
        text.as_deref().map(from_json).transpose()
    }

    /// The whole corpus in insertion order.
    pub fn papers(&self, review_id: &ReviewId) -> Result<Vec<PaperRecord>> {
        self.require_review(review_id)?;
        let mut stmt = self.0.prepare_cached("SELECT record FROM papers WHERE review_id = ?1 ORDER BY seq")?;
        let rows = stmt.query_map([review_id.as_str()], |r| r.get::<_, String>(0))?;
        rows.map(|r| from_json(&r?)).collect()
    }

    pub fn paper_count(&self, review_id: &ReviewId) -> Result<usize> {
        self.require_review(review_id)?;
        let n: i64 = self
            .0
            .query_row("SELECT COUNT(*) FROM papers WHERE review_id = ?1", [review_id.as_str()], |r| r.get(0))?;
        Ok(n as usize)
    }

    /// The key index used to deduplicate new batches against this corpus.
    pub fn corpus_key_index(&self, review_id: &ReviewId) -> Result<CorpusIndex> {
        self.require_review(review_id)?;
        let mut stmt = self
            .0
            .prepare_cached("SELECT key, paper_id, has_doi FROM paper_keys WHERE review_id = ?1")?;
        let rows = stmt.query_map([review_id.as_str()], |r| {
            Ok(KeyEntry { key: r.get(0)?, paper_id: PaperId::new(r.get::<_, String>(1)?), has_doi: r.get(2)? })
        })?;
        let mut index = CorpusIndex::from_entries(rows.collect::<rusqlite::Result<Vec<_>>>()?);
        // papers with no usable key are still known by id
        let mut ids = self.0.prepare_cached("SELECT paper_id FROM papers WHERE review_id = ?1")?;
        for id in ids.query_map([review_id.as_str()], |r| r.get::<_, String>(0))? {
            index.insert_id(PaperId::new(id?));
        }
        Ok(index)
    }

    // decisions

    pub fn latest_revision(
        &self,
        review_id: &ReviewId,
        paper_id: &PaperId,
        reviewer_id: &ReviewerId,
        origin: DecisionOrigin,
    ) -> Result<u64> {
        let rev: Option<i64> = self.0.query_row(
            "SELECT MAX(revision) FROM decisions
             WHERE review_id = ?1 AND paper_id = ?2 AND reviewer_id = ?3 AND origin = ?4",
            params![review_id.as_str(), paper_id.as_str(), reviewer_id.as_str(), origin.as_str()],
            |r| r.get(0),
        )?;
        Ok(rev.unwrap_or(0) as u64)
    }

    /// Appends `decision` with the next revision for its
    /// (paper, reviewer, origin) and returns the stored copy.
    pub fn append_decision(&self, review_id: &ReviewId, decision: &ScreeningDecision) -> Result<ScreeningDecision> {
        let mut stored = decision.clone();
        stored.revision =
            self.latest_revision(review_id, &decision.paper_id, &decision.reviewer_id, decision.origin)? + 1;
        let seq = next_seq(&self.0, "decisions", review_id)?;
        self.0
            .execute(
                "INSERT INTO decisions (review_id, seq, paper_id, reviewer_id, origin, revision, body)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7)",
                params![
                    review_id.as_str(),
                    seq,
                    stored.paper_id.as_str(),
                    stored.reviewer_id.as_str(),
                    stored.origin.as_str(),
                    stored.revision as i64,
                    to_json(&stored)?
                ],
            )
            .map_err(|e| {
                if is_constraint(&e) {
                    Error::not_found("paper", decision.paper_id.as_str())
                } else {
                    e.into()
                }
            })?;
        Ok(stored)
    }

    /// Every stored decision, oldest first.
    pub fn decisions(&self, review_id: &ReviewId) -> Result<Vec<LoggedDecision>> {
        self.require_review(review_id)?;
        let mut stmt =
            self.0.prepare_cached("SELECT seq, body FROM decisions WHERE review_id = ?1 ORDER BY seq")?;
        let rows = stmt.query_map([review_id.as_str()], |r| Ok((r.get::<_, i64>(0)?, r.get::<_, String>(1)?)))?;
        rows.map(|r| {
            let (seq, body) = r?;
            Ok(LoggedDecision { seq, decision: from_json(&body)? })
        })
        .collect()
    }

    // classifiers

    pub fn latest_classifier_version(&self, review_id: &ReviewId, kind: ClassifierKind) -> Result<u64> {
        let v: Option<i64> = self.0.query_row(
            "SELECT MAX(version) FROM classifiers WHERE review_id = ?1 AND kind = ?2",
            params![review_id.as_str(), kind.as_str()],
            |r| r.get(0),
        )?;
        Ok(v.unwrap_or(0) as u64)
    }

    pub fn insert_classifier(&self, review_id: &ReviewId, model: &TrainedClassifier) -> Result<()> {
        self.0
            .execute(
                "INSERT INTO classifiers (review_id, kind, version, trained_at, model) VALUES (?1, ?2, ?3, ?4, ?5)",
                params![
                    review_id.as_str(),
                    model.kind.as_str(),
                    model.version as i64,
                    model.trained_on.trained_at.to_rfc3339(),
                    to_json(model)?
                ],
            )
            .map_err(|e| {
                if is_constraint(&e) {
                    Error::Conflict(format!("{} already exists", model.model_tag()))
                } else {
                    e.into()
                }
            })?;
        Ok(())
    }

    pub fn latest_classifier(&self, review_id: &ReviewId, kind: ClassifierKind) -> Result<Option<TrainedClassifier>> {
        let text: Option<String> = self
            .0
            .query_row(
                "SELECT model FROM classifiers WHERE review_id = ?1 AND kind = ?2 ORDER BY version DESC LIMIT 1",
                params![review_id.as_str(), kind.as_str()],
                |r| r.get(0),
            )
            .optional()?;
        text.as_deref().map(from_json).transpose()
    }

    // QA predictions

    pub fn insert_qa_predictions(&self, review_id: &ReviewId, predictions: &[QaPrediction]) -> Result<()> {
        let mut seq = next_seq(&self.0, "qa_predictions", review_id)?;
        let mut stmt = self.0.prepare_cached(
            "INSERT INTO qa_predictions (review_id, seq, paper_id, criterion_id, body) VALUES (?1, ?2, ?3, ?4, ?5)",
        )?;
        for p in predictions {
            stmt.execute(params![
                review_id.as_str(),
                seq,
                p.paper_id.as_str(),
                p.criterion_id.as_str(),
                to_json(p)?
            ])
            .map_err(|e| {
                if is_constraint(&e) {
                    Error::not_found("paper", p.paper_id.as_str())
                } else {
                    e.into()
                }
            })?;
            seq += 1;
        }
        Ok(())
    }

    pub fn qa_predictions(&self, review_id: &ReviewId) -> Result<Vec<QaPrediction>> {
        self.require_review(review_id)?;
        let mut stmt =
            self.0.prepare_cached("SELECT body FROM qa_predictions WHERE review_id = ?1 ORDER BY seq")?;
        let rows = stmt.query_map([review_id.as_str()], |r| r.get::<_, String>(0))?;
        rows.map(|r| from_json(&r?)).collect()
    }

    // search runs

    pub fn insert_search_run(&self, run: &SearchRun) -> Result<()> {
        let seq = next_seq(&self.0, "search_runs", &run.review_id)?;
        self.0.execute(
            "INSERT INTO search_runs (review_id, seq, body) VALUES (?1, ?2, ?3)",
            params![run.review_id.as_str(), seq, to_json(run)?],
        )?;
        Ok(())
    }

    pub fn search_runs(&self, review_id: &ReviewId) -> Result<Vec<SearchRun>> {
        self.require_review(review_id)?;
        let mut stmt = self.0.prepare_cached("SELECT body FROM search_runs WHERE review_id = ?1 ORDER BY seq")?;
        let rows = stmt.query_map([review_id.as_str()], |r| r.get::<_, String>(0))?;
        rows.map(|r| from_json(&r?)).collect()
    }

    // idempotency keys

    pub fn idempotent_response(&self, key: &str) -> Result<Option<IdempotentResponse>> {
        Ok(self
            .0
            .query_row(
                "SELECT fingerprint, status, body FROM idempotency WHERE key = ?1",
                [key],
                |r| Ok(IdempotentResponse { fingerprint: r.get(0)?, status: r.get(1)?, body: r.get(2)? }),
            )
            .optional()?)
    }

    /// Records the response for `key`; the first response stored wins.
    pub fn store_idempotent_response(&self, key: &str, response: &IdempotentResponse, at: DateTime<Utc>) -> Result<()> {
        self.0.execute(
            "INSERT OR IGNORE INTO idempotency (key, fingerprint, status, body, created_at) VALUES (?1, ?2, ?3, ?4, ?5)",
            params![key, response.fingerprint, response.status, response.body, at.to_rfc3339()],
        )?;
        Ok(())
    }
}
