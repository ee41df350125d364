//! Federated search: fans protocol queries out to the configured connectors,
//! applies the per-(query, connector) cap and the living-update year filter,
//! and normalizes what comes back into [`PaperRecord`]s.

pub mod connectors;
pub mod rate;

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{DateTime, Datelike, Utc};
use futures::future::join_all;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::catalog::{plausible_year, PaperId, PaperRecord, ReviewId, ReviewProtocol};
use crate::error::{Error, Result};
use crate::ingest::{collapse_ws, non_empty, year_prefix};

pub use connectors::{FetchError, Page, SourceClient};
pub use rate::RateLimiter;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnectorKind {
    /// The plain `/search` contract (internal index, stubs).
    #[default]
    Wire,
    SemanticScholar,
    Core,
    Pubmed,
}

fn default_rate_limit() -> f64 {
    1.0
}

fn default_page_size() -> u32 {
    100
}

fn default_timeout() -> f64 {
    30.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectorConfig {
    pub name: String,
    #[serde(default)]
    pub kind: ConnectorKind,
    pub base_url: String,
    /// Environment variable holding the API key, if the source takes one.
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// Requests per second.
    #[serde(default = "default_rate_limit")]
    pub rate_limit: f64,
    #[serde(default = "default_page_size")]
    pub max_page_size: u32,
    #[serde(default)]
    pub supports_year_filter: bool,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

impl ConnectorConfig {
    pub fn wire(name: impl Into<String>, base_url: impl Into<String>) -> Self {
        ConnectorConfig {
            name: name.into(),
            kind: ConnectorKind::Wire,
            base_url: base_url.into(),
            api_key_env: None,
            rate_limit: default_rate_limit(),
            max_page_size: default_page_size(),
            supports_year_filter: true,
            timeout_secs: default_timeout(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Config("connector name must not be empty".into()));
        }
        if !(self.rate_limit.is_finite() && self.rate_limit > 0.0) {
            return Err(Error::Config(format!("connector {}: rate_limit must be > 0", self.name)));
        }
        if self.max_page_size == 0 {
            return Err(Error::Config(format!("connector {}: max_page_size must be > 0", self.name)));
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(Error::Config(format!("connector {}: timeout_secs must be > 0", self.name)));
        }
        Ok(())
    }
}

/// A source record before normalization, as in the wire contract.
///
/// `year` is kept loose because sources disagree on its type.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    #[serde(default)]
    pub title: Option<String>,
    #[serde(default, rename = "abstract")]
    pub abstract_text: Option<String>,
    #[serde(default)]
    pub authors: Vec<String>,
    #[serde(default)]
    pub venue: Option<String>,
    #[serde(default)]
    pub year: Option<Value>,
    #[serde(default)]
    pub doi: Option<String>,
    #[serde(default)]
    pub url: Option<String>,
    #[serde(default)]
    pub source_id: Option<String>,
}

impl RawRecord {
    /// Year as an integer if it can be read; anything else counts as absent.
    pub fn parsed_year(&self, current_year: i32) -> Option<i32> {
        match self.year.as_ref()? {
            Value::Number(n) => n
                .as_i64()
                .and_then(|y| i32::try_from(y).ok())
                .and_then(|y| plausible_year(y, current_year)),
            Value::String(s) => year_prefix(s, current_year),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("record has no title")]
pub struct UntitledRecord;

/// Maps a source record onto the catalog type.
///
/// Unreadable optional fields are dropped. The id is derived from the
/// connector name and the source's own id (or, lacking one, the title and
/// year), so repeated fetches of the same record give the same id.
pub fn normalize_record(
    raw: &RawRecord,
    source_name: &str,
    retrieved_at: DateTime<Utc>,
) -> Result<PaperRecord, UntitledRecord> {
    let title = raw
        .title
        .as_deref()
        .map(collapse_ws)
        .and_then(non_empty)
        .ok_or(UntitledRecord)?;
    let year = raw.parsed_year(retrieved_at.year());
    let source_id = raw.source_id.as_deref().map(str::trim).filter(|s| !s.is_empty());
    let id = match source_id {
        Some(sid) => PaperId::derive(&[b"search", source_name.as_bytes(), sid.as_bytes()]),
        None => {
            let y = year.map(|y| y.to_string()).unwrap_or_default();
            PaperId::derive(&[b"search-untracked", source_name.as_bytes(), title.as_bytes(), y.as_bytes()])
        }
    };
    let mut record = PaperRecord::new(id, title, source_name, retrieved_at);
    record.abstract_text = raw.abstract_text.as_deref().map(collapse_ws).and_then(non_empty);
    record.authors = raw
        .authors
        .iter()
        .map(|a| collapse_ws(a))
        .filter(|a| !a.is_empty())
        .collect();
    record.venue = raw.venue.as_deref().map(collapse_ws).and_then(non_empty);
    record.year = year;
    record.url = raw.url.as_deref().map(str::trim).map(str::to_owned).and_then(non_empty);
    if let Some(sid) = source_id {
        record.external_ids.insert(source_name.to_owned(), sid.to_owned());
    }
    if let Some(doi) = &raw.doi {
        record.set_doi(doi);
    }
    Ok(record)
}

/// Page sizes needed to fetch `limit` records: full pages, then the remainder.
pub fn page_plan(limit: u32, max_page_size: u32) -> Vec<u32> {
    let size = max_page_size.max(1);
    let mut plan = vec![size; (limit / size) as usize];
    if !limit.is_multiple_of(size) {
        plan.push(limit % size);
    }
    plan
}

/// A connector with its shared request budget.
#[derive(Debug, Clone)]
pub struct Connector {
    pub client: SourceClient,
    pub limiter: Arc<RateLimiter>,
}

impl Connector {
    pub fn new(config: ConnectorConfig) -> Result<Self> {
        config.validate()?;
        let limiter = Arc::new(RateLimiter::new(config.rate_limit));
        let client = SourceClient::new(config).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Connector { client, limiter })
    }

    pub fn name(&self) -> &str {
        &self.client.config().name
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FetchOutcome {
    pub records: Vec<RawRecord>,
    /// Malformed entries skipped.
    pub skipped: usize,
    /// Records dropped client-side for predating `min_year`.
    pub filtered_by_year: usize,
    pub requests: usize,
}

/// Fetches up to `limit` records for `query`, one rate-limited page at a time.
///
/// Stops early once the source runs dry. When `min_year` is set, records with
/// an earlier year are dropped here even if the source was asked to filter;
/// records without a year are kept.
pub async fn fetch_connector(
    connector: &Connector,
    query: &str,
    limit: u32,
    min_year: Option<i32>,
    current_year: i32,
) -> Result<FetchOutcome, FetchError> {
    let mut out = FetchOutcome::default();
    let mut offset = 0u64;
    let mut fetched = 0u64;
    for size in page_plan(limit, connector.client.config().max_page_size) {
        connector.limiter.acquire().await;
        let page = connector.client.fetch_page(query, size, offset, min_year).await?;
        out.requests += 1;
        out.skipped += page.skipped;
        let returned = (page.records.len() + page.skipped) as u64;
        let mut records = page.records;
        // a source may ignore `limit`; never keep more than asked for
        records.truncate(size as usize);
        fetched += records.len() as u64;
        for r in records {
            let too_old = match (min_year, r.parsed_year(current_year)) {
                (Some(min), Some(y)) => y < min,
                _ => false,
            };
            if too_old {
                out.filtered_by_year += 1;
            } else {
                out.records.push(r);
            }
        }
        offset += u64::from(size);
        let exhausted = returned < u64::from(size) || page.total.is_some_and(|t| offset >= t);
        if exhausted || fetched >= u64::from(limit) {
            break;
        }
    }
    Ok(out)
}

/// All configured connectors by name.
#[derive(Debug, Clone, Default)]
pub struct ConnectorRegistry {
    connectors: BTreeMap<String, Connector>,
}

impl ConnectorRegistry {
    pub fn new(configs: impl IntoIterator<Item = ConnectorConfig>) -> Result<Self> {
        let mut connectors = BTreeMap::new();
        for config in configs {
            let name = config.name.clone();
            if connectors.insert(name.clone(), Connector::new(config)?).is_some() {
                return Err(Error::Config(format!("duplicate connector name {name:?}")));
            }
        }
        Ok(ConnectorRegistry { connectors })
    }

    pub fn names(&self) -> Vec<String> {
        self.connectors.keys().cloned().collect()
    }

    pub fn get(&self, name: &str) -> Option<&Connector> {
        self.connectors.get(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed,
}

/// Outcome of one (query, connector) fetch within a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchCell {
    pub query: String,
    pub connector: String,
    pub status: CellStatus,
    /// Normalized records handed to deduplication.
    pub fetched: usize,
    pub skipped: usize,
    pub untitled: usize,
    pub filtered_by_year: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Report of one search run.
///
/// `new_papers + duplicates_suppressed` equals the sum of `fetched` over all
/// cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRun {
    pub review_id: ReviewId,
    pub executed_at: DateTime<Utc>,
    /// Present iff this run was a living update.
    pub min_year: Option<i32>,
    pub per_query_counts: Vec<SearchCell>,
    pub new_papers: usize,
    pub duplicates_suppressed: usize,
}

impl SearchRun {
    pub fn fetched_total(&self) -> usize {
        self.per_query_counts.iter().map(|c| c.fetched).sum()
    }
}

/// Records gathered by [`federate`], before deduplication.
#[derive(Debug, Clone, Default)]
pub struct Federated {
    pub cells: Vec<SearchCell>,
    pub records: Vec<PaperRecord>,
}

/// Runs every (query, connector) fetch of `protocol` concurrently.
///
/// Cells come back in (query, connector) protocol order regardless of
/// completion order, and so do their records.
pub async fn federate(
    registry: &ConnectorRegistry,
    protocol: &ReviewProtocol,
    min_year: Option<i32>,
    now: DateTime<Utc>,
) -> Result<Federated> {
    protocol.validate(&registry.names())?;
    let mut jobs = Vec::new();
    for query in protocol.queries.iter().filter(|q| !q.trim().is_empty()) {
        for name in &protocol.connectors {
            let connector = registry
                .get(name)
                .ok_or_else(|| Error::validation("connectors", format!("unknown connector {name:?}")))?;
            jobs.push(async move {
                let outcome = fetch_connector(connector, query, protocol.top_n, min_year, now.year()).await;
                (query.clone(), name.clone(), outcome)
            });
        }
    }
    let results = join_all(jobs).await;

    let mut out = Federated::default();
    for (query, connector, outcome) in results {
        match outcome {
            Ok(fetch) => {
                let mut untitled = 0;
                let mut fetched = 0;
                for raw in &fetch.records {
                    match normalize_record(raw, &connector, now) {
                        Ok(r) => {
                            out.records.push(r);
                            fetched += 1;
                        }
                        Err(UntitledRecord) => untitled += 1,
                    }
                }
                out.cells.push(SearchCell {
                    query,
                    connector,
                    status: CellStatus::Ok,
                    fetched,
                    skipped: fetch.skipped,
                    untitled,
                    filtered_by_year: fetch.filtered_by_year,
                    error: None,
                });
            }
            Err(e) => {
                tracing::warn!(%query, %connector, error = %e, "search cell failed");
                out.cells.push(SearchCell {
                    query,
                    connector,
                    status: CellStatus::Failed,
                    fetched: 0,
                    skipped: 0,
                    untitled: 0,
                    filtered_by_year: 0,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    if !out.cells.is_empty() && out.cells.iter().all(|c| c.status == CellStatus::Failed) {
        return Err(Error::AllConnectorsFailed {
            failures: out
                .cells
                .iter()
                .map(|c| format!("{} / {}: {}", c.query, c.connector, c.error.as_deref().unwrap_or("")))
                .collect(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn now() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 3, 1, 0, 0, 0).unwrap()
    }

    #[test]
    fn ceiling_division_plan() {
        assert_eq!(page_plan(250, 100), vec![100, 100, 50]);
        assert_eq!(page_plan(500, 100), vec![100; 5]);
        assert_eq!(page_plan(7, 100), vec![7]);
        assert_eq!(page_plan(0, 100), Vec::<u32>::new());
    }

    #[test]
    fn doi_prefix_and_case() {
        let raw = RawRecord {
            title: Some("T".into()),
            doi: Some("HTTPS://DOI.ORG/10.1/A".into()),
            source_id: Some("x".into()),
            ..Default::default()
        };
        let r = normalize_record(&raw, "s2", now()).unwrap();
        assert_eq!(r.doi(), Some("10.1/a"));
        assert_eq!(r.sources.iter().collect::<Vec<_>>(), vec!["s2"]);
    }

    #[test]
    fn unreadable_year_is_absent() {
        let mut raw = RawRecord { title: Some("T".into()), ..Default::default() };
        raw.year = Some(Value::String("twenty-twenty".into()));
        assert_eq!(normalize_record(&raw, "s", now()).unwrap().year, None);
        raw.year = Some(Value::from(2020));
        assert_eq!(normalize_record(&raw, "s", now()).unwrap().year, Some(2020));
        raw.year = Some(Value::String("2019-05-01".into()));
        assert_eq!(normalize_record(&raw, "s", now()).unwrap().year, Some(2019));
        raw.year = Some(Value::from(3020));
        assert_eq!(normalize_record(&raw, "s", now()).unwrap().year, None);
    }

    #[test]
    fn untitled_is_rejected() {
        let raw = RawRecord { title: Some("   ".into()), ..Default::default() };
        assert_eq!(normalize_record(&raw, "s", now()), Err(UntitledRecord));
        assert_eq!(normalize_record(&RawRecord::default(), "s", now()), Err(UntitledRecord));
    }

    #[test]
    fn ids_are_stable_per_source_record() {
        let raw = RawRecord { title: Some("T".into()), source_id: Some("42".into()), ..Default::default() };
        let a = normalize_record(&raw, "core", now()).unwrap();
        let b = normalize_record(&raw, "core", now()).unwrap();
        let c = normalize_record(&raw, "s2", now()).unwrap();
        assert_eq!(a.id, b.id);
        assert_ne!(a.id, c.id);
    }

    #[test]
    fn registry_rejects_bad_configs() {
        let mut c = ConnectorConfig::wire("a", "http://localhost:1");
        c.rate_limit = 0.0;
        assert!(ConnectorRegistry::new([c]).is_err());
        let c = ConnectorConfig::wire("a", "http://localhost:1");
        assert!(ConnectorRegistry::new([c.clone(), c]).is_err());
    }
}
