//! Source adapters. Every connector kind turns its provider's native response
//! into [`RawRecord`]s; the wire kind speaks the plain search contract used by
//! the internal index and by test stubs.

use std::time::Duration;

use serde::Deserialize;
use serde_json::Value;

use super::{ConnectorConfig, ConnectorKind, RawRecord};

/// One page of source records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Page {
    /// Total hits the source advertises, when it says.
    pub total: Option<u64>,
    pub records: Vec<RawRecord>,
    /// Entries that could not be read as records.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FetchError {
    #[error("request failed: {0}")]
    Transport(String),
    #[error("timed out")]
    Timeout,
    #[error("source returned HTTP {0}")]
    Status(u16),
    #[error("unreadable payload: {0}")]
    Payload(String),
}

impl From<reqwest::Error> for FetchError {
    fn from(e: reqwest::Error) -> Self {
        if e.is_timeout() {
            FetchError::Timeout
        } else {
            FetchError::Transport(e.to_string())
        }
    }
}

/// Reads a list of loosely typed entries, skipping any that do not fit.
fn lenient<T: for<'de> Deserialize<'de>>(items: Vec<Value>, map: impl Fn(T) -> Option<RawRecord>) -> (Vec<RawRecord>, usize) {
    let mut records = Vec::with_capacity(items.len());
    let mut skipped = 0;
    for item in items {
        match serde_json::from_value::<T>(item).ok().and_then(&map) {
            Some(r) => records.push(r),
            None => skipped += 1,
        }
    }
    (records, skipped)
}

fn parse_json(body: &str) -> Result<Value, FetchError> {
    serde_json::from_str(body).map_err(|e| FetchError::Payload(e.to_string()))
}

fn array_at(v: &mut Value, key: &str) -> Result<Vec<Value>, FetchError> {
    match v.get_mut(key).map(Value::take) {
        Some(Value::Array(items)) => Ok(items),
        Some(Value::Null) | None => Ok(Vec::new()),
        Some(_) => Err(FetchError::Payload(format!("`{key}` is not a list"))),
    }
}

// Wire contract

pub fn parse_wire_page(body: &str) -> Result<Page, FetchError> {
    let mut v = parse_json(body)?;
    let total = v.get("total").and_then(Value::as_u64);
    let items = array_at(&mut v, "results")?;
    let (records, skipped) = lenient::<RawRecord>(items, Some);
    Ok(Page { total, records, skipped })
}

// Semantic Scholar Graph API, /graph/v1/paper/search

pub const SEMANTIC_SCHOLAR_FIELDS: &str = "title,abstract,authors,venue,year,externalIds,url";

#[derive(Deserialize)]
struct S2Author {
    name: Option<String>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct S2Paper {
    paper_id: String,
    title: Option<String>,
    #[serde(rename = "abstract")]
    abstract_text: Option<String>,
    #[serde(default)]
    authors: Vec<S2Author>,
    venue: Option<String>,
    year: Option<Value>,
    #[serde(default)]
    external_ids: Option<std::collections::BTreeMap<String, Value>>,
    url: Option<String>,
}

pub fn parse_semantic_scholar_page(body: &str) -> Result<Page, FetchError> {
    let mut v = parse_json(body)?;
    let total = v.get("total").and_then(Value::as_u64);
    let items = array_at(&mut v, "data")?;
    let (records, skipped) = lenient::<S2Paper>(items, |p| {
        let doi = p
            .external_ids
            .as_ref()
            .and_then(|ids| ids.get("DOI"))
            .and_then(Value::as_str)
            .map(str::to_owned);
        Some(RawRecord {
            title: p.title,
            abstract_text: p.abstract_text,
            authors: p.authors.into_iter().filter_map(|a| a.name).collect(),
            venue: p.venue,
            year: p.year,
            doi,
            url: p.url,
            source_id: Some(p.paper_id),
        })
    });
    Ok(Page { total, records, skipped })
}

// CORE API v3, /v3/search/works

#[derive(Deserialize)]
struct CoreAuthor {
    name: Option<String>,
}

#[derive(Deserialize)]
struct CoreJournal {
    title: Option<String>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct CoreWork {
    id: Value,
    title: Option<String>,
    #[serde(rename = "abstract")]
    abstract_text: Option<String>,
    #[serde(default)]
    authors: Vec<CoreAuthor>,
    year_published: Option<Value>,
    doi: Option<String>,
    download_url: Option<String>,
    #[serde(default)]
    journals: Vec<CoreJournal>,
    publisher: Option<String>,
}

pub fn parse_core_page(body: &str) -> Result<Page, FetchError> {
    let mut v = parse_json(body)?;
    let total = v.get("totalHits").and_then(Value::as_u64);
    let items = array_at(&mut v, "results")?;
    let (records, skipped) = lenient::<CoreWork>(items, |w| {
        let source_id = match w.id {
            Value::String(s) => s,
            Value::Number(n) => n.to_string(),
            _ => return None,
        };
        let venue = w.journals.into_iter().find_map(|j| j.title).or(w.publisher);
        Some(RawRecord {
            title: w.title,
            abstract_text: w.abstract_text,
            authors: w.authors.into_iter().filter_map(|a| a.name).collect(),
            venue,
            year: w.year_published,
            doi: w.doi,
            url: w.download_url,
            source_id: Some(source_id),
        })
    });
    Ok(Page { total, records, skipped })
}

// PubMed E-utilities: esearch for ids, then esummary for metadata

/// Ids and hit count from an `esearch.fcgi?retmode=json` response.
pub fn parse_pubmed_search(body: &str) -> Result<(u64, Vec<String>), FetchError> {
    let v = parse_json(body)?;
    let result = v
        .get("esearchresult")
        .ok_or_else(|| FetchError::Payload("missing esearchresult".into()))?;
    let count = result
        .get("count")
        .and_then(|c| c.as_str().and_then(|s| s.parse().ok()).or_else(|| c.as_u64()))
        .unwrap_or(0);
    let ids = result
        .get("idlist")
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(|i| i.as_str().map(str::to_owned)).collect())
        .unwrap_or_default();
    Ok((count, ids))
}

#[derive(Deserialize)]
struct PubmedAuthor {
    name: Option<String>,
}

#[derive(Deserialize)]
struct PubmedArticleId {
    idtype: String,
    value: String,
}

#[derive(Deserialize)]
struct PubmedSummary {
    title: Option<String>,
    #[serde(default)]
    authors: Vec<PubmedAuthor>,
    fulljournalname: Option<String>,
    source: Option<String>,
    pubdate: Option<String>,
    #[serde(default)]
    articleids: Vec<PubmedArticleId>,
}

/// Records from an `esummary.fcgi?retmode=json` response, in `ids` order.
pub fn parse_pubmed_summary(body: &str, ids: &[String]) -> Result<Page, FetchError> {
    let mut v = parse_json(body)?;
    let mut result = v
        .get_mut("result")
        .map(Value::take)
        .ok_or_else(|| FetchError::Payload("missing result".into()))?;
    let mut records = Vec::new();
    let mut skipped = 0;
    for id in ids {
        let entry = result.get_mut(id).map(Value::take);
        let parsed = entry.and_then(|e| serde_json::from_value::<PubmedSummary>(e).ok());
        let Some(s) = parsed else {
            skipped += 1;
            continue;
        };
        let doi = s
            .articleids
            .iter()
            .find(|a| a.idtype.eq_ignore_ascii_case("doi"))
            .map(|a| a.value.clone());
        records.push(RawRecord {
            // summaries end titles with a period; keep it, normalization ignores it
            title: s.title,
            abstract_text: None,
            authors: s.authors.into_iter().filter_map(|a| a.name).collect(),
            venue: s.fulljournalname.or(s.source),
            year: s.pubdate.map(Value::String),
            doi,
            url: Some(format!("https://pubmed.ncbi.nlm.nih.gov/{id}/")),
            source_id: Some(id.clone()),
        });
    }
    Ok(Page { total: None, records, skipped })
}

/// HTTP side of one configured connector.
#[derive(Debug, Clone)]
pub struct SourceClient {
    config: ConnectorConfig,
    http: reqwest::Client,
    api_key: Option<String>,
}

impl SourceClient {
    pub fn new(config: ConnectorConfig) -> Result<Self, FetchError> {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .user_agent(concat!("sieve/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| FetchError::Transport(e.to_string()))?;
        let api_key = config
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|k| !k.is_empty());
        Ok(SourceClient { config, http, api_key })
    }

    pub fn config(&self) -> &ConnectorConfig {
        &self.config
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.base_url.trim_end_matches('/'), path)
    }

    async fn get_text(&self, req: reqwest::RequestBuilder) -> Result<String, FetchError> {
        let resp = req.send().await?;
        let status = resp.status();
        if !status.is_success() {
            return Err(FetchError::Status(status.as_u16()));
        }
        Ok(resp.text().await?)
    }

    /// Requests one page. `min_year` is only sent to sources that filter by
    /// year themselves.
    ///
    /// PubMed needs two round trips per page; both count against the budget
    /// only once because the caller acquires one rate slot per page.
    pub async fn fetch_page(
        &self,
        query: &str,
        limit: u32,
        offset: u64,
        min_year: Option<i32>,
    ) -> Result<Page, FetchError> {
        let year = min_year.filter(|_| self.config.supports_year_filter);
        match self.config.kind {
            ConnectorKind::Wire => {
                let mut params = vec![
                    ("q", query.to_owned()),
                    ("limit", limit.to_string()),
                    ("offset", offset.to_string()),
                ];
                if let Some(y) = year {
                    params.push(("min_year", y.to_string()));
                }
                let body = self.get_text(self.http.get(self.url("/search")).query(&params)).await?;
                parse_wire_page(&body)
            }
            ConnectorKind::SemanticScholar => {
                let mut params = vec![
                    ("query", query.to_owned()),
                    ("limit", limit.to_string()),
                    ("offset", offset.to_string()),
                    ("fields", SEMANTIC_SCHOLAR_FIELDS.to_owned()),
                ];
                if let Some(y) = year {
                    params.push(("year", format!("{y}-")));
                }
                let mut req = self.http.get(self.url("/graph/v1/paper/search")).query(&params);
                if let Some(key) = &self.api_key {
                    req = req.header("x-api-key", key);
                }
                parse_semantic_scholar_page(&self.get_text(req).await?)
            }
            ConnectorKind::Core => {
                let params = [
                    ("q", query.to_owned()),
                    ("limit", limit.to_string()),
                    ("offset", offset.to_string()),
                ];
                let mut req = self.http.get(self.url("/v3/search/works")).query(&params);
                if let Some(key) = &self.api_key {
                    req = req.bearer_auth(key);
                }
                parse_core_page(&self.get_text(req).await?)
            }
            ConnectorKind::Pubmed => {
                let mut params = vec![
                    ("db", "pubmed".to_owned()),
                    ("retmode", "json".to_owned()),
                    ("term", query.to_owned()),
                    ("retmax", limit.to_string()),
                    ("retstart", offset.to_string()),
                ];
                if let Some(y) = year {
                    params.push(("datetype", "pdat".into()));
                    params.push(("mindate", y.to_string()));
                    params.push(("maxdate", "3000".into()));
                }
                if let Some(key) = &self.api_key {
                    params.push(("api_key", key.clone()));
                }
                let body = self
                    .get_text(self.http.get(self.url("/esearch.fcgi")).query(&params))
                    .await?;
                let (count, ids) = parse_pubmed_search(&body)?;
                if ids.is_empty() {
                    return Ok(Page { total: Some(count), ..Page::default() });
                }
                let mut params = vec![
                    ("db", "pubmed".to_owned()),
                    ("retmode", "json".to_owned()),
                    ("id", ids.join(",")),
                ];
                if let Some(key) = &self.api_key {
                    params.push(("api_key", key.clone()));
                }
                let body = self
                    .get_text(self.http.get(self.url("/esummary.fcgi")).query(&params))
                    .await?;
                let mut page = parse_pubmed_summary(&body, &ids)?;
                page.total = Some(count);
                Ok(page)
            }
        }
    }
}
