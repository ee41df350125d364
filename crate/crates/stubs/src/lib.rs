//! Local stand-ins for the external services: a search index speaking the
//! connector wire contract, a text-generation server with deterministic
//! answers, and a GROBID server returning a canned header.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::{DefaultBodyLimit, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::net::TcpListener;

/// Binds `addr` and serves `router` on a background task. Returns the bound
/// address, so `127.0.0.1:0` picks a free port.
pub async fn spawn(router: Router, addr: SocketAddr) -> std::io::Result<SocketAddr> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    tokio::spawn(async move {
        let _ = axum::serve(listener, router).await;
    });
    Ok(local)
}

/// Serves `router` on `addr` until the process ends.
pub async fn serve(router: Router, addr: SocketAddr) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    axum::serve(listener, router).await
}

fn loopback() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 0))
}

// connector

/// One record in the wire format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRecord {
    pub title: String,
    #[serde(rename = "abstract", default, skip_serializing_if = "Option::is_none")]
    pub abstract_text: Option<String>,
    #[serde(default)]
    pub authors: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub venue: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub year: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doi: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    pub source_id: String,
}

impl WireRecord {
    pub fn new(source_id: impl Into<String>, title: impl Into<String>, year: Option<i32>) -> Self {
        WireRecord {
            title: title.into(),
            abstract_text: None,
            authors: Vec::new(),
            venue: None,
            year,
            doi: None,
            url: None,
            source_id: source_id.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchRequest {
    pub q: String,
    pub limit: usize,
    pub offset: usize,
    pub min_year: Option<i32>,
}

#[derive(Debug, Clone)]
enum Corpus {
    Fixed(Vec<WireRecord>),
    /// `total` generated records, record `i` published in `2000 + i % 25`.
    Generated { total: usize, prefix: String },
}

/// A search index with a fixed or generated corpus. Every query sees the
/// same corpus. Requests are logged for inspection.
#[derive(Debug, Clone)]
pub struct ConnectorStub {
    corpus: Corpus,
    honor_min_year: bool,
    log: Arc<Mutex<Vec<SearchRequest>>>,
}

impl ConnectorStub {
    pub fn fixed(records: Vec<WireRecord>) -> Self {
        ConnectorStub { corpus: Corpus::Fixed(records), honor_min_year: true, log: Arc::default() }
    }

    /// Advertises `total` hits and generates them on demand.
    pub fn generated(total: usize, prefix: impl Into<String>) -> Self {
        ConnectorStub {
            corpus: Corpus::Generated { total, prefix: prefix.into() },
            honor_min_year: true,
            log: Arc::default(),
        }
    }

    /// Makes the stub ignore `min_year`, like a provider without year filters.
    pub fn ignoring_min_year(mut self) -> Self {
        self.honor_min_year = false;
        self
    }

    pub fn requests(&self) -> Vec<SearchRequest> {
        self.log.lock().unwrap().clone()
    }

    fn generated_record(prefix: &str, i: usize) -> WireRecord {
        let mut r = WireRecord::new(
            format!("{prefix}-{i}"),
            format!("{prefix} study number {i} on topic {}", i % 97),
            Some(2000 + (i % 25) as i32),
        );
        r.authors = vec![format!("Author {}", i % 13)];
        r
    }

    fn page(&self, req: &SearchRequest) -> (usize, Vec<WireRecord>) {
        let min_year = req.min_year.filter(|_| self.honor_min_year);
        let keep = |r: &WireRecord| match (min_year, r.year) {
            (Some(min), Some(y)) => y >= min,
            _ => true,
        };
        match &self.corpus {
            Corpus::Fixed(records) => {
                let matching: Vec<&WireRecord> = records.iter().filter(|r| keep(r)).collect();
                let page = matching.iter().skip(req.offset).take(req.limit).map(|r| (*r).clone()).collect();
                (matching.len(), page)
            }
            Corpus::Generated { total, prefix } => {
                // the advertised total ignores the year filter; filtered
                // records are simply left out of each page
                let end = (req.offset + req.limit).min(*total);
                let page = (req.offset.min(end)..end)
                    .map(|i| Self::generated_record(prefix, i))
                    .filter(|r| keep(r))
                    .collect();
                (*total, page)
            }
        }
    }

    pub fn router(&self) -> Router {
        Router::new().route("/search", get(search)).with_state(self.clone())
    }

    pub async fn start(&self) -> std::io::Result<SocketAddr> {
        spawn(self.router(), loopback()).await
    }
}

async fn search(State(stub): State<ConnectorStub>, Query(req): Query<SearchRequest>) -> Json<Value> {
    let (total, results) = stub.page(&req);
    stub.log.lock().unwrap().push(req);
    Json(json!({ "total": total, "results": results }))
}

// model

#[derive(Debug, Deserialize)]
struct GenerateRequest {
    #[allow(dead_code)]
    model: String,
    prompt: String,
    #[allow(dead_code)]
    max_new_tokens: u32,
}

/// A text-generation server with deterministic answers.
///
/// Rules are checked in order: the first whose needle occurs in the prompt
/// supplies the reply. Otherwise the reply is "yes" when some word of four
/// or more letters from the question also occurs in the title or abstract,
/// and "no" when none does.
#[derive(Debug, Clone, Default)]
pub struct ModelStub {
    rules: Vec<(String, String)>,
    prompts: Arc<Mutex<Vec<String>>>,
}

impl ModelStub {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_rule(mut self, needle: impl Into<String>, reply: impl Into<String>) -> Self {
        self.rules.push((needle.into(), reply.into()));
        self
    }

    /// Every prompt received so far, in arrival order.
    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().unwrap().clone()
    }

    pub fn answer(&self, prompt: &str) -> String {
        if let Some((_, reply)) = self.rules.iter().find(|(needle, _)| prompt.contains(needle.as_str())) {
            return reply.clone();
        }
        let field = |name: &str| {
            prompt
                .lines()
                .find_map(|l| l.strip_prefix(name))
                .unwrap_or("")
                .to_lowercase()
        };
        let haystack = format!("{} {}", field("Title: "), field("Abstract: "));
        let question = field("Question: ");
        let hit = question
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| w.chars().count() >= 4)
            .any(|w| haystack.contains(w));
        if hit { "yes" } else { "no" }.to_owned()
    }

    pub fn router(&self) -> Router {
        Router::new().route("/generate", post(generate)).with_state(self.clone())
    }

    pub async fn start(&self) -> std::io::Result<SocketAddr> {
        spawn(self.router(), loopback()).await
    }
}

async fn generate(State(stub): State<ModelStub>, Json(req): Json<GenerateRequest>) -> Json<Value> {
    let text = stub.answer(&req.prompt);
    stub.prompts.lock().unwrap().push(req.prompt);
    Json(json!({ "text": text }))
}

// canned responses

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordedRequest {
    pub path: String,
    pub query: Option<String>,
    pub headers: Vec<(String, String)>,
}

/// Serves fixed JSON bodies by path, for testing clients of third-party
/// APIs. Unknown paths get 404.
#[derive(Debug, Clone, Default)]
pub struct FixtureServer {
    bodies: Arc<Vec<(String, String)>>,
    log: Arc<Mutex<Vec<RecordedRequest>>>,
}

impl FixtureServer {
    pub fn new(bodies: impl IntoIterator<Item = (impl Into<String>, impl Into<String>)>) -> Self {
        FixtureServer {
            bodies: Arc::new(bodies.into_iter().map(|(p, b)| (p.into(), b.into())).collect()),
            log: Arc::default(),
        }
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.log.lock().unwrap().clone()
    }

    pub fn router(&self) -> Router {
        Router::new().fallback(fixture).with_state(self.clone())
    }

    pub async fn start(&self) -> std::io::Result<SocketAddr> {
        spawn(self.router(), loopback()).await
    }
}

async fn fixture(State(stub): State<FixtureServer>, req: axum::extract::Request) -> (StatusCode, [(axum::http::HeaderName, &'static str); 1], String) {
    let uri = req.uri();
    let headers = req
        .headers()
        .iter()
        .map(|(k, v)| (k.as_str().to_owned(), v.to_str().unwrap_or("").to_owned()))
        .collect();
    stub.log.lock().unwrap().push(RecordedRequest {
        path: uri.path().to_owned(),
        query: uri.query().map(str::to_owned),
        headers,
    });
    let json = [(axum::http::header::CONTENT_TYPE, "application/json")];
    match stub.bodies.iter().find(|(p, _)| p == uri.path()) {
        Some((_, body)) => (StatusCode::OK, json, body.clone()),
        None => (StatusCode::NOT_FOUND, json, "{}".to_owned()),
    }
}

// grobid

pub const SAMPLE_TEI: &str = r#"<?xml version="1.0" encoding="UTF-8"?>
<TEI xmlns="http://www.tei-c.org/ns/1.0">
  <teiHeader xml:lang="en">
    <fileDesc>
      <titleStmt>
        <title level="a" type="main">Screening Prioritisation for Living Reviews</title>
      </titleStmt>
      <publicationStmt>
        <publisher>Example Press</publisher>
        <date type="published" when="2021-03-04">4 March 2021</date>
      </publicationStmt>
      <sourceDesc>
        <biblStruct>
          <analytic>
            <author><persName><forename type="first">Ada</forename><surname>Byron</surname></persName></author>
            <author><persName><forename type="first">Charles</forename><forename type="middle">B</forename><surname>Babbage</surname></persName></author>
            <title level="a" type="main">Screening Prioritisation for Living Reviews</title>
          </analytic>
          <monogr>
            <title level="j" type="main">Journal of Review Methods</title>
            <imprint><date type="published" when="2021-03-04"/></imprint>
          </monogr>
          <idno type="DOI">10.1234/jrm.2021.7</idno>
        </biblStruct>
      </sourceDesc>
    </fileDesc>
    <profileDesc>
      <abstract><div><p>We rank candidate studies so that reviewers see likely inclusions first.</p></div></abstract>
    </profileDesc>
  </teiHeader>
</TEI>
"#;

/// A GROBID server that answers every header request with the same TEI.
#[derive(Debug, Clone)]
pub struct GrobidStub {
    tei: Arc<String>,
    alive: bool,
    uploads: Arc<Mutex<Vec<usize>>>,
}

impl Default for GrobidStub {
    fn default() -> Self {
        Self::new(SAMPLE_TEI)
    }
}

impl GrobidStub {
    pub fn new(tei: impl Into<String>) -> Self {
        GrobidStub { tei: Arc::new(tei.into()), alive: true, uploads: Arc::default() }
    }

    /// A server whose health check fails.
    pub fn unhealthy(mut self) -> Self {
        self.alive = false;
        self
    }

    /// Body sizes of the header requests received so far.
    pub fn uploads(&self) -> Vec<usize> {
        self.uploads.lock().unwrap().clone()
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route("/api/isalive", get(isalive))
            .route("/api/processHeaderDocument", post(process_header))
            .layer(DefaultBodyLimit::disable())
            .with_state(self.clone())
    }

    pub async fn start(&self) -> std::io::Result<SocketAddr> {
        spawn(self.router(), loopback()).await
    }
}

async fn isalive(State(stub): State<GrobidStub>) -> (StatusCode, &'static str) {
    if stub.alive {
        (StatusCode::OK, "true")
    } else {
        (StatusCode::SERVICE_UNAVAILABLE, "false")
    }
}

async fn process_header(State(stub): State<GrobidStub>, body: axum::body::Bytes) -> (StatusCode, String) {
    stub.uploads.lock().unwrap().push(body.len());
    if body.is_empty() {
        return (StatusCode::BAD_REQUEST, String::new());
    }
    (StatusCode::OK, stub.tei.as_str().to_owned())
}
