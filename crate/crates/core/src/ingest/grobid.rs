use std::sync::Arc;
use std::time::Duration;

use reqwest::multipart::{Form, Part};
use roxmltree::{Document, Node};
use tokio::sync::Semaphore;

use crate::catalog::{PaperId, PaperRecord};
use crate::error::{Error, Result};

use super::{collapse_ws, non_empty, year_prefix, IngestError, ParseContext};

fn named<'a, 'i, 'n>(node: Node<'a, 'i>, name: &'n str) -> impl Iterator<Item = Node<'a, 'i>> + use<'a, 'i, 'n> {
    node.descendants()
        .filter(move |n| n.is_element() && n.tag_name().name() == name)
}

fn text_of(node: Node<'_, '_>) -> String {
    let raw: String = node
        .descendants()
        .filter(|n| n.is_text())
        .filter_map(|n| n.text())
        .collect::<Vec<_>>()
        .join(" ");
    collapse_ws(&raw)
}

fn person_name(author: Node<'_, '_>) -> Option<String> {
    let pers = named(author, "persName").next()?;
    let mut parts: Vec<String> = pers
        .children()
        .filter(|n| n.is_element() && n.tag_name().name() == "forename")
        .map(text_of)
        .collect();
    parts.extend(
        pers.children()
            .filter(|n| n.is_element() && n.tag_name().name() == "surname")
            .map(text_of),
    );
    non_empty(collapse_ws(&parts.join(" ")))
}

/// Maps a GROBID TEI header document to a record with source `pdf`.
pub fn parse_tei_header(tei: &str, id: PaperId, ctx: &ParseContext) -> Result<PaperRecord, IngestError> {
    let doc = Document::parse(tei).map_err(|e| IngestError::Tei(e.to_string()))?;
    let header = named(doc.root(), "teiHeader")
        .next()
        .ok_or_else(|| IngestError::Tei("no teiHeader element".into()))?;

    let title = named(header, "titleStmt")
        .flat_map(|s| named(s, "title"))
        .chain(named(header, "analytic").flat_map(|a| named(a, "title")))
        .map(text_of)
        .find(|t| !t.is_empty())
        .ok_or(IngestError::Untitled)?;

    let mut record = PaperRecord::new(id, title, "pdf", ctx.retrieved_at);
    record.abstract_text = named(header, "abstract").next().map(text_of).and_then(non_empty);

    let analytic = named(header, "analytic").next();
    record.authors = analytic
        .map(|a| named(a, "author").filter_map(person_name).collect())
        .unwrap_or_default();

    record.year = named(header, "date")
        .filter(|d| d.attribute("type").is_none_or(|t| t == "published"))
        .filter_map(|d| d.attribute("when").map(str::to_owned).or_else(|| non_empty(text_of(d))))
        .find_map(|when| year_prefix(&when, ctx.current_year()));

    record.venue = named(header, "monogr")
        .flat_map(|m| named(m, "title"))
        .filter(|t| matches!(t.attribute("level"), Some("j") | Some("m")))
        .map(text_of)
        .find(|t| !t.is_empty());

    if let Some(doi) = named(header, "idno")
        .find(|n| n.attribute("type").is_some_and(|t| t.eq_ignore_ascii_case("doi")))
        .map(text_of)
    {
        record.set_doi(&doi);
    }
    Ok(record)
}

/// Client for a GROBID server's header-extraction endpoint.
#[derive(Clone)]
pub struct GrobidClient {
    base_url: String,
    http: reqwest::Client,
    in_flight: Arc<Semaphore>,
}

impl GrobidClient {
    pub fn new(base_url: impl Into<String>, max_in_flight: usize, timeout: Duration) -> Result<Self> {
        let http = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Config(format!("grobid client: {e}")))?;
        Ok(GrobidClient {
            base_url: base_url.into().trim_end_matches('/').to_owned(),
            http,
            in_flight: Arc::new(Semaphore::new(max_in_flight.max(1))),
        })
    }

    fn unavailable(message: impl Into<String>) -> Error {
        Error::ServiceUnavailable { service: "grobid", message: message.into() }
    }

    pub async fn health_check(&self) -> Result<()> {
        let url = format!("{}/api/isalive", self.base_url);
        let resp = self.http.get(&url).send().await.map_err(|e| Self::unavailable(e.to_string()))?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(Self::unavailable(format!("health check returned {}", resp.status())))
        }
    }

    /// Sends the PDF to `/api/processHeaderDocument` and returns the TEI body.
    pub async fn process_header(&self, pdf: Vec<u8>) -> Result<String> {
        let _permit = self.in_flight.acquire().await.expect("semaphore never closed");
        let form = Form::new()
            .part(
                "input",
                Part::bytes(pdf)
                    .file_name("upload.pdf")
                    .mime_str("application/pdf")
                    .expect("static mime type"),
            )
            .text("consolidateHeader", "0");
        let url = format!("{}/api/processHeaderDocument", self.base_url);
        let resp = self
            .http
            .post(&url)
            .header(reqwest::header::ACCEPT, "application/xml")
            .multipart(form)
            .send()
            .await
            .map_err(|e| Self::unavailable(e.to_string()))?;
        match resp.status().as_u16() {
            200 => resp.text().await.map_err(|e| Self::unavailable(e.to_string())),
            204 => Err(IngestError::Untitled.into()),
            status => Err(Self::unavailable(format!("processHeaderDocument returned {status}"))),
        }
    }
}
