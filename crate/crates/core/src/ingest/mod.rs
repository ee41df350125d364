//! Direct imports that bypass search: RIS and BibTeX reference files, and
//! PDFs whose header metadata is extracted by a GROBID service.

mod bibtex;
mod grobid;
mod ris;

use chrono::{DateTime, Datelike, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::PaperRecord;

pub use bibtex::parse_bibtex;
pub use grobid::{parse_tei_header, GrobidClient};
pub use ris::parse_ris;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Ris,
    Bib,
    Pdf,
}

impl SourceKind {
    pub fn tag(self) -> &'static str {
        match self {
            SourceKind::Ris => "ris",
            SourceKind::Bib => "bib",
            SourceKind::Pdf => "pdf",
        }
    }
}

impl std::str::FromStr for SourceKind {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ris" => Ok(SourceKind::Ris),
            "bib" | "bibtex" => Ok(SourceKind::Bib),
            "pdf" => Ok(SourceKind::Pdf),
            other => Err(IngestError::UnsupportedKind(other.to_owned())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IngestError {
    #[error("payload is not valid UTF-8 (first bad byte at offset {offset})")]
    Encoding { offset: usize },
    #[error("BibTeX syntax error at byte {offset}: {message}")]
    Bibtex { offset: usize, message: String },
    #[error("malformed GROBID response: {0}")]
    Tei(String),
    #[error("GROBID found no title in the document")]
    Untitled,
    #[error("unsupported import kind {0:?}")]
    UnsupportedKind(String),
}

impl IngestError {
    pub fn details(&self) -> serde_json::Value {
        use serde_json::json;
        match self {
            IngestError::Encoding { offset } | IngestError::Bibtex { offset, .. } => {
                json!({ "offset": offset })
            }
            IngestError::UnsupportedKind(kind) => json!({ "kind": kind }),
            _ => json!({}),
        }
    }
}

/// An entry that was encountered but could not become a record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    /// Zero-based position of the entry in the file.
    pub entry: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseOutcome {
    pub records: Vec<PaperRecord>,
    pub rejected: Vec<Rejection>,
}

impl ParseOutcome {
    pub fn total(&self) -> usize {
        self.records.len() + self.rejected.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportReport {
    pub source_kind: SourceKind,
    pub parsed: usize,
    pub rejected: Vec<Rejection>,
    pub new_after_dedup: usize,
    pub seeds_marked: usize,
}

/// Shared inputs for the pure parsers.
#[derive(Debug, Clone, Copy)]
pub struct ParseContext {
    pub retrieved_at: DateTime<Utc>,
}

impl ParseContext {
    pub fn new(retrieved_at: DateTime<Utc>) -> Self {
        ParseContext { retrieved_at }
    }

    pub(crate) fn current_year(&self) -> i32 {
        self.retrieved_at.year()
    }
}

pub(crate) fn decode_utf8(payload: &[u8]) -> Result<&str, IngestError> {
    let payload = payload.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(payload);
    std::str::from_utf8(payload).map_err(|e| IngestError::Encoding { offset: e.valid_up_to() })
}

/// Year from the first four characters, when they are all digits.
pub(crate) fn year_prefix(raw: &str, current_year: i32) -> Option<i32> {
    let raw = raw.trim();
    let prefix = raw.get(..4)?;
    if !prefix.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    crate::catalog::plausible_year(prefix.parse().ok()?, current_year)
}

pub(crate) fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub(crate) fn non_empty(s: String) -> Option<String> {
    (!s.is_empty()).then_some(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn year_prefix_rule() {
        assert_eq!(year_prefix("2020/05//", 2026), Some(2020));
        assert_eq!(year_prefix("2020", 2026), Some(2020));
        assert_eq!(year_prefix("20", 2026), None);
        assert_eq!(year_prefix("May 2020", 2026), None);
        assert_eq!(year_prefix("3020", 2026), None);
    }

    #[test]
    fn bom_is_tolerated() {
        assert_eq!(decode_utf8(b"\xEF\xBB\xBFTY").unwrap(), "TY");
        assert_eq!(decode_utf8(b"ab\xFF"), Err(IngestError::Encoding { offset: 2 }));
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("BIB".parse::<SourceKind>().unwrap(), SourceKind::Bib);
        assert!("docx".parse::<SourceKind>().is_err());
    }
}
