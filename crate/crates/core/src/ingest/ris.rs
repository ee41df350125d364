use crate::catalog::{PaperId, PaperRecord};

use super::{collapse_ws, decode_utf8, non_empty, year_prefix, IngestError, ParseContext, ParseOutcome, Rejection};

/// Splits a line into `(tag, value)` if it has the `XX  - value` shape.
fn tag_line(line: &str) -> Option<(&str, &str)> {
    let bytes = line.as_bytes();
    if bytes.len() < 2
        || !bytes[0].is_ascii_uppercase()
        || !(bytes[1].is_ascii_uppercase() || bytes[1].is_ascii_digit())
    {
        return None;
    }
    let rest = line[2..].trim_start_matches(' ');
    let value = rest.strip_prefix('-')?;
    Some((&line[..2], value.strip_prefix(' ').unwrap_or(value)))
}

#[derive(Default)]
struct Entry {
    start_line: usize,
    raw: String,
    fields: Vec<(String, String)>,
}

impl Entry {
    fn first(&self, tags: &[&str]) -> Option<String> {
        tags.iter().find_map(|t| {
            self.fields
                .iter()
                .find(|(tag, v)| tag == t && !v.trim().is_empty())
                .map(|(_, v)| collapse_ws(v))
        })
    }

    fn all(&self, tag: &str) -> Vec<String> {
        self.fields
            .iter()
            .filter(|(t, v)| t == tag && !v.trim().is_empty())
            .map(|(_, v)| collapse_ws(v))
            .collect()
    }
}

/// Parses an RIS payload into one record per `TY … ER` entry.
///
/// Tag mapping: TI/T1 title, AB/N2 abstract, AU/A1 authors, PY/Y1 year,
/// JO/JF/T2 venue, DO doi, UR url. Abstract lines may wrap; any other line
/// without a tag inside an entry is skipped.
pub fn parse_ris(payload: &[u8], ctx: &ParseContext) -> Result<ParseOutcome, IngestError> {
    let text = decode_utf8(payload)?;
    let mut entries = Vec::new();
    let mut current: Option<Entry> = None;

    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        match tag_line(line) {
            Some(("TY", _)) => {
                if let Some(open) = current.take() {
                    // a TY without a preceding ER closes the previous entry
                    entries.push(open);
                }
                current = Some(Entry { start_line: lineno, ..Default::default() });
            }
            Some(("ER", _)) => {
                if let Some(done) = current.take() {
                    entries.push(done);
                }
                continue;
            }
            Some((tag, value)) => {
                if let Some(entry) = current.as_mut() {
                    entry.fields.push((tag.to_owned(), value.to_owned()));
                }
            }
            None => {
                if let Some(entry) = current.as_mut() {
                    if let Some((tag, value)) = entry.fields.last_mut() {
                        if (tag == "AB" || tag == "N2") && !line.trim().is_empty() {
                            value.push(' ');
                            value.push_str(line.trim());
                        }
                    }
                }
            }
        }
        if let Some(entry) = current.as_mut() {
            entry.raw.push_str(line);
            entry.raw.push('\n');
        }
    }
    if let Some(open) = current.take() {
        entries.push(open);
    }

    let mut outcome = ParseOutcome::default();
    for (ordinal, entry) in entries.iter().enumerate() {
        let Some(title) = entry.first(&["TI", "T1"]) else {
            outcome.rejected.push(Rejection {
                entry: ordinal,
                reason: format!("entry starting at line {} has no TI or T1 tag", entry.start_line + 1),
            });
            continue;
        };
        let id = PaperId::derive(&[b"ris", &ordinal.to_le_bytes(), entry.raw.as_bytes()]);
        let mut record = PaperRecord::new(id, title, "ris", ctx.retrieved_at);
        record.abstract_text = entry.first(&["AB", "N2"]).and_then(non_empty);
        record.authors = {
            let au = entry.all("AU");
            if au.is_empty() {
                entry.all("A1")
            } else {
                au
            }
        };
        record.year = entry
            .first(&["PY", "Y1"])
            .and_then(|y| year_prefix(&y, ctx.current_year()));
        record.venue = entry.first(&["JO", "JF", "T2"]);
        if let Some(doi) = entry.first(&["DO"]) {
            record.set_doi(&doi);
        }
        record.url = entry.first(&["UR"]);
        outcome.records.push(record);
    }
    Ok(outcome)
}
