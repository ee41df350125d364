use std::collections::HashMap;

use crate::catalog::{PaperId, PaperRecord};

use super::{collapse_ws, decode_utf8, non_empty, year_prefix, IngestError, ParseContext, ParseOutcome, Rejection};

const ACCEPTED_TYPES: &[&str] = &["article", "inproceedings", "conference", "book", "misc"];

struct Scanner<'a> {
    src: &'a str,
    pos: usize,
}

type ScanResult<T> = Result<T, IngestError>;

impl<'a> Scanner<'a> {
    fn err<T>(&self, offset: usize, message: impl Into<String>) -> ScanResult<T> {
        Err(IngestError::Bibtex { offset, message: message.into() })
    }

    fn peek(&self) -> Option<u8> {
        self.src.as_bytes().get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b) if b.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn ident(&mut self) -> &'a str {
        let start = self.pos;
        while matches!(self.peek(), Some(b) if b.is_ascii_alphanumeric() || b"_-:.+/'".contains(&b)) {
            self.pos += 1;
        }
        &self.src[start..self.pos]
    }

    /// Consumes a `{…}` group starting at the current `{` and returns its
    /// inner text with nested braces intact.
    fn braced(&mut self) -> ScanResult<&'a str> {
        let open = self.pos;
        debug_assert_eq!(self.peek(), Some(b'{'));
        self.pos += 1;
        let mut depth = 1usize;
        while let Some(b) = self.peek() {
            match b {
                b'\\' => self.pos += 1,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        self.pos += 1;
                        return Ok(&self.src[open + 1..self.pos - 1]);
                    }
                }
                _ => {}
            }
            self.pos += 1;
        }
        self.err(open, "unbalanced braces: '{' is never closed")
    }

    fn quoted(&mut self) -> ScanResult<&'a str> {
        let open = self.pos;
        self.pos += 1;
        let mut depth = 0usize;
        while let Some(b) = self.peek() {
            match b {
                b'\\' => self.pos += 1,
                b'{' => depth += 1,
                b'}' => {
                    if depth == 0 {
                        return self.err(self.pos, "unbalanced braces: unexpected '}' in quoted value");
                    }
                    depth -= 1;
                }
                b'"' if depth == 0 => {
                    self.pos += 1;
                    return Ok(&self.src[open + 1..self.pos - 1]);
                }
                _ => {}
            }
            self.pos += 1;
        }
        if depth > 0 {
            self.err(open, "unbalanced braces inside quoted value")
        } else {
            self.err(open, "unterminated quoted value")
        }
    }

    /// A field value: pieces joined by `#`.
    fn value(&mut self, macros: &HashMap<String, String>) -> ScanResult<String> {
        let mut out = String::new();
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'{') => out.push_str(self.braced()?),
                Some(b'"') => out.push_str(self.quoted()?),
                Some(b) if b.is_ascii_alphanumeric() => {
                    let word = self.ident();
                    match macros.get(&word.to_ascii_lowercase()) {
                        Some(expansion) => out.push_str(expansion),
                        None => out.push_str(word),
                    }
                }
                Some(_) => return self.err(self.pos, "expected a field value"),
                None => return self.err(self.pos, "unexpected end of input in field value"),
            }
            self.skip_ws();
            if self.peek() == Some(b'#') {
                self.pos += 1;
            } else {
                return Ok(out);
            }
        }
    }
}

fn month_macros() -> HashMap<String, String> {
    [
        ("jan", "January"), ("feb", "February"), ("mar", "March"), ("apr", "April"),
        ("may", "May"), ("jun", "June"), ("jul", "July"), ("aug", "August"),
        ("sep", "September"), ("oct", "October"), ("nov", "November"), ("dec", "December"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_owned(), v.to_owned()))
    .collect()
}

struct RawEntry<'a> {
    kind: String,
    key: &'a str,
    start: usize,
    raw: &'a str,
    fields: Vec<(String, String)>,
}

/// Removes braces at the outermost nesting level of `s`, keeping deeper ones.
fn strip_one_level(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut depth = 0usize;
    let mut escaped = false;
    for c in s.chars() {
        if escaped {
            out.push(c);
            escaped = false;
            continue;
        }
        match c {
            '\\' => {
                escaped = true;
                out.push(c);
            }
            '{' => {
                depth += 1;
                if depth > 1 {
                    out.push(c);
                }
            }
            '}' => {
                if depth > 1 {
                    out.push(c);
                }
                depth = depth.saturating_sub(1);
            }
            _ => out.push(c),
        }
    }
    out
}

/// Replaces the common LaTeX accent commands with precomposed characters.
fn latex_accents(s: &str) -> String {
    if !s.contains('\\') {
        return s.to_owned();
    }
    const TABLE: &[(&str, &str)] = &[
        ("\\\"a", "ä"), ("\\\"o", "ö"), ("\\\"u", "ü"), ("\\\"A", "Ä"), ("\\\"O", "Ö"), ("\\\"U", "Ü"),
        ("\\\"e", "ë"), ("\\\"i", "ï"),
        ("\\'a", "á"), ("\\'e", "é"), ("\\'i", "í"), ("\\'o", "ó"), ("\\'u", "ú"), ("\\'E", "É"),
        ("\\`a", "à"), ("\\`e", "è"), ("\\`o", "ò"), ("\\`u", "ù"),
        ("\\^a", "â"), ("\\^e", "ê"), ("\\^o", "ô"), ("\\^i", "î"),
        ("\\~n", "ñ"), ("\\~a", "ã"), ("\\~o", "õ"),
        ("\\c{c}", "ç"), ("\\c c", "ç"), ("\\ss", "ß"), ("\\&", "&"), ("\\%", "%"), ("\\_", "_"),
    ];
    let mut out = s.to_owned();
    for (from, to) in TABLE {
        out = out.replace(&format!("{{{from}}}"), to).replace(from, to);
    }
    out
}

fn clean(raw: &str) -> String {
    collapse_ws(&latex_accents(&strip_one_level(raw)))
}

/// Splits an author list on the word `and` at brace depth zero.
fn split_authors(raw: &str) -> Vec<String> {
    let mut names = Vec::new();
    let mut depth = 0usize;
    let mut start = 0usize;
    let tokens: Vec<(usize, &str)> = raw
        .split_whitespace()
        .map(|t| (t.as_ptr() as usize - raw.as_ptr() as usize, t))
        .collect();
    for &(offset, tok) in &tokens {
        let opening = tok.matches('{').count();
        let closing = tok.matches('}').count();
        if depth == 0 && tok == "and" {
            names.push(&raw[start..offset]);
            start = offset + tok.len();
        }
        depth = (depth + opening).saturating_sub(closing);
    }
    names.push(&raw[start..]);
    names
        .into_iter()
        .map(clean)
        .filter(|n| !n.is_empty())
        .collect()
}

fn scan_entries(src: &str) -> ScanResult<Vec<RawEntry<'_>>> {
    let mut scanner = Scanner { src, pos: 0 };
    let mut macros = month_macros();
    let mut entries = Vec::new();

    while let Some(at) = src[scanner.pos..].find('@') {
        let start = scanner.pos + at;
        scanner.pos = start + 1;
        scanner.skip_ws();
        let kind = scanner.ident().to_ascii_lowercase();
        scanner.skip_ws();
        let close = match scanner.peek() {
            Some(b'{') => b'}',
            Some(b'(') => b')',
            _ => continue, // a stray '@' in comment text
        };

        if kind == "comment" || kind == "preamble" {
            if close == b'}' {
                scanner.braced()?;
            } else {
                scanner.pos += 1;
                scanner.value(&macros)?;
                scanner.skip_ws();
                scanner.pos += 1;
            }
            continue;
        }
        let open_at = scanner.pos;
        scanner.pos += 1;

        if kind == "string" {
            loop {
                scanner.skip_ws();
                let name = scanner.ident().to_ascii_lowercase();
                scanner.skip_ws();
                if scanner.peek() != Some(b'=') {
                    return scanner.err(scanner.pos, "expected '=' in @string");
                }
                scanner.pos += 1;
                let value = scanner.value(&macros)?;
                macros.insert(name, value);
                scanner.skip_ws();
                match scanner.peek() {
                    Some(b',') => scanner.pos += 1,
                    Some(b) if b == close => {
                        scanner.pos += 1;
                        break;
                    }
                    _ => return scanner.err(scanner.pos, "malformed @string"),
                }
            }
            continue;
        }

        scanner.skip_ws();
        let key_start = scanner.pos;
        while matches!(scanner.peek(), Some(b) if b != b',' && b != close && !b.is_ascii_whitespace()) {
            scanner.pos += 1;
        }
        let key = &src[key_start..scanner.pos];
        let mut fields = Vec::new();
        loop {
            scanner.skip_ws();
            match scanner.peek() {
                Some(b',') => {
                    scanner.pos += 1;
                    continue;
                }
                Some(b) if b == close => {
                    scanner.pos += 1;
                    break;
                }
                None => {
                    return scanner.err(open_at, "unbalanced braces: entry is never closed");
                }
                _ => {}
            }
            let name_at = scanner.pos;
            let name = scanner.ident().to_ascii_lowercase();
            if name.is_empty() {
                return scanner.err(name_at, "expected a field name");
            }
            scanner.skip_ws();
            if scanner.peek() != Some(b'=') {
                return scanner.err(scanner.pos, format!("expected '=' after field {name:?}"));
            }
            scanner.pos += 1;
            let value = scanner.value(&macros)?;
            fields.push((name, value));
        }
        entries.push(RawEntry {
            kind,
            key,
            start,
            raw: &src[start..scanner.pos],
            fields,
        });
    }
    Ok(entries)
}

/// Parses a BibTeX payload into one record per supported entry.
///
/// Supported entry types are `@article`, `@inproceedings` (and its alias
/// `@conference`), `@book` and `@misc`; other types are rejected with a
/// reason. `@string` macros and `#` concatenation are expanded. Unbalanced
/// braces fail the whole payload with the offending byte offset.
pub fn parse_bibtex(payload: &[u8], ctx: &ParseContext) -> Result<ParseOutcome, IngestError> {
    let src = decode_utf8(payload)?;
    let entries = scan_entries(src)?;

    let mut outcome = ParseOutcome::default();
    for (ordinal, entry) in entries.iter().enumerate() {
        if !ACCEPTED_TYPES.contains(&entry.kind.as_str()) {
            outcome.rejected.push(Rejection {
                entry: ordinal,
                reason: format!("unsupported entry type @{} ({})", entry.kind, entry.key),
            });
            continue;
        }
        let field = |name: &str| {
            entry
                .fields
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, v)| v.as_str())
        };
        let Some(title) = field("title").map(clean).and_then(non_empty) else {
            outcome.rejected.push(Rejection {
                entry: ordinal,
                reason: format!("entry {:?} at byte {} has no title", entry.key, entry.start),
            });
            continue;
        };
        let id = PaperId::derive(&[b"bib", &ordinal.to_le_bytes(), entry.raw.as_bytes()]);
        let mut record = PaperRecord::new(id, title, "bib", ctx.retrieved_at);
        record.abstract_text = field("abstract").map(clean).and_then(non_empty);
        record.authors = field("author").map(split_authors).unwrap_or_default();
        record.year = field("year").and_then(|y| year_prefix(&clean(y), ctx.current_year()));
        record.venue = field("journal")
            .or_else(|| field("journaltitle"))
            .or_else(|| field("booktitle"))
            .map(clean)
            .and_then(non_empty);
        if let Some(doi) = field("doi") {
            record.set_doi(&clean(doi));
        }
        record.url = field("url").map(clean).and_then(non_empty);
        outcome.records.push(record);
    }
    Ok(outcome)
}
