//! Domain model shared by every other module, plus the canonicalization
//! routines (title normalization, DOI cleanup, canonical keys) that
//! deduplication builds on.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_id!(
    /// Opaque identifier of a paper, unique within a review.
    PaperId
);
string_id!(ReviewId);
string_id!(CriterionId);
string_id!(ReviewerId);

impl PaperId {
    /// Content-derived id: the same provenance bytes always give the same id.
    pub fn derive(parts: &[&[u8]]) -> Self {
        let mut hasher = Sha256::new();
        for part in parts {
            hasher.update((part.len() as u64).to_le_bytes());
            hasher.update(part);
        }
        let digest = hasher.finalize();
        PaperId(hex::encode(&digest[..12]))
    }
}

impl ReviewId {
    pub fn generate() -> Self {
        ReviewId(uuid::Uuid::new_v4().simple().to_string())
    }
}

/// Reviewer id reserved for include labels created by seed-study imports.
pub const SEED_REVIEWER: &str = "seed-import";
/// Reviewer id attached to classifier and QA output.
pub const AUTO_REVIEWER: &str = "auto";

/// Provenance tag carried by seed studies.
pub const SEED_SOURCE: &str = "seed";

/// Key in [`PaperRecord::external_ids`] under which the DOI lives.
pub const DOI_KEY: &str = "doi";

pub const MIN_YEAR: i32 = 1500;

/// One candidate study, possibly merged from several sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperRecord {
    pub id: PaperId,
    pub external_ids: BTreeMap<String, String>,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: Option<String>,
    pub authors: Vec<String>,
    pub venue: Option<String>,
    pub year: Option<i32>,
    pub url: Option<String>,
    pub sources: BTreeSet<String>,
    pub is_seed: bool,
    pub retrieved_at: DateTime<Utc>,
}

impl PaperRecord {
    /// A record carrying only the mandatory fields.
    pub fn new(
        id: PaperId,
        title: impl Into<String>,
        source: impl Into<String>,
        retrieved_at: DateTime<Utc>,
    ) -> Self {
        PaperRecord {
            id,
            external_ids: BTreeMap::new(),
            title: title.into(),
            abstract_text: None,
            authors: Vec::new(),
            venue: None,
            year: None,
            url: None,
            sources: BTreeSet::from([source.into()]),
            is_seed: false,
            retrieved_at,
        }
    }

    pub fn doi(&self) -> Option<&str> {
        self.external_ids.get(DOI_KEY).map(String::as_str)
    }

    /// Stores `raw` as the DOI if it cleans up to something usable.
    pub fn set_doi(&mut self, raw: &str) {
        if let Some(doi) = normalize_doi(raw) {
            self.external_ids.insert(DOI_KEY.to_owned(), doi);
        }
    }

    pub fn mark_seed(&mut self) {
        self.is_seed = true;
        self.sources.insert(SEED_SOURCE.to_owned());
    }

    /// Title and abstract joined the way the classifiers consume them.
    pub fn screening_text(&self) -> String {
        match self.abstract_text.as_deref().map(str::trim) {
            Some(abs) if !abs.is_empty() => format!("{} {}", self.title, abs),
            _ => self.title.clone(),
        }
    }

    pub fn validate(&self, current_year: i32) -> Result<()> {
        if self.title.trim().is_empty() {
            return Err(Error::validation("title", "title must not be empty"));
        }
        if let Some(year) = self.year {
            if !(MIN_YEAR..=current_year + 1).contains(&year) {
                return Err(Error::validation(
                    "year",
                    format!("{year} outside [{MIN_YEAR}, {}]", current_year + 1),
                ));
            }
        }
        if let Some(doi) = self.doi() {
            if normalize_doi(doi).as_deref() != Some(doi) {
                return Err(Error::validation("doi", format!("{doi:?} is not canonical")));
            }
        }
        if self.sources.is_empty() {
            return Err(Error::validation("sources", "at least one source tag is required"));
        }
        if self.is_seed && !self.sources.contains(SEED_SOURCE) {
            return Err(Error::validation("sources", "seed studies must carry the seed tag"));
        }
        Ok(())
    }
}

/// Accepts a year only if it lies in the admissible range.
pub fn plausible_year(year: i32, current_year: i32) -> Option<i32> {
    (MIN_YEAR..=current_year + 1).contains(&year).then_some(year)
}

/// Lowercases a DOI and strips resolver/scheme prefixes.
///
/// Returns `None` when nothing resembling a DOI (`10.` prefix) remains.
pub fn normalize_doi(raw: &str) -> Option<String> {
    let mut doi = raw.trim().to_lowercase();
    for prefix in [
        "https://doi.org/",
        "http://doi.org/",
        "https://dx.doi.org/",
        "http://dx.doi.org/",
        "doi.org/",
        "doi:",
    ] {
        if let Some(rest) = doi.strip_prefix(prefix) {
            doi = rest.trim().to_owned();
            break;
        }
    }
    doi.starts_with("10.").then_some(doi)
}

/// Folds a title to its comparison form: compatibility-decomposed, diacritics
/// dropped, lowercased, punctuation turned into spaces, whitespace collapsed.
///
/// `None` means the title has no alphanumeric content and cannot take part
/// in fuzzy or title-based deduplication.
pub fn normalize_title(raw: &str) -> Option<String> {
    let folded: String = raw
        .nfkd()
        .filter(|c| !is_combining_mark(*c))
        .flat_map(char::to_lowercase)
        // lowercasing can produce decomposable or marked characters again
        .nfkd()
        .filter(|c| !is_combining_mark(*c))
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    let normalized = folded.split_whitespace().collect::<Vec<_>>().join(" ");
    (!normalized.is_empty()).then_some(normalized)
}

/// The identity a record is deduplicated under.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CanonicalKey {
    Doi { doi: String },
    TitleYear { title: String, year: i32 },
    TitleOnly { title: String },
    Unkeyable,
}

impl CanonicalKey {
    /// Flat string form used in the persisted key index; `None` for unkeyable.
    pub fn index_string(&self) -> Option<String> {
        match self {
            CanonicalKey::Doi { doi } => Some(format!("doi:{doi}")),
            CanonicalKey::TitleYear { title, year } => Some(format!("ty:{year}:{title}")),
            CanonicalKey::TitleOnly { title } => Some(format!("t:{title}")),
            CanonicalKey::Unkeyable => None,
        }
    }
}

/// DOI first, then normalized title with year, then normalized title alone.
pub fn canonical_key(record: &PaperRecord) -> CanonicalKey {
    if let Some(doi) = record.doi() {
        return CanonicalKey::Doi { doi: doi.to_lowercase() };
    }
    title_key(record).unwrap_or(CanonicalKey::Unkeyable)
}

fn title_key(record: &PaperRecord) -> Option<CanonicalKey> {
    let title = normalize_title(&record.title)?;
    Some(match record.year {
        Some(year) => CanonicalKey::TitleYear { title, year },
        None => CanonicalKey::TitleOnly { title },
    })
}

/// Every index entry a record is reachable under: its DOI key and its
/// title key, whichever exist. The canonical key is always among them.
pub fn lookup_keys(record: &PaperRecord) -> Vec<String> {
    let mut keys = Vec::with_capacity(2);
    if let Some(doi) = record.doi() {
        keys.push(format!("doi:{}", doi.to_lowercase()));
    }
    if let Some(key) = title_key(record).and_then(|k| k.index_string()) {
        keys.push(key);
    }
    keys
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionKind {
    Inclusion,
    Exclusion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EligibilityCriterion {
    pub criterion_id: CriterionId,
    pub kind: CriterionKind,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScreeningMode {
    Strict,
    #[default]
    Relaxed,
}

pub const DEFAULT_TOP_N: u32 = 500;

fn default_top_n() -> u32 {
    DEFAULT_TOP_N
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewProtocol {
    pub review_id: ReviewId,
    pub title: String,
    pub description: String,
    pub queries: Vec<String>,
    pub criteria: Vec<EligibilityCriterion>,
    pub connectors: Vec<String>,
    #[serde(default = "default_top_n")]
    pub top_n: u32,
    pub mode: ScreeningMode,
    pub prior_knowledge_enabled: bool,
    pub last_search_year: Option<i32>,
}

impl ReviewProtocol {
    pub fn criterion(&self, id: &CriterionId) -> Option<&EligibilityCriterion> {
        self.criteria.iter().find(|c| &c.criterion_id == id)
    }

    /// Structural checks plus connector membership in `registered`.
    pub fn validate<S: AsRef<str>>(&self, registered: &[S]) -> Result<()> {
        if self.title.trim().is_empty() {
            return Err(Error::validation("title", "title must not be empty"));
        }
        if !self.queries.iter().any(|q| !q.trim().is_empty()) {
            return Err(Error::validation("queries", "at least one non-empty query is required"));
        }
        if self.top_n == 0 {
            return Err(Error::validation("top_n", "top_n must be at least 1"));
        }
        if self.connectors.is_empty() {
            return Err(Error::validation("connectors", "select at least one connector"));
        }
        for name in &self.connectors {
            if !registered.iter().any(|r| r.as_ref() == name) {
                return Err(Error::validation("connectors", format!("unknown connector {name:?}")));
            }
        }
        let mut seen = BTreeSet::new();
        for criterion in &self.criteria {
            if criterion.text.trim().is_empty() {
                return Err(Error::validation("criteria", "criterion text must not be empty"));
            }
            if !seen.insert(&criterion.criterion_id) {
                return Err(Error::validation(
                    "criteria",
                    format!("duplicate criterion id {}", criterion.criterion_id),
                ));
            }
        }
        Ok(())
    }
}

/// What a client submits to create or replace a protocol. Ids are optional;
/// missing criterion ids are assigned from position.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolDraft {
    pub title: String,
    #[serde(default)]
    pub description: String,
    pub queries: Vec<String>,
    #[serde(default)]
    pub criteria: Vec<CriterionDraft>,
    /// Empty selects every registered connector.
    #[serde(default)]
    pub connectors: Vec<String>,
    #[serde(default)]
    pub top_n: Option<u32>,
    #[serde(default)]
    pub mode: ScreeningMode,
    #[serde(default)]
    pub prior_knowledge_enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriterionDraft {
    #[serde(default)]
    pub criterion_id: Option<CriterionId>,
    pub kind: CriterionKind,
    pub text: String,
}

impl ProtocolDraft {
    pub fn into_protocol<S: AsRef<str>>(
        self,
        review_id: ReviewId,
        registered: &[S],
        last_search_year: Option<i32>,
    ) -> Result<ReviewProtocol> {
        let connectors = if self.connectors.is_empty() {
            registered.iter().map(|s| s.as_ref().to_owned()).collect()
        } else {
            self.connectors
        };
        let criteria = self
            .criteria
            .into_iter()
            .enumerate()
            .map(|(i, c)| EligibilityCriterion {
                criterion_id: c
                    .criterion_id
                    .unwrap_or_else(|| CriterionId::new(format!("c{}", i + 1))),
                kind: c.kind,
                text: c.text.trim().to_owned(),
            })
            .collect();
        let protocol = ReviewProtocol {
            review_id,
            title: self.title.trim().to_owned(),
            description: self.description,
            queries: self
                .queries
                .into_iter()
                .map(|q| q.trim().to_owned())
                .filter(|q| !q.is_empty())
                .collect(),
            criteria,
            connectors,
            top_n: self.top_n.unwrap_or(DEFAULT_TOP_N),
            mode: self.mode,
            prior_knowledge_enabled: self.prior_knowledge_enabled,
            last_search_year,
        };
        protocol.validate(registered)?;
        Ok(protocol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MainDecision {
    Include,
    Maybe,
    Exclude,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionAnswer {
    Yes,
    No,
    #[default]
    Unanswered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionOrigin {
    Manual,
    Classifier,
    Qa,
}

impl DecisionOrigin {
    pub fn as_str(self) -> &'static str {
        match self {
            DecisionOrigin::Manual => "manual",
            DecisionOrigin::Classifier => "classifier",
            DecisionOrigin::Qa => "qa",
        }
    }
}

/// A human or machine verdict on one paper.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningDecision {
    pub paper_id: PaperId,
    pub reviewer_id: ReviewerId,
    pub main: MainDecision,
    pub criterion_answers: BTreeMap<CriterionId, CriterionAnswer>,
    pub knew_paper: Option<bool>,
    pub knew_authors: Option<bool>,
    pub origin: DecisionOrigin,
    pub model_tag: Option<String>,
    /// Classifier probability of inclusion; absent for manual decisions.
    pub probability: Option<f64>,
    pub decided_at: DateTime<Utc>,
    pub revision: u64,
}

impl ScreeningDecision {
    /// Checks the invariants that do not depend on stored state.
    pub fn validate_against(&self, protocol: &ReviewProtocol) -> Result<()> {
        match (self.origin, &self.model_tag) {
            (DecisionOrigin::Manual, Some(_)) => {
                return Err(Error::validation("model_tag", "manual decisions carry no model tag"));
            }
            (DecisionOrigin::Classifier | DecisionOrigin::Qa, None) => {
                return Err(Error::validation("model_tag", "machine decisions need a model tag"));
            }
            _ => {}
        }
        if let Some(unknown) = self
            .criterion_answers
            .keys()
            .find(|id| protocol.criterion(id).is_none())
        {
            return Err(Error::validation(
                "criterion_answers",
                format!("unknown criterion {unknown}"),
            ));
        }
        if !protocol.prior_knowledge_enabled
            && (self.knew_paper.is_some() || self.knew_authors.is_some())
        {
            return Err(Error::validation(
                "knew_paper",
                "prior-knowledge questions are disabled for this review",
            ));
        }
        Ok(())
    }
}
