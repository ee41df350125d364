//! The review export: one JSON document holding the protocol, every search
//! run, and every paper with all of its decisions and predictions.
//!
//! Output is deterministic. Object keys follow struct field order, maps are
//! sorted, papers are in insertion order and decisions in log order. The
//! format is described in `docs/export-format.md` and validated by
//! `docs/export.schema.json`.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::auto_screen::{ClassifierKind, QaPrediction};
use crate::catalog::{DecisionOrigin, MainDecision, PaperId, PaperRecord, ReviewId, ReviewProtocol, ScreeningDecision};
use crate::error::Result;
use crate::persistence::{LoggedDecision, Tx};
use crate::search::SearchRun;

pub const EXPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportDocument {
    pub schema_version: u32,
    pub protocol: ReviewProtocol,
    pub search_runs: Vec<SearchRun>,
    pub papers: Vec<ExportedPaper>,
}

/// The label a paper currently carries: the latest manual decision if there
/// is one, else the latest prediction of a current classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurrentLabel {
    pub main: MainDecision,
    pub origin: DecisionOrigin,
    pub model_tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierPrediction {
    #[serde(flatten)]
    pub decision: ScreeningDecision,
    /// False once a newer version of the same classifier kind exists.
    pub current: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportedPaper {
    #[serde(flatten)]
    pub record: PaperRecord,
    pub current_label: Option<CurrentLabel>,
    pub manual_decisions: Vec<ScreeningDecision>,
    pub classifier_predictions: Vec<ClassifierPrediction>,
    pub qa_predictions: Vec<QaPrediction>,
}

/// Splits `kind@vN`.
pub fn parse_model_tag(tag: &str) -> Option<(ClassifierKind, u64)> {
    let (kind, version) = tag.split_once("@v")?;
    Some((kind.parse().ok()?, version.parse().ok()?))
}

/// Assembles the document from plain values.
pub fn build_document(
    protocol: ReviewProtocol,
    search_runs: Vec<SearchRun>,
    papers: Vec<PaperRecord>,
    log: Vec<LoggedDecision>,
    qa: Vec<QaPrediction>,
    latest_versions: &HashMap<ClassifierKind, u64>,
) -> ExportDocument {
    let mut manual: HashMap<PaperId, Vec<ScreeningDecision>> = HashMap::new();
    let mut machine: HashMap<PaperId, Vec<ClassifierPrediction>> = HashMap::new();
    for LoggedDecision { decision, .. } in log {
        match decision.origin {
            DecisionOrigin::Manual => manual.entry(decision.paper_id.clone()).or_default().push(decision),
            DecisionOrigin::Classifier | DecisionOrigin::Qa => {
                let current = decision
                    .model_tag
                    .as_deref()
                    .and_then(parse_model_tag)
                    .is_some_and(|(kind, v)| latest_versions.get(&kind) == Some(&v));
                machine
                    .entry(decision.paper_id.clone())
                    .or_default()
                    .push(ClassifierPrediction { decision, current });
            }
        }
    }
    let mut qa_by_paper: BTreeMap<PaperId, Vec<QaPrediction>> = BTreeMap::new();
    for p in qa {
        qa_by_paper.entry(p.paper_id.clone()).or_default().push(p);
    }

    let papers = papers
        .into_iter()
        .map(|record| {
            let manual_decisions = manual.remove(&record.id).unwrap_or_default();
            let classifier_predictions = machine.remove(&record.id).unwrap_or_default();
            let current_label = match manual_decisions.last() {
                Some(d) => Some(CurrentLabel { main: d.main, origin: d.origin, model_tag: None }),
                None => classifier_predictions.iter().rev().find(|p| p.current).map(|p| CurrentLabel {
                    main: p.decision.main,
                    origin: p.decision.origin,
                    model_tag: p.decision.model_tag.clone(),
                }),
            };
            ExportedPaper {
                qa_predictions: qa_by_paper.remove(&record.id).unwrap_or_default(),
                record,
                current_label,
                manual_decisions,
                classifier_predictions,
            }
        })
        .collect();

    ExportDocument { schema_version: EXPORT_SCHEMA_VERSION, protocol, search_runs, papers }
}

/// Reads one consistent snapshot of a review and builds its export.
pub fn export_review(tx: &Tx<'_>, review_id: &ReviewId) -> Result<ExportDocument> {
    let protocol = tx.protocol(review_id)?;
    let mut latest = HashMap::new();
    for kind in [ClassifierKind::TfidfLogreg, ClassifierKind::HashLinear] {
        let v = tx.latest_classifier_version(review_id, kind)?;
        if v > 0 {
            latest.insert(kind, v);
        }
    }
    Ok(build_document(
        protocol,
        tx.search_runs(review_id)?,
        tx.papers(review_id)?,
        tx.decisions(review_id)?,
        tx.qa_predictions(review_id)?,
        &latest,
    ))
}

/// Pretty-printed JSON with a trailing newline.
pub fn to_json(doc: &ExportDocument) -> Result<String> {
    let mut s = serde_json::to_string_pretty(doc)?;
    s.push('\n');
    Ok(s)
}
