//! Human title/abstract screening: choosing the next paper, checking
//! decisions against the protocol's mode, and progress counts.
//!
//! Everything here works on values already loaded from the store, so the
//! rules can be tested without a database.

use std::collections::{BTreeMap, HashMap, HashSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::auto_screen::{QaAnswer, QaPrediction, HALLUCINATION_WARNING};
use crate::catalog::{
    CriterionAnswer, CriterionId, DecisionOrigin, EligibilityCriterion, MainDecision, PaperId, PaperRecord,
    ReviewProtocol, ReviewerId, ScreeningDecision, ScreeningMode, AUTO_REVIEWER, SEED_REVIEWER,
};
use crate::error::{Error, Result};
use crate::persistence::LoggedDecision;

/// Criteria of `protocol` that `decision` leaves without a yes/no answer,
/// in protocol order.
pub fn validate_strict(decision: &ScreeningDecision, protocol: &ReviewProtocol) -> Vec<CriterionId> {
    protocol
        .criteria
        .iter()
        .filter(|c| {
            !matches!(
                decision.criterion_answers.get(&c.criterion_id),
                Some(CriterionAnswer::Yes | CriterionAnswer::No)
            )
        })
        .map(|c| c.criterion_id.clone())
        .collect()
}

/// A reviewer's decision as submitted by a client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionSubmission {
    pub paper_id: PaperId,
    pub reviewer_id: ReviewerId,
    pub main: MainDecision,
    #[serde(default)]
    pub criterion_answers: BTreeMap<CriterionId, CriterionAnswer>,
    #[serde(default)]
    pub knew_paper: Option<bool>,
    #[serde(default)]
    pub knew_authors: Option<bool>,
    /// When set, the submission is refused unless this reviewer's latest
    /// revision for the paper equals it.
    #[serde(default)]
    pub expected_revision: Option<u64>,
}

impl DecisionSubmission {
    /// The manual decision this submission stands for; every protocol
    /// criterion without an answer is recorded as unanswered. The revision is
    /// assigned by the store.
    pub fn into_decision(self, protocol: &ReviewProtocol, decided_at: DateTime<Utc>) -> ScreeningDecision {
        let mut answers = self.criterion_answers;
        for c in &protocol.criteria {
            answers.entry(c.criterion_id.clone()).or_default();
        }
        ScreeningDecision {
            paper_id: self.paper_id,
            reviewer_id: self.reviewer_id,
            main: self.main,
            criterion_answers: answers,
            knew_paper: self.knew_paper,
            knew_authors: self.knew_authors,
            origin: DecisionOrigin::Manual,
            model_tag: None,
            probability: None,
            decided_at,
            revision: 0,
        }
    }
}

/// Every rule a manual decision must pass before it is stored.
pub fn check_manual_decision(decision: &ScreeningDecision, protocol: &ReviewProtocol) -> Result<()> {
    if decision.origin != DecisionOrigin::Manual {
        return Err(Error::validation("origin", "reviewers submit manual decisions only"));
    }
    let reviewer = decision.reviewer_id.as_str();
    if reviewer.trim().is_empty() {
        return Err(Error::validation("reviewer_id", "reviewer id must not be empty"));
    }
    if reviewer == SEED_REVIEWER || reviewer == AUTO_REVIEWER {
        return Err(Error::validation("reviewer_id", format!("{reviewer:?} is reserved")));
    }
    decision.validate_against(protocol)?;
    if protocol.mode == ScreeningMode::Strict {
        let unanswered = validate_strict(decision, protocol);
        if !unanswered.is_empty() {
            return Err(Error::StrictCriteriaUnanswered { unanswered });
        }
    }
    Ok(())
}

/// Latest manual decision per paper across all reviewers (by log order).
pub fn current_manual(log: &[LoggedDecision]) -> HashMap<&PaperId, &ScreeningDecision> {
    let mut out = HashMap::new();
    for entry in log.iter().filter(|e| e.decision.origin == DecisionOrigin::Manual) {
        out.insert(&entry.decision.paper_id, &entry.decision);
    }
    out
}

/// Latest decision by `reviewer` per paper.
pub fn reviewer_latest<'a>(log: &'a [LoggedDecision], reviewer: &ReviewerId) -> HashMap<&'a PaperId, &'a ScreeningDecision> {
    let mut out = HashMap::new();
    for entry in log
        .iter()
        .filter(|e| e.decision.origin == DecisionOrigin::Manual && &e.decision.reviewer_id == reviewer)
    {
        out.insert(&entry.decision.paper_id, &entry.decision);
    }
    out
}

/// One machine prediction shown next to a paper.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoPrediction {
    pub model_tag: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub criterion_id: Option<CriterionId>,
    pub prediction: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probability: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningItem {
    pub paper: PaperRecord,
    pub criteria: Vec<EligibilityCriterion>,
    pub existing_decision: Option<ScreeningDecision>,
    pub auto_predictions: Option<Vec<AutoPrediction>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextItem {
    Item(Box<ScreeningItem>),
    Exhausted,
}

fn main_str(m: MainDecision) -> &'static str {
    match m {
        MainDecision::Include => "include",
        MainDecision::Maybe => "maybe",
        MainDecision::Exclude => "exclude",
    }
}

fn qa_str(a: QaAnswer) -> &'static str {
    match a {
        QaAnswer::Yes => "yes",
        QaAnswer::No => "no",
        QaAnswer::Unparseable => "unparseable",
    }
}

/// Machine predictions for one paper: the latest classifier decision per
/// model tag, then the latest QA answer per criterion.
pub fn auto_predictions_for(paper: &PaperId, log: &[LoggedDecision], qa: &[QaPrediction]) -> Vec<AutoPrediction> {
    let mut by_tag: BTreeMap<&str, &ScreeningDecision> = BTreeMap::new();
    for e in log {
        let d = &e.decision;
        if &d.paper_id == paper && d.origin == DecisionOrigin::Classifier {
            if let Some(tag) = d.model_tag.as_deref() {
                by_tag.insert(tag, d);
            }
        }
    }
    let mut out: Vec<AutoPrediction> = by_tag
        .into_iter()
        .map(|(tag, d)| AutoPrediction {
            model_tag: tag.to_owned(),
            criterion_id: None,
            prediction: main_str(d.main).to_owned(),
            probability: d.probability,
            warning_text: None,
        })
        .collect();
    let mut by_criterion: BTreeMap<&CriterionId, &QaPrediction> = BTreeMap::new();
    for p in qa.iter().filter(|p| &p.paper_id == paper) {
        by_criterion.insert(&p.criterion_id, p);
    }
    out.extend(by_criterion.into_values().map(|p| AutoPrediction {
        model_tag: p.model_id.clone(),
        criterion_id: Some(p.criterion_id.clone()),
        prediction: qa_str(p.parsed).to_owned(),
        probability: None,
        warning_text: Some(HALLUCINATION_WARNING.to_owned()),
    }));
    out
}

/// The first paper, in corpus insertion order, that `reviewer` has not
/// decided yet.
pub fn next_item(
    protocol: &ReviewProtocol,
    papers: Vec<PaperRecord>,
    log: &[LoggedDecision],
    qa: &[QaPrediction],
    reviewer: &ReviewerId,
) -> NextItem {
    let decided = reviewer_latest(log, reviewer);
    let Some(paper) = papers.into_iter().find(|p| !decided.contains_key(&p.id)) else {
        return NextItem::Exhausted;
    };
    // another reviewer's (or the seed rule's) verdict, for context
    let existing_decision = current_manual(log).get(&paper.id).map(|d| (*d).clone());
    let predictions = auto_predictions_for(&paper.id, log, qa);
    NextItem::Item(Box::new(ScreeningItem {
        criteria: protocol.criteria.clone(),
        existing_decision,
        auto_predictions: (!predictions.is_empty()).then_some(predictions),
        paper,
    }))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub total: usize,
    pub decided: usize,
    pub included: usize,
    pub maybe: usize,
    pub excluded: usize,
    /// Papers with a machine prediction and no manual decision.
    pub auto_predicted: usize,
}

pub fn progress(papers: &[PaperRecord], log: &[LoggedDecision], qa: &[QaPrediction]) -> Progress {
    let manual = current_manual(log);
    let mut p = Progress { total: papers.len(), ..Default::default() };
    let predicted: HashSet<&PaperId> = log
        .iter()
        .filter(|e| e.decision.origin != DecisionOrigin::Manual)
        .map(|e| &e.decision.paper_id)
        .chain(qa.iter().map(|q| &q.paper_id))
        .collect();
    for paper in papers {
        match manual.get(&paper.id).map(|d| d.main) {
            Some(MainDecision::Include) => p.included += 1,
            Some(MainDecision::Maybe) => p.maybe += 1,
            Some(MainDecision::Exclude) => p.excluded += 1,
            None if predicted.contains(&paper.id) => p.auto_predicted += 1,
            None => {}
        }
    }
    p.decided = p.included + p.maybe + p.excluded;
    p
}
