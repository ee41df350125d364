use std::collections::BTreeMap;

use sieve_core::catalog::{MainDecision, PaperRecord, ReviewId, ReviewerId};
use sieve_core::screening::DecisionSubmission;
use sieve_core::service::ReviewService;

pub const INCLUDED: [&str; 3] = ["Automated screening", "Active learning", "Zero-shot"];
pub const EXCLUDED: [&str; 3] = ["Soil nitrogen", "Irrigation", "Cover crops"];

pub fn submission(paper: &PaperRecord, reviewer: &str, main: MainDecision) -> DecisionSubmission {
    DecisionSubmission {
        paper_id: paper.id.clone(),
        reviewer_id: ReviewerId::new(reviewer),
        main,
        criterion_answers: BTreeMap::new(),
        knew_paper: None,
        knew_authors: None,
        expected_revision: None,
    }
}

pub fn paper_titled<'a>(papers: &'a [PaperRecord], prefix: &str) -> &'a PaperRecord {
    papers
        .iter()
        .find(|p| p.title.to_lowercase().starts_with(&prefix.to_lowercase()))
        .unwrap_or_else(|| panic!("no paper {prefix}"))
}

/// Includes the three screening papers and excludes three agronomy papers
/// as reviewer `ana`. Returns the corpus.
pub async fn screen_six(service: &ReviewService, rid: &ReviewId) -> Vec<PaperRecord> {
    let papers = service.store().read(|tx| tx.papers(rid)).unwrap();
    for (prefixes, main) in [(INCLUDED, MainDecision::Include), (EXCLUDED, MainDecision::Exclude)] {
        for prefix in prefixes {
            service.submit_decision(rid, submission(paper_titled(&papers, prefix), "ana", main)).await.unwrap();
        }
    }
    papers
}
