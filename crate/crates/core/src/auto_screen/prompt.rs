use crate::catalog::{EligibilityCriterion, PaperRecord};

const NA: &str = "N/A";

fn or_na(value: Option<&str>) -> &str {
    match value.map(str::trim) {
        Some(v) if !v.is_empty() => v,
        _ => NA,
    }
}

/// The question-answering prompt for one paper and one eligibility question.
///
/// Seven LF-separated lines: title, abstract, authors, journal, year,
/// question, answer instruction. Missing fields render as `N/A`.
pub fn build_prompt(paper: &PaperRecord, criterion: &EligibilityCriterion) -> String {
    let authors = paper.authors.join(", ");
    let year = paper.year.map(|y| y.to_string());
    format!(
        "Title: {}\nAbstract: {}\nAuthors: {}\nJournal: {}\nYear: {}\nQuestion: {}\nAnswer yes or no.",
        paper.title,
        or_na(paper.abstract_text.as_deref()),
        or_na(Some(&authors)),
        or_na(paper.venue.as_deref()),
        or_na(year.as_deref()),
        criterion.text,
    )
}
