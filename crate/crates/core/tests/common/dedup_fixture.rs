//! A hand-labeled deduplication fixture and an exhaustive pairwise oracle
//! that shares no code with the library's matcher.

use std::collections::{BTreeSet, HashSet};

use chrono::{TimeZone, Utc};
use deunicode::deunicode;
use sieve_core::catalog::{PaperId, PaperRecord};

pub struct Labeled {
    pub records: Vec<PaperRecord>,
    /// Index pairs (i < j) planted as duplicates.
    pub planted: BTreeSet<(usize, usize)>,
}

fn record(i: usize, title: &str, year: Option<i32>, doi: Option<&str>) -> PaperRecord {
    let at = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap() + chrono::Duration::seconds(i as i64);
    let mut r = PaperRecord::new(PaperId::new(format!("r{i:02}")), title, format!("src{}", i % 3), at);
    r.year = year;
    if let Some(d) = doi {
        r.set_doi(d);
    }
    r
}

/// 50 records, 12 planted duplicate pairs, 38 distinct papers. Includes
/// near misses: equal titles in different years, equal titles with
/// different DOIs, and titles just below the similarity threshold.
pub fn fixture() -> Labeled {
    let base: Vec<(&str, Option<i32>, Option<&str>)> = vec![
        // 0..=11 get a planted twin below
        ("Deep learning methods for automated citation screening in systematic reviews", Some(2020), None),
        ("Active learning for technology assisted review", Some(2019), Some("10.1145/3331184")),
        ("A survey of record linkage techniques", Some(2012), Some("10.1109/tkde.2011.127")),
        ("Über-Netze: graph neural networks for citation analysis", Some(2021), None),
        ("Screening prioritisation with language models", Some(2023), None),
        ("The effect of cover crops on nitrate leaching in sandy soils", Some(2016), Some("10.1016/j.agee.2016.01.001")),
        ("Naïve Bayes baselines for biomedical text classification", Some(2015), None),
        ("Living systematic reviews: an emerging opportunity", Some(2014), Some("10.1371/journal.pmed.1001603")),
        ("Measuring inter-rater reliability in abstract screening", Some(2018), None),
        ("Cost-effective query formulation for Boolean search", Some(2017), None),
        ("Café culture and urban wellbeing in European cities", Some(2019), None),
        ("Transformers for biomedical named entity recognition", None, None),
        // 12..=37 are singletons
        ("Citation screening with zero-shot classifiers", Some(2022), None),
        ("Citation screening with zero-shot classifiers", Some(2023), None),
        ("Neural ranking models for ad hoc retrieval", Some(2018), Some("10.1000/ranking.a")),
        ("Neural ranking models for ad hoc retrieval", Some(2018), Some("10.1000/ranking.b")),
        ("Query expansion with word embeddings", Some(2016), None),
        ("Query expansion with sentence embeddings", Some(2016), None),
        ("Stopping methods for technology assisted reviews", Some(2020), None),
        ("Evaluating stopping rules in systematic review screening", Some(2021), None),
        ("Soil organic carbon under no-till management", Some(2015), Some("10.1016/j.still.2015.02.003")),
        ("Bird migration timing under climate warming", Some(2019), None),
        ("Microplastics in freshwater sediments: a review", Some(2020), None),
        ("Energy consumption of large data centres", Some(2016), None),
        ("Graph databases for provenance tracking", Some(2022), None),
        ("A cost model for distributed query optimisation", None, None),
        ("Risk of bias assessment with machine learning", Some(2021), None),
        ("Crowdsourcing citation screening for systematic reviews", Some(2017), None),
        ("Automatic extraction of PICO elements from abstracts", Some(2018), None),
        ("Deduplication of bibliographic databases at scale", Some(2022), None),
        ("Reference management software: a comparison", Some(2013), None),
        ("Semantic search over scholarly knowledge graphs", Some(2021), Some("10.1007/978-3-030-77385-4_12")),
        ("Gradient boosting for clinical outcome prediction", Some(2019), None),
        ("Federated search across digital libraries", Some(2011), None),
        ("Open access citation advantage revisited", Some(2018), None),
        ("Protocol registration and reporting bias", Some(2016), None),
        ("!!!", None, None),
        ("Topic models for exploratory literature analysis", Some(2014), None),
    ];
    let twins: Vec<(usize, &str, Option<i32>, Option<&str>)> = vec![
        // fuzzy: one letter dropped
        (0, "Deep learning method for automated citation screening in systematic reviews", Some(2020), None),
        // same DOI, different title text and resolver prefix
        (1, "Active Learning for Technology-Assisted Review (extended)", Some(2019), Some("https://doi.org/10.1145/3331184")),
        (2, "A Survey of Record Linkage Techniques.", Some(2012), Some("doi:10.1109/TKDE.2011.127")),
        // diacritics folded away
        (3, "Uber-Netze: Graph Neural Networks for Citation Analysis", Some(2021), None),
        // exact after normalization
        (4, "SCREENING PRIORITISATION WITH LANGUAGE MODELS", Some(2023), None),
        // DOI on one side only, same title and year
        (5, "The effect of cover crops on nitrate leaching in sandy soils", Some(2016), None),
        (6, "Naive Bayes baselines for biomedical text-classification", Some(2015), None),
        // title-only match when both sides carry the same DOI
        (7, "Living systematic reviews - an emerging opportunity", Some(2014), Some("10.1371/JOURNAL.PMED.1001603")),
        // fuzzy: spelling variant
        (8, "Measuring inter-rater reliability in abstracts screening", Some(2018), None),
        (9, "Cost effective query formulation for boolean search", Some(2017), None),
        (10, "Cafe culture and urban well-being in European cities", Some(2019), None),
        // both undated
        (11, "Transformers for Biomedical Named-Entity Recognition", None, None),
    ];

    let mut records: Vec<PaperRecord> = Vec::new();
    let mut planted = BTreeSet::new();
    for (i, (title, year, doi)) in base.iter().enumerate() {
        records.push(record(i, title, *year, *doi));
    }
    for (twin_of, title, year, doi) in twins {
        let i = records.len();
        records.push(record(i, title, year, doi));
        planted.insert((twin_of, i));
    }
    Labeled { records, planted }
}

pub fn oracle_title(raw: &str) -> String {
    let ascii = deunicode(raw).to_lowercase();
    let spaced: String = ascii.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { ' ' }).collect();
    spaced.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn oracle_grams(t: &str) -> HashSet<String> {
    let chars: Vec<char> = t.chars().collect();
    if chars.len() < 3 {
        return HashSet::from([t.to_owned()]);
    }
    chars.windows(3).map(|w| w.iter().collect()).collect()
}

pub fn oracle_doi(r: &PaperRecord) -> Option<String> {
    r.external_ids.get("doi").map(|d| d.to_lowercase())
}

/// The pairwise duplicate relation, written from the definition.
pub fn oracle_duplicate(a: &PaperRecord, b: &PaperRecord, threshold: f64) -> bool {
    if let (Some(x), Some(y)) = (oracle_doi(a), oracle_doi(b)) {
        return x == y;
    }
    if a.year != b.year {
        return false;
    }
    let (ta, tb) = (oracle_title(&a.title), oracle_title(&b.title));
    if ta.is_empty() || tb.is_empty() {
        return false;
    }
    if ta == tb {
        return true;
    }
    let (ga, gb) = (oracle_grams(&ta), oracle_grams(&tb));
    let inter = ga.intersection(&gb).count() as f64;
    let union = (ga.len() + gb.len()) as f64 - inter;
    inter / union >= threshold
}

/// Connected components of the duplicate graph, found by checking all pairs.
/// Returns the set of same-cluster index pairs.
pub fn oracle_pairs(records: &[PaperRecord], threshold: f64) -> BTreeSet<(usize, usize)> {
    let n = records.len();
    let mut component: Vec<usize> = (0..n).collect();
    let mut changed = true;
    while changed {
        changed = false;
        for i in 0..n {
            for j in i + 1..n {
                if component[i] != component[j] && oracle_duplicate(&records[i], &records[j], threshold) {
                    let (keep, drop) = (component[i].min(component[j]), component[i].max(component[j]));
                    for c in component.iter_mut() {
                        if *c == drop {
                            *c = keep;
                        }
                    }
                    changed = true;
                }
            }
        }
    }
    let mut pairs = BTreeSet::new();
    for i in 0..n {
        for j in i + 1..n {
            if component[i] == component[j] {
                pairs.insert((i, j));
            }
        }
    }
    pairs
}

/// Same-cluster index pairs according to a dedup outcome's merge report.
pub fn outcome_pairs(records: &[PaperRecord], outcome: &sieve_core::dedup::DedupOutcome) -> BTreeSet<(usize, usize)> {
    let index = |id: &PaperId| records.iter().position(|r| &r.id == id).expect("known id");
    let mut pairs = BTreeSet::new();
    for g in &outcome.report.merged_groups {
        let mut members: Vec<usize> = g.absorbed.iter().map(index).collect();
        members.push(index(&g.survivor));
        members.sort();
        for (k, &i) in members.iter().enumerate() {
            for &j in &members[k + 1..] {
                pairs.insert((i, j));
            }
        }
    }
    pairs
}
