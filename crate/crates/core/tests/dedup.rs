mod common;

use std::collections::BTreeSet;

use chrono::{TimeZone, Utc};
use common::dedup_fixture::{fixture, oracle_pairs, outcome_pairs};
use proptest::prelude::*;
use sieve_core::catalog::{normalize_title, PaperId, PaperRecord};
use sieve_core::dedup::{dedup_batch, is_duplicate, CorpusIndex, DedupConfig};

#[test]
fn planted_pairs_match_pairwise_oracle() {
    let labeled = fixture();
    assert_eq!(labeled.records.len(), 50);
    let config = DedupConfig::default();
    let oracle = oracle_pairs(&labeled.records, config.fuzzy_threshold);
    assert_eq!(oracle, labeled.planted, "the oracle must agree with the hand labels");

    let outcome = dedup_batch(labeled.records.clone(), &CorpusIndex::new(), &config);
    let got = outcome_pairs(&labeled.records, &outcome);
    let mismatched: BTreeSet<_> = got.symmetric_difference(&oracle).collect();
    assert!(mismatched.is_empty(), "mismatched pairs: {mismatched:?}");
    assert_eq!(outcome.unique.len(), 38);
    assert_eq!(outcome.report.absorbed_count(), 12);
}

#[test]
fn library_relation_matches_oracle_on_every_pair() {
    let labeled = fixture();
    let config = DedupConfig::default();
    for (i, a) in labeled.records.iter().enumerate() {
        for b in &labeled.records[i + 1..] {
            assert_eq!(
                is_duplicate(a, b, &config),
                common::dedup_fixture::oracle_duplicate(a, b, config.fuzzy_threshold),
                "{:?} / {:?}",
                a.title,
                b.title
            );
        }
    }
}

#[test]
fn fixture_against_existing_corpus() {
    let labeled = fixture();
    let config = DedupConfig::default();
    let first = dedup_batch(labeled.records.clone(), &CorpusIndex::new(), &config);
    let mut corpus = CorpusIndex::new();
    for r in &first.unique {
        corpus.insert_record(r);
    }
    // a second pass over the raw batch finds every cluster already stored
    let second = dedup_batch(labeled.records, &corpus, &config);
    assert!(second.unique.is_empty());
    assert_eq!(second.report.corpus_matches.len(), 38);
}

fn vocabulary() -> Vec<&'static str> {
    vec!["screening", "review", "learning", "soil", "carbon", "neural", "graph", "query", "living", "bias"]
}

prop_compose! {
    fn arb_record()(
        words in prop::collection::vec(0..10usize, 1..5),
        year in prop::option::of(2018..2021i32),
        doi in prop::option::of(0..4u8),
        noise in 0..3u8,
        n in 0..1_000_000u32,
    ) -> PaperRecord {
        let vocab = vocabulary();
        let mut title: String = words.iter().map(|&w| vocab[w]).collect::<Vec<_>>().join(" ");
        match noise {
            1 => title = title.to_uppercase(),
            2 => title.push('.'),
            _ => {}
        }
        let at = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap() + chrono::Duration::seconds(i64::from(n));
        let mut r = PaperRecord::new(PaperId::new(format!("p{n}")), title, "s", at);
        r.year = year;
        if let Some(d) = doi {
            r.set_doi(&format!("10.1/{d}"));
        }
        r
    }
}

fn unique_ids(records: Vec<PaperRecord>) -> Vec<PaperRecord> {
    let mut seen = BTreeSet::new();
    records.into_iter().filter(|r| seen.insert(r.id.clone())).collect()
}

fn same_cluster_ids(outcome: &sieve_core::dedup::DedupOutcome) -> BTreeSet<BTreeSet<PaperId>> {
    let mut clusters: BTreeSet<BTreeSet<PaperId>> = outcome
        .unique
        .iter()
        .map(|r| BTreeSet::from([r.id.clone()]))
        .collect();
    for g in &outcome.report.merged_groups {
        clusters.remove(&BTreeSet::from([g.survivor.clone()]));
        let mut c: BTreeSet<PaperId> = g.absorbed.iter().cloned().collect();
        c.insert(g.survivor.clone());
        clusters.insert(c);
    }
    clusters
}

proptest! {
    #[test]
    fn normalize_title_is_idempotent(s in "\\PC{0,40}") {
        if let Some(once) = normalize_title(&s) {
            prop_assert_eq!(normalize_title(&once), Some(once.clone()));
        }
    }

    #[test]
    fn dedup_conserves_records(batch in prop::collection::vec(arb_record(), 0..25)) {
        let batch = unique_ids(batch);
        let out = dedup_batch(batch.clone(), &CorpusIndex::new(), &DedupConfig::default());
        prop_assert_eq!(out.unique.len() + out.report.absorbed_count(), batch.len());
        prop_assert_eq!(out.report.input_count, batch.len());
    }

    #[test]
    fn dedup_is_idempotent(batch in prop::collection::vec(arb_record(), 0..25)) {
        let config = DedupConfig::default();
        let once = dedup_batch(unique_ids(batch), &CorpusIndex::new(), &config);
        let twice = dedup_batch(once.unique.clone(), &CorpusIndex::new(), &config);
        prop_assert_eq!(twice.unique, once.unique);
        prop_assert!(twice.report.merged_groups.is_empty());
    }

    #[test]
    fn dedup_ignores_input_order(batch in prop::collection::vec(arb_record(), 0..25), seed in any::<u64>()) {
        let batch = unique_ids(batch);
        let mut shuffled = batch.clone();
        // deterministic permutation from the seed
        let len = shuffled.len();
        for i in (1..len).rev() {
            let j = (seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64) % (i as u64 + 1)) as usize;
            shuffled.swap(i, j);
        }
        let config = DedupConfig::default();
        let a = dedup_batch(batch, &CorpusIndex::new(), &config);
        let b = dedup_batch(shuffled, &CorpusIndex::new(), &config);
        prop_assert_eq!(same_cluster_ids(&a), same_cluster_ids(&b));
        let mut ua = a.unique.clone();
        let mut ub = b.unique.clone();
        ua.sort_by(|x, y| x.id.cmp(&y.id));
        ub.sort_by(|x, y| x.id.cmp(&y.id));
        prop_assert_eq!(ua, ub);
    }

    #[test]
    fn no_cluster_holds_two_dois(batch in prop::collection::vec(arb_record(), 0..25)) {
        let out = dedup_batch(unique_ids(batch), &CorpusIndex::new(), &DedupConfig::default());
        for (i, a) in out.unique.iter().enumerate() {
            for b in &out.unique[i + 1..] {
                prop_assert!(!is_duplicate(a, b, &DedupConfig::default()), "{:?} ~ {:?}", a.title, b.title);
            }
        }
    }
}
