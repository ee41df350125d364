mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sieve_core::catalog::{
    DecisionOrigin, MainDecision, PaperId, PaperRecord, ProtocolDraft, ReviewId, ReviewerId, ScreeningDecision,
};
use sieve_core::dedup::{dedup_batch, DedupConfig, KeyEntry};
use sieve_core::error::Error;
use sieve_core::persistence::{Store, SCHEMA_VERSION};

use common::at;
use common::dedup_fixture::{oracle_doi, oracle_title};

fn new_review(store: &Store) -> ReviewId {
    let draft = ProtocolDraft { title: "Storage".into(), queries: vec!["q".into()], ..Default::default() };
    let protocol = draft.into_protocol(ReviewId::generate(), &["stub"], None).unwrap();
    store.write(|tx| tx.insert_review(&protocol, at(2024, 1, 1))).unwrap();
    protocol.review_id
}

fn paper(id: &str, title: &str, year: Option<i32>, doi: Option<&str>) -> PaperRecord {
    let mut r = PaperRecord::new(PaperId::new(id), title, "stub", at(2024, 1, 1));
    r.year = year;
    if let Some(d) = doi {
        r.set_doi(d);
    }
    r
}

fn count(store: &Store, rid: &ReviewId) -> usize {
    store.read(|tx| tx.paper_count(rid)).unwrap()
}

fn manual(paper: &str, main: MainDecision, day: u32) -> ScreeningDecision {
    ScreeningDecision {
        paper_id: PaperId::new(paper),
        reviewer_id: ReviewerId::new("r1"),
        main,
        criterion_answers: Default::default(),
        knew_paper: Some(false),
        knew_authors: None,
        origin: DecisionOrigin::Manual,
        model_tag: None,
        probability: None,
        decided_at: at(2024, 2, day),
        revision: 0,
    }
}

#[test]
fn upsert_counts() {
    let store = Store::in_memory().unwrap();
    let rid = new_review(&store);
    let batch = [paper("a", "Alpha", Some(2020), None), paper("b", "Beta", None, None), paper("c", "Gamma", Some(2021), Some("10.9/c"))];
    let ids = store.write(|tx| tx.upsert_papers(&rid, &batch)).unwrap();
    assert_eq!(ids.len(), 3);
    assert_eq!(count(&store, &rid), 3);
}

#[test]
fn error_mid_batch_leaves_corpus_unchanged() {
    let store = Store::in_memory().unwrap();
    let rid = new_review(&store);
    store.write(|tx| tx.upsert_papers(&rid, &[paper("seed", "Seed", Some(2020), None)])).unwrap();
    let before = store.read(|tx| Ok((tx.papers(&rid)?, tx.corpus_key_index(&rid)?.entries()))).unwrap();

    let err = store
        .write(|tx| {
            tx.upsert_papers(&rid, &[paper("x1", "First half", Some(2021), None)])?;
            Err::<(), _>(Error::Conflict("injected crash".into()))
        })
        .unwrap_err();
    assert!(matches!(err, Error::Conflict(_)));
    let after = store.read(|tx| Ok((tx.papers(&rid)?, tx.corpus_key_index(&rid)?.entries()))).unwrap();
    assert_eq!(before, after);
}

#[test]
fn panic_mid_batch_leaves_corpus_unchanged() {
    let store = Arc::new(Store::in_memory().unwrap());
    let rid = new_review(&store);
    let s = Arc::clone(&store);
    let r = rid.clone();
    let outcome = catch_unwind(AssertUnwindSafe(move || {
        s.write(|tx| {
            tx.upsert_papers(&r, &[paper("p1", "One", Some(2020), None), paper("p2", "Two", Some(2020), None)])?;
            panic!("injected crash");
            #[allow(unreachable_code)]
            Ok(())
        })
    }));
    assert!(outcome.is_err());
    assert_eq!(count(&store, &rid), 0);
    // the store stays usable after the panic
    store.write(|tx| tx.upsert_papers(&rid, &[paper("p3", "Three", None, None)])).unwrap();
    assert_eq!(count(&store, &rid), 1);
}

#[test]
fn conflict_inside_a_batch_rolls_back_the_whole_batch() {
    let store = Store::in_memory().unwrap();
    let rid = new_review(&store);
    store.write(|tx| tx.upsert_papers(&rid, &[paper("old", "Old", Some(2019), Some("10.5/dup"))])).unwrap();
    let batch = [
        paper("n1", "New one", Some(2021), None),
        paper("n2", "New two", Some(2022), Some("10.5/fresh")),
        paper("n3", "Clashing", Some(2023), Some("10.5/DUP")),
    ];
    let err = store.write(|tx| tx.upsert_papers(&rid, &batch)).unwrap_err();
    assert_eq!(err.code(), "write_conflict");
    assert_eq!(count(&store, &rid), 1);
    assert!(store.read(|tx| tx.paper(&rid, &PaperId::new("n1"))).unwrap().is_none());
}

#[test]
fn fresh_review_has_an_empty_index() {
    let store = Store::in_memory().unwrap();
    let rid = new_review(&store);
    assert!(store.read(|tx| tx.corpus_key_index(&rid)).unwrap().is_empty());
    store.write(|tx| tx.upsert_papers(&rid, &[paper("d", "Has a DOI", Some(2020), Some("10.7/ABC"))])).unwrap();
    let index = store.read(|tx| tx.corpus_key_index(&rid)).unwrap();
    assert!(index.contains_key("doi:10.7/abc"));
    let missing = store.read(|tx| tx.corpus_key_index(&ReviewId::new("missing"))).unwrap_err();
    assert_eq!(missing.code(), "not_found");
}

const WORDS: &[&str] = &[
    "screening", "review", "évaluation", "living", "neural", "soil", "wheat", "naïve", "bayes", "ranking",
    "citation", "models", "Über", "corpus", "trial", "meta", "analysis", "deep", "active", "learning",
];

fn random_record(rng: &mut ChaCha8Rng, i: usize) -> PaperRecord {
    let title = if rng.random_bool(0.05) {
        "?!".to_owned()
    } else {
        let n = rng.random_range(1..=5usize);
        (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
    };
    let year = rng.random_bool(0.8).then(|| rng.random_range(2015..=2024));
    let doi = rng.random_bool(0.4).then(|| format!("10.{}/X{i}", rng.random_range(1000..1010)));
    paper(&format!("r{i}"), &title, year, doi.as_deref())
}

/// Keys recomputed from a full scan of the stored papers.
fn full_scan_keys(papers: &[PaperRecord]) -> BTreeSet<KeyEntry> {
    let mut keys = BTreeSet::new();
    for p in papers {
        let doi = oracle_doi(p);
        if let Some(d) = &doi {
            keys.insert(KeyEntry { key: format!("doi:{d}"), paper_id: p.id.clone(), has_doi: true });
        }
        let title = oracle_title(&p.title);
        if !title.is_empty() {
            let key = match p.year {
                Some(y) => format!("ty:{y}:{title}"),
                None => format!("t:{title}"),
            };
            keys.insert(KeyEntry { key, paper_id: p.id.clone(), has_doi: doi.is_some() });
        }
    }
    keys
}

#[test]
fn key_index_matches_full_scan() {
    for seed in 0..10u64 {
        let store = Store::in_memory().unwrap();
        let rid = new_review(&store);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut next = 0;
        for _ in 0..6 {
            let batch: Vec<PaperRecord> = (0..rng.random_range(1..40usize))
                .map(|_| {
                    next += 1;
                    random_record(&mut rng, next)
                })
                .collect();
            let index = store.read(|tx| tx.corpus_key_index(&rid)).unwrap();
            let out = dedup_batch(batch, &index, &DedupConfig::default());
            store.write(|tx| tx.upsert_papers(&rid, &out.unique)).unwrap();
        }
        let (papers, index) = store.read(|tx| Ok((tx.papers(&rid)?, tx.corpus_key_index(&rid)?))).unwrap();
        let stored: BTreeSet<KeyEntry> = index.entries().into_iter().collect();
        assert_eq!(stored, full_scan_keys(&papers), "seed {seed}");
        assert!(papers.iter().all(|p| index.contains_id(&p.id)));
    }
}

#[test]
fn history_survives_restart_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sieve.db");
    assert_eq!(Store::migrate(&path).unwrap(), SCHEMA_VERSION);

    let (rid, before) = {
        let store = Store::open(&path).unwrap();
        let rid = new_review(&store);
        store.write(|tx| tx.upsert_papers(&rid, &[paper("a", "A paper", Some(2020), None)])).unwrap();
        for (day, main) in [(1, MainDecision::Include), (2, MainDecision::Exclude), (3, MainDecision::Include)] {
            store.write(|tx| tx.append_decision(&rid, &manual("a", main, day))).unwrap();
        }
        let log = store.read(|tx| tx.decisions(&rid)).unwrap();
        let bytes: Vec<String> = log.iter().map(|d| serde_json::to_string(&d.decision).unwrap()).collect();
        (rid, bytes)
    };

    let store = Store::open(&path).unwrap();
    let log = store.read(|tx| tx.decisions(&rid)).unwrap();
    let after: Vec<String> = log.iter().map(|d| serde_json::to_string(&d.decision).unwrap()).collect();
    assert_eq!(before, after);
    let revisions: Vec<u64> = log.iter().map(|d| d.decision.revision).collect();
    assert_eq!(revisions, [1, 2, 3]);
}

#[test]
fn decisions_need_an_existing_paper() {
    let store = Store::in_memory().unwrap();
    let rid = new_review(&store);
    let err = store.write(|tx| tx.append_decision(&rid, &manual("ghost", MainDecision::Include, 1))).unwrap_err();
    assert_eq!(err.code(), "not_found");
}

#[test]
fn readers_see_whole_batches_only() {
    let store = Arc::new(Store::in_memory().unwrap());
    let rid = new_review(&store);
    let writer = {
        let store = Arc::clone(&store);
        let rid = rid.clone();
        std::thread::spawn(move || {
            for b in 0..20 {
                let batch: Vec<PaperRecord> =
                    (0..5).map(|i| paper(&format!("b{b}-{i}"), &format!("Batch {b} item {i}"), None, None)).collect();
                store.write(|tx| tx.upsert_papers(&rid, &batch)).unwrap();
            }
        })
    };
    for _ in 0..200 {
        assert_eq!(count(&store, &rid) % 5, 0);
    }
    writer.join().unwrap();
    assert_eq!(count(&store, &rid), 100);
}
