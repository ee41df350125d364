#![allow(dead_code)]

pub mod dedup_fixture;
pub mod flow;
pub mod gradcheck;

use std::sync::Arc;

use chrono::{DateTime, TimeZone, Utc};
use sieve_core::catalog::{CriterionDraft, CriterionKind, ProtocolDraft, ScreeningMode};
use sieve_core::persistence::Store;
use sieve_core::search::{ConnectorConfig, ConnectorRegistry};
use sieve_core::service::ReviewService;
use sieve_stubs::{ConnectorStub, WireRecord};

pub fn at(year: i32, month: u32, day: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(year, month, day, 12, 0, 0).unwrap()
}

pub fn fixed_clock(t: DateTime<Utc>) -> sieve_core::service::Clock {
    Arc::new(move || t)
}

/// A wire connector config pointing at a local stub, without rate limiting
/// worth waiting for.
pub fn stub_config(name: &str, addr: std::net::SocketAddr) -> ConnectorConfig {
    let mut c = ConnectorConfig::wire(name, format!("http://{addr}"));
    c.rate_limit = 1000.0;
    c
}

fn rec(id: &str, title: &str, abs: &str, year: Option<i32>, doi: Option<&str>) -> WireRecord {
    let mut r = WireRecord::new(id, title, year);
    r.abstract_text = Some(abs.to_owned());
    r.authors = vec!["R. Author".into(), "S. Writer".into()];
    r.venue = Some("Journal of Evidence".into());
    r.doi = doi.map(str::to_owned);
    r
}

/// Eighteen records: screening-automation papers, agronomy papers, and a
/// few others. Years run from 2015 to 2024; one has no year.
pub fn topical_corpus() -> Vec<WireRecord> {
    vec![
        rec("a1", "Automated screening of abstracts for systematic reviews", "Machine learning ranks abstracts for systematic review screening.", Some(2016), Some("10.1000/a1")),
        rec("a2", "Active learning to reduce screening workload in systematic reviews", "Active learning prioritises abstracts during review screening.", Some(2018), Some("10.1000/a2")),
        rec("a3", "Text classification for citation screening", "Classifiers screen citations for systematic reviews automatically.", Some(2019), None),
        rec("a4", "Zero-shot question answering for eligibility screening", "Language models answer eligibility questions during screening of reviews.", Some(2022), Some("10.1000/a4")),
        rec("a5", "Living systematic reviews with automated screening", "Continuous screening automation keeps systematic reviews current.", Some(2023), None),
        rec("a6", "Prioritising abstracts in review screening with neural ranking", "Neural ranking of abstracts supports review screening.", Some(2024), Some("10.1000/a6")),
        rec("s1", "Soil nitrogen dynamics in winter wheat", "Field trials measure soil nitrogen under wheat rotations.", Some(2015), Some("10.2000/s1")),
        rec("s2", "Irrigation effects on maize yield in arid soils", "Irrigation schedules change maize yield in arid fields.", Some(2017), None),
        rec("s3", "Cover crops and soil organic carbon", "Cover crops raise soil organic carbon over decades.", Some(2018), Some("10.2000/s3")),
        rec("s4", "Phosphorus fertiliser response of barley", "Barley yield responds to phosphorus fertiliser rates in field soils.", Some(2020), None),
        rec("s5", "Tillage and earthworm abundance in cereal fields", "Reduced tillage increases earthworm abundance in cereal soils.", Some(2021), Some("10.2000/s5")),
        rec("s6", "Drought tolerance of sorghum cultivars", "Sorghum cultivars differ in drought tolerance in field soils.", Some(2024), None),
        rec("o1", "Bird migration timing under climate change", "Migratory birds arrive earlier in warmer springs.", Some(2019), None),
        rec("o2", "Graph databases for provenance tracking", "Provenance graphs are stored in graph databases.", Some(2022), Some("10.3000/o2")),
        rec("o3", "A survey of query optimisation", "Query optimisers choose join orders by cost.", None, None),
        rec("o4", "Microplastics in freshwater sediments", "Sediment cores contain microplastic fragments.", Some(2023), None),
        rec("o5", "Citation screening tools: a user study", "Reviewers evaluated citation screening tools for systematic reviews.", Some(2021), Some("10.1000/o5")),
        rec("o6", "Energy use of data centres", "Data centre energy use grows with demand.", Some(2016), None),
    ]
}

/// Records the second stub returns: three overlaps with the first corpus
/// (by DOI, by exact title, by near-identical title) and two new ones.
pub fn mirror_corpus() -> Vec<WireRecord> {
    vec![
        rec("m1", "Automated Screening of Abstracts for Systematic Reviews.", "Mirror copy.", Some(2016), Some("https://doi.org/10.1000/A1")),
        rec("m2", "Text classification for citation screening", "Mirror copy without DOI.", Some(2019), None),
        rec("m3", "Cover crops and soil organic carbons", "Near-identical title.", Some(2018), None),
        rec("m4", "Screening prioritisation with transformers", "Transformers rank abstracts for systematic review screening.", Some(2024), None),
        rec("m5", "Nitrate leaching under potato crops", "Nitrate leaching from potato fields on sandy soils.", Some(2019), None),
    ]
}

pub fn criteria() -> Vec<CriterionDraft> {
    vec![
        CriterionDraft { criterion_id: None, kind: CriterionKind::Inclusion, text: "Does the paper study screening automation?".into() },
        CriterionDraft { criterion_id: None, kind: CriterionKind::Inclusion, text: "Is the setting systematic reviews?".into() },
        CriterionDraft { criterion_id: None, kind: CriterionKind::Exclusion, text: "Is it about agriculture?".into() },
    ]
}

pub fn draft(mode: ScreeningMode) -> ProtocolDraft {
    ProtocolDraft {
        title: "Screening automation".into(),
        description: "Tools that automate study screening".into(),
        queries: vec!["screening automation".into()],
        criteria: criteria(),
        connectors: Vec::new(),
        top_n: None,
        mode,
        prior_knowledge_enabled: true,
    }
}

pub struct Harness {
    pub service: ReviewService,
    pub index: ConnectorStub,
    pub mirror: ConnectorStub,
}

/// A service over an in-memory store with two stub connectors.
pub async fn harness(now: DateTime<Utc>) -> Harness {
    let index = ConnectorStub::fixed(topical_corpus());
    let mirror = ConnectorStub::fixed(mirror_corpus()).ignoring_min_year();
    let a = index.start().await.unwrap();
    let b = mirror.start().await.unwrap();
    let registry = ConnectorRegistry::new([stub_config("index", a), stub_config("mirror", b)]).unwrap();
    let service = ReviewService::new(Arc::new(Store::in_memory().unwrap()), registry).with_clock(fixed_clock(now));
    Harness { service, index, mirror }
}
