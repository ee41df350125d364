//! Batch and corpus deduplication.
//!
//! Records are linked when they share a DOI, or when they carry no
//! conflicting DOIs, agree on year, and their normalized titles have a
//! character-trigram Jaccard similarity at or above the configured threshold.
//! Clusters are formed by single linkage; a cluster is never allowed to hold
//! two different DOIs, which is where single linkage chaining would otherwise
//! glue distinct papers together.

use std::cmp::Reverse;
use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{lookup_keys, normalize_title, PaperId, PaperRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DedupConfig {
    pub fuzzy_threshold: f64,
}

impl Default for DedupConfig {
    fn default() -> Self {
        DedupConfig { fuzzy_threshold: 0.90 }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DedupError {
    #[error("cannot merge an empty group")]
    EmptyGroup,
    #[error("group holds conflicting DOIs {0} and {1}")]
    DoiConflict(String, String),
}

type Trigram = [char; 3];

fn trigrams(normalized: &str) -> HashSet<Trigram> {
    let chars: Vec<char> = normalized.chars().collect();
    if chars.len() < 3 {
        // short titles compare by equality: pad into a single pseudo-trigram
        let mut t = ['\0'; 3];
        t[..chars.len()].copy_from_slice(&chars);
        return HashSet::from([t]);
    }
    chars.windows(3).map(|w| [w[0], w[1], w[2]]).collect()
}

fn jaccard(a: &HashSet<Trigram>, b: &HashSet<Trigram>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Jaccard similarity of the character-trigram sets of two normalized titles.
pub fn trigram_jaccard(a: &str, b: &str) -> f64 {
    jaccard(&trigrams(a), &trigrams(b))
}

/// Pairwise duplicate test. Symmetric and total.
pub fn is_duplicate(a: &PaperRecord, b: &PaperRecord, config: &DedupConfig) -> bool {
    if let (Some(x), Some(y)) = (a.doi(), b.doi()) {
        return x.eq_ignore_ascii_case(y);
    }
    if a.year != b.year {
        return false;
    }
    match (normalize_title(&a.title), normalize_title(&b.title)) {
        (Some(ta), Some(tb)) => ta == tb || trigram_jaccard(&ta, &tb) >= config.fuzzy_threshold,
        _ => false,
    }
}

fn pick_longest<'a, I>(values: I) -> Option<String>
where
    I: Iterator<Item = &'a str>,
{
    values
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .max_by_key(|v| (v.chars().count(), Reverse(*v)))
        .map(str::to_owned)
}

/// Merges duplicates into one record. The result does not depend on the
/// order of `group`.
///
/// Field policy: the earliest-retrieved member's id survives; longest title,
/// abstract, venue and url win (ties go to the lexicographically smallest);
/// the longest author list wins; the earliest year is kept; ids and sources
/// are unioned; `is_seed` is the OR of members.
pub fn merge_records(group: &[PaperRecord]) -> Result<PaperRecord, DedupError> {
    let survivor = group
        .iter()
        .min_by(|a, b| (a.retrieved_at, &a.id).cmp(&(b.retrieved_at, &b.id)))
        .ok_or(DedupError::EmptyGroup)?;

    let mut external_ids: BTreeMap<String, String> = BTreeMap::new();
    for record in group {
        for (k, v) in &record.external_ids {
            external_ids
                .entry(k.clone())
                .and_modify(|cur| {
                    if v < cur {
                        *cur = v.clone();
                    }
                })
                .or_insert_with(|| v.clone());
        }
    }
    let mut dois: Vec<&str> = group.iter().filter_map(|r| r.doi()).collect();
    dois.sort_unstable();
    dois.dedup();
    if dois.len() > 1 {
        return Err(DedupError::DoiConflict(dois[0].to_owned(), dois[1].to_owned()));
    }

    let title = pick_longest(group.iter().map(|r| r.title.as_str()))
        .unwrap_or_else(|| survivor.title.clone());
    let authors = group
        .iter()
        .map(|r| &r.authors)
        .max_by(|a, b| a.len().cmp(&b.len()).then_with(|| b.cmp(a)))
        .cloned()
        .unwrap_or_default();

    Ok(PaperRecord {
        id: survivor.id.clone(),
        external_ids,
        title,
        abstract_text: pick_longest(group.iter().filter_map(|r| r.abstract_text.as_deref())),
        authors,
        venue: pick_longest(group.iter().filter_map(|r| r.venue.as_deref())),
        year: group.iter().filter_map(|r| r.year).min(),
        url: pick_longest(group.iter().filter_map(|r| r.url.as_deref())),
        sources: group.iter().flat_map(|r| r.sources.iter().cloned()).collect(),
        is_seed: group.iter().any(|r| r.is_seed),
        retrieved_at: survivor.retrieved_at,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedGroup {
    pub survivor: PaperId,
    pub absorbed: Vec<PaperId>,
}

/// Outcome of a batch deduplication.
///
/// `unique_count + Σ|absorbed| == input_count` always holds. Clusters that
/// matched the existing corpus are listed in `corpus_matches`; they are part
/// of `unique_count` but are not returned as new records.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MergeReport {
    pub input_count: usize,
    pub unique_count: usize,
    pub merged_groups: Vec<MergedGroup>,
    pub fuzzy_matches: usize,
    /// Links refused because they would have joined two different DOIs.
    pub doi_conflicts: Vec<(PaperId, PaperId)>,
    pub corpus_matches: Vec<CorpusMatch>,
}

impl MergeReport {
    pub fn absorbed_count(&self) -> usize {
        self.merged_groups.iter().map(|g| g.absorbed.len()).sum()
    }

    /// Records that did not become new corpus entries.
    pub fn duplicates_suppressed(&self) -> usize {
        self.absorbed_count() + self.corpus_matches.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMatch {
    /// The merged batch record that was dropped.
    pub batch_id: PaperId,
    /// The persisted paper it collided with.
    pub existing: PaperId,
}

/// One stored paper reachable under an index key.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KeyEntry {
    pub key: String,
    pub paper_id: PaperId,
    /// Whether the stored paper carries a DOI. A title key never links two
    /// papers whose DOIs differ.
    pub has_doi: bool,
}

impl KeyEntry {
    pub fn for_record(record: &PaperRecord) -> Vec<KeyEntry> {
        let has_doi = record.doi().is_some();
        lookup_keys(record)
            .into_iter()
            .map(|key| KeyEntry { key, paper_id: record.id.clone(), has_doi })
            .collect()
    }
}

/// Lookup keys (and ids) of the papers already stored for a review.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusIndex {
    keys: HashMap<String, Vec<(PaperId, bool)>>,
    ids: HashSet<PaperId>,
}

impl CorpusIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = KeyEntry>) -> Self {
        let mut index = Self::new();
        for e in entries {
            index.insert(e);
        }
        index
    }

    pub fn insert_record(&mut self, record: &PaperRecord) {
        self.ids.insert(record.id.clone());
        for e in KeyEntry::for_record(record) {
            self.insert(e);
        }
    }

    pub fn insert(&mut self, entry: KeyEntry) {
        self.ids.insert(entry.paper_id.clone());
        let owners = self.keys.entry(entry.key).or_default();
        if !owners.iter().any(|(id, _)| *id == entry.paper_id) {
            owners.push((entry.paper_id, entry.has_doi));
        }
    }

    /// Registers a stored paper that has no usable key.
    pub fn insert_id(&mut self, id: PaperId) {
        self.ids.insert(id);
    }

    pub fn contains_key(&self, key: &str) -> bool {
        self.keys.contains_key(key)
    }

    pub fn contains_id(&self, id: &PaperId) -> bool {
        self.ids.contains(id)
    }

    /// All `(key, paper)` entries, sorted.
    pub fn entries(&self) -> Vec<KeyEntry> {
        let mut out: Vec<KeyEntry> = self
            .keys
            .iter()
            .flat_map(|(k, owners)| {
                owners.iter().map(move |(id, has_doi)| KeyEntry {
                    key: k.clone(),
                    paper_id: id.clone(),
                    has_doi: *has_doi,
                })
            })
            .collect();
        out.sort();
        out
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty() && self.ids.is_empty()
    }

    fn lookup(&self, record: &PaperRecord) -> Option<&PaperId> {
        if let Some(id) = self.ids.get(&record.id) {
            return Some(id);
        }
        let has_doi = record.doi().is_some();
        lookup_keys(record).iter().find_map(|k| {
            let owners = self.keys.get(k)?;
            if k.starts_with("doi:") {
                return owners.first().map(|(id, _)| id);
            }
            owners
                .iter()
                .find(|(_, owner_doi)| !(has_doi && *owner_doi))
                .map(|(id, _)| id)
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DedupOutcome {
    /// Merged records that are new to the corpus, in order of first appearance.
    pub unique: Vec<PaperRecord>,
    /// Merged records that collided with the corpus.
    pub suppressed: Vec<PaperRecord>,
    pub report: MergeReport,
}

struct Prepared {
    title: Option<String>,
    grams: HashSet<Trigram>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum LinkKind {
    /// The same source record, returned by more than one query.
    SameId,
    Doi,
    ExactTitle,
    Fuzzy,
}

struct Link {
    kind: LinkKind,
    similarity: f64,
    a: usize,
    b: usize,
}

/// Candidate links within `records`, restricted to pairs that can possibly
/// pass [`is_duplicate`]: same DOI, or same year and at least one shared
/// trigram with compatible set sizes. The restriction never drops a true pair.
fn candidate_links(records: &[PaperRecord], config: &DedupConfig) -> Vec<Link> {
    let prepared: Vec<Prepared> = records
        .iter()
        .map(|r| {
            let title = normalize_title(&r.title);
            let grams = title.as_deref().map(trigrams).unwrap_or_default();
            Prepared { title, grams }
        })
        .collect();

    let mut links = Vec::new();

    let mut by_id: HashMap<&PaperId, Vec<usize>> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        by_id.entry(&r.id).or_default().push(i);
    }
    for members in by_id.values() {
        for &b in &members[1..] {
            links.push(Link { kind: LinkKind::SameId, similarity: 1.0, a: members[0], b });
        }
    }

    let mut by_doi: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        if let Some(doi) = r.doi() {
            by_doi.entry(doi).or_default().push(i);
        }
    }
    for members in by_doi.values() {
        for (x, &a) in members.iter().enumerate() {
            for &b in &members[x + 1..] {
                links.push(Link { kind: LinkKind::Doi, similarity: 1.0, a, b });
            }
        }
    }

    let mut by_year: BTreeMap<Option<i32>, Vec<usize>> = BTreeMap::new();
    for (i, (r, p)) in records.iter().zip(&prepared).enumerate() {
        if p.title.is_some() {
            by_year.entry(r.year).or_default().push(i);
        }
    }
    let threshold = config.fuzzy_threshold;
    for members in by_year.values() {
        let mut postings: HashMap<Trigram, Vec<usize>> = HashMap::new();
        for &i in members {
            for g in &prepared[i].grams {
                postings.entry(*g).or_default().push(i);
            }
        }
        for &i in members {
            let mut overlap: HashMap<usize, usize> = HashMap::new();
            for g in &prepared[i].grams {
                for &j in &postings[g] {
                    if j > i {
                        *overlap.entry(j).or_default() += 1;
                    }
                }
            }
            let mut hits: Vec<(usize, usize)> = overlap.into_iter().collect();
            hits.sort_unstable();
            for (j, inter) in hits {
                // two DOIs decide on their own: equal ones are linked above
                if records[i].doi().is_some() && records[j].doi().is_some() {
                    continue;
                }
                let (ni, nj) = (prepared[i].grams.len(), prepared[j].grams.len());
                let similarity = inter as f64 / (ni + nj - inter) as f64;
                let exact = prepared[i].title == prepared[j].title;
                if exact || similarity >= threshold {
                    let kind = if exact { LinkKind::ExactTitle } else { LinkKind::Fuzzy };
                    links.push(Link { kind, similarity, a: i, b: j });
                }
            }
        }
    }
    links
}

struct Components {
    parent: Vec<usize>,
    doi: Vec<Option<String>>,
}

impl Components {
    fn new(records: &[PaperRecord]) -> Self {
        Components {
            parent: (0..records.len()).collect(),
            doi: records.iter().map(|r| r.doi().map(str::to_owned)).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// `Some(true)` when joined, `Some(false)` when already together,
    /// `None` when refused for a DOI conflict.
    fn union(&mut self, a: usize, b: usize) -> Option<bool> {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return Some(false);
        }
        let merged_doi = match (&self.doi[ra], &self.doi[rb]) {
            (Some(x), Some(y)) if x != y => return None,
            (Some(x), _) | (_, Some(x)) => Some(x.clone()),
            (None, None) => None,
        };
        let (root, child) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[child] = root;
        self.doi[root] = merged_doi;
        Some(true)
    }
}

struct ClusterPass {
    clusters: Vec<Vec<usize>>,
    fuzzy_unions: usize,
    conflicts: Vec<(PaperId, PaperId)>,
}

fn cluster_once(records: &[PaperRecord], config: &DedupConfig) -> ClusterPass {
    let mut links = candidate_links(records, config);
    // strongest evidence first; ties broken by record ids so the outcome
    // does not depend on batch order
    links.sort_by(|x, y| {
        x.kind
            .cmp(&y.kind)
            .then_with(|| y.similarity.total_cmp(&x.similarity))
            .then_with(|| pair_ids(records, x).cmp(&pair_ids(records, y)))
    });

    let mut comps = Components::new(records);
    let mut fuzzy_unions = 0;
    let mut conflicts = Vec::new();
    for link in &links {
        match comps.union(link.a, link.b) {
            Some(true) if link.kind == LinkKind::Fuzzy => fuzzy_unions += 1,
            Some(_) => {}
            None => {
                let (x, y) = pair_ids(records, link);
                conflicts.push((x.clone(), y.clone()));
            }
        }
    }

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..records.len() {
        let root = comps.find(i);
        groups.entry(root).or_default().push(i);
    }
    let mut clusters: Vec<Vec<usize>> = groups.into_values().collect();
    clusters.sort_by_key(|members| members[0]);
    ClusterPass { clusters, fuzzy_unions, conflicts }
}

fn pair_ids<'a>(records: &'a [PaperRecord], link: &Link) -> (&'a PaperId, &'a PaperId) {
    let (x, y) = (&records[link.a].id, &records[link.b].id);
    if x <= y {
        (x, y)
    } else {
        (y, x)
    }
}

/// Clusters `batch` by single linkage over [`is_duplicate`], merges every
/// cluster, then drops clusters that collide with `corpus`.
///
/// Clustering is repeated over the merged records until nothing merges, so
/// the unique output is itself duplicate-free.
pub fn dedup_batch(batch: Vec<PaperRecord>, corpus: &CorpusIndex, config: &DedupConfig) -> DedupOutcome {
    let input_count = batch.len();
    let mut report = MergeReport { input_count, ..Default::default() };

    // absorbed ids per current record, tracked across passes
    let mut current: Vec<(PaperRecord, Vec<PaperId>)> =
        batch.into_iter().map(|r| (r, Vec::new())).collect();
    loop {
        let records: Vec<PaperRecord> = current.iter().map(|(r, _)| r.clone()).collect();
        let pass = cluster_once(&records, config);
        report.fuzzy_matches += pass.fuzzy_unions;
        report.doi_conflicts.extend(pass.conflicts);
        if pass.clusters.len() == current.len() {
            break;
        }
        let mut next = Vec::with_capacity(pass.clusters.len());
        for members in pass.clusters {
            let group: Vec<PaperRecord> = members.iter().map(|&i| records[i].clone()).collect();
            let merged = merge_records(&group)
                .expect("DOI-constrained clusters never hold two DOIs");
            let mut absorbed = Vec::new();
            let mut survivor_seen = false;
            for &i in &members {
                let (record, inner) = &current[i];
                // copies sharing the survivor's id still count as absorbed
                if record.id == merged.id && !survivor_seen {
                    survivor_seen = true;
                } else {
                    absorbed.push(record.id.clone());
                }
                absorbed.extend(inner.iter().cloned());
            }
            next.push((merged, absorbed));
        }
        current = next;
    }

    let mut outcome = DedupOutcome::default();
    for (record, mut absorbed) in current {
        if !absorbed.is_empty() {
            absorbed.sort();
            report.merged_groups.push(MergedGroup { survivor: record.id.clone(), absorbed });
        }
        match corpus.lookup(&record) {
            Some(existing) => {
                report.corpus_matches.push(CorpusMatch {
                    batch_id: record.id.clone(),
                    existing: existing.clone(),
                });
                outcome.suppressed.push(record);
            }
            None => outcome.unique.push(record),
        }
    }
    report.unique_count = outcome.unique.len() + outcome.suppressed.len();
    report.doi_conflicts.sort();
    report.doi_conflicts.dedup();
    outcome.report = report;
    outcome
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::PaperRecord;
    use chrono::{TimeZone, Utc};

    fn rec(id: &str, title: &str, year: Option<i32>, doi: Option<&str>, source: &str) -> PaperRecord {
        let mut r = PaperRecord::new(
            PaperId::new(id),
            title,
            source,
            Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
        );
        r.year = year;
        if let Some(d) = doi {
            r.set_doi(d);
        }
        r
    }

    #[test]
    fn duplicate_examples() {
        let cfg = DedupConfig::default();
        let a = rec("a", "One title", Some(2020), Some("10.1/x"), "s");
        let b = rec("b", "Entirely different", Some(2021), Some("10.1/X"), "s");
        assert!(is_duplicate(&a, &b, &cfg));

        let a = rec("a", "A survey of X.", Some(2020), None, "s");
        let b = rec("b", "A Survey of X", Some(2020), None, "s");
        assert!(is_duplicate(&a, &b, &cfg));

        let a = rec("a", "Same title", Some(2019), None, "s");
        let b = rec("b", "Same title", Some(2021), None, "s");
        assert!(!is_duplicate(&a, &b, &cfg));

        let a = rec("a", "!!!", None, None, "s");
        let b = rec("b", "!!!", None, None, "s");
        assert!(!is_duplicate(&a, &b, &cfg));
    }

    #[test]
    fn conflicting_dois_are_distinct() {
        let cfg = DedupConfig::default();
        let a = rec("a", "Same title", Some(2020), Some("10.1/a"), "s");
        let b = rec("b", "Same title", Some(2020), Some("10.1/b"), "s");
        assert!(!is_duplicate(&a, &b, &cfg));
    }

    #[test]
    fn fuzzy_threshold_boundary() {
        let a = "screening automation for living literature reviews";
        let b = "screening automation for living literature review";
        let sim = trigram_jaccard(a, b);
        assert!(sim > 0.9 && sim < 1.0, "{sim}");
        let strict = DedupConfig { fuzzy_threshold: 0.999 };
        let ra = rec("a", a, None, None, "s");
        let rb = rec("b", b, None, None, "s");
        assert!(is_duplicate(&ra, &rb, &DedupConfig::default()));
        assert!(!is_duplicate(&ra, &rb, &strict));
    }

    #[test]
    fn merge_single_is_identity() {
        let r = rec("a", "Title", Some(2020), None, "s");
        assert_eq!(merge_records(std::slice::from_ref(&r)).unwrap(), r);
        assert_eq!(merge_records(&[]), Err(DedupError::EmptyGroup));
    }

    #[test]
    fn merge_unions_and_picks() {
        let mut a = rec("a", "Title", Some(2021), None, "s2");
        let mut b = rec("b", "Title: extended", Some(2020), Some("10.1/z"), "core");
        b.abstract_text = Some("An abstract.".into());
        b.retrieved_at = a.retrieved_at + chrono::Duration::seconds(5);
        a.is_seed = true;
        a.sources.insert("seed".into());
        let m = merge_records(&[b.clone(), a.clone()]).unwrap();
        assert_eq!(m.id.as_str(), "a");
        assert_eq!(m.title, "Title: extended");
        assert_eq!(m.abstract_text.as_deref(), Some("An abstract."));
        assert_eq!(m.year, Some(2020));
        assert_eq!(m.doi(), Some("10.1/z"));
        assert!(m.is_seed);
        assert_eq!(m.sources.len(), 3);
        assert_eq!(m, merge_records(&[a, b]).unwrap());
    }

    #[test]
    fn merge_refuses_doi_conflict() {
        let a = rec("a", "T", None, Some("10.1/a"), "s");
        let b = rec("b", "T", None, Some("10.1/b"), "s");
        assert!(matches!(merge_records(&[a, b]), Err(DedupError::DoiConflict(..))));
    }

    #[test]
    fn empty_batch() {
        let out = dedup_batch(vec![], &CorpusIndex::new(), &DedupConfig::default());
        assert!(out.unique.is_empty());
        assert_eq!(out.report, MergeReport::default());
    }

    #[test]
    fn three_copies_from_three_connectors() {
        let batch = vec![
            rec("a", "Living reviews", Some(2022), None, "semantic_scholar"),
            rec("b", "Living Reviews.", Some(2022), None, "core"),
            rec("c", "living reviews", Some(2022), None, "pubmed"),
        ];
        let out = dedup_batch(batch, &CorpusIndex::new(), &DedupConfig::default());
        assert_eq!(out.unique.len(), 1);
        assert_eq!(out.unique[0].sources.len(), 3);
        assert_eq!(out.report.unique_count + out.report.absorbed_count(), 3);
        assert_eq!(out.report.fuzzy_matches, 0);
    }

    #[test]
    fn chaining_split_at_doi_boundary() {
        // a ~ m ~ b by title, but a and b carry different DOIs
        let batch = vec![
            rec("a", "Deep learning for screening", Some(2020), Some("10.1/a"), "s"),
            rec("m", "Deep learning for screening", Some(2020), None, "s"),
            rec("b", "Deep learning for screening", Some(2020), Some("10.1/b"), "s"),
        ];
        let out = dedup_batch(batch, &CorpusIndex::new(), &DedupConfig::default());
        assert_eq!(out.unique.len(), 2);
        assert!(!out.report.doi_conflicts.is_empty());
        assert_eq!(out.report.unique_count + out.report.absorbed_count(), 3);
    }

    #[test]
    fn same_record_from_two_queries() {
        let batch = vec![
            rec("x", "?!", None, None, "s"),
            rec("x", "?!", None, None, "s"),
            rec("y", "Other paper", Some(2020), None, "s"),
            rec("y", "Other paper", Some(2020), None, "s"),
            rec("y", "Other paper", Some(2020), None, "s"),
        ];
        let out = dedup_batch(batch, &CorpusIndex::new(), &DedupConfig::default());
        let ids: Vec<&str> = out.unique.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids.len(), 2);
        assert!(ids.contains(&"x") && ids.contains(&"y"));
        assert_eq!(out.report.unique_count + out.report.absorbed_count(), 5);
    }

    #[test]
    fn corpus_collisions_are_suppressed() {
        let existing = rec("old", "Known paper", Some(2020), Some("10.9/k"), "s2");
        let mut corpus = CorpusIndex::new();
        corpus.insert_record(&existing);
        let batch = vec![
            rec("n1", "Known paper", Some(2020), None, "core"),
            rec("n2", "Fresh paper", Some(2023), None, "core"),
        ];
        let out = dedup_batch(batch, &corpus, &DedupConfig::default());
        assert_eq!(out.unique.len(), 1);
        assert_eq!(out.unique[0].id.as_str(), "n2");
        assert_eq!(out.report.corpus_matches[0].existing.as_str(), "old");
        assert_eq!(out.report.duplicates_suppressed(), 1);
    }

    #[test]
    fn corpus_title_key_respects_doi() {
        let mut corpus = CorpusIndex::new();
        corpus.insert_record(&rec("old", "Shared title", Some(2020), Some("10.1/a"), "s2"));
        let batch = vec![
            rec("other", "Shared title", Some(2020), Some("10.1/b"), "core"),
            rec("bare", "Shared  title!", Some(2020), None, "pubmed"),
        ];
        // the batch pair is itself a duplicate; merged it keeps DOI b
        let out = dedup_batch(batch.clone(), &corpus, &DedupConfig::default());
        assert_eq!(out.unique.len(), 1);
        assert_eq!(out.unique[0].doi(), Some("10.1/b"));

        let out = dedup_batch(vec![batch[1].clone()], &corpus, &DedupConfig::default());
        assert!(out.unique.is_empty());
        let out = dedup_batch(vec![batch[0].clone()], &corpus, &DedupConfig::default());
        assert_eq!(out.unique.len(), 1);
    }
}
