//! Review workflows on top of the store: one method per operation exposed
//! by the HTTP API and the CLI.
//!
//! Operations that write a review's corpus or models (search, import,
//! protocol edits, decisions, retraining, prediction) hold that review's
//! writer lock for their whole duration. Reads take a store snapshot and
//! never wait for the lock.

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, Datelike, Utc};
use serde::{Deserialize, Serialize};

use crate::auto_screen::{
    build_training_set, predict, ClassifierKind, ClassifierSettings, Prediction, QaBatch, QaClient,
    TrainedClassifier, TrainingProvenance, TrainingSet,
};
use crate::catalog::{
    CriterionId, DecisionOrigin, MainDecision, PaperId, PaperRecord, ProtocolDraft, ReviewId, ReviewProtocol,
    ReviewerId, ScreeningDecision, AUTO_REVIEWER, SEED_REVIEWER,
};
use crate::config::Config;
use crate::dedup::{dedup_batch, DedupConfig};
use crate::error::{Error, Result};
use crate::export::{self, ExportDocument};
use crate::ingest::{parse_bibtex, parse_ris, parse_tei_header, GrobidClient, ImportReport, ParseContext, ParseOutcome, SourceKind};
use crate::persistence::Store;
use crate::screening::{self, DecisionSubmission, NextItem, Progress};
use crate::search::{federate, ConnectorRegistry, SearchRun};

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

/// What a retrain produced, without the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSummary {
    pub kind: ClassifierKind,
    pub version: u64,
    pub model_tag: String,
    pub trained_on: TrainingProvenance,
    pub dimensionality: usize,
}

impl From<&TrainedClassifier> for ClassifierSummary {
    fn from(m: &TrainedClassifier) -> Self {
        ClassifierSummary {
            kind: m.kind,
            version: m.version,
            model_tag: m.model_tag(),
            trained_on: m.trained_on.clone(),
            dimensionality: m.config.dimensionality(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub model_tag: String,
    pub predictions: Vec<Prediction>,
}

pub struct ReviewService {
    store: Arc<Store>,
    registry: ConnectorRegistry,
    dedup: DedupConfig,
    classifiers: ClassifierSettings,
    qa: Option<QaClient>,
    grobid: Option<GrobidClient>,
    upload_limit: usize,
    clock: Clock,
    locks: Mutex<HashMap<ReviewId, Arc<tokio::sync::Mutex<()>>>>,
}

impl std::fmt::Debug for ReviewService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReviewService")
            .field("connectors", &self.registry.names())
            .field("dedup", &self.dedup)
            .finish_non_exhaustive()
    }
}

impl ReviewService {
    pub fn new(store: Arc<Store>, registry: ConnectorRegistry) -> Self {
        ReviewService {
            store,
            registry,
            dedup: DedupConfig::default(),
            classifiers: ClassifierSettings::default(),
            qa: None,
            grobid: None,
            upload_limit: crate::config::DEFAULT_UPLOAD_LIMIT,
            clock: Arc::new(Utc::now),
            locks: Mutex::new(HashMap::new()),
        }
    }

    /// Wires every configured collaborator.
    pub fn from_config(config: &Config, store: Arc<Store>) -> Result<Self> {
        let registry = ConnectorRegistry::new(config.connectors.clone())?;
        let mut service = ReviewService::new(store, registry)
            .with_dedup(config.dedup)
            .with_classifiers(config.classifiers)
            .with_upload_limit(config.upload.max_bytes);
        if let Some(m) = &config.model {
            service = service.with_qa(QaClient::new(
                &m.base_url,
                &m.model_id,
                m.max_new_tokens,
                m.max_in_flight,
                Duration::from_secs_f64(m.timeout_secs),
            )?);
        }
        if let Some(g) = &config.grobid {
            service = service.with_grobid(GrobidClient::new(
                &g.base_url,
                g.max_in_flight,
                Duration::from_secs_f64(g.timeout_secs),
            )?);
        }
        Ok(service)
    }

    pub fn with_dedup(mut self, dedup: DedupConfig) -> Self {
        self.dedup = dedup;
        self
    }

    pub fn with_classifiers(mut self, settings: ClassifierSettings) -> Self {
        self.classifiers = settings;
        self
    }

    pub fn with_qa(mut self, client: QaClient) -> Self {
        self.qa = Some(client);
        self
    }

    pub fn with_grobid(mut self, client: GrobidClient) -> Self {
        self.grobid = Some(client);
        self
    }

    pub fn with_upload_limit(mut self, bytes: usize) -> Self {
        self.upload_limit = bytes;
        self
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn connector_names(&self) -> Vec<String> {
        self.registry.names()
    }

    pub fn upload_limit(&self) -> usize {
        self.upload_limit
    }

    fn now(&self) -> DateTime<Utc> {
        (self.clock)()
    }

    async fn writer(&self, review_id: &ReviewId) -> tokio::sync::OwnedMutexGuard<()> {
        let lock = {
            let mut locks = self.locks.lock().unwrap_or_else(|p| p.into_inner());
            locks.entry(review_id.clone()).or_default().clone()
        };
        lock.lock_owned().await
    }

    // protocol

    pub fn create_review(&self, draft: ProtocolDraft) -> Result<ReviewProtocol> {
        let protocol = draft.into_protocol(ReviewId::generate(), &self.registry.names(), None)?;
        let now = self.now();
        self.store.write(|tx| tx.insert_review(&protocol, now))?;
        tracing::info!(review = %protocol.review_id, "review created");
        Ok(protocol)
    }

    pub fn review(&self, review_id: &ReviewId) -> Result<ReviewProtocol> {
        self.store.read(|tx| tx.protocol(review_id))
    }

    pub fn review_ids(&self) -> Result<Vec<ReviewId>> {
        self.store.read(|tx| tx.review_ids())
    }

    /// Replaces the protocol, keeping its id and search history. Criteria
    /// that stored answers or predictions refer to cannot be removed.
    pub async fn update_protocol(&self, review_id: &ReviewId, draft: ProtocolDraft) -> Result<ReviewProtocol> {
        let _guard = self.writer(review_id).await;
        let registered = self.registry.names();
        self.store.write(|tx| {
            let old = tx.protocol(review_id)?;
            let protocol = draft.into_protocol(review_id.clone(), &registered, old.last_search_year)?;
            let mut referenced: BTreeSet<CriterionId> = BTreeSet::new();
            for e in tx.decisions(review_id)? {
                referenced.extend(
                    e.decision
                        .criterion_answers
                        .iter()
                        .filter(|(_, a)| **a != crate::catalog::CriterionAnswer::Unanswered)
                        .map(|(c, _)| c.clone()),
                );
            }
            referenced.extend(tx.qa_predictions(review_id)?.into_iter().map(|p| p.criterion_id));
            if let Some(missing) = referenced.iter().find(|c| protocol.criterion(c).is_none()) {
                return Err(Error::validation(
                    "criteria",
                    format!("criterion {missing} has recorded answers and cannot be removed"),
                ));
            }
            tx.update_protocol(&protocol)?;
            Ok(protocol)
        })
    }

    // search

    /// Runs the protocol's queries against its connectors, deduplicates the
    /// results against each other and the corpus, and stores the new papers
    /// together with the run report in one transaction.
    ///
    /// When the review has been searched before, records older than the last
    /// search year are dropped.
    pub async fn run_search(&self, review_id: &ReviewId) -> Result<SearchRun> {
        let _guard = self.writer(review_id).await;
        let protocol = self.review(review_id)?;
        let now = self.now();
        let min_year = protocol.last_search_year;
        let federated = federate(&self.registry, &protocol, min_year, now).await?;

        let corpus = self.store.read(|tx| tx.corpus_key_index(review_id))?;
        let outcome = dedup_batch(federated.records, &corpus, &self.dedup);
        let run = SearchRun {
            review_id: review_id.clone(),
            executed_at: now,
            min_year,
            per_query_counts: federated.cells,
            new_papers: outcome.unique.len(),
            duplicates_suppressed: outcome.report.duplicates_suppressed(),
        };
        debug_assert_eq!(run.new_papers + run.duplicates_suppressed, run.fetched_total());

        let mut updated = protocol;
        updated.last_search_year = Some(updated.last_search_year.map_or(now.year(), |y| y.max(now.year())));
        self.store.write(|tx| {
            tx.upsert_papers(review_id, &outcome.unique)?;
            tx.insert_search_run(&run)?;
            tx.update_protocol(&updated)
        })?;
        tracing::info!(review = %review_id, new = run.new_papers, suppressed = run.duplicates_suppressed, "search run stored");
        Ok(run)
    }

    pub fn search_runs(&self, review_id: &ReviewId) -> Result<Vec<SearchRun>> {
        self.store.read(|tx| tx.search_runs(review_id))
    }

    // import

    async fn parse_import(&self, kind: SourceKind, payload: Vec<u8>, ctx: &ParseContext) -> Result<ParseOutcome> {
        match kind {
            SourceKind::Ris => Ok(parse_ris(&payload, ctx)?),
            SourceKind::Bib => Ok(parse_bibtex(&payload, ctx)?),
            SourceKind::Pdf => {
                let grobid = self.grobid.as_ref().ok_or_else(|| Error::ServiceUnavailable {
                    service: "grobid",
                    message: "no GROBID service configured".into(),
                })?;
                grobid.health_check().await?;
                let id = PaperId::derive(&[b"pdf", &payload]);
                let tei = grobid.process_header(payload).await?;
                let record = parse_tei_header(&tei, id, ctx)?;
                Ok(ParseOutcome { records: vec![record], rejected: Vec::new() })
            }
        }
    }

    /// Imports a reference file or PDF. With `seed`, every imported paper
    /// (including ones already in the corpus) is marked as a seed study and
    /// labeled include by the reserved seed reviewer.
    pub async fn import(&self, review_id: &ReviewId, kind: SourceKind, payload: Vec<u8>, seed: bool) -> Result<ImportReport> {
        if payload.len() > self.upload_limit {
            return Err(Error::PayloadTooLarge { size: payload.len(), limit: self.upload_limit });
        }
        let now = self.now();
        let ctx = ParseContext::new(now);
        // fail fast on unknown reviews before contacting GROBID
        self.review(review_id)?;
        let parsed = self.parse_import(kind, payload, &ctx).await?;

        let _guard = self.writer(review_id).await;
        let corpus = self.store.read(|tx| tx.corpus_key_index(review_id))?;
        let parsed_count = parsed.records.len();
        let outcome = dedup_batch(parsed.records, &corpus, &self.dedup);
        let mut unique = outcome.unique;
        if seed {
            unique.iter_mut().for_each(PaperRecord::mark_seed);
        }
        let seeds_marked = self.store.write(|tx| {
            tx.upsert_papers(review_id, &unique)?;
            if !seed {
                return Ok(0);
            }
            let mut seed_ids: Vec<PaperId> = unique.iter().map(|r| r.id.clone()).collect();
            for m in &outcome.report.corpus_matches {
                if let Some(mut existing) = tx.paper(review_id, &m.existing)? {
                    if !existing.is_seed {
                        existing.mark_seed();
                        tx.update_paper(review_id, &existing)?;
                    }
                    seed_ids.push(existing.id);
                }
            }
            seed_ids.sort();
            seed_ids.dedup();
            let seed_reviewer = ReviewerId::new(SEED_REVIEWER);
            let log = tx.decisions(review_id)?;
            let mut marked = 0;
            for id in seed_ids {
                let labeled = log.iter().any(|e| {
                    e.decision.paper_id == id
                        && e.decision.reviewer_id == seed_reviewer
                        && e.decision.main == MainDecision::Include
                });
                if !labeled {
                    tx.append_decision(review_id, &seed_decision(id, now))?;
                }
                marked += 1;
            }
            Ok(marked)
        })?;
        Ok(ImportReport {
            source_kind: kind,
            parsed: parsed_count,
            rejected: parsed.rejected,
            new_after_dedup: unique.len(),
            seeds_marked,
        })
    }

    // screening

    pub fn next_item(&self, review_id: &ReviewId, reviewer: &ReviewerId) -> Result<NextItem> {
        self.store.read(|tx| {
            let protocol = tx.protocol(review_id)?;
            let papers = tx.papers(review_id)?;
            let log = tx.decisions(review_id)?;
            let qa = tx.qa_predictions(review_id)?;
            Ok(screening::next_item(&protocol, papers, &log, &qa, reviewer))
        })
    }

    /// Validates and appends a manual decision; returns it with its revision.
    pub async fn submit_decision(&self, review_id: &ReviewId, submission: DecisionSubmission) -> Result<ScreeningDecision> {
        let _guard = self.writer(review_id).await;
        let now = self.now();
        self.store.write(|tx| {
            let protocol = tx.protocol(review_id)?;
            if tx.paper(review_id, &submission.paper_id)?.is_none() {
                return Err(Error::not_found("paper", submission.paper_id.as_str()));
            }
            let expected = submission.expected_revision;
            let decision = submission.into_decision(&protocol, now);
            screening::check_manual_decision(&decision, &protocol)?;
            if let Some(expected) = expected {
                let current =
                    tx.latest_revision(review_id, &decision.paper_id, &decision.reviewer_id, DecisionOrigin::Manual)?;
                if current != expected {
                    return Err(Error::RevisionConflict { expected, current });
                }
            }
            tx.append_decision(review_id, &decision)
        })
    }

    pub fn progress(&self, review_id: &ReviewId) -> Result<Progress> {
        self.store.read(|tx| {
            let papers = tx.papers(review_id)?;
            Ok(screening::progress(&papers, &tx.decisions(review_id)?, &tx.qa_predictions(review_id)?))
        })
    }

    // automation

    pub fn training_set(&self, review_id: &ReviewId) -> Result<TrainingSet> {
        self.store.read(|tx| build_training_set(&tx.papers(review_id)?, &tx.decisions(review_id)?))
    }

    /// Trains a new version of `kind` from scratch on the current labels.
    pub async fn retrain(&self, review_id: &ReviewId, kind: ClassifierKind) -> Result<TrainedClassifier> {
        let _guard = self.writer(review_id).await;
        let set = self.training_set(review_id)?;
        let version = self.store.read(|tx| tx.latest_classifier_version(review_id, kind))? + 1;
        let model = TrainedClassifier::train(kind, &set, &self.classifiers, version, self.now())?;
        self.store.write(|tx| tx.insert_classifier(review_id, &model))?;
        tracing::info!(review = %review_id, tag = %model.model_tag(), examples = set.len(), "classifier trained");
        Ok(model)
    }

    pub fn latest_classifier(&self, review_id: &ReviewId, kind: ClassifierKind) -> Result<TrainedClassifier> {
        self.store
            .read(|tx| {
                tx.protocol(review_id)?;
                tx.latest_classifier(review_id, kind)
            })?
            .ok_or_else(|| Error::ModelNotTrained { kind: kind.to_string() })
    }

    /// Scores every paper without a manual decision with the latest model of
    /// `kind` and records the results as classifier decisions.
    pub async fn predict(&self, review_id: &ReviewId, kind: ClassifierKind) -> Result<PredictionReport> {
        let _guard = self.writer(review_id).await;
        let model = self.latest_classifier(review_id, kind)?;
        let tag = model.model_tag();
        let now = self.now();
        self.store.write(|tx| {
            let log = tx.decisions(review_id)?;
            let manual = screening::current_manual(&log);
            let pending: Vec<PaperRecord> = tx
                .papers(review_id)?
                .into_iter()
                .filter(|p| !manual.contains_key(&p.id))
                .collect();
            let predictions = predict(&model, &pending);
            for p in &predictions {
                let decision = ScreeningDecision {
                    paper_id: p.paper_id.clone(),
                    reviewer_id: ReviewerId::new(AUTO_REVIEWER),
                    main: if p.include { MainDecision::Include } else { MainDecision::Exclude },
                    criterion_answers: Default::default(),
                    knew_paper: None,
                    knew_authors: None,
                    origin: DecisionOrigin::Classifier,
                    model_tag: Some(tag.clone()),
                    probability: Some(p.probability),
                    decided_at: now,
                    revision: 0,
                };
                tx.append_decision(review_id, &decision)?;
            }
            Ok(PredictionReport { model_tag: tag.clone(), predictions })
        })
    }

    /// Asks the model service every (paper, criterion) question. Empty id
    /// lists select every paper or every criterion.
    pub async fn qa_screen(
        &self,
        review_id: &ReviewId,
        criterion_ids: &[CriterionId],
        paper_ids: &[PaperId],
    ) -> Result<QaBatch> {
        let qa = self.qa.as_ref().ok_or_else(|| Error::ServiceUnavailable {
            service: "model",
            message: "no model service configured".into(),
        })?;
        let (protocol, papers) = self.store.read(|tx| Ok((tx.protocol(review_id)?, tx.papers(review_id)?)))?;
        let criteria = if criterion_ids.is_empty() {
            protocol.criteria.clone()
        } else {
            criterion_ids
                .iter()
                .map(|id| {
                    protocol
                        .criterion(id)
                        .cloned()
                        .ok_or_else(|| Error::validation("criterion_ids", format!("unknown criterion {id}")))
                })
                .collect::<Result<_>>()?
        };
        let papers: Vec<PaperRecord> = if paper_ids.is_empty() {
            papers
        } else {
            let mut by_id: HashMap<PaperId, PaperRecord> = papers.into_iter().map(|p| (p.id.clone(), p)).collect();
            paper_ids
                .iter()
                .map(|id| by_id.remove(id).ok_or_else(|| Error::not_found("paper", id.as_str())))
                .collect::<Result<_>>()?
        };
        let pairs: Vec<_> = papers
            .iter()
            .flat_map(|p| criteria.iter().map(move |c| (p, c)))
            .collect();
        let batch = qa.screen(&pairs, self.now()).await?;
        self.store.write(|tx| tx.insert_qa_predictions(review_id, &batch.predictions))?;
        Ok(batch)
    }

    // export

    pub fn export(&self, review_id: &ReviewId) -> Result<ExportDocument> {
        self.store.read(|tx| export::export_review(tx, review_id))
    }

    pub fn export_json(&self, review_id: &ReviewId) -> Result<String> {
        export::to_json(&self.export(review_id)?)
    }
}

fn seed_decision(paper_id: PaperId, at: DateTime<Utc>) -> ScreeningDecision {
    ScreeningDecision {
        paper_id,
        reviewer_id: ReviewerId::new(SEED_REVIEWER),
        main: MainDecision::Include,
        criterion_answers: Default::default(),
        knew_paper: None,
        knew_authors: None,
        origin: DecisionOrigin::Manual,
        model_tag: None,
        probability: None,
        decided_at: at,
        revision: 0,
    }
}
