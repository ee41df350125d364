//! Zero-shot eligibility screening through an external text-generation
//! service (`POST <base>/generate`).

use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use super::prompt::build_prompt;
use crate::catalog::{CriterionId, EligibilityCriterion, PaperId, PaperRecord};
use crate::error::{Error, Result};

pub const HALLUCINATION_WARNING: &str =
    "Generated by a language model. Predictions can contain hallucinations; verify before relying on them.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QaAnswer {
    Yes,
    No,
    Unparseable,
}

/// Reads the leading alphabetic token of a generated answer.
pub fn parse_answer(raw: &str) -> QaAnswer {
    let token: String = raw
        .trim_start()
        .chars()
        .take_while(|c| c.is_alphabetic())
        .collect::<String>()
        .to_lowercase();
    match token.as_str() {
        "yes" => QaAnswer::Yes,
        "no" => QaAnswer::No,
        _ => QaAnswer::Unparseable,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaPrediction {
    pub paper_id: PaperId,
    pub criterion_id: CriterionId,
    pub prompt: String,
    pub raw_answer: String,
    pub parsed: QaAnswer,
    pub model_id: String,
    pub hallucination_warning: bool,
    pub predicted_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaFailure {
    pub paper_id: PaperId,
    pub criterion_id: CriterionId,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QaBatch {
    pub predictions: Vec<QaPrediction>,
    pub failures: Vec<QaFailure>,
}

#[derive(Debug, Serialize)]
struct GenerateRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_new_tokens: u32,
}

#[derive(Debug, Deserialize)]
struct GenerateResponse {
    text: String,
}

#[derive(Debug)]
enum CallError {
    Unreachable(String),
    Failed(String),
}

impl std::fmt::Display for CallError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CallError::Unreachable(m) | CallError::Failed(m) => f.write_str(m),
        }
    }
}

#[derive(Clone)]
pub struct QaClient {
    base_url: String,
    model_id: String,
    max_new_tokens: u32,
    http: reqwest::Client,
    in_flight: Arc<Semaphore>,
}

impl QaClient {
    pub fn new(
        base_url: impl Into<String>,
        model_id: impl Into<String>,
        max_new_tokens: u32,
        max_in_flight: usize,
        timeout: Duration,
    ) -> Result<Self> {
        let http = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Config(format!("model client: {e}")))?;
        Ok(QaClient {
            base_url: base_url.into().trim_end_matches('/').to_owned(),
            model_id: model_id.into(),
            max_new_tokens,
            http,
            in_flight: Arc::new(Semaphore::new(max_in_flight.max(1))),
        })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    async fn generate(&self, prompt: &str) -> std::result::Result<String, CallError> {
        let _permit = self.in_flight.acquire().await.expect("semaphore never closed");
        let body = GenerateRequest {
            model: &self.model_id,
            prompt,
            max_new_tokens: self.max_new_tokens,
        };
        let resp = self
            .http
            .post(format!("{}/generate", self.base_url))
            .json(&body)
            .send()
            .await
            .map_err(|e| {
                if e.is_connect() {
                    CallError::Unreachable(e.to_string())
                } else {
                    CallError::Failed(e.to_string())
                }
            })?;
        if !resp.status().is_success() {
            return Err(CallError::Failed(format!("model service returned {}", resp.status())));
        }
        let parsed: GenerateResponse = resp
            .json()
            .await
            .map_err(|e| CallError::Failed(format!("bad response body: {e}")))?;
        Ok(parsed.text)
    }

    /// Asks one question per `(paper, criterion)` pair.
    ///
    /// The first pair is sent alone: if the service cannot be reached at all
    /// the whole batch fails with [`Error::ServiceUnavailable`]. After that,
    /// individual failures are reported per pair and the batch continues.
    pub async fn screen(
        &self,
        pairs: &[(&PaperRecord, &EligibilityCriterion)],
        now: DateTime<Utc>,
    ) -> Result<QaBatch> {
        // owned jobs keep the stream future free of borrowed closure arguments
        let jobs: Vec<(PaperId, CriterionId, String)> = pairs
            .iter()
            .map(|(p, c)| (p.id.clone(), c.criterion_id.clone(), build_prompt(p, c)))
            .collect();
        let ask = |(paper_id, criterion_id, prompt): (PaperId, CriterionId, String)| async move {
            let outcome = self.generate(&prompt).await;
            (paper_id, criterion_id, prompt, outcome)
        };

        let mut jobs = jobs.into_iter();
        let mut results = Vec::with_capacity(pairs.len());
        if let Some(job) = jobs.next() {
            let first = ask(job).await;
            if let Err(CallError::Unreachable(message)) = &first.3 {
                return Err(Error::ServiceUnavailable { service: "model", message: message.clone() });
            }
            results.push(first);
        }
        let concurrency = self.in_flight.available_permits().max(1);
        let rest: Vec<_> = stream::iter(jobs).map(ask).buffered(concurrency).collect().await;
        results.extend(rest);

        let mut batch = QaBatch::default();
        for (paper_id, criterion_id, prompt, outcome) in results {
            match outcome {
                Ok(raw_answer) => batch.predictions.push(QaPrediction {
                    paper_id,
                    criterion_id,
                    prompt,
                    parsed: parse_answer(&raw_answer),
                    raw_answer,
                    model_id: self.model_id.clone(),
                    hallucination_warning: true,
                    predicted_at: now,
                }),
                Err(e) => batch.failures.push(QaFailure { paper_id, criterion_id, error: e.to_string() }),
            }
        }
        Ok(batch)
    }
}
