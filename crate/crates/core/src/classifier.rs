//! Classifier-based detection through an external label scorer.
//!
//! Each example is serialized into a curly-brace key-value prompt. The
//! scorer returns the log-likelihood of the single-token labels `YES` (no
//! error) and `NO` (error); the error probability is the `NO` component of a
//! softmax over the two.
//!
//! Prompt template, one field per line, no escaping:
//!
//! ```text
//! {task: <hallucination detection|coverage error detection>}
//! {query: <query>}
//! {response: <full response>}
//! {pro_argument_1: <phrase>}
//! ...
//! {con_argument_1: <phrase>}
//! ...
//! {instruction: <task question> Answer YES or NO.}
//! {answer:
//! ```

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{ErrorType, Example, Perspective};
use crate::{Error, Result};

pub const LABELS: [&str; 2] = ["YES", "NO"];
pub const SCORER_URL_ENV: &str = "FAITHCHECK_SCORER_URL";
pub const SCORER_TOKEN_ENV: &str = "FAITHCHECK_SCORER_TOKEN";

/// Log-likelihoods of the two labels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelLogScores {
    pub loglik_yes: f64,
    pub loglik_no: f64,
}

fn task_lines(task: ErrorType) -> (&'static str, &'static str) {
    match task {
        ErrorType::Hallucination => (
            "hallucination detection",
            "Does the response contain only arguments from the given pro and con arguments?",
        ),
        ErrorType::Coverage => (
            "coverage error detection",
            "Does the response cover every given pro and con argument?",
        ),
    }
}

pub fn build_prompt(example: &Example, task: ErrorType) -> String {
    let (name, question) = task_lines(task);
    let mut prompt = String::new();
    let _ = writeln!(prompt, "{{task: {name}}}");
    let _ = writeln!(prompt, "{{query: {}}}", example.query);
    let _ = writeln!(prompt, "{{response: {}}}", example.response);
    for perspective in Perspective::BOTH {
        for (i, arg) in example.arguments_for(perspective).iter().enumerate() {
            let _ = writeln!(prompt, "{{{perspective}_argument_{}: {}}}", i + 1, arg.phrase);
        }
    }
    let _ = writeln!(prompt, "{{instruction: {question} Answer YES or NO.}}");
    prompt.push_str("{answer:");
    prompt
}

/// `exp(no) / (exp(yes) + exp(no))`, computed without overflow.
pub fn score_to_probability(scores: LabelLogScores) -> Result<f64> {
    let LabelLogScores {
        loglik_yes: yes,
        loglik_no: no,
    } = scores;
    if !yes.is_finite() || !no.is_finite() {
        return Err(Error::InvalidInput(format!(
            "label log-likelihoods must be finite, got yes={yes} no={no}"
        )));
    }
    let top = yes.max(no);
    let e_yes = (yes - top).exp();
    let e_no = (no - top).exp();
    Ok(e_no / (e_yes + e_no))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ScoreRequest<'a> {
    #[serde(skip)]
    pub example_id: &'a str,
    pub prompt: &'a str,
    pub labels: [&'static str; 2],
}

/// Something that can assign label log-likelihoods to a prompt.
pub trait Scorer: Sync {
    /// Transport failures should be reported as [`Error::Transport`]; they
    /// are retried. Any other error fails the example immediately.
    fn score(&self, request: &ScoreRequest<'_>) -> Result<LabelLogScores>;
}

#[derive(Deserialize)]
struct ScoreReply {
    logliks: Vec<f64>,
}

/// JSON-over-HTTP scorer: POSTs `{"prompt", "labels"}` and expects
/// `{"logliks": [yes, no]}`.
pub struct HttpScorer {
    url: String,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpScorer {
    pub fn new(url: impl Into<String>, token: Option<String>) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(Self {
            url: url.into(),
            token,
            client,
        })
    }

    pub fn from_env() -> Result<Self> {
        let url = std::env::var(SCORER_URL_ENV)
            .map_err(|_| Error::InvalidInput(format!("{SCORER_URL_ENV} is not set")))?;
        Self::new(url, std::env::var(SCORER_TOKEN_ENV).ok())
    }
}

/// Parses a scorer reply body.
pub fn parse_reply(body: &str) -> Result<LabelLogScores> {
    let reply: ScoreReply =
        serde_json::from_str(body).map_err(|e| Error::MalformedReply(e.to_string()))?;
    match reply.logliks.as_slice() {
        &[yes, no] if yes.is_finite() && no.is_finite() => Ok(LabelLogScores {
            loglik_yes: yes,
            loglik_no: no,
        }),
        other => Err(Error::MalformedReply(format!(
            "expected two finite log-likelihoods, got {other:?}"
        ))),
    }
}

impl Scorer for HttpScorer {
    fn score(&self, request: &ScoreRequest<'_>) -> Result<LabelLogScores> {
        let mut call = self.client.post(&self.url).json(request);
        if let Some(token) = &self.token {
            call = call.bearer_auth(token);
        }
        let response = call.send().map_err(|e| Error::Transport(e.to_string()))?;
        let status = response.status();
        let body = response
            .text()
            .map_err(|e| Error::Transport(e.to_string()))?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Error::Transport(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(Error::MalformedReply(format!("HTTP {status}: {body}")));
        }
        parse_reply(&body)
    }
}

/// Offline scorer. By default log-likelihoods are derived from a SHA-256 of
/// the example id and the prompt's task line, each in `[-6, 0)`.
#[derive(Clone, Debug, Default)]
pub struct MockScorer {
    fixed: Option<LabelLogScores>,
    failing: Vec<String>,
}

impl MockScorer {
    pub fn hashed() -> Self {
        Self::default()
    }

    pub fn constant(scores: LabelLogScores) -> Self {
        Self {
            fixed: Some(scores),
            failing: Vec::new(),
        }
    }

    /// Every request for this example id fails with a transport error.
    pub fn failing_on(mut self, example_id: impl Into<String>) -> Self {
        self.failing.push(example_id.into());
        self
    }

    fn hashed_scores(request: &ScoreRequest<'_>) -> LabelLogScores {
        let task = request.prompt.lines().next().unwrap_or_default();
        let digest = Sha256::new()
            .chain_update(request.example_id.as_bytes())
            .chain_update([0])
            .chain_update(task.as_bytes())
            .finalize();
        let unit = |bytes: &[u8]| {
            let mut b = [0u8; 4];
            b.copy_from_slice(bytes);
            u32::from_le_bytes(b) as f64 / (u32::MAX as f64 + 1.0)
        };
        LabelLogScores {
            loglik_yes: -6.0 * unit(&digest[0..4]),
            loglik_no: -6.0 * unit(&digest[4..8]),
        }
    }
}

impl Scorer for MockScorer {
    fn score(&self, request: &ScoreRequest<'_>) -> Result<LabelLogScores> {
        if self.failing.iter().any(|id| id == request.example_id) {
            return Err(Error::Transport(format!(
                "mock failure for `{}`",
                request.example_id
            )));
        }
        Ok(self.fixed.unwrap_or_else(|| Self::hashed_scores(request)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchOptions {
    /// Attempts per example, including the first.
    pub max_attempts: usize,
    /// Requests in flight at once.
    pub concurrency: usize,
    pub retry_delay: Duration,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            concurrency: 4,
            retry_delay: Duration::from_millis(250),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classified {
    pub id: String,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifyFailure {
    pub id: String,
    pub index: usize,
    pub error: String,
    /// The scorer was unreachable, as opposed to answering malformed data.
    pub transport: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchOutcome {
    /// In input order, failed examples omitted.
    pub scored: Vec<Classified>,
    pub failures: Vec<ClassifyFailure>,
}

fn classify_one(
    example: &Example,
    task: ErrorType,
    scorer: &dyn Scorer,
    options: &BatchOptions,
) -> Result<f64> {
    let prompt = build_prompt(example, task);
    let request = ScoreRequest {
        example_id: &example.id,
        prompt: &prompt,
        labels: LABELS,
    };
    let attempts = options.max_attempts.max(1);
    let mut last = None;
    for attempt in 0..attempts {
        match scorer.score(&request) {
            Ok(scores) => return score_to_probability(scores),
            Err(e @ Error::Transport(_)) => {
                last = Some(e);
                if attempt + 1 < attempts && !options.retry_delay.is_zero() {
                    std::thread::sleep(options.retry_delay);
                }
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Scores every example, keeping input order. Failures are collected rather
/// than aborting the batch.
pub fn classify_batch(
    examples: &[Example],
    task: ErrorType,
    scorer: &dyn Scorer,
    options: &BatchOptions,
) -> BatchOutcome {
    let results: Mutex<Vec<Option<Result<f64>>>> =
        Mutex::new((0..examples.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = options.concurrency.clamp(1, examples.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::Relaxed);
                let Some(example) = examples.get(index) else {
                    break;
                };
                let result = classify_one(example, task, scorer, options);
                results.lock().expect("no worker panics while holding the lock")[index] =
                    Some(result);
            });
        }
    });

    let mut outcome = BatchOutcome::default();
    let results = results.into_inner().expect("workers joined");
    for (index, (example, result)) in examples.iter().zip(results).enumerate() {
        match result.expect("every index visited") {
            Ok(probability) => outcome.scored.push(Classified {
                id: example.id.clone(),
                probability,
            }),
            Err(e) => outcome.failures.push(ClassifyFailure {
                id: example.id.clone(),
                index,
                transport: e.is_environmental(),
                error: e.to_string(),
            }),
        }
    }
    outcome
}
