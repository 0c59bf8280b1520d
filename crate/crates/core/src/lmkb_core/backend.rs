//! Text-generation backends: the deterministic mock, the toy language model and the HTTP client.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::head::{embed_tokens, output_logits, sample_with_temperature, EmbeddingTable, TokenId, TokenSeq, Vocab, BOS, EOS, SEP};
use super::nn::{init_uniform, positional_encoding, Matrix};
use super::transformer::{BackboneConfig, ToyTransformer};
use super::{Backbone, BackboneCache};
use crate::{seed, Error, Result};

/// Environment variable holding the remote generation endpoint.
pub const BACKEND_URL_ENV: &str = "SCLMKB_BACKEND_URL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendTag {
    Mock,
    Toy,
    Remote,
}

#[derive(Debug, Clone, Copy)]
pub struct GenerationRequest<'a> {
    /// Fully rendered prompt.
    pub prompt: &'a str,
    /// The source text embedded in the prompt.
    pub source: &'a str,
    pub temperature: f64,
    pub max_tokens: usize,
    pub seed: u64,
    pub vocab: &'a Vocab,
}

pub trait TextBackend: Send + Sync {
    fn tag(&self) -> BackendTag;

    /// Raw generated ids, at most `max_tokens` long; may include a prompt echo and `<eos>`.
    fn generate(&self, req: &GenerationRequest<'_>) -> Result<TokenSeq>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MockConfig {
    /// Groups of interchangeable words.
    pub thesaurus: Vec<Vec<String>>,
    /// Chance that a word with synonyms is replaced.
    pub substitution_prob: f64,
    /// Swap the clauses around a connective `and` with probability 1/2.
    pub reorder: bool,
    /// Chance that a call ignores the source and emits off-topic words.
    pub hallucination_rate: f64,
    pub off_topic: Vec<String>,
    /// Prefix the output with the tokenized prompt.
    pub echo_prompt: bool,
    /// Logit margin of the planned token over all others.
    pub confidence: f64,
    pub max_seq: usize,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            thesaurus: Vec::new(),
            substitution_prob: 0.5,
            reorder: false,
            hallucination_rate: 0.0,
            off_topic: Vec::new(),
            echo_prompt: false,
            confidence: 12.0,
            max_seq: 1024,
        }
    }
}

/// Deterministic stand-in for both backbone roles.
///
/// As a backbone it is the causal running mean of its input rows; as a text
/// backend it paraphrases the source by seeded synonym substitution.
#[derive(Debug, Clone, PartialEq)]
pub struct DeterministicMock {
    pub config: MockConfig,
}

impl DeterministicMock {
    pub fn new(config: MockConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&config.substitution_prob)
            || !(0.0..=1.0).contains(&config.hallucination_rate)
        {
            return Err(Error::config("mock probabilities must lie in [0, 1]"));
        }
        if config.hallucination_rate > 0.0 && config.off_topic.is_empty() {
            return Err(Error::config("hallucination requires off-topic words"));
        }
        Ok(Self { config })
    }

    fn synonyms(&self, word: &str) -> Option<&[String]> {
        self.config
            .thesaurus
            .iter()
            .find(|g| g.iter().any(|w| w == word))
            .map(Vec::as_slice)
    }

    /// The word sequence the mock intends to emit for `(source, seed)`.
    pub fn plan(&self, source: &str, seed: u64) -> Vec<String> {
        let mut rng = seed::rng(seed, &[seed::label("mock-plan")]);
        let words: Vec<&str> = source.split_whitespace().collect();
        if rng.random_bool(self.config.hallucination_rate) {
            let n = words.len().max(1);
            return (0..n)
                .filter_map(|_| self.config.off_topic.choose(&mut rng).cloned())
                .collect();
        }
        let mut out: Vec<String> = words
            .iter()
            .map(|&w| match self.synonyms(w) {
                Some(group) if group.len() > 1 && rng.random_bool(self.config.substitution_prob) => {
                    let others: Vec<&String> = group.iter().filter(|g| *g != w).collect();
                    others.choose(&mut rng).map_or(w.to_string(), |s| s.to_string())
                }
                _ => w.to_string(),
            })
            .collect();
        if self.config.reorder && rng.random_bool(0.5) {
            if let Some(pos) = out.iter().position(|w| w == "and") {
                if pos > 0 && pos + 1 < out.len() {
                    let tail = out.split_off(pos + 1);
                    out.pop();
                    let head = std::mem::replace(&mut out, tail);
                    out.push("and".into());
                    out.extend(head);
                }
            }
        }
        out
    }
}

impl TextBackend for DeterministicMock {
    fn tag(&self) -> BackendTag {
        BackendTag::Mock
    }

    fn generate(&self, req: &GenerationRequest<'_>) -> Result<TokenSeq> {
        let vocab = req.vocab;
        let mut planned: Vec<TokenId> = Vec::new();
        if self.config.echo_prompt {
            planned.extend(vocab.encode(req.prompt).0);
        }
        planned.extend(
            self.plan(req.source, req.seed)
                .iter()
                .map(|w| vocab.id(w).unwrap_or(super::head::UNK)),
        );
        planned.push(EOS);
        let mut logits = vec![0.0; vocab.size()];
        let mut out = Vec::with_capacity(planned.len().min(req.max_tokens));
        for (step, &target) in planned.iter().take(req.max_tokens).enumerate() {
            logits[target as usize] = self.config.confidence;
            let id = sample_with_temperature(
                &logits,
                req.temperature,
                seed::derive(req.seed, &[seed::label("mock-token"), step as u64]),
            )?;
            logits[target as usize] = 0.0;
            out.push(id);
            if id == EOS {
                break;
            }
        }
        Ok(TokenSeq(out))
    }
}

impl Backbone for DeterministicMock {
    fn width(&self) -> Option<usize> {
        None
    }

    fn max_seq(&self) -> usize {
        self.config.max_seq
    }

    fn forward_cached(&self, m0: &Matrix) -> Result<(Matrix, BackboneCache)> {
        if m0.nrows() > self.config.max_seq {
            return Err(Error::ContextOverflow {
                len: m0.nrows(),
                max_seq: self.config.max_seq,
            });
        }
        let mut out = m0.clone();
        for i in 1..out.nrows() {
            let prev = out.row(i - 1).into_owned();
            let n = (i + 1) as f64;
            let cur = m0.row(i);
            out.row_mut(i).copy_from(&((prev * (n - 1.0) + cur) / n));
        }
        Ok((out, BackboneCache::Mock { rows: m0.nrows() }))
    }

    fn backward_input(&self, cache: &BackboneCache, grad_out: &Matrix) -> Result<Matrix> {
        let BackboneCache::Mock { rows } = cache else {
            return Err(Error::MissingForwardCache);
        };
        if *rows != grad_out.nrows() {
            return Err(Error::shape("gradient rows differ from cached forward"));
        }
        let mut dx = Matrix::zeros(grad_out.nrows(), grad_out.ncols());
        let mut acc = Matrix::zeros(1, grad_out.ncols());
        for i in (0..grad_out.nrows()).rev() {
            acc += grad_out.row(i) / (i + 1) as f64;
            dx.row_mut(i).copy_from(&acc);
        }
        Ok(dx)
    }
}

/// The toy transformer wrapped as an autoregressive word-level language model.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyLm {
    pub table: EmbeddingTable,
    pub backbone: ToyTransformer,
    /// `[d_llm, |V|]`
    pub w_out: Matrix,
}

impl ToyLm {
    pub fn new(config: BackboneConfig, vocab_size: usize) -> Result<Self> {
        let backbone = ToyTransformer::new(config.clone())?;
        let mut rng = seed::rng(config.seed, &[seed::label("toy-lm")]);
        let table = EmbeddingTable::random(vocab_size, config.d_llm, &mut rng)?;
        let w_out = init_uniform(config.d_llm, vocab_size, config.d_llm, &mut rng);
        Ok(Self { table, backbone, w_out })
    }

    /// Next-token logits after `context`.
    pub fn next_logits(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        let max = self.backbone.max_seq();
        let window = &context[context.len().saturating_sub(max)..];
        let e = embed_tokens(&TokenSeq(window.to_vec()), &self.table)?;
        let m0 = &e + positional_encoding(e.nrows(), e.ncols());
        let h = self.backbone.forward(&m0)?;
        let last = h.rows(h.nrows() - 1, 1).into_owned();
        Ok(output_logits(&last, &self.w_out)?.iter().copied().collect())
    }
}

impl TextBackend for ToyLm {
    fn tag(&self) -> BackendTag {
        BackendTag::Toy
    }

    fn generate(&self, req: &GenerationRequest<'_>) -> Result<TokenSeq> {
        if req.vocab.size() != self.table.size() {
            return Err(Error::shape(format!(
                "vocabulary size {} != model vocabulary {}",
                req.vocab.size(),
                self.table.size()
            )));
        }
        let mut context = vec![BOS];
        context.extend(req.vocab.encode(req.prompt).0);
        context.push(SEP);
        let mut out = Vec::new();
        for step in 0..req.max_tokens {
            let logits = self.next_logits(&context)?;
            let id = sample_with_temperature(
                &logits,
                req.temperature,
                seed::derive(req.seed, &[seed::label("toy-token"), step as u64]),
            )?;
            out.push(id);
            if id == EOS {
                break;
            }
            context.push(id);
        }
        Ok(TokenSeq(out))
    }
}

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    temperature: f64,
    max_tokens: usize,
    seed: u64,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    text: String,
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct InFlight {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut n = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.limit {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.0.active.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

/// JSON-over-HTTP generation client.
#[derive(Debug)]
pub struct RemoteBackend {
    url: String,
    agent: ureq::Agent,
    in_flight: InFlight,
}

impl RemoteBackend {
    pub const TIMEOUT: Duration = Duration::from_secs(10);

    pub fn new(url: impl Into<String>, max_in_flight: usize) -> Result<Self> {
        let url = url.into();
        if url.is_empty() {
            return Err(Error::config("empty backend URL"));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Self::TIMEOUT))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            url,
            agent,
            in_flight: InFlight {
                limit: max_in_flight.max(1),
                active: Mutex::new(0),
                freed: Condvar::new(),
            },
        })
    }

    /// Reads the endpoint from [`BACKEND_URL_ENV`].
    pub fn from_env(max_in_flight: usize) -> Result<Self> {
        let url = std::env::var(BACKEND_URL_ENV)
            .map_err(|_| Error::config(format!("{BACKEND_URL_ENV} is not set")))?;
        Self::new(url, max_in_flight)
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn generate_text(&self, prompt: &str, temperature: f64, max_tokens: usize, seed: u64) -> Result<String> {
        let _slot = self.in_flight.acquire();
        let body = WireRequest { prompt, temperature, max_tokens, seed };
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(&body)
            .map_err(|e| Error::BackendUnavailable(e.to_string()))?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(Error::BackendUnavailable(format!("HTTP status {status}")));
        }
        let parsed: WireResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| Error::BackendUnavailable(format!("malformed response: {e}")))?;
        Ok(parsed.text)
    }
}

impl TextBackend for RemoteBackend {
    fn tag(&self) -> BackendTag {
        BackendTag::Remote
    }

    fn generate(&self, req: &GenerationRequest<'_>) -> Result<TokenSeq> {
        let text = self.generate_text(req.prompt, req.temperature, req.max_tokens, req.seed)?;
        let mut ids = req.vocab.encode(&text).0;
        ids.truncate(req.max_tokens);
        Ok(TokenSeq(ids))
    }
}
