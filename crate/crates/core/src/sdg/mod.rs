//! Source-data generation: prompting a text backend and parsing its output.

pub mod lexicon;

use serde::{Deserialize, Serialize};

use crate::lmkb_core::head::{EOS, UNK};
use crate::lmkb_core::{BackendTag, DeterministicMock, GenerationRequest, MockConfig, TextBackend, TokenSeq, Vocab};
use crate::{Error, Result};

pub const PROMPT_SEPARATOR: &str = ": \n";
pub const DEFAULT_INSTRUCTION: &str = "Rewrite the caption";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub source_text: String,
    pub instruction: String,
    pub rendered: String,
}

pub fn build_prompt(source: &str, instruction: &str) -> Result<Prompt> {
    if source.is_empty() || instruction.is_empty() {
        return Err(Error::input("prompt source and instruction must be non-empty"));
    }
    Ok(Prompt {
        source_text: source.to_string(),
        instruction: instruction.to_string(),
        rendered: format!("{instruction}{PROMPT_SEPARATOR}{source}"),
    })
}

pub fn tokenize(text: &str, vocab: &Vocab) -> TokenSeq {
    vocab.encode(text)
}

pub fn detokenize(seq: &TokenSeq, vocab: &Vocab) -> String {
    vocab.decode(seq.ids())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedSource {
    pub text: String,
    pub token_ids: Vec<u32>,
    pub backend_tag: BackendTag,
    pub temperature: f64,
}

/// Cuts at the first `<eos>`, removes a leading echo of `prompt` and drops
/// control tokens (`<unk>` is kept as content).
pub fn parse_output(seq: &TokenSeq, vocab: &Vocab, prompt: Option<&TokenSeq>) -> Result<String> {
    let end = seq.ids().iter().position(|&t| t == EOS).unwrap_or(seq.len());
    let mut ids = &seq.ids()[..end];
    if let Some(p) = prompt {
        if !p.is_empty() && ids.starts_with(p.ids()) {
            ids = &ids[p.len()..];
        }
    }
    let kept: Vec<u32> = ids
        .iter()
        .copied()
        .filter(|&t| t == UNK || !Vocab::is_special(t))
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyGeneration);
    }
    Ok(vocab.decode(&kept))
}

/// One candidate paraphrase of `prompt.source_text`.
pub fn generate(
    prompt: &Prompt,
    tau: f64,
    max_len: usize,
    backend: &dyn TextBackend,
    vocab: &Vocab,
    seed: u64,
) -> Result<GeneratedSource> {
    if max_len == 0 {
        return Err(Error::config("max_len must be positive"));
    }
    let req = GenerationRequest {
        prompt: &prompt.rendered,
        source: &prompt.source_text,
        temperature: tau,
        max_tokens: max_len,
        seed,
        vocab,
    };
    let mut raw = backend.generate(&req).map_err(|e| match e {
        Error::BackendUnavailable(msg) => Error::Generation(format!("backend unavailable: {msg}")),
        other => other,
    })?;
    raw.0.truncate(max_len);
    let echo = tokenize(&prompt.rendered, vocab);
    let text = parse_output(&raw, vocab, Some(&echo))?;
    Ok(GeneratedSource {
        token_ids: tokenize(&text, vocab).0,
        text,
        backend_tag: backend.tag(),
        temperature: tau,
    })
}

/// Mock paraphraser over the built-in thesaurus.
pub fn paraphrase_mock(hallucination_rate: f64, reorder: bool) -> Result<DeterministicMock> {
    DeterministicMock::new(MockConfig {
        thesaurus: lexicon::thesaurus(),
        reorder,
        hallucination_rate,
        off_topic: lexicon::OFF_TOPIC.iter().map(|w| w.to_string()).collect(),
        ..MockConfig::default()
    })
}
