//! Shared language-model machinery: embeddings, backbones, alignment and sampling.

pub mod attention;
pub mod backend;
pub mod head;
pub mod nn;
pub mod transformer;

pub use attention::{
    attention_scores, cross_attention, cross_attention_backward, cross_attention_cached, project_vocab,
    AlignmentKv, AlignmentParams, CrossAttentionCache, CrossAttentionGrads,
};
pub use backend::{
    BackendTag, DeterministicMock, GenerationRequest, MockConfig, RemoteBackend, TextBackend, ToyLm,
    BACKEND_URL_ENV,
};
pub use head::{
    embed_tokens, output_head, output_logits, sample_with_temperature, EmbeddingTable, TokenId, TokenSeq,
    Vocab,
};
pub use nn::{Matrix, Params};
pub use transformer::{BackboneConfig, ToyTransformer, TransformerParams};

use crate::{Error, Result};

/// Activations retained by a backbone forward pass.
#[derive(Debug, Clone)]
pub enum BackboneCache {
    Toy(Vec<transformer::LayerCache>),
    Mock { rows: usize },
}

/// A sequence-to-sequence map over `[L, d]` hidden states.
pub trait Backbone: Send + Sync {
    /// Required input width, or `None` if any width is accepted.
    fn width(&self) -> Option<usize>;

    fn max_seq(&self) -> usize;

    fn forward_cached(&self, m0: &Matrix) -> Result<(Matrix, BackboneCache)>;

    fn forward(&self, m0: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(m0)?.0)
    }

    /// Gradient w.r.t. the input of the pass that produced `cache`.
    fn backward_input(&self, cache: &BackboneCache, grad_out: &Matrix) -> Result<Matrix>;
}

/// Pairs a backbone with the cache of its latest forward pass.
pub struct BackboneSession<'a, B: Backbone + ?Sized> {
    backbone: &'a B,
    cache: Option<BackboneCache>,
}

impl<'a, B: Backbone + ?Sized> BackboneSession<'a, B> {
    pub fn new(backbone: &'a B) -> Self {
        Self { backbone, cache: None }
    }

    pub fn forward(&mut self, m0: &Matrix) -> Result<Matrix> {
        let (out, cache) = self.backbone.forward_cached(m0)?;
        self.cache = Some(cache);
        Ok(out)
    }

    pub fn backward(&self, grad_out: &Matrix) -> Result<Matrix> {
        let cache = self.cache.as_ref().ok_or(Error::MissingForwardCache)?;
        self.backbone.backward_input(cache, grad_out)
    }
}
