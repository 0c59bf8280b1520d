//! Cross-domain fusion codec: JSCC encoder/decoder, similarity filtering of
//! generated sources, gradient-pooled fusion weights and end-to-end training
//! through the MIMO link.

mod channel;
mod codec;

pub use channel::{power_normalize, power_normalize_backward, transmit_backward, transmit_features, ChannelContext};
pub use codec::{
    cosine_sim, decode, encode, task_loss, task_loss_grad, CodecConfig, CodecParams, DecoderCache, EncoderCache,
    Feature, JsccCodec,
};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eval::rank_by_scores;
use crate::lmkb_core::nn::{Matrix, Params};
use crate::lmkb_core::{TextBackend, TokenSeq, Vocab};
use crate::optim::Optimizer;
use crate::sdg::{build_prompt, generate, DEFAULT_INSTRUCTION};
use crate::{seed, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePair {
    pub t_i: Feature,
    pub t_a: Feature,
    pub sim: f64,
}

impl FeaturePair {
    pub fn new(t_i: Feature, t_a: Feature) -> Result<Self> {
        let sim = cosine_sim(&t_i, &t_a)?;
        Ok(Self { t_i, t_a, sim })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub theta_i: f64,
    pub theta_a: f64,
}

/// Score gaps beyond this saturate so both weights stay strictly positive.
const MAX_SCORE_GAP: f64 = 30.0;

impl FusionWeights {
    /// Two-way softmax of pooled scores `(η_I, η_A)`.
    pub fn from_scores(eta_i: f64, eta_a: f64) -> Result<Self> {
        let gap = eta_i - eta_a;
        if !gap.is_finite() {
            return Err(Error::Numeric(format!("non-finite importance scores ({eta_i}, {eta_a})")));
        }
        let gap = gap.clamp(-MAX_SCORE_GAP, MAX_SCORE_GAP);
        let theta_i = 1.0 / (1.0 + (-gap).exp());
        Ok(Self {
            theta_i,
            theta_a: 1.0 - theta_i,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionPairing {
    /// `z = θ_A t_I + θ_I t_A`.
    #[default]
    Cross,
    /// `z = θ_I t_I + θ_A t_A`.
    Matched,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub gamma: f64,
    pub max_retries: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            max_retries: 5,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.gamma) {
            return Err(Error::config(format!("gamma = {} must lie in [-1, 1]", self.gamma)));
        }
        if self.max_retries == 0 {
            return Err(Error::config("max_retries must be positive"));
        }
        Ok(())
    }
}

/// Sampling settings for candidate generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationSettings {
    pub tau: f64,
    pub max_len: usize,
    pub instruction: String,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self {
            tau: 0.0,
            max_len: 64,
            instruction: DEFAULT_INSTRUCTION.to_string(),
        }
    }
}

/// Source generator plus everything the filter needs.
#[derive(Clone, Copy)]
pub struct SdgHook<'a> {
    pub backend: &'a dyn TextBackend,
    pub vocab: &'a Vocab,
    pub filter: FilterConfig,
    pub generation: &'a GenerationSettings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub t_a: Feature,
    /// Generation calls made.
    pub attempts: usize,
    /// No candidate passed; `t_a` is a copy of `t_i`.
    pub fallback: bool,
    /// Tokens of the accepted candidate.
    pub accepted: Option<TokenSeq>,
    /// Similarity of the last candidate scored, if any.
    pub sim: Option<f64>,
}

/// Similarity-based filtering: generate, encode, keep when `sim(t_i, t_a) > γ`,
/// otherwise regenerate; after `1 + max_retries` calls fall back to `t_i`.
///
/// Candidates that come back empty, cannot be encoded or have zero norm
/// count as rejected. If every call fails at the backend the error is
/// returned instead of falling back.
pub fn filter(t_i: &[f64], source: &str, codec: &JsccCodec, hook: &SdgHook<'_>, seed: u64) -> Result<FilterOutcome> {
    hook.filter.validate()?;
    let prompt = build_prompt(source, &hook.generation.instruction)?;
    let calls = hook.filter.max_retries + 1;
    let mut backend_failures = 0;
    let mut last_err = None;
    let mut last_sim = None;
    for attempt in 0..calls {
        let s = seed::derive(seed, &[attempt as u64]);
        let generated = match generate(
            &prompt,
            hook.generation.tau,
            hook.generation.max_len,
            hook.backend,
            hook.vocab,
            s,
        ) {
            Ok(g) => g,
            Err(Error::EmptyGeneration) => continue,
            Err(e @ Error::Generation(_)) => {
                backend_failures += 1;
                last_err = Some(e);
                continue;
            }
            Err(e) => return Err(e),
        };
        let tokens = TokenSeq(generated.token_ids);
        let t_a = match encode(&tokens, codec) {
            Ok(t) => t,
            Err(Error::Numeric(_) | Error::InvalidInput(_)) => continue,
            Err(e) => return Err(e),
        };
        let Ok(sim) = cosine_sim(t_i, &t_a) else { continue };
        last_sim = Some(sim);
        if sim > hook.filter.gamma {
            return Ok(FilterOutcome {
                t_a,
                attempts: attempt + 1,
                fallback: false,
                accepted: Some(tokens),
                sim: Some(sim),
            });
        }
    }
    if backend_failures == calls {
        return Err(last_err.unwrap_or_else(|| Error::Generation("backend failed".into())));
    }
    Ok(FilterOutcome {
        t_a: t_i.to_vec(),
        attempts: calls,
        fallback: true,
        accepted: None,
        sim: last_sim,
    })
}

/// Mean of the task-loss gradient over the components of each feature,
/// both passed straight through the decoder. Parameters are not touched.
pub fn pooled_gradients(t_i: &[f64], t_a: &[f64], codec: &JsccCodec, gallery: &Matrix, label: usize) -> Result<(f64, f64)> {
    let mean = |g: &[f64]| g.iter().sum::<f64>() / g.len() as f64;
    let (_, g_i) = codec.input_gradient(t_i, gallery, label)?;
    let (_, g_a) = codec.input_gradient(t_a, gallery, label)?;
    let (eta_i, eta_a) = (mean(&g_i), mean(&g_a));
    if !(eta_i.is_finite() && eta_a.is_finite()) {
        return Err(Error::Numeric("non-finite feature gradients".into()));
    }
    Ok((eta_i, eta_a))
}

pub fn importance_weights(
    t_i: &[f64],
    t_a: &[f64],
    codec: &JsccCodec,
    gallery: &Matrix,
    label: usize,
) -> Result<FusionWeights> {
    let (eta_i, eta_a) = pooled_gradients(t_i, t_a, codec, gallery, label)?;
    FusionWeights::from_scores(eta_i, eta_a)
}

/// Weight applied to `t_a`; `t_i` receives the complement.
fn weight_on_generated(w: &FusionWeights, pairing: FusionPairing) -> f64 {
    match pairing {
        FusionPairing::Cross => w.theta_i,
        FusionPairing::Matched => w.theta_a,
    }
}

/// Fused feature, evaluated as `t_i + w·(t_a − t_i)` so that `t_a = t_i`
/// returns `t_i` exactly.
pub fn fuse(t_i: &[f64], t_a: &[f64], w: &FusionWeights, pairing: FusionPairing) -> Result<Feature> {
    if t_i.len() != t_a.len() {
        return Err(Error::shape(format!("fusing features of lengths {} and {}", t_i.len(), t_a.len())));
    }
    let c = weight_on_generated(w, pairing);
    Ok(t_i.iter().zip(t_a).map(|(i, a)| i + c * (a - i)).collect())
}

/// One training or retrieval item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecSample {
    pub source: String,
    pub tokens: TokenSeq,
    pub label: usize,
    /// Index into the channel contexts.
    pub channel: usize,
}

/// Link and generator shared by a training run.
#[derive(Clone, Copy)]
pub struct TrainEnv<'a> {
    pub gallery: &'a Matrix,
    pub channels: &'a [ChannelContext],
    pub snr_db: f64,
    pub pairing: FusionPairing,
    /// `None` disables source generation, filtering and fusion.
    pub sdg: Option<SdgHook<'a>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepMetrics {
    pub loss: f64,
    pub samples: usize,
    pub accepted: usize,
    pub fallbacks: usize,
    pub generations: usize,
}

impl StepMetrics {
    fn absorb(&mut self, other: &StepMetrics) {
        self.loss += other.loss;
        self.samples += other.samples;
        self.accepted += other.accepted;
        self.fallbacks += other.fallbacks;
        self.generations += other.generations;
    }
}

fn channel_for<'a>(env: &TrainEnv<'a>, sample: &CodecSample) -> Result<&'a ChannelContext> {
    env.channels.get(sample.channel).ok_or_else(|| {
        Error::input(format!(
            "sample refers to channel {} of {}",
            sample.channel,
            env.channels.len()
        ))
    })
}

/// Loss and parameter gradient for one sample.
pub fn sample_gradient(
    sample: &CodecSample,
    codec: &JsccCodec,
    env: &TrainEnv<'_>,
    seed: u64,
) -> Result<(CodecParams, StepMetrics)> {
    let ctx = channel_for(env, sample)?;
    let mut grads = codec.params.zeros_like();
    let mut metrics = StepMetrics {
        samples: 1,
        ..StepMetrics::default()
    };
    let (t_i, cache_i) = codec.encode_cached(&sample.tokens)?;

    let mut fused = None;
    if let Some(hook) = &env.sdg {
        let out = filter(&t_i, &sample.source, codec, hook, seed::derive(seed, &[seed::label("filter")]))?;
        metrics.generations = out.attempts;
        if let Some(tokens) = out.accepted {
            metrics.accepted = 1;
            let (t_a, cache_a) = codec.encode_cached(&tokens)?;
            let w = importance_weights(&t_i, &t_a, codec, env.gallery, sample.label)?;
            let z = fuse(&t_i, &t_a, &w, env.pairing)?;
            fused = Some((z, cache_a, weight_on_generated(&w, env.pairing)));
        } else {
            metrics.fallbacks = 1;
        }
    }

    let z = fused.as_ref().map(|f| f.0.as_slice()).unwrap_or(&t_i);
    let power = codec.feature_power();
    let (x, norm) = power_normalize(z, power)?;
    let y = transmit_features(&x, ctx, env.snr_db, seed::derive(seed, &[seed::label("noise")]))?;
    let (logits, dcache) = codec.decode_cached(&y, env.gallery)?;
    let (loss, dp) = task_loss_grad(&logits, sample.label)?;
    metrics.loss = loss;

    let dy = codec.decoder_backward(&dcache, &dp, env.gallery, &mut grads);
    let dx = transmit_backward(&dy, ctx);
    let dz = power_normalize_backward(&x, norm, power, &dx);
    match fused {
        Some((_, cache_a, c)) => {
            let dt_i: Vec<f64> = dz.iter().map(|g| g * (1.0 - c)).collect();
            let dt_a: Vec<f64> = dz.iter().map(|g| g * c).collect();
            codec.encoder_backward(&cache_i, &dt_i, &mut grads);
            codec.encoder_backward(&cache_a, &dt_a, &mut grads);
        }
        None => codec.encoder_backward(&cache_i, &dz, &mut grads),
    }
    if !grads.squared_norm().is_finite() {
        return Err(Error::Numeric("non-finite codec gradient".into()));
    }
    Ok((grads, metrics))
}

/// Mean-gradient update over a batch. Samples are processed in parallel and
/// reduced in batch order; `metrics.loss` is the batch mean.
pub fn train_step(
    batch: &[CodecSample],
    codec: &mut JsccCodec,
    optimizer: &mut Optimizer,
    env: &TrainEnv<'_>,
    seed: u64,
) -> Result<StepMetrics> {
    if batch.is_empty() {
        return Err(Error::input("empty training batch"));
    }
    let frozen = &*codec;
    let parts: Vec<(CodecParams, StepMetrics)> = batch
        .par_iter()
        .enumerate()
        .map(|(i, s)| sample_gradient(s, frozen, env, seed::derive(seed, &[i as u64])))
        .collect::<Result<_>>()?;
    let mut grads = codec.params.zeros_like();
    let mut metrics = StepMetrics::default();
    for (g, m) in &parts {
        grads.add_scaled(g, 1.0);
        metrics.absorb(m);
    }
    let n = batch.len() as f64;
    for t in grads.tensors_mut() {
        *t /= n;
    }
    metrics.loss /= n;
    optimizer.step(&mut codec.params, &grads);
    Ok(metrics)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub accept_rate: f64,
    pub fallback_rate: f64,
}

/// Several epochs of [`train_step`] over seeded shuffles of `samples`.
pub fn train_codec(
    samples: &[CodecSample],
    codec: &mut JsccCodec,
    optimizer: &mut Optimizer,
    env: &TrainEnv<'_>,
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<EpochMetrics>> {
    if samples.is_empty() {
        return Err(Error::input("empty codec training set"));
    }
    if batch_size == 0 {
        return Err(Error::config("batch_size must be positive"));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut rng = seed::rng(seed, &[seed::label("codec-shuffle"), epoch as u64]);
        order.shuffle(&mut rng);
        let mut total = StepMetrics::default();
        for (b, idx) in order.chunks(batch_size).enumerate() {
            let batch: Vec<CodecSample> = idx.iter().map(|&i| samples[i].clone()).collect();
            let step_seed = seed::derive(seed, &[seed::label("codec-step"), epoch as u64, b as u64]);
            let mut m = train_step(&batch, codec, optimizer, env, step_seed)?;
            m.loss *= batch.len() as f64;
            total.absorb(&m);
        }
        let n = total.samples as f64;
        let attempted = (total.accepted + total.fallbacks).max(1) as f64;
        history.push(EpochMetrics {
            epoch,
            loss: total.loss / n,
            accept_rate: total.accepted as f64 / attempted,
            fallback_rate: total.fallbacks as f64 / attempted,
        });
    }
    Ok(history)
}

/// Inference logits: `t_i` alone is sent, with no generation or fusion.
pub fn infer_logits(
    tokens: &TokenSeq,
    codec: &JsccCodec,
    ctx: &ChannelContext,
    snr_db: f64,
    noise_seed: u64,
    gallery: &Matrix,
) -> Result<Vec<f64>> {
    let t = encode(tokens, codec)?;
    let (x, _) = power_normalize(&t, codec.feature_power())?;
    let y = transmit_features(&x, ctx, snr_db, noise_seed)?;
    decode(&y, codec, gallery)
}

/// Gallery indices ranked by descending logit, ties to the lower index.
pub fn infer(
    tokens: &TokenSeq,
    codec: &JsccCodec,
    ctx: &ChannelContext,
    snr_db: f64,
    noise_seed: u64,
    gallery: &Matrix,
) -> Result<Vec<usize>> {
    Ok(rank_by_scores(&infer_logits(tokens, codec, ctx, snr_db, noise_seed, gallery)?))
}
