use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::lmkb_core::nn::{init_uniform, Matrix, Params};
use crate::lmkb_core::TokenSeq;
use crate::{seed, Error, Result};

/// Real feature vector exchanged between encoder, channel and decoder.
pub type Feature = Vec<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecConfig {
    /// Feature length; must be even so features pack into complex symbols.
    pub n_feat: usize,
    pub d_emb: usize,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    /// Initial value of the learned log temperature on gallery logits.
    pub init_log_scale: f64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            n_feat: 16,
            d_emb: 32,
            enc_hidden: 32,
            dec_hidden: 32,
            init_log_scale: 1.0,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_feat == 0 || self.n_feat % 2 != 0 {
            return Err(Error::config(format!("n_feat = {} must be positive and even", self.n_feat)));
        }
        if self.d_emb == 0 || self.enc_hidden == 0 || self.dec_hidden == 0 {
            return Err(Error::config("codec widths must be positive"));
        }
        if !self.init_log_scale.is_finite() {
            return Err(Error::config("init_log_scale must be finite"));
        }
        Ok(())
    }
}

/// Encoder parameters α and decoder parameters β.
#[derive(Debug, Clone, PartialEq)]
pub struct CodecParams {
    pub emb: Matrix,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub w3: Matrix,
    pub b3: Matrix,
    pub w4: Matrix,
    pub log_scale: Matrix,
}

impl Params for CodecParams {
    fn tensors(&self) -> Vec<&Matrix> {
        vec![
            &self.emb,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.w3,
            &self.b3,
            &self.w4,
            &self.log_scale,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![
            &mut self.emb,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.w3,
            &mut self.b3,
            &mut self.w4,
            &mut self.log_scale,
        ]
    }
}

/// Embedding-bag + tanh perceptron encoder, tanh perceptron decoder scored
/// against gallery prototypes.
///
/// Encoder: `t = √(N/2) · r/‖r‖`, `r = tanh(mean_j E[w_j] W1 + b1) W2`, so
/// every feature carries unit power per complex symbol.
/// Decoder: `p = e^s · G (tanh(y W3 + b3) W4)ᵀ` for gallery rows `G`.
#[derive(Debug, Clone, PartialEq)]
pub struct JsccCodec {
    pub config: CodecConfig,
    pub params: CodecParams,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    ids: Vec<usize>,
    h0: Matrix,
    h1: Matrix,
    r_norm: f64,
    t_hat: Matrix,
}

#[derive(Debug, Clone)]
pub struct DecoderCache {
    y: Matrix,
    u: Matrix,
    logits: Matrix,
}

impl JsccCodec {
    pub fn new(config: CodecConfig, vocab_size: usize, d_gallery: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if vocab_size == 0 || d_gallery == 0 {
            return Err(Error::config("codec needs a non-empty vocabulary and gallery width"));
        }
        let mut rng = seed::rng(seed, &[seed::label("jscc-codec")]);
        let c = &config;
        let emb = Matrix::from_fn(vocab_size, c.d_emb, |_, _| rng.random_range(-1.0..1.0));
        let params = CodecParams {
            emb,
            w1: init_uniform(c.d_emb, c.enc_hidden, c.d_emb, &mut rng),
            b1: Matrix::zeros(1, c.enc_hidden),
            w2: init_uniform(c.enc_hidden, c.n_feat, c.enc_hidden, &mut rng),
            w3: init_uniform(c.n_feat, c.dec_hidden, c.n_feat, &mut rng),
            b3: Matrix::zeros(1, c.dec_hidden),
            w4: init_uniform(c.dec_hidden, d_gallery, c.dec_hidden, &mut rng),
            log_scale: Matrix::from_element(1, 1, c.init_log_scale),
        };
        Ok(Self { config, params })
    }

    pub fn n_feat(&self) -> usize {
        self.config.n_feat
    }

    pub fn vocab_size(&self) -> usize {
        self.params.emb.nrows()
    }

    pub fn d_gallery(&self) -> usize {
        self.params.w4.ncols()
    }

    /// Total feature energy `‖t‖² = N/2`.
    pub fn feature_power(&self) -> f64 {
        self.config.n_feat as f64 / 2.0
    }

    pub fn encode_cached(&self, tokens: &TokenSeq) -> Result<(Feature, EncoderCache)> {
        if tokens.is_empty() {
            return Err(Error::input("cannot encode an empty token sequence"));
        }
        let p = &self.params;
        let v = self.vocab_size();
        let mut ids = Vec::with_capacity(tokens.len());
        let mut h0 = Matrix::zeros(1, self.config.d_emb);
        for &t in tokens.ids() {
            let id = t as usize;
            if id >= v {
                return Err(Error::Vocab { id, size: v });
            }
            h0 += p.emb.row(id);
            ids.push(id);
        }
        h0 /= ids.len() as f64;
        let h1 = (&h0 * &p.w1 + &p.b1).map(f64::tanh);
        let r = &h1 * &p.w2;
        let r_norm = r.norm();
        if !(r_norm > 0.0 && r_norm.is_finite()) {
            return Err(Error::Numeric(format!("encoder output has norm {r_norm}")));
        }
        let t_hat = r / r_norm;
        let t = (&t_hat * self.feature_power().sqrt()).as_slice().to_vec();
        Ok((t, EncoderCache { ids, h0, h1, r_norm, t_hat }))
    }

    /// Accumulate encoder gradients for an upstream `dL/dt`.
    pub fn encoder_backward(&self, cache: &EncoderCache, dt: &[f64], grads: &mut CodecParams) {
        let p = &self.params;
        let dt = Matrix::from_row_slice(1, dt.len(), dt);
        let c = self.feature_power().sqrt();
        let proj = cache.t_hat.dot(&dt);
        let dr = (&dt - &cache.t_hat * proj) * (c / cache.r_norm);
        grads.w2 += cache.h1.transpose() * &dr;
        let dh1 = &dr * p.w2.transpose();
        let da1 = dh1.zip_map(&cache.h1, |g, h| g * (1.0 - h * h));
        grads.w1 += cache.h0.transpose() * &da1;
        grads.b1 += &da1;
        let dh0 = &da1 * p.w1.transpose() / cache.ids.len() as f64;
        for &id in &cache.ids {
            let mut row = grads.emb.row_mut(id);
            row += &dh0;
        }
    }

    pub fn decode_cached(&self, y: &[f64], gallery: &Matrix) -> Result<(Vec<f64>, DecoderCache)> {
        if gallery.nrows() == 0 {
            return Err(Error::input("empty gallery"));
        }
        if gallery.ncols() != self.d_gallery() {
            return Err(Error::shape(format!(
                "gallery width {} does not match decoder width {}",
                gallery.ncols(),
                self.d_gallery()
            )));
        }
        if y.len() != self.config.n_feat {
            return Err(Error::shape(format!(
                "decoder expects {} features, got {}",
                self.config.n_feat,
                y.len()
            )));
        }
        let p = &self.params;
        let y = Matrix::from_row_slice(1, y.len(), y);
        let u = (&y * &p.w3 + &p.b3).map(f64::tanh);
        let q = &u * &p.w4;
        let logits = (&q * gallery.transpose()) * p.log_scale[0].exp();
        Ok((logits.as_slice().to_vec(), DecoderCache { y, u, logits }))
    }

    /// Accumulate decoder gradients for an upstream `dL/dp`; returns `dL/dy`.
    pub fn decoder_backward(
        &self,
        cache: &DecoderCache,
        dp: &[f64],
        gallery: &Matrix,
        grads: &mut CodecParams,
    ) -> Feature {
        let p = &self.params;
        let dp = Matrix::from_row_slice(1, dp.len(), dp);
        let s = p.log_scale[0].exp();
        grads.log_scale[0] += dp.dot(&cache.logits);
        let dq = (&dp * gallery) * s;
        grads.w4 += cache.u.transpose() * &dq;
        let du = &dq * p.w4.transpose();
        let da = du.zip_map(&cache.u, |g, u| g * (1.0 - u * u));
        grads.w3 += cache.y.transpose() * &da;
        grads.b3 += &da;
        (&da * p.w3.transpose()).as_slice().to_vec()
    }

    /// Gradient of the task loss with respect to the decoder input alone,
    /// leaving parameter gradients untouched.
    pub fn input_gradient(&self, y: &[f64], gallery: &Matrix, label: usize) -> Result<(f64, Feature)> {
        let (logits, cache) = self.decode_cached(y, gallery)?;
        let (loss, dp) = task_loss_grad(&logits, label)?;
        let mut scratch = self.params.zeros_like();
        Ok((loss, self.decoder_backward(&cache, &dp, gallery, &mut scratch)))
    }
}

/// `S_e(tokens; α)`.
pub fn encode(tokens: &TokenSeq, codec: &JsccCodec) -> Result<Feature> {
    codec.encode_cached(tokens).map(|(t, _)| t)
}

/// `S_d(ŷ; β)` as logits over gallery rows.
pub fn decode(y_hat: &[f64], codec: &JsccCodec, gallery: &Matrix) -> Result<Vec<f64>> {
    codec.decode_cached(y_hat, gallery).map(|(p, _)| p)
}

fn log_softmax_at(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::input(format!(
            "label {label} out of range for {} gallery items",
            logits.len()
        )));
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::Numeric("non-finite gallery logits".into()));
    }
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    let probs = exps.iter().map(|e| e / z).collect();
    Ok((logits[label] - m - z.ln(), probs))
}

/// `−log softmax(p)[label]`.
pub fn task_loss(p: &[f64], label: usize) -> Result<f64> {
    let (lp, _) = log_softmax_at(p, label)?;
    Ok((-lp).max(0.0))
}

/// Task loss and its gradient with respect to the logits.
pub fn task_loss_grad(p: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    let (lp, mut probs) = log_softmax_at(p, label)?;
    probs[label] -= 1.0;
    Ok(((-lp).max(0.0), probs))
}

pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("cosine of lengths {} and {}", a.len(), b.len())));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedMetric("cosine similarity of a zero vector".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}
