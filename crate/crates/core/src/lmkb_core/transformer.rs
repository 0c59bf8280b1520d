//! Pre-norm causal transformer with manual backpropagation.

use serde::{Deserialize, Serialize};

use super::attention::{mha_backward, mha_forward, MhaCache};
use super::nn::{add_row, col_sum, init_uniform, layer_norm, layer_norm_backward, LayerNormCache, Matrix, Params};
use super::{Backbone, BackboneCache};
use crate::{seed, Error, Result};

fn default_d_ff() -> usize {
    0
}

fn default_causal() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub l_depth: usize,
    pub d_llm: usize,
    pub heads: usize,
    /// Per-head width; `0` means `d_llm / heads`.
    #[serde(default)]
    pub d_head: usize,
    pub max_seq: usize,
    /// MLP hidden width; `0` means `2·d_llm`.
    #[serde(default = "default_d_ff")]
    pub d_ff: usize,
    #[serde(default = "default_causal")]
    pub causal: bool,
    pub seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            l_depth: 2,
            d_llm: 32,
            heads: 2,
            d_head: 0,
            max_seq: 64,
            d_ff: 0,
            causal: true,
            seed: 0,
        }
    }
}

impl BackboneConfig {
    pub fn head_width(&self) -> usize {
        if self.d_head == 0 {
            self.d_llm / self.heads.max(1)
        } else {
            self.d_head
        }
    }

    pub fn ff_width(&self) -> usize {
        if self.d_ff == 0 {
            2 * self.d_llm
        } else {
            self.d_ff
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_llm == 0 || self.heads == 0 || self.max_seq == 0 {
            return Err(Error::config("d_llm, heads and max_seq must be positive"));
        }
        if self.head_width() == 0 {
            return Err(Error::config(format!(
                "d_llm {} too small for {} heads",
                self.d_llm, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_g: Matrix,
    pub ln1_b: Matrix,
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
    pub ln2_g: Matrix,
    pub ln2_b: Matrix,
    pub w_1: Matrix,
    pub b_1: Matrix,
    pub w_2: Matrix,
    pub b_2: Matrix,
}

impl Params for LayerParams {
    fn tensors(&self) -> Vec<&Matrix> {
        vec![
            &self.ln1_g, &self.ln1_b, &self.w_q, &self.w_k, &self.w_v, &self.w_o,
            &self.ln2_g, &self.ln2_b, &self.w_1, &self.b_1, &self.w_2, &self.b_2,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![
            &mut self.ln1_g, &mut self.ln1_b, &mut self.w_q, &mut self.w_k, &mut self.w_v,
            &mut self.w_o, &mut self.ln2_g, &mut self.ln2_b, &mut self.w_1, &mut self.b_1,
            &mut self.w_2, &mut self.b_2,
        ]
    }
}

/// All layer parameters; also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerParams {
    pub layers: Vec<LayerParams>,
}

impl Params for TransformerParams {
    fn tensors(&self) -> Vec<&Matrix> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct LayerCache {
    ln1: LayerNormCache,
    a: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    mha: MhaCache,
    o: Matrix,
    ln2: LayerNormCache,
    b: Matrix,
    h: Matrix,
}

/// Small trainable stand-in for a pretrained language model.
///
/// The stack has no built-in position encoding or final norm, so a
/// zero-layer configuration is exactly the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTransformer {
    config: BackboneConfig,
    pub params: TransformerParams,
}

impl ToyTransformer {
    pub fn new(config: BackboneConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(config.seed, &[seed::label("backbone")]);
        let d = config.d_llm;
        let w = config.heads * config.head_width();
        let ff = config.ff_width();
        let layers = (0..config.l_depth)
            .map(|_| LayerParams {
                ln1_g: Matrix::from_element(1, d, 1.0),
                ln1_b: Matrix::zeros(1, d),
                w_q: init_uniform(d, w, d, &mut rng),
                w_k: init_uniform(d, w, d, &mut rng),
                w_v: init_uniform(d, w, d, &mut rng),
                w_o: init_uniform(w, d, w, &mut rng),
                ln2_g: Matrix::from_element(1, d, 1.0),
                ln2_b: Matrix::zeros(1, d),
                w_1: init_uniform(d, ff, d, &mut rng),
                b_1: Matrix::zeros(1, ff),
                w_2: init_uniform(ff, d, ff, &mut rng),
                b_2: Matrix::zeros(1, d),
            })
            .collect();
        Ok(Self {
            config,
            params: TransformerParams { layers },
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    fn check_input(&self, m0: &Matrix, seq_len: usize) -> Result<()> {
        if m0.ncols() != self.config.d_llm {
            return Err(Error::shape(format!(
                "backbone input width {} != d_llm {}",
                m0.ncols(),
                self.config.d_llm
            )));
        }
        if seq_len > self.config.max_seq {
            return Err(Error::ContextOverflow {
                len: seq_len,
                max_seq: self.config.max_seq,
            });
        }
        if (seq_len == 0 && m0.nrows() != 0) || (seq_len != 0 && m0.nrows() % seq_len != 0) {
            return Err(Error::shape(format!(
                "{} rows do not split into sequences of length {seq_len}",
                m0.nrows()
            )));
        }
        Ok(())
    }

    pub fn forward_layers(&self, m0: &Matrix) -> Result<(Matrix, Vec<LayerCache>)> {
        self.forward_batch(m0, m0.nrows())
    }

    /// Runs `m0.nrows() / seq_len` independent sequences stacked row-wise.
    pub fn forward_batch(&self, m0: &Matrix, seq_len: usize) -> Result<(Matrix, Vec<LayerCache>)> {
        self.check_input(m0, seq_len)?;
        let blocks = if seq_len == 0 { 0 } else { m0.nrows() / seq_len };
        let heads = self.config.heads;
        let d_k = self.config.head_width();
        let mut x = m0.clone();
        let mut caches = Vec::with_capacity(self.params.layers.len());
        for p in &self.params.layers {
            let (a, ln1) = layer_norm(&x, &p.ln1_g, &p.ln1_b);
            let q = &a * &p.w_q;
            let k = &a * &p.w_k;
            let v = &a * &p.w_v;
            let (o, mha) = mha_forward(&q, &k, &v, heads, d_k, self.config.causal, blocks);
            let x1 = &x + &o * &p.w_o;
            let (b, ln2) = layer_norm(&x1, &p.ln2_g, &p.ln2_b);
            let h = add_row(&(&b * &p.w_1), &p.b_1).map(f64::tanh);
            x = &x1 + add_row(&(&h * &p.w_2), &p.b_2);
            caches.push(LayerCache { ln1, a, q, k, v, mha, o, ln2, b, h });
        }
        Ok((x, caches))
    }

    /// Gradients of a scalar loss w.r.t. all parameters and the input.
    pub fn backward_layers(
        &self,
        caches: &[LayerCache],
        grad_out: &Matrix,
    ) -> Result<(TransformerParams, Matrix)> {
        if caches.len() != self.params.layers.len() {
            return Err(Error::MissingForwardCache);
        }
        let heads = self.config.heads;
        let d_k = self.config.head_width();
        let mut grads = self.params.zeros_like();
        let mut dx = grad_out.clone();
        for ((p, c), g) in self
            .params
            .layers
            .iter()
            .zip(caches)
            .zip(grads.layers.iter_mut())
            .rev()
        {
            // MLP branch.
            g.w_2 = c.h.transpose() * &dx;
            g.b_2 = col_sum(&dx);
            let dh = &dx * p.w_2.transpose();
            let dpre = dh.zip_map(&c.h, |g, h| g * (1.0 - h * h));
            g.w_1 = c.b.transpose() * &dpre;
            g.b_1 = col_sum(&dpre);
            let db = dpre * p.w_1.transpose();
            let (dx1_ln, dg2, db2) = layer_norm_backward(&db, &p.ln2_g, &c.ln2);
            g.ln2_g = dg2;
            g.ln2_b = db2;
            let dx1 = dx + dx1_ln;

            // Attention branch.
            g.w_o = c.o.transpose() * &dx1;
            let d_o = &dx1 * p.w_o.transpose();
            let (dq, dk, dv) = mha_backward(&d_o, &c.q, &c.k, &c.v, heads, d_k, &c.mha);
            g.w_q = c.a.transpose() * &dq;
            g.w_k = c.a.transpose() * &dk;
            g.w_v = c.a.transpose() * &dv;
            let da = dq * p.w_q.transpose() + dk * p.w_k.transpose() + dv * p.w_v.transpose();
            let (dx_ln, dg1, db1) = layer_norm_backward(&da, &p.ln1_g, &c.ln1);
            g.ln1_g = dg1;
            g.ln1_b = db1;
            dx = dx1 + dx_ln;
        }
        Ok((grads, dx))
    }
}

impl Backbone for ToyTransformer {
    fn width(&self) -> Option<usize> {
        Some(self.config.d_llm)
    }

    fn max_seq(&self) -> usize {
        self.config.max_seq
    }

    fn forward_cached(&self, m0: &Matrix) -> Result<(Matrix, BackboneCache)> {
        let (out, caches) = self.forward_layers(m0)?;
        Ok((out, BackboneCache::Toy(caches)))
    }

    fn backward_input(&self, cache: &BackboneCache, grad_out: &Matrix) -> Result<Matrix> {
        match cache {
            BackboneCache::Toy(c) => Ok(self.backward_layers(c, grad_out)?.1),
            _ => Err(Error::MissingForwardCache),
        }
    }
}
