//! Multi-head scaled dot-product attention and the CSI-to-vocabulary alignment layer.

use std::ops::AddAssign;

use rand::Rng;

use super::nn::{init_uniform, softmax_rows, softmax_rows_backward, Matrix, Params};
use crate::{Error, Result};

/// Raw scores `Q·Kᵀ/√d_k`.
pub fn attention_scores(q: &Matrix, k: &Matrix, d_k: usize) -> Matrix {
    (q * k.transpose()) / (d_k as f64).sqrt()
}

/// Per-block, per-head attention probabilities retained for the backward pass.
#[derive(Debug, Clone)]
pub struct MhaCache {
    /// Indexed by `block · heads + head`.
    pub probs: Vec<Matrix>,
    pub blocks: usize,
}

fn block_rows(total: usize, blocks: usize, b: usize) -> (usize, usize) {
    let len = total / blocks;
    (b * len, len)
}

/// Multi-head attention over already-projected `q [Lq, H·d_k]`, `k`/`v [Lk, H·d_k]`.
///
/// Rows are split into `blocks` equal, independent sequences; block `b` of
/// `q` attends only to block `b` of `k`/`v`. Returns the concatenated head
/// outputs `[Lq, H·d_k]`.
pub fn mha_forward(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    heads: usize,
    d_k: usize,
    causal: bool,
    blocks: usize,
) -> (Matrix, MhaCache) {
    let mut out = Matrix::zeros(q.nrows(), heads * d_k);
    let mut probs = Vec::with_capacity(heads * blocks);
    for b in 0..blocks {
        let (q0, ql) = block_rows(q.nrows(), blocks, b);
        let (k0, kl) = block_rows(k.nrows(), blocks, b);
        for h in 0..heads {
            let qh = q.view((q0, h * d_k), (ql, d_k));
            let kh = k.view((k0, h * d_k), (kl, d_k));
            let vh = v.view((k0, h * d_k), (kl, d_k));
            let mut s = (qh * kh.transpose()) / (d_k as f64).sqrt();
            if causal {
                for i in 0..s.nrows() {
                    for j in (i + 1)..s.ncols() {
                        s[(i, j)] = f64::NEG_INFINITY;
                    }
                }
            }
            let p = softmax_rows(&s);
            out.view_mut((q0, h * d_k), (ql, d_k)).copy_from(&(&p * vh));
            probs.push(p);
        }
    }
    (out, MhaCache { probs, blocks })
}

/// Returns `(dq, dk, dv)` for the projected inputs.
pub fn mha_backward(
    d_out: &Matrix,
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    heads: usize,
    d_k: usize,
    cache: &MhaCache,
) -> (Matrix, Matrix, Matrix) {
    let scale = 1.0 / (d_k as f64).sqrt();
    let mut dq = Matrix::zeros(q.nrows(), q.ncols());
    let mut dk = Matrix::zeros(k.nrows(), k.ncols());
    let mut dv = Matrix::zeros(v.nrows(), v.ncols());
    let blocks = cache.blocks;
    for b in 0..blocks {
        let (q0, ql) = block_rows(q.nrows(), blocks, b);
        let (k0, kl) = block_rows(k.nrows(), blocks, b);
        for h in 0..heads {
            let p = &cache.probs[b * heads + h];
            let doh = d_out.view((q0, h * d_k), (ql, d_k));
            let qh = q.view((q0, h * d_k), (ql, d_k));
            let kh = k.view((k0, h * d_k), (kl, d_k));
            let vh = v.view((k0, h * d_k), (kl, d_k));
            let dp = doh * vh.transpose();
            dv.view_mut((k0, h * d_k), (kl, d_k)).add_assign(&(p.transpose() * doh));
            let ds = softmax_rows_backward(p, &dp) * scale;
            dq.view_mut((q0, h * d_k), (ql, d_k)).add_assign(&(&ds * kh));
            dk.view_mut((k0, h * d_k), (kl, d_k)).add_assign(&(ds.transpose() * qh));
        }
    }
    (dq, dk, dv)
}

/// Learnable parameters of the alignment bridge.
///
/// Head `h` uses columns `h·d_k .. (h+1)·d_k` of `w_q`, `w_k` and `w_v`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentParams {
    /// `[d_llm, d̂]`
    pub w_proj: Matrix,
    /// `[d_E, H·d_k]`
    pub w_q: Matrix,
    /// `[d̂, H·d_k]`
    pub w_k: Matrix,
    /// `[d̂, H·d_k]`
    pub w_v: Matrix,
    /// `[H·d_k, d_E]`
    pub w_mix: Matrix,
    pub heads: usize,
    pub d_k: usize,
}

impl AlignmentParams {
    pub fn init(
        d_llm: usize,
        d_hat: usize,
        d_e: usize,
        heads: usize,
        d_k: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if d_hat == 0 || d_hat > d_llm {
            return Err(Error::config(format!("d_hat must be in 1..={d_llm}, got {d_hat}")));
        }
        if heads == 0 || d_k == 0 || d_e == 0 {
            return Err(Error::config("alignment dimensions must be positive"));
        }
        let w = heads * d_k;
        Ok(Self {
            w_proj: init_uniform(d_llm, d_hat, d_llm, rng),
            w_q: init_uniform(d_e, w, d_e, rng),
            w_k: init_uniform(d_hat, w, d_hat, rng),
            w_v: init_uniform(d_hat, w, d_hat, rng),
            w_mix: init_uniform(w, d_e, w, rng),
            heads,
            d_k,
        })
    }

    pub fn d_llm(&self) -> usize {
        self.w_proj.nrows()
    }

    pub fn d_hat(&self) -> usize {
        self.w_proj.ncols()
    }

    pub fn d_e(&self) -> usize {
        self.w_q.nrows()
    }

    fn check(&self) -> Result<()> {
        let w = self.heads * self.d_k;
        let ok = self.w_q.ncols() == w
            && self.w_k.shape() == (self.d_hat(), w)
            && self.w_v.shape() == (self.d_hat(), w)
            && self.w_mix.shape() == (w, self.d_e());
        if ok {
            Ok(())
        } else {
            Err(Error::shape("inconsistent alignment parameter shapes"))
        }
    }
}

impl Params for AlignmentParams {
    fn tensors(&self) -> Vec<&Matrix> {
        vec![&self.w_proj, &self.w_q, &self.w_k, &self.w_v, &self.w_mix]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![
            &mut self.w_proj,
            &mut self.w_q,
            &mut self.w_k,
            &mut self.w_v,
            &mut self.w_mix,
        ]
    }
}

/// `E' = E·W_proj`.
pub fn project_vocab(e_word: &Matrix, w_proj: &Matrix) -> Result<Matrix> {
    if e_word.ncols() != w_proj.nrows() {
        return Err(Error::shape(format!(
            "embedding width {} does not match projection rows {}",
            e_word.ncols(),
            w_proj.nrows()
        )));
    }
    Ok(e_word * w_proj)
}

/// Keys and values depend only on the projected vocabulary, so they are
/// computed once and shared across every query sequence.
#[derive(Debug, Clone)]
pub struct AlignmentKv {
    pub e_proj: Matrix,
    pub k: Matrix,
    pub v: Matrix,
}

impl AlignmentKv {
    pub fn new(e_proj: Matrix, params: &AlignmentParams) -> Result<Self> {
        params.check()?;
        if e_proj.ncols() != params.d_hat() {
            return Err(Error::shape(format!(
                "projected vocabulary width {} != d_hat {}",
                e_proj.ncols(),
                params.d_hat()
            )));
        }
        if e_proj.nrows() == 0 {
            return Err(Error::shape("empty vocabulary"));
        }
        let k = &e_proj * &params.w_k;
        let v = &e_proj * &params.w_v;
        Ok(Self { e_proj, k, v })
    }
}

#[derive(Debug, Clone)]
pub struct CrossAttentionCache {
    q_src: Matrix,
    q: Matrix,
    concat: Matrix,
    mha: MhaCache,
}

impl CrossAttentionCache {
    pub fn probs(&self) -> &[Matrix] {
        &self.mha.probs
    }
}

/// Gradients produced by [`cross_attention_backward`].
#[derive(Debug, Clone)]
pub struct CrossAttentionGrads {
    pub d_q_src: Matrix,
    /// Gradient w.r.t. `w_q`, `w_k`, `w_v`, `w_mix`; `w_proj` is left zero.
    pub params: AlignmentParams,
    pub d_e_proj: Matrix,
}

pub fn cross_attention_cached(
    q_src: &Matrix,
    kv: &AlignmentKv,
    params: &AlignmentParams,
) -> Result<(Matrix, CrossAttentionCache)> {
    params.check()?;
    if q_src.ncols() != params.d_e() {
        return Err(Error::shape(format!(
            "query width {} != d_E {}",
            q_src.ncols(),
            params.d_e()
        )));
    }
    let q = q_src * &params.w_q;
    let (concat, mha) = mha_forward(&q, &kv.k, &kv.v, params.heads, params.d_k, false, 1);
    let out = &concat * &params.w_mix;
    Ok((
        out,
        CrossAttentionCache {
            q_src: q_src.clone(),
            q,
            concat,
            mha,
        },
    ))
}

/// Cross-attention from CSI patch embeddings onto the projected vocabulary.
pub fn cross_attention(q_src: &Matrix, e_proj: &Matrix, params: &AlignmentParams) -> Result<Matrix> {
    let kv = AlignmentKv::new(e_proj.clone(), params)?;
    Ok(cross_attention_cached(q_src, &kv, params)?.0)
}

pub fn cross_attention_backward(
    d_out: &Matrix,
    kv: &AlignmentKv,
    params: &AlignmentParams,
    cache: &CrossAttentionCache,
) -> CrossAttentionGrads {
    let d_mix = cache.concat.transpose() * d_out;
    let d_concat = d_out * params.w_mix.transpose();
    let (dq, dk, dv) = mha_backward(
        &d_concat,
        &cache.q,
        &kv.k,
        &kv.v,
        params.heads,
        params.d_k,
        &cache.mha,
    );
    let mut grads = params.zeros_like();
    grads.w_mix = d_mix;
    grads.w_q = cache.q_src.transpose() * &dq;
    grads.w_k = kv.e_proj.transpose() * &dk;
    grads.w_v = kv.e_proj.transpose() * &dv;
    let d_e_proj = dk * params.w_k.transpose() + dv * params.w_v.transpose();
    CrossAttentionGrads {
        d_q_src: dq * params.w_q.transpose(),
        params: grads,
        d_e_proj,
    }
}
