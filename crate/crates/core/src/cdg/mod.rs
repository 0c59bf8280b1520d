//! Channel-data generation: CSI prediction through the frozen language backbone.

mod checkpoint;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csi_pipeline::{complex_to_real, normalize, patch, patch_count, to_csi, NormStats, PatchSet};
use crate::lmkb_core::nn::{init_uniform, positional_encoding, softmax_rows, softmax_rows_backward, Matrix, Params};
use crate::lmkb_core::{
    cross_attention_backward, cross_attention_cached, project_vocab, AlignmentKv, AlignmentParams, BackboneConfig,
    EmbeddingTable, TokenId, TokenSeq, ToyTransformer, TransformerParams,
};
use crate::mimo_channel::ChannelTrace;
use crate::optim::{Optimizer, OptimizerKind};
use crate::{seed, Error, Result};

pub use crate::eval::nmse_metric as nmse_loss;

fn default_lambda() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CdgConfig {
    pub t_his: usize,
    pub t_pre: usize,
    pub l_patch: usize,
    pub stride: usize,
    /// CSI embedding width; `0` means the backbone width. Must equal `d_llm`.
    pub d_e: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    pub epochs: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub vocab_size: usize,
    pub align_heads: usize,
    /// Projected vocabulary width; `0` means `d_llm / 2`.
    pub d_hat: usize,
    pub freeze_backbone: bool,
    /// Rows sampled per window and step; `0` uses every row.
    pub row_batch: usize,
    /// Windows averaged per parameter update.
    pub batch_windows: usize,
    pub backbone: BackboneConfig,
    pub seed: u64,
}

impl Default for CdgConfig {
    fn default() -> Self {
        Self {
            t_his: 16,
            t_pre: 4,
            l_patch: 4,
            stride: 2,
            d_e: 0,
            lambda: 1.0,
            epochs: 200,
            lr: 0.05,
            optimizer: OptimizerKind::Sgd,
            vocab_size: 128,
            align_heads: 2,
            d_hat: 0,
            freeze_backbone: true,
            row_batch: 0,
            batch_windows: 1,
            backbone: BackboneConfig::default(),
            seed: 0,
        }
    }
}

impl CdgConfig {
    pub fn d_llm(&self) -> usize {
        self.backbone.d_llm
    }

    pub fn d_e(&self) -> usize {
        if self.d_e == 0 {
            self.d_llm()
        } else {
            self.d_e
        }
    }

    pub fn d_hat(&self) -> usize {
        if self.d_hat == 0 {
            (self.d_llm() / 2).max(1)
        } else {
            self.d_hat
        }
    }

    pub fn n_patch(&self) -> Result<usize> {
        patch_count(self.t_his, self.l_patch, self.stride)
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        let n = self.n_patch()?;
        if n > self.backbone.max_seq {
            return Err(Error::config(format!(
                "{n} patches exceed backbone context {}",
                self.backbone.max_seq
            )));
        }
        if self.t_pre == 0 {
            return Err(Error::config("t_pre must be positive"));
        }
        if self.d_e() != self.d_llm() {
            return Err(Error::config(format!(
                "d_e ({}) must equal the backbone width ({})",
                self.d_e(),
                self.d_llm()
            )));
        }
        if self.vocab_size == 0 || self.align_heads == 0 || self.d_hat() > self.d_llm() {
            return Err(Error::config("invalid vocabulary or alignment dimensions"));
        }
        if self.d_hat() % self.align_heads != 0 {
            return Err(Error::config(format!(
                "d_hat {} not divisible by {} alignment heads",
                self.d_hat(),
                self.align_heads
            )));
        }
        if !(self.lambda >= 0.0) || !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::config("lambda and lr must be finite and non-negative"));
        }
        if self.batch_windows == 0 {
            return Err(Error::config("batch_windows must be positive"));
        }
        Ok(())
    }
}

/// Trainable CDG matrices (also the gradient container).
#[derive(Debug, Clone, PartialEq)]
pub struct CdgParams {
    /// `[L_patch, d_E]`
    pub w_emb: Matrix,
    pub align: AlignmentParams,
    /// `[d_E, |V|]`
    pub w_out: Matrix,
    /// `[|V|, T_pre]`, shared by every row.
    pub w_linear: Matrix,
}

impl Params for CdgParams {
    fn tensors(&self) -> Vec<&Matrix> {
        let mut v = vec![&self.w_emb];
        v.extend(self.align.tensors());
        v.push(&self.w_out);
        v.push(&self.w_linear);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = vec![&mut self.w_emb];
        v.extend(self.align.tensors_mut());
        v.push(&mut self.w_out);
        v.push(&mut self.w_linear);
        v
    }
}

#[derive(Debug, Clone)]
pub struct CdgGrads {
    pub params: CdgParams,
    pub backbone: Option<TransformerParams>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetTokens {
    pub ids: TokenSeq,
    pub derivation_tag: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub ce: f64,
    pub nmse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub ce: f64,
    pub nmse: f64,
}

/// A (history, future) training pair.
#[derive(Debug, Clone)]
pub struct CdgSample {
    pub his: ChannelTrace,
    pub future: ChannelTrace,
}

/// Consecutive (history, future) windows of a trace, advancing by `step`.
pub fn make_windows(trace: &ChannelTrace, t_his: usize, t_pre: usize, step: usize) -> Result<Vec<CdgSample>> {
    if step == 0 || t_his == 0 || t_pre == 0 {
        return Err(Error::config("window lengths and step must be positive"));
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + t_his + t_pre <= trace.len() {
        out.push(CdgSample {
            his: trace.slice(start..start + t_his)?,
            future: trace.slice(start + t_his..start + t_his + t_pre)?,
        });
        start += step;
    }
    Ok(out)
}

/// History patches flattened to `[rows·N_patch, L_patch]`, row-major by (row, patch).
fn patch_matrix(p: &PatchSet) -> Matrix {
    Matrix::from_row_slice(p.rows * p.n_patch, p.l_patch, p.data())
}

/// Linear CSI embedding of every patch: `[rows·N_patch, d_E]`.
pub fn csi_embed(p: &PatchSet, w_emb: &Matrix) -> Result<Matrix> {
    if p.l_patch != w_emb.nrows() {
        return Err(Error::shape(format!(
            "patch length {} != embedding rows {}",
            p.l_patch,
            w_emb.nrows()
        )));
    }
    Ok(patch_matrix(p) * w_emb)
}

/// Index of the most cosine-similar row of `keys` for each row of `queries`; ties pick the lower id.
pub fn nearest_vocab(queries: &Matrix, keys: &Matrix) -> Vec<TokenId> {
    let unit = |m: &Matrix| {
        let mut m = m.clone();
        for mut row in m.row_iter_mut() {
            let n = row.norm();
            if n > 0.0 {
                row /= n;
            }
        }
        m
    };
    let sims = unit(queries) * unit(keys).transpose();
    sims.row_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &s) in row.iter().enumerate() {
                if s > row[best] {
                    best = j;
                }
            }
            best as TokenId
        })
        .collect()
}

/// `−Σ log p[target]` over next-token steps.
pub fn ce_loss(pred_dists: &Matrix, targets: &[TokenId]) -> Result<f64> {
    if pred_dists.nrows() != targets.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} targets",
            pred_dists.nrows(),
            targets.len()
        )));
    }
    let mut loss = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        if t as usize >= pred_dists.ncols() {
            return Err(Error::Vocab {
                id: t as usize,
                size: pred_dists.ncols(),
            });
        }
        loss -= pred_dists[(i, t as usize)].ln();
    }
    Ok(loss.max(0.0))
}

pub fn total_loss(ce: f64, nmse: f64, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::config(format!("lambda must be non-negative, got {lambda}")));
    }
    Ok(ce + lambda * nmse)
}

/// A history window in model-ready form.
#[derive(Debug, Clone)]
struct Prepared {
    /// `[rows·N_patch, L_patch]`
    x: Matrix,
    rows: usize,
    n_patch: usize,
    stats: NormStats,
    n_r: usize,
    n_t: usize,
    interval: f64,
    /// Real future `[rows, T_pre]` in physical units, when known.
    truth: Option<Matrix>,
}

impl Prepared {
    fn select_rows(&self, rows: &[usize]) -> Prepared {
        let n = self.n_patch;
        let mut x = Matrix::zeros(rows.len() * n, self.x.ncols());
        for (i, &r) in rows.iter().enumerate() {
            x.rows_mut(i * n, n).copy_from(&self.x.rows(r * n, n));
        }
        let truth = self.truth.as_ref().map(|t| Matrix::from_fn(rows.len(), t.ncols(), |i, c| t[(rows[i], c)]));
        Prepared {
            x,
            rows: rows.len(),
            truth,
            ..self.clone()
        }
    }
}

struct Forward {
    e: Matrix,
    kv: AlignmentKv,
    ca: crate::lmkb_core::CrossAttentionCache,
    bb: Vec<crate::lmkb_core::transformer::LayerCache>,
    zhat: Matrix,
    probs: Matrix,
    /// Final-position distributions `[rows, |V|]`.
    last: Matrix,
    /// Normalised prediction `[rows, T_pre]`.
    y: Matrix,
}

/// The full CSI predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct CdgModel {
    pub config: CdgConfig,
    /// Frozen word embeddings of the language model.
    pub table: EmbeddingTable,
    pub params: CdgParams,
    pub backbone: ToyTransformer,
}

impl CdgModel {
    pub fn new(config: CdgConfig) -> Result<Self> {
        config.validate()?;
        let backbone = ToyTransformer::new(config.backbone.clone())?;
        let d = config.d_llm();
        let mut rng = seed::rng(config.seed, &[seed::label("cdg-init")]);
        let table = EmbeddingTable::random(config.vocab_size, d, &mut seed::rng(config.backbone.seed, &[seed::label("word-table")]))?;
        let d_hat = config.d_hat();
        let align = AlignmentParams::init(d, d_hat, config.d_e(), config.align_heads, d_hat / config.align_heads, &mut rng)?;
        let params = CdgParams {
            w_emb: init_uniform(config.l_patch, config.d_e(), config.l_patch, &mut rng),
            align,
            w_out: init_uniform(config.d_e(), config.vocab_size, config.d_e(), &mut rng),
            w_linear: init_uniform(config.vocab_size, config.t_pre, config.vocab_size, &mut rng),
        };
        Ok(Self {
            config,
            table,
            params,
            backbone,
        })
    }

    fn prepare(&self, his: &ChannelTrace, future: Option<&ChannelTrace>) -> Result<Prepared> {
        if his.len() < self.config.l_patch {
            return Err(Error::input(format!(
                "history of {} snapshots is shorter than the patch length {}",
                his.len(),
                self.config.l_patch
            )));
        }
        let (n_r, n_t) = his.dims().ok_or_else(|| Error::input("empty history"))?;
        let (norm, stats) = normalize(&complex_to_real(his)?)?;
        let p = patch(&norm, self.config.l_patch, self.config.stride)?;
        if p.n_patch > self.backbone.config().max_seq {
            return Err(Error::ContextOverflow {
                len: p.n_patch,
                max_seq: self.backbone.config().max_seq,
            });
        }
        let truth = match future {
            Some(f) => {
                if f.len() != self.config.t_pre || f.dims() != Some((n_r, n_t)) {
                    return Err(Error::shape("future window does not match t_pre and array size"));
                }
                let real = complex_to_real(f)?;
                let rows = real.rows();
                Some(Matrix::from_fn(rows, self.config.t_pre, |r, t| real.data()[t * rows + r]))
            }
            None => None,
        };
        Ok(Prepared {
            x: patch_matrix(&p),
            rows: p.rows,
            n_patch: p.n_patch,
            stats,
            n_r,
            n_t,
            interval: his.sample_interval_ms().unwrap_or(1.0),
            truth,
        })
    }

    pub fn projected_vocab(&self) -> Result<Matrix> {
        project_vocab(&self.table.e_word, &self.params.align.w_proj)
    }

    /// Cross-attention alignment of CSI embeddings `[rows·N_patch, d_E]`.
    pub fn align(&self, e: &Matrix) -> Result<Matrix> {
        let kv = AlignmentKv::new(self.projected_vocab()?, &self.params.align)?;
        Ok(cross_attention_cached(e, &kv, &self.params.align)?.0)
    }

    fn forward(&self, p: &Prepared) -> Result<Forward> {
        let n = p.n_patch;
        let e = &p.x * &self.params.w_emb;
        let kv = AlignmentKv::new(self.projected_vocab()?, &self.params.align)?;
        let (za, ca) = cross_attention_cached(&e, &kv, &self.params.align)?;
        let pe = positional_encoding(n, za.ncols());
        let mut m0 = za;
        for r in 0..p.rows {
            let mut block = m0.rows_mut(r * n, n);
            block += &pe;
        }
        let (zhat, bb) = self.backbone.forward_batch(&m0, n)?;
        let probs = softmax_rows(&(&zhat * &self.params.w_out));
        let last = Matrix::from_fn(p.rows, probs.ncols(), |r, v| probs[(r * n + n - 1, v)]);
        let y = &last * &self.params.w_linear;
        Ok(Forward {
            e,
            kv,
            ca,
            bb,
            zhat,
            probs,
            last,
            y,
        })
    }

    /// Next-patch token targets for positions `1..N_patch` of every row.
    fn targets_from(&self, f: &Forward, p: &Prepared) -> Vec<TokenId> {
        let projected = &f.e * &self.params.align.w_proj;
        let ids = nearest_vocab(&projected, &f.kv.e_proj);
        let n = p.n_patch;
        (0..p.rows).flat_map(|r| ids[r * n + 1..r * n + n].to_vec()).collect()
    }

    /// Nearest-vocabulary token of every patch of `trace`, ordered by (row, patch).
    pub fn derive_target_tokens(&self, trace: &ChannelTrace) -> Result<TargetTokens> {
        let p = self.prepare(trace, None)?;
        let e = &p.x * &self.params.w_emb;
        let projected = &e * &self.params.align.w_proj;
        let ids = nearest_vocab(&projected, &self.projected_vocab()?);
        Ok(TargetTokens {
            ids: TokenSeq(ids),
            derivation_tag: "nearest-vocab".into(),
        })
    }

    fn flat_prediction(&self, p: &Prepared, y: &Matrix) -> Vec<f64> {
        let rows = p.rows;
        let mut flat = vec![0.0; rows * self.config.t_pre];
        for r in 0..rows {
            for t in 0..self.config.t_pre {
                flat[t * rows + r] = y[(r, t)];
            }
        }
        flat
    }

    /// Predicted next `t_pre` snapshots.
    pub fn predict(&self, his: &ChannelTrace) -> Result<ChannelTrace> {
        let p = self.prepare(his, None)?;
        let f = self.forward(&p)?;
        to_csi(&self.flat_prediction(&p, &f.y), self.config.t_pre, p.n_r, p.n_t, p.stats, p.interval)
    }

    /// Next-token distributions for every position, `[rows·N_patch, |V|]`.
    pub fn token_distributions(&self, his: &ChannelTrace) -> Result<Matrix> {
        let p = self.prepare(his, None)?;
        Ok(self.forward(&p)?.probs)
    }

    fn loss_and_grads(&self, p: &Prepared, targets: Option<&[TokenId]>, want_grads: bool) -> Result<(LossParts, Option<CdgGrads>)> {
        let truth = p.truth.as_ref().ok_or_else(|| Error::input("training window has no future"))?;
        let f = self.forward(p)?;
        let n = p.n_patch;
        let owned;
        let targets = match targets {
            Some(t) => t,
            None => {
                owned = self.targets_from(&f, p);
                &owned
            }
        };
        let steps = p.rows * (n - 1);
        let ce_rows: Vec<usize> = (0..p.rows).flat_map(|r| (0..n - 1).map(move |i| r * n + i)).collect();
        let ce_mean = if steps > 0 {
            let d = Matrix::from_fn(steps, f.probs.ncols(), |i, v| f.probs[(ce_rows[i], v)]);
            ce_loss(&d, targets)? / steps as f64
        } else {
            0.0
        };

        let sigma = p.stats.sigma;
        let pred = f.y.map(|v| v * sigma + p.stats.mu);
        let err = &pred - truth;
        let denom = truth.norm_squared();
        if denom == 0.0 {
            return Err(Error::UndefinedMetric("NMSE against an all-zero future".into()));
        }
        let nmse = err.norm_squared() / denom;
        let lambda = self.config.lambda;
        let parts = LossParts {
            total: total_loss(ce_mean, nmse, lambda)?,
            ce: ce_mean,
            nmse,
        };
        if !want_grads {
            return Ok((parts, None));
        }

        let mut g = self.params.zeros_like();
        let dy = err * (lambda * 2.0 * sigma / denom);
        g.w_linear = f.last.transpose() * &dy;
        let d_last = dy * self.params.w_linear.transpose();
        let d_last_logits = softmax_rows_backward(&f.last, &d_last);
        let mut dlogits = Matrix::zeros(f.probs.nrows(), f.probs.ncols());
        for r in 0..p.rows {
            dlogits.row_mut(r * n + n - 1).copy_from(&d_last_logits.row(r));
        }
        if steps > 0 {
            let scale = 1.0 / steps as f64;
            for (i, &row) in ce_rows.iter().enumerate() {
                let mut dl = f.probs.row(row) * scale;
                dl[targets[i] as usize] -= scale;
                dlogits.row_mut(row).copy_from(&dl);
            }
        }
        g.w_out = f.zhat.transpose() * &dlogits;
        let dzhat = dlogits * self.params.w_out.transpose();
        let (bb_grads, dza) = self.backbone.backward_layers(&f.bb, &dzhat)?;
        let ca = cross_attention_backward(&dza, &f.kv, &self.params.align, &f.ca);
        g.align = ca.params;
        g.align.w_proj = self.table.e_word.transpose() * &ca.d_e_proj;
        g.w_emb = p.x.transpose() * &ca.d_q_src;
        let backbone = if self.config.freeze_backbone { None } else { Some(bb_grads) };
        Ok((parts, Some(CdgGrads { params: g, backbone })))
    }

    /// Joint loss on one (history, future) pair; targets derived from the current parameters.
    pub fn loss(&self, sample: &CdgSample) -> Result<LossParts> {
        let p = self.prepare(&sample.his, Some(&sample.future))?;
        Ok(self.loss_and_grads(&p, None, false)?.0)
    }

    /// Loss and gradients with explicit next-token targets (`rows·(N_patch−1)` ids).
    pub fn loss_with_targets(&self, sample: &CdgSample, targets: &[TokenId]) -> Result<(LossParts, CdgGrads)> {
        let p = self.prepare(&sample.his, Some(&sample.future))?;
        let (parts, g) = self.loss_and_grads(&p, Some(targets), true)?;
        Ok((parts, g.expect("gradients requested")))
    }

    /// Next-token targets for a training pair under the current parameters.
    pub fn training_targets(&self, sample: &CdgSample) -> Result<Vec<TokenId>> {
        let p = self.prepare(&sample.his, Some(&sample.future))?;
        let f = self.forward(&p)?;
        Ok(self.targets_from(&f, &p))
    }
}

/// Trains a freshly initialised model; see [`train_cdg_from`].
pub fn train_cdg(dataset: &[CdgSample], config: &CdgConfig) -> Result<(CdgModel, Vec<EpochLoss>)> {
    train_cdg_from(CdgModel::new(config.clone())?, dataset)
}

/// Mini-batch descent on the joint objective using the model's own config.
///
/// Window order and row subsets are drawn from the config seed; per-window
/// gradients are computed in parallel and summed in window order.
pub fn train_cdg_from(mut model: CdgModel, dataset: &[CdgSample]) -> Result<(CdgModel, Vec<EpochLoss>)> {
    if dataset.is_empty() {
        return Err(Error::input("empty CDG training set"));
    }
    let cfg = model.config.clone();
    let prepared: Vec<Prepared> = dataset
        .iter()
        .map(|s| model.prepare(&s.his, Some(&s.future)))
        .collect::<Result<_>>()?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr);
    let mut bb_opt = Optimizer::new(cfg.optimizer, cfg.lr);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        order.shuffle(&mut seed::rng(cfg.seed, &[seed::label("cdg-order"), epoch as u64]));
        let mut sums = LossParts { total: 0.0, ce: 0.0, nmse: 0.0 };
        for chunk in order.chunks(cfg.batch_windows) {
            let results: Vec<(LossParts, CdgGrads)> = chunk
                .par_iter()
                .map(|&w| {
                    let p = &prepared[w];
                    let sub;
                    let p = if cfg.row_batch > 0 && cfg.row_batch < p.rows {
                        let mut rng = seed::rng(cfg.seed, &[seed::label("cdg-rows"), epoch as u64, w as u64]);
                        let mut rows = index::sample(&mut rng, p.rows, cfg.row_batch).into_vec();
                        rows.sort_unstable();
                        sub = p.select_rows(&rows);
                        &sub
                    } else {
                        p
                    };
                    let (parts, g) = model.loss_and_grads(p, None, true)?;
                    Ok((parts, g.expect("gradients requested")))
                })
                .collect::<Result<_>>()?;
            let scale = 1.0 / chunk.len() as f64;
            let mut acc = model.params.zeros_like();
            let mut bb_acc = (!cfg.freeze_backbone).then(|| model.backbone.params.zeros_like());
            for (parts, g) in &results {
                sums.total += parts.total;
                sums.ce += parts.ce;
                sums.nmse += parts.nmse;
                acc.add_scaled(&g.params, scale);
                if let (Some(a), Some(b)) = (bb_acc.as_mut(), g.backbone.as_ref()) {
                    a.add_scaled(b, scale);
                }
            }
            if acc.tensors().iter().any(|m| m.iter().any(|v| !v.is_finite())) {
                return Err(Error::Numeric(format!("non-finite CDG gradient in epoch {epoch}")));
            }
            opt.step(&mut model.params, &acc);
            if let Some(b) = bb_acc {
                bb_opt.step(&mut model.backbone.params, &b);
            }
        }
        let k = prepared.len() as f64;
        history.push(EpochLoss {
            epoch,
            total: sums.total / k,
            ce: sums.ce / k,
            nmse: sums.nmse / k,
        });
    }
    Ok((model, history))
}

/// Repeats the last history snapshot `t_pre` times.
pub fn stale_prediction(his: &ChannelTrace, t_pre: usize) -> Result<ChannelTrace> {
    let last = his
        .realizations()
        .last()
        .ok_or_else(|| Error::input("empty history"))?
        .h
        .clone();
    ChannelTrace::from_matrices(vec![last; t_pre], his.sample_interval_ms().unwrap_or(1.0), his.model_tag)
}
