use std::f64::consts::PI;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{AblationSection, ExperimentConfig};
use super::csif::load_csi;
use super::dataset::{synth_dataset, Corpus};
use crate::cdfc::{
    infer_logits, train_codec, ChannelContext, CodecConfig, CodecSample, EpochMetrics, JsccCodec, SdgHook, TrainEnv,
};
use crate::cdg::{make_windows, train_cdg, CdgModel, CdgSample, EpochLoss};
use crate::eval::{map_score, nmse_metric, rank_at_k, rank_by_scores, RankingResult};
use crate::lmkb_core::{BackboneConfig, BackendTag, MockConfig, DeterministicMock, RemoteBackend, TextBackend, ToyLm};
use crate::mimo_channel::{generate_trace, CMatrix, ChannelModelParams, ChannelTrace, ModelTag, PrecodeConfig};
use crate::optim::Optimizer;
use crate::sdg::lexicon;
use crate::{seed, Error, Result};

/// Which LMKB components a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoSdg,
    NoCdg,
    /// Plain JSCC: no generation, no fusion, stale CSI.
    Baseline,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoSdg, Variant::NoCdg, Variant::Baseline];

    pub fn from_ablations(a: &AblationSection) -> Self {
        match (a.disable_sdg, a.disable_cdg) {
            (false, false) => Variant::Full,
            (true, false) => Variant::NoSdg,
            (false, true) => Variant::NoCdg,
            (true, true) => Variant::Baseline,
        }
    }

    pub fn uses_sdg(self) -> bool {
        matches!(self, Variant::Full | Variant::NoCdg)
    }

    pub fn uses_cdg(self) -> bool {
        matches!(self, Variant::Full | Variant::NoSdg)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoSdg => "no_sdg",
            Variant::NoCdg => "no_cdg",
            Variant::Baseline => "baseline",
        }
    }
}

/// One evaluated (seed, SNR) point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub variant: Variant,
    pub seed: u64,
    pub snr_db: f64,
    pub feedback_bits: Option<u32>,
    pub map: f64,
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    /// NMSE of the CSI the link acted on against the true channel.
    pub nmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub variant: Variant,
    pub seed: u64,
    pub epoch: usize,
    pub loss: f64,
    pub accept_rate: f64,
    pub fallback_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterRow {
    pub variant: Variant,
    pub seed: u64,
    pub accept_rate: f64,
    pub fallback_rate: f64,
}

/// Prediction quality per user, for position-dependent NMSE plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserNmseRow {
    pub user_id: usize,
    pub position: f64,
    pub source: String,
    pub nmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub config_seed: u64,
    pub variant: Variant,
    pub seeds: Vec<u64>,
    pub metrics: Vec<MetricRow>,
    pub losses: Vec<LossRow>,
    pub filter: Vec<FilterRow>,
    pub cdg_losses: Vec<EpochLoss>,
    pub per_user_nmse: Vec<UserNmseRow>,
    pub wall_clock_s: f64,
}

impl RunRecord {
    /// The record with wall-clock time zeroed, for reproducibility checks.
    pub fn payload(&self) -> RunRecord {
        RunRecord {
            wall_clock_s: 0.0,
            ..self.clone()
        }
    }
}

/// One link instance of the evaluation segment.
#[derive(Debug, Clone)]
pub struct LinkInstance {
    pub user: usize,
    pub t: usize,
    pub h: CMatrix,
    pub predicted: Option<CMatrix>,
    pub stale: CMatrix,
}

/// Channel knowledge shared by every seed of a run.
#[derive(Debug, Clone)]
pub struct ChannelBank {
    pub positions: Vec<f64>,
    pub links: Vec<LinkInstance>,
    pub cdg: Option<CdgModel>,
    pub cdg_losses: Vec<EpochLoss>,
}

/// Line-of-sight departure angle of user `u`, spread over ±60°.
pub fn user_position(u: usize, users: usize) -> f64 {
    if users <= 1 {
        0.0
    } else {
        -PI / 3.0 + 2.0 * PI / 3.0 * u as f64 / (users - 1) as f64
    }
}

/// Per-user traces of length `train_len + eval_len`, generated or loaded.
pub fn user_traces(cfg: &ExperimentConfig) -> Result<Vec<(f64, ChannelTrace)>> {
    let c = &cfg.channel;
    let len = c.train_len + c.eval_len;
    if let Some(path) = &c.csi_file {
        let trace = load_csi(path)?;
        if trace.len() < len {
            return Err(Error::InvalidConfig(format!(
                "{} holds {} snapshots, config needs {len}",
                path.display(),
                trace.len()
            )));
        }
        if trace.dims() != Some((c.n_r, c.n_t)) {
            return Err(Error::InvalidConfig(format!(
                "{} has dimensions {:?}, config expects ({}, {})",
                path.display(),
                trace.dims(),
                c.n_r,
                c.n_t
            )));
        }
        return Ok(vec![(0.0, trace.slice(0..len)?)]);
    }
    (0..c.users)
        .map(|u| {
            let position = user_position(u, c.users);
            let params = ChannelModelParams {
                model_tag: c.model_tag,
                n_r: c.n_r,
                n_t: c.n_t,
                doppler_hz: c.doppler_hz,
                n_paths: c.n_paths,
                k_factor_db: c.k_factor_db,
                sample_interval_ms: c.sample_interval_ms,
                los_aod_rad: Some(position),
            };
            let s = seed::derive(cfg.seed, &[seed::label("user-trace"), u as u64]);
            Ok((position, generate_trace(&params, s, len)?))
        })
        .collect()
}

/// CDG configuration with its seed tied to the run's root seed.
pub fn cdg_config(cfg: &ExperimentConfig) -> crate::cdg::CdgConfig {
    let mut c = cfg.cdg.clone();
    c.seed = seed::derive(cfg.seed, &[seed::label("cdg"), cfg.cdg.seed]);
    c
}

/// Training windows from the first `train_len` samples of every user.
pub fn cdg_training_set(cfg: &ExperimentConfig, traces: &[(f64, ChannelTrace)]) -> Result<Vec<CdgSample>> {
    let mut out = Vec::new();
    for (_, tr) in traces {
        let head = tr.slice(0..cfg.channel.train_len)?;
        out.extend(make_windows(&head, cfg.cdg.t_his, cfg.cdg.t_pre, cfg.channel.window_step)?);
    }
    Ok(out)
}

/// Build the evaluation link instances; trains the CSI predictor when
/// `with_cdg`.
pub fn prepare_channels(cfg: &ExperimentConfig, with_cdg: bool) -> Result<ChannelBank> {
    let traces = user_traces(cfg)?;
    let (t_his, t_pre) = (cfg.cdg.t_his, cfg.cdg.t_pre);
    let (cdg, cdg_losses) = if with_cdg {
        let data = cdg_training_set(cfg, &traces)?;
        let (m, h) = train_cdg(&data, &cdg_config(cfg))?;
        (Some(m), h)
    } else {
        (None, Vec::new())
    };
    let mut jobs = Vec::new();
    for (u, (_, tr)) in traces.iter().enumerate() {
        for t in cfg.channel.train_len..cfg.channel.train_len + cfg.channel.eval_len {
            jobs.push((u, t, tr));
        }
    }
    let links = jobs
        .par_iter()
        .map(|&(user, t, tr)| {
            let start = t + 1 - t_pre - t_his;
            let his = tr.slice(start..start + t_his)?;
            let predicted = match &cdg {
                Some(m) => Some(m.predict(&his)?.get(t_pre - 1).expect("t_pre snapshots").clone()),
                None => None,
            };
            Ok(LinkInstance {
                user,
                t,
                h: tr.get(t).expect("in range").clone(),
                predicted,
                stale: tr.get(t - t_pre).expect("in range").clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ChannelBank {
        positions: traces.iter().map(|(p, _)| *p).collect(),
        links,
        cdg,
        cdg_losses,
    })
}

fn stack(mats: Vec<CMatrix>) -> Result<ChannelTrace> {
    ChannelTrace::from_matrices(mats, 1.0, ModelTag::FromFile)
}

impl ChannelBank {
    fn csi_for(&self, link: &LinkInstance, use_cdg: bool) -> Result<CMatrix> {
        if use_cdg {
            link.predicted
                .clone()
                .ok_or_else(|| Error::input("channel bank was prepared without CSI prediction"))
        } else {
            Ok(link.stale.clone())
        }
    }

    /// Link contexts with predicted (`use_cdg`) or stale CSI.
    pub fn contexts(&self, cfg: &ExperimentConfig, use_cdg: bool) -> Result<Vec<ChannelContext>> {
        let link = PrecodeConfig {
            d: cfg.mimo.d,
            equalize: cfg.mimo.equalize,
        };
        self.links
            .iter()
            .map(|l| ChannelContext::new(l.h.clone(), &self.csi_for(l, use_cdg)?, link, cfg.mimo.feedback_bits))
            .collect()
    }

    /// NMSE of the acting CSI over all links, or over one user's links.
    pub fn nmse(&self, use_cdg: bool, user: Option<usize>) -> Result<f64> {
        let sel: Vec<&LinkInstance> = self.links.iter().filter(|l| user.is_none_or(|u| l.user == u)).collect();
        let pred = stack(sel.iter().map(|l| self.csi_for(l, use_cdg)).collect::<Result<_>>()?)?;
        let truth = stack(sel.iter().map(|l| l.h.clone()).collect())?;
        nmse_metric(&pred, &truth)
    }

    pub fn per_user_rows(&self) -> Result<Vec<UserNmseRow>> {
        let mut out = Vec::new();
        for (u, &position) in self.positions.iter().enumerate() {
            let mut sources = vec![("stale", false)];
            if self.cdg.is_some() {
                sources.insert(0, ("predicted", true));
            }
            for (name, use_cdg) in sources {
                out.push(UserNmseRow {
                    user_id: u,
                    position,
                    source: name.to_string(),
                    nmse: self.nmse(use_cdg, Some(u))?,
                });
            }
        }
        Ok(out)
    }
}

/// Text generator selected by the config.
pub fn build_backend(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<Box<dyn TextBackend>> {
    let s = &cfg.sdg;
    Ok(match s.backend {
        BackendTag::Mock => Box::new(DeterministicMock::new(MockConfig {
            thesaurus: lexicon::thesaurus(),
            substitution_prob: s.substitution_prob,
            reorder: s.reorder,
            hallucination_rate: s.hallucination_rate,
            off_topic: lexicon::OFF_TOPIC.iter().map(|w| w.to_string()).collect(),
            ..MockConfig::default()
        })?),
        BackendTag::Toy => {
            let bb = BackboneConfig {
                seed: seed::derive(cfg.seed, &[seed::label("toy-lm")]),
                max_seq: 256,
                ..BackboneConfig::default()
            };
            Box::new(ToyLm::new(bb, corpus.vocab.size())?)
        }
        BackendTag::Remote => Box::new(RemoteBackend::from_env(4)?),
    })
}

fn codec_samples(corpus_split: &[super::dataset::Caption], n_links: usize, s: u64) -> Vec<CodecSample> {
    let mut rng = seed::rng(s, &[seed::label("link-assignment")]);
    corpus_split
        .iter()
        .map(|c| CodecSample {
            source: c.text.clone(),
            tokens: c.tokens.clone(),
            label: c.label,
            channel: rng.random_range(0..n_links),
        })
        .collect()
}

/// A trained codec with what it was trained on.
pub struct TrainedCodec {
    pub corpus: Corpus,
    pub codec: JsccCodec,
    pub history: Vec<EpochMetrics>,
}

fn replicate_seed(cfg: &ExperimentConfig, rep: u64, what: &str) -> u64 {
    seed::derive(cfg.seed, &[seed::label(what), rep])
}

/// Train the codec of one replicate over the given link contexts.
pub fn train_replicate(
    cfg: &ExperimentConfig,
    variant: Variant,
    contexts: &[ChannelContext],
    rep: u64,
) -> Result<TrainedCodec> {
    let corpus = synth_dataset(&cfg.dataset, replicate_seed(cfg, rep, "dataset"))?;
    if corpus.train.is_empty() {
        return Err(Error::InvalidConfig("dataset has no training captions".into()));
    }
    let c = &cfg.cdfc;
    let mut codec = JsccCodec::new(
        CodecConfig {
            n_feat: c.n_feat,
            d_emb: c.d_emb,
            enc_hidden: c.enc_hidden,
            dec_hidden: c.dec_hidden,
            ..CodecConfig::default()
        },
        corpus.vocab.size(),
        cfg.dataset.gallery_dim,
        replicate_seed(cfg, rep, "codec"),
    )?;
    let samples = codec_samples(&corpus.train, contexts.len(), replicate_seed(cfg, rep, "train-links"));
    let backend = if variant.uses_sdg() {
        Some(build_backend(cfg, &corpus)?)
    } else {
        None
    };
    let generation = cfg.sdg.generation();
    let env = TrainEnv {
        gallery: &corpus.gallery,
        channels: contexts,
        snr_db: c.train_snr_db,
        pairing: c.fusion_pairing,
        sdg: backend.as_deref().map(|b| SdgHook {
            backend: b,
            vocab: &corpus.vocab,
            filter: c.filter(),
            generation: &generation,
        }),
    };
    let mut opt = Optimizer::new(c.optimizer, c.lr);
    let history = train_codec(
        &samples,
        &mut codec,
        &mut opt,
        &env,
        c.epochs,
        c.batch_size,
        replicate_seed(cfg, rep, "codec-train"),
    )?;
    Ok(TrainedCodec { corpus, codec, history })
}

/// Retrieval metrics of a trained codec at one SNR.
pub fn evaluate(
    cfg: &ExperimentConfig,
    trained: &TrainedCodec,
    contexts: &[ChannelContext],
    rep: u64,
    snr_index: usize,
    snr_db: f64,
) -> Result<(f64, f64, f64, f64)> {
    let queries = codec_samples(&trained.corpus.test, contexts.len(), replicate_seed(cfg, rep, "test-links"));
    if queries.is_empty() {
        return Err(Error::InvalidConfig("dataset has no test captions".into()));
    }
    let results = queries
        .par_iter()
        .enumerate()
        .map(|(j, q)| {
            let noise = seed::derive(cfg.seed, &[seed::label("eval-noise"), rep, snr_index as u64, j as u64]);
            let logits = infer_logits(
                &q.tokens,
                &trained.codec,
                &contexts[q.channel],
                snr_db,
                noise,
                &trained.corpus.gallery,
            )?;
            RankingResult::new(rank_by_scores(&logits), vec![q.label])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        map_score(&results)?,
        rank_at_k(&results, 1)?,
        rank_at_k(&results, 5)?,
        rank_at_k(&results, 10)?,
    ))
}

fn run_variant(cfg: &ExperimentConfig, variant: Variant, bank: &ChannelBank) -> Result<RunRecord> {
    let started = Instant::now();
    let contexts = bank.contexts(cfg, variant.uses_cdg())?;
    let nmse = bank.nmse(variant.uses_cdg(), None)?;
    let per_seed = cfg
        .sweep
        .seeds
        .par_iter()
        .map(|&rep| {
            let trained = train_replicate(cfg, variant, &contexts, rep)?;
            let mut rows = Vec::new();
            for (k, &snr_db) in cfg.sweep.snr_grid_db.iter().enumerate() {
                let (map, rank1, rank5, rank10) = evaluate(cfg, &trained, &contexts, rep, k, snr_db)?;
                rows.push(MetricRow {
                    variant,
                    seed: rep,
                    snr_db,
                    feedback_bits: cfg.mimo.feedback_bits,
                    map,
                    rank1,
                    rank5,
                    rank10,
                    nmse,
                });
            }
            Ok((rep, rows, trained.history))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut record = RunRecord {
        config_hash: cfg.hash(),
        config_seed: cfg.seed,
        variant,
        seeds: cfg.sweep.seeds.clone(),
        metrics: Vec::new(),
        losses: Vec::new(),
        filter: Vec::new(),
        cdg_losses: if variant.uses_cdg() { bank.cdg_losses.clone() } else { Vec::new() },
        per_user_nmse: bank.per_user_rows()?,
        wall_clock_s: 0.0,
    };
    for (rep, rows, history) in per_seed {
        record.metrics.extend(rows);
        let n = history.len().max(1) as f64;
        record.filter.push(FilterRow {
            variant,
            seed: rep,
            accept_rate: history.iter().map(|h| h.accept_rate).sum::<f64>() / n,
            fallback_rate: history.iter().map(|h| h.fallback_rate).sum::<f64>() / n,
        });
        record.losses.extend(history.into_iter().map(|h| LossRow {
            variant,
            seed: rep,
            epoch: h.epoch,
            loss: h.loss,
            accept_rate: h.accept_rate,
            fallback_rate: h.fallback_rate,
        }));
    }
    record.wall_clock_s = started.elapsed().as_secs_f64();
    Ok(record)
}

/// Run several variants over one shared channel bank (the predictor is
/// trained once when any variant needs it).
pub fn run_variants(cfg: &ExperimentConfig, variants: &[Variant]) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let started = Instant::now();
    let bank = prepare_channels(cfg, variants.iter().any(|v| v.uses_cdg()))?;
    let setup = started.elapsed().as_secs_f64();
    variants
        .iter()
        .map(|&v| {
            let mut r = run_variant(cfg, v, &bank)?;
            r.wall_clock_s += setup;
            Ok(r)
        })
        .collect()
}

/// Run the variant selected by the config's ablation flags.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunRecord> {
    let v = Variant::from_ablations(&cfg.ablations);
    Ok(run_variants(cfg, &[v])?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.channel.n_r = 2;
        c.channel.n_t = 2;
        c.channel.users = 1;
        c.channel.train_len = 40;
        c.channel.eval_len = 4;
        c.mimo.d = 2;
        c.cdg.epochs = 1;
        c.cdfc.epochs = 1;
        c.dataset.n_classes = 4;
        c.dataset.captions_per_class = 5;
        c
    }

    #[test]
    fn grid_cardinality() {
        let r = run_experiment(&tiny()).unwrap();
        assert_eq!(r.metrics.len(), 18);
        assert_eq!(r.filter.len(), 3);
        assert_eq!(r.config_hash, tiny().hash());
    }

    #[test]
    fn payload_is_deterministic() {
        let mut c = tiny();
        c.sweep.seeds = vec![4];
        let a = run_experiment(&c).unwrap();
        let b = run_experiment(&c).unwrap();
        assert_eq!(a.payload(), b.payload());
    }

    #[test]
    fn baseline_bypasses_everything() {
        let mut c = tiny();
        c.ablations = AblationSection {
            disable_sdg: true,
            disable_cdg: true,
        };
        c.sweep.seeds = vec![0];
        let r = run_experiment(&c).unwrap();
        assert_eq!(r.variant, Variant::Baseline);
        assert!(r.cdg_losses.is_empty());
        assert!(r.losses.iter().all(|l| l.accept_rate == 0.0 && l.fallback_rate == 0.0));
        let bank = prepare_channels(&c, false).unwrap();
        assert!(bank.links.iter().all(|l| l.predicted.is_none()));
        assert!(bank.contexts(&c, true).is_err());
        assert!((r.metrics[0].nmse - bank.nmse(false, None).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn ablation_flags_map_to_variants() {
        for v in Variant::ALL {
            let a = AblationSection {
                disable_sdg: !v.uses_sdg(),
                disable_cdg: !v.uses_cdg(),
            };
            assert_eq!(Variant::from_ablations(&a), v);
        }
    }

    #[test]
    fn stale_csi_lags_by_t_pre() {
        let c = tiny();
        let traces = user_traces(&c).unwrap();
        let bank = prepare_channels(&c, false).unwrap();
        for l in &bank.links {
            assert_eq!(&l.stale, traces[0].1.get(l.t - c.cdg.t_pre).unwrap());
            assert_eq!(&l.h, traces[0].1.get(l.t).unwrap());
        }
    }
}
