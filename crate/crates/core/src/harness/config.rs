use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cdfc::{FilterConfig, FusionPairing, GenerationSettings};
use crate::cdg::CdgConfig;
use crate::lmkb_core::BackendTag;
use crate::mimo_channel::ModelTag;
use crate::optim::OptimizerKind;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub model_tag: ModelTag,
    pub n_r: usize,
    pub n_t: usize,
    pub doppler_hz: f64,
    pub k_factor_db: f64,
    pub sample_interval_ms: f64,
    pub n_paths: usize,
    /// Independent users, each with its own trace and line-of-sight angle.
    pub users: usize,
    /// Samples per user used to train the CSI predictor.
    pub train_len: usize,
    /// Samples per user after the training part; each is one link instance.
    pub eval_len: usize,
    /// Stride between training windows.
    pub window_step: usize,
    /// Replace the generator with a CSIF1 trace (single user).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csi_file: Option<PathBuf>,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            model_tag: ModelTag::LosLike,
            n_r: 16,
            n_t: 16,
            doppler_hz: 50.0,
            k_factor_db: 10.0,
            sample_interval_ms: 1.0,
            n_paths: 16,
            users: 2,
            train_len: 100,
            eval_len: 32,
            window_step: 8,
            csi_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MimoSection {
    pub d: usize,
    pub equalize: bool,
    /// Total precoder feedback budget; absent means unquantised feedback.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feedback_bits: Option<u32>,
}

impl Default for MimoSection {
    fn default() -> Self {
        Self {
            d: 4,
            equalize: true,
            feedback_bits: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SdgSection {
    pub backend: BackendTag,
    pub tau: f64,
    pub max_len: usize,
    pub hallucination_rate: f64,
    pub substitution_prob: f64,
    pub reorder: bool,
    pub instruction: String,
}

impl Default for SdgSection {
    fn default() -> Self {
        let g = GenerationSettings::default();
        Self {
            backend: BackendTag::Mock,
            tau: g.tau,
            max_len: g.max_len,
            hallucination_rate: 0.2,
            substitution_prob: 0.5,
            reorder: true,
            instruction: g.instruction,
        }
    }
}

impl SdgSection {
    pub fn generation(&self) -> GenerationSettings {
        GenerationSettings {
            tau: self.tau,
            max_len: self.max_len,
            instruction: self.instruction.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CdfcSection {
    pub gamma: f64,
    pub max_retries: usize,
    pub fusion_pairing: FusionPairing,
    pub n_feat: usize,
    pub d_emb: usize,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    /// Link SNR during codec training.
    pub train_snr_db: f64,
}

impl Default for CdfcSection {
    fn default() -> Self {
        let f = FilterConfig::default();
        Self {
            gamma: f.gamma,
            max_retries: f.max_retries,
            fusion_pairing: FusionPairing::Cross,
            n_feat: 16,
            d_emb: 32,
            enc_hidden: 32,
            dec_hidden: 32,
            epochs: 30,
            lr: 0.05,
            optimizer: OptimizerKind::Sgd,
            batch_size: 16,
            train_snr_db: 10.0,
        }
    }
}

impl CdfcSection {
    pub fn filter(&self) -> FilterConfig {
        FilterConfig {
            gamma: self.gamma,
            max_retries: self.max_retries,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub snr_grid_db: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            snr_grid_db: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0],
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub n_classes: usize,
    pub captions_per_class: usize,
    pub vocab_size: usize,
    pub gallery_dim: usize,
    /// Chance that a class attribute is written in its canonical form.
    pub canonical_prob: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            n_classes: 64,
            captions_per_class: 5,
            vocab_size: 200,
            gallery_dim: 32,
            canonical_prob: 0.6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    pub disable_sdg: bool,
    pub disable_cdg: bool,
}

/// Everything a run depends on besides code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Root of every seed derivation.
    pub seed: u64,
    pub channel: ChannelSection,
    pub mimo: MimoSection,
    pub cdg: CdgConfig,
    pub sdg: SdgSection,
    pub cdfc: CdfcSection,
    pub sweep: SweepSection,
    pub dataset: DatasetSection,
    pub ablations: AblationSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            channel: ChannelSection::default(),
            mimo: MimoSection::default(),
            cdg: CdgConfig::default(),
            sdg: SdgSection::default(),
            cdfc: CdfcSection::default(),
            sweep: SweepSection::default(),
            dataset: DatasetSection::default(),
            ablations: AblationSection::default(),
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidConfig(msg()))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// SHA-256 of the canonical TOML rendering (fixed field order, shortest
    /// round-trip float formatting), hex encoded.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("config serialises");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.channel;
        check(c.n_r >= 1 && c.n_t >= 1, || "channel antenna counts must be positive".into())?;
        check(c.doppler_hz.is_finite() && c.doppler_hz >= 0.0, || "doppler_hz must be ≥ 0".into())?;
        check(!c.k_factor_db.is_nan(), || "k_factor_db must not be NaN".into())?;
        check(c.sample_interval_ms.is_finite() && c.sample_interval_ms > 0.0, || {
            "sample_interval_ms must be positive".into()
        })?;
        check(c.users >= 1, || "channel.users must be at least 1".into())?;
        check(c.window_step >= 1, || "channel.window_step must be positive".into())?;
        check(c.eval_len >= 1, || "channel.eval_len must be positive".into())?;
        let need = self.cdg.t_his + self.cdg.t_pre;
        check(c.train_len >= need, || {
            format!("channel.train_len = {} must cover t_his + t_pre = {need}", c.train_len)
        })?;
        check(c.model_tag != ModelTag::FromFile || c.csi_file.is_some(), || {
            "model_tag from_file requires channel.csi_file".into()
        })?;

        let m = &self.mimo;
        check(m.d >= 1 && m.d <= c.n_r.min(c.n_t), || {
            format!("mimo.d = {} must lie in 1..={}", m.d, c.n_r.min(c.n_t))
        })?;
        check(m.feedback_bits != Some(0), || "mimo.feedback_bits must be positive".into())?;

        self.cdg.validate()?;

        let s = &self.sdg;
        check(s.tau.is_finite() && s.tau >= 0.0, || "sdg.tau must be ≥ 0".into())?;
        check(s.max_len >= 1, || "sdg.max_len must be positive".into())?;
        check((0.0..=1.0).contains(&s.hallucination_rate), || "sdg.hallucination_rate must lie in [0, 1]".into())?;
        check((0.0..=1.0).contains(&s.substitution_prob), || "sdg.substitution_prob must lie in [0, 1]".into())?;

        let f = &self.cdfc;
        self.cdfc.filter().validate()?;
        check(f.n_feat >= 2 && f.n_feat % 2 == 0, || "cdfc.n_feat must be even and ≥ 2".into())?;
        check(f.d_emb >= 1 && f.enc_hidden >= 1 && f.dec_hidden >= 1, || "cdfc widths must be positive".into())?;
        check(f.lr.is_finite() && f.lr >= 0.0, || "cdfc.lr must be ≥ 0".into())?;
        check(f.batch_size >= 1, || "cdfc.batch_size must be positive".into())?;
        check(!f.train_snr_db.is_nan(), || "cdfc.train_snr_db must not be NaN".into())?;

        check(!self.sweep.seeds.is_empty(), || "sweep.seeds must not be empty".into())?;
        check(self.sweep.snr_grid_db.iter().all(|s| !s.is_nan()), || "sweep.snr_grid_db contains NaN".into())?;

        let d = &self.dataset;
        check(d.n_classes >= 2, || "dataset.n_classes must be at least 2".into())?;
        check(d.captions_per_class >= 1, || "dataset.captions_per_class must be positive".into())?;
        check(d.gallery_dim >= 1, || "dataset.gallery_dim must be positive".into())?;
        check((0.0..=1.0).contains(&d.canonical_prob), || "dataset.canonical_prob must lie in [0, 1]".into())?;
        Ok(())
    }
}
