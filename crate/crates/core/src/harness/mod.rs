//! Experiment configuration, synthetic data, runs and result files.

pub mod config;
pub mod csif;
pub mod dataset;
pub mod output;
pub mod run;

pub use config::{
    AblationSection, CdfcSection, ChannelSection, DatasetSection, ExperimentConfig, MimoSection, SdgSection,
    SweepSection,
};
pub use csif::{decode_csi, encode_csi, load_csi, save_csi};
pub use dataset::{synth_dataset, Caption, Corpus};
pub use output::{emit_results, mean_over_seeds, plot_data, OutputFormat};
pub use run::{
    prepare_channels, run_experiment, run_variants, train_replicate, ChannelBank, MetricRow, RunRecord, Variant,
};
