use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sclmkb::cdg::{save_checkpoint, train_cdg};
use sclmkb::harness::output::{render_rows, LOSS_HEADER};
use sclmkb::harness::run::{cdg_config, cdg_training_set, user_traces, LossRow};
use sclmkb::harness::{
    emit_results, prepare_channels, run_variants, save_csi, train_replicate, ExperimentConfig, OutputFormat, Variant,
};
use sclmkb::{Error, Result};

#[derive(Parser)]
#[command(name = "sclmkb", version, about = "MIMO semantic-communication simulator with an LLM knowledge base")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment config; defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config's root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, default_value = "jsonl")]
    format: String,
}

#[derive(Subcommand)]
enum Command {
    /// Generate per-user channel traces as CSIF1 files.
    GenCsi,
    /// Train the CSI predictor and save a checkpoint.
    TrainCdg,
    /// Train the codec of the first sweep seed and write its losses.
    TrainCdfc,
    /// Evaluate the configured variant on the first sweep seed.
    Eval,
    /// Evaluate the configured variant over every sweep seed.
    Sweep,
    /// Evaluate all four ablation variants over every sweep seed.
    Ablate,
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, text)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let format: OutputFormat = cli.format.parse()?;
    let cfg = load(cli)?;
    std::fs::create_dir_all(&cli.out)?;
    match cli.command {
        Command::GenCsi => {
            for (u, (_, trace)) in user_traces(&cfg)?.iter().enumerate() {
                let path = cli.out.join(format!("user{u}.csif"));
                save_csi(trace, &path)?;
                eprintln!("wrote {}", path.display());
            }
        }
        Command::TrainCdg => {
            let traces = user_traces(&cfg)?;
            let data = cdg_training_set(&cfg, &traces)?;
            let (model, history) = train_cdg(&data, &cdg_config(&cfg))?;
            let path = cli.out.join("cdg.ckpt");
            save_checkpoint(&model, &path)?;
            eprintln!("wrote {}", path.display());
            let header = ["epoch", "total", "ce", "nmse"];
            write(
                &cli.out.join(format!("cdg_losses.{}", format.extension())),
                render_rows(&header, &history, format)?,
            )?;
        }
        Command::TrainCdfc => {
            let variant = Variant::from_ablations(&cfg.ablations);
            let bank = prepare_channels(&cfg, variant.uses_cdg())?;
            let contexts = bank.contexts(&cfg, variant.uses_cdg())?;
            let rep = *cfg.sweep.seeds.first().ok_or_else(|| Error::InvalidConfig("sweep.seeds is empty".into()))?;
            let trained = train_replicate(&cfg, variant, &contexts, rep)?;
            let rows: Vec<LossRow> = trained
                .history
                .iter()
                .map(|h| LossRow {
                    variant,
                    seed: rep,
                    epoch: h.epoch,
                    loss: h.loss,
                    accept_rate: h.accept_rate,
                    fallback_rate: h.fallback_rate,
                })
                .collect();
            write(
                &cli.out.join(format!("losses.{}", format.extension())),
                render_rows(LOSS_HEADER, &rows, format)?,
            )?;
        }
        Command::Eval | Command::Sweep | Command::Ablate => {
            let mut cfg = cfg;
            if matches!(cli.command, Command::Eval) {
                cfg.sweep.seeds.truncate(1);
            }
            let variants = match cli.command {
                Command::Ablate => Variant::ALL.to_vec(),
                _ => vec![Variant::from_ablations(&cfg.ablations)],
            };
            let records = run_variants(&cfg, &variants)?;
            emit_results(&records, format, &cli.out)?;
            eprintln!("wrote results to {}", cli.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidConfig(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
