use std::path::PathBuf;

use anyhow::Result;
use attncorr_core::metrics::KlDirection;
use attncorr_core::{Aggregator, CaptionMode, Split, SupervisionMode};
use clap::{Args, Parser, Subcommand};

use crate::commands::{eval_attention, eval_captions, gen_data, train_run, CHECKPOINT_FILE};
use crate::config::RunConfig;
use crate::report::{report, RunInput};

#[derive(Debug, Parser)]
#[command(name = "attncorr", version, about = "Attention-correctness experiments on a synthetic captioning world")]
pub struct Cli {
    /// TOML run config; flags override its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset.
    GenData(GenDataArgs),
    /// Train a captioner on the train split.
    Train(TrainArgs),
    /// Score attention correctness on a split.
    EvalAttention(EvalAttentionArgs),
    /// Generate captions on a split and score BLEU.
    EvalCaptions(EvalCaptionsArgs),
    /// Combine evaluated runs into comparison tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Dataset directory (default: `dataset` from the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dataset seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub val: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub grid_side: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// none, strong or weak.
    #[arg(long)]
    pub supervision: Option<SupervisionMode>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub embed: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalTarget {
    /// Checkpoint file (default: `<output>/model.ckpt`).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<Split>,
    #[arg(long)]
    pub max_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalAttentionArgs {
    #[command(flatten)]
    pub target: EvalTarget,
    /// gt or generated.
    #[arg(long)]
    pub caption_mode: Option<CaptionMode>,
    /// max or mean.
    #[arg(long)]
    pub aggregator: Option<Aggregator>,
    /// beta-alpha or alpha-beta.
    #[arg(long)]
    pub kl_direction: Option<KlDirection>,
    /// Number of images whose attention maps are dumped as PGM.
    #[arg(long)]
    pub pgm_images: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalCaptionsArgs {
    #[command(flatten)]
    pub target: EvalTarget,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Evaluated run directory, as NAME=DIR or DIR; repeat per model.
    #[arg(long = "run", required = true)]
    pub runs: Vec<RunInput>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub bins: Option<usize>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl EvalTarget {
    fn apply(&self, cfg: &mut RunConfig) -> PathBuf {
        set(&mut cfg.dataset, self.data.clone());
        set(&mut cfg.output, self.out.clone());
        set(&mut cfg.eval.split, self.split);
        set(&mut cfg.eval.max_len, self.max_len);
        self.checkpoint.clone().unwrap_or_else(|| cfg.output.join(CHECKPOINT_FILE))
    }
}

/// Runs one parsed command, printing a short summary to stdout.
pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::GenData(a) => {
            let w = &mut cfg.world;
            set(&mut w.seed, a.seed);
            set(&mut w.train, a.train);
            set(&mut w.val, a.val);
            set(&mut w.test, a.test);
            set(&mut w.noise, a.noise);
            set(&mut w.grid_side, a.grid_side);
            set(&mut cfg.dataset, a.out);
            cfg.validate()?;
            let s = gen_data(&cfg.world, &cfg.dataset)?;
            println!(
                "wrote {}: train {} / val {} / test {} samples, {} channels on a {}x{} grid",
                cfg.dataset.display(),
                s.counts[0],
                s.counts[1],
                s.counts[2],
                s.channels,
                s.grid_side,
                s.grid_side
            );
        }
        Command::Train(a) => {
            set(&mut cfg.dataset, a.data);
            set(&mut cfg.output, a.out);
            set(&mut cfg.seed, a.seed);
            set(&mut cfg.model.hidden, a.hidden);
            set(&mut cfg.model.embed, a.embed);
            let t = &mut cfg.train;
            set(&mut t.supervision, a.supervision);
            set(&mut t.lambda, a.lambda);
            set(&mut t.epochs, a.epochs);
            set(&mut t.lr, a.lr);
            set(&mut t.dropout, a.dropout);
            let out = train_run(&cfg)?;
            if let Some(last) = out.log.epochs.last() {
                println!(
                    "trained {} epochs ({}): caption loss {:.4}, attention loss {:.4}",
                    out.log.epochs.len(),
                    cfg.train.supervision,
                    last.caption_loss,
                    last.attention_loss
                );
            }
            if let Some(w) = out.weak_stats {
                println!(
                    "weak targets: {} present, {} uniform, {} absent, {} words without embeddings",
                    w.present, w.uniform, w.absent, w.missing_words
                );
            }
            println!("checkpoint: {}", out.checkpoint.display());
        }
        Command::EvalAttention(a) => {
            let ckpt = a.target.apply(&mut cfg);
            set(&mut cfg.eval.caption_mode, a.caption_mode);
            set(&mut cfg.eval.aggregator, a.aggregator);
            set(&mut cfg.eval.kl_direction, a.kl_direction);
            set(&mut cfg.eval.pgm_images, a.pgm_images);
            cfg.validate()?;
            let s = eval_attention(&ckpt, &cfg.dataset, &cfg.output, &cfg.eval)?;
            println!(
                "{} captions, {} phrases over {} images: AC {:.4}, baseline {:.4}, improvement {:+.4}",
                s.caption_mode, s.records, s.images, s.mean_ac, s.mean_baseline, s.mean_improvement
            );
        }
        Command::EvalCaptions(a) => {
            let ckpt = a.target.apply(&mut cfg);
            cfg.validate()?;
            let b = eval_captions(&ckpt, &cfg.dataset, &cfg.output, cfg.eval.split, cfg.eval.max_len)?;
            println!(
                "BLEU-1 {:.4}  BLEU-2 {:.4}  BLEU-3 {:.4}  BLEU-4 {:.4}",
                b[0], b[1], b[2], b[3]
            );
        }
        Command::Report(a) => {
            let bins = a.bins.unwrap_or(cfg.eval.histogram_bins);
            anyhow::ensure!(bins > 0, "--bins must be positive");
            let rep = report(&a.runs, &a.out, bins)?;
            for row in &rep.table1 {
                println!(
                    "{:<12} {:<9} AC {:.4}  baseline {:.4}  ({} phrases)",
                    row.model, row.caption_mode, row.mean_ac, row.mean_baseline, row.records
                );
            }
            println!("tables written to {}", a.out.display());
        }
    }
    Ok(())
}
