use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

/// Multimodal emotion and sentiment recognition: data preparation,
/// training, evaluation, ablations and embedding plots.
#[derive(Parser, Debug)]
#[command(name = "merclip", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Configuration layering shared by every run-producing command. Layers are
/// applied in order: preset, task defaults, `--config` files, `--set`.
#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// Base preset (`tiny` or `full`).
    #[arg(long, default_value = "tiny")]
    pub preset: String,
    /// Task whose training defaults to apply (`emotion` or `sentiment`).
    #[arg(long)]
    pub task: Option<String>,
    /// Dataset tag whose training defaults to apply (`mosei` or `mosi`).
    #[arg(long)]
    pub dataset: Option<String>,
    /// TOML file merged over the preset; repeatable, later files win.
    #[arg(long = "config", value_name = "FILE")]
    pub configs: Vec<PathBuf>,
    /// Single-key override such as `cmd.order=VLA`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert raw media listed in the manifest into sample containers.
    Preprocess {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Generate a synthetic corpus of this many samples into `--out`
        /// instead of reading the configured manifest.
        #[arg(long, value_name = "N")]
        synthetic: Option<usize>,
    },
    /// Train a model; the selected checkpoint is written to `<out>/best`.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Run directory (defaults to `out_dir` from the configuration).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint with the configuration stored in it.
    Eval {
        /// Checkpoint directory, or a run directory containing `best/`.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Report directory (defaults to `eval-<split>` beside the checkpoint).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate every cell of an ablation grid.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        /// `orders` (fusion orders) or `components` (decoder / label encoder).
        #[arg(long)]
        grid: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export per-sample embeddings of a checkpoint.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        /// `modality` (one file per encoder) or `fused`.
        #[arg(long)]
        stage: String,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
        /// Also render a t-SNE scatter plot next to each file.
        #[arg(long)]
        plot: bool,
    },
    /// Project an embedding file to 2-D with t-SNE and render it as SVG.
    Plot {
        /// Embedding TSV written by `embed`.
        #[arg(long)]
        input: PathBuf,
        /// SVG path (defaults to the input path with an `.svg` extension).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 30.0)]
        perplexity: f64,
        #[arg(long, default_value_t = 500)]
        iterations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the built-in oracle and invariant checks.
    Selftest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Preprocess { config, out, synthetic } => commands::preprocess(&config, &out, synthetic),
        Command::Train { config, out } => commands::train(&config, out),
        Command::Eval { checkpoint, split, out } => commands::eval(&checkpoint, &split, out),
        Command::Ablate { config, grid, out } => commands::ablate(&config, &grid, out),
        Command::Embed {
            checkpoint,
            stage,
            split,
            out,
            plot,
        } => commands::embed(&checkpoint, &stage, &split, &out, plot),
        Command::Plot {
            input,
            out,
            perplexity,
            iterations,
            seed,
        } => commands::plot(&input, out, perplexity, iterations, seed),
        Command::Selftest => commands::selftest(),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            ExitCode::FAILURE
        }
    }
}

/// The error chain on one line, skipping causes already quoted by their
/// parent message.
fn one_line(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg.replace('\n', " ")
}
