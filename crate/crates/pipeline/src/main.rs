use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eet_pipeline::commands::{
    eval_cmd, generate_cmd, serve_cmd, synth_data, train_cmd, Base, EngineArgs, EvalArgs, GenerateArgs, ServeArgs,
};
use eet_pipeline::eval::EvalSource;

#[derive(Parser)]
#[command(name = "eet", version, about = "Emotion-editable talking-face diffusion on a synthetic face")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ModelArgs {
    /// Checkpoint file; the dictionary and face model default to files beside it.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dictionary: Option<PathBuf>,
    /// Must match the config stored in the checkpoint (eval: only [metrics] and eval_seed are used).
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ModelArgs {
    fn engine(&self) -> EngineArgs {
        EngineArgs { checkpoint: self.checkpoint.clone(), dictionary: self.dictionary.clone(), config: self.config.clone() }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    SynthData {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides synth.seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Train the classifier, dictionary and diffusion model.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Overrides the training seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Sample an edited animation and export meshes and parameters.
    Generate {
        #[command(flatten)]
        model: ModelArgs,
        /// Start from this class's centroid.
        #[arg(long, conflicts_with = "embedding", required_unless_present = "embedding")]
        label: Option<String>,
        /// Start from the embedding in this JSON file.
        #[arg(long)]
        embedding: Option<PathBuf>,
        /// `k:alpha` along the class normal or `i>j:alpha` along a pairwise normal; repeatable.
        #[arg(long = "edit", allow_hyphen_values = true)]
        edits: Vec<String>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        deterministic: bool,
        #[arg(long, default_value_t = 0)]
        identity: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Score the validation split and print the report as JSON.
    Eval {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        data: PathBuf,
        /// Overrides eval_seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Score the ground truth against itself.
        #[arg(long, conflicts_with = "untrained")]
        ground_truth: bool,
        /// Score a freshly initialised model.
        #[arg(long)]
        untrained: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Serve the HTTP API.
    Serve {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Seed for generate requests that omit one.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
    },
}

/// Prints a line, ignoring a closed stdout.
fn emit(text: &impl std::fmt::Display) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout(), "{text}");
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::SynthData { config, seed, out, force } => {
            let m = synth_data(config.as_deref(), seed, &out, force)?;
            emit(&serde_json::json!({ "out": out, "samples": m.samples.len() }));
        }
        Command::Train { config, data, seed, out, force } => {
            let run = train_cmd(config.as_deref(), &data, seed, &out, force)?;
            let last = run.epochs().last().copied();
            emit(&serde_json::json!({
                "out": out,
                "epochs": run.epochs().count(),
                "final_val_recon": last.map(|e| e.val_recon)
            }));
        }
        Command::Generate { model, label, embedding, edits, frames, seed, deterministic, identity, out, force } => {
            let base = match (label, embedding) {
                (Some(l), _) => Base::Label(l),
                (None, Some(e)) => Base::EmbeddingFile(e),
                (None, None) => anyhow::bail!("give --label or --embedding"),
            };
            let args = GenerateArgs { engine: model.engine(), base, edits, frames, seed, deterministic, identity, out, force };
            let f = generate_cmd(&args)?;
            emit(&serde_json::json!({ "out": args.out, "frames": f.frames, "embedding": f.embedding }));
        }
        Command::Eval { model, data, seed, ground_truth, untrained, out, force } => {
            let source = match (ground_truth, untrained) {
                (true, _) => EvalSource::GroundTruth,
                (_, true) => EvalSource::Untrained,
                _ => EvalSource::Model,
            };
            let report = eval_cmd(&EvalArgs { engine: model.engine(), data, seed, source, out, force })?;
            emit(&serde_json::to_string_pretty(&report)?);
        }
        Command::Serve { model, metrics, seed, bind } => {
            serve_cmd(&ServeArgs { engine: model.engine(), metrics, seed, bind })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EET_LOG_LEVEL", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
