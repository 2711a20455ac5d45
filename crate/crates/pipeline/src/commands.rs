//! The CLI subcommands as library functions.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use eet_core::synthdata::{gen_dataset, load_dataset, save_dataset, DatasetManifest};
use serde::{Deserialize, Serialize};

use crate::artifacts::{
    prepare_out_dir, FileRef, RunArtifacts, ARTIFACTS_FILE, CHECKPOINT_FILE, CONFIG_FILE, DICTIONARY_FILE, FACE_FILE,
    LOG_FILE, METRICS_FILE,
};
use crate::config::PipelineConfig;
use crate::engine::{EditSpec, Engine, GenerateRequest};
use crate::eval::{evaluate_split, untrained_model, EvalReport, EvalSource};
use crate::server::{serve, ServerState};
use crate::train::{train, TrainedRun};

pub const MESH_STEM: &str = "mesh";
pub const PARAMS_FILE: &str = "params.json";

fn load_config(path: Option<&Path>) -> Result<Option<PipelineConfig>> {
    path.map(PipelineConfig::load).transpose()
}

pub fn synth_data(config: Option<&Path>, seed: Option<u64>, out: &Path, force: bool) -> Result<DatasetManifest> {
    let mut cfg = load_config(config)?.unwrap_or_default();
    if let Some(s) = seed {
        cfg.synth.seed = s;
    }
    cfg.validate()?;
    prepare_out_dir(out, force)?;
    let face = cfg.face_model()?;
    let ds = gen_dataset(&cfg.synth, &face)?;
    let manifest = save_dataset(out, &ds, &face)?;
    log::info!("wrote {} samples to {}", manifest.samples.len(), out.display());
    Ok(manifest)
}

/// Without `--config` the defaults are used with the dataset's own generation settings.
pub fn train_cmd(config: Option<&Path>, data: &Path, seed: Option<u64>, out: &Path, force: bool) -> Result<TrainedRun> {
    let (ds, face) = load_dataset(data).with_context(|| format!("loading dataset {}", data.display()))?;
    let mut cfg = match load_config(config)? {
        Some(c) => c,
        None => PipelineConfig { synth: ds.config.clone(), ..Default::default() },
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    crate::train::check_consistency(&cfg, &ds, &face)?;
    prepare_out_dir(out, force)?;

    let run = train(&cfg, &ds, &face)?;
    std::fs::create_dir_all(out)?;
    run.checkpoint.save(out.join(CHECKPOINT_FILE))?;
    run.dictionary.save(out.join(DICTIONARY_FILE))?;
    face.save(out.join(FACE_FILE))?;
    std::fs::write(out.join(LOG_FILE), run.log_jsonl()?)?;
    std::fs::write(out.join(CONFIG_FILE), cfg.to_toml()?)?;
    if out.join(METRICS_FILE).exists() {
        std::fs::remove_file(out.join(METRICS_FILE))?;
    }
    RunArtifacts {
        checkpoint: FileRef::of(out, CHECKPOINT_FILE)?,
        dictionary: FileRef::of(out, DICTIONARY_FILE)?,
        face_model: FileRef::of(out, FACE_FILE)?,
        log: FileRef::of(out, LOG_FILE)?,
        metrics: None,
        config_sha256: cfg.digest()?,
    }
    .save(out)?;
    Ok(run)
}

#[derive(Debug, Clone, Default)]
pub struct EngineArgs {
    pub checkpoint: PathBuf,
    pub dictionary: Option<PathBuf>,
    pub config: Option<PathBuf>,
}

/// Loads the engine; a `--config`, when given, must be the configuration the checkpoint was trained with.
pub fn load_engine(args: &EngineArgs) -> Result<Engine> {
    let engine = Engine::load(&args.checkpoint, args.dictionary.as_deref(), None)?;
    if let Some(cfg) = load_config(args.config.as_deref())? {
        ensure!(
            cfg.digest()? == engine.config.digest()?,
            "config {} differs from the one stored in the checkpoint",
            args.config.as_ref().unwrap().display()
        );
    }
    Ok(engine)
}

pub enum Base {
    Label(String),
    EmbeddingFile(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub request: GenerateRequest,
    pub frames: usize,
    pub dim: usize,
    pub embedding: Vec<f64>,
    /// One row of `[β | ψ | θ]` per frame.
    pub params: Vec<Vec<f64>>,
}

pub struct GenerateArgs {
    pub engine: EngineArgs,
    pub base: Base,
    pub edits: Vec<String>,
    pub frames: Option<usize>,
    pub seed: u64,
    pub deterministic: bool,
    pub identity: usize,
    pub out: PathBuf,
    pub force: bool,
}

pub fn read_embedding_file(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading embedding {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{} is not a JSON array of numbers", path.display()))
}

/// Writes `mesh.json`, `mesh.bin` and `params.json` into `out`.
pub fn generate_cmd(args: &GenerateArgs) -> Result<ParamsFile> {
    let engine = load_engine(&args.engine)?;
    let (label, embedding) = match &args.base {
        Base::Label(l) => (Some(l.clone()), None),
        Base::EmbeddingFile(p) => (None, Some(read_embedding_file(p)?)),
    };
    let edits = args.edits.iter().map(|e| EditSpec::parse(e)).collect::<Result<Vec<_>, _>>()?;
    let req = GenerateRequest {
        label,
        embedding,
        edits,
        frames: args.frames.unwrap_or(engine.config.synth.frames),
        seed: Some(args.seed),
        deterministic: args.deterministic,
        identity: args.identity,
    };
    prepare_out_dir(&args.out, args.force)?;
    let g = engine.generate(&req)?;
    std::fs::create_dir_all(&args.out)?;
    g.mesh.export(engine.face.faces(), crate::engine::FPS, &args.out, MESH_STEM)?;
    let values = g.params.values();
    let file = ParamsFile {
        request: req,
        frames: values.rows(),
        dim: values.cols(),
        embedding: g.embedding.into_inner(),
        params: (0..values.rows()).map(|r| values.row(r).to_vec()).collect(),
    };
    std::fs::write(args.out.join(PARAMS_FILE), serde_json::to_vec_pretty(&file)?)?;
    Ok(file)
}

pub struct EvalArgs {
    pub engine: EngineArgs,
    pub data: PathBuf,
    pub seed: Option<u64>,
    pub source: EvalSource,
    pub out: Option<PathBuf>,
    pub force: bool,
}

/// Scores the validation split. A `--config` here only supplies `[metrics]` and `eval_seed`.
pub fn eval_cmd(args: &EvalArgs) -> Result<EvalReport> {
    let engine = Engine::load(&args.engine.checkpoint, args.engine.dictionary.as_deref(), None)?;
    let mut cfg = engine.config.clone();
    if let Some(c) = load_config(args.engine.config.as_deref())? {
        cfg.metrics = c.metrics;
        cfg.eval_seed = c.eval_seed;
    }
    if let Some(s) = args.seed {
        cfg.eval_seed = s;
    }
    let (ds, face) = load_dataset(&args.data).with_context(|| format!("loading dataset {}", args.data.display()))?;
    crate::train::check_consistency(&engine.config, &ds, &face)?;
    ensure!(face == engine.face, "dataset face model differs from the checkpoint's");
    if let Some(out) = &args.out {
        if out.exists() && !args.force {
            bail!("{} exists; pass --force to overwrite", out.display());
        }
    }
    let report = match args.source {
        EvalSource::Untrained => {
            let m = untrained_model(&engine.model, engine.config.seed)?;
            evaluate_split(&m, &engine.schedule, &ds, &face, &cfg.metrics, cfg.eval_seed, args.source)?
        }
        s => evaluate_split(&engine.model, &engine.schedule, &ds, &face, &cfg.metrics, cfg.eval_seed, s)?,
    };
    if let Some(out) = &args.out {
        std::fs::write(out, serde_json::to_vec_pretty(&report)?)?;
        register_metrics(&args.engine.checkpoint, out)?;
    }
    Ok(report)
}

/// Records `out` in the run's `artifacts.json` when it is the run's `metrics.json`.
fn register_metrics(checkpoint: &Path, out: &Path) -> Result<()> {
    let Some(dir) = checkpoint.parent() else { return Ok(()) };
    let same_dir = out.parent().map(|p| p.canonicalize().ok()) == Some(dir.canonicalize().ok());
    if !same_dir || out.file_name() != Some(METRICS_FILE.as_ref()) || !dir.join(ARTIFACTS_FILE).exists() {
        return Ok(());
    }
    let mut a = RunArtifacts::load(dir)?;
    a.metrics = Some(FileRef::of(dir, METRICS_FILE)?);
    a.save(dir)
}

pub struct ServeArgs {
    pub engine: EngineArgs,
    pub metrics: Option<PathBuf>,
    pub seed: u64,
    pub bind: String,
}

/// Metrics default to `metrics.json` next to the checkpoint when it exists.
pub fn server_state(args: &ServeArgs) -> Result<ServerState> {
    let mut engine = load_engine(&args.engine)?;
    engine.default_seed = args.seed;
    let metrics_path = args.metrics.clone().or_else(|| {
        let p = args.engine.checkpoint.parent()?.join(METRICS_FILE);
        p.exists().then_some(p)
    });
    let metrics = metrics_path
        .map(|p| std::fs::read(&p).with_context(|| format!("reading metrics {}", p.display())))
        .transpose()?;
    ServerState::new(engine, metrics)
}

pub fn serve_cmd(args: &ServeArgs) -> Result<()> {
    let state = Arc::new(server_state(args)?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(serve(state, &args.bind))
}
