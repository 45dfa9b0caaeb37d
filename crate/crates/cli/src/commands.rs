use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use setseq::checkpoint;
use setseq::data::{load_jsonl, ObjectiveSet, Session};
use setseq::datagen::{generate, GenConfig};
use setseq::decoder::{DecodeConfig, DEFAULT_BEAM_WIDTH, DEFAULT_EPSILON};
use setseq::encoder::{EncoderConfig, EncoderModel};
use setseq::eval::{competition_grid, epsilon_sweep, evaluate, interplay_analysis, score_sessions, EvalReport, Ranker};
use setseq::featurizer::FeatureLayout;
use setseq::model::{DnnModel, Model, DNN_DEFAULT_WIDTHS};
use setseq::trainer::{train, LabelMode, Loss, TrainConfig};

use crate::api::{self, AppState, SequenceRequest};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "setseq", version, about = "Multi-objective music session sequencing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and its manifest.
    Generate(GenerateArgs),
    /// Train a scoring model and write a checkpoint.
    Train(TrainArgs),
    /// Compare ranking methods on a dataset (CSV table).
    Eval(EvalArgs),
    /// Sequence one session and print the ranking with diagnostics.
    Sequence(SequenceArgs),
    /// Sweep the relaxation threshold and report every metric per value.
    Sweep(SweepArgs),
    /// Summarise how objectives co-occur with satisfaction.
    Analyze(AnalyzeArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

fn parse_objectives(s: &str) -> Result<ObjectiveSet, String> {
    ObjectiveSet::parse_list(s).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Args)]
pub struct DecodeArgs {
    /// Allowed relative drop in relevance, in [0, 1].
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// Beam width.
    #[arg(long, default_value_t = DEFAULT_BEAM_WIDTH)]
    pub beam: usize,
    /// Enabled objectives: `all`, `none` or a list such as `boost,exposure`.
    #[arg(long, default_value = "all", value_parser = parse_objectives)]
    pub objectives: ObjectiveSet,
}

impl DecodeArgs {
    fn config(&self) -> Result<DecodeConfig, CliError> {
        Ok(DecodeConfig::new(self.epsilon, self.beam, self.objectives)?)
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output JSONL file.
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest path; defaults to `<out>.manifest.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = GenConfig::reference().n_users)]
    pub users: usize,
    #[arg(long, default_value_t = GenConfig::reference().sessions_per_user)]
    pub sessions_per_user: usize,
    #[arg(long, default_value_t = GenConfig::reference().tracks_per_session[0])]
    pub min_tracks: usize,
    #[arg(long, default_value_t = GenConfig::reference().tracks_per_session[1])]
    pub max_tracks: usize,
    /// SAT penalty on Discovery tracks.
    #[arg(long, default_value_t = GenConfig::reference().beta_discovery)]
    pub beta_discovery: f64,
    #[arg(long, default_value_t = GenConfig::reference().seed)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Arch {
    SetEncoder,
    Dnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Labels {
    Sat,
    Moltr,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Step log as CSV.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "set-encoder")]
    pub arch: Arch,
    #[arg(long, value_enum, default_value = "sat")]
    pub labels: Labels,
    /// rmse, bce or attrank.
    #[arg(long, default_value = "bce")]
    pub loss: Loss,
    #[arg(long, default_value_t = 12_500)]
    pub steps: usize,
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    #[arg(long, default_value_t = 100)]
    pub max_len: usize,
    #[arg(long, default_value_t = 5e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lr_decay: f64,
    /// Steps at which the learning rate is multiplied by `lr_decay`.
    #[arg(long, value_delimiter = ',', default_value = "10000")]
    pub decay_at: Vec<usize>,
    #[arg(long, default_value_t = 500)]
    pub eval_every: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = EncoderConfig::default().layers)]
    pub layers: usize,
    #[arg(long, default_value_t = EncoderConfig::default().heads)]
    pub heads: usize,
    #[arg(long, default_value_t = EncoderConfig::default().inducing_points)]
    pub inducing: usize,
    #[arg(long, default_value_t = EncoderConfig::default().hidden)]
    pub hidden: usize,
    #[arg(long, default_value_t = EncoderConfig::default().ff_hidden)]
    pub ff_hidden: usize,
    /// Hidden widths of the feed-forward baseline.
    #[arg(long, value_delimiter = ',', default_values_t = DNN_DEFAULT_WIDTHS.to_vec())]
    pub dnn_widths: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Set-encoder checkpoint used by setrank, mostra and wtsum.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Methods in output order: relevance, setrank, mostra, wtsum.
    #[arg(long, value_delimiter = ',', default_value = "relevance,setrank,mostra,wtsum")]
    pub methods: Vec<String>,
    /// Extra checkpoints ranked by plain score sort, as `name=path`.
    #[arg(long = "extra")]
    pub extra: Vec<String>,
    #[command(flatten)]
    pub decode: DecodeArgs,
    /// Weight of the objective term in wtsum.
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// CSV output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Full JSON report including per-session records.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Competition grid of mostra against setrank, as JSON.
    #[arg(long)]
    pub grid: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SequenceArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub session: String,
    #[command(flatten)]
    pub decode: DecodeArgs,
    /// Include the per-step beam trace.
    #[arg(long)]
    pub explain: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,0.01,0.05,0.1,0.2")]
    pub epsilons: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_BEAM_WIDTH)]
    pub beam: usize,
    #[arg(long, default_value = "all", value_parser = parse_objectives)]
    pub objectives: ObjectiveSet,
    /// CSV output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Plot-ready JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// JSON output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Checkpoint to serve; without it, sequencing endpoints answer 503.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[command(flatten)]
    pub decode: DecodeArgs,
}

fn existing(path: &Path) -> Result<&Path, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::MissingFile(path.to_path_buf()))
    }
}

fn load_data(path: &Path) -> Result<Vec<Session>, CliError> {
    let sessions = load_jsonl(existing(path)?)?;
    tracing::info!(sessions = sessions.len(), path = %path.display(), "loaded dataset");
    Ok(sessions)
}

fn load_model(path: &Path) -> Result<Model, CliError> {
    let model = checkpoint::load(existing(path)?)?;
    tracing::info!(kind = model.kind(), path = %path.display(), "loaded checkpoint");
    Ok(model)
}

fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Io {
            path: p.to_path_buf(),
            source: e,
        }),
        None => {
            print!("{}", text);
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(v).map_err(setseq::Error::from)?;
    s.push('\n');
    Ok(s)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sequence(a) => cmd_sequence(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Serve(a) => cmd_serve(a),
    }
}

fn cmd_generate(a: GenerateArgs) -> Result<(), CliError> {
    let cfg = GenConfig {
        n_users: a.users,
        sessions_per_user: a.sessions_per_user,
        tracks_per_session: [a.min_tracks, a.max_tracks],
        beta_discovery: a.beta_discovery,
        seed: a.seed,
        ..GenConfig::reference()
    };
    let ds = generate(&cfg)?;
    fs::write(&a.out, ds.to_jsonl()?).map_err(|e| CliError::Io {
        path: a.out.clone(),
        source: e,
    })?;
    let manifest = a.manifest.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".manifest.json");
        p.into()
    });
    emit(Some(&manifest), &to_json(&ds.manifest)?)?;
    tracing::info!(sessions = ds.sessions.len(), sha256 = %ds.manifest.sha256, "dataset written");
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let sessions = load_data(&a.data)?;
    let (mode, layout) = match a.labels {
        Labels::Sat => (LabelMode::Sat, FeatureLayout::Standard),
        Labels::Moltr => (LabelMode::MoLtr, FeatureLayout::WithObjectives),
    };
    let model: Model = match a.arch {
        Arch::SetEncoder => {
            let cfg = EncoderConfig {
                layers: a.layers,
                heads: a.heads,
                inducing_points: a.inducing,
                hidden: a.hidden,
                ff_hidden: a.ff_hidden,
            };
            EncoderModel::new(cfg, layout, a.seed)?.into()
        }
        Arch::Dnn => DnnModel::new(&a.dnn_widths, layout, a.seed)?.into(),
    };
    let cfg = TrainConfig {
        loss: a.loss,
        steps: a.steps,
        batch_sessions: a.batch,
        max_len: a.max_len,
        lr: a.lr,
        lr_decay: a.lr_decay,
        decay_at: a.decay_at,
        seed: a.seed,
        eval_every: a.eval_every,
        ..TrainConfig::default()
    };
    let out = train(&sessions, &model, &cfg, mode)?;
    checkpoint::save(&a.out, &out.model)?;
    if let Some(log) = &a.log {
        emit(Some(log), &out.log_csv())?;
    }
    tracing::info!(
        best_step = out.best_step,
        best_val_ndcg5 = ?out.best_val_ndcg5,
        skipped = out.skipped,
        "training finished"
    );
    Ok(())
}

fn parse_extra(spec: &str) -> Result<(String, PathBuf), CliError> {
    match spec.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.into(), path.into())),
        _ => Err(CliError::Usage(format!("--extra expects name=path, got {:?}", spec))),
    }
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let extras: Vec<(String, PathBuf)> = a.extra.iter().map(|s| parse_extra(s)).collect::<Result<_, _>>()?;
    let sessions = load_data(&a.data)?;
    let model = a.model.as_deref().map(load_model).transpose()?;
    let cfg = a.decode.config()?;
    let scores = model.as_ref().map(|m| score_sessions(m, &sessions)).transpose()?;
    let mut report = EvalReport::default();
    let mut setrank = None;
    let mut mostra = None;
    for method in &a.methods {
        let ranker = match method.as_str() {
            "relevance" => Ranker::Relevance,
            "setrank" => Ranker::Sort,
            "mostra" => Ranker::Mostra(cfg),
            "wtsum" => Ranker::WtSum { alpha: a.alpha },
            other => return Err(CliError::Usage(format!("unknown method {:?}", other))),
        };
        if ranker.needs_scores() && scores.is_none() {
            return Err(CliError::Usage(format!("method {} needs --model", method)));
        }
        let r = evaluate(method.clone(), &ranker, &sessions, scores.as_deref())?;
        match method.as_str() {
            "setrank" => setrank = Some(r.clone()),
            "mostra" => mostra = Some(r.clone()),
            _ => {}
        }
        report.methods.push(r);
    }
    for (name, path) in extras {
        let m = load_model(&path)?;
        let s = score_sessions(&m, &sessions)?;
        report.methods.push(evaluate(name, &Ranker::Sort, &sessions, Some(&s))?);
    }
    if let Some(path) = &a.grid {
        let (Some(m), Some(r)) = (&mostra, &setrank) else {
            return Err(CliError::Usage(
                "--grid needs both mostra and setrank in --methods".into(),
            ));
        };
        emit(Some(path), &to_json(&competition_grid(m, r, &sessions)?)?)?;
    }
    if let Some(path) = &a.json {
        emit(Some(path), &to_json(&report)?)?;
    }
    emit(a.out.as_deref(), &report.to_csv())
}

fn cmd_sequence(a: SequenceArgs) -> Result<(), CliError> {
    let model = load_model(&a.model)?;
    let sessions = load_data(&a.data)?;
    let cfg = a.decode.config()?;
    let state = AppState::new(Some(model), sessions, cfg)?;
    let req = SequenceRequest {
        session_id: a.session,
        epsilon: None,
        beam_width: None,
        enabled_objectives: None,
        explain: a.explain,
    };
    let resp = api::sequence(&state, &req).map_err(CliError::Api)?;
    emit(a.out.as_deref(), &to_json(&resp)?)
}

fn cmd_sweep(a: SweepArgs) -> Result<(), CliError> {
    let model = load_model(&a.model)?;
    let sessions = load_data(&a.data)?;
    for &e in &a.epsilons {
        DecodeConfig::new(e, a.beam, a.objectives)?;
    }
    let scores = score_sessions(&model, &sessions)?;
    let report = epsilon_sweep(&sessions, &scores, &a.epsilons, a.beam, a.objectives)?;
    if let Some(path) = &a.json {
        emit(Some(path), &to_json(&report.to_plot_json())?)?;
    }
    emit(a.out.as_deref(), &report.to_csv())
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<(), CliError> {
    let sessions = load_data(&a.data)?;
    emit(a.out.as_deref(), &to_json(&interplay_analysis(&sessions)?)?)
}

fn cmd_serve(a: ServeArgs) -> Result<(), CliError> {
    let model = a.model.as_deref().map(load_model).transpose()?;
    let sessions = load_data(&a.data)?;
    let state = Arc::new(AppState::new(model, sessions, a.decode.config()?)?);
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Io {
        path: PathBuf::from("<runtime>"),
        source: e,
    })?;
    rt.block_on(async move {
        let addr = format!("{}:{}", a.host, a.port);
        let listener = tokio::net::TcpListener::bind(&addr).await.map_err(|e| CliError::Io {
            path: PathBuf::from(&addr),
            source: e,
        })?;
        tracing::info!(%addr, model_hash = ?state.model_hash(), "serving");
        axum::serve(listener, api::router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
                tracing::info!("shutting down");
            })
            .await
            .map_err(|e| CliError::Io {
                path: PathBuf::from(&addr),
                source: e,
            })
    })
}
