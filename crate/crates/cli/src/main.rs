use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use emgf::data::{label_counts, load_dataset, write_dataset, AspectInstance};
use emgf::fusion::ChannelSet;
use emgf::model::{Emgf, PreparedInstance};
use emgf::preprocess::{anchor_scores, build_triplets, DualViewGraph};
use emgf::synth::{self, SynthOptions};
use emgf::tensor::{grad_check, GradCheckOptions, Tape};
use emgf::train::{checkpoint, evaluate, resolve_config, train, EvalReport, TrainConfig, TrainOptions};
use emgf::EmgfError;

/// Aspect-level sentiment classification with multi-granularity graph fusion.
#[derive(Debug, Parser)]
#[command(name = "emgf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a dataset, drop unusable records and report label counts.
    Prepare(PrepareArgs),
    /// Train a model and write a metrics log and the best checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients of the full model.
    Gradcheck(GradcheckArgs),
    /// Dump per-instance anchor scores, anchors and triplet sets.
    Anchors(AnchorsArgs),
    /// Generate a synthetic dataset with planted aspect-opinion structure.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct PrepareArgs {
    /// Input dataset (JSON lines).
    #[arg(long)]
    data: PathBuf,
    /// Where to write the cleaned dataset.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Configuration sources shared by several subcommands. Flags override the
/// config file, which overrides the preset.
#[derive(Debug, Args)]
struct ConfigArgs {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Starting point before the config file: default, synthetic, laptop,
    /// restaurant, twitter or mams.
    #[arg(long, default_value = "default")]
    preset: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Weight of the triplet loss.
    #[arg(long)]
    beta: Option<f64>,
    /// Triplet margin.
    #[arg(long)]
    margin: Option<f64>,
    /// Anchor count constant `c`.
    #[arg(long = "c")]
    anchor_c: Option<f64>,
    /// Token feature width.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    dep_layers: Option<usize>,
    #[arg(long)]
    con_layers: Option<usize>,
    #[arg(long)]
    sem_layers: Option<usize>,
    /// Number of fusion blocks.
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    factor_dim: Option<usize>,
    /// Comma-separated subset of dep,con,sem,kge, or "all".
    #[arg(long)]
    channels: Option<ChannelSet>,
    /// Embedding table: one token followed by its floats per line.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> emgf::Result<TrainConfig> {
        let mut c = match &self.config {
            Some(path) => {
                let base = TrainConfig::preset(&self.preset)?;
                let text =
                    std::fs::read_to_string(path).map_err(|e| EmgfError::Config(format!("{}: {e}", path.display())))?;
                merge_toml(&base, &text).map_err(|e| EmgfError::Config(format!("{}: {e}", path.display())))?
            }
            None => TrainConfig::preset(&self.preset)?,
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = &self.$flag { c.$($field).+ = v.clone().into(); })*
            };
        }
        set! {
            seed => seed,
            epochs => epochs,
            lr => lr,
            batch_size => batch_size,
            dropout => dropout,
            beta => beta,
            margin => preprocess.margin,
            anchor_c => preprocess.anchor_c,
            dim => model.dim,
            heads => model.heads,
            dep_layers => model.dep_layers,
            con_layers => model.con_layers,
            sem_layers => model.sem_layers,
            blocks => fusion.blocks,
            factor_dim => fusion.factor_dim,
            channels => fusion.channels,
            embeddings => model.embedding_table,
        }
        c.validate()?;
        Ok(c)
    }
}

/// Overlays the keys present in `text` on `base`.
fn merge_toml(base: &TrainConfig, text: &str) -> Result<TrainConfig, String> {
    let overlay: toml::Table = text.parse().map_err(|e: toml::de::Error| e.message().to_string())?;
    let mut merged: toml::Table = toml::Table::try_from(base).map_err(|e| e.to_string())?;
    for (key, value) in overlay {
        match (merged.get_mut(&key), value) {
            (Some(toml::Value::Table(dst)), toml::Value::Table(src)) => dst.extend(src),
            (_, value) => {
                merged.insert(key, value);
            }
        }
    }
    TrainConfig::from_toml(&merged.to_string()).map_err(|e| match e {
        EmgfError::Config(msg) => msg,
        other => other.to_string(),
    })
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Training data (JSON lines).
    #[arg(long)]
    data: PathBuf,
    /// Held-out data scored after each epoch; the training data is used when omitted.
    #[arg(long)]
    eval: Option<PathBuf>,
    /// Metrics log path (tab-separated, one line per epoch).
    #[arg(long, default_value = "metrics.tsv")]
    metrics: PathBuf,
    /// Best-by-macro-F1 checkpoint path.
    #[arg(long, default_value = "model.ckpt")]
    checkpoint: PathBuf,
    /// Run this many seeds (seed, seed+1, ...) and average the final reports.
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    /// Write the resolved config here.
    #[arg(long)]
    save_config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Check on this dataset's first instance instead of the built-in one.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnchorsArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    data: PathBuf,
    /// Score with a trained model instead of a freshly initialized one.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Only the first N instances.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 64)]
    instances: usize,
    #[arg(long, default_value_t = 50)]
    vocab: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Omit knowledge vectors.
    #[arg(long)]
    no_kge: bool,
    /// Probability of a second, contrasting clause.
    #[arg(long, default_value_t = 0.8)]
    two_clause_prob: f64,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<EmgfError> for Failure {
    fn from(e: EmgfError) -> Self {
        if e.is_numeric_error() {
            Failure::Numeric(e.to_string())
        } else if e.is_data_error() {
            Failure::Data(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Prepare(a) => prepare(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Anchors(a) => anchors(a),
        Command::Synth(a) => run_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn load(path: &Path) -> Result<Vec<AspectInstance>, Failure> {
    let data = load_dataset(path)?;
    if data.is_empty() {
        return Err(Failure::Data(format!("{}: no usable instances", path.display())));
    }
    Ok(data)
}

fn prepare(a: PrepareArgs) -> CmdResult {
    let data = load(&a.data)?;
    let [pos, neu, neg] = label_counts(&data);
    let kge = data.iter().filter(|i| i.kge().is_some()).count();
    let max_len = data.iter().map(|i| i.len()).max().unwrap_or(0);
    let max_height = data.iter().map(|i| i.tree().height()).max().unwrap_or(0);
    println!("instances\t{}", data.len());
    println!("positive\t{pos}\nneutral\t{neu}\nnegative\t{neg}");
    println!("with_kge\t{kge}");
    println!("max_tokens\t{max_len}");
    println!("max_tree_height\t{max_height}");
    if let Some(out) = a.out {
        write_dataset(&out, &data)?;
        println!("wrote\t{}", out.display());
    }
    Ok(())
}

fn repeat_path(path: &Path, repeat: usize, repeats: usize) -> PathBuf {
    if repeats == 1 {
        return path.to_path_buf();
    }
    let mut name = path.as_os_str().to_owned();
    name.push(format!(".r{repeat}"));
    name.into()
}

fn run_train(a: TrainArgs) -> CmdResult {
    let config = a.config.resolve()?;
    if a.repeats == 0 {
        return Err(Failure::Usage("--repeats must be positive".into()));
    }
    let data = load(&a.data)?;
    let eval = a.eval.as_deref().map(load).transpose()?;
    if let Some(path) = &a.save_config {
        std::fs::write(path, resolve_config(&config, &data).to_toml())
            .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    }

    let mut reports = Vec::with_capacity(a.repeats);
    for r in 0..a.repeats {
        let mut c = config.clone();
        c.seed = config.seed.wrapping_add(r as u64);
        let metrics = repeat_path(&a.metrics, r, a.repeats);
        let ckpt = repeat_path(&a.checkpoint, r, a.repeats);
        let opts = TrainOptions {
            eval: eval.as_deref(),
            metrics_log: Some(metrics.clone()),
            checkpoint: Some(ckpt.clone()),
        };
        let out = train(&c, &data, &opts)?;
        let best = &out.epochs[out.best_epoch - 1];
        println!(
            "seed {}: best epoch {} accuracy {:.4} macro_f1 {:.4} (metrics {}, checkpoint {})",
            c.seed,
            out.best_epoch,
            best.eval.accuracy,
            best.eval.macro_f1,
            metrics.display(),
            ckpt.display()
        );
        reports.push(best.eval.clone());
    }
    if a.repeats > 1 {
        println!("mean over {} runs", a.repeats);
    }
    print!("{}", EvalReport::average(&reports)?);
    Ok(())
}

fn run_eval(a: EvalArgs) -> CmdResult {
    let model = checkpoint::load(&a.checkpoint)?;
    let data = load(&a.data)?;
    let report = evaluate(&model, &data)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        print!("{report}");
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> CmdResult {
    let mut config = a.config.resolve()?;
    let inst = match &a.data {
        Some(path) => load(path)?.swap_remove(0),
        None => synth::gradcheck_instance(true),
    };
    if config.model.kge_dim.is_none() {
        config.model.kge_dim = inst.kge_width();
    }
    let model = Emgf::new(config.arch(), config.seed)?;
    let prep = model.net.prepare(inst)?;
    let beta = config.beta;
    let opts = GradCheckOptions {
        eps: a.eps,
        tol: a.tol,
        ..GradCheckOptions::default()
    };
    let report = grad_check(
        &model.params,
        |store, tape| Ok(model.net.batch_loss(tape, store, &[&prep], beta, None)?.total),
        opts,
        |_| true,
    )?;
    println!("{:<12}{:>14}  worst parameter", "group", "max_rel_err");
    for (group, worst) in report.by_group() {
        println!("{group:<12}{:>14.3e}  {}", worst.max_rel_error, worst.name);
    }
    let silent: Vec<&str> = report
        .params
        .iter()
        .filter(|p| p.grad_max_abs == 0.0)
        .map(|p| p.name.as_str())
        .collect();
    if !silent.is_empty() {
        println!("zero gradient: {}", silent.join(", "));
    }
    let failures: Vec<String> = report
        .failures()
        .map(|p| {
            format!(
                "{}[{}]: analytic {:.6e} numeric {:.6e} (rel {:.3e})",
                p.name, p.worst_index, p.analytic, p.numeric, p.max_rel_error
            )
        })
        .collect();
    if failures.is_empty() {
        println!("PASS: max relative error {:.3e} < {:e}", report.max_rel_error(), a.tol);
        Ok(())
    } else {
        for f in &failures {
            println!("FAIL {f}");
        }
        Err(Failure::Numeric(format!("{} parameter(s) exceed tolerance {:e}", failures.len(), a.tol)))
    }
}

fn anchors(a: AnchorsArgs) -> CmdResult {
    let data = load(&a.data)?;
    let model = match &a.checkpoint {
        Some(path) => {
            let mut m = checkpoint::load(path)?;
            // anchor sizing and margin may be overridden at inspection time
            let c = a.config.resolve()?;
            if c.preprocess != m.net.arch().preprocess {
                let mut arch = m.net.arch().clone();
                arch.preprocess = c.preprocess;
                let params = m.params.clone();
                m = Emgf::new(arch, 0)?;
                m.params = params;
            }
            m
        }
        None => {
            let c = resolve_config(&a.config.resolve()?, &data);
            Emgf::new(c.arch(), c.seed)?
        }
    };
    let limit = a.limit.unwrap_or(data.len());
    for (idx, inst) in data.into_iter().take(limit).enumerate() {
        let prep = model.net.prepare(inst)?;
        dump_anchors(idx, &model, &prep)?;
    }
    Ok(())
}

fn dump_anchors(idx: usize, model: &Emgf, prep: &PreparedInstance) -> emgf::Result<()> {
    let mut tape = Tape::new();
    let (a_sem, anchors) = model.net.anchors(&mut tape, &model.params, prep)?;
    let scores = anchor_scores(tape.value(a_sem));
    let graph = DualViewGraph::new(prep.con.finest().clone(), prep.dep.clone())?;
    let set = build_triplets(&graph, &anchors, model.net.arch().preprocess.margin);
    let inst = &prep.instance;
    println!("# instance {idx}: {}", inst.tokens().join(" "));
    println!("n {}  k {}  anchors {:?}", inst.len(), anchors.len(), anchors);
    let cells: Vec<String> = inst
        .tokens()
        .iter()
        .zip(&scores)
        .map(|(t, s)| format!("{t}={s:.4}"))
        .collect();
    println!("scores {}", cells.join(" "));
    let fmt = |slots: &[emgf::preprocess::Slot]| {
        slots.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" ")
    };
    for t in &set.triplets {
        println!("{}\tpos {}\tneg {}", t.anchor, fmt(&t.pos), fmt(&t.neg));
    }
    println!();
    Ok(())
}

fn run_synth(a: SynthArgs) -> CmdResult {
    let opts = SynthOptions {
        instances: a.instances,
        vocab: a.vocab,
        seed: a.seed,
        with_kge: !a.no_kge,
        two_clause_prob: a.two_clause_prob,
    };
    let data = synth::write(&opts, &a.out)?;
    let [pos, neu, neg] = label_counts(&data);
    println!(
        "wrote {} instances ({pos} positive, {neu} neutral, {neg} negative) to {}; lexicon at {}",
        data.len(),
        a.out.display(),
        synth::lexicon_path(&a.out).display()
    );
    Ok(())
}
