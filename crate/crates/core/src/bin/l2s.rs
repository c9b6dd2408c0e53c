use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use l2s::bench::{self, BenchParams};
use l2s::bridge::{FusionMode, HybridBundle, PromptTuned, TokenizerMode};
use l2s::decoding::{speculative_generate, speculative_generate_hybrid, GenerationParams, SpecDecParams, SpecDecStats, Strategy};
use l2s::experiments::{self, AblationRow, QualitySetup};
use l2s::metrics::{score_all, write_metric_rows, Tokenization};
use l2s::model::{Arch, Checkpoint, ModelConfig, PlainModel, Role};
use l2s::tasks::{read_jsonl, write_task, Example, TaskKind, TaskSpec};
use l2s::tokenizer::Vocab;
use l2s::train::{generate_labels, train, write_loss_trace, LabelChoice, TrainConfig, TrainMode, Trainee};

/// Hybrid large-encoder / small-decoder models on synthetic tasks.
#[derive(Parser)]
#[command(name = "l2s", version)]
struct Cli {
    /// Seed for task generation, initialization, batching and sampling.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// JSON file with optional `task`, `model`, `train`, `generation`,
    /// `bench` and `quality` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write train.jsonl and test.jsonl for a synthetic task.
    Data(DataArgs),
    /// Train a model, bundle or soft prompt.
    Train(TrainArgs),
    /// Decode every prompt of a JSONL file.
    Generate(GenerateArgs),
    /// Score hypotheses against references.
    Eval(EvalArgs),
    /// Time one model at a fixed prompt and generation length.
    Bench(BenchArgs),
    /// Time several models over a range of generation lengths.
    Sweep(SweepArgs),
    /// Speculative decoding with a draft model or bundle.
    Specdec(SpecdecArgs),
    /// Layer-truncation, extraction-layer, fusion and PEFT grids.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct DataArgs {
    #[arg(long, value_parser = parse_enum::<TaskKind>)]
    task: Option<TaskKind>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
}

#[derive(Args)]
struct ModelFlags {
    #[arg(long, value_parser = parse_enum::<Arch>)]
    arch: Option<Arch>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    vocab: Option<usize>,
    #[arg(long)]
    max_seq_len: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training JSONL.
    #[arg(long)]
    data: PathBuf,
    /// Output checkpoint file, or directory for bundles and soft prompts.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_enum::<TrainMode>)]
    mode: Option<TrainMode>,
    /// Frozen large model (hybrid modes, generated labels).
    #[arg(long)]
    llm: Option<PathBuf>,
    /// Starting small model; freshly initialized when absent.
    #[arg(long)]
    slm: Option<PathBuf>,
    /// Role recorded in a freshly initialized plain model.
    #[arg(long, value_parser = parse_enum::<Role>, default_value = "slm")]
    role: Role,
    #[command(flatten)]
    model: ModelFlags,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_parser = parse_enum::<LabelChoice>)]
    labels: Option<LabelChoice>,
    #[arg(long, value_parser = parse_enum::<FusionMode>, default_value = "add")]
    fusion: FusionMode,
    #[arg(long, value_parser = parse_enum::<TokenizerMode>, default_value = "llm_shared")]
    tokenizer: TokenizerMode,
    #[arg(long)]
    extraction_layer: Option<usize>,
    #[arg(long)]
    prompt_len: Option<usize>,
    /// Loss trace CSV.
    #[arg(long)]
    loss: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeFlags {
    #[arg(long, value_parser = parse_enum::<Strategy>)]
    strategy: Option<Strategy>,
    #[arg(long)]
    max_new_tokens: Option<usize>,
    #[arg(long)]
    beam_width: Option<usize>,
    #[arg(long)]
    length_penalty: Option<f64>,
    #[arg(long)]
    top_p: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    decode: DecodeFlags,
}

#[derive(Args)]
struct EvalArgs {
    /// Hypotheses: text lines, or JSONL with an `output` field.
    #[arg(long)]
    hyp: PathBuf,
    /// References: text lines, or JSONL with a `target` field.
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_enum::<Tokenization>, default_value = "words")]
    tokenization: Tokenization,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value = "eval")]
    config_id: String,
}

#[derive(Args)]
struct BenchFlags {
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    id: Option<String>,
    #[command(flatten)]
    bench: BenchFlags,
}

#[derive(Args)]
struct SweepArgs {
    /// Models to time; repeat the flag for several.
    #[arg(long, required = true)]
    model: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "25,50,100,200,400")]
    ns: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    bench: BenchFlags,
}

#[derive(Args)]
struct SpecdecArgs {
    /// Target model; defaults to the large model of a bundle draft.
    #[arg(long)]
    target: Option<PathBuf>,
    /// Draft checkpoint or bundle.
    #[arg(long)]
    draft: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    gamma: usize,
    #[command(flatten)]
    decode: DecodeFlags,
}

#[derive(Args)]
struct AblateArgs {
    /// Kept depths of the small model.
    #[arg(long, value_delimiter = ',')]
    truncate: Vec<usize>,
    /// Extraction layers of a decoder-only large model.
    #[arg(long, value_delimiter = ',')]
    extraction_layer: Vec<usize>,
    /// Depth of the decoder-only large model for the extraction grid.
    #[arg(long, default_value_t = 4)]
    llm_layers: usize,
    /// Fusion modes to compare.
    #[arg(long, value_delimiter = ',', value_parser = parse_enum::<FusionMode>)]
    fusion: Vec<FusionMode>,
    /// Projector-only training against prompt tuning.
    #[arg(long)]
    peft: bool,
    /// Small model to truncate; freshly initialized when absent.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Trained large model for the fusion and PEFT grids; trained on the
    /// task when absent.
    #[arg(long)]
    llm: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    task: Option<TaskSpec>,
    model: Option<ModelConfig>,
    train: Option<TrainConfig>,
    generation: Option<GenerationParams>,
    bench: Option<BenchParams>,
    quality: Option<QualitySetup>,
}

/// A mistake in how the tool was called; exits with status 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(Usage(msg.into()))
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn existing(p: &Path) -> Result<&Path> {
    if p.exists() {
        Ok(p)
    } else {
        Err(usage(format!("no such file: {}", p.display())))
    }
}

fn create_parent(p: &Path) -> Result<()> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn writer(p: &Path) -> Result<BufWriter<File>> {
    create_parent(p)?;
    Ok(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?))
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(existing(p)?)?;
            serde_json::from_str(&text).map_err(|e| usage(format!("bad config {}: {e}", p.display())))
        }
    }
}

fn load_trainee(p: &Path) -> Result<Trainee> {
    Ok(Trainee::load(existing(p)?)?)
}

fn load_checkpoint(p: &Path) -> Result<Checkpoint> {
    match load_trainee(p)? {
        Trainee::Model(ck) => Ok(ck),
        _ => Err(usage(format!("{} is not a plain checkpoint", p.display()))),
    }
}

fn read_examples(p: &Path) -> Result<Vec<Example>> {
    Ok(read_jsonl(existing(p)?)?)
}

fn model_config(base: Option<ModelConfig>, f: &ModelFlags) -> ModelConfig {
    let mut c = base.unwrap_or_else(|| ModelConfig::new(Arch::DecoderOnly, 32, 2, 2, 67, 160));
    c.arch = f.arch.unwrap_or(c.arch);
    if let Some(d) = f.d_model {
        c.d_model = d;
        c.d_ff = 4 * d;
    }
    c.n_layers = f.layers.unwrap_or(c.n_layers);
    c.n_heads = f.heads.unwrap_or(c.n_heads);
    c.vocab_size = f.vocab.unwrap_or(c.vocab_size);
    c.max_seq_len = f.max_seq_len.unwrap_or(c.max_seq_len);
    c
}

fn generation(base: Option<GenerationParams>, f: &DecodeFlags, seed: u64) -> GenerationParams {
    let mut g = base.unwrap_or_else(|| GenerationParams::greedy(32));
    g.strategy = f.strategy.unwrap_or(g.strategy);
    g.max_new_tokens = f.max_new_tokens.unwrap_or(g.max_new_tokens);
    g.beam_width = f.beam_width.unwrap_or(g.beam_width);
    g.length_penalty = f.length_penalty.unwrap_or(g.length_penalty);
    g.top_p = f.top_p.unwrap_or(g.top_p);
    g.temperature = f.temperature.unwrap_or(g.temperature);
    g.seed = seed;
    g
}

fn bench_params(base: Option<BenchParams>, f: &BenchFlags) -> BenchParams {
    let b = base.unwrap_or_default();
    BenchParams {
        m: f.m.unwrap_or(b.m),
        n: f.n.unwrap_or(b.n),
        reps: f.reps.unwrap_or(b.reps),
        warmup: f.warmup.unwrap_or(b.warmup),
    }
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.display().to_string())
}

fn cmd_data(cfg: FileConfig, seed: u64, a: DataArgs) -> Result<()> {
    let mut spec = cfg.task.unwrap_or_default();
    spec.kind = a.task.unwrap_or(spec.kind);
    spec.train_size = a.train_size.unwrap_or(spec.train_size);
    spec.test_size = a.test_size.unwrap_or(spec.test_size);
    spec.seed = seed;
    write_task(&spec, &a.out)?;
    println!("wrote {} and {}", a.out.join("train.jsonl").display(), a.out.join("test.jsonl").display());
    Ok(())
}

fn cmd_train(cfg: FileConfig, seed: u64, a: TrainArgs) -> Result<()> {
    let mut tc = cfg.train.unwrap_or_default();
    tc.seed = seed;
    tc.mode = a.mode.unwrap_or(tc.mode);
    tc.total_steps = a.steps.unwrap_or(tc.total_steps);
    tc.lr_base = a.lr.unwrap_or(tc.lr_base);
    tc.label_source = a.labels.unwrap_or(tc.label_source);
    tc.prompt_len = a.prompt_len.unwrap_or(tc.prompt_len);
    let mut data = read_examples(&a.data)?;
    let llm = a.llm.as_deref().map(load_checkpoint).transpose()?;
    if tc.label_source == LabelChoice::LlmGenerated {
        let llm = llm.as_ref().ok_or_else(|| usage("--labels llm_generated needs --llm"))?;
        let g = generation(cfg.generation, &DecodeFlags::none(), seed);
        data = generate_labels(llm, &data, &g)?;
    }
    let fresh = |role: Role| -> Result<Checkpoint> { Ok(Checkpoint::init(model_config(cfg.model.clone(), &a.model), role, seed)?) };
    let slm = || -> Result<Checkpoint> {
        match &a.slm {
            Some(p) => load_checkpoint(p),
            None => fresh(Role::Slm),
        }
    };
    let mut trainee = match tc.mode {
        TrainMode::SlmBaseline => match &a.slm {
            Some(p) => Trainee::Model(load_checkpoint(p)?),
            None => Trainee::Model(fresh(a.role)?),
        },
        TrainMode::Llm2slmFull | TrainMode::ProjectorOnly => {
            let llm = llm.ok_or_else(|| usage("hybrid modes need --llm"))?;
            Trainee::Hybrid(HybridBundle::new(llm, slm()?, a.fusion, a.tokenizer, a.extraction_layer, seed)?)
        }
        TrainMode::PromptTuningBaseline => {
            let p = a.slm.as_deref().ok_or_else(|| usage("prompt tuning needs --slm"))?;
            Trainee::PromptTuned(PromptTuned::new(load_checkpoint(p)?, tc.prompt_len, seed)?)
        }
    };
    let trace = train(&mut trainee, &data, &tc)?;
    create_parent(&a.out)?;
    trainee.save(&a.out)?;
    if let Some(p) = &a.loss {
        write_loss_trace(&trace, writer(p)?)?;
    }
    match trace.last() {
        Some(r) => println!("trained {} steps, final loss {:.4}; saved {}", trace.len(), r.loss, a.out.display()),
        None => println!("no steps requested; saved {}", a.out.display()),
    }
    Ok(())
}

impl DecodeFlags {
    fn none() -> Self {
        Self {
            strategy: None,
            max_new_tokens: None,
            beam_width: None,
            length_penalty: None,
            top_p: None,
            temperature: None,
        }
    }
}

#[derive(Serialize)]
struct Prediction<'a> {
    prompt: &'a str,
    output: &'a str,
    target: &'a str,
}

fn cmd_generate(cfg: FileConfig, seed: u64, a: GenerateArgs) -> Result<()> {
    let model = load_trainee(&a.model)?;
    let data = read_examples(&a.input)?;
    let g = generation(cfg.generation, &a.decode, seed);
    let outs = model.predict(&data, &g)?;
    let mut w = writer(&a.out)?;
    for (e, o) in data.iter().zip(&outs) {
        serde_json::to_writer(
            &mut w,
            &Prediction {
                prompt: &e.prompt,
                output: o,
                target: &e.target,
            },
        )?;
        writeln!(w)?;
    }
    w.flush()?;
    println!("wrote {} predictions to {}", outs.len(), a.out.display());
    Ok(())
}

/// Lines of a text file, or one field of each record of a JSONL file.
fn read_texts(p: &Path, field: &str) -> Result<Vec<String>> {
    let f = File::open(existing(p)?)?;
    let jsonl = p.extension().is_some_and(|e| e == "jsonl");
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        if !jsonl {
            out.push(line);
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(&line)?;
        let s = v
            .get(field)
            .or_else(|| v.get("target"))
            .and_then(|x| x.as_str())
            .ok_or_else(|| anyhow!("{}: record without `{field}`", p.display()))?;
        out.push(s.to_string());
    }
    Ok(out)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let hyps = read_texts(&a.hyp, "output")?;
    let refs = read_texts(&a.reference, "target")?;
    if hyps.len() != refs.len() {
        bail!("{} hypotheses against {} references", hyps.len(), refs.len());
    }
    let rows = score_all(&hyps, &refs, a.tokenization, &a.split, &a.config_id)?;
    write_metric_rows(&rows, writer(&a.out)?)?;
    for r in &rows {
        println!("{} {:.4}", r.metric, r.value);
    }
    Ok(())
}

fn cmd_bench(cfg: FileConfig, a: BenchArgs) -> Result<()> {
    let model = load_trainee(&a.model)?;
    let p = bench_params(cfg.bench, &a.bench);
    let id = a.id.unwrap_or_else(|| stem(&a.model));
    let rec = model.bench_target()?.measure(&id, &p)?;
    bench::write_records(std::slice::from_ref(&rec), writer(&a.out)?)?;
    println!(
        "{}: {:.4} ms/token, {} FLOPs{}",
        rec.config_id,
        rec.ms_per_token,
        rec.flops_total,
        if rec.warning { " (unstable timing)" } else { "" }
    );
    Ok(())
}

fn cmd_sweep(cfg: FileConfig, a: SweepArgs) -> Result<()> {
    let models = a.model.iter().map(|p| load_trainee(p)).collect::<Result<Vec<_>>>()?;
    let ids: Vec<String> = a.model.iter().map(|p| stem(p)).collect();
    let targets = ids
        .iter()
        .zip(&models)
        .map(|(id, m)| Ok((id.as_str(), m.bench_target()?)))
        .collect::<Result<Vec<_>>>()?;
    let p = bench_params(cfg.bench, &a.bench);
    let recs = bench::sweep(&targets, &a.ns, &p)?;
    bench::write_records(&recs, writer(&a.out)?)?;
    for (x, y) in bench::wall_clock_inversions(&recs) {
        eprintln!("note: {x} costs more FLOPs than {y} but ran faster");
    }
    println!("wrote {} records to {}", recs.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct SpecRecord<'a> {
    prompt: &'a str,
    output: String,
    target_calls: usize,
    accepted: usize,
    proposed: usize,
}

#[derive(Serialize)]
struct SpecSummary {
    prompts: usize,
    gamma: usize,
    tokens: usize,
    target_calls: usize,
    acceptance_rate: f64,
}

fn cmd_specdec(cfg: FileConfig, seed: u64, a: SpecdecArgs) -> Result<()> {
    let draft = load_trainee(&a.draft)?;
    let data = read_examples(&a.input)?;
    let g = generation(cfg.generation, &a.decode, seed);
    let spec = SpecDecParams { gamma: a.gamma };
    let target = a.target.as_deref().map(load_checkpoint).transpose()?;
    let vocab = match (&target, &draft) {
        (Some(t), _) => Vocab::for_size(t.model_config()?.vocab_size)?,
        (None, d) => d.input_vocab()?,
    };
    let mut total = SpecDecStats::default();
    let mut tokens = 0;
    let mut w = writer(&a.out)?;
    for e in &data {
        let ids = vocab.encode(e.prompt.as_bytes(), false)?;
        let out = match (&target, &draft) {
            (None, Trainee::Hybrid(b)) => speculative_generate_hybrid(b, &ids, &spec, &g)?,
            (Some(t), Trainee::Model(d)) => speculative_generate(&PlainModel::new(t)?, &PlainModel::new(d)?, &ids, &spec, &g)?,
            (Some(_), Trainee::Hybrid(_)) => return Err(usage("a bundle draft verifies against its own large model; drop --target")),
            (None, Trainee::Model(_)) => return Err(usage("a plain draft needs --target")),
            (_, Trainee::PromptTuned(_)) => return Err(usage("prompt-tuned drafts are not supported")),
        };
        let s = out.stats;
        total.target_calls += s.target_calls;
        total.draft_calls += s.draft_calls;
        total.proposed += s.proposed;
        total.accepted += s.accepted;
        tokens += out.tokens.len();
        let text = String::from_utf8_lossy(&vocab.decode_until_eos(&out.tokens)?).into_owned();
        serde_json::to_writer(
            &mut w,
            &SpecRecord {
                prompt: &e.prompt,
                output: text,
                target_calls: s.target_calls,
                accepted: s.accepted,
                proposed: s.proposed,
            },
        )?;
        writeln!(w)?;
    }
    w.flush()?;
    let summary = SpecSummary {
        prompts: data.len(),
        gamma: a.gamma,
        tokens,
        target_calls: total.target_calls,
        acceptance_rate: total.acceptance_rate(),
    };
    serde_json::to_writer(io::stdout().lock(), &summary)?;
    println!();
    Ok(())
}

fn cmd_ablate(cfg: FileConfig, seed: u64, a: AblateArgs) -> Result<()> {
    if a.truncate.is_empty() && a.extraction_layer.is_empty() && a.fusion.is_empty() && !a.peft {
        return Err(usage("choose at least one of --truncate, --extraction-layer, --fusion, --peft"));
    }
    let mut setup = cfg.quality.unwrap_or_default();
    setup.train.total_steps = a.steps.unwrap_or(setup.train.total_steps);
    let mut rows: Vec<AblationRow> = Vec::new();
    if !a.truncate.is_empty() {
        let slm = match &a.model {
            Some(p) => load_checkpoint(p)?,
            None => {
                let depth = a.truncate.iter().copied().max().unwrap_or(1);
                Checkpoint::init(
                    ModelConfig {
                        n_layers: depth,
                        ..setup.slm.clone()
                    },
                    Role::Slm,
                    seed,
                )?
            }
        };
        rows.extend(experiments::truncation_sweep(&setup, seed, &slm, &a.truncate)?);
    }
    if !a.extraction_layer.is_empty() {
        let llm = ModelConfig {
            arch: Arch::DecoderOnly,
            n_layers: a.llm_layers,
            ..setup.llm.clone()
        };
        rows.extend(experiments::extraction_sweep(&setup, seed, &llm, &a.extraction_layer)?);
    }
    if !a.fusion.is_empty() || a.peft {
        let llm = match &a.llm {
            Some(p) => load_checkpoint(p)?,
            None => {
                let (train_set, test) = setup.data(seed)?;
                setup.reference_llm(seed, &train_set, &test)?.0
            }
        };
        if !a.fusion.is_empty() {
            let all = experiments::fusion_comparison(&setup, seed, &llm)?;
            rows.extend(all.into_iter().filter(|r| {
                a.fusion.iter().any(|f| {
                    r.config_id
                        == format!(
                            "fusion_{}",
                            serde_json::to_value(f).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
                        )
                })
            }));
        }
        if a.peft {
            let frozen = experiments::pretrained_slm(&setup, seed)?;
            rows.extend(experiments::peft_comparison(&setup, seed, &llm, &frozen)?);
        }
    }
    let mut w = csv::Writer::from_writer(writer(&a.out)?);
    for r in &rows {
        w.serialize(r)?;
        println!("{} exact_match {:.1} bleu {:.2}", r.config_id, r.exact_match, r.bleu);
    }
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.cmd {
        Cmd::Data(a) => cmd_data(cfg, cli.seed, a),
        Cmd::Train(a) => cmd_train(cfg, cli.seed, a),
        Cmd::Generate(a) => cmd_generate(cfg, cli.seed, a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Bench(a) => cmd_bench(cfg, a),
        Cmd::Sweep(a) => cmd_sweep(cfg, a),
        Cmd::Specdec(a) => cmd_specdec(cfg, cli.seed, a),
        Cmd::Ablate(a) => cmd_ablate(cfg, cli.seed, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
