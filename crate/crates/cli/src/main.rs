use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use uralic_probe::corpus::{extract_morph_instances, parse_conllu_bytes, parse_wikiann_named, Treebank};
use uralic_probe::dataset::{
    enumerate_tasks, fold_diacritics, probing_records, sample_probing_split, sample_tagging_split, tagging_records,
    to_jsonl, from_jsonl, Split, SplitConfig, TaggingTask,
};
use uralic_probe::embstore::{LayerMode, Pooling};
use uralic_probe::nn::{paired_t_test, read_checkpoint};
use uralic_probe::runner::{
    emit_report, evaluate_checkpoint, paired_scores, run_probing_experiment, run_tagging_experiment,
    EmbeddingIndex, ExperimentConfig, ResultRow, TaskKind,
};
use uralic_probe::tokenize::{load_vocab, strip_diacritics, tokenizer_stats, stats_csv, Markers, StatsRow, VocabKind};
use uralic_probe::Error;

#[derive(Parser)]
#[command(name = "uralic-probe", version, about = "Tokenizer diagnostics and probing classifiers for Uralic languages")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenizer statistics over a word type list.
    Stats(StatsArgs),
    /// Build probing or tagging datasets as JSON lines.
    Sample(SampleArgs),
    /// Train morphological probes, one per task in the dataset.
    TrainProbe(TrainArgs),
    /// Train a POS or NER tagger.
    TrainTagger(TaggerArgs),
    /// Score a saved checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Paired t-test between two result files.
    Ttest(TtestArgs),
    /// CSV and markdown tables from result files.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TokenizerArg {
    Wordpiece,
    Sp,
}

impl From<TokenizerArg> for VocabKind {
    fn from(t: TokenizerArg) -> Self {
        match t {
            TokenizerArg::Wordpiece => VocabKind::WordPiece,
            TokenizerArg::Sp => VocabKind::SentencePieceLike,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PoolArg {
    First,
    Last,
}

impl From<PoolArg> for Pooling {
    fn from(p: PoolArg) -> Self {
        match p {
            PoolArg::First => Pooling::First,
            PoolArg::Last => Pooling::Last,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LayersArg {
    Mix,
    Top,
}

impl From<LayersArg> for LayerMode {
    fn from(l: LayersArg) -> Self {
        match l {
            LayersArg::Mix => LayerMode::Mix,
            LayersArg::Top => LayerMode::Top,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SampleTask {
    Morph,
    Pos,
    Ner,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaggerTask {
    Pos,
    Ner,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Dev,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Dev => Split::Dev,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args)]
struct StatsArgs {
    /// Vocabulary file, one piece per line (first tab-separated column).
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, value_enum, default_value = "wordpiece")]
    tokenizer: TokenizerArg,
    /// Word types, one per line; `.conllu` files contribute their forms.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    strip_diacritics: bool,
    #[arg(long, default_value = "")]
    model: String,
    #[arg(long, default_value = "")]
    language: String,
    /// Continuation marker (WordPiece).
    #[arg(long)]
    continuation: Option<String>,
    /// Word-initial marker (SentencePiece-like).
    #[arg(long)]
    word_begin: Option<String>,
    #[arg(long)]
    unk: Option<String>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long, value_enum)]
    task: SampleTask,
    /// CoNLL-U treebank (morph, pos) or two-column NER file (ner).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    language: String,
    /// Output JSON lines file.
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    strip_diacritics: bool,
    /// Minimum distinct target forms per retained label.
    #[arg(long, default_value_t = 1)]
    min_per_label: usize,
    /// Restrict morph sampling to one task, e.g. `Case/NOUN`.
    #[arg(long)]
    only: Option<String>,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    dev_size: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    max_imbalance: Option<usize>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON experiment config; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long = "data")]
    datasets: Vec<PathBuf>,
    #[arg(long)]
    language: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long, value_enum)]
    pool: Option<PoolArg>,
    #[arg(long, value_enum)]
    layers: Option<LayersArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    strip_diacritics: bool,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Append result rows as JSON lines to this file.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
}

#[derive(Args)]
struct TaggerArgs {
    #[arg(long, value_enum)]
    task: Option<TaggerTask>,
    #[command(flatten)]
    exp: ExperimentArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long = "data", required = true)]
    datasets: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
}

#[derive(Args)]
struct TtestArgs {
    /// Result rows (JSON lines) of the first system.
    a: PathBuf,
    /// Result rows of the second system.
    b: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(required = true)]
    results: Vec<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    markdown: Option<PathBuf>,
}

fn read_text(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_rows(path: &Path) -> anyhow::Result<Vec<ResultRow>> {
    Ok(from_jsonl(&read_text(path)?)?)
}

fn stats(args: StatsArgs) -> anyhow::Result<()> {
    let kind = VocabKind::from(args.tokenizer);
    let mut markers = Markers::for_kind(kind);
    if let Some(c) = args.continuation {
        markers.continuation = c;
    }
    if let Some(w) = args.word_begin {
        markers.word_begin = w;
    }
    if let Some(u) = args.unk {
        markers.unk = u;
    }
    let vocab = load_vocab(&args.vocab, kind, markers)?;

    let mut types = Vec::new();
    for path in &args.inputs {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        if path.extension().is_some_and(|e| e == "conllu") {
            let sentences = parse_conllu_bytes(&path.display().to_string(), &bytes)?;
            types.extend(Treebank::new(args.language.clone(), sentences).word_types());
        } else {
            let text = std::str::from_utf8(&bytes).map_err(Error::from)?;
            types.extend(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from));
        }
    }
    if args.strip_diacritics {
        types = types.iter().map(|t| strip_diacritics(t)).collect();
    }
    let stats = tokenizer_stats(&vocab, &types)?;
    let row = StatsRow {
        model: args.model,
        language: args.language,
        vocab_size: vocab.len(),
        stats,
    };
    print!("{}", stats_csv(&[row]));
    Ok(())
}

fn sample(args: SampleArgs) -> anyhow::Result<()> {
    let defaults = SplitConfig::default();
    let cfg = SplitConfig {
        train_size: args.train_size.unwrap_or(defaults.train_size),
        dev_size: args.dev_size.unwrap_or(defaults.dev_size),
        test_size: args.test_size.unwrap_or(defaults.test_size),
        max_imbalance: args.max_imbalance.unwrap_or(defaults.max_imbalance),
        seed: args.seed,
    };
    let bytes = fs::read(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let source = args.input.display().to_string();
    let sentences = match args.task {
        SampleTask::Ner => {
            let text = std::str::from_utf8(&bytes).map_err(Error::from)?;
            parse_wikiann_named(&source, text)?
        }
        SampleTask::Morph | SampleTask::Pos => parse_conllu_bytes(&source, &bytes)?,
    };
    let mut tb = Treebank::new(args.language, sentences);
    if args.strip_diacritics {
        fold_diacritics(&mut tb);
    }

    let jsonl = match args.task {
        SampleTask::Morph => {
            let mut specs = enumerate_tasks(&tb, args.min_per_label, &cfg);
            if let Some(only) = &args.only {
                specs.retain(|s| &s.id() == only);
                if specs.is_empty() {
                    return Err(Error::Infeasible(format!("task {only} cannot be built from this treebank")).into());
                }
            }
            if specs.is_empty() {
                return Err(Error::Infeasible("no probing task can be built from this treebank".into()).into());
            }
            let mut records = Vec::new();
            for spec in &specs {
                let instances = extract_morph_instances(&tb, &spec.feature, &spec.upos);
                let ds = sample_probing_split(&instances, spec, &cfg)?;
                info!("{}: labels {:?}", spec.id(), spec.label_set);
                records.extend(probing_records(&ds, &tb)?);
            }
            info!("{} tasks, {} instances", specs.len(), records.len());
            to_jsonl(&records)?
        }
        SampleTask::Pos | SampleTask::Ner => {
            let task = if matches!(args.task, SampleTask::Pos) { TaggingTask::Pos } else { TaggingTask::Ner };
            let ds = sample_tagging_split(&tb.sentences, task, &cfg)?;
            info!("{} train, {} dev, {} test sentences", ds.train.len(), ds.dev.len(), ds.test.len());
            to_jsonl(&tagging_records(&ds))?
        }
    };
    fs::write(&args.output, jsonl).with_context(|| format!("writing {}", args.output.display()))?;
    Ok(())
}

fn experiment_config(task: Option<TaskKind>, exp: &ExperimentArgs) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &exp.config {
        Some(path) => ExperimentConfig::from_json_file(path)?,
        None => {
            let Some(task) = task else { bail!("--task or --config is required") };
            let Some(embeddings) = &exp.embeddings else { bail!("--embeddings or --config is required") };
            ExperimentConfig::new(task, "", embeddings.clone(), Vec::new())
        }
    };
    if let Some(task) = task {
        cfg.task = task;
    }
    if let Some(e) = &exp.embeddings {
        cfg.embeddings = e.clone();
    }
    if !exp.datasets.is_empty() {
        cfg.datasets = exp.datasets.clone();
    }
    if cfg.datasets.is_empty() {
        bail!("no dataset given (--data or config)");
    }
    if let Some(l) = &exp.language {
        cfg.language = l.clone();
    }
    if let Some(m) = &exp.model {
        cfg.model = m.clone();
    }
    if let Some(p) = exp.pool {
        cfg.pooling = Some(p.into());
    }
    if let Some(l) = exp.layers {
        cfg.layers = Some(l.into());
    }
    if let Some(s) = exp.seed {
        cfg.train.seed = s;
    }
    if let Some(n) = exp.max_epochs {
        cfg.train.max_epochs = n;
    }
    if let Some(n) = exp.patience {
        cfg.train.patience = n;
    }
    if let Some(n) = exp.batch_size {
        cfg.train.batch_size = n;
    }
    if exp.strip_diacritics {
        cfg.strip_diacritics = true;
    }
    if let Some(d) = &exp.checkpoint_dir {
        cfg.checkpoint_dir = Some(d.clone());
    }
    Ok(cfg)
}

fn emit_rows(rows: &[ResultRow], output: Option<&Path>) -> anyhow::Result<()> {
    for r in rows {
        println!(
            "{}\t{}\t{}\t{}={:.4}\tbaseline={:.4}\tepochs={}",
            r.language, r.model, r.task, r.metric, r.value, r.majority_baseline, r.epochs
        );
    }
    if let Some(path) = output {
        use std::io::Write;
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .with_context(|| format!("opening {}", path.display()))?;
        f.write_all(to_jsonl(rows)?.as_bytes())?;
    }
    Ok(())
}

fn train_probe(args: TrainArgs) -> anyhow::Result<()> {
    let task = if args.exp.config.is_none() { Some(TaskKind::MorphProbe) } else { None };
    let cfg = experiment_config(task, &args.exp)?;
    let rows = run_probing_experiment(&cfg)?;
    emit_rows(&rows, args.exp.output.as_deref())
}

fn train_tagger(args: TaggerArgs) -> anyhow::Result<()> {
    let task = args.task.map(|t| match t {
        TaggerTask::Pos => TaskKind::Pos,
        TaggerTask::Ner => TaskKind::Ner,
    });
    let cfg = experiment_config(task, &args.exp)?;
    let row = run_tagging_experiment(&cfg)?;
    emit_rows(&[row], args.exp.output.as_deref())
}

fn eval(args: EvalArgs) -> anyhow::Result<()> {
    let file = fs::File::open(&args.checkpoint).with_context(|| format!("opening {}", args.checkpoint.display()))?;
    let (header, model) = read_checkpoint(BufReader::new(file))?;
    let index = EmbeddingIndex::load(&args.embeddings)?;
    let (metric, value) = evaluate_checkpoint(&header, &model, &index, &args.datasets, args.split.into())?;
    println!("{metric}\t{value:.6}");
    Ok(())
}

fn ttest(args: TtestArgs) -> anyhow::Result<()> {
    let (keys, a, b) = paired_scores(&read_rows(&args.a)?, &read_rows(&args.b)?);
    if keys.len() < 2 {
        bail!("need at least two tasks present in both files, found {}", keys.len());
    }
    let t = paired_t_test(&a, &b)?;
    let mean = a.iter().zip(&b).map(|(x, y)| x - y).sum::<f64>() / keys.len() as f64;
    println!("pairs\t{}\nmean_diff\t{mean:.6}\nt\t{:.6}\ndf\t{}\np\t{:.6}", keys.len(), t.t, t.df, t.p);
    Ok(())
}

fn report(args: ReportArgs) -> anyhow::Result<()> {
    let mut rows = Vec::new();
    for path in &args.results {
        rows.extend(read_rows(path)?);
    }
    let report = emit_report(&rows);
    match &args.csv {
        Some(path) => fs::write(path, &report.csv)?,
        None => print!("{}", report.csv),
    }
    match &args.markdown {
        Some(path) => fs::write(path, &report.markdown)?,
        None => print!("\n{}", report.markdown),
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Infeasible(_)) => 2,
        Some(e) if e.is_format() || matches!(e, Error::MissingSentences(_)) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Stats(a) => stats(a),
        Command::Sample(a) => sample(a),
        Command::TrainProbe(a) => train_probe(a),
        Command::TrainTagger(a) => train_tagger(a),
        Command::Eval(a) => eval(a),
        Command::Ttest(a) => ttest(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
