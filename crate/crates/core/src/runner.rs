//! Experiment orchestration: probing and tagging runs over ULEMB01
//! embeddings, result rows and report tables.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{from_jsonl, ProbingRecord, Split, TaggingRecord, TaggingTask};
use crate::embstore::{read_embeddings_file, EmbeddingHeader, LayerMode, Pooling, SentenceEmbedding};
use crate::error::{Error, Result};
use crate::nn::{
    accuracy, predict_all, span_f1, train_with_evaluator, CheckpointHeader, Example, MlpModel, TrainConfig,
    TrainHistory,
};
use crate::rng::SplitRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    MorphProbe,
    Pos,
    Ner,
}

impl TaskKind {
    pub fn default_pooling(self) -> Pooling {
        match self {
            TaskKind::MorphProbe => Pooling::Last,
            TaskKind::Pos | TaskKind::Ner => Pooling::First,
        }
    }

    pub fn default_layers(self) -> LayerMode {
        match self {
            TaskKind::MorphProbe => LayerMode::Mix,
            TaskKind::Pos | TaskKind::Ner => LayerMode::Top,
        }
    }

    fn tagging(self) -> Option<TaggingTask> {
        match self {
            TaskKind::MorphProbe => None,
            TaskKind::Pos => Some(TaggingTask::Pos),
            TaskKind::Ner => Some(TaggingTask::Ner),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub language: String,
    /// Model name used in reports; taken from the embedding metadata when empty.
    #[serde(default)]
    pub model: String,
    pub embeddings: PathBuf,
    pub datasets: Vec<PathBuf>,
    #[serde(default)]
    pub pooling: Option<Pooling>,
    #[serde(default)]
    pub layers: Option<LayerMode>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub strip_diacritics: bool,
    /// Where to write trained models; not part of the fingerprint.
    #[serde(default, skip_serializing)]
    pub checkpoint_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(task: TaskKind, language: impl Into<String>, embeddings: impl Into<PathBuf>, datasets: Vec<PathBuf>) -> Self {
        ExperimentConfig {
            task,
            language: language.into(),
            model: String::new(),
            embeddings: embeddings.into(),
            datasets,
            pooling: None,
            layers: None,
            train: TrainConfig::default(),
            strip_diacritics: false,
            checkpoint_dir: None,
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn pooling(&self) -> Pooling {
        self.pooling.unwrap_or(self.task.default_pooling())
    }

    pub fn layer_mode(&self) -> LayerMode {
        self.layers.unwrap_or(self.task.default_layers())
    }

    /// Hex digest over the resolved configuration, seeds included.
    pub fn fingerprint(&self) -> String {
        let mut resolved = self.clone();
        resolved.pooling = Some(self.pooling());
        resolved.layers = Some(self.layer_mode());
        let json = serde_json::to_string(&resolved).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub fingerprint: String,
    pub language: String,
    pub model: String,
    pub task: String,
    /// `accuracy` or `span-f1`.
    pub metric: String,
    pub value: f64,
    /// Score of always predicting the most frequent training label.
    pub majority_baseline: f64,
    pub epochs: usize,
    pub pooling: Pooling,
    pub layers: LayerMode,
    pub timestamp: u64,
}

impl ResultRow {
    /// Equality ignoring the timestamp.
    pub fn same_result(&self, other: &ResultRow) -> bool {
        ResultRow { timestamp: 0, ..self.clone() } == ResultRow { timestamp: 0, ..other.clone() }
    }
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Embeddings indexed by dataset sentence id.
pub struct EmbeddingIndex {
    pub header: EmbeddingHeader,
    pub model: String,
    sentences: Vec<SentenceEmbedding>,
    by_id: HashMap<String, usize>,
}

impl EmbeddingIndex {
    pub fn new(header: EmbeddingHeader, sentences: Vec<SentenceEmbedding>) -> Result<Self> {
        let meta = header.meta()?;
        if meta.sentence_ids.len() != sentences.len() {
            return Err(Error::Validation(format!(
                "metadata lists {} sentence ids for {} sentences",
                meta.sentence_ids.len(),
                sentences.len()
            )));
        }
        let by_id = meta
            .sentence_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        Ok(EmbeddingIndex {
            header,
            model: meta.model,
            sentences,
            by_id,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (header, sentences) = read_embeddings_file(path)?;
        Self::new(header, sentences)
    }

    pub fn get(&self, id: &str) -> Option<&SentenceEmbedding> {
        self.by_id.get(id).map(|&i| &self.sentences[i])
    }

    /// Fails with every unknown id, or on a word-count mismatch.
    pub fn check<'a>(&self, sentences: impl IntoIterator<Item = (&'a str, usize)>) -> Result<()> {
        let mut missing = BTreeSet::new();
        for (id, words) in sentences {
            match self.get(id) {
                None => {
                    missing.insert(id.to_string());
                }
                Some(se) if se.word_count() != words => {
                    return Err(Error::Validation(format!(
                        "sentence {id} has {words} words in the dataset but {} in the embedding file",
                        se.word_count()
                    )));
                }
                Some(_) => {}
            }
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::MissingSentences(missing.into_iter().collect()))
        }
    }

    /// Feature vector of one word: the top layer, or the full layer stack
    /// when the classifier mixes layers.
    pub fn features(&self, id: &str, word: usize, pooling: Pooling, layers: LayerMode) -> Result<Vec<f32>> {
        let se = self
            .get(id)
            .ok_or_else(|| Error::MissingSentences(vec![id.to_string()]))?;
        let pos = se.position(word, pooling)?;
        Ok(match layers {
            LayerMode::Top => se.vector(se.layers() - 1, pos).to_vec(),
            LayerMode::Mix => se.layer_stack(pos),
        })
    }

    pub fn layers(&self) -> usize {
        self.header.layer_count as usize
    }

    pub fn hidden(&self) -> usize {
        self.header.hidden_size as usize
    }
}

/// Maps label strings to class indices; unseen labels map to `len()`,
/// which no prediction can equal.
#[derive(Clone, Debug)]
pub struct LabelSet {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelSet {
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a str>) -> Self {
        let labels: Vec<String> = labels
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(String::from)
            .collect();
        let index = labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        LabelSet { labels, index }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn get(&self, label: &str) -> usize {
        self.index.get(label).copied().unwrap_or(self.labels.len())
    }

    pub fn name(&self, index: usize) -> &str {
        self.labels.get(index).map_or("<unk>", String::as_str)
    }
}

fn majority(labels: &[usize], classes: usize) -> usize {
    let mut counts = vec![0usize; classes];
    for &l in labels {
        if l < classes {
            counts[l] += 1;
        }
    }
    // first index wins ties
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

/// A trained classifier with what is needed to persist it.
pub struct TrainedModel {
    pub task: String,
    pub model: MlpModel,
    pub labels: LabelSet,
    pub history: TrainHistory,
}

impl TrainedModel {
    pub fn checkpoint_header(&self, cfg: &ExperimentConfig) -> CheckpointHeader {
        CheckpointHeader {
            input_dim: self.model.input_dim,
            hidden: self.model.hidden,
            classes: self.model.classes,
            layers: self.model.mixer.as_ref().map(|m| m.layers()),
            labels: self.labels.labels().to_vec(),
            train: cfg.train.clone(),
            extra: serde_json::json!({
                "task": self.task,
                "kind": cfg.task,
                "language": cfg.language,
                "pooling": cfg.pooling(),
                "layers": cfg.layer_mode(),
                "fingerprint": cfg.fingerprint(),
            }),
        }
    }

    fn save(&self, dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
        fs::create_dir_all(dir)?;
        let name = format!("{}-{}.ckpt", cfg.fingerprint(), self.task.replace('/', "_"));
        let file = fs::File::create(dir.join(name))?;
        crate::nn::write_checkpoint(std::io::BufWriter::new(file), &self.checkpoint_header(cfg), &self.model)
    }
}

fn new_model(index: &EmbeddingIndex, classes: usize, layers: LayerMode, seed: u64) -> MlpModel {
    let mix = matches!(layers, LayerMode::Mix).then(|| index.layers());
    MlpModel::new(index.hidden(), classes, mix, &mut SplitRng::derive(seed, 0))
}

fn read_records<T: serde::de::DeserializeOwned>(paths: &[PathBuf]) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for path in paths {
        out.extend(from_jsonl(&fs::read_to_string(path)?)?);
    }
    Ok(out)
}

pub fn run_probing_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let index = EmbeddingIndex::load(&cfg.embeddings)?;
    let records: Vec<ProbingRecord> = read_records(&cfg.datasets)?;
    let (rows, models) = probe_with_index(cfg, &index, &records)?;
    if let Some(dir) = &cfg.checkpoint_dir {
        for m in &models {
            m.save(dir, cfg)?;
        }
    }
    Ok(rows)
}

/// Trains and evaluates one probe per task found in `records`.
pub fn probe_with_index(
    cfg: &ExperimentConfig,
    index: &EmbeddingIndex,
    records: &[ProbingRecord],
) -> Result<(Vec<ResultRow>, Vec<TrainedModel>)> {
    if cfg.task != TaskKind::MorphProbe {
        return Err(Error::InvalidInput("probing run needs task morph-probe".into()));
    }
    index.check(records.iter().map(|r| (r.sentence_id.as_str(), r.words.len())))?;

    let mut tasks: BTreeMap<String, Vec<&ProbingRecord>> = BTreeMap::new();
    for r in records {
        tasks.entry(r.task_id()).or_default().push(r);
    }

    let (pooling, layers) = (cfg.pooling(), cfg.layer_mode());
    let fingerprint = cfg.fingerprint();
    let model_name = if cfg.model.is_empty() { index.model.clone() } else { cfg.model.clone() };
    let mut rows = Vec::new();
    let mut models = Vec::new();
    for (task, recs) in tasks {
        let labels = LabelSet::from_labels(
            recs.iter().filter(|r| r.split == Split::Train).map(|r| r.label.as_str()),
        );
        if labels.is_empty() {
            return Err(Error::Validation(format!("task {task} has no training instances")));
        }
        let examples = |split: Split| -> Result<Vec<Example>> {
            recs.iter()
                .filter(|r| r.split == split)
                .map(|r| {
                    Ok(Example {
                        features: index.features(&r.sentence_id, r.target_index, pooling, layers)?,
                        label: labels.get(&r.label),
                    })
                })
                .collect()
        };
        let (train, dev, test) = (examples(Split::Train)?, examples(Split::Dev)?, examples(Split::Test)?);
        if dev.is_empty() || test.is_empty() {
            return Err(Error::Validation(format!("task {task} needs dev and test instances")));
        }

        let dev_gold: Vec<usize> = dev.iter().map(|e| e.label).collect();
        let model = new_model(index, labels.len(), layers, cfg.train.seed);
        let (model, history) = train_with_evaluator(model, &train, &dev, &cfg.train, |m| {
            accuracy(&predict_all(m, &dev)?, &dev_gold)
        })?;

        let test_gold: Vec<usize> = test.iter().map(|e| e.label).collect();
        let value = accuracy(&predict_all(&model, &test)?, &test_gold)?;
        let train_gold: Vec<usize> = train.iter().map(|e| e.label).collect();
        let majority_label = majority(&train_gold, labels.len());
        let baseline = accuracy(&vec![majority_label; test.len()], &test_gold)?;

        rows.push(ResultRow {
            fingerprint: fingerprint.clone(),
            language: cfg.language.clone(),
            model: model_name.clone(),
            task: task.clone(),
            metric: "accuracy".into(),
            value,
            majority_baseline: baseline,
            epochs: history.epochs.len(),
            pooling,
            layers,
            timestamp: now(),
        });
        models.push(TrainedModel {
            task,
            model,
            labels,
            history,
        });
    }
    Ok((rows, models))
}

pub fn run_tagging_experiment(cfg: &ExperimentConfig) -> Result<ResultRow> {
    let index = EmbeddingIndex::load(&cfg.embeddings)?;
    let records: Vec<TaggingRecord> = read_records(&cfg.datasets)?;
    let (row, model) = tag_with_index(cfg, &index, &records)?;
    if let Some(dir) = &cfg.checkpoint_dir {
        model.save(dir, cfg)?;
    }
    Ok(row)
}

fn tagging_metric(task: TaggingTask) -> &'static str {
    match task {
        TaggingTask::Pos => "accuracy",
        TaggingTask::Ner => "span-f1",
    }
}

/// Token accuracy (POS) or span F1 (NER) of per-sentence predictions.
pub fn tagging_score(task: TaggingTask, pred: &[Vec<String>], gold: &[Vec<String>]) -> Result<f64> {
    match task {
        TaggingTask::Pos => {
            let p: Vec<&String> = pred.iter().flatten().collect();
            let g: Vec<&String> = gold.iter().flatten().collect();
            accuracy(&p, &g)
        }
        TaggingTask::Ner => Ok(span_f1(pred, gold)?.f1),
    }
}

/// Trains one shared token classifier over all words of the training
/// sentences and scores it on the test sentences.
pub fn tag_with_index(
    cfg: &ExperimentConfig,
    index: &EmbeddingIndex,
    records: &[TaggingRecord],
) -> Result<(ResultRow, TrainedModel)> {
    let task = cfg
        .task
        .tagging()
        .ok_or_else(|| Error::InvalidInput("tagging run needs task pos or ner".into()))?;
    if let Some(r) = records.iter().find(|r| r.task != task) {
        return Err(Error::Validation(format!(
            "sentence {} is a {} record, expected {}",
            r.sentence_id,
            r.task.name(),
            task.name()
        )));
    }
    if let Some(r) = records.iter().find(|r| r.words.len() != r.tags.len()) {
        return Err(Error::Validation(format!("sentence {}: words and tags differ in length", r.sentence_id)));
    }
    index.check(records.iter().map(|r| (r.sentence_id.as_str(), r.words.len())))?;

    let (pooling, layers) = (cfg.pooling(), cfg.layer_mode());
    let split_records = |split: Split| -> Vec<&TaggingRecord> { records.iter().filter(|r| r.split == split).collect() };
    let (train_recs, dev_recs, test_recs) = (
        split_records(Split::Train),
        split_records(Split::Dev),
        split_records(Split::Test),
    );
    if train_recs.is_empty() || dev_recs.is_empty() || test_recs.is_empty() {
        return Err(Error::Validation("tagging data needs train, dev and test sentences".into()));
    }

    let labels = LabelSet::from_labels(train_recs.iter().flat_map(|r| r.tags.iter().map(String::as_str)));
    let examples = |recs: &[&TaggingRecord]| -> Result<Vec<Example>> {
        let mut out = Vec::new();
        for r in recs {
            for (w, tag) in r.tags.iter().enumerate() {
                out.push(Example {
                    features: index.features(&r.sentence_id, w, pooling, layers)?,
                    label: labels.get(tag),
                });
            }
        }
        Ok(out)
    };
    let train = examples(&train_recs)?;
    let dev = examples(&dev_recs)?;
    let test = examples(&test_recs)?;

    let regroup = |recs: &[&TaggingRecord], flat: &[usize]| -> Vec<Vec<String>> {
        let mut it = flat.iter();
        recs.iter()
            .map(|r| r.tags.iter().map(|_| labels.name(*it.next().unwrap()).to_string()).collect())
            .collect()
    };
    let gold = |recs: &[&TaggingRecord]| -> Vec<Vec<String>> { recs.iter().map(|r| r.tags.clone()).collect() };
    let dev_gold = gold(&dev_recs);
    let test_gold = gold(&test_recs);

    let model = new_model(index, labels.len(), layers, cfg.train.seed);
    let (model, history) = train_with_evaluator(model, &train, &dev, &cfg.train, |m| {
        tagging_score(task, &regroup(&dev_recs, &predict_all(m, &dev)?), &dev_gold)
    })?;

    let value = tagging_score(task, &regroup(&test_recs, &predict_all(&model, &test)?), &test_gold)?;
    let train_gold: Vec<usize> = train.iter().map(|e| e.label).collect();
    let majority_label = majority(&train_gold, labels.len());
    let baseline = tagging_score(task, &regroup(&test_recs, &vec![majority_label; test.len()]), &test_gold)?;

    let row = ResultRow {
        fingerprint: cfg.fingerprint(),
        language: cfg.language.clone(),
        model: if cfg.model.is_empty() { index.model.clone() } else { cfg.model.clone() },
        task: task.name().to_string(),
        metric: tagging_metric(task).into(),
        value,
        majority_baseline: baseline,
        epochs: history.epochs.len(),
        pooling,
        layers,
        timestamp: now(),
    };
    let trained = TrainedModel {
        task: task.name().to_string(),
        model,
        labels,
        history,
    };
    Ok((row, trained))
}

/// Task details stored in a checkpoint's `extra` field.
#[derive(Clone, Debug, Deserialize)]
pub struct CheckpointTask {
    pub task: String,
    pub kind: TaskKind,
    pub pooling: Pooling,
    pub layers: LayerMode,
}

/// Scores a saved classifier on one split; returns the metric name and value.
pub fn evaluate_checkpoint(
    header: &CheckpointHeader,
    model: &MlpModel,
    index: &EmbeddingIndex,
    datasets: &[PathBuf],
    split: Split,
) -> Result<(String, f64)> {
    let info: CheckpointTask = serde_json::from_value(header.extra.clone())
        .map_err(|e| Error::Format(format!("checkpoint task details: {e}")))?;
    let labels = LabelSet::from_labels(header.labels.iter().map(String::as_str));
    if labels.len() != header.labels.len() {
        return Err(Error::Format("checkpoint labels are not distinct".into()));
    }
    let expected = if matches!(info.layers, LayerMode::Mix) { index.layers() * index.hidden() } else { index.hidden() };
    if model.feature_len() != expected {
        return Err(Error::Shape(format!(
            "checkpoint expects {} features, embedding file provides {expected}",
            model.feature_len()
        )));
    }

    match info.kind.tagging() {
        None => {
            let records: Vec<ProbingRecord> = read_records(datasets)?;
            let selected: Vec<&ProbingRecord> = records
                .iter()
                .filter(|r| r.split == split && r.task_id() == info.task)
                .collect();
            if selected.is_empty() {
                return Err(Error::Validation(format!("no {} instances of task {}", split.name(), info.task)));
            }
            index.check(selected.iter().map(|r| (r.sentence_id.as_str(), r.words.len())))?;
            let mut preds = Vec::with_capacity(selected.len());
            let mut gold = Vec::with_capacity(selected.len());
            for r in selected {
                preds.push(model.predict(&index.features(&r.sentence_id, r.target_index, info.pooling, info.layers)?)?);
                gold.push(labels.get(&r.label));
            }
            Ok(("accuracy".into(), accuracy(&preds, &gold)?))
        }
        Some(task) => {
            let records: Vec<TaggingRecord> = read_records(datasets)?;
            let selected: Vec<&TaggingRecord> = records.iter().filter(|r| r.split == split && r.task == task).collect();
            if selected.is_empty() {
                return Err(Error::Validation(format!("no {} {} sentences", split.name(), task.name())));
            }
            index.check(selected.iter().map(|r| (r.sentence_id.as_str(), r.words.len())))?;
            let mut preds = Vec::with_capacity(selected.len());
            for r in &selected {
                let mut tags = Vec::with_capacity(r.words.len());
                for w in 0..r.words.len() {
                    let x = index.features(&r.sentence_id, w, info.pooling, info.layers)?;
                    tags.push(labels.name(model.predict(&x)?).to_string());
                }
                preds.push(tags);
            }
            let gold: Vec<Vec<String>> = selected.iter().map(|r| r.tags.clone()).collect();
            Ok((tagging_metric(task).into(), tagging_score(task, &preds, &gold)?))
        }
    }
}

/// Mean over shared tasks of `last - first`.
pub fn first_last_gap(first: &[ResultRow], last: &[ResultRow]) -> Result<f64> {
    let first: HashMap<(&str, &str), f64> = first
        .iter()
        .map(|r| ((r.language.as_str(), r.task.as_str()), r.value))
        .collect();
    let diffs: Vec<f64> = last
        .iter()
        .filter_map(|r| first.get(&(r.language.as_str(), r.task.as_str())).map(|f| r.value - f))
        .collect();
    if diffs.is_empty() {
        return Err(Error::InvalidInput("no task is shared by both result sets".into()));
    }
    Ok(diffs.iter().sum::<f64>() / diffs.len() as f64)
}

/// Scores of two result sets paired by (language, task), in sorted order.
pub fn paired_scores(a: &[ResultRow], b: &[ResultRow]) -> (Vec<String>, Vec<f64>, Vec<f64>) {
    let b_map: BTreeMap<(String, String), f64> = b
        .iter()
        .map(|r| ((r.language.clone(), r.task.clone()), r.value))
        .collect();
    let a_map: BTreeMap<(String, String), f64> = a
        .iter()
        .map(|r| ((r.language.clone(), r.task.clone()), r.value))
        .collect();
    let mut keys = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (key, x) in a_map {
        if let Some(&y) = b_map.get(&key) {
            keys.push(format!("{}:{}", key.0, key.1));
            xs.push(x);
            ys.push(y);
        }
    }
    (keys, xs, ys)
}

pub const REPORT_CSV_HEADER: &str =
    "fingerprint,language,model,task,metric,value,majority_baseline,epochs,pooling,layers,timestamp";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Report {
    pub csv: String,
    pub markdown: String,
}

fn pooling_name(p: Pooling) -> &'static str {
    match p {
        Pooling::First => "first",
        Pooling::Last => "last",
    }
}

fn layers_name(l: LayerMode) -> &'static str {
    match l {
        LayerMode::Mix => "mix",
        LayerMode::Top => "top",
    }
}

/// CSV with one line per row, plus one markdown pivot (language x model,
/// mean over tasks, in percent) per metric.
pub fn emit_report(rows: &[ResultRow]) -> Report {
    let mut rows: Vec<&ResultRow> = rows.iter().collect();
    rows.sort_by(|a, b| {
        (&a.fingerprint, &a.language, &a.model, &a.task).cmp(&(&b.fingerprint, &b.language, &b.model, &b.task))
    });

    let mut csv = String::from(REPORT_CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{:.6},{:.6},{},{},{},{}",
            r.fingerprint,
            r.language,
            r.model,
            r.task,
            r.metric,
            r.value,
            r.majority_baseline,
            r.epochs,
            pooling_name(r.pooling),
            layers_name(r.layers),
            r.timestamp
        );
    }

    let mut markdown = String::new();
    let metrics: BTreeSet<&str> = rows.iter().map(|r| r.metric.as_str()).collect();
    for metric in metrics {
        let selected: Vec<&&ResultRow> = rows.iter().filter(|r| r.metric == metric).collect();
        let languages: BTreeSet<&str> = selected.iter().map(|r| r.language.as_str()).collect();
        let models: BTreeSet<&str> = selected.iter().map(|r| r.model.as_str()).collect();
        let mut cells: BTreeMap<(&str, &str), (f64, usize)> = BTreeMap::new();
        for r in &selected {
            let cell = cells.entry((r.language.as_str(), r.model.as_str())).or_default();
            cell.0 += r.value;
            cell.1 += 1;
        }

        let _ = writeln!(markdown, "### {metric}\n");
        let _ = writeln!(markdown, "| language | {} |", models.iter().copied().collect::<Vec<_>>().join(" | "));
        let _ = writeln!(markdown, "|---|{}", "---|".repeat(models.len()));
        for lang in &languages {
            let values: Vec<String> = models
                .iter()
                .map(|m| match cells.get(&(*lang, *m)) {
                    Some((sum, n)) => format!("{:.1}", 100.0 * sum / *n as f64),
                    None => "-".to_string(),
                })
                .collect();
            let _ = writeln!(markdown, "| {lang} | {} |", values.join(" | "));
        }
        markdown.push('\n');
    }

    Report { csv, markdown }
}
