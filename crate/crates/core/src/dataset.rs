//! Constrained probing and tagging datasets.
//!
//! Probing splits are built at the level of case-folded target forms: every
//! form belongs to exactly one split, and each split keeps the ratio between
//! its most and least frequent label within `max_imbalance`. Majority labels
//! are downsampled; nothing is duplicated.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::corpus::{extract_morph_instances, ProbingInstance, Sentence, Treebank};
use crate::error::{Error, Result};
use crate::rng::SplitRng;
use crate::tokenize::strip_diacritics;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbingTaskSpec {
    pub language: String,
    pub feature: String,
    pub upos: String,
    pub label_set: Vec<String>,
}

impl ProbingTaskSpec {
    /// `feature/upos`, e.g. `Case/NOUN`.
    pub fn id(&self) -> String {
        format!("{}/{}", self.feature, self.upos)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    pub max_imbalance: usize,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_size: 2000,
            dev_size: 200,
            test_size: 200,
            max_imbalance: 3,
            seed: 0,
        }
    }
}

impl SplitConfig {
    fn validate(&self) -> Result<()> {
        if self.train_size == 0 || self.dev_size == 0 || self.test_size == 0 {
            return Err(Error::InvalidInput("split sizes must be positive".into()));
        }
        if self.max_imbalance == 0 {
            return Err(Error::InvalidInput("max_imbalance must be at least 1".into()));
        }
        Ok(())
    }

    fn sizes(&self) -> [usize; 3] {
        [self.train_size, self.dev_size, self.test_size]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbingDataset {
    pub spec: ProbingTaskSpec,
    pub train: Vec<ProbingInstance>,
    pub dev: Vec<ProbingInstance>,
    pub test: Vec<ProbingInstance>,
}

impl ProbingDataset {
    pub fn split(&self, split: Split) -> &[ProbingInstance] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaggingTask {
    Pos,
    Ner,
}

impl TaggingTask {
    pub fn name(self) -> &'static str {
        match self {
            TaggingTask::Pos => "pos",
            TaggingTask::Ner => "ner",
        }
    }

    /// Gold tag sequence of a sentence, if every token carries one.
    pub fn gold_tags(self, sentence: &Sentence) -> Option<Vec<String>> {
        sentence
            .tokens
            .iter()
            .map(|t| match self {
                TaggingTask::Pos => t.upos.clone(),
                TaggingTask::Ner => t.ner.clone(),
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggingDataset {
    pub task: TaggingTask,
    pub train: Vec<Sentence>,
    pub dev: Vec<Sentence>,
    pub test: Vec<Sentence>,
}

/// Case-folded key used for form disjointness.
pub fn form_key(form: &str) -> String {
    form.to_lowercase()
}

/// Applies diacritics folding to every surface form and lemma.
pub fn fold_diacritics(tb: &mut Treebank) {
    for token in tb.sentences.iter_mut().flat_map(|s| s.tokens.iter_mut()) {
        token.form = strip_diacritics(&token.form);
        if let Some(lemma) = token.lemma.as_mut() {
            *lemma = strip_diacritics(lemma);
        }
    }
}

/// Per-label quotas for a split of `size` instances.
///
/// Label weights are the available counts capped at `max_imbalance` times the
/// rarest count; quotas are proportional to those weights and then adjusted
/// so that the integer quotas respect the cap.
fn split_quotas(size: usize, weights: &[f64], max_imbalance: usize) -> Result<Vec<usize>> {
    let k = weights.len();
    if size < k {
        return Err(Error::Infeasible(format!(
            "split of {size} instances cannot hold all {k} labels"
        )));
    }
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| size as f64 * w / total).collect();
    let mut quotas: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut remaining = size - quotas.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        quotas[i] += 1;
        remaining -= 1;
    }

    loop {
        let (imax, &qmax) = quotas
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .unwrap();
        let (imin, &qmin) = quotas
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.cmp(b.1).then(a.0.cmp(&b.0)))
            .unwrap();
        if qmin >= 1 && qmax <= max_imbalance * qmin {
            return Ok(quotas);
        }
        quotas[imax] -= 1;
        quotas[imin] += 1;
    }
}

/// Samples a form-disjoint, imbalance-capped train/dev/test split.
pub fn sample_probing_split(
    instances: &[ProbingInstance],
    spec: &ProbingTaskSpec,
    cfg: &SplitConfig,
) -> Result<ProbingDataset> {
    cfg.validate()?;
    if spec.label_set.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "task {} needs at least two labels",
            spec.id()
        )));
    }
    let labels: Vec<&str> = spec.label_set.iter().map(String::as_str).collect();
    let label_index: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (*l, i)).collect();
    let k = labels.len();

    // form -> instances, restricted to retained labels
    let mut by_form: BTreeMap<String, Vec<(usize, &ProbingInstance)>> = BTreeMap::new();
    for inst in instances {
        if let Some(&li) = label_index.get(inst.label.as_str()) {
            by_form.entry(form_key(&inst.form)).or_default().push((li, inst));
        }
    }
    let mut available = vec![0usize; k];
    for insts in by_form.values_mut() {
        insts.sort();
        for (li, _) in insts.iter() {
            available[*li] += 1;
        }
    }

    let total_needed: usize = cfg.sizes().iter().sum();
    let rarest = (0..k).min_by_key(|&i| (available[i], i)).unwrap();
    let cap = cfg.max_imbalance * available[rarest];
    let weights: Vec<f64> = available.iter().map(|&a| a.min(cap) as f64).collect();
    let usable: f64 = weights.iter().sum();
    if usable < total_needed as f64 {
        return Err(Error::Infeasible(format!(
            "task {}: label {:?} has {} instances; with imbalance cap {}:1 at most {} of the {} \
             requested instances can be sampled",
            spec.id(),
            labels[rarest],
            available[rarest],
            cfg.max_imbalance,
            usable as usize,
            total_needed
        )));
    }

    let sizes = cfg.sizes();
    let quotas: Vec<Vec<usize>> = sizes
        .iter()
        .map(|&n| split_quotas(n, &weights, cfg.max_imbalance))
        .collect::<Result<_>>()?;

    let mut rng = SplitRng::new(cfg.seed);
    let mut forms: Vec<(&String, &Vec<(usize, &ProbingInstance)>)> = by_form.iter().collect();
    rng.shuffle(&mut forms);

    let mut need = quotas.clone();
    let mut assigned: [Vec<usize>; 3] = Default::default();
    for (fi, (_, insts)) in forms.iter().enumerate() {
        if need.iter().all(|n| n.iter().all(|&x| x == 0)) {
            break;
        }
        let mut counts = vec![0usize; k];
        for (li, _) in insts.iter() {
            counts[*li] += 1;
        }
        // the least-filled split (relative to its size) that this form helps
        let best = (0..3)
            .filter(|&s| (0..k).any(|l| counts[l] > 0 && need[s][l] > 0))
            .max_by(|&a, &b| {
                let fa = need[a].iter().sum::<usize>() as f64 / sizes[a] as f64;
                let fb = need[b].iter().sum::<usize>() as f64 / sizes[b] as f64;
                fa.total_cmp(&fb).then(b.cmp(&a))
            });
        if let Some(s) = best {
            for l in 0..k {
                need[s][l] -= counts[l].min(need[s][l]);
            }
            assigned[s].push(fi);
        }
    }

    for (s, split) in Split::ALL.iter().enumerate() {
        if let Some(l) = (0..k).find(|&l| need[s][l] > 0) {
            return Err(Error::Infeasible(format!(
                "task {}: {} split is short {} instance(s) of label {:?} once target forms are kept \
                 disjoint across splits",
                spec.id(),
                split.name(),
                need[s][l],
                labels[l]
            )));
        }
    }

    let mut splits: Vec<Vec<ProbingInstance>> = Vec::with_capacity(3);
    for s in 0..3 {
        let mut chosen = Vec::with_capacity(sizes[s]);
        for (l, &quota) in quotas[s].iter().enumerate() {
            // round-robin over the split's forms so frequent forms do not dominate
            let per_form: Vec<Vec<&ProbingInstance>> = assigned[s]
                .iter()
                .map(|&fi| {
                    let mut v: Vec<&ProbingInstance> = forms[fi]
                        .1
                        .iter()
                        .filter(|(li, _)| *li == l)
                        .map(|(_, inst)| *inst)
                        .collect();
                    rng.shuffle(&mut v);
                    v
                })
                .collect();
            let mut taken = 0;
            let mut round = 0;
            while taken < quota {
                for form_insts in &per_form {
                    if taken == quota {
                        break;
                    }
                    if let Some(inst) = form_insts.get(round) {
                        chosen.push((*inst).clone());
                        taken += 1;
                    }
                }
                round += 1;
            }
        }
        rng.shuffle(&mut chosen);
        splits.push(chosen);
    }

    let test = splits.pop().unwrap();
    let dev = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    Ok(ProbingDataset {
        spec: spec.clone(),
        train,
        dev,
        test,
    })
}

/// Lists the probing tasks a treebank supports.
///
/// For each (feature, UPOS) pair, labels with at least `min_per_label`
/// distinct target forms are kept. While the split cannot be built, the
/// rarest label is dropped; a task survives with two or more labels.
pub fn enumerate_tasks(
    tb: &Treebank,
    min_per_label: usize,
    cfg: &SplitConfig,
) -> Vec<ProbingTaskSpec> {
    let mut pairs: BTreeSet<(String, String)> = BTreeSet::new();
    for token in tb.tokens() {
        if let Some(upos) = &token.upos {
            for feature in token.feats.keys() {
                pairs.insert((feature.clone(), upos.clone()));
            }
        }
    }

    let mut specs = Vec::new();
    for (feature, upos) in pairs {
        let instances = extract_morph_instances(tb, &feature, &upos);
        let mut forms: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for inst in &instances {
            forms.entry(&inst.label).or_default().insert(form_key(&inst.form));
            *counts.entry(&inst.label).or_default() += 1;
        }
        let mut labels: Vec<String> = forms
            .iter()
            .filter(|(_, f)| f.len() >= min_per_label)
            .map(|(l, _)| l.to_string())
            .collect();

        while labels.len() >= 2 {
            let spec = ProbingTaskSpec {
                language: tb.language.clone(),
                feature: feature.clone(),
                upos: upos.clone(),
                label_set: labels.clone(),
            };
            match sample_probing_split(&instances, &spec, cfg) {
                Ok(_) => {
                    specs.push(spec);
                    break;
                }
                Err(_) => {
                    let rarest = labels
                        .iter()
                        .enumerate()
                        .min_by_key(|(i, l)| (counts[l.as_str()], *i))
                        .map(|(i, _)| i)
                        .unwrap();
                    labels.remove(rarest);
                }
            }
        }
    }
    specs
}

/// `(train, dev, test)` sentence counts for a corpus of `n` sentences.
///
/// Test and dev each get a tenth of the corpus (at least one sentence),
/// capped at the configured size; train takes the remainder up to its cap.
pub fn tagging_allocation(n: usize, cfg: &SplitConfig) -> Result<(usize, usize, usize)> {
    if n < 3 {
        return Err(Error::Infeasible(format!(
            "{n} sentence(s) cannot be split into train, dev and test"
        )));
    }
    let tenth = (n / 10).max(1);
    let test = tenth.min(cfg.test_size);
    let dev = tenth.min(cfg.dev_size);
    let train = (n - test - dev).min(cfg.train_size);
    Ok((train, dev, test))
}

/// Seeded sentence-level split for POS or NER tagging.
pub fn sample_tagging_split(
    sentences: &[Sentence],
    task: TaggingTask,
    cfg: &SplitConfig,
) -> Result<TaggingDataset> {
    cfg.validate()?;
    if let Some(bad) = sentences.iter().find(|s| task.gold_tags(s).is_none()) {
        return Err(Error::Validation(format!(
            "sentence {} lacks {} tags",
            bad.id,
            task.name()
        )));
    }
    let mut seen = BTreeSet::new();
    if let Some(dup) = sentences.iter().find(|s| !seen.insert(s.id.as_str())) {
        return Err(Error::Validation(format!("duplicate sentence id {}", dup.id)));
    }

    let (n_train, n_dev, n_test) = tagging_allocation(sentences.len(), cfg)?;
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    SplitRng::new(cfg.seed).shuffle(&mut order);
    let take = |range: std::ops::Range<usize>| -> Vec<Sentence> {
        order[range].iter().map(|&i| sentences[i].clone()).collect()
    };
    Ok(TaggingDataset {
        task,
        test: take(0..n_test),
        dev: take(n_test..n_test + n_dev),
        train: take(n_test + n_dev..n_test + n_dev + n_train),
    })
}

/// One line of a probing dataset file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbingRecord {
    pub language: String,
    pub feature: String,
    pub upos: String,
    pub split: Split,
    pub sentence_id: String,
    pub words: Vec<String>,
    pub target_index: usize,
    pub label: String,
    pub form: String,
}

impl ProbingRecord {
    pub fn task_id(&self) -> String {
        format!("{}/{}", self.feature, self.upos)
    }
}

/// One line of a tagging dataset file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggingRecord {
    pub task: TaggingTask,
    pub split: Split,
    pub sentence_id: String,
    pub words: Vec<String>,
    pub tags: Vec<String>,
}

pub fn probing_records(ds: &ProbingDataset, tb: &Treebank) -> Result<Vec<ProbingRecord>> {
    let by_id: HashMap<&str, &Sentence> = tb.sentences.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut out = Vec::new();
    for split in Split::ALL {
        for inst in ds.split(split) {
            let sentence = by_id.get(inst.sentence_id.as_str()).ok_or_else(|| {
                Error::Validation(format!("unknown sentence id {}", inst.sentence_id))
            })?;
            out.push(ProbingRecord {
                language: ds.spec.language.clone(),
                feature: ds.spec.feature.clone(),
                upos: ds.spec.upos.clone(),
                split,
                sentence_id: inst.sentence_id.clone(),
                words: sentence.forms(),
                target_index: inst.target_index,
                label: inst.label.clone(),
                form: inst.form.clone(),
            });
        }
    }
    Ok(out)
}

pub fn tagging_records(ds: &TaggingDataset) -> Vec<TaggingRecord> {
    let mut out = Vec::new();
    for (split, sentences) in [(Split::Train, &ds.train), (Split::Dev, &ds.dev), (Split::Test, &ds.test)] {
        for s in sentences {
            out.push(TaggingRecord {
                task: ds.task,
                split,
                sentence_id: s.id.clone(),
                words: s.forms(),
                tags: ds.task.gold_tags(s).unwrap_or_default(),
            });
        }
    }
    out
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn from_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::parse(i + 1, e.to_string()))
        })
        .collect()
}
