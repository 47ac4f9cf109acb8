use serde::{Deserialize, Serialize};

use super::adamw::{AdamWConfig, AdamWState};
use super::metrics::accuracy;
use super::mlp::{cross_entropy, Dropout, Example, MlpModel};
use crate::error::{Error, Result};
use crate::rng::SplitRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub dropout: f64,
    /// Evaluations without dev improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    #[serde(default)]
    pub optimizer: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            dropout: 0.2,
            patience: 5,
            max_epochs: 200,
            seed: 0,
            optimizer: AdamWConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidInput(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidInput("max_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Tracks the best dev result and how many evaluations have passed since.
///
/// A result improves on the best when its score is higher, or when the
/// score ties and the dev loss is lower.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(f64, f64)>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            since_best: 0,
        }
    }

    /// Records a dev score and loss; returns true if they are a new best.
    pub fn observe(&mut self, score: f64, loss: f64) -> bool {
        let improved = match self.best {
            None => true,
            Some((best_score, best_loss)) => score > best_score || (score == best_score && loss < best_loss),
        };
        if improved {
            self.best = Some((score, loss));
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        improved
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_score: f64,
    pub dev_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch of the returned snapshot.
    pub best_epoch: usize,
    pub best_dev_score: f64,
}

pub fn predict_all(model: &MlpModel, examples: &[Example]) -> Result<Vec<usize>> {
    examples.iter().map(|ex| model.predict(&ex.features)).collect()
}

/// Mean cross-entropy over the examples whose label the model can predict;
/// infinite when there are none.
pub fn mean_loss(model: &MlpModel, examples: &[Example]) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for ex in examples.iter().filter(|ex| ex.label < model.classes) {
        sum += cross_entropy(&model.forward(&ex.features, None)?, ex.label);
        n += 1;
    }
    Ok(if n == 0 { f64::INFINITY } else { sum / n as f64 })
}

/// Trains with early stopping on dev accuracy and returns the best snapshot.
pub fn train(model: MlpModel, train_set: &[Example], dev_set: &[Example], cfg: &TrainConfig) -> Result<(MlpModel, TrainHistory)> {
    if dev_set.is_empty() {
        return Err(Error::InvalidInput("empty dev set".into()));
    }
    let golds: Vec<usize> = dev_set.iter().map(|ex| ex.label).collect();
    train_with_evaluator(model, train_set, dev_set, cfg, |m| accuracy(&predict_all(m, dev_set)?, &golds))
}

/// Training loop with a caller-supplied dev score (higher is better),
/// evaluated once per epoch. Loss on `dev_set` breaks ties in the score.
pub fn train_with_evaluator<F>(
    mut model: MlpModel,
    train_set: &[Example],
    dev_set: &[Example],
    cfg: &TrainConfig,
    mut evaluate: F,
) -> Result<(MlpModel, TrainHistory)>
where
    F: FnMut(&MlpModel) -> Result<f64>,
{
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }

    let shapes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
    let mut optimizer = AdamWState::new(cfg.optimizer, &shapes);
    let mut shuffle_rng = SplitRng::derive(cfg.seed, 1);
    let mut dropout_rng = SplitRng::derive(cfg.seed, 2);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.clone();
    let mut history = TrainHistory {
        epochs: Vec::new(),
        best_epoch: 0,
        best_dev_score: f64::NEG_INFINITY,
    };

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut batch: Vec<&Example> = Vec::with_capacity(cfg.batch_size);
    for epoch in 1..=cfg.max_epochs {
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| &train_set[i]));
            let dropout = Dropout {
                rate: cfg.dropout,
                rng: &mut dropout_rng,
            };
            let (loss, grads) = model.loss_and_grads(&batch, Some(dropout))?;
            optimizer.step(&mut model.tensors_mut(), &grads.tensors())?;
            loss_sum += loss;
            batches += 1;
        }
        if !model.is_finite() {
            return Err(Error::InvalidInput(format!(
                "parameters became non-finite in epoch {epoch}"
            )));
        }

        let score = evaluate(&model)?;
        let dev_loss = mean_loss(&model, dev_set)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            dev_score: score,
            dev_loss,
        });
        if stopper.observe(score, dev_loss) {
            best = model.clone();
            history.best_epoch = epoch;
            history.best_dev_score = score;
        }
        if stopper.should_stop() {
            break;
        }
    }
    Ok((best, history))
}
