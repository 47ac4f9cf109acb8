//! From-scratch classifier core: MLP, AdamW, early-stopping training and
//! evaluation metrics.

pub mod adamw;
pub mod checkpoint;
pub mod metrics;
pub mod mlp;
pub mod train;

pub use adamw::{adamw_step, AdamWConfig, AdamWState};
pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader};
pub use metrics::{accuracy, extract_spans, paired_t_test, span_f1, Span, SpanF1, TTest};
pub use mlp::{loss_and_grads, mlp_forward, Dropout, Example, Gradients, MlpModel, HIDDEN_UNITS};
pub use train::{mean_loss, predict_all, train, train_with_evaluator, EarlyStopping, TrainConfig, TrainHistory};
