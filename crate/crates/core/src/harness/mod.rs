//! Run configuration, query-level splitting, training with early
//! stopping, evaluation, ablations and the command line.

mod ablate;
mod cli;
mod config;
mod data;
mod eval;
mod model;
mod split;
mod train;

pub use ablate::{mean_std, metric_values, run_ablation, summarize, AblationOutcome, ArmSpec, ArmSummary, CriterionCheck, MetricStat, RunRow};
pub use cli::{run, EXIT_ORDERING};
pub use config::{Arm, RunConfig, CONFIG_KEYS};
pub use data::{restrict_logs, split_occurrences, train_graph, Context, OccInfo, Prepared, TextEntry};
pub use eval::{checked_params, evaluate, refined_ads, refined_queries, reference_rows, retrieve, RetrievedAd};
pub use model::{BatchEmbeddings, Model, NodeCache, FREE_AD, FREE_QUERY, FREE_UNK, USER_EMB};
pub use split::{split_data, Split};
pub use train::{batches, checkpoint_hparams, epoch_batches, evaluate_loss, train, train_step, validation_batches, EpochRow, TrainOutcome, TrainSummary, TrainingTrace, TRACE_HEADER};
