//! Pre-training, fine-tuning, leave-one-subject-out evaluation, sweeps and
//! their artifacts (checkpoints, metrics logs).

mod checkpoint;
pub mod finetune;
pub mod loso;
mod metrics;
pub mod pretrain;
pub mod sweep;

pub use checkpoint::Checkpoint;
pub use finetune::{finetune, finetune_trials, trial_window, FinetuneConfig, Trial};
pub use loso::{loso_evaluate, FoldResult, LosoReport, TrialSet};
pub use metrics::{MetricsLog, Record};
pub use pretrain::{pretrain, PretrainConfig, PretrainOutcome};
pub use sweep::{sweep, SweepAxis, SweepRow};
