//! Expert datasets, supervised training and evaluation of the action network.

pub mod dataset;
pub mod eval;
pub mod train;

pub use dataset::{
    generate_dataset, generate_record, generate_records, instance_seed, prepare, split, stack, Dataset,
    DatasetHeader, Sample, TrainRecord, DEFAULT_SPLIT,
};
pub use eval::{
    coverage_ratio, evaluate_model, evaluate_policy, fresh_instances, policy_assignment, random_seed_for,
    EvalSummary, InstanceEval, Policy,
};
pub use train::{evaluate_loss, train, train_with, EpochStats, TrainConfig, TrainOutcome};
