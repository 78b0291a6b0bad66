//! Masked next-token training with frozen text experts.

mod loss;
mod optim;
mod phase;

pub use loss::{
    accumulate_sequence, masked_nll, masked_nll_grad, position_nll, scored_count, sequence_loss,
    targets_for, LossScope,
};
pub use optim::{AdamWConfig, OptimizerState, Schedule};
pub use phase::{
    load_phase_data, planned_steps, run_phase, train_sequences, trainable_mask, trainable_set,
    write_metrics, Ablation, PhaseKind, PhaseOutcome, StepMetrics, TrainOptions, TrainPhase,
};
