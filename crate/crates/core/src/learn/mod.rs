//! Joint learning of the phase book and a CNN estimator.

pub mod adam;
pub mod checkpoint;
pub mod cnn;
pub mod joint;
pub mod phase_layer;
pub mod train;

pub use adam::Adam;
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use cnn::{Activation, Architecture, Cnn, CnnGradients};
pub use joint::{JointGradients, PhaseCnnModel, PreparedCnn};
pub use phase_layer::{phase_backward, phase_forward, PhaseLayer};
pub use train::{
    evaluate_model, hyper_search, run_trials, train_from, train_joint, training_log_csv, write_training_log, EpochLog,
    LrSchedule, SearchOutcome, SearchRanges, TrainConfig, TrainOutcome, TrialRecord,
};
