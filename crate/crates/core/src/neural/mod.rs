//! Toy transformer encoder with a classification head, trained from scratch.

mod checkpoint;
mod config;
mod encoder;
mod gradcheck;
mod model;
mod train;


pub use checkpoint::CHECKPOINT_VERSION;
pub use config::{preset, GroupInit, InputKind, Layout, Lineage, ParamGroup, Scale, TransformerConfig};
pub use encoder::Inputs;
pub use gradcheck::{grad_check, grad_check_with, relative_error, CoordinateCheck, GradCheckOptions, GradCheckReport, REL_FLOOR};
pub use model::{init_transformer, DistillTerms, ForwardOutput, Phase, TransformerModel, INIT_STD};
pub use train::{evaluate, train_classifier, Adam, EpochLoss, LabeledInputs, LossCurve, TrainOptions};

pub(crate) use model::{distill_terms, Target};
pub(crate) use train::{run_training, Task};
