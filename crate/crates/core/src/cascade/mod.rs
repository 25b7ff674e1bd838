//! The mixture-of-experts cascade: per-expert stages run in the
//! prototype frame, softmax gating, and training.

mod align;
mod model;
mod perturb;
mod train;

pub use align::{gating_weights, init_from_bbox, mix_align, softmax_gating, ti_sdm_stage, AlignTrace};
pub use model::{Expert, FeatureMode, MixModel};
pub use perturb::{sample_perturbation, PcaBasis, PerturbSigmas};
pub use train::{train, train_with_report, Mode, TrainConfig, TrainReport, TrainingSample};
