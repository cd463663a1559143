//! Desk-scale toolkit for crafting and evaluating transferable adversarial
//! examples: the classical fast-gradient family with sign or sign-free
//! rescaled updates, gradient-stabilizing samplers, input-transformation
//! pipelines, ensemble sources, and a reproducible transfer-evaluation
//! harness over small trained-from-scratch classifiers.

pub mod attack;
pub mod data;
pub mod error;
pub mod eval;
pub mod models;
pub mod rng;
pub mod sampling;
pub mod tape;
pub mod tensor;
pub mod transforms;
pub mod update;

pub use attack::{attack_batch, run_attack, AttackConfig, AttackOutcome, GradientSource, Method};
pub use data::{
    load_adv_batch, load_idx, save_adv_batch, save_idx, synthetic_blobs, AdvBatch, LabeledDataset,
};
pub use error::{Error, Result};
pub use eval::{
    eligibility_mask, emit_report, emit_sweep, run_sweep, success_rate, transfer_matrix,
    ReportFormat, SweepParam, SweepResult, TransferReport,
};
pub use models::{
    accuracy, init_model, load_weights, save_weights, train, Arch, Classifier, ModelSpec,
    TrainConfig, Training, Weights,
};
pub use rng::RngStream;
pub use sampling::{
    chain_within_bound, depth_first_chain, depth_first_gradient, gaussian_gradient,
    gaussian_points, SamplerConfig, SamplerKind,
};
pub use tape::{finite_diff_gradient, Gradients, Padding, Tape, ValueId};
pub use tensor::Tensor;
pub use transforms::{
    composite_gradient, dim_transform, sim_gradients, tim_kernel, tim_smooth, DimConfig,
    PreparedPipeline, SimConfig, TimConfig, TransformPipeline,
};
pub use update::{
    clip_to_budget, l1_normalize, rescale_update, sign_update, RescaleParams, UpdateRule,
};
