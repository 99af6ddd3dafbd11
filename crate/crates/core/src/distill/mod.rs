//! Distillation of per-cluster specialists into a single generalist.

mod bank;
mod dagger;

pub use bank::{dagger_label, specialist_path, SpecialistBank};
pub use dagger::{
    action_mse, regress_epoch, train_generalist, DaggerDataset, DistillConfig, DistillOutcome, DistillRow,
};
