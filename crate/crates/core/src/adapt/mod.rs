//! Dynamics adaptation: history encoder, world model and adapter.

mod adapter;
mod history;
mod replay;
mod train;
mod world_model;

pub use adapter::{is_identity, Adapter, AdapterCache, AdapterGrad, ADAPTER_HIDDEN};
pub use history::{HistoryBuffer, HISTORY_LEN, ROLLOUT_LEN, WINDOW_LEN};
pub use replay::{WindowReplay, WindowSample};
pub use train::{
    heldout_wm_eval, train_adapter, AdaptConfig, AdaptOutcome, AdapterPolicy, WmEval, WorldModel, OMEGA_HIDDEN, PHI_HIDDEN,
};
pub use world_model::{
    concat_rows, encode_history, persistence_loss, wm_loss, wm_step, WindowShape, WmLoss, EMBED_DIM,
};
