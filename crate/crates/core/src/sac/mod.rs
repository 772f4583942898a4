//! Soft actor-critic with twin critics, fixed entropy temperature and
//! delayed policy updates.

pub mod adam;
pub mod agent;
pub mod mlp;
pub mod policy;
pub mod replay;

pub use adam::Adam;
pub use agent::{SACAgent, SACHyper, UpdateStats};
pub use mlp::MLPParams;
pub use policy::GaussianPolicy;
pub use replay::{Batch, ReplayBuffer, Transition};
pub mod toy;
pub mod train;

pub use train::{
    evaluate, train, BestPolicy, Checkpoint, CheckpointError, EpisodeReport, EvalSchedule, TrainError, TrainedPolicy,
    Trainer,
};
