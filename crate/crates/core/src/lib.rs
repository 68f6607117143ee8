//! Cross-category compatibility learning by aligning per-category feature
//! distributions in a shared style space.

pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod numcore;
pub mod trainer;
pub mod transport;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointModel};
pub use data::{Dataset, ItemRecord, Pair, SplitConfig, SynthConfig};
pub use error::{Error, Result};
pub use eval::{EvalOptions, EvalReport};
pub use losses::LossBreakdown;
pub use model::{Critic, GeneratorBank};
pub use numcore::Matrix;
pub use trainer::{train, TrainConfig, TrainOutcome, TrainTrace};
