//! Federated learning simulator and benchmark harness for cross-platform
//! GUI agents.

pub mod action;
pub mod episodes;
pub mod eval;
pub mod fl;
pub mod local_train;
pub mod partition;
pub mod seed;

pub use action::{parse_action, serialize_action, ActionError, ActionKind, Direction, Point, UnifiedAction};
pub use episodes::{Episode, Platform, Source, SourceTag, Step};
pub use eval::{evaluate, EvalReport, PredictionRecord, SpacePolicy};
pub use fl::{AlgoConfig, Algorithm, ClientUpdate, ParamVector, RoundConfig, RoundLog, ServerState};
pub use local_train::{SynthSpec, ToyModel, ToyTrainer, TrainSpec};
pub use partition::{partition, Axis, PartitionManifest, PartitionSpec, Scheme};
