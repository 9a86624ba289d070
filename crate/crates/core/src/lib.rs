//! Evolution-guided GFlowNet training.
//!
//! A population of policy networks is evolved on trajectory-reward fitness,
//! its trajectories feed a percentile-stratified replay buffer, and a single
//! gradient-trained "star" agent learns from mixed online/offline batches
//! under flow-matching, detailed-balance or trajectory-balance objectives.
//!
//! Module map:
//!
//! - [`numnet`]: dense MLP, manual backprop, Adam, row views of the flat parameter vector.
//! - [`envs`]: hypergrid and prepend/append sequence DAG environments.
//! - [`agent`]: objective-specific heads, masked policies, trajectory sampling.
//! - [`losses`]: FM / DB / TB losses with gradients.
//! - [`evolution`]: population, selection, crossover, mutation.
//! - [`replay`]: prioritized replay buffer.
//! - [`trainer`]: the end-to-end training loop and run records.
//! - [`oracle`]: exact densities, exact flows, l1 error, mode counting.
//! - [`config`]: the JSON run configuration.

pub mod agent;
pub mod config;
pub mod envs;
pub mod error;
pub mod evolution;
pub mod losses;
pub mod numnet;
pub mod oracle;
pub mod replay;
pub mod rng;
pub mod trainer;

pub use agent::{GfnAgent, ObjectiveKind, Trajectory};
pub use envs::{Environment, GridState, HypergridEnv, SeqEnv, SeqState};
pub use error::{Error, Result};
pub use evolution::{EvoConfig, Population};
pub use numnet::{AdamState, MlpSpec, ParamVector};
pub use oracle::{DensityTable, FlowTable};
pub use replay::{ReplayBuffer, ReplayConfig};
pub use trainer::{MetricsRow, RunRecord, TrainConfig, Trainer};
