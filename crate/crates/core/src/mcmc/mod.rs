//! Three-block MCMC sampler for the franchise model.
//!
//! Block 1 jointly moves each probe's restaurant, cuisine, table and dish.
//! Block 2 refreshes table dishes and the atoms of `G`. Block 3 updates the
//! weights of `G` and every remaining parameter.

pub mod block1;
pub mod block2;
pub mod block3;
pub mod chain;
pub mod config;
pub mod geweke;
pub mod init;
pub mod state;

pub use block1::{block1_update, Block1Stats, ProposalOption};
pub use block3::{block3_update, Block3Stats, MoveCount};
pub use chain::{eta_log_odds, run_chain, run_chain_partial, sweep, ChainOutput, Diagnostics, PosteriorSample, TraceRow};
pub use config::{ChiModel, GammaPrior, InvGammaPrior, McmcConfig, NigPrior, Priors, Proposals, XiModel, MCMC_SCHEMA};
pub use geweke::{joint_distribution_test, GewekeReport};
pub use init::initialize;
pub use state::ChainState;
