//! Full chain: initialization, burn-in, thinned storage and summaries.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LogitData;
use crate::detection::PosteriorAccumulator;
use crate::error::{Error, Result};
use crate::evidence::slab_log_odds;
use crate::franchise::{Cuisine, HyperParams};

use super::block1::{block1_update, Block1Stats};
use super::block2::{update_atoms, update_dishes};
use super::block3::{block3_update, Block3Stats};
use super::config::McmcConfig;
use super::init::initialize;
use super::state::{data_log_likelihood, transition_log_lik, ChainState};

/// One stored draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSample {
    pub iteration: usize,
    pub s: Vec<Cuisine>,
    /// Row-major `p x T`.
    pub theta: Vec<f64>,
    pub hp: HyperParams,
    pub log_likelihood: f64,
    pub eta_zero: bool,
    pub log_odds_eta: f64,
}

/// Scalar summary of one stored draw, one row of `trace.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub log_likelihood: f64,
    pub sigma2: f64,
    pub rho1: f64,
    pub gamma: f64,
    pub eta: f64,
    pub d2: f64,
    /// Number of distinct dishes.
    pub q: usize,
    pub n_differential: usize,
    pub log_odds_eta: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub block1: Block1Stats,
    pub block1_acceptance: f64,
    /// Acceptance over the moves that have an accept/reject step.
    pub block1_acceptance_tested: f64,
    pub block3: Block3Stats,
    /// Wall time; not serialized so that saved diagnostics are reproducible.
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    pub trace: Vec<TraceRow>,
    /// Full draws, kept only when `keep_samples` is set.
    pub samples: Vec<PosteriorSample>,
    pub accumulator: PosteriorAccumulator,
    pub diagnostics: Diagnostics,
    pub final_state: Option<ChainState>,
}

impl ChainOutput {
    pub fn log_odds(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.log_odds_eta).collect()
    }
}

/// Conditional log-odds of `eta > 0` against `eta = 0` given everything else.
pub fn eta_log_odds(state: &ChainState, data: &LogitData, grid: usize) -> f64 {
    let (f, hp) = (&state.franchise, &state.hp);
    let eta_max = state.eta_max(&data.distances);
    slab_log_odds(
        |eta| transition_log_lik(f, &data.distances, hp.rho1, hp.gamma, eta),
        eta_max,
        grid,
    )
}

/// Runs blocks 1 to 3 once.
pub fn sweep<R: Rng + ?Sized>(
    state: &mut ChainState,
    data: &LogitData,
    cfg: &McmcConfig,
    rng: &mut R,
) -> Result<(Block1Stats, Block3Stats)> {
    let b1 = block1_update(state, data, rng)?;
    update_dishes(state, data, rng)?;
    update_atoms(state, data, rng)?;
    let b3 = block3_update(state, data, cfg, rng)?;
    state.iteration += 1;
    debug_assert!(state.check(data).is_ok());
    Ok((b1, b3))
}

fn record(state: &ChainState, data: &LogitData, cfg: &McmcConfig, out: &mut ChainOutput) -> Result<()> {
    let theta = state.theta_matrix();
    let ll = data_log_likelihood(data, state);
    if !ll.is_finite() {
        return Err(Error::Sampler {
            iteration: state.iteration,
            message: "log-likelihood is not finite".into(),
        });
    }
    let log_odds = eta_log_odds(state, data, cfg.evidence_grid);
    let hp = &state.hp;
    out.trace.push(TraceRow {
        iteration: state.iteration,
        log_likelihood: ll,
        sigma2: hp.sigma2,
        rho1: hp.rho1,
        gamma: hp.gamma,
        eta: hp.eta,
        d2: hp.d2,
        q: state.franchise.clusters().1,
        n_differential: state.franchise.n_differential(),
        log_odds_eta: log_odds,
    });
    out.accumulator.add(&state.franchise.cuisine, &theta);
    if cfg.keep_samples {
        out.samples.push(PosteriorSample {
            iteration: state.iteration,
            s: state.franchise.cuisine.clone(),
            theta,
            hp: hp.clone(),
            log_likelihood: ll,
            eta_zero: hp.eta == 0.0,
            log_odds_eta: log_odds,
        });
    }
    Ok(())
}

/// Runs the chain and returns whatever was stored, together with the error
/// that stopped it early, if any.
pub fn run_chain_partial<R: Rng + ?Sized>(
    data: &LogitData,
    cfg: &McmcConfig,
    rng: &mut R,
) -> (ChainOutput, Option<Error>) {
    let start = Instant::now();
    let mut out = ChainOutput {
        trace: Vec::with_capacity(cfg.n_stored()),
        samples: Vec::new(),
        accumulator: PosteriorAccumulator::new(data.p, data.n_treatments),
        diagnostics: Diagnostics::default(),
        final_state: None,
    };
    let mut state = match initialize(data, cfg, rng) {
        Ok(s) => s,
        Err(e) => return (out, Some(e)),
    };
    let total = cfg.burn_in + cfg.samples;
    let mut failure = None;
    for it in 0..total {
        match sweep(&mut state, data, cfg, rng) {
            Ok((b1, b3)) => {
                out.diagnostics.block1.merge(b1);
                out.diagnostics.block3.merge(&b3);
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
        let kept = it + 1 - cfg.burn_in.min(it + 1);
        if it >= cfg.burn_in && kept % cfg.thin == 0 {
            if let Err(e) = record(&state, data, cfg, &mut out) {
                failure = Some(e);
                break;
            }
        }
        if (it + 1) % 1000 == 0 {
            log::debug!("iteration {} of {total}", it + 1);
        }
    }
    let d = &mut out.diagnostics;
    d.iterations = state.iteration;
    d.block1_acceptance = d.block1.acceptance_rate();
    d.block1_acceptance_tested = if d.block1.tested == 0 {
        1.0
    } else {
        d.block1.accepted_tested as f64 / d.block1.tested as f64
    };
    d.seconds = start.elapsed().as_secs_f64();
    out.final_state = Some(state);
    (out, failure)
}

/// Runs `burn_in + samples` sweeps and stores every `thin`-th post-burn-in
/// draw.
pub fn run_chain<R: Rng + ?Sized>(data: &LogitData, cfg: &McmcConfig, rng: &mut R) -> Result<ChainOutput> {
    match run_chain_partial(data, cfg, rng) {
        (out, None) => Ok(out),
        (_, Some(e)) => Err(e),
    }
}
