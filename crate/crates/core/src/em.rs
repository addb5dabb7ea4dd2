//! EM hyperparameter learning, one M-step per turbo iteration.
//!
//! Each update maximizes the expected complete-data log-likelihood of the
//! spike-and-slab chain model given the current posteriors. Results are
//! projected back into the admissible ranges.

use serde::{Deserialize, Serialize};

use crate::channel::ObservationMatrix;
use crate::ds::{DsParams, DsTapParams, DsTapPosterior};
use crate::engine::LearnedParams;
use crate::error::{Error, Result};
use crate::fs::FsParams;
use crate::linops::SensingOperator;
use crate::priors::{BgPrior, ChainPosterior, SlabStats};

pub const PROB_MIN: f64 = 1e-6;
pub const PROB_MAX: f64 = 1.0 - 1e-6;
pub const VAR_MIN: f64 = 1e-12;
/// Sums of posterior mass below this keep the previous estimate.
const MASS_GUARD: f64 = 1e-9;

pub const INIT_ACTIVITY: f64 = 0.3;
pub const INIT_P01: f64 = 0.1;
pub const INIT_GAMMA: f64 = 0.1;

/// Parameters after every EM step of one run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EmState {
    pub trajectory: Vec<LearnedParams>,
}

impl EmState {
    pub fn record(&mut self, params: LearnedParams) {
        self.trajectory.push(params);
    }

    pub fn iterations(&self) -> usize {
        self.trajectory.len()
    }

    pub fn current(&self) -> Option<&LearnedParams> {
        self.trajectory.last()
    }
}

fn prob(x: f64) -> f64 {
    x.clamp(PROB_MIN, PROB_MAX)
}

fn tied_p10(lambda: f64, p01: f64) -> f64 {
    prob(p01 * lambda / (1.0 - lambda))
}

/// Energy-based nonzero variance per column: `2 N ||y_p||^2 / (M ||A||_F^2)`
/// with `||A||_F^2 = M` for a row-orthonormal operator.
pub fn init_variances(y: &ObservationMatrix, op: &SensingOperator) -> Result<Vec<f64>> {
    if y.rows() != op.m() {
        return Err(Error::DimensionMismatch {
            context: "observation rows",
            expected: op.m(),
            found: y.rows(),
        });
    }
    let (n, m) = (op.n() as f64, op.m() as f64);
    Ok((0..y.cols())
        .map(|p| {
            let energy: f64 = y.values.col(p).iter().map(|v| v.norm_sqr()).sum();
            (2.0 * n * energy / (m * m)).max(VAR_MIN)
        })
        .collect())
}

pub fn em_init_iid(y: &ObservationMatrix, op: &SensingOperator) -> Result<Vec<BgPrior>> {
    init_variances(y, op)?
        .into_iter()
        .map(|s| BgPrior::new(INIT_ACTIVITY, s))
        .collect()
}

pub fn em_init_fs(y: &ObservationMatrix, op: &SensingOperator) -> Result<FsParams> {
    FsParams::tied(INIT_ACTIVITY, INIT_P01, init_variances(y, op)?)
}

pub fn em_init_ds(y: &ObservationMatrix, op: &SensingOperator, epsilon: f64) -> Result<DsParams> {
    let taps = init_variances(y, op)?
        .into_iter()
        .map(|s| DsTapParams::tied(INIT_ACTIVITY, INIT_P01, s, INIT_GAMMA))
        .collect();
    DsParams::new(taps, epsilon)
}

pub fn em_update_iid(priors: &[BgPrior], stats: &SlabStats, n: usize) -> Vec<BgPrior> {
    priors
        .iter()
        .enumerate()
        .map(|(p, prior)| {
            let act = stats.activity_sum[p];
            if act < MASS_GUARD {
                return *prior;
            }
            BgPrior {
                pi: prob(act / n as f64),
                sigma2_h: (stats.slab_energy[p] / act).max(VAR_MIN),
            }
        })
        .collect()
}

/// `(lambda, p01)` from chain posteriors: mean activity and expected
/// `1 -> 0` transitions per expected `1` predecessor.
fn chain_update(chain: &ChainPosterior, lambda: f64, p01: f64) -> (f64, f64) {
    let n = chain.len();
    let mass: f64 = chain.marginal.iter().sum();
    if n == 0 || mass < MASS_GUARD {
        return (lambda, p01);
    }
    let new_lambda = prob(mass / n as f64);
    let (mut leave, mut from_one) = (0.0, 0.0);
    for pr in &chain.pairwise {
        leave += pr[2];
        from_one += pr[2] + pr[3];
    }
    let new_p01 = if from_one < MASS_GUARD {
        p01
    } else {
        prob(leave / from_one)
    };
    (new_lambda, new_p01)
}

pub fn em_update_fs(
    params: &FsParams,
    chain: &ChainPosterior,
    stats: &SlabStats,
    tie_sigma: bool,
) -> FsParams {
    let (lambda_f, p01) = chain_update(chain, params.lambda_f, params.p01);
    let sigma2_f = if tie_sigma {
        let act: f64 = stats.activity_sum.iter().sum();
        if act < MASS_GUARD {
            params.sigma2_f.clone()
        } else {
            let s = (stats.slab_energy.iter().sum::<f64>() / act).max(VAR_MIN);
            vec![s; params.sigma2_f.len()]
        }
    } else {
        params
            .sigma2_f
            .iter()
            .enumerate()
            .map(|(p, &old)| {
                let act = stats.activity_sum[p];
                if act < MASS_GUARD {
                    old
                } else {
                    (stats.slab_energy[p] / act).max(VAR_MIN)
                }
            })
            .collect()
    };
    FsParams {
        lambda_f,
        p01,
        p10: tied_p10(lambda_f, p01),
        sigma2_f,
    }
}

pub fn em_update_ds(params: &DsParams, taps: &[DsTapPosterior], stats: &SlabStats) -> DsParams {
    let taps = params
        .taps
        .iter()
        .zip(taps)
        .enumerate()
        .map(|(p, (old, post))| {
            let gamma = prob(post.activity);
            if post.activity < MASS_GUARD {
                return DsTapParams { gamma, ..*old };
            }
            let (lambda_d, p01) = chain_update(&post.active_chain, old.lambda_d, old.p01);
            let act = stats.activity_sum[p];
            let sigma2_d = if act < MASS_GUARD {
                old.sigma2_d
            } else {
                (stats.slab_energy[p] / act).max(VAR_MIN)
            };
            DsTapParams {
                lambda_d,
                p01,
                p10: tied_p10(lambda_d, p01),
                sigma2_d,
                gamma,
            }
        })
        .collect();
    DsParams {
        taps,
        epsilon: params.epsilon,
    }
}
