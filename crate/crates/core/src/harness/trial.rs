//! One Monte-Carlo trial and ordered parallel batches of them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{generate_channel, observe, ChannelMatrix, Domain, ObservationMatrix};
use crate::ds::{DsDenoiser, DsParams};
use crate::em;
use crate::engine::{nmse, run_turbo, Denoiser, TrialResult};
use crate::error::{check_len, Error, Result};
use crate::fs::{FsDenoiser, FsParams};
use crate::io;
use crate::linops::{make_sensing_operator, SensingOperator};
use crate::priors::{BgPrior, IidDenoiser};
use crate::rng::{stream, Stream};

use super::config::{noise_variance, Algorithm, ChannelSource, ExperimentConfig};

/// Everything drawn for one trial before estimation starts.
#[derive(Clone, Debug)]
pub struct TrialSetup {
    pub seed: u64,
    pub truth: ChannelMatrix,
    pub ops: Vec<SensingOperator>,
    /// Observations in the angle-frequency domain.
    pub y: ObservationMatrix,
    pub sigma2: f64,
}

impl TrialSetup {
    /// Observations in `domain` (delay-domain conversion needs one shared
    /// operator).
    pub fn observations(&self, domain: Domain) -> Result<ObservationMatrix> {
        if domain == Domain::AngleDelay && self.ops.len() != 1 {
            return Err(Error::invalid(
                "delay-domain observations need one operator shared by all taps",
            ));
        }
        self.y.to_domain(domain)
    }
}

pub fn trial_seed(cfg: &ExperimentConfig, index: usize) -> u64 {
    cfg.base_seed.wrapping_add(index as u64)
}

/// Loads the configured channel file, if any, and checks its shape.
pub fn load_channel(cfg: &ExperimentConfig) -> Result<Option<ChannelMatrix>> {
    match &cfg.channel {
        ChannelSource::Synthetic => Ok(None),
        ChannelSource::File(path) => {
            let h = io::load(path)?;
            check_len("channel file rows", cfg.n, h.rows())?;
            check_len("channel file columns", cfg.p, h.cols())?;
            Ok(Some(h))
        }
    }
}

pub fn prepare_trial(
    cfg: &ExperimentConfig,
    file_channel: Option<&ChannelMatrix>,
    m: usize,
    snr_db: f64,
    index: usize,
) -> Result<TrialSetup> {
    let seed = trial_seed(cfg, index);
    let (truth, energy) = match file_channel {
        Some(h) => (h.clone(), h.values.frobenius_sqr()),
        None => {
            let spec = cfg.spec();
            let h = generate_channel(&spec, &mut stream(seed, Stream::Channel))?;
            (h, spec.expected_energy())
        }
    };
    let ops = if cfg.shared_operator {
        vec![make_sensing_operator(cfg.n, m, cfg.sensing, seed)?]
    } else {
        (0..cfg.p)
            .map(|p| make_sensing_operator(cfg.n, m, cfg.sensing, seed.wrapping_add((p as u64) << 40)))
            .collect::<Result<_>>()?
    };
    let sigma2 = noise_variance(energy, cfg.n, cfg.p, snr_db);
    let freq = truth.to_domain(Domain::AngleFrequency)?;
    let y = observe(&ops, &freq, sigma2, &mut stream(seed, Stream::Noise))?;
    Ok(TrialSetup {
        seed,
        truth,
        ops,
        y,
        sigma2,
    })
}

/// The Module B of `algorithm`, with generator parameters or EM-initialized
/// ones learned from `y` (in the algorithm's domain).
pub fn build_denoiser(
    cfg: &ExperimentConfig,
    algorithm: Algorithm,
    y: &ObservationMatrix,
    op: &SensingOperator,
) -> Result<Box<dyn Denoiser>> {
    let spec = cfg.spec();
    Ok(match (algorithm, cfg.em) {
        (Algorithm::TurboCs, false) => {
            let fs = FsParams::matched_to(&spec)?;
            let priors = fs
                .sigma2_f
                .iter()
                .map(|&s| BgPrior::new(fs.lambda_f, s))
                .collect::<Result<_>>()?;
            Box::new(IidDenoiser::new(priors, Domain::AngleFrequency))
        }
        (Algorithm::TurboCs, true) => Box::new(
            IidDenoiser::new(em::em_init_iid(y, op)?, Domain::AngleFrequency).with_em(true),
        ),
        (Algorithm::StcsFs, learn) => {
            let params = if learn {
                em::em_init_fs(y, op)?
            } else {
                FsParams::matched_to(&spec)?
            };
            Box::new(
                FsDenoiser::new(params)
                    .with_em(learn)
                    .with_tied_sigma(cfg.tie_sigma),
            )
        }
        (Algorithm::StcsDs, learn) => {
            let params = if learn {
                em::em_init_ds(y, op, cfg.epsilon)?
            } else {
                DsParams::matched_to(&spec, cfg.epsilon)?
            };
            Box::new(DsDenoiser::new(params, cfg.ds_mode).with_em(learn))
        }
    })
}

pub fn algorithm_domain(algorithm: Algorithm) -> Domain {
    match algorithm {
        Algorithm::TurboCs | Algorithm::StcsFs => Domain::AngleFrequency,
        Algorithm::StcsDs => Domain::AngleDelay,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub algorithm: String,
    pub m: usize,
    pub snr_db: f64,
    pub index: usize,
    pub seed: u64,
    pub nmse_linear: f64,
    pub nmse_db: f64,
    pub result: TrialResult,
}

pub fn run_prepared(
    cfg: &ExperimentConfig,
    algorithm: Algorithm,
    setup: &TrialSetup,
) -> Result<TrialResult> {
    let domain = algorithm_domain(algorithm);
    let y = setup.observations(domain)?;
    let mut den = build_denoiser(cfg, algorithm, &y, &setup.ops[0])?;
    run_turbo(
        &setup.ops,
        &y,
        setup.sigma2,
        den.as_mut(),
        &cfg.turbo,
        Some(&setup.truth),
        setup.seed,
    )
}

pub fn run_trial(
    cfg: &ExperimentConfig,
    file_channel: Option<&ChannelMatrix>,
    algorithm: Algorithm,
    m: usize,
    snr_db: f64,
    index: usize,
) -> Result<TrialOutcome> {
    let setup = prepare_trial(cfg, file_channel, m, snr_db, index)?;
    let result = run_prepared(cfg, algorithm, &setup)?;
    let estimate = result
        .h_hat
        .as_ref()
        .ok_or_else(|| Error::invalid("turbo run produced no estimate"))?;
    let truth = setup.truth.to_domain(estimate.domain)?;
    let (nmse_linear, nmse_db) = nmse(&estimate.values, &truth.values)?;
    if !nmse_linear.is_finite() {
        return Err(Error::NonFinite(format!("NMSE of trial {index}")));
    }
    Ok(TrialOutcome {
        algorithm: algorithm.to_string(),
        m,
        snr_db,
        index,
        seed: setup.seed,
        nmse_linear,
        nmse_db,
        result,
    })
}

/// Runs `cfg.trials` trials in parallel; results are in trial order.
pub fn run_trials(
    cfg: &ExperimentConfig,
    file_channel: Option<&ChannelMatrix>,
    algorithm: Algorithm,
    m: usize,
    snr_db: f64,
) -> Vec<Result<TrialOutcome>> {
    (0..cfg.trials)
        .into_par_iter()
        .map(|i| run_trial(cfg, file_channel, algorithm, m, snr_db, i))
        .collect()
}

/// Statistics over the successful trials of one grid cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub trials: usize,
    pub failed: usize,
    pub mean_nmse_linear: f64,
    pub stderr_linear: f64,
    /// `10 log10` of the mean linear NMSE.
    pub mean_nmse_db: f64,
    /// Delta-method standard error of `mean_nmse_db`.
    pub stderr_db: f64,
    pub median_nmse_db: f64,
    pub mean_iterations: f64,
    pub converged_fraction: f64,
}

impl Summary {
    pub fn from_outcomes(outcomes: &[Result<TrialOutcome>]) -> Self {
        let ok: Vec<&TrialOutcome> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
        let failed = outcomes.len() - ok.len();
        let k = ok.len();
        if k == 0 {
            return Self {
                trials: 0,
                failed,
                mean_nmse_linear: f64::NAN,
                stderr_linear: f64::NAN,
                mean_nmse_db: f64::NAN,
                stderr_db: f64::NAN,
                median_nmse_db: f64::NAN,
                mean_iterations: f64::NAN,
                converged_fraction: f64::NAN,
            };
        }
        let lin: Vec<f64> = ok.iter().map(|o| o.nmse_linear).collect();
        let mean = lin.iter().sum::<f64>() / k as f64;
        let stderr = if k > 1 {
            (lin.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1) as f64 / k as f64).sqrt()
        } else {
            0.0
        };
        let mut dbs: Vec<f64> = ok.iter().map(|o| o.nmse_db).collect();
        dbs.sort_by(f64::total_cmp);
        let median = if k % 2 == 1 {
            dbs[k / 2]
        } else {
            0.5 * (dbs[k / 2 - 1] + dbs[k / 2])
        };
        let stderr_db = if mean > 0.0 {
            10.0 / std::f64::consts::LN_10 * stderr / mean
        } else {
            0.0
        };
        Self {
            trials: k,
            failed,
            mean_nmse_linear: mean,
            stderr_linear: stderr,
            mean_nmse_db: 10.0 * mean.log10(),
            stderr_db,
            median_nmse_db: median,
            mean_iterations: ok.iter().map(|o| o.result.iterations_used as f64).sum::<f64>()
                / k as f64,
            converged_fraction: ok.iter().filter(|o| o.result.converged).count() as f64 / k as f64,
        }
    }
}
