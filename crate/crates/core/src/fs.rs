//! Module B for the frequency-support model: one support chain shared by
//! all P angle-frequency taps.
//!
//! The factor graph is a tree, so a single forward/backward sweep over the
//! summed per-tap evidence gives exact support marginals.

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelGenSpec, Domain};
use crate::em;
use crate::engine::{Denoiser, Diagnostics, LearnedParams, Posterior};
use crate::error::{check_len, Error, Result};
use crate::matrix::ComplexMatrix;
use crate::priors::{
    bg_scalar_posterior, bg_slab_energy, chain_forward_backward, check_module_b_input, logistic,
    logit, support_evidence_logit, ChainParams, ChainPosterior, SlabStats,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FsParams {
    /// Activity of the first position and, when tied, of the whole chain.
    pub lambda_f: f64,
    pub p01: f64,
    pub p10: f64,
    /// Nonzero variance per tap.
    pub sigma2_f: Vec<f64>,
}

impl FsParams {
    /// `p10` tied so that `lambda_f` is the stationary activity.
    pub fn tied(lambda_f: f64, p01: f64, sigma2_f: Vec<f64>) -> Result<Self> {
        let p10 = p01 * lambda_f / (1.0 - lambda_f);
        let params = Self {
            lambda_f,
            p01,
            p10,
            sigma2_f,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        ChainParams::with_initial(self.p10, self.p01, self.lambda_f)?;
        if self.sigma2_f.is_empty() {
            return Err(Error::invalid("FS parameters need at least one tap"));
        }
        if self.sigma2_f.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("FS nonzero variances must be positive"));
        }
        Ok(())
    }

    pub fn chain(&self) -> ChainParams {
        ChainParams {
            p10: self.p10,
            p01: self.p01,
            lambda0: self.lambda_f,
        }
    }

    /// Frequency-domain parameters implied by a delay-domain generator.
    ///
    /// An angle bin is active in frequency whenever any delay tap is active
    /// there. Activity and the `1 -> 0` rate follow exactly from the
    /// independent tap chains; the nonzero variance matches the average
    /// per-entry power.
    pub fn matched_to(spec: &ChannelGenSpec) -> Result<Self> {
        spec.validate()?;
        let lambda0 = spec.activity();
        let active: Vec<usize> = (0..spec.l_max).collect();
        let gamma = spec.gamma;
        let zero = active.iter().map(|_| 1.0 - gamma * lambda0).product::<f64>();
        let both_zero = active
            .iter()
            .map(|_| (1.0 - gamma) + gamma * (1.0 - lambda0) * (1.0 - spec.p10))
            .product::<f64>();
        let lambda_f = (1.0 - zero).clamp(em::PROB_MIN, em::PROB_MAX);
        let p01 = ((zero - both_zero) / lambda_f).clamp(em::PROB_MIN, em::PROB_MAX);
        let power = (0..spec.p_taps).map(|p| spec.tap_power(p)).sum::<f64>() / spec.p_taps as f64;
        let sigma2 = (power / lambda_f).max(em::VAR_MIN);
        Self::tied(lambda_f, p01, vec![sigma2; spec.p_taps])
    }
}

#[derive(Clone, Debug)]
pub struct FsOutput {
    pub posterior: Posterior,
    pub chain: ChainPosterior,
    /// Per-entry extrinsic activity from the rest of the graph, column-major.
    pub extrinsic_activity: Vec<f64>,
    pub stats: SlabStats,
}

/// Own-term share of the absolute evidence above which the leave-one-out
/// sum is recomputed directly instead of by subtraction.
const DOMINANT_SHARE: f64 = 0.5;

pub fn denoise_fs(pri_mean: &ComplexMatrix, pri_var: &[f64], params: &FsParams) -> Result<FsOutput> {
    check_module_b_input(pri_mean, pri_var)?;
    check_len("FS nonzero variances", pri_mean.cols(), params.sigma2_f.len())?;
    let (n, p_taps) = pri_mean.shape();

    let mut evidence = vec![0.0; n * p_taps];
    for p in 0..p_taps {
        for (i, &m) in pri_mean.col(p).iter().enumerate() {
            evidence[p * n + i] = support_evidence_logit(m, pri_var[p], params.sigma2_f[p]);
        }
    }
    let mut total = vec![0.0; n];
    let mut magnitude = vec![0.0; n];
    for p in 0..p_taps {
        for i in 0..n {
            let e = evidence[p * n + i];
            total[i] += e;
            magnitude[i] += e.abs();
        }
    }

    let chain = chain_forward_backward(&total, &params.chain());
    let mut extrinsic_activity = vec![0.0; n * p_taps];
    for i in 0..n {
        let message = logit(chain.forward[i]) + logit(chain.backward[i]);
        for p in 0..p_taps {
            let own = evidence[p * n + i];
            let rest = if own.abs() > DOMINANT_SHARE * magnitude[i] {
                (0..p_taps)
                    .filter(|&q| q != p)
                    .map(|q| evidence[q * n + i])
                    .sum()
            } else {
                total[i] - own
            };
            extrinsic_activity[p * n + i] = logistic(message + rest);
        }
    }

    let mut mean = ComplexMatrix::zeros(n, p_taps);
    let mut var = Vec::with_capacity(p_taps);
    let mut stats = SlabStats::default();
    for p in 0..p_taps {
        let (v, s2) = (pri_var[p], params.sigma2_f[p]);
        let (mut var_sum, mut energy) = (0.0, 0.0);
        for (i, &m) in pri_mean.col(p).iter().enumerate() {
            let pi_post = chain.marginal[i];
            let (mu, var_i) = bg_scalar_posterior(m, v, pi_post, s2);
            mean.set(i, p, mu);
            var_sum += var_i;
            energy += bg_slab_energy(m, v, pi_post, s2);
        }
        var.push(var_sum / n as f64);
        stats.activity_sum.push(chain.marginal.iter().sum());
        stats.slab_energy.push(energy);
    }

    Ok(FsOutput {
        posterior: Posterior { mean, var },
        chain,
        extrinsic_activity,
        stats,
    })
}

/// Frequency-support Module B with optional EM learning.
#[derive(Clone, Debug)]
pub struct FsDenoiser {
    pub params: FsParams,
    pub learn: bool,
    /// Learn one nonzero variance shared by all taps.
    pub tie_sigma: bool,
    last_marginals: Option<Vec<f64>>,
}

impl FsDenoiser {
    pub fn new(params: FsParams) -> Self {
        Self {
            params,
            learn: false,
            tie_sigma: false,
            last_marginals: None,
        }
    }

    pub fn with_em(mut self, learn: bool) -> Self {
        self.learn = learn;
        self
    }

    pub fn with_tied_sigma(mut self, tie: bool) -> Self {
        self.tie_sigma = tie;
        self
    }
}

impl Denoiser for FsDenoiser {
    fn domain(&self) -> Domain {
        Domain::AngleFrequency
    }

    fn prior_power(&self) -> Option<Vec<f64>> {
        if self.learn {
            return None;
        }
        Some(
            self.params
                .sigma2_f
                .iter()
                .map(|s| s * self.params.lambda_f)
                .collect(),
        )
    }

    fn denoise(&mut self, pri_mean: &ComplexMatrix, pri_var: &[f64]) -> Result<Posterior> {
        let out = denoise_fs(pri_mean, pri_var, &self.params)?;
        if self.learn {
            self.params = em::em_update_fs(&self.params, &out.chain, &out.stats, self.tie_sigma);
        }
        self.last_marginals = Some(out.chain.marginal);
        Ok(out.posterior)
    }

    fn learned_params(&self) -> Option<LearnedParams> {
        Some(LearnedParams::Fs(self.params.clone()))
    }

    fn diagnostics(&self) -> Diagnostics {
        Diagnostics {
            support_marginals: self.last_marginals.clone(),
            column_activity: None,
        }
    }
}
