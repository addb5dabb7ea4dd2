//! Module B for the delay-support model: one support chain per delay tap,
//! gated by a binary tap-activity state `t`.
//!
//! Under `t = 0` the chain is pinned to zero except for an `epsilon`
//! leakage that keeps every factor strictly positive.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelGenSpec, Domain};
use crate::em;
use crate::engine::{Denoiser, Diagnostics, LearnedParams, Posterior};
use crate::error::{check_len, Error, Result};
use crate::matrix::ComplexMatrix;
use crate::priors::{
    bg_scalar_posterior, bg_slab_energy, check_module_b_input, forward_backward_with, logistic,
    logit, support_evidence_logit, ChainPosterior, SlabStats, EVIDENCE_CLIP,
};

pub const DEFAULT_EPSILON: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DsTapParams {
    pub lambda_d: f64,
    pub p01: f64,
    pub p10: f64,
    pub sigma2_d: f64,
    pub gamma: f64,
}

impl DsTapParams {
    /// `p10` tied so that `lambda_d` is the stationary activity.
    pub fn tied(lambda_d: f64, p01: f64, sigma2_d: f64, gamma: f64) -> Self {
        Self {
            lambda_d,
            p01,
            p10: p01 * lambda_d / (1.0 - lambda_d),
            sigma2_d,
            gamma,
        }
    }

    fn validate(&self, p: usize) -> Result<()> {
        let open = |x: f64| x > 0.0 && x < 1.0;
        if !open(self.lambda_d) || !open(self.p01) || !open(self.p10) {
            return Err(Error::invalid(format!(
                "tap {p}: chain probabilities must lie in (0,1)"
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::invalid(format!("tap {p}: gamma={} outside [0,1]", self.gamma)));
        }
        if !(self.sigma2_d > 0.0 && self.sigma2_d.is_finite()) {
            return Err(Error::invalid(format!("tap {p}: nonzero variance must be positive")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DsParams {
    pub taps: Vec<DsTapParams>,
    pub epsilon: f64,
}

impl DsParams {
    pub fn new(taps: Vec<DsTapParams>, epsilon: f64) -> Result<Self> {
        let params = Self { taps, epsilon };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 0.1) {
            return Err(Error::invalid(format!("epsilon={} outside (0, 0.1]", self.epsilon)));
        }
        if self.taps.is_empty() {
            return Err(Error::invalid("DS parameters need at least one tap"));
        }
        for (p, tap) in self.taps.iter().enumerate() {
            tap.validate(p)?;
        }
        Ok(())
    }

    /// The generator's own parameters. Taps at or beyond `L` get the
    /// smallest admissible activity.
    pub fn matched_to(spec: &ChannelGenSpec, epsilon: f64) -> Result<Self> {
        spec.validate()?;
        let lambda = spec.activity().clamp(em::PROB_MIN, em::PROB_MAX);
        let taps = (0..spec.p_taps)
            .map(|p| DsTapParams {
                lambda_d: lambda,
                p01: spec.p01,
                p10: spec.p10,
                sigma2_d: spec.tap_variances[p],
                gamma: if p < spec.l_max {
                    spec.gamma.clamp(em::PROB_MIN, em::PROB_MAX)
                } else {
                    em::PROB_MIN
                },
            })
            .collect();
        Self::new(taps, epsilon)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum DsMode {
    /// Exact inference by conditioning on the tap-activity state.
    #[default]
    Exact,
    /// One round of loopy message passing between chain and activity state.
    PaperSchedule,
}

impl fmt::Display for DsMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DsMode::Exact => "EXACT",
            DsMode::PaperSchedule => "PAPER_SCHEDULE",
        })
    }
}

impl FromStr for DsMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "EXACT" => Ok(DsMode::Exact),
            "PAPER_SCHEDULE" => Ok(DsMode::PaperSchedule),
            other => Err(Error::invalid(format!("unknown DS mode `{other}`"))),
        }
    }
}

/// Posterior quantities of one delay tap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DsTapPosterior {
    /// `P(t = 1 | evidence)`.
    pub activity: f64,
    /// `P(s_n = 1 | evidence)`.
    pub marginal: Vec<f64>,
    /// Chain posterior conditioned on `t = 1` (EM statistics).
    pub active_chain: ChainPosterior,
}

#[derive(Clone, Debug)]
pub struct DsOutput {
    pub posterior: Posterior,
    pub taps: Vec<DsTapPosterior>,
    pub stats: SlabStats,
}

/// `P(t = 1)` per tap.
pub fn ds_column_activity(taps: &[DsTapPosterior]) -> Vec<f64> {
    taps.iter().map(|t| t.activity).collect()
}

fn active_chain(evidence: &[f64], tap: &DsTapParams) -> ChainPosterior {
    forward_backward_with(evidence, tap.lambda_d, |_| (tap.p10, tap.p01))
}

fn silent_chain(evidence: &[f64], eps: f64) -> ChainPosterior {
    forward_backward_with(evidence, eps, |_| (eps, 1.0 - eps))
}

fn exact_tap(evidence: &[f64], tap: &DsTapParams, eps: f64) -> DsTapPosterior {
    let on = active_chain(evidence, tap);
    let off = silent_chain(evidence, eps);
    let activity = if tap.gamma >= 1.0 {
        1.0
    } else if tap.gamma <= 0.0 {
        0.0
    } else {
        logistic(logit(tap.gamma) + on.log_partition - off.log_partition)
    };
    let marginal = on
        .marginal
        .iter()
        .zip(&off.marginal)
        .map(|(a, b)| activity * a + (1.0 - activity) * b)
        .collect();
    DsTapPosterior {
        activity,
        marginal,
        active_chain: on,
    }
}

/// Sum-product message from transition factor `n` to `t`, as `P(t = 1)`.
fn factor_to_gate(
    tap: &DsTapParams,
    eps: f64,
    left: Option<[f64; 2]>,
    right: [f64; 2],
) -> f64 {
    let mut msg = [0.0; 2];
    for (t, slot) in msg.iter_mut().enumerate() {
        let (init, p10, p01) = if t == 1 {
            (tap.lambda_d, tap.p10, tap.p01)
        } else {
            (eps, eps, 1.0 - eps)
        };
        *slot = match left {
            None => (1.0 - init) * right[0] + init * right[1],
            Some(q) => {
                q[0] * ((1.0 - p10) * right[0] + p10 * right[1])
                    + q[1] * (p01 * right[0] + (1.0 - p01) * right[1])
            }
        };
    }
    msg[1] / (msg[0] + msg[1])
}

fn sweep_with_gate(evidence: &[f64], tap: &DsTapParams, eps: f64, gate: &[f64]) -> ChainPosterior {
    let mix = |theta: f64, on: f64, off: f64| theta * on + (1.0 - theta) * off;
    forward_backward_with(evidence, mix(gate[0], tap.lambda_d, eps), |n| {
        (
            mix(gate[n], tap.p10, eps),
            mix(gate[n], tap.p01, 1.0 - eps),
        )
    })
}

fn scheduled_tap(evidence: &[f64], tap: &DsTapParams, eps: f64) -> DsTapPosterior {
    let n = evidence.len();
    let gamma = tap.gamma.clamp(em::PROB_MIN, em::PROB_MAX);
    let first = sweep_with_gate(evidence, tap, eps, &vec![gamma; n]);

    let fold = |lam: f64, e: f64| {
        let l = logit(lam) + e;
        [logistic(-l), logistic(l)]
    };
    let upward: Vec<f64> = (0..n)
        .map(|i| {
            let right = fold(first.backward[i], evidence[i]);
            let left = (i > 0).then(|| fold(first.forward[i - 1], evidence[i - 1]));
            let theta = factor_to_gate(tap, eps, left, right);
            logit(theta.clamp(EVIDENCE_CLIP, 1.0 - EVIDENCE_CLIP))
        })
        .collect();
    let total: f64 = upward.iter().sum();
    let gate: Vec<f64> = upward
        .iter()
        .map(|u| logistic(logit(gamma) + total - u))
        .collect();

    let second = sweep_with_gate(evidence, tap, eps, &gate);
    let activity = logistic(logit(gamma) + total);
    let active_chain = active_chain(evidence, tap);
    DsTapPosterior {
        activity,
        marginal: second.marginal,
        active_chain,
    }
}

pub fn denoise_ds(
    pri_mean: &ComplexMatrix,
    pri_var: &[f64],
    params: &DsParams,
    mode: DsMode,
) -> Result<DsOutput> {
    check_module_b_input(pri_mean, pri_var)?;
    check_len("DS taps", pri_mean.cols(), params.taps.len())?;
    let (n, p_taps) = pri_mean.shape();
    let eps = params.epsilon;

    let mut mean = ComplexMatrix::zeros(n, p_taps);
    let mut var = Vec::with_capacity(p_taps);
    let mut taps = Vec::with_capacity(p_taps);
    let mut stats = SlabStats::default();
    for (p, tap) in params.taps.iter().enumerate() {
        let v = pri_var[p];
        let column = pri_mean.col(p);
        let evidence: Vec<f64> = column
            .iter()
            .map(|&m| support_evidence_logit(m, v, tap.sigma2_d))
            .collect();
        let post = match mode {
            DsMode::Exact => exact_tap(&evidence, tap, eps),
            DsMode::PaperSchedule => scheduled_tap(&evidence, tap, eps),
        };
        let (mut var_sum, mut energy) = (0.0, 0.0);
        for (i, &m) in column.iter().enumerate() {
            let pi_post = post.marginal[i];
            let (mu, var_i) = bg_scalar_posterior(m, v, pi_post, tap.sigma2_d);
            mean.set(i, p, mu);
            var_sum += var_i;
            energy += bg_slab_energy(m, v, pi_post, tap.sigma2_d);
        }
        var.push(var_sum / n as f64);
        stats.activity_sum.push(post.marginal.iter().sum());
        stats.slab_energy.push(energy);
        taps.push(post);
    }
    Ok(DsOutput {
        posterior: Posterior { mean, var },
        taps,
        stats,
    })
}

/// Delay-support Module B with optional EM learning.
#[derive(Clone, Debug)]
pub struct DsDenoiser {
    pub params: DsParams,
    pub mode: DsMode,
    pub learn: bool,
    last_activity: Option<Vec<f64>>,
}

impl DsDenoiser {
    pub fn new(params: DsParams, mode: DsMode) -> Self {
        Self {
            params,
            mode,
            learn: false,
            last_activity: None,
        }
    }

    pub fn with_em(mut self, learn: bool) -> Self {
        self.learn = learn;
        self
    }
}

impl Denoiser for DsDenoiser {
    fn domain(&self) -> Domain {
        Domain::AngleDelay
    }

    fn prior_power(&self) -> Option<Vec<f64>> {
        if self.learn {
            return None;
        }
        Some(
            self.params
                .taps
                .iter()
                .map(|t| t.gamma * t.lambda_d * t.sigma2_d)
                .collect(),
        )
    }

    fn denoise(&mut self, pri_mean: &ComplexMatrix, pri_var: &[f64]) -> Result<Posterior> {
        let out = denoise_ds(pri_mean, pri_var, &self.params, self.mode)?;
        if self.learn {
            self.params = em::em_update_ds(&self.params, &out.taps, &out.stats);
        }
        self.last_activity = Some(ds_column_activity(&out.taps));
        Ok(out.posterior)
    }

    fn learned_params(&self) -> Option<LearnedParams> {
        Some(LearnedParams::Ds(self.params.clone()))
    }

    fn diagnostics(&self) -> Diagnostics {
        Diagnostics {
            support_marginals: None,
            column_activity: self.last_activity.clone(),
        }
    }
}
