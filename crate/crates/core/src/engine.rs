//! The turbo iteration: Module A (LMMSE over a row-orthonormal operator),
//! Gaussian extrinsic messages in both directions, and a pluggable Module B.

use std::time::Instant;

use log::{debug, warn};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::channel::{ChannelMatrix, Domain, ObservationMatrix};
use crate::ds::DsParams;
use crate::em::EmState;
use crate::error::{check_len, Error, Result};
use crate::fs::FsParams;
use crate::linops::SensingOperator;
use crate::matrix::{ComplexMatrix, C64};
use crate::priors::BgPrior;

/// Per-tap Gaussian message: `N x P` means and one variance per tap.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtrinsicState {
    pub mean: ComplexMatrix,
    pub var: Vec<f64>,
}

/// Module B output has the same shape as an extrinsic message.
pub type Posterior = ExtrinsicState;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LearnedParams {
    Iid(Vec<BgPrior>),
    Fs(FsParams),
    Ds(DsParams),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Common-support marginals (frequency-support model).
    pub support_marginals: Option<Vec<f64>>,
    /// `P(t = 1)` per delay tap (delay-support model).
    pub column_activity: Option<Vec<f64>>,
}

/// Module B.
pub trait Denoiser {
    /// Domain of the channel this denoiser models.
    fn domain(&self) -> Domain;

    /// Per-tap prior second moment, when the prior is known. Learning
    /// denoisers return `None` and the engine starts from the per-entry
    /// signal power estimated from `Y`.
    fn prior_power(&self) -> Option<Vec<f64>>;

    /// Posterior mean and per-tap average variance given the extrinsic
    /// input `h = truth + CN(0, v_p)`.
    fn denoise(&mut self, pri_mean: &ComplexMatrix, pri_var: &[f64]) -> Result<Posterior>;

    fn learned_params(&self) -> Option<LearnedParams> {
        None
    }

    fn diagnostics(&self) -> Diagnostics {
        Diagnostics::default()
    }
}

/// Returns its input as the posterior: no prior information at all.
#[derive(Clone, Copy, Debug)]
pub struct IdentityDenoiser {
    pub domain: Domain,
}

impl Denoiser for IdentityDenoiser {
    fn domain(&self) -> Domain {
        self.domain
    }

    fn prior_power(&self) -> Option<Vec<f64>> {
        None
    }

    fn denoise(&mut self, pri_mean: &ComplexMatrix, pri_var: &[f64]) -> Result<Posterior> {
        Ok(ExtrinsicState {
            mean: pri_mean.clone(),
            var: pri_var.to_vec(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurboConfig {
    pub max_iters: usize,
    /// Stop once the relative change of the estimate falls below this.
    pub stop_tol: f64,
    /// Weight of the new extrinsic mean; 1 disables damping.
    pub damping: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl Default for TurboConfig {
    fn default() -> Self {
        Self {
            max_iters: 50,
            stop_tol: 1e-6,
            damping: 1.0,
            v_min: 1e-13,
            v_max: 1e13,
        }
    }
}

impl TurboConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(Error::invalid(format!("stop_tol={} must be nonnegative", self.stop_tol)));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::invalid(format!("damping={} outside (0,1]", self.damping)));
        }
        if !(self.v_min > 0.0 && self.v_min < self.v_max && self.v_max.is_finite()) {
            return Err(Error::invalid("variance clamp must satisfy 0 < v_min < v_max < inf"));
        }
        Ok(())
    }
}

/// LMMSE estimate of `h` from `y = A h + w` with prior `CN(h_pri, v_pri I)`.
///
/// Valid for row-orthonormal `A`, where the posterior covariance is
/// `v_pri I - v_pri^2 / (v_pri + sigma2) A^H A` with average diagonal
/// `v_pri - (M / N) v_pri^2 / (v_pri + sigma2)`.
pub fn lmmse_update(
    op: &SensingOperator,
    y: &[C64],
    h_pri: &[C64],
    v_pri: f64,
    sigma2: f64,
) -> Result<(Vec<C64>, f64)> {
    check_len("LMMSE observation", op.m(), y.len())?;
    check_len("LMMSE prior mean", op.n(), h_pri.len())?;
    if !(v_pri > 0.0 && v_pri.is_finite()) {
        return Err(Error::invalid(format!("prior variance {v_pri} must be positive")));
    }
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(Error::invalid(format!("noise variance {sigma2} is invalid")));
    }
    let predicted = op.apply_forward(h_pri)?;
    let residual: Vec<C64> = y.iter().zip(&predicted).map(|(a, b)| a - b).collect();
    let back = op.apply_adjoint(&residual)?;
    let gain = v_pri / (v_pri + sigma2);
    let h_post = h_pri.iter().zip(&back).map(|(h, b)| h + b * gain).collect();
    let v_post = v_pri - op.ratio() * v_pri * gain;
    Ok((h_post, v_post))
}

/// Result of dividing a Gaussian posterior by its prior.
#[derive(Clone, Debug, PartialEq)]
pub struct Extrinsic {
    pub mean: Vec<C64>,
    pub var: f64,
    /// The posterior was not more precise than the prior; the message was
    /// replaced by an uninformative one.
    pub degenerate: bool,
}

/// `v_ext = (1/v_post - 1/v_pri)^-1`, `h_ext = v_ext (h_post/v_post - h_pri/v_pri)`.
pub fn extrinsic(
    h_post: &[C64],
    v_post: f64,
    h_pri: &[C64],
    v_pri: f64,
    v_min: f64,
    v_max: f64,
) -> Result<Extrinsic> {
    check_len("extrinsic means", h_pri.len(), h_post.len())?;
    let v_post = v_post.clamp(v_min, v_max);
    let v_pri = v_pri.clamp(v_min, v_max);
    if v_post >= v_pri {
        return Ok(Extrinsic {
            mean: vec![C64::new(0.0, 0.0); h_post.len()],
            var: v_max,
            degenerate: true,
        });
    }
    let var = (1.0 / (1.0 / v_post - 1.0 / v_pri)).clamp(v_min, v_max);
    let mean = h_post
        .iter()
        .zip(h_pri)
        .map(|(post, pri)| (post / v_post - pri / v_pri) * var)
        .collect();
    Ok(Extrinsic {
        mean,
        var,
        degenerate: false,
    })
}

/// `(||h_hat - h||^2 / ||h||^2, 10 log10 of that)`.
pub fn nmse(h_hat: &ComplexMatrix, h: &ComplexMatrix) -> Result<(f64, f64)> {
    let energy = h.frobenius_sqr();
    if energy == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let ratio = h_hat.distance_sqr(h)? / energy;
    Ok((ratio, 10.0 * ratio.log10()))
}

/// An `f64` in dB that serializes `-inf` as the string `"-inf"`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Db(pub f64);

impl Serialize for Db {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else {
            s.serialize_str(&self.0.to_string())
        }
    }
}

impl<'de> Deserialize<'de> for Db {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Db(v)),
            Raw::Text(t) => t.parse().map(Db).map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    /// Final Module B posterior mean. Written separately through [`crate::io`].
    #[serde(skip)]
    pub h_hat: Option<ChannelMatrix>,
    pub seed: u64,
    /// NMSE after each iteration; empty without ground truth.
    pub nmse_trace_db: Vec<Db>,
    pub iterations_used: usize,
    pub converged: bool,
    pub degenerate_events: usize,
    pub learned_params: Option<LearnedParams>,
    /// Parameters after each EM step.
    pub param_trajectory: Vec<LearnedParams>,
    pub diagnostics: Diagnostics,
    pub wall_time_s: f64,
}

impl TrialResult {
    pub fn final_nmse_db(&self) -> Option<f64> {
        self.nmse_trace_db.last().map(|d| d.0)
    }

    pub fn seconds_per_iteration(&self) -> f64 {
        self.wall_time_s / self.iterations_used.max(1) as f64
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// `iteration,nmse_db` rows; `-inf` stays a literal string.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,nmse_db\n");
        for (i, d) in self.nmse_trace_db.iter().enumerate() {
            out.push_str(&format!("{},{}\n", i + 1, d.0));
        }
        out
    }
}

fn relative_change(new: &ComplexMatrix, old: &ComplexMatrix) -> f64 {
    let base = old.frobenius_sqr();
    let diff = new.distance_sqr(old).unwrap_or(f64::INFINITY);
    if base == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (diff / base).sqrt()
    }
}

/// Runs the turbo iteration on `Y` (one column per tap).
///
/// `ops` holds one operator shared by all taps or one per tap. `Y` must be
/// in the denoiser's domain. With `truth`, the NMSE of the estimate is
/// recorded after every iteration.
pub fn run_turbo(
    ops: &[SensingOperator],
    y: &ObservationMatrix,
    sigma2: f64,
    denoiser: &mut dyn Denoiser,
    config: &TurboConfig,
    truth: Option<&ChannelMatrix>,
    seed: u64,
) -> Result<TrialResult> {
    config.validate()?;
    let start = Instant::now();
    if y.domain != denoiser.domain() {
        return Err(Error::DomainMismatch {
            expected: denoiser.domain().to_string(),
            found: y.domain.to_string(),
        });
    }
    let op0 = ops
        .first()
        .ok_or_else(|| Error::invalid("at least one sensing operator is required"))?;
    let (n, p_taps) = (op0.n(), y.cols());
    if ops.len() != 1 {
        check_len("per-tap operators", p_taps, ops.len())?;
    }
    for op in ops {
        check_len("operator signal length", n, op.n())?;
        check_len("observation rows", op.m(), y.rows())?;
    }
    if !y.values.all_finite() {
        return Err(Error::NonFinite("observations".into()));
    }
    let truth = match truth {
        Some(t) => {
            check_len("truth rows", n, t.rows())?;
            check_len("truth columns", p_taps, t.cols())?;
            Some(t.to_domain(y.domain)?)
        }
        None => None,
    };

    let mut h_a_pri = ComplexMatrix::zeros(n, p_taps);
    let mut v_a_pri: Vec<f64> = match denoiser.prior_power() {
        Some(p) => {
            check_len("prior power", p_taps, p.len())?;
            p.iter().map(|v| v.clamp(config.v_min, config.v_max)).collect()
        }
        None => (0..p_taps)
            .map(|p| {
                let m = y.rows().max(1) as f64;
                let energy = y.values.col(p).iter().map(|v| v.norm_sqr()).sum::<f64>() / m;
                (energy - sigma2).max(sigma2).clamp(config.v_min, config.v_max)
            })
            .collect(),
    };
    let mut h_b_pri = ComplexMatrix::zeros(n, p_taps);
    let mut v_b_pri = vec![1.0; p_taps];

    let mut trace = Vec::new();
    let mut estimate: Option<ComplexMatrix> = None;
    let mut em = EmState::default();
    let mut degenerate = 0usize;
    let mut converged = false;
    let mut iterations = 0;
    let d = config.damping;

    for it in 0..config.max_iters {
        iterations = it + 1;
        for p in 0..p_taps {
            let op = &ops[p % ops.len()];
            let (h_post, v_post) =
                lmmse_update(op, y.values.col(p), h_a_pri.col(p), v_a_pri[p], sigma2)?;
            let ext = extrinsic(
                &h_post,
                v_post,
                h_a_pri.col(p),
                v_a_pri[p],
                config.v_min,
                config.v_max,
            )?;
            degenerate += ext.degenerate as usize;
            let col = h_b_pri.col_mut(p);
            for (dst, src) in col.iter_mut().zip(&ext.mean) {
                *dst = if it == 0 { *src } else { *src * d + *dst * (1.0 - d) };
            }
            v_b_pri[p] = ext.var;
        }

        let post = denoiser.denoise(&h_b_pri, &v_b_pri)?;
        if !post.mean.all_finite() || post.var.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("Module B output at iteration {iterations}")));
        }

        for p in 0..p_taps {
            let ext = extrinsic(
                post.mean.col(p),
                post.var[p],
                h_b_pri.col(p),
                v_b_pri[p],
                config.v_min,
                config.v_max,
            )?;
            degenerate += ext.degenerate as usize;
            let col = h_a_pri.col_mut(p);
            for (dst, src) in col.iter_mut().zip(&ext.mean) {
                *dst = if it == 0 { *src } else { *src * d + *dst * (1.0 - d) };
            }
            v_a_pri[p] = ext.var;
        }

        if let Some(t) = &truth {
            let (ratio, db) = nmse(&post.mean, &t.values)?;
            debug!("iteration {iterations}: nmse {db:.3} dB");
            if !ratio.is_finite() {
                return Err(Error::NonFinite(format!("NMSE at iteration {iterations}")));
            }
            trace.push(Db(db));
        }
        if let Some(params) = denoiser.learned_params() {
            em.record(params);
        }
        let change = estimate
            .as_ref()
            .map(|prev| relative_change(&post.mean, prev));
        estimate = Some(post.mean);
        if change.is_some_and(|c| c < config.stop_tol) {
            converged = true;
            break;
        }
    }
    if degenerate > 0 {
        debug!("{degenerate} degenerate extrinsic updates replaced by uninformative messages");
    }
    if !converged {
        warn!("turbo iteration did not converge in {} iterations", config.max_iters);
    }

    Ok(TrialResult {
        h_hat: estimate.map(|e| ChannelMatrix::new(e, y.domain)),
        seed,
        nmse_trace_db: trace,
        iterations_used: iterations,
        converged,
        degenerate_events: degenerate,
        learned_params: denoiser.learned_params(),
        param_trajectory: em.trajectory,
        diagnostics: denoiser.diagnostics(),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}
