//! State evolution: a scalar recursion predicting the per-iteration MSE of
//! the turbo iteration.
//!
//! Module A maps an input MSE `tau_A` to `f(tau_A) = (N/M)(tau_A + sigma2) - tau_A`
//! in closed form. Module B is evaluated by Monte Carlo: channels from the
//! generator plus `CN(0, tau_B)` noise go through the denoiser and the
//! extrinsic step. Variances are tracked per tap because delay taps beyond
//! the delay spread carry no energy at all.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{generate_channel, ChannelGenSpec};
use crate::engine::{extrinsic, Denoiser, TurboConfig};
use crate::error::{Error, Result};
use crate::matrix::{ComplexMatrix, C64};
use crate::rng::{complex_gaussian, stream, Stream};

/// `f(tau_A)`, clamped below at `v_min`. The flag reports the clamp.
pub fn se_module_a(tau_a: f64, sigma2: f64, m: usize, n: usize, v_min: f64) -> Result<(f64, bool)> {
    if m == 0 || m > n {
        return Err(Error::invalid(format!("need 1 <= m <= n, got m={m}, n={n}")));
    }
    if !(tau_a >= 0.0 && sigma2 >= 0.0) {
        return Err(Error::invalid("variances must be nonnegative"));
    }
    let tau_b = n as f64 / m as f64 * (tau_a + sigma2) - tau_a;
    if tau_b <= v_min {
        Ok((v_min, true))
    } else {
        Ok((tau_b, false))
    }
}

/// Monte-Carlo evaluation of Module B.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModuleBEstimate {
    /// Extrinsic output MSE per tap: the next `tau_A`.
    pub tau_a: Vec<f64>,
    /// Posterior-mean MSE per tap.
    pub posterior_mse: Vec<f64>,
    /// Standard error of the tap-averaged `tau_A`.
    pub stderr: f64,
    pub trials: usize,
}

impl ModuleBEstimate {
    pub fn mean_tau_a(&self) -> f64 {
        mean(&self.tau_a)
    }
}

fn mse(est: &[C64], truth: &[C64]) -> f64 {
    est.iter().zip(truth).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / truth.len() as f64
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Evaluates Module B at per-tap input variances `tau_b`.
///
/// `make_denoiser` builds a fresh denoiser per trial; trial `k` draws from
/// the streams of seed `seed + k`. When the denoiser returns a posterior no
/// more precise than its input, the posterior itself is used as output.
pub fn se_module_b_mc(
    tau_b: &[f64],
    make_denoiser: &(dyn Fn() -> Box<dyn Denoiser> + Sync),
    spec: &ChannelGenSpec,
    trials: usize,
    seed: u64,
) -> Result<ModuleBEstimate> {
    if trials == 0 {
        return Err(Error::invalid("state evolution needs at least one trial"));
    }
    if tau_b.len() != spec.p_taps {
        return Err(Error::DimensionMismatch {
            context: "per-tap input variances",
            expected: spec.p_taps,
            found: tau_b.len(),
        });
    }
    if tau_b.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(Error::invalid("Module B input variances must be positive"));
    }
    let cfg = TurboConfig::default();
    let per_trial: Vec<(Vec<f64>, Vec<f64>)> = (0..trials)
        .into_par_iter()
        .map(|k| -> Result<(Vec<f64>, Vec<f64>)> {
            let trial_seed = seed.wrapping_add(k as u64);
            let mut den = make_denoiser();
            let h = generate_channel(spec, &mut stream(trial_seed, Stream::Channel))?
                .to_domain(den.domain())?;
            let mut noise = stream(trial_seed, Stream::MonteCarlo);
            let (n, p_taps) = h.values.shape();
            let r = ComplexMatrix::from_fn(n, p_taps, |row, c| {
                h.values.get(row, c) + complex_gaussian(&mut noise, tau_b[c])
            });
            let post = den.denoise(&r, tau_b)?;
            let mut ext_mse = Vec::with_capacity(p_taps);
            let mut post_mse = Vec::with_capacity(p_taps);
            for p in 0..p_taps {
                let truth = h.values.col(p);
                let ext = extrinsic(post.mean.col(p), post.var[p], r.col(p), tau_b[p], cfg.v_min, cfg.v_max)?;
                let out = if ext.degenerate { post.mean.col(p) } else { &ext.mean[..] };
                ext_mse.push(mse(out, truth));
                post_mse.push(mse(post.mean.col(p), truth));
            }
            Ok((ext_mse, post_mse))
        })
        .collect::<Result<_>>()?;

    let p_taps = spec.p_taps;
    let mut tau_a = vec![0.0; p_taps];
    let mut posterior_mse = vec![0.0; p_taps];
    for (e, q) in &per_trial {
        for p in 0..p_taps {
            tau_a[p] += e[p] / trials as f64;
            posterior_mse[p] += q[p] / trials as f64;
        }
    }
    let averages: Vec<f64> = per_trial.iter().map(|(e, _)| mean(e)).collect();
    let m = mean(&averages);
    let stderr = if trials > 1 {
        let var = averages.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (trials - 1) as f64;
        (var / trials as f64).sqrt()
    } else {
        f64::NAN
    };
    Ok(ModuleBEstimate {
        tau_a,
        posterior_mse,
        stderr,
        trials,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub trials: usize,
    pub seed: u64,
    pub v_min: f64,
}

impl Default for SeConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 100,
            trials: 200,
            seed: 0,
            v_min: 1e-13,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeStep {
    pub iter: usize,
    /// Tap-averaged Module A input variance.
    pub tau_a: f64,
    /// Tap-averaged Module B input variance.
    pub tau_b: f64,
    pub mc_stderr: f64,
    /// Predicted NMSE of the Module B posterior mean after this iteration.
    pub nmse_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeState {
    pub trajectory: Vec<SeStep>,
    pub tau_a: Vec<f64>,
    pub tau_b: Vec<f64>,
    pub converged: bool,
    /// `tau_A` rose for more than three consecutive iterations.
    pub oscillation: bool,
    /// Predicted final NMSE of the posterior mean, in dB.
    pub predicted_nmse_db: f64,
    /// `tau_A / (E ||H||^2 / NP)` at the fixed point, in dB.
    pub tau_nmse_db: f64,
}

impl SeState {
    pub fn final_tau_a(&self) -> f64 {
        mean(&self.tau_a)
    }

    /// `iter,tau_A,tau_B,mc_stderr` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,tau_A,tau_B,mc_stderr\n");
        for s in &self.trajectory {
            out.push_str(&format!("{},{},{},{}\n", s.iter, s.tau_a, s.tau_b, s.mc_stderr));
        }
        out
    }
}

/// Iterates `tau_A <- g(f(tau_A))` from the prior signal power.
///
/// Every evaluation of `g` reuses the same Monte-Carlo seeds, which makes
/// `g` a deterministic function and lets the recursion settle exactly.
pub fn se_fixed_point(
    sigma2: f64,
    m: usize,
    n: usize,
    make_denoiser: &(dyn Fn() -> Box<dyn Denoiser> + Sync),
    spec: &ChannelGenSpec,
    config: &SeConfig,
) -> Result<SeState> {
    spec.validate()?;
    if spec.n != n {
        return Err(Error::DimensionMismatch {
            context: "channel antennas",
            expected: n,
            found: spec.n,
        });
    }
    let power: Vec<f64> = (0..spec.p_taps).map(|p| spec.tap_power(p)).collect();
    let energy_per_entry = mean(&power);
    if energy_per_entry <= 0.0 {
        return Err(Error::ZeroNorm);
    }
    let mut tau_a: Vec<f64> = match make_denoiser().prior_power() {
        Some(pp) if pp.len() == spec.p_taps => pp,
        _ => power.clone(),
    };
    for t in tau_a.iter_mut() {
        *t = t.max(config.v_min);
    }
    let mut tau_b = vec![0.0; spec.p_taps];
    let mut trajectory = Vec::new();
    let (mut converged, mut oscillation) = (false, false);
    let mut rises = 0;
    let mut predicted = f64::NAN;
    for iter in 1..=config.max_iter {
        for p in 0..spec.p_taps {
            tau_b[p] = se_module_a(tau_a[p], sigma2, m, n, config.v_min)?.0;
        }
        let est = se_module_b_mc(&tau_b, make_denoiser, spec, config.trials, config.seed)?;
        let old = mean(&tau_a);
        tau_a = est.tau_a.iter().map(|t| t.max(config.v_min)).collect();
        let new = mean(&tau_a);
        predicted = 10.0 * (mean(&est.posterior_mse) / energy_per_entry).log10();
        trajectory.push(SeStep {
            iter,
            tau_a: new,
            tau_b: mean(&tau_b),
            mc_stderr: est.stderr,
            nmse_db: predicted,
        });
        if new > old * (1.0 + 1e-12) {
            rises += 1;
            if rises > 3 {
                oscillation = true;
            }
        } else {
            rises = 0;
        }
        if (new - old).abs() <= config.tol * old.max(config.v_min) {
            converged = true;
            break;
        }
    }
    let tau_nmse_db = 10.0 * (mean(&tau_a) / energy_per_entry).log10();
    Ok(SeState {
        trajectory,
        tau_a,
        tau_b,
        converged,
        oscillation,
        predicted_nmse_db: predicted,
        tau_nmse_db,
    })
}
