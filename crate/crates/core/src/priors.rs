//! Bernoulli-Gaussian scalar posteriors and the binary Markov chain
//! forward/backward kernel shared by all Module B denoisers, plus the i.i.d.
//! denoiser of plain turbo-CS.
//!
//! Probabilities are combined as log-odds throughout. Products of P
//! likelihood ratios become sums and cannot underflow.

use serde::{Deserialize, Serialize};

use crate::channel::Domain;
use crate::em;
use crate::engine::{Denoiser, Diagnostics, LearnedParams, Posterior};
use crate::error::{check_len, Error, Result};
use crate::matrix::{ComplexMatrix, C64};

/// Evidence probabilities are clipped to `[EVIDENCE_CLIP, 1 - EVIDENCE_CLIP]`.
pub const EVIDENCE_CLIP: f64 = 1e-12;

/// Bound on log-odds evidence computed from Gaussian messages. Far looser
/// than `logit(1 - EVIDENCE_CLIP)`, so noiseless inputs still give
/// posteriors that round to exactly 0 or 1.
pub const MAX_EVIDENCE_LOGIT: f64 = 700.0;

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `ln logistic(x)`.
#[inline]
pub fn ln_logistic(x: f64) -> f64 {
    -softplus(-x)
}

#[inline]
fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn check_prob(name: &str, p: f64, open: bool) -> Result<()> {
    let ok = if open {
        p > 0.0 && p < 1.0
    } else {
        (0.0..=1.0).contains(&p)
    };
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name}={p} is not a valid probability")))
    }
}

/// Spike-and-slab prior `(1 - pi) delta(h) + pi CN(h; 0, sigma2_h)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BgPrior {
    pub pi: f64,
    pub sigma2_h: f64,
}

impl BgPrior {
    pub fn new(pi: f64, sigma2_h: f64) -> Result<Self> {
        check_prob("pi", pi, false)?;
        if !(sigma2_h > 0.0 && sigma2_h.is_finite()) {
            return Err(Error::invalid(format!("slab variance {sigma2_h} must be positive")));
        }
        Ok(Self { pi, sigma2_h })
    }

    pub fn second_moment(&self) -> f64 {
        self.pi * self.sigma2_h
    }
}

/// Binary chain with `p10 = P(1 | 0)`, `p01 = P(0 | 1)` and initial
/// activity `lambda0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainParams {
    pub p10: f64,
    pub p01: f64,
    pub lambda0: f64,
}

impl ChainParams {
    /// Chain started from its stationary activity.
    pub fn new(p10: f64, p01: f64) -> Result<Self> {
        Self::with_initial(p10, p01, 1.0 / (1.0 + p01 / p10))
    }

    pub fn with_initial(p10: f64, p01: f64, lambda0: f64) -> Result<Self> {
        check_prob("p10", p10, true)?;
        check_prob("p01", p01, true)?;
        check_prob("lambda0", lambda0, true)?;
        Ok(Self { p10, p01, lambda0 })
    }

    pub fn stationary(&self) -> f64 {
        1.0 / (1.0 + self.p01 / self.p10)
    }

    /// `P(s_n = b | s_{n-1} = a)`.
    #[inline]
    pub fn transition(&self, a: bool, b: bool) -> f64 {
        transition(self.p10, self.p01, a, b)
    }
}

#[inline]
fn transition(p10: f64, p01: f64, a: bool, b: bool) -> f64 {
    match (a, b) {
        (false, false) => 1.0 - p10,
        (false, true) => p10,
        (true, false) => p01,
        (true, true) => 1.0 - p01,
    }
}

/// Output of one forward/backward sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainPosterior {
    /// `lambda^f_n`: activity message arriving at `n` from the left.
    pub forward: Vec<f64>,
    /// `lambda^b_n`: activity message arriving at `n` from the right.
    pub backward: Vec<f64>,
    /// `P(s_n = 1 | all evidence)`.
    pub marginal: Vec<f64>,
    /// Entry `n - 1` holds `P(s_{n-1} = a, s_n = b | evidence)` at index
    /// `2 a + b`.
    pub pairwise: Vec<[f64; 4]>,
    /// `ln sum_s p(s) prod_n w_n(s_n)` with evidence weights
    /// `w_n(1) = logistic(e_n)`, `w_n(0) = logistic(-e_n)`.
    pub log_partition: f64,
}

impl ChainPosterior {
    pub fn len(&self) -> usize {
        self.marginal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marginal.is_empty()
    }
}

/// Log-odds that an entry is active given `m = h + CN(0, v)`:
/// `ln CN(0; m, v + sigma2_h) - ln CN(0; m, v)`, clipped.
pub fn support_evidence_logit(m: C64, v: f64, sigma2_h: f64) -> f64 {
    let total = v + sigma2_h;
    let raw = (v / total).ln() + m.norm_sqr() * sigma2_h / (v * total);
    raw.clamp(-MAX_EVIDENCE_LOGIT, MAX_EVIDENCE_LOGIT)
}

/// Upward activity message `(1 + CN(0; m, v) / CN(0; m, v + sigma2_h))^-1`.
pub fn support_evidence(m: C64, v: f64, sigma2_h: f64) -> f64 {
    logistic(support_evidence_logit(m, v, sigma2_h))
}

/// Mean and variance of `h` under `(1 - pi) delta + pi CN(g m, g v)` with
/// `g = sigma2_h / (sigma2_h + v)`.
pub fn bg_scalar_posterior(m: C64, v: f64, pi_post: f64, sigma2_h: f64) -> (C64, f64) {
    let g = sigma2_h / (sigma2_h + v);
    let slab_mean = m * g;
    let mean = slab_mean * pi_post;
    let var = pi_post * g * v + pi_post * (1.0 - pi_post) * slab_mean.norm_sqr();
    (mean, var.max(0.0))
}

/// `E[|h|^2 s]` under the same posterior, the slab sufficient statistic.
pub fn bg_slab_energy(m: C64, v: f64, pi_post: f64, sigma2_h: f64) -> f64 {
    let g = sigma2_h / (sigma2_h + v);
    pi_post * (g * v + (m * g).norm_sqr())
}

/// Forward/backward over a binary chain with evidence given as log-odds.
///
/// Follows the activity-message recursions
/// `lambda^f_n = (1 - p01) q + p10 (1 - q)` and
/// `lambda^b_n = ((1 - p01) r + p01 (1 - r)) / ((1 - p01 + p10) r + (1 - p10 + p01)(1 - r))`
/// where `q`, `r` fold the neighbour's message with its evidence, starting
/// from `lambda^f_1 = lambda0` and `lambda^b_N = 1/2`.
pub fn chain_forward_backward(evidence: &[f64], params: &ChainParams) -> ChainPosterior {
    forward_backward_with(evidence, params.lambda0, |_| (params.p10, params.p01))
}

/// As [`chain_forward_backward`], from activity probabilities clipped to
/// `[EVIDENCE_CLIP, 1 - EVIDENCE_CLIP]`.
pub fn chain_forward_backward_probs(evidence: &[f64], params: &ChainParams) -> ChainPosterior {
    let logits: Vec<f64> = evidence
        .iter()
        .map(|&p| logit(p.clamp(EVIDENCE_CLIP, 1.0 - EVIDENCE_CLIP)))
        .collect();
    chain_forward_backward(&logits, params)
}

/// Forward/backward with a position-dependent kernel. `kernel(n)` returns
/// `(p10, p01)` for the transition into position `n >= 1`.
pub fn forward_backward_with(
    evidence: &[f64],
    lambda0: f64,
    kernel: impl Fn(usize) -> (f64, f64),
) -> ChainPosterior {
    let n = evidence.len();
    if n == 0 {
        return ChainPosterior {
            forward: Vec::new(),
            backward: Vec::new(),
            marginal: Vec::new(),
            pairwise: Vec::new(),
            log_partition: 0.0,
        };
    }

    let mut forward = vec![0.0; n];
    forward[0] = lambda0;
    let mut log_partition = 0.0;
    for i in 0..n {
        let lf = forward[i];
        log_partition += log_add_exp(
            lf.ln() + ln_logistic(evidence[i]),
            (-lf).ln_1p() + ln_logistic(-evidence[i]),
        );
        if i + 1 < n {
            let l = logit(lf) + evidence[i];
            let (q1, q0) = (logistic(l), logistic(-l));
            let (p10, p01) = kernel(i + 1);
            forward[i + 1] = (1.0 - p01) * q1 + p10 * q0;
        }
    }

    let mut backward = vec![0.5; n];
    for i in (0..n.saturating_sub(1)).rev() {
        let l = logit(backward[i + 1]) + evidence[i + 1];
        let (r1, r0) = (logistic(l), logistic(-l));
        let (p10, p01) = kernel(i + 1);
        let num = (1.0 - p01) * r1 + p01 * r0;
        let den = (1.0 - p01 + p10) * r1 + (1.0 - p10 + p01) * r0;
        backward[i] = num / den;
    }

    let marginal = (0..n)
        .map(|i| logistic(logit(forward[i]) + logit(backward[i]) + evidence[i]))
        .collect();

    let mut pairwise = Vec::with_capacity(n.saturating_sub(1));
    for i in 1..n {
        let left = logit(forward[i - 1]) + evidence[i - 1];
        let right = logit(backward[i]) + evidence[i];
        let q = [logistic(-left), logistic(left)];
        let r = [logistic(-right), logistic(right)];
        let (p10, p01) = kernel(i);
        let mut w = [0.0; 4];
        let mut total = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                let v = q[a] * transition(p10, p01, a == 1, b == 1) * r[b];
                w[2 * a + b] = v;
                total += v;
            }
        }
        for v in w.iter_mut() {
            *v /= total;
        }
        pairwise.push(w);
    }

    ChainPosterior {
        forward,
        backward,
        marginal,
        pairwise,
        log_partition,
    }
}

/// Per-tap sums needed by the slab-variance EM update.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SlabStats {
    /// `sum_n P(s_n = 1)` per tap.
    pub activity_sum: Vec<f64>,
    /// `sum_n E[|h_n|^2 s_n]` per tap.
    pub slab_energy: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct IidOutput {
    pub posterior: Posterior,
    /// Posterior activity per entry, column-major `N x P`.
    pub activity: Vec<f64>,
    pub stats: SlabStats,
}

pub(crate) fn check_module_b_input(pri_mean: &ComplexMatrix, pri_var: &[f64]) -> Result<()> {
    check_len("per-tap variances", pri_mean.cols(), pri_var.len())?;
    if !pri_mean.all_finite() {
        return Err(Error::NonFinite("Module B input mean".into()));
    }
    if let Some(v) = pri_var.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::NonFinite(format!("Module B input variance {v}")));
    }
    Ok(())
}

/// Independent spike-and-slab denoising of every entry (plain turbo-CS).
pub fn denoise_bg_iid(
    pri_mean: &ComplexMatrix,
    pri_var: &[f64],
    priors: &[BgPrior],
) -> Result<IidOutput> {
    check_module_b_input(pri_mean, pri_var)?;
    check_len("per-tap priors", pri_mean.cols(), priors.len())?;
    let (n, p_taps) = pri_mean.shape();
    let mut mean = ComplexMatrix::zeros(n, p_taps);
    let mut var = Vec::with_capacity(p_taps);
    let mut activity = Vec::with_capacity(n * p_taps);
    let mut stats = SlabStats::default();
    for p in 0..p_taps {
        let v = pri_var[p];
        let prior = priors[p];
        let prior_logit = logit(prior.pi);
        let mut var_sum = 0.0;
        let mut act_sum = 0.0;
        let mut energy = 0.0;
        for (i, &m) in pri_mean.col(p).iter().enumerate() {
            let pi_post = logistic(prior_logit + support_evidence_logit(m, v, prior.sigma2_h));
            let (mu, var_i) = bg_scalar_posterior(m, v, pi_post, prior.sigma2_h);
            mean.set(i, p, mu);
            var_sum += var_i;
            act_sum += pi_post;
            energy += bg_slab_energy(m, v, pi_post, prior.sigma2_h);
            activity.push(pi_post);
        }
        var.push(var_sum / n as f64);
        stats.activity_sum.push(act_sum);
        stats.slab_energy.push(energy);
    }
    Ok(IidOutput {
        posterior: Posterior { mean, var },
        activity,
        stats,
    })
}

/// Module B of plain turbo-CS.
#[derive(Clone, Debug)]
pub struct IidDenoiser {
    pub priors: Vec<BgPrior>,
    pub domain: Domain,
    pub learn: bool,
}

impl IidDenoiser {
    pub fn new(priors: Vec<BgPrior>, domain: Domain) -> Self {
        Self {
            priors,
            domain,
            learn: false,
        }
    }

    pub fn with_em(mut self, learn: bool) -> Self {
        self.learn = learn;
        self
    }
}

impl Denoiser for IidDenoiser {
    fn domain(&self) -> Domain {
        self.domain
    }

    fn prior_power(&self) -> Option<Vec<f64>> {
        if self.learn {
            return None;
        }
        Some(self.priors.iter().map(BgPrior::second_moment).collect())
    }

    fn denoise(&mut self, pri_mean: &ComplexMatrix, pri_var: &[f64]) -> Result<Posterior> {
        let out = denoise_bg_iid(pri_mean, pri_var, &self.priors)?;
        if self.learn {
            self.priors = em::em_update_iid(&self.priors, &out.stats, pri_mean.rows());
        }
        Ok(out.posterior)
    }

    fn learned_params(&self) -> Option<LearnedParams> {
        Some(LearnedParams::Iid(self.priors.clone()))
    }

    fn diagnostics(&self) -> Diagnostics {
        Diagnostics::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cn_density(x: C64, mean: C64, var: f64) -> f64 {
        (-(x - mean).norm_sqr() / var).exp() / (std::f64::consts::PI * var)
    }

    /// Brute-force marginals and pairwise posteriors by enumerating all
    /// `2^N` supports. Evidence enters as weights `logistic(+-e)`.
    fn enumerate_chain(evidence: &[f64], params: &ChainParams) -> (Vec<f64>, Vec<[f64; 4]>, f64) {
        let n = evidence.len();
        let mut marg = vec![0.0; n];
        let mut pair = vec![[0.0; 4]; n - 1];
        let mut z = 0.0;
        for mask in 0u32..(1 << n) {
            let s: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            let mut w = if s[0] { params.lambda0 } else { 1.0 - params.lambda0 };
            for i in 1..n {
                w *= params.transition(s[i - 1], s[i]);
            }
            for i in 0..n {
                let p1 = 1.0 / (1.0 + (-evidence[i]).exp());
                w *= if s[i] { p1 } else { 1.0 - p1 };
            }
            z += w;
            for i in 0..n {
                if s[i] {
                    marg[i] += w;
                }
                if i > 0 {
                    pair[i - 1][2 * s[i - 1] as usize + s[i] as usize] += w;
                }
            }
        }
        for v in marg.iter_mut() {
            *v /= z;
        }
        for pr in pair.iter_mut() {
            for v in pr.iter_mut() {
                *v /= z;
            }
        }
        (marg, pair, z.ln())
    }

    #[test]
    fn zero_slab_variance_gives_half() {
        for m in [C64::new(0.0, 0.0), C64::new(3.0, -1.0)] {
            assert!((support_evidence(m, 0.7, 0.0) - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn evidence_at_zero_mean() {
        let (v, s2) = (0.3, 1.7);
        let expected = v / (2.0 * v + s2);
        assert!((support_evidence(C64::new(0.0, 0.0), v, s2) - expected).abs() < 1e-15);
        assert!(expected < 0.5);
    }

    #[test]
    fn evidence_saturates_for_large_mean() {
        let p = support_evidence(C64::new(100.0, 0.0), 0.1, 1.0);
        assert!(p > 1.0 - 1e-11);
    }

    #[test]
    fn scalar_posterior_limits() {
        let m = C64::new(0.8, -0.4);
        let (v, s2) = (0.5, 2.0);
        let g = s2 / (s2 + v);
        let (mean, var) = bg_scalar_posterior(m, v, 1.0, s2);
        assert!((mean - m * g).norm() < 1e-15);
        assert!((var - g * v).abs() < 1e-15);
        let (mean, var) = bg_scalar_posterior(m, v, 0.0, s2);
        assert_eq!(mean.norm(), 0.0);
        assert_eq!(var, 0.0);
    }

    /// Spike-and-slab moments by trapezoidal integration of
    /// `CN(h; 0, s2) CN(m; h, v)` over the complex plane.
    fn quadrature_moments(m: C64, v: f64, pi_post: f64, s2: f64) -> (C64, f64) {
        let half = 10.0;
        let step = 0.02;
        let k = (2.0 * half / step) as i64;
        let (mut z, mut first, mut second) = (0.0, C64::new(0.0, 0.0), 0.0);
        for i in 0..=k {
            for j in 0..=k {
                let h = C64::new(-half + i as f64 * step, -half + j as f64 * step);
                let w = cn_density(h, C64::new(0.0, 0.0), s2) * cn_density(m, h, v);
                z += w;
                first += h * w;
                second += h.norm_sqr() * w;
            }
        }
        let slab_mean = first / z;
        let slab_second = second / z;
        let mean = slab_mean * pi_post;
        (mean, pi_post * slab_second - mean.norm_sqr())
    }

    #[test]
    fn scalar_posterior_matches_quadrature() {
        let cases = [
            (C64::new(1.0, 0.0), 0.5, 0.7, 2.0),
            (C64::new(-0.4, 1.1), 0.8, 0.3, 1.0),
            (C64::new(0.2, 0.2), 1.5, 0.9, 0.6),
        ];
        for (m, v, pi, s2) in cases {
            let (mean, var) = bg_scalar_posterior(m, v, pi, s2);
            let (qm, qv) = quadrature_moments(m, v, pi, s2);
            assert!((mean - qm).norm() < 1e-10, "{mean} vs {qm}");
            assert!((var - qv).abs() < 1e-10, "{var} vs {qv}");
        }
    }

    #[test]
    fn uninformative_evidence_propagates_prior() {
        let params = ChainParams::with_initial(0.05, 0.2, 0.3).unwrap();
        let post = chain_forward_backward(&[0.0; 10], &params);
        for i in 1..10 {
            let prev = post.forward[i - 1];
            let expected = (1.0 - params.p01) * prev + params.p10 * (1.0 - prev);
            assert!((post.forward[i] - expected).abs() < 1e-15);
        }
        assert_eq!(post.backward[9], 0.5);
    }

    #[test]
    fn three_position_chain_matches_enumeration() {
        let params = ChainParams::with_initial(0.2, 0.35, 0.4).unwrap();
        let evidence = [1.3, -0.7, 2.2];
        let post = chain_forward_backward(&evidence, &params);
        let (marg, pair, lz) = enumerate_chain(&evidence, &params);
        for i in 0..3 {
            assert!((post.marginal[i] - marg[i]).abs() < 1e-10);
        }
        for i in 0..2 {
            for k in 0..4 {
                assert!((post.pairwise[i][k] - pair[i][k]).abs() < 1e-10);
            }
        }
        assert!((post.log_partition - lz).abs() < 1e-10);
    }

    #[test]
    fn memoryless_chain_is_independent() {
        let lambda = 0.23;
        let params = ChainParams::with_initial(lambda, 1.0 - lambda, lambda).unwrap();
        let evidence = [0.4, -2.0, 3.0, 0.0, -0.1];
        let post = chain_forward_backward(&evidence, &params);
        for (i, e) in evidence.iter().enumerate() {
            let independent = logistic(logit(lambda) + e);
            assert!((post.marginal[i] - independent).abs() < 1e-12);
        }
    }

    #[test]
    fn probability_entry_point_clips() {
        let params = ChainParams::new(0.1, 0.2).unwrap();
        let post = chain_forward_backward_probs(&[0.0, 1.0, 0.5], &params);
        assert!(post.marginal.iter().all(|p| p.is_finite() && (0.0..=1.0).contains(p)));
    }

    #[test]
    fn iid_denoiser_limits() {
        let mean = ComplexMatrix::from_fn(6, 2, |r, c| C64::new(r as f64 * 0.3 - 0.5, c as f64));
        let vars = [0.4, 0.9];
        let full = [BgPrior::new(1.0, 2.0).unwrap(), BgPrior::new(1.0, 0.5).unwrap()];
        let out = denoise_bg_iid(&mean, &vars, &full).unwrap();
        for p in 0..2 {
            let g = full[p].sigma2_h / (full[p].sigma2_h + vars[p]);
            assert!((out.posterior.var[p] - g * vars[p]).abs() < 1e-15);
        }
        let none = [BgPrior::new(0.0, 2.0).unwrap(), BgPrior::new(0.0, 0.5).unwrap()];
        let out = denoise_bg_iid(&mean, &vars, &none).unwrap();
        assert_eq!(out.posterior.mean.frobenius_sqr(), 0.0);
    }

    #[test]
    fn iid_denoiser_matches_quadrature_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let prior = BgPrior::new(0.35, 1.4).unwrap();
        let v = 0.6;
        let mean = ComplexMatrix::from_fn(5, 1, |_, _| {
            C64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))
        });
        let out = denoise_bg_iid(&mean, &[v], &[prior]).unwrap();
        let mut var_sum = 0.0;
        for i in 0..5 {
            let m = mean.get(i, 0);
            // Posterior activity from the two marginal likelihoods directly.
            let on = prior.pi * cn_density(C64::new(0.0, 0.0), m, v + prior.sigma2_h);
            let off = (1.0 - prior.pi) * cn_density(C64::new(0.0, 0.0), m, v);
            let pi_post = on / (on + off);
            let (qm, qv) = quadrature_moments(m, v, pi_post, prior.sigma2_h);
            assert!((out.posterior.mean.get(i, 0) - qm).norm() < 1e-10);
            var_sum += qv;
        }
        assert!((out.posterior.var[0] - var_sum / 5.0).abs() < 1e-10);
    }

    #[test]
    fn iid_denoiser_rejects_bad_input() {
        let mean = ComplexMatrix::zeros(3, 1);
        let prior = [BgPrior::new(0.5, 1.0).unwrap()];
        assert!(denoise_bg_iid(&mean, &[0.0], &prior).is_err());
        assert!(denoise_bg_iid(&mean, &[1.0, 1.0], &prior).is_err());
        let mut bad = mean.clone();
        bad.set(0, 0, C64::new(f64::NAN, 0.0));
        assert!(denoise_bg_iid(&bad, &[1.0], &prior).is_err());
    }

    proptest! {
        #[test]
        fn evidence_monotone_in_magnitude(a in 0.0f64..5.0, b in 0.0f64..5.0, v in 0.01f64..3.0, s2 in 0.01f64..3.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(support_evidence(C64::new(lo, 0.0), v, s2) <= support_evidence(C64::new(0.0, hi), v, s2));
        }

        #[test]
        fn posterior_variance_nonnegative(re in -50.0f64..50.0, im in -50.0f64..50.0, v in 1e-9f64..10.0, pi in 0.0f64..=1.0, s2 in 1e-9f64..10.0) {
            let (_, var) = bg_scalar_posterior(C64::new(re, im), v, pi, s2);
            prop_assert!(var >= 0.0);
        }

        #[test]
        fn chain_matches_enumeration_up_to_12(
            seed in any::<u64>(),
            n in 2usize..=12,
            p10 in 0.02f64..0.98,
            p01 in 0.02f64..0.98,
            lambda0 in 0.02f64..0.98,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let evidence: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
            let params = ChainParams::with_initial(p10, p01, lambda0).unwrap();
            let post = chain_forward_backward(&evidence, &params);
            let (marg, pair, lz) = enumerate_chain(&evidence, &params);
            for i in 0..n {
                prop_assert!((post.marginal[i] - marg[i]).abs() < 1e-10);
            }
            for i in 0..n - 1 {
                // Pairwise sums are consistent with the single-site marginals.
                let left = post.pairwise[i][2] + post.pairwise[i][3];
                let right = post.pairwise[i][1] + post.pairwise[i][3];
                prop_assert!((left - post.marginal[i]).abs() < 1e-10);
                prop_assert!((right - post.marginal[i + 1]).abs() < 1e-10);
                for k in 0..4 {
                    prop_assert!((post.pairwise[i][k] - pair[i][k]).abs() < 1e-10);
                }
            }
            prop_assert!((post.log_partition - lz).abs() < 1e-9);
        }
    }
}
