//! Structured channel generation in the angle-delay domain, conversion to
//! the angle-frequency domain and noisy pilot observations.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{check_len, Error, Result};
use crate::linops::{Direction, SensingOperator, UnitaryDft};
use crate::matrix::{ComplexMatrix, C64};
use crate::rng::complex_gaussian;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    AngleFrequency,
    AngleDelay,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::AngleFrequency => "angle_frequency",
            Domain::AngleDelay => "angle_delay",
        })
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "angle_frequency" | "frequency" | "afd" => Ok(Domain::AngleFrequency),
            "angle_delay" | "delay" | "add" => Ok(Domain::AngleDelay),
            other => Err(Error::invalid(format!("unknown domain `{other}`"))),
        }
    }
}

/// An `N x P` channel (or `M x P` observation) tagged with its domain.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMatrix {
    pub values: ComplexMatrix,
    pub domain: Domain,
}

/// Observations share the channel representation: `M x P` plus a domain tag.
pub type ObservationMatrix = ChannelMatrix;

impl ChannelMatrix {
    pub fn new(values: ComplexMatrix, domain: Domain) -> Self {
        Self { values, domain }
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    fn expect_domain(&self, expected: Domain) -> Result<()> {
        if self.domain == expected {
            Ok(())
        } else {
            Err(Error::DomainMismatch {
                expected: expected.to_string(),
                found: self.domain.to_string(),
            })
        }
    }

    /// `H_f = H_d F`: unitary DFT along every row.
    pub fn delay_to_freq(&self) -> Result<ChannelMatrix> {
        self.expect_domain(Domain::AngleDelay)?;
        Ok(ChannelMatrix::new(
            transform_rows(&self.values, Direction::Forward)?,
            Domain::AngleFrequency,
        ))
    }

    /// `H_d = H_f F*`: unitary inverse DFT along every row.
    pub fn freq_to_delay(&self) -> Result<ChannelMatrix> {
        self.expect_domain(Domain::AngleFrequency)?;
        Ok(ChannelMatrix::new(
            transform_rows(&self.values, Direction::Inverse)?,
            Domain::AngleDelay,
        ))
    }

    pub fn to_domain(&self, domain: Domain) -> Result<ChannelMatrix> {
        match (self.domain, domain) {
            (a, b) if a == b => Ok(self.clone()),
            (Domain::AngleDelay, Domain::AngleFrequency) => self.delay_to_freq(),
            _ => self.freq_to_delay(),
        }
    }
}

fn transform_rows(m: &ComplexMatrix, direction: Direction) -> Result<ComplexMatrix> {
    let plan = UnitaryDft::new(m.cols());
    let mut out = ComplexMatrix::zeros(m.rows(), m.cols());
    let mut row = vec![C64::new(0.0, 0.0); m.cols()];
    for r in 0..m.rows() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = m.get(r, c);
        }
        plan.process_in_place(&mut row, direction)?;
        out.set_row(r, &row);
    }
    Ok(out)
}

/// Parameters of the synthetic angle-delay channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelGenSpec {
    /// Antennas `N`.
    pub n: usize,
    /// Pilot subcarriers `P`.
    pub p_taps: usize,
    /// Maximum delay spread `L`; taps `L..P` are zero.
    pub l_max: usize,
    pub p10: f64,
    pub p01: f64,
    /// Initial activity of each support chain; stationary value when `None`.
    pub lambda0: Option<f64>,
    /// Nonzero-coefficient variance per tap, length `P`.
    pub tap_variances: Vec<f64>,
    /// Probability that a tap below `L` is active at all.
    pub gamma: f64,
}

impl Default for ChannelGenSpec {
    fn default() -> Self {
        Self::standard_setting()
    }
}

impl ChannelGenSpec {
    /// N = 256 antennas, P = 32 pilots, L = 16, p01 = 1/16, p10 = 1/240.
    pub fn standard_setting() -> Self {
        Self {
            n: 256,
            p_taps: 32,
            l_max: 16,
            p10: 1.0 / 240.0,
            p01: 1.0 / 16.0,
            lambda0: None,
            tap_variances: vec![1.0; 32],
            gamma: 1.0,
        }
    }

    /// Same chain parameters with different dimensions; `L` is capped at `P`.
    pub fn with_dims(mut self, n: usize, p_taps: usize, l_max: usize) -> Self {
        let var = self.tap_variances.first().copied().unwrap_or(1.0);
        self.n = n;
        self.p_taps = p_taps;
        self.l_max = l_max.min(p_taps);
        self.tap_variances = vec![var; p_taps];
        self
    }

    pub fn validate(&self) -> Result<()> {
        let open = |x: f64| x > 0.0 && x < 1.0;
        if self.n == 0 || self.p_taps == 0 {
            return Err(Error::invalid("channel dimensions must be positive"));
        }
        if !open(self.p10) || !open(self.p01) {
            return Err(Error::invalid(format!(
                "transition probabilities must lie in (0,1), got p10={}, p01={}",
                self.p10, self.p01
            )));
        }
        if let Some(l0) = self.lambda0 {
            if !(0.0..=1.0).contains(&l0) {
                return Err(Error::invalid(format!("lambda0={l0} outside [0,1]")));
            }
        }
        if self.l_max > self.p_taps {
            return Err(Error::invalid(format!(
                "delay spread L={} exceeds P={}",
                self.l_max, self.p_taps
            )));
        }
        check_len("tap variances", self.p_taps, self.tap_variances.len())?;
        if self.tap_variances.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("tap variances must be positive and finite"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::invalid(format!("gamma={} outside [0,1]", self.gamma)));
        }
        Ok(())
    }

    /// Stationary activity `(1 + p01/p10)^-1`, unless overridden.
    pub fn activity(&self) -> f64 {
        self.lambda0
            .unwrap_or_else(|| stationary_activity(self.p10, self.p01))
    }

    /// Expected `|h|^2` of one entry of delay tap `p`.
    pub fn tap_power(&self, p: usize) -> f64 {
        if p < self.l_max {
            self.gamma * self.activity() * self.tap_variances[p]
        } else {
            0.0
        }
    }

    /// `E ||H||_F^2`, identical in both domains.
    pub fn expected_energy(&self) -> f64 {
        self.n as f64 * (0..self.p_taps).map(|p| self.tap_power(p)).sum::<f64>()
    }

    /// Average per-entry power `E ||H||_F^2 / (N P)`.
    pub fn mean_entry_power(&self) -> f64 {
        self.expected_energy() / (self.n * self.p_taps) as f64
    }
}

pub fn stationary_activity(p10: f64, p01: f64) -> f64 {
    1.0 / (1.0 + p01 / p10)
}

/// Draws a binary support chain of length `n`.
///
/// `p10 = P(1 | 0)` and `p01 = P(0 | 1)`. Probabilities are accepted on the
/// closed unit interval so absorbing chains can be sampled.
pub fn sample_support_chain<R: Rng + ?Sized>(
    n: usize,
    p10: f64,
    p01: f64,
    lambda0: f64,
    rng: &mut R,
) -> Result<Vec<bool>> {
    for (name, v) in [("p10", p10), ("p01", p01), ("lambda0", lambda0)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("{name}={v} is not a probability")));
        }
    }
    let mut s = Vec::with_capacity(n);
    if n == 0 {
        return Ok(s);
    }
    let mut cur = rng.random_bool(lambda0);
    s.push(cur);
    for _ in 1..n {
        cur = if cur {
            !rng.random_bool(p01)
        } else {
            rng.random_bool(p10)
        };
        s.push(cur);
    }
    Ok(s)
}

/// Generates `H_d`: per active tap, a support chain times CN(0, sigma_p^2).
pub fn generate_channel<R: Rng + ?Sized>(spec: &ChannelGenSpec, rng: &mut R) -> Result<ChannelMatrix> {
    spec.validate()?;
    let lambda0 = spec.activity();
    let mut h = ComplexMatrix::zeros(spec.n, spec.p_taps);
    for p in 0..spec.l_max {
        if !rng.random_bool(spec.gamma) {
            continue;
        }
        let support = sample_support_chain(spec.n, spec.p10, spec.p01, lambda0, rng)?;
        let var = spec.tap_variances[p];
        for (v, on) in h.col_mut(p).iter_mut().zip(support) {
            if on {
                *v = complex_gaussian(rng, var);
            }
        }
    }
    Ok(ChannelMatrix::new(h, Domain::AngleDelay))
}

/// `Y = A H + W` column by column, `W` i.i.d. CN(0, sigma2).
///
/// `ops` holds either one shared operator or one per column.
pub fn observe<R: Rng + ?Sized>(
    ops: &[SensingOperator],
    h: &ChannelMatrix,
    sigma2: f64,
    rng: &mut R,
) -> Result<ObservationMatrix> {
    let op0 = ops
        .first()
        .ok_or_else(|| Error::invalid("at least one sensing operator is required"))?;
    if ops.len() != 1 {
        check_len("per-column operators", h.cols(), ops.len())?;
    }
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(Error::invalid(format!("noise variance {sigma2} is invalid")));
    }
    check_len("channel rows vs operator n", op0.n(), h.rows())?;
    let m = op0.m();
    let mut columns = Vec::with_capacity(h.cols());
    for p in 0..h.cols() {
        let op = &ops[p % ops.len()];
        check_len("operator measurement count", m, op.m())?;
        let mut y = op.apply_forward(h.values.col(p))?;
        if sigma2 > 0.0 {
            for v in y.iter_mut() {
                *v += complex_gaussian(rng, sigma2);
            }
        }
        columns.push(y);
    }
    Ok(ChannelMatrix::new(
        ComplexMatrix::from_columns(m, &columns)?,
        h.domain,
    ))
}
