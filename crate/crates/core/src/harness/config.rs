//! Experiment configuration in a line-oriented `key = value` format.
//!
//! Blank lines and `#` comments are ignored. Lists are comma separated.
//! A file must declare `schema_version = 1`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::channel::ChannelGenSpec;
use crate::ds::{DsMode, DEFAULT_EPSILON};
use crate::engine::TurboConfig;
use crate::error::{Error, Result};
use crate::linops::SensingKind;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Algorithm {
    TurboCs,
    StcsFs,
    StcsDs,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::TurboCs, Algorithm::StcsFs, Algorithm::StcsDs];
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::TurboCs => "TURBO_CS",
            Algorithm::StcsFs => "STCS_FS",
            Algorithm::StcsDs => "STCS_DS",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().replace('-', "_").as_str() {
            "TURBO_CS" => Ok(Algorithm::TurboCs),
            "STCS_FS" => Ok(Algorithm::StcsFs),
            "STCS_DS" => Ok(Algorithm::StcsDs),
            other => Err(Error::invalid(format!("unknown algorithm `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ChannelSource {
    Synthetic,
    /// A channel file in either supported format and domain.
    File(PathBuf),
}

impl fmt::Display for ChannelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelSource::Synthetic => f.write_str("synthetic"),
            ChannelSource::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

impl FromStr for ChannelSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("synthetic") {
            Ok(ChannelSource::Synthetic)
        } else if let Some(path) = s.strip_prefix("file:") {
            Ok(ChannelSource::File(PathBuf::from(path)))
        } else {
            Err(Error::invalid(format!(
                "channel source must be `synthetic` or `file:<path>`, got `{s}`"
            )))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub algorithms: Vec<Algorithm>,
    pub sensing: SensingKind,
    pub n: usize,
    pub p: usize,
    pub l: usize,
    pub m: Vec<usize>,
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub base_seed: u64,
    pub em: bool,
    pub channel: ChannelSource,
    pub p10: f64,
    pub p01: f64,
    pub gamma: f64,
    pub tap_variance: f64,
    pub turbo: TurboConfig,
    pub ds_mode: DsMode,
    pub epsilon: f64,
    /// One operator for all taps; otherwise one per tap (frequency-domain
    /// algorithms only).
    pub shared_operator: bool,
    /// Learn one FS nonzero variance for all taps.
    pub tie_sigma: bool,
    pub se_trials: usize,
    pub se_max_iter: usize,
    pub se_tol: f64,
    /// Antenna counts for `bench`.
    pub bench_n: Vec<usize>,
    /// Iterations timed per benchmark trial.
    pub bench_iters: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let spec = ChannelGenSpec::standard_setting();
        Self {
            algorithms: vec![Algorithm::StcsDs],
            sensing: SensingKind::DftRp,
            n: spec.n,
            p: spec.p_taps,
            l: spec.l_max,
            m: vec![103],
            snr_db: vec![30.0],
            trials: 200,
            base_seed: 1,
            em: false,
            channel: ChannelSource::Synthetic,
            p10: spec.p10,
            p01: spec.p01,
            gamma: spec.gamma,
            tap_variance: 1.0,
            turbo: TurboConfig::default(),
            ds_mode: DsMode::Exact,
            epsilon: DEFAULT_EPSILON,
            shared_operator: true,
            tie_sigma: false,
            se_trials: 200,
            se_max_iter: 100,
            se_tol: 1e-6,
            bench_n: vec![256, 512, 1024],
            bench_iters: 10,
        }
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let items: Vec<T> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::invalid(format!("`{key}`: cannot parse `{s}`")))
        })
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::invalid(format!("`{key}` must not be empty")));
    }
    Ok(items)
}

fn parse_one<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::invalid(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(Error::invalid(format!("`{key}` must be on/off, got `{value}`"))),
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

impl ExperimentConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        match key {
            "schema_version" => {
                let v: u32 = parse_one(key, value)?;
                if v != SCHEMA_VERSION {
                    return Err(Error::invalid(format!(
                        "unsupported schema_version {v}, expected {SCHEMA_VERSION}"
                    )));
                }
            }
            "algorithm" | "algorithms" => self.algorithms = parse_list(key, value)?,
            "sensing" => self.sensing = parse_one(key, value)?,
            "n" => self.n = parse_one(key, value)?,
            "p" => self.p = parse_one(key, value)?,
            "l" => self.l = parse_one(key, value)?,
            "m" => self.m = parse_list(key, value)?,
            "snr_db" => self.snr_db = parse_list(key, value)?,
            "trials" => self.trials = parse_one(key, value)?,
            "base_seed" => self.base_seed = parse_one(key, value)?,
            "em" => self.em = parse_bool(key, value)?,
            "channel" => self.channel = value.parse()?,
            "p10" => self.p10 = parse_one(key, value)?,
            "p01" => self.p01 = parse_one(key, value)?,
            "gamma" => self.gamma = parse_one(key, value)?,
            "tap_variance" => self.tap_variance = parse_one(key, value)?,
            "max_iters" => self.turbo.max_iters = parse_one(key, value)?,
            "stop_tol" => self.turbo.stop_tol = parse_one(key, value)?,
            "damping" => self.turbo.damping = parse_one(key, value)?,
            "v_min" => self.turbo.v_min = parse_one(key, value)?,
            "v_max" => self.turbo.v_max = parse_one(key, value)?,
            "ds_mode" => self.ds_mode = value.trim().parse()?,
            "epsilon" => self.epsilon = parse_one(key, value)?,
            "shared_operator" => self.shared_operator = parse_bool(key, value)?,
            "tie_sigma" => self.tie_sigma = parse_bool(key, value)?,
            "se_trials" => self.se_trials = parse_one(key, value)?,
            "se_max_iter" => self.se_max_iter = parse_one(key, value)?,
            "se_tol" => self.se_tol = parse_one(key, value)?,
            "bench_n" => self.bench_n = parse_list(key, value)?,
            "bench_iters" => self.bench_iters = parse_one(key, value)?,
            other => return Err(Error::invalid(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    /// Parses a configuration file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut saw_version = false;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(idx + 1, "expected `key = value`"))?;
            saw_version |= key.trim() == "schema_version";
            cfg.set(key, value).map_err(|e| Error::parse(idx + 1, e.to_string()))?;
        }
        if !saw_version {
            return Err(Error::parse(0, "missing schema_version"));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Canonical text form; parsing it returns an equal configuration.
    pub fn to_text(&self) -> String {
        let t = &self.turbo;
        let lines = [
            format!("schema_version = {SCHEMA_VERSION}"),
            format!("algorithm = {}", join(&self.algorithms)),
            format!("sensing = {}", self.sensing),
            format!("n = {}", self.n),
            format!("p = {}", self.p),
            format!("l = {}", self.l),
            format!("m = {}", join(&self.m)),
            format!(
                "snr_db = {}",
                self.snr_db.iter().map(|s| format!("{s:?}")).collect::<Vec<_>>().join(",")
            ),
            format!("trials = {}", self.trials),
            format!("base_seed = {}", self.base_seed),
            format!("em = {}", on_off(self.em)),
            format!("channel = {}", self.channel),
            format!("p10 = {:?}", self.p10),
            format!("p01 = {:?}", self.p01),
            format!("gamma = {:?}", self.gamma),
            format!("tap_variance = {:?}", self.tap_variance),
            format!("max_iters = {}", t.max_iters),
            format!("stop_tol = {:?}", t.stop_tol),
            format!("damping = {:?}", t.damping),
            format!("v_min = {:?}", t.v_min),
            format!("v_max = {:?}", t.v_max),
            format!("ds_mode = {}", self.ds_mode),
            format!("epsilon = {:?}", self.epsilon),
            format!("shared_operator = {}", on_off(self.shared_operator)),
            format!("tie_sigma = {}", on_off(self.tie_sigma)),
            format!("se_trials = {}", self.se_trials),
            format!("se_max_iter = {}", self.se_max_iter),
            format!("se_tol = {:?}", self.se_tol),
            format!("bench_n = {}", join(&self.bench_n)),
            format!("bench_iters = {}", self.bench_iters),
        ];
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() || self.m.is_empty() || self.snr_db.is_empty() {
            return Err(Error::invalid("algorithm, m and snr_db grids must be non-empty"));
        }
        if let Some(&m) = self.m.iter().find(|&&m| m == 0 || m > self.n) {
            return Err(Error::invalid(format!("m={m} must satisfy 1 <= m <= n={}", self.n)));
        }
        if self.snr_db.iter().any(|s| s.is_nan() || *s == f64::NEG_INFINITY) {
            return Err(Error::invalid("snr_db entries must be numbers or inf"));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials must be at least 1"));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 0.1) {
            return Err(Error::invalid(format!("epsilon={} outside (0, 0.1]", self.epsilon)));
        }
        if matches!(self.channel, ChannelSource::File(_)) && !self.em {
            return Err(Error::invalid(
                "file channels have no known prior parameters; set em = on",
            ));
        }
        if !self.shared_operator && self.algorithms.contains(&Algorithm::StcsDs) {
            return Err(Error::invalid(
                "the delay-domain model needs one operator shared by all taps",
            ));
        }
        self.turbo.validate()?;
        self.spec().validate()
    }

    /// Generator parameters for synthetic channels.
    pub fn spec(&self) -> ChannelGenSpec {
        ChannelGenSpec {
            n: self.n,
            p_taps: self.p,
            l_max: self.l,
            p10: self.p10,
            p01: self.p01,
            lambda0: None,
            tap_variances: vec![self.tap_variance; self.p],
            gamma: self.gamma,
        }
    }
}

/// Noise variance for a given SNR: `E ||H||_F^2 / (N P SNR)`, which equals
/// `E ||A H||_F^2 / (M P SNR)` for a row-orthonormal `A`. Infinite SNR
/// gives zero noise.
pub fn noise_variance(energy: f64, n: usize, p: usize, snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY {
        return 0.0;
    }
    energy / (n * p) as f64 / 10f64.powf(snr_db / 10.0)
}
