//! The `generate`, `run`, `sweep`, `se` and `bench` commands.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::channel::Domain;
use crate::ds::{DsDenoiser, DsParams};
use crate::engine::Denoiser;
use crate::fs::{FsDenoiser, FsParams};
use crate::io;
use crate::priors::{BgPrior, IidDenoiser};
use crate::se::{se_fixed_point, SeConfig, SeState};
use crate::Result;

use super::config::{Algorithm, ExperimentConfig};
use super::trial::{load_channel, prepare_trial, run_prepared, run_trials, Summary, TrialOutcome};

/// Formats a float for CSV; `-inf` and `inf` stay literal.
fn num(x: f64) -> String {
    format!("{x}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerateOutput {
    pub descriptor: String,
    pub channel_path: PathBuf,
    pub observation_path: PathBuf,
    pub operator_path: PathBuf,
}

/// Draws trial 0 of the first grid cell and writes the channel (angle-delay),
/// the angle-frequency observations and the operator descriptor.
pub fn cmd_generate(cfg: &ExperimentConfig, out_dir: &Path, binary: bool) -> Result<GenerateOutput> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let file_channel = load_channel(cfg)?;
    let setup = prepare_trial(cfg, file_channel.as_ref(), cfg.m[0], cfg.snr_db[0], 0)?;
    let ext = if binary { "bin" } else { "txt" };
    let channel_path = out_dir.join(format!("channel.{ext}"));
    let observation_path = out_dir.join(format!("observation.{ext}"));
    let operator_path = out_dir.join("operator.txt");
    let save = if binary { io::save_binary } else { io::save_text };
    save(&channel_path, &setup.truth)?;
    save(&observation_path, &setup.y)?;
    let descriptor = setup
        .ops
        .iter()
        .map(|op| op.to_descriptor())
        .collect::<Vec<_>>()
        .join("\n");
    fs::write(&operator_path, format!("{descriptor}\n"))?;
    fs::write(out_dir.join("config.txt"), cfg.to_text())?;
    Ok(GenerateOutput {
        descriptor,
        channel_path,
        observation_path,
        operator_path,
    })
}

/// All trials of one `(algorithm, m, snr)` cell.
#[derive(Debug)]
pub struct CellReport {
    pub algorithm: Algorithm,
    pub m: usize,
    pub snr_db: f64,
    pub outcomes: Vec<Result<TrialOutcome>>,
    pub summary: Summary,
}

impl CellReport {
    pub fn ok(&self) -> impl Iterator<Item = &TrialOutcome> {
        self.outcomes.iter().filter_map(|o| o.as_ref().ok())
    }
}

#[derive(Debug)]
pub struct RunReport {
    pub cells: Vec<CellReport>,
}

impl RunReport {
    pub fn failed(&self) -> usize {
        self.cells.iter().map(|c| c.summary.failed).sum()
    }

    /// One row per trial, in grid and trial order. Contains no timings, so
    /// the same configuration reproduces it byte for byte.
    pub fn trials_csv(&self) -> String {
        let mut out = String::from("algorithm,m,snr_db,trial,seed,status,nmse_db,iterations,converged\n");
        for c in &self.cells {
            for (i, o) in c.outcomes.iter().enumerate() {
                match o {
                    Ok(t) => out.push_str(&format!(
                        "{},{},{},{},{},ok,{},{},{}\n",
                        c.algorithm,
                        c.m,
                        num(c.snr_db),
                        t.index,
                        t.seed,
                        num(t.nmse_db),
                        t.result.iterations_used,
                        t.result.converged
                    )),
                    Err(_) => out.push_str(&format!(
                        "{},{},{},{},,failed,,,\n",
                        c.algorithm,
                        c.m,
                        num(c.snr_db),
                        i
                    )),
                }
            }
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "algorithm,m,snr_db,trials,failed,mean_nmse_db,stderr_db,median_nmse_db,mean_iterations,converged_fraction\n",
        );
        for c in &self.cells {
            let s = &c.summary;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                c.algorithm,
                c.m,
                num(c.snr_db),
                s.trials,
                s.failed,
                num(s.mean_nmse_db),
                num(s.stderr_db),
                num(s.median_nmse_db),
                num(s.mean_iterations),
                num(s.converged_fraction)
            ));
        }
        out
    }

    /// One JSON object per successful trial.
    pub fn trials_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for c in &self.cells {
            for t in c.ok() {
                out.push_str(&serde_json::to_string(t)?);
                out.push('\n');
            }
        }
        Ok(out)
    }
}

/// Runs every `(algorithm, m, snr)` cell of the configuration.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let file_channel = load_channel(cfg)?;
    let mut cells = Vec::new();
    for &algorithm in &cfg.algorithms {
        for &m in &cfg.m {
            for &snr_db in &cfg.snr_db {
                let outcomes = run_trials(cfg, file_channel.as_ref(), algorithm, m, snr_db);
                for (i, o) in outcomes.iter().enumerate() {
                    if let Err(e) = o {
                        warn!("{algorithm} m={m} snr={snr_db} trial {i} failed: {e}");
                    }
                }
                let summary = Summary::from_outcomes(&outcomes);
                info!(
                    "{algorithm} m={m} snr={snr_db} dB: mean NMSE {:.3} dB over {} trials",
                    summary.mean_nmse_db, summary.trials
                );
                cells.push(CellReport {
                    algorithm,
                    m,
                    snr_db,
                    outcomes,
                    summary,
                });
            }
        }
    }
    Ok(RunReport { cells })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub snr_db: f64,
    pub m: usize,
    pub algorithm: String,
    pub mean_nmse_db: f64,
    pub stderr_db: f64,
    pub trials: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Cells where NMSE rose with SNR or with M by more than two standard
    /// errors.
    pub monotonicity_violations: Vec<String>,
    pub failed: usize,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("snr_db,m,algorithm,mean_nmse_db,stderr_db,trials\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                num(r.snr_db),
                r.m,
                r.algorithm,
                num(r.mean_nmse_db),
                num(r.stderr_db),
                r.trials
            ));
        }
        out
    }
}

fn rises(a: &SweepRow, b: &SweepRow) -> bool {
    b.mean_nmse_db - a.mean_nmse_db > 2.0 * (a.stderr_db.hypot(b.stderr_db)) + 1e-9
}

/// Mean NMSE over the `snr_db x m` grid for every algorithm.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    let report = cmd_run(cfg)?;
    let rows: Vec<SweepRow> = report
        .cells
        .iter()
        .map(|c| SweepRow {
            snr_db: c.snr_db,
            m: c.m,
            algorithm: c.algorithm.to_string(),
            mean_nmse_db: c.summary.mean_nmse_db,
            stderr_db: c.summary.stderr_db,
            trials: c.summary.trials,
        })
        .collect();

    let mut snrs = cfg.snr_db.clone();
    snrs.sort_by(f64::total_cmp);
    let mut ms = cfg.m.clone();
    ms.sort_unstable();
    let find = |alg: &str, m: usize, snr: f64| {
        rows.iter()
            .find(|r| r.algorithm == alg && r.m == m && r.snr_db == snr)
    };
    let mut violations = Vec::new();
    for alg in cfg.algorithms.iter().map(|a| a.to_string()) {
        for &m in &ms {
            for w in snrs.windows(2) {
                if let (Some(a), Some(b)) = (find(&alg, m, w[0]), find(&alg, m, w[1])) {
                    if rises(a, b) {
                        violations.push(format!("{alg} m={m}: NMSE rises from {} to {} dB SNR", w[0], w[1]));
                    }
                }
            }
        }
        for &snr in &snrs {
            for w in ms.windows(2) {
                if let (Some(a), Some(b)) = (find(&alg, w[0], snr), find(&alg, w[1], snr)) {
                    if rises(a, b) {
                        violations.push(format!("{alg} snr={snr} dB: NMSE rises from m={} to m={}", w[0], w[1]));
                    }
                }
            }
        }
    }
    for v in &violations {
        warn!("monotonicity: {v}");
    }
    Ok(SweepReport {
        rows,
        monotonicity_violations: violations,
        failed: report.failed(),
    })
}

/// Module B with generator parameters, as used by state evolution.
pub fn known_denoiser(cfg: &ExperimentConfig, algorithm: Algorithm) -> Result<Box<dyn Fn() -> Box<dyn Denoiser> + Sync>> {
    let spec = cfg.spec();
    Ok(match algorithm {
        Algorithm::TurboCs => {
            let fs = FsParams::matched_to(&spec)?;
            let priors: Vec<BgPrior> = fs
                .sigma2_f
                .iter()
                .map(|&s| BgPrior::new(fs.lambda_f, s))
                .collect::<Result<_>>()?;
            Box::new(move || Box::new(IidDenoiser::new(priors.clone(), Domain::AngleFrequency)))
        }
        Algorithm::StcsFs => {
            let params = FsParams::matched_to(&spec)?;
            Box::new(move || Box::new(FsDenoiser::new(params.clone())))
        }
        Algorithm::StcsDs => {
            let params = DsParams::matched_to(&spec, cfg.epsilon)?;
            let mode = cfg.ds_mode;
            Box::new(move || Box::new(DsDenoiser::new(params.clone(), mode)))
        }
    })
}

/// State evolution next to the simulated per-iteration NMSE.
#[derive(Clone, Debug)]
pub struct SeComparison {
    pub algorithm: Algorithm,
    pub snr_db: f64,
    pub m: usize,
    pub se: SeState,
    /// Mean NMSE (dB of the mean linear value) after each iteration; trials
    /// that stopped early hold their final value.
    pub sim_trace_db: Vec<f64>,
    pub sim: Summary,
}

impl SeComparison {
    /// Predicted minus simulated final NMSE in dB.
    pub fn gap_db(&self) -> f64 {
        self.se.predicted_nmse_db - self.sim.mean_nmse_db
    }
}

#[derive(Clone, Debug)]
pub struct SeReport {
    pub comparisons: Vec<SeComparison>,
}

impl SeReport {
    /// `algorithm,snr_db,iteration,se_nmse_db,sim_nmse_db` for overlay plots.
    pub fn overlay_csv(&self) -> String {
        let mut out = String::from("algorithm,snr_db,iteration,se_nmse_db,sim_nmse_db\n");
        for c in &self.comparisons {
            let len = c.se.trajectory.len().max(c.sim_trace_db.len());
            for i in 0..len {
                let se = c
                    .se
                    .trajectory
                    .get(i)
                    .or(c.se.trajectory.last())
                    .map(|s| s.nmse_db)
                    .unwrap_or(f64::NAN);
                let sim = c
                    .sim_trace_db
                    .get(i)
                    .or(c.sim_trace_db.last())
                    .copied()
                    .unwrap_or(f64::NAN);
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    c.algorithm,
                    num(c.snr_db),
                    i + 1,
                    num(se),
                    num(sim)
                ));
            }
        }
        out
    }

    /// `algorithm,snr_db,iter,tau_A,tau_B,mc_stderr`.
    pub fn trajectory_csv(&self) -> String {
        let mut out = String::from("algorithm,snr_db,iter,tau_A,tau_B,mc_stderr\n");
        for c in &self.comparisons {
            for s in &c.se.trajectory {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    c.algorithm,
                    num(c.snr_db),
                    s.iter,
                    num(s.tau_a),
                    num(s.tau_b),
                    num(s.mc_stderr)
                ));
            }
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "algorithm,snr_db,m,se_nmse_db,se_tau_nmse_db,sim_nmse_db,sim_stderr_db,gap_db,se_converged,se_oscillation\n",
        );
        for c in &self.comparisons {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                c.algorithm,
                num(c.snr_db),
                c.m,
                num(c.se.predicted_nmse_db),
                num(c.se.tau_nmse_db),
                num(c.sim.mean_nmse_db),
                num(c.sim.stderr_db),
                num(c.gap_db()),
                c.se.converged,
                c.se.oscillation
            ));
        }
        out
    }
}

/// Mean linear NMSE per iteration across trials, in dB.
pub fn mean_trace_db(outcomes: &[Result<TrialOutcome>]) -> Vec<f64> {
    let traces: Vec<Vec<f64>> = outcomes
        .iter()
        .filter_map(|o| o.as_ref().ok())
        .map(|t| t.result.nmse_trace_db.iter().map(|d| 10f64.powf(d.0 / 10.0)).collect())
        .collect();
    let len = traces.iter().map(Vec::len).max().unwrap_or(0);
    (0..len)
        .map(|i| {
            let sum: f64 = traces
                .iter()
                .map(|t| t.get(i).or(t.last()).copied().unwrap_or(f64::NAN))
                .sum();
            10.0 * (sum / traces.len() as f64).log10()
        })
        .collect()
}

/// State evolution and simulation for every algorithm and SNR at `m[0]`.
pub fn cmd_se(cfg: &ExperimentConfig) -> Result<SeReport> {
    cfg.validate()?;
    let spec = cfg.spec();
    let m = cfg.m[0];
    let mut comparisons = Vec::new();
    for &algorithm in &cfg.algorithms {
        let make = known_denoiser(cfg, algorithm)?;
        for &snr_db in &cfg.snr_db {
            let sigma2 = super::config::noise_variance(spec.expected_energy(), cfg.n, cfg.p, snr_db);
            let se_cfg = SeConfig {
                tol: cfg.se_tol,
                max_iter: cfg.se_max_iter,
                trials: cfg.se_trials,
                seed: cfg.base_seed.wrapping_add(1 << 32),
                v_min: cfg.turbo.v_min,
            };
            let se = se_fixed_point(sigma2, m, cfg.n, make.as_ref(), &spec, &se_cfg)?;
            if se.oscillation {
                warn!("{algorithm} snr={snr_db}: state evolution oscillates");
            }
            let mut sim_cfg = cfg.clone();
            sim_cfg.em = false;
            let outcomes = run_trials(&sim_cfg, None, algorithm, m, snr_db);
            let sim = Summary::from_outcomes(&outcomes);
            info!(
                "{algorithm} snr={snr_db}: SE {:.2} dB, simulation {:.2} dB",
                se.predicted_nmse_db, sim.mean_nmse_db
            );
            comparisons.push(SeComparison {
                algorithm,
                snr_db,
                m,
                se,
                sim_trace_db: mean_trace_db(&outcomes),
                sim,
            });
        }
    }
    Ok(SeReport { comparisons })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub algorithm: String,
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub seconds_per_iteration: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("algorithm,n,p,m,seconds_per_iteration\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:e}\n",
                r.algorithm, r.n, r.p, r.m, r.seconds_per_iteration
            ));
        }
        out
    }

    /// Per-iteration time ratios between consecutive rows of one algorithm.
    pub fn ratios(&self) -> Vec<f64> {
        self.rows
            .windows(2)
            .filter(|w| w[0].algorithm == w[1].algorithm && w[0].p == w[1].p)
            .map(|w| w[1].seconds_per_iteration / w[0].seconds_per_iteration)
            .collect()
    }
}

/// Median per-iteration wall time for each `bench_n`, keeping `M / N` and
/// `P` fixed. Runs sequentially with a fixed iteration count.
pub fn cmd_bench(cfg: &ExperimentConfig) -> Result<BenchReport> {
    let ratio = cfg.m[0] as f64 / cfg.n as f64;
    let mut rows = Vec::new();
    for &algorithm in &cfg.algorithms {
        for &n in &cfg.bench_n {
            let mut c = cfg.clone();
            c.n = n;
            c.m = vec![((ratio * n as f64).round() as usize).clamp(1, n)];
            c.em = false;
            c.turbo.max_iters = cfg.bench_iters.max(1);
            c.turbo.stop_tol = 0.0;
            c.validate()?;
            let mut times = Vec::new();
            // One untimed warm-up run.
            for i in 0..=cfg.trials.min(7) {
                let setup = prepare_trial(&c, None, c.m[0], c.snr_db[0], i)?;
                let res = run_prepared(&c, algorithm, &setup)?;
                if i > 0 {
                    times.push(res.seconds_per_iteration());
                }
            }
            times.sort_by(f64::total_cmp);
            rows.push(BenchRow {
                algorithm: algorithm.to_string(),
                n,
                p: c.p,
                m: c.m[0],
                seconds_per_iteration: times[times.len() / 2],
            });
        }
    }
    Ok(BenchReport { rows })
}
