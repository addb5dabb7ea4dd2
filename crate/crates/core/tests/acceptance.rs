//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Criteria 1-4 and 11 are exact checks and fail the run when violated.
//! Criteria 5-10 are Monte-Carlo measurements of the algorithms on the
//! synthetic channel; their lines report the measured values and a FAIL there
//! does not abort the run.

use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stcs::ds::{denoise_ds, DsMode, DsParams, DsTapParams};
use stcs::engine::lmmse_update;
use stcs::fs::{denoise_fs, FsParams};
use stcs::harness::commands::{cmd_bench, cmd_run, cmd_se, cmd_sweep, RunReport};
use stcs::harness::{Algorithm, ExperimentConfig, Summary};
use stcs::linops::{make_sensing_operator, SensingKind, SensingOperator};
use stcs::priors::ChainParams;
use stcs::{ComplexMatrix, C64};

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
    hard: bool,
}

fn report(o: &Outcome) {
    println!(
        "[{}] criterion {:>2} {}: {}",
        if o.pass { "PASS" } else { "FAIL" },
        o.id,
        o.name,
        o.detail
    );
}

fn random_c(rng: &mut ChaCha8Rng, scale: f64) -> C64 {
    C64::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale))
}

/// `A[i, perm[k]] = exp(-2 pi i sel_i k / n) / sqrt(n)` built entry by entry.
fn explicit_matrix(op: &SensingOperator) -> ComplexMatrix {
    let n = op.n();
    let mut a = ComplexMatrix::zeros(op.m(), n);
    for (i, &r) in op.row_selection().iter().enumerate() {
        for (k, &p) in op.permutation().iter().enumerate() {
            let phase = -2.0 * PI * ((r * k) % n) as f64 / n as f64;
            a.set(i, p, C64::from_polar(1.0 / (n as f64).sqrt(), phase));
        }
    }
    a
}

fn max_abs_diff(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn operator_correctness() -> Outcome {
    let mut worst_gram: f64 = 0.0;
    let mut worst_apply: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for kind in [SensingKind::Dft, SensingKind::DftRp] {
        for (n, m) in [(8, 3), (64, 26), (256, 103)] {
            let op = make_sensing_operator(n, m, kind, 7 + n as u64).unwrap();
            // A A^H column by column through the implicit operator.
            let mut gram = 0.0;
            for i in 0..m {
                let mut e = vec![C64::new(0.0, 0.0); m];
                e[i] = C64::new(1.0, 0.0);
                let col = op.apply_forward(&op.apply_adjoint(&e).unwrap()).unwrap();
                for (j, v) in col.iter().enumerate() {
                    let target = if i == j { 1.0 } else { 0.0 };
                    gram += (v - target).norm_sqr();
                }
            }
            worst_gram = worst_gram.max(gram.sqrt());
            if n <= 64 {
                let a = explicit_matrix(&op);
                let ah = a.adjoint();
                for _ in 0..5 {
                    let x: Vec<C64> = (0..n).map(|_| random_c(&mut rng, 1.0)).collect();
                    let y: Vec<C64> = (0..m).map(|_| random_c(&mut rng, 1.0)).collect();
                    worst_apply = worst_apply
                        .max(max_abs_diff(&op.apply_forward(&x).unwrap(), &a.matvec(&x).unwrap()))
                        .max(max_abs_diff(&op.apply_adjoint(&y).unwrap(), &ah.matvec(&y).unwrap()));
                }
            }
        }
    }
    Outcome {
        id: 1,
        name: "operator correctness",
        pass: worst_gram < 1e-10 && worst_apply < 1e-12,
        detail: format!(
            "max ||AA^H - I||_F = {worst_gram:.2e} (< 1e-10), max |explicit - implicit| = {worst_apply:.2e} (< 1e-12)"
        ),
        hard: true,
    }
}

fn cn_density(m: C64, var: f64) -> f64 {
    (-m.norm_sqr() / var).exp() / (PI * var)
}

/// Joint enumeration over the common support `s` of an `n x p` block.
fn enumerate_fs(mean: &ComplexMatrix, var: &[f64], params: &FsParams) -> (Vec<f64>, ComplexMatrix) {
    let (n, p) = mean.shape();
    let chain = params.chain();
    let mut marg = vec![0.0; n];
    let mut post = ComplexMatrix::zeros(n, p);
    let mut z = 0.0;
    for mask in 0u32..(1 << n) {
        let s: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
        let mut w = if s[0] { chain.lambda0 } else { 1.0 - chain.lambda0 };
        for i in 1..n {
            w *= chain.transition(s[i - 1], s[i]);
        }
        for c in 0..p {
            for i in 0..n {
                let v = if s[i] { var[c] + params.sigma2_f[c] } else { var[c] };
                w *= cn_density(mean.get(i, c), v);
            }
        }
        z += w;
        for i in 0..n {
            if s[i] {
                marg[i] += w;
                for c in 0..p {
                    let g = params.sigma2_f[c] / (params.sigma2_f[c] + var[c]);
                    let cur = post.get(i, c);
                    post.set(i, c, cur + mean.get(i, c) * g * w);
                }
            }
        }
    }
    (marg.iter().map(|m| m / z).collect(), post.scaled(1.0 / z))
}

/// Enumeration over the column gate `t` and the support `s` of one tap.
fn enumerate_ds(column: &[C64], v: f64, tap: &DsTapParams, eps: f64) -> (f64, Vec<f64>, Vec<C64>) {
    let n = column.len();
    let g = tap.sigma2_d / (tap.sigma2_d + v);
    let mut marg = vec![0.0; n];
    let (mut z, mut z_on) = (0.0, 0.0);
    for t in [false, true] {
        let chain = if t {
            ChainParams {
                p10: tap.p10,
                p01: tap.p01,
                lambda0: tap.lambda_d,
            }
        } else {
            ChainParams {
                p10: eps,
                p01: 1.0 - eps,
                lambda0: eps,
            }
        };
        for mask in 0u32..(1 << n) {
            let s: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            let mut w = if t { tap.gamma } else { 1.0 - tap.gamma };
            w *= if s[0] { chain.lambda0 } else { 1.0 - chain.lambda0 };
            for i in 1..n {
                w *= chain.transition(s[i - 1], s[i]);
            }
            for i in 0..n {
                w *= cn_density(column[i], if s[i] { v + tap.sigma2_d } else { v });
            }
            z += w;
            if t {
                z_on += w;
            }
            for i in 0..n {
                if s[i] {
                    marg[i] += w;
                }
            }
        }
    }
    let marg: Vec<f64> = marg.iter().map(|m| m / z).collect();
    let mean = column.iter().zip(&marg).map(|(c, m)| c * g * *m).collect();
    (z_on / z, marg, mean)
}

fn exact_inference_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut fs_err: f64 = 0.0;
    for _ in 0..50 {
        let lambda = rng.random_range(0.05..0.45);
        let p01 = rng.random_range(0.05..0.9);
        let sigma2 = vec![rng.random_range(0.3..3.0), rng.random_range(0.3..3.0)];
        let params = FsParams::tied(lambda, p01, sigma2).unwrap();
        let mean = ComplexMatrix::from_fn(8, 2, |_, _| random_c(&mut rng, 1.5));
        let var = [rng.random_range(0.1..1.5), rng.random_range(0.1..1.5)];
        let out = denoise_fs(&mean, &var, &params).unwrap();
        let (marg, post) = enumerate_fs(&mean, &var, &params);
        fs_err = fs_err.max(
            out.chain
                .marginal
                .iter()
                .zip(&marg)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        );
        fs_err = fs_err.max(max_abs_diff(out.posterior.mean.as_slice(), post.as_slice()));
    }

    let eps = 1e-3;
    let mut ds_err: f64 = 0.0;
    for _ in 0..50 {
        let lambda_d = rng.random_range(0.05..0.45);
        let p01 = rng.random_range(0.05..0.9);
        let tap = DsTapParams::tied(lambda_d, p01, rng.random_range(0.3..3.0), rng.random_range(0.05..0.95));
        let column: Vec<C64> = (0..6).map(|_| random_c(&mut rng, 1.5)).collect();
        let v = rng.random_range(0.1..1.5);
        let params = DsParams::new(vec![tap], eps).unwrap();
        let mean = ComplexMatrix::from_columns(6, &[column.clone()]).unwrap();
        let out = denoise_ds(&mean, &[v], &params, DsMode::Exact).unwrap();
        let (act, marg, post) = enumerate_ds(&column, v, &tap, eps);
        ds_err = ds_err.max((out.taps[0].activity - act).abs());
        ds_err = ds_err.max(
            out.taps[0]
                .marginal
                .iter()
                .zip(&marg)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        );
        ds_err = ds_err.max(max_abs_diff(out.posterior.mean.col(0), &post));
    }
    Outcome {
        id: 2,
        name: "exact-inference oracles",
        pass: fs_err < 1e-8 && ds_err < 1e-8,
        detail: format!(
            "FS (N=8, P=2, 50 instances) max err {fs_err:.2e}; DS exact (N=6, eps=1e-3, 50 instances) max err {ds_err:.2e} (< 1e-8)"
        ),
        hard: true,
    }
}

/// Solves `M x = b` by Gaussian elimination with partial pivoting.
fn solve(mut m: ComplexMatrix, mut b: Vec<C64>) -> Vec<C64> {
    let n = b.len();
    for k in 0..n {
        let piv = (k..n)
            .max_by(|&i, &j| m.get(i, k).norm().total_cmp(&m.get(j, k).norm()))
            .unwrap();
        if piv != k {
            let (rk, rp) = (m.row(k), m.row(piv));
            m.set_row(k, &rp);
            m.set_row(piv, &rk);
            b.swap(k, piv);
        }
        for i in k + 1..n {
            let f = m.get(i, k) / m.get(k, k);
            for j in k..n {
                let v = m.get(i, j) - f * m.get(k, j);
                m.set(i, j, v);
            }
            let bk = b[k];
            b[i] -= f * bk;
        }
    }
    let mut x = vec![C64::new(0.0, 0.0); n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in i + 1..n {
            s -= m.get(i, j) * x[j];
        }
        x[i] = s / m.get(i, i);
    }
    x
}

fn module_a_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst_mean: f64 = 0.0;
    let mut worst_var: f64 = 0.0;
    for trial in 0..20 {
        let kind = if trial % 2 == 0 { SensingKind::DftRp } else { SensingKind::Dft };
        let op = make_sensing_operator(16, 8, kind, trial).unwrap();
        let a = explicit_matrix(&op);
        let ah = a.adjoint();
        let h_pri: Vec<C64> = (0..16).map(|_| random_c(&mut rng, 1.0)).collect();
        let y: Vec<C64> = (0..8).map(|_| random_c(&mut rng, 1.0)).collect();
        let v = rng.random_range(0.1..2.0);
        let sigma2 = rng.random_range(0.01..1.0);
        let (h_post, v_post) = lmmse_update(&op, &y, &h_pri, v, sigma2).unwrap();

        // (I + (v / sigma2) A^H A) h = h_pri + (v / sigma2) A^H y
        let r = v / sigma2;
        let mut lhs = ah.matmul(&a).unwrap().scaled(r);
        for i in 0..16 {
            let d = lhs.get(i, i) + 1.0;
            lhs.set(i, i, d);
        }
        let ahy = ah.matvec(&y).unwrap();
        let rhs: Vec<C64> = h_pri.iter().zip(&ahy).map(|(h, b)| h + b * r).collect();
        let direct = solve(lhs.clone(), rhs);
        let scale = direct.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        let err = h_post
            .iter()
            .zip(&direct)
            .map(|(x, y)| (x - y).norm_sqr())
            .sum::<f64>()
            .sqrt();
        worst_mean = worst_mean.max(err / scale);

        // Average posterior variance: v tr((I + r A^H A)^-1) / n.
        let mut trace = 0.0;
        for i in 0..16 {
            let mut e = vec![C64::new(0.0, 0.0); 16];
            e[i] = C64::new(1.0, 0.0);
            trace += solve(lhs.clone(), e)[i].re;
        }
        let v_direct = v * trace / 16.0;
        worst_var = worst_var.max((v_post - v_direct).abs() / v_direct);
    }
    Outcome {
        id: 3,
        name: "Module A oracle",
        pass: worst_mean < 1e-8 && worst_var < 1e-8,
        detail: format!(
            "n=16, m=8, 20 instances: max relative mean error {worst_mean:.2e}, variance error {worst_var:.2e} (< 1e-8)"
        ),
        hard: true,
    }
}

fn base_config() -> ExperimentConfig {
    ExperimentConfig {
        algorithms: Algorithm::ALL.to_vec(),
        ..ExperimentConfig::default()
    }
}

fn trivial_exactness() -> Outcome {
    let cfg = ExperimentConfig {
        m: vec![256],
        snr_db: vec![f64::INFINITY],
        trials: 10,
        ..base_config()
    };
    let report = cmd_run(&cfg).unwrap();
    let mut worst = f64::NEG_INFINITY;
    let mut parts = Vec::new();
    let mut failed = 0;
    for cell in &report.cells {
        let first: Vec<f64> = cell.ok().map(|t| t.result.nmse_trace_db[0].0).collect();
        failed += cell.summary.failed;
        let w = first.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max(w);
        parts.push(format!("{} worst {w:.1} dB", cell.algorithm));
    }
    Outcome {
        id: 4,
        name: "noiseless M=N exactness",
        pass: worst < -200.0 && failed == 0,
        detail: format!("NMSE after iteration 1, 10 trials each: {} (< -200 dB)", parts.join(", ")),
        hard: true,
    }
}

fn cell<'a>(report: &'a RunReport, alg: Algorithm) -> &'a Summary {
    &report
        .cells
        .iter()
        .find(|c| c.algorithm == alg)
        .expect("cell present")
        .summary
}

fn gap_sigma(worse: &Summary, better: &Summary) -> f64 {
    (worse.mean_nmse_db - better.mean_nmse_db) / worse.stderr_db.hypot(better.stderr_db)
}

fn fmt_summary(alg: Algorithm, s: &Summary) -> String {
    format!(
        "{alg} {:.2} +- {:.2} dB (median {:.2})",
        s.mean_nmse_db, s.stderr_db, s.median_nmse_db
    )
}

fn se_agreement() -> Outcome {
    let cfg = ExperimentConfig {
        snr_db: vec![10.0, 30.0],
        trials: 500,
        se_trials: 200,
        ..base_config()
    };
    let report = cmd_se(&cfg).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for c in &report.comparisons {
        let gap = c.gap_db();
        if c.algorithm != Algorithm::TurboCs {
            pass &= gap.abs() <= 1.0;
        }
        parts.push(format!(
            "{}@{}dB SE {:.2} sim {:.2} gap {:+.2}",
            c.algorithm, c.snr_db, c.se.predicted_nmse_db, c.sim.mean_nmse_db, gap
        ));
    }
    Outcome {
        id: 5,
        name: "state-evolution agreement",
        pass,
        detail: format!(
            "{} (|gap| <= 1 dB for STCS-FS/DS; Turbo-CS recorded only; 500 sim trials, 200 MC trials)",
            parts.join("; ")
        ),
        hard: false,
    }
}

fn ordering(known: &RunReport) -> Outcome {
    let ds = cell(known, Algorithm::StcsDs);
    let fs = cell(known, Algorithm::StcsFs);
    let tc = cell(known, Algorithm::TurboCs);
    let g1 = gap_sigma(fs, ds);
    let g2 = gap_sigma(tc, fs);
    Outcome {
        id: 6,
        name: "algorithm ordering",
        pass: g1 > 2.0 && g2 > 2.0,
        detail: format!(
            "SNR 30 dB, M=103, 200 trials: {}, {}, {}; FS-DS gap {g1:.1} stderr, TC-FS gap {g2:.1} stderr (> 2)",
            fmt_summary(Algorithm::StcsDs, ds),
            fmt_summary(Algorithm::StcsFs, fs),
            fmt_summary(Algorithm::TurboCs, tc)
        ),
        hard: false,
    }
}

fn permutation_necessity(known: &RunReport, cfg: &ExperimentConfig) -> Outcome {
    let dft_cfg = ExperimentConfig {
        algorithms: vec![Algorithm::StcsFs, Algorithm::StcsDs],
        sensing: SensingKind::Dft,
        ..cfg.clone()
    };
    let dft = cmd_run(&dft_cfg).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for alg in [Algorithm::StcsFs, Algorithm::StcsDs] {
        let (a, b) = (cell(&dft, alg), cell(known, alg));
        let g = gap_sigma(a, b);
        pass &= g > 2.0;
        parts.push(format!(
            "{alg} DFT {:.2} vs DFT_RP {:.2} dB, gap {g:.1} stderr",
            a.mean_nmse_db, b.mean_nmse_db
        ));
    }
    Outcome {
        id: 7,
        name: "DFT-RP necessity",
        pass,
        detail: format!("{} (> 2)", parts.join("; ")),
        hard: false,
    }
}

fn em_learning(known: &RunReport, cfg: &ExperimentConfig) -> Outcome {
    let em_cfg = ExperimentConfig {
        em: true,
        ..cfg.clone()
    };
    let learned = cmd_run(&em_cfg).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for alg in Algorithm::ALL {
        let (e, k) = (cell(&learned, alg), cell(known, alg));
        let d = e.mean_nmse_db - k.mean_nmse_db;
        if alg != Algorithm::TurboCs {
            pass &= d <= 2.0;
        }
        parts.push(format!(
            "{alg} EM {:.2} vs known {:.2} dB ({d:+.2})",
            e.mean_nmse_db, k.mean_nmse_db
        ));
    }
    Outcome {
        id: 8,
        name: "EM learning",
        pass,
        detail: format!(
            "{} (STCS-FS/DS: EM no more than 2 dB worse; Turbo-CS recorded only)",
            parts.join("; ")
        ),
        hard: false,
    }
}

fn convergence_speed(known: &RunReport) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for alg in [Algorithm::StcsFs, Algorithm::StcsDs] {
        let c = known.cells.iter().find(|c| c.algorithm == alg).unwrap();
        let total = c.ok().count();
        let fast = c
            .ok()
            .filter(|t| t.result.converged && t.result.iterations_used <= 30)
            .count();
        let frac = fast as f64 / total as f64;
        pass &= frac >= 0.95;
        parts.push(format!("{alg} {fast}/{total} = {:.1}%", 100.0 * frac));
    }
    Outcome {
        id: 9,
        name: "convergence speed",
        pass,
        detail: format!(
            "stopped (relative change < 1e-6) within 30 iterations: {} (>= 95%)",
            parts.join(", ")
        ),
        hard: false,
    }
}

fn complexity_scaling() -> Outcome {
    let cfg = ExperimentConfig {
        algorithms: vec![Algorithm::StcsFs, Algorithm::StcsDs],
        trials: 7,
        bench_iters: 10,
        ..base_config()
    };
    let report = cmd_bench(&cfg).unwrap();
    let ratios = report.ratios();
    let worst = ratios.iter().copied().fold(0.0, f64::max);
    let times: Vec<String> = report
        .rows
        .iter()
        .map(|r| format!("{} N={} {:.2} ms", r.algorithm, r.n, 1e3 * r.seconds_per_iteration))
        .collect();
    Outcome {
        id: 10,
        name: "complexity scaling",
        pass: worst <= 2.6,
        detail: format!(
            "{}; doubling ratios {:?} (<= 2.6)",
            times.join(", "),
            ratios.iter().map(|r| (r * 100.0).round() / 100.0).collect::<Vec<_>>()
        ),
        hard: false,
    }
}

fn determinism() -> Outcome {
    let cfg = ExperimentConfig {
        snr_db: vec![10.0, 30.0],
        m: vec![77, 103],
        trials: 6,
        base_seed: 4242,
        ..base_config()
    };
    let first = cmd_run(&cfg).unwrap();
    let replay_cfg = ExperimentConfig::parse(&cfg.to_text()).unwrap();
    let second = cmd_run(&replay_cfg).unwrap();
    let em_cfg = ExperimentConfig {
        em: true,
        ..cfg.clone()
    };
    let em_a = cmd_run(&em_cfg).unwrap();
    let em_b = cmd_run(&ExperimentConfig::parse(&em_cfg.to_text()).unwrap()).unwrap();
    let sweep_a = cmd_sweep(&cfg).unwrap().to_csv();
    let sweep_b = cmd_sweep(&replay_cfg).unwrap().to_csv();
    let checks = [
        first.trials_csv() == second.trials_csv(),
        first.summary_csv() == second.summary_csv(),
        em_a.trials_csv() == em_b.trials_csv(),
        sweep_a == sweep_b,
    ];
    let same = checks.iter().filter(|&&c| c).count();
    Outcome {
        id: 11,
        name: "determinism",
        pass: same == checks.len(),
        detail: format!(
            "{same}/{} result CSVs byte-identical when replayed from the recorded config text",
            checks.len()
        ),
        hard: true,
    }
}

fn main() {
    let start = Instant::now();
    let mut outcomes = Vec::new();
    let mut run = |o: Outcome| {
        report(&o);
        outcomes.push(o);
    };
    run(operator_correctness());
    run(exact_inference_oracles());
    run(module_a_oracle());
    run(trivial_exactness());
    run(se_agreement());
    let cfg = ExperimentConfig {
        trials: 200,
        ..base_config()
    };
    let known = cmd_run(&cfg).unwrap();
    run(ordering(&known));
    run(permutation_necessity(&known, &cfg));
    run(em_learning(&known, &cfg));
    run(convergence_speed(&known));
    run(complexity_scaling());
    run(determinism());

    let passed = outcomes.iter().filter(|o| o.pass).count();
    println!(
        "acceptance: {passed}/{} criteria passed in {:.0} s",
        outcomes.len(),
        start.elapsed().as_secs_f64()
    );
    let hard_failures: Vec<u32> = outcomes.iter().filter(|o| o.hard && !o.pass).map(|o| o.id).collect();
    if !hard_failures.is_empty() {
        eprintln!("exact criteria failed: {hard_failures:?}");
        std::process::exit(1);
    }
}
