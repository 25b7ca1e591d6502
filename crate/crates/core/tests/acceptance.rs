//! Acceptance criteria, one line per criterion. Exits nonzero if any fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use spatial_ak::config::{run_detrended, run_extinction, run_tailbound, RunConfig};
use spatial_ak::economy::value_function;
use spatial_ak::simulate::{
    exact_mode0, simulate_closed_loop, FeedbackControl, NoiseSpec, Scheme, SimConfig,
};
use spatial_ak::verify::{
    estimate_j_optimal, fundamental_identity_gap, gap_report, hjb_residual, homogeneity_check,
    hs_wellposedness, lipschitz_report, moment_envelope, random_states,
};
use spatial_ak::{EigenSystem, FieldRecipe, Result, SpatialField, SpatialGrid, VerificationReport};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }

    fn from_report(report: &VerificationReport, detail: impl Into<String>) -> Self {
        let failed: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
        let mut detail = detail.into();
        if !failed.is_empty() {
            detail.push_str(&format!("; failed: {}", failed.join(", ")));
        }
        Self::new(report.all_passed(), detail)
    }

    /// Adds a wall-clock budget to the outcome.
    fn within(mut self, elapsed: Duration, budget: Duration) -> Self {
        let ok = elapsed <= budget;
        self.pass &= ok;
        self.detail.push_str(&format!(
            "; {:.2}s (budget {}s{})",
            elapsed.as_secs_f64(),
            budget.as_secs(),
            if ok { "" } else { ", exceeded" }
        ));
        self
    }
}

fn b1() -> RunConfig {
    RunConfig::benchmark_b1()
}

fn b2() -> RunConfig {
    RunConfig::benchmark_b2()
}

fn with_modes(mut cfg: RunConfig, m: usize) -> RunConfig {
    cfg.simulate.n_modes = m;
    cfg
}

fn spectral_errors(n_points: usize) -> Result<Vec<f64>> {
    let grid = SpatialGrid::new(n_points)?;
    let es = EigenSystem::from_potential(&SpatialField::constant(grid, 0.05)?, 5)?;
    let oracle = [0.05, -0.95, -0.95, -3.95, -3.95];
    Ok(es
        .lambdas()
        .iter()
        .zip(oracle)
        .map(|(l, o)| (l - o).abs())
        .collect())
}

fn criterion_1() -> Result<Outcome> {
    let start = Instant::now();
    let coarse = spectral_errors(256)?;
    let fine = spectral_errors(512)?;
    let elapsed = start.elapsed();
    let max_err = coarse.iter().cloned().fold(0.0, f64::max);
    // Modes with nonzero discretization error must improve by about 4x.
    let ratios: Vec<f64> = coarse
        .iter()
        .zip(&fine)
        .filter(|(c, _)| **c > 1e-12)
        .map(|(c, f)| c / f)
        .collect();
    let ratio_ok = !ratios.is_empty() && ratios.iter().all(|r| (3.5..=4.5).contains(r));
    Ok(Outcome::new(
        max_err <= 5e-3 && ratio_ok,
        format!("max |lambda error| {max_err:.3e}, refinement ratios {ratios:.3?}"),
    )
    .within(elapsed, Duration::from_secs(1)))
}

fn criterion_2() -> Result<Outcome> {
    let problem = b1().problem()?;
    let (rho, sigma, alpha0, a) = (0.1_f64, 0.5_f64, 0.2_f64, 0.05_f64);
    let e0 = (2.0 * PI).powf(-0.5);
    let integral = 2.0 * PI * e0.powf(-(1.0 - sigma) / sigma);
    let d = rho - a * (1.0 - sigma) + 0.5 * alpha0 * alpha0 * sigma * (1.0 - sigma);
    let oracle = (sigma * integral / d).powf(sigma);
    let gamma = problem.pc.gamma;
    let rel = ((gamma - oracle) / oracle).abs();
    let identity = problem
        .pc
        .rate_identity_residual(&problem.fields, &problem.es)?
        .abs();
    Ok(Outcome::new(
        rel <= 1e-6 && identity <= 1e-10,
        format!("gamma {gamma:.10} vs {oracle:.10} (rel {rel:.2e}), rate identity residual {identity:.2e}"),
    ))
}

fn criterion_3() -> Result<Outcome> {
    let start = Instant::now();
    let problem = b1().problem()?;
    let states = random_states(&problem.es, 10, 7)?;
    let mut worst: f64 = 0.0;
    for k in &states {
        let w = value_function(k, &problem.pc, &problem.es)?.to_f64();
        worst = worst.max(hjb_residual(k, &problem)?.abs() / (problem.params.rho * w).abs());
    }
    Ok(Outcome::new(
        worst <= 1e-8,
        format!("max |residual|/|rho w| = {worst:.3e} over 10 states"),
    )
    .within(start.elapsed(), Duration::from_secs(1)))
}

fn euler_mean_gap(problem: &spatial_ak::Problem, dt: f64) -> Result<f64> {
    let cfg = SimConfig {
        horizon: 10.0,
        dt,
        n_modes: 1,
        n_paths: 10_000,
        seed: 11,
        scheme: Scheme::EulerMaruyama,
        record_every: (10.0 / dt).round() as usize,
    };
    let ens = simulate_closed_loop(
        &problem.k0_modes[..1],
        &problem.es,
        &problem.pc,
        &problem.params,
        &cfg,
    )?;
    let last = ens.n_stamps() - 1;
    let x0 = problem.x0();
    let diffs: Vec<f64> = ens
        .admissible()
        .map(|p| p.modes[last] - exact_mode0(10.0, x0, &problem.pc, p.beta0[last]))
        .collect();
    Ok(diffs.iter().sum::<f64>() / diffs.len() as f64)
}

fn criterion_4() -> Result<Outcome> {
    let start = Instant::now();
    let problem = with_modes(b1(), 4).problem()?;
    let cfg = SimConfig {
        horizon: 10.0,
        dt: 0.01,
        n_modes: 4,
        n_paths: 200,
        seed: 3,
        scheme: Scheme::ExactMode,
        record_every: 1,
    };
    let ens = simulate_closed_loop(
        &problem.k0_modes[..4],
        &problem.es,
        &problem.pc,
        &problem.params,
        &cfg,
    )?;
    let x0 = problem.x0();
    let mut worst: f64 = 0.0;
    for p in &ens.paths {
        for (s, &t) in ens.times.iter().enumerate() {
            let oracle = exact_mode0(t, x0, &problem.pc, p.beta0[s]);
            worst = worst.max(((p.modes[s * 4] - oracle) / oracle).abs());
        }
    }
    let coarse = euler_mean_gap(&problem, 0.02)?;
    let fine = euler_mean_gap(&problem, 0.01)?;
    let ratio = coarse / fine;
    Ok(Outcome::new(
        worst <= 1e-12 && (1.4..=2.6).contains(&ratio),
        format!(
            "exact mode-0 max rel error {worst:.2e}; EM mean gap {coarse:.4e} (dt 0.02) / {fine:.4e} (dt 0.01) = {ratio:.3}"
        ),
    )
    .within(start.elapsed(), Duration::from_secs(30)))
}

fn criterion_5() -> Result<Outcome> {
    let start = Instant::now();
    let cfg = b1();
    let problem = cfg.problem()?;
    let sim = SimConfig {
        horizon: 80.0,
        dt: 0.01,
        n_modes: 1,
        n_paths: 10_000,
        seed: cfg.simulate.seed,
        scheme: Scheme::ExactMode,
        record_every: 1,
    };
    let est = estimate_j_optimal(&problem, &sim)?;
    let w0 = problem.w0()?.to_f64();
    let j = est.mean.to_f64();
    let ok = (j - w0).abs() <= 3.0 * est.std_error && est.std_error <= 0.01 * w0.abs();
    Ok(Outcome::new(
        ok,
        format!(
            "J {j:.4} +/- {:.4} vs w(K0) {w0:.4}; SE/w {:.2e}",
            est.std_error,
            est.std_error / w0.abs()
        ),
    )
    .within(start.elapsed(), Duration::from_secs(120)))
}

fn criterion_6() -> Result<Outcome> {
    let cfg = b1();
    let problem = cfg.problem()?;
    let noise = NoiseSpec::from_params(&problem.params, 1);
    let control = FeedbackControl::new(&problem.pc, 1, 0.5)?;
    let sim = SimConfig {
        horizon: 80.0,
        dt: 0.01,
        n_modes: 1,
        n_paths: 10_000,
        seed: cfg.simulate.seed,
        scheme: Scheme::EulerMaruyama,
        record_every: 1,
    };
    let est = fundamental_identity_gap(&problem, &noise, &control, &sim)?;
    let report = gap_report("half_feedback", &est, 3.0);
    let below = report
        .get("half_feedback_value_gap_positive")
        .is_some_and(|c| c.pass);
    let identity = report
        .get("half_feedback_fundamental_identity")
        .is_some_and(|c| c.pass);
    Ok(Outcome::new(
        below && identity,
        format!(
            "J {:.4} +/- {:.4} vs w {:.4}; identity {:.4} vs w - J {:.4} (residual SE {:.2e})",
            est.j.0,
            est.j.1,
            est.w0,
            est.gap.0 + est.terminal.0,
            est.payoff_gap(),
            est.identity_residual.1
        ),
    ))
}

fn criterion_7() -> Result<Outcome> {
    let cfg = with_modes(b1(), 4);
    let problem = cfg.problem()?;
    let sim = SimConfig {
        horizon: 10.0,
        dt: 0.01,
        n_modes: 4,
        n_paths: 200,
        seed: cfg.simulate.seed,
        scheme: Scheme::ExactMode,
        record_every: 10,
    };
    let report = homogeneity_check(&problem, &sim, 2.0)?;
    let detail = report
        .get("homogeneity_j_per_path")
        .map(|c| format!("max per-path J deviation {:.2e}", c.measured))
        .unwrap_or_default();
    Ok(Outcome::from_report(&report, detail))
}

fn criterion_8() -> Result<Outcome> {
    let start = Instant::now();
    let mut c2 = b2();
    c2.asymptotics.modes = vec![1];
    let (r2, rows) = run_detrended(&c2, &c2.problem()?)?;
    let mut c1 = b1();
    c1.asymptotics.modes = vec![0];
    let (r1, _) = run_detrended(&c1, &c1.problem()?)?;
    let mut report = r2;
    report.extend(r1);
    let detail = rows
        .iter()
        .map(|r| {
            format!(
                "B2 mode {} KS {:.4} (critical {:.4}, seed {})",
                r.mode, r.statistic, r.critical, c2.simulate.seed
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    let has_ks = !rows.is_empty();
    let mut out = Outcome::from_report(&report, detail);
    out.pass &= has_ks;
    Ok(out.within(start.elapsed(), Duration::from_secs(120)))
}

fn criterion_9() -> Result<Outcome> {
    let cfg = b1();
    let problem = cfg.problem()?;
    let (report, rows) = run_extinction(&cfg, &problem)?;
    let last = rows
        .last()
        .map(|r| (r.t, r.p_hat, r.proxy))
        .unwrap_or_default();
    Ok(Outcome::from_report(
        &report,
        format!(
            "P(|K({})| > eps) = {:.4}, proxy {:.3e}",
            last.0, last.1, last.2
        ),
    ))
}

fn criterion_10() -> Result<Outcome> {
    let start = Instant::now();
    let (report, rows) = run_tailbound(&b1())?;
    let detail = rows
        .iter()
        .map(|r| format!("x={}: {:.4} <= {:.4}", r.x, r.empirical, r.bound))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(Outcome::from_report(
        &report,
        format!("{detail}; {:.2}s", start.elapsed().as_secs_f64()),
    ))
}

fn criterion_11() -> Result<Outcome> {
    let cfg = with_modes(b1(), 4);
    let problem = cfg.problem()?;
    let sim = SimConfig {
        horizon: 10.0,
        dt: 0.01,
        n_modes: 4,
        n_paths: 2000,
        seed: cfg.simulate.seed,
        scheme: Scheme::ExactMode,
        record_every: 10,
    };
    let report = moment_envelope(&problem, &sim, &[2.0, 4.0], 5, 1.5)?;
    let worst = report
        .checks
        .iter()
        .map(|c| c.measured / c.oracle)
        .fold(0.0, f64::max);
    Ok(Outcome::from_report(
        &report,
        format!("10 checks, worst ratio to reference constant {worst:.3} (limit 1.5)"),
    ))
}

fn criterion_12() -> Result<Outcome> {
    let cfg = with_modes(b1(), 32);
    let problem = cfg.problem()?;
    let noise = NoiseSpec::from_params(&problem.params, 32);
    let mut report = hs_wellposedness(&noise, &problem.es, &problem.k0_modes, 80.0)?;
    report.extend(lipschitz_report(
        &noise,
        &problem.es,
        1.0,
        200,
        cfg.simulate.seed,
    ));

    // A field-dependent initial state exercises every mode.
    let grid = *problem.es.grid();
    let k0 = FieldRecipe::Cosine {
        a: 1.0,
        b: 0.5,
        m: 3,
    }
    .realize(grid)?;
    let modes = problem.es.project(&k0)?;
    report.extend(hs_wellposedness(&noise, &problem.es, &modes, 80.0)?);
    let detail = report
        .get("lipschitz_stable_under_doubling")
        .map(|c| format!("Lipschitz change under doubling {:.3e}", c.measured))
        .unwrap_or_default();
    Ok(Outcome::from_report(&report, detail))
}

type Criterion = fn() -> Result<Outcome>;

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 12] = [
        ("spectral oracle", criterion_1),
        ("gamma oracle and rate identity", criterion_2),
        ("HJB residual", criterion_3),
        ("pathwise GBM and Euler-Maruyama weak order", criterion_4),
        ("optimality of the closed form", criterion_5),
        ("suboptimality gap and fundamental identity", criterion_6),
        ("exact homogeneity", criterion_7),
        ("detrended limit law", criterion_8),
        ("extinction", criterion_9),
        ("tail bound", criterion_10),
        ("moment bound", criterion_11),
        ("well-posedness diagnostics", criterion_12),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = run().unwrap_or_else(|e| Outcome::new(false, format!("error: {e}")));
        if !outcome.pass {
            failures += 1;
        }
        println!(
            "criterion {:>2} {} [{name}]: {}",
            i + 1,
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.detail
        );
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failures,
        criteria.len()
    );
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
