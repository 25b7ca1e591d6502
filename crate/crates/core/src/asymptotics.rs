//! Long-time behaviour of the optimal path: the law of the detrended
//! coefficients, extinction of the raw path, and the exponential-functional
//! tail bound.
//!
//! For `n ≥ 1` and uniform volatility `α`, the detrended coefficient
//! `e^{−g t − α β₀(t)} K_n(t)` converges in law to
//!
//! ```text
//! −c_n X₀ ∫₀^∞ exp((λ_n − g − α²/2) r + α (β_n(r) − β₀(r))) dr.
//! ```

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::economy::{asymptotics_ready, check_assumptions, Problem};
use crate::error::{Error, Result};
use crate::report::{Check, VerificationReport};
use crate::rng::{Domain, NormalStream};
use crate::simulate::{
    closed_loop_paths, detrend, simulate_closed_loop, PathObserver, PathStatus, Scheme, SimConfig,
    StepView,
};
use crate::verify::mean_and_se;

/// Sorted finite sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    sorted: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySample);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { sorted: values })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted
    }

    /// Fraction of the sample `≤ x`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.sorted.partition_point(|v| *v <= x) as f64 / self.len() as f64
    }

    pub fn mean_and_se(&self) -> (f64, f64) {
        mean_and_se(&self.sorted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    /// 5% critical value `1.358 √((m+n)/(mn))`.
    pub critical: f64,
    pub pass: bool,
}

/// Two-sample Kolmogorov–Smirnov test at level 5%.
pub fn ks_two_sample(a: &EmpiricalDistribution, b: &EmpiricalDistribution) -> KsResult {
    let (xa, xb) = (a.values(), b.values());
    let (m, n) = (xa.len(), xb.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < m && j < n {
        let x = xa[i].min(xb[j]);
        while i < m && xa[i] <= x {
            i += 1;
        }
        while j < n && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / m as f64 - j as f64 / n as f64).abs());
    }
    let (mf, nf) = (m as f64, n as f64);
    let critical = 1.358 * ((mf + nf) / (mf * nf)).sqrt();
    KsResult {
        statistic: d,
        critical,
        pass: d <= critical,
    }
}

/// Sampler of the truncated limit law of one detrended coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitLawSampler {
    pub mode: usize,
    pub lambda_n: f64,
    pub g: f64,
    pub alpha: f64,
    pub c_n: f64,
    pub x0: f64,
    /// Truncation horizon `R`.
    pub horizon: f64,
    pub dt: f64,
}

impl LimitLawSampler {
    /// Parameters from a model; `R` is chosen so that the expected tail
    /// `|c_n| X₀ e^{κR} / |κ|` falls below `tolerance`.
    pub fn new(problem: &Problem, mode: usize, dt: f64, tolerance: f64) -> Result<Self> {
        if mode == 0 {
            return Err(Error::Parameter(
                "mode 0 has a degenerate limit (the constant ⟨K0, e0⟩)".into(),
            ));
        }
        if mode >= problem.es.n_modes() {
            return Err(Error::Parameter(format!(
                "mode {mode} exceeds the {} retained modes",
                problem.es.n_modes()
            )));
        }
        Self::from_parts(
            mode,
            problem.es.lambda(mode),
            problem.pc.g,
            problem.params.alpha0,
            problem.pc.forcing[mode],
            problem.x0(),
            dt,
            tolerance,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        mode: usize,
        lambda_n: f64,
        g: f64,
        alpha: f64,
        c_n: f64,
        x0: f64,
        dt: f64,
        tolerance: f64,
    ) -> Result<Self> {
        let drift = lambda_n - g - 0.5 * alpha * alpha;
        if drift >= 0.0 {
            return Err(Error::Assumption(format!(
                "limit-law drift λ_n − g − α²/2 = {drift} is not negative"
            )));
        }
        if !(dt > 0.0 && tolerance > 0.0) {
            return Err(Error::Parameter("dt and tolerance must be positive".into()));
        }
        let kappa = lambda_n - g + 0.5 * alpha * alpha;
        // Without a finite mean, fall back to the typical-path decay rate.
        let rate = if kappa < 0.0 { kappa } else { drift };
        let scale = c_n.abs() * x0;
        let horizon = if scale == 0.0 {
            dt
        } else {
            ((scale / (tolerance * rate.abs())).ln() / rate.abs()).max(dt)
        };
        let horizon = (horizon / dt).ceil() * dt;
        Ok(Self {
            mode,
            lambda_n,
            g,
            alpha,
            c_n,
            x0,
            horizon,
            dt,
        })
    }

    /// `λ_n − g − α²/2`
    pub fn drift(&self) -> f64 {
        self.lambda_n - self.g - 0.5 * self.alpha * self.alpha
    }

    /// `λ_n − g + α²/2`
    pub fn kappa(&self) -> f64 {
        self.lambda_n - self.g + 0.5 * self.alpha * self.alpha
    }

    /// Expected tail beyond `R`, `|c_n| X₀ e^{κR} / |κ|` (infinite if `κ ≥ 0`).
    pub fn tail_estimate(&self) -> f64 {
        let k = self.kappa();
        if k >= 0.0 {
            f64::INFINITY
        } else {
            self.c_n.abs() * self.x0 * (k * self.horizon).exp() / k.abs()
        }
    }

    /// Mean of the truncated integral.
    pub fn truncated_mean(&self) -> f64 {
        let k = self.kappa();
        -self.c_n * self.x0 * (k * self.horizon).exp_m1() / k
    }

    /// Mean of the untruncated law, `−c_n X₀ / |κ|`.
    pub fn limit_mean(&self) -> f64 {
        -self.c_n * self.x0 / self.kappa().abs()
    }

    pub fn sample(&self, n_samples: usize, seed: u64) -> Result<EmpiricalDistribution> {
        if n_samples == 0 {
            return Err(Error::EmptySample);
        }
        if self.c_n == 0.0 {
            return EmpiricalDistribution::new(vec![0.0; n_samples]);
        }
        if self.alpha == 0.0 {
            let v = self.c_n * self.x0 / self.drift();
            return EmpiricalDistribution::new(vec![v; n_samples]);
        }
        let steps = (self.horizon / self.dt).round() as usize;
        let drift_step = self.drift() * self.dt;
        let vol = self.alpha * self.dt.sqrt();
        let values: Vec<f64> = (0..n_samples)
            .into_par_iter()
            .map(|i| {
                let mut z0 = NormalStream::new(seed, Domain::LimitLaw, i as u64, 0);
                let mut zn = NormalStream::new(seed, Domain::LimitLaw, i as u64, 1);
                let mut y: f64 = 0.0;
                let mut prev = 1.0;
                let mut integral = 0.0;
                for _ in 0..steps {
                    y += drift_step + vol * (zn.next_normal() - z0.next_normal());
                    let cur = y.exp();
                    integral += 0.5 * self.dt * (prev + cur);
                    prev = cur;
                }
                -self.c_n * self.x0 * integral
            })
            .collect();
        EmpiricalDistribution::new(values)
    }
}

/// One KS comparison of a detrended marginal with its limit law.
#[derive(Debug, Clone, PartialEq)]
pub struct KsRow {
    pub mode: usize,
    pub statistic: f64,
    pub critical: f64,
    pub pass: bool,
}

/// Forcing coefficients below this fraction of `c₀` are treated as zero.
const ZERO_FORCING: f64 = 1e-10;

/// Detrended optimal coefficients at `T` against their limit laws.
///
/// Mode 0 must be exactly constant. A mode without forcing must concentrate
/// at 0; a forced mode is compared with [`LimitLawSampler`] samples by a
/// two-sample KS test.
pub fn detrended_convergence_check(
    problem: &Problem,
    cfg: &SimConfig,
    modes: &[usize],
    tolerance: f64,
) -> Result<(VerificationReport, Vec<KsRow>)> {
    let readiness = check_assumptions(&problem.params, &problem.fields, &problem.es);
    if !asymptotics_ready(&readiness) {
        let lambda1 = readiness.get("lambda1_below_g").map(|c| c.measured);
        return Err(Error::Assumption(format!(
            "the limit law needs λ1 < g and uniform volatility (λ1 = {lambda1:?}, g = {}, uniform = {})",
            problem.pc.g,
            problem.params.is_uniform_noise()
        )));
    }
    let m = modes.iter().copied().max().unwrap_or(0) + 1;
    let n_steps = cfg.n_steps()?;
    let sim = SimConfig {
        n_modes: m.max(1),
        scheme: Scheme::ExactMode,
        record_every: n_steps,
        ..cfg.clone()
    };
    let ens = simulate_closed_loop(
        &problem.k0_modes[..sim.n_modes],
        &problem.es,
        &problem.pc,
        &problem.params,
        &sim,
    )?;
    let det = detrend(&ens, &problem.pc)?;
    let last = det.n_stamps() - 1;
    let x0 = problem.x0();
    let mut r = VerificationReport::new();
    let mut rows = Vec::new();

    let mut dev: f64 = 0.0;
    for p in det.admissible() {
        for s in 0..det.n_stamps() {
            dev = dev.max((p.modes[s * det.n_modes] - x0).abs());
        }
    }
    r.push(Check::at_most("detrended_mode0_constant", dev, 1e-10, 0.0));

    let c0 = problem.pc.forcing[0].abs();
    for &n in modes.iter().filter(|&&n| n > 0) {
        let sample = det.marginal(last, n);
        let c_n = problem.pc.forcing[n];
        if c_n.abs() <= ZERO_FORCING * c0 {
            let near =
                sample.iter().filter(|v| v.abs() < 1e-3).count() as f64 / sample.len() as f64;
            r.push(
                Check::at_least(
                    format!("detrended_mode{n}_concentrates_at_zero"),
                    near,
                    0.99,
                    0.0,
                )
                .with_note("no forcing: limit is the point mass at 0"),
            );
            continue;
        }
        let sampler = LimitLawSampler::new(problem, n, cfg.dt, tolerance)?;
        let limit = sampler.sample(cfg.n_paths, cfg.seed)?;
        let ks = ks_two_sample(&EmpiricalDistribution::new(sample)?, &limit);
        r.push(
            Check::at_most(
                format!("detrended_mode{n}_ks"),
                ks.statistic,
                ks.critical,
                0.0,
            )
            .with_note(format!(
                "R = {}, tail estimate {:.3e}, seed {}",
                sampler.horizon,
                sampler.tail_estimate(),
                cfg.seed
            )),
        );
        rows.push(KsRow {
            mode: n,
            statistic: ks.statistic,
            critical: ks.critical,
            pass: ks.pass,
        });
    }
    Ok((r, rows))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtinctionRow {
    pub t: f64,
    /// Fraction of paths with `‖K(t)‖ > ε`.
    pub p_hat: f64,
    /// Binomial standard error at the proxy probability.
    pub std_error: f64,
    /// `P(⟨K(t), e₀⟩ > ε)` from the lognormal law of mode 0.
    pub proxy: f64,
}

/// `Φ̄((ln(ε/X₀) − g t) / (α₀ √t))`
pub fn extinction_proxy(x0: f64, g: f64, alpha0: f64, epsilon: f64, t: f64) -> f64 {
    if t == 0.0 || alpha0 == 0.0 {
        return if x0 * (g * t).exp() > epsilon {
            1.0
        } else {
            0.0
        };
    }
    let z = ((epsilon / x0).ln() - g * t) / (alpha0 * t.sqrt());
    Normal::standard().sf(z)
}

struct StampNorms {
    steps: Vec<usize>,
    norms: Vec<f64>,
}

impl PathObserver for StampNorms {
    type Output = (PathStatus, Vec<f64>);

    fn observe(&mut self, v: &StepView<'_>) {
        if self.steps.binary_search(&v.step).is_ok() {
            self.norms
                .push(v.modes.iter().map(|x| x * x).sum::<f64>().sqrt());
        }
    }

    fn finish(self, status: PathStatus) -> Self::Output {
        (status, self.norms)
    }
}

/// `P̂(‖K(t)‖ > ε)` for the raw optimal path at each requested time, with
/// the mode-0 proxy.
pub fn extinction_curve(
    problem: &Problem,
    cfg: &SimConfig,
    epsilon: f64,
    times: &[f64],
) -> Result<Vec<ExtinctionRow>> {
    if !(epsilon > 0.0) {
        return Err(Error::Parameter(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let n_steps = cfg.n_steps()?;
    let mut steps = Vec::with_capacity(times.len());
    for &t in times {
        let s = (t / cfg.dt).round();
        if (s * cfg.dt - t).abs() > 1e-9 * t.max(1.0) || s as usize > n_steps || t < 0.0 {
            return Err(Error::Parameter(format!(
                "time {t} is not a step of the simulation grid"
            )));
        }
        steps.push(s as usize);
    }
    let mut order = steps.clone();
    order.sort_unstable();
    order.dedup();
    let paths = closed_loop_paths(
        &problem.k0_modes[..cfg.n_modes],
        &problem.es,
        &problem.pc,
        &problem.params,
        cfg,
        |_| StampNorms {
            steps: order.clone(),
            norms: Vec::with_capacity(order.len()),
        },
    )?;
    let used: Vec<&Vec<f64>> = paths
        .iter()
        .filter(|(s, n)| s.is_admissible() && n.len() == order.len())
        .map(|(_, n)| n)
        .collect();
    if used.is_empty() {
        return Err(Error::EmptySample);
    }
    let n = used.len() as f64;
    Ok(times
        .iter()
        .zip(&steps)
        .map(|(&t, step)| {
            let idx = order.binary_search(step).expect("step recorded");
            let p_hat = used.iter().filter(|v| v[idx] > epsilon).count() as f64 / n;
            let proxy = extinction_proxy(
                problem.x0(),
                problem.pc.g,
                problem.params.alpha0,
                epsilon,
                t,
            );
            ExtinctionRow {
                t,
                p_hat,
                std_error: (proxy * (1.0 - proxy) / n).sqrt(),
                proxy,
            }
        })
        .collect())
}

/// Extinction at the last time and domination of the curve by the proxy.
pub fn extinction_report(
    problem: &Problem,
    rows: &[ExtinctionRow],
    level: f64,
    k: f64,
) -> VerificationReport {
    let mut r = VerificationReport::new();
    if problem.pc.g >= 0.0 {
        r.note(format!(
            "g = {} >= 0: no extinction predicted",
            problem.pc.g
        ));
    }
    if let Some(last) = rows.last() {
        r.push(
            Check::at_most("extinction_final_probability", last.p_hat, level, 0.0)
                .with_note(format!("t = {}", last.t)),
        );
    }
    let excess = rows
        .iter()
        .map(|row| row.p_hat - row.proxy - k * row.std_error)
        .fold(f64::NEG_INFINITY, f64::max);
    r.push(
        Check::at_most("extinction_dominated_by_proxy", excess, 0.0, 0.0)
            .with_note("max over stamps of p_hat - proxy - k SE"),
    );
    r.note("the raw path is tested, as in the extinction statement");
    r
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailRow {
    pub x: f64,
    pub empirical: f64,
    pub bound: f64,
    pub std_error: f64,
    pub pass: bool,
}

/// Survival of `S = sup_{t ≤ T} exp(s₁ B₁(t) + s₂ B₂(t) − μ t)` against the
/// bound `x^{−λ}`, `λ = 2μ / (s₁² + s₂²)`.
///
/// A path stops early once its running maximum exceeds every `x`, or once
/// the process sits so far below `ln min x` that a return has probability
/// below `1e−12`.
#[allow(clippy::too_many_arguments)]
pub fn sup_exp_tail_check(
    mu: f64,
    s1: f64,
    s2: f64,
    xs: &[f64],
    n_paths: usize,
    horizon: f64,
    dt: f64,
    seed: u64,
) -> Result<(VerificationReport, Vec<TailRow>)> {
    if !(mu > 0.0) {
        return Err(Error::Parameter(format!("mu must be positive, got {mu}")));
    }
    let v = s1 * s1 + s2 * s2;
    if !(v > 0.0) {
        return Err(Error::Parameter(
            "at least one volatility must be nonzero".into(),
        ));
    }
    if xs.is_empty() || xs.iter().any(|x| !(*x >= 1.0)) {
        return Err(Error::Parameter(
            "tail thresholds must be at least 1".into(),
        ));
    }
    if n_paths == 0 || !(dt > 0.0 && horizon >= dt) {
        return Err(Error::Parameter(
            "need n_paths > 0 and 0 < dt <= horizon".into(),
        ));
    }
    let lambda = 2.0 * mu / v;
    let log_min = xs.iter().cloned().fold(f64::INFINITY, f64::min).ln();
    let log_max = xs.iter().cloned().fold(0.0, f64::max).ln();
    let gap = v * 1e12f64.ln() / (2.0 * mu);
    let steps = (horizon / dt).round() as usize;
    let (a1, a2) = (s1 * dt.sqrt(), s2 * dt.sqrt());
    let maxima: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut z1 = NormalStream::new(seed, Domain::TailBound, p as u64, 0);
            let mut z2 = NormalStream::new(seed, Domain::TailBound, p as u64, 1);
            let mut y: f64 = 0.0;
            let mut best: f64 = 0.0;
            for _ in 0..steps {
                y += -mu * dt + a1 * z1.next_normal() + a2 * z2.next_normal();
                best = best.max(y);
                if best > log_max || log_min - y > gap {
                    break;
                }
            }
            best
        })
        .collect();
    let n = n_paths as f64;
    let mut r = VerificationReport::new();
    let mut rows = Vec::new();
    for &x in xs {
        let lx = x.ln();
        let empirical = maxima.iter().filter(|m| **m > lx).count() as f64 / n;
        let bound = x.powf(-lambda);
        let se = (bound * (1.0 - bound) / n).sqrt();
        let check = Check::at_most(format!("tail_bound_x{x}"), empirical, bound, 3.0 * se);
        let mut check = check.with_note(format!("lambda = {lambda}"));
        check.std_error = Some(se);
        rows.push(TailRow {
            x,
            empirical,
            bound,
            std_error: se,
            pass: check.pass,
        });
        r.push(check);
    }
    r.note("discrete monitoring can only lower the empirical survival");
    Ok((r, rows))
}
