//! Numerical verification of the optimality structure and of the noise
//! well-posedness quantities.
//!
//! Derivatives of `w` are never differenced numerically: with
//! `X = ⟨K, e₀⟩`, `Dw = γ X^{−σ} e₀` and `½ Tr(B B* D²w) = −½ σ γ α₀² X^{1−σ}`.

use crate::economy::{
    check_assumptions, compute_gamma, hamiltonian_cv, hamiltonian_max, hamiltonian_maximizer,
    value_function, ModelFields, ModelParams, PolicyConstants, Problem,
};
use crate::error::{Error, Result};
use crate::fields::SpatialField;
use crate::report::{Check, Relation, VerificationReport};
use crate::rng::{Domain, NormalStream};
use crate::simulate::{
    closed_loop_paths, controlled_paths, ControlSupplier, FeedbackControl, NoiseSpec, PathObserver,
    PathStatus, Scheme, SimConfig, StepView,
};
use crate::spectral::EigenSystem;
use crate::value::ExtendedReal;

/// Sample mean and its standard error.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// HJB residual of `w` at `K` for the computed γ.
pub fn hjb_residual(k: &SpatialField, problem: &Problem) -> Result<f64> {
    hjb_residual_for_gamma(
        k,
        problem.pc.gamma,
        &problem.params,
        &problem.fields,
        &problem.es,
    )
}

/// `ρ w − ⟨K, L Dw⟩ − H_MAX(Dw) + ½ σ γ α₀² X^{1−σ}` for an arbitrary γ.
pub fn hjb_residual_for_gamma(
    k: &SpatialField,
    gamma: f64,
    params: &ModelParams,
    fields: &ModelFields,
    es: &EigenSystem,
) -> Result<f64> {
    let x = k.inner_product(es.principal())?;
    if x <= 0.0 {
        return Err(Error::Domain(format!(
            "HJB residual needs ⟨K, e0⟩ > 0, got {x}"
        )));
    }
    let s = params.sigma;
    let w = gamma * x.powf(1.0 - s) / (1.0 - s);
    let dw = es.principal().scale(gamma * x.powf(-s));
    let k_ldw = k.inner_product(&dw)? * es.lambda(0);
    let hmax = hamiltonian_max(&dw, &fields.population, &fields.weight, s)?;
    let trace = 0.5 * s * gamma * params.alpha0.powi(2) * x.powf(1.0 - s);
    Ok(params.rho * w - k_ldw - hmax + trace)
}

/// `J(c*) = γ ⟨K₀, e₀⟩^{1−σ} / (1−σ)`.
pub fn analytic_j_optimal(
    k0: &SpatialField,
    pc: &PolicyConstants,
    es: &EigenSystem,
) -> Result<ExtendedReal> {
    value_function(k0, pc, es)
}

/// Trapezoid accumulation of `∫ e^{−ρt} U(c(t)) dt`.
#[derive(Debug, Clone)]
struct Discounted {
    rho: f64,
    dt: f64,
    n_steps: usize,
    sum: f64,
    neg_inf: bool,
    last_utility: ExtendedReal,
    max_abs_utility: f64,
}

impl Discounted {
    fn new(rho: f64, dt: f64, n_steps: usize) -> Self {
        Self {
            rho,
            dt,
            n_steps,
            sum: 0.0,
            neg_inf: false,
            last_utility: ExtendedReal::Finite(0.0),
            max_abs_utility: 0.0,
        }
    }

    fn weight(&self, step: usize) -> f64 {
        if step == 0 || step == self.n_steps {
            0.5 * self.dt
        } else {
            self.dt
        }
    }

    fn add(&mut self, step: usize, t: f64, value: ExtendedReal) {
        match value {
            ExtendedReal::Finite(u) => {
                self.sum += self.weight(step) * (-self.rho * t).exp() * u;
                self.max_abs_utility = self.max_abs_utility.max(u.abs());
            }
            ExtendedReal::NegInfinity => self.neg_inf = true,
        }
        self.last_utility = value;
    }
}

#[derive(Debug, Clone)]
struct PathJ {
    status: PathStatus,
    /// `None` when the utility reached `−∞`.
    running: Option<f64>,
    final_utility: ExtendedReal,
    max_abs_utility: f64,
}

struct JObserver(Discounted);

impl PathObserver for JObserver {
    type Output = PathJ;

    fn observe(&mut self, v: &StepView<'_>) {
        self.0.add(v.step, v.t, v.control.utility);
    }

    fn finish(self, status: PathStatus) -> PathJ {
        PathJ {
            status,
            running: (!self.0.neg_inf).then_some(self.0.sum),
            final_utility: self.0.last_utility,
            max_abs_utility: self.0.max_abs_utility,
        }
    }
}

/// Monte Carlo estimate of `J(c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JEstimate {
    pub mean: ExtendedReal,
    pub std_error: f64,
    pub n_used: usize,
    /// Paths flagged inadmissible or exploded.
    pub n_excluded: usize,
    /// Paths whose utility reached `−∞`.
    pub n_neg_inf: usize,
    /// Mean analytic tail beyond the horizon (optimal control only).
    pub tail: f64,
    /// Mean of `e^{−ρT} max_t |U(c(t))| / ρ`: size of the neglected tail for
    /// controls without an analytic one.
    pub truncation_indicator: f64,
    /// Per-path estimates in path order (admissible paths, finite values).
    pub per_path: Vec<f64>,
}

fn summarize_j(paths: Vec<PathJ>, rho: f64, horizon: f64, tail_rate: Option<f64>) -> JEstimate {
    let discount = (-rho * horizon).exp();
    let mut per_path = Vec::with_capacity(paths.len());
    let mut n_excluded = 0;
    let mut n_neg_inf = 0;
    let mut tails = Vec::new();
    let mut indicator = Vec::new();
    for p in paths {
        if !p.status.is_admissible() {
            n_excluded += 1;
            continue;
        }
        indicator.push(discount * p.max_abs_utility / rho);
        let (Some(running), ExtendedReal::Finite(u_t)) = (p.running, p.final_utility) else {
            n_neg_inf += 1;
            continue;
        };
        let tail = tail_rate.map_or(0.0, |q| discount * u_t / q);
        tails.push(tail);
        per_path.push(running + tail);
    }
    let (mean, se) = mean_and_se(&per_path);
    JEstimate {
        mean: if n_neg_inf > 0 {
            ExtendedReal::NegInfinity
        } else {
            ExtendedReal::Finite(mean)
        },
        std_error: se,
        n_used: per_path.len(),
        n_excluded,
        n_neg_inf,
        tail: mean_and_se(&tails).0,
        truncation_indicator: mean_and_se(&indicator).0,
        per_path,
    }
}

/// `Ĵ(c*)` with the exact conditional tail `e^{−ρT} U(c*(T)) / q`.
///
/// Only mode 0 is simulated: the optimal utility depends on `⟨K, e₀⟩` alone,
/// and per-mode streams make mode 0 identical to a full simulation.
pub fn estimate_j_optimal(problem: &Problem, cfg: &SimConfig) -> Result<JEstimate> {
    let cfg1 = SimConfig {
        n_modes: 1,
        ..cfg.clone()
    };
    let n_steps = cfg1.n_steps()?;
    let rho = problem.params.rho;
    let paths = closed_loop_paths(
        &problem.k0_modes[..1],
        &problem.es,
        &problem.pc,
        &problem.params,
        &cfg1,
        |_| JObserver(Discounted::new(rho, cfg1.dt, n_steps)),
    )?;
    Ok(summarize_j(
        paths,
        rho,
        cfg.horizon,
        Some(problem.pc.utility_decay),
    ))
}

/// `Ĵ(c)` over `[0, T]` for an arbitrary control; no tail is added.
pub fn estimate_j_controlled(
    k0_modes: &[f64],
    es: &EigenSystem,
    noise: &NoiseSpec,
    control: &dyn ControlSupplier,
    cfg: &SimConfig,
    rho: f64,
) -> Result<JEstimate> {
    let n_steps = cfg.n_steps()?;
    let paths = controlled_paths(k0_modes, es, noise, control, cfg, |_| {
        JObserver(Discounted::new(rho, cfg.dt, n_steps))
    })?;
    Ok(summarize_j(paths, rho, cfg.horizon, None))
}

/// Monte Carlo terms of `w(K₀) = J_T(c) + G_T(c) + E[e^{−ρT} w(K(T))]`, where
/// `G_T = E ∫₀^T e^{−ρs} (H_MAX(Dw) − H_CV(Dw; c)) ds`.
#[derive(Debug, Clone, PartialEq)]
pub struct GapEstimate {
    pub w0: f64,
    /// `(mean, SE)` of the running payoff `J_T`.
    pub j: (f64, f64),
    /// `(mean, SE)` of the Hamiltonian gap `G_T`.
    pub gap: (f64, f64),
    /// `(mean, SE)` of `e^{−ρT} w(K(T))`.
    pub terminal: (f64, f64),
    /// `(mean, SE)` of the per-path `w₀ − J_T − G_T − e^{−ρT} w(K(T))`.
    pub identity_residual: (f64, f64),
    pub n_used: usize,
    pub n_excluded: usize,
}

impl GapEstimate {
    /// `w₀ − Ĵ_T − Ê[e^{−ρT} w(K(T))]`: the gap implied by the payoff alone.
    pub fn payoff_gap(&self) -> f64 {
        self.w0 - self.j.0 - self.terminal.0
    }

    pub fn excluded_fraction(&self) -> f64 {
        self.n_excluded as f64 / (self.n_used + self.n_excluded).max(1) as f64
    }
}

struct GapObserver {
    payoff: Discounted,
    gap: Discounted,
    gamma: f64,
    sigma: f64,
    hmax_unit: f64,
    last_x: f64,
}

struct PathGap {
    status: PathStatus,
    j: f64,
    gap: f64,
    x_final: f64,
}

impl PathObserver for GapObserver {
    type Output = PathGap;

    fn observe(&mut self, v: &StepView<'_>) {
        let x = v.modes[0];
        let s = self.sigma;
        let u = v.control.utility.to_f64();
        let integrand = if x > 0.0 {
            let hmax = x.powf(1.0 - s) * self.hmax_unit;
            let hcv = u - self.gamma * x.powf(-s) * v.control.forcing[0];
            hmax - hcv
        } else {
            -u
        };
        self.payoff.add(v.step, v.t, v.control.utility);
        self.gap.add(v.step, v.t, ExtendedReal::Finite(integrand));
        self.last_x = x;
    }

    fn finish(self, status: PathStatus) -> PathGap {
        PathGap {
            status,
            j: self.payoff.sum,
            gap: self.gap.sum,
            x_final: self.last_x,
        }
    }
}

/// Estimates both sides of the fundamental identity for a control.
///
/// The control is simulated with Euler–Maruyama on mode 0 only when it
/// depends on the state through `⟨K, e₀⟩` alone; pass `cfg.n_modes` to
/// choose. Requires `σ < 1`.
pub fn fundamental_identity_gap(
    problem: &Problem,
    noise: &NoiseSpec,
    control: &dyn ControlSupplier,
    cfg: &SimConfig,
) -> Result<GapEstimate> {
    let s = problem.params.sigma;
    if s > 1.0 {
        return Err(Error::Unsupported(
            "the fundamental identity is only established for sigma < 1".into(),
        ));
    }
    let n_steps = cfg.n_steps()?;
    let pc = &problem.pc;
    let rho = problem.params.rho;
    let hmax_unit = hamiltonian_max(
        &problem.es.principal().scale(pc.gamma),
        &problem.fields.population,
        &problem.fields.weight,
        s,
    )?;
    let paths = controlled_paths(
        &problem.k0_modes[..cfg.n_modes],
        &problem.es,
        noise,
        control,
        cfg,
        |_| GapObserver {
            payoff: Discounted::new(rho, cfg.dt, n_steps),
            gap: Discounted::new(rho, cfg.dt, n_steps),
            gamma: pc.gamma,
            sigma: s,
            hmax_unit,
            last_x: problem.x0(),
        },
    )?;
    let w0 = problem.w0()?.to_f64();
    let discount = (-rho * cfg.horizon).exp();
    let mut js = Vec::new();
    let mut gaps = Vec::new();
    let mut terms = Vec::new();
    let mut residuals = Vec::new();
    let mut n_excluded = 0;
    for p in paths {
        if !p.status.is_admissible() {
            n_excluded += 1;
            continue;
        }
        let term = discount * pc.value_at(p.x_final)?.to_f64();
        residuals.push(w0 - p.j - p.gap - term);
        js.push(p.j);
        gaps.push(p.gap);
        terms.push(term);
    }
    Ok(GapEstimate {
        w0,
        j: mean_and_se(&js),
        gap: mean_and_se(&gaps),
        terminal: mean_and_se(&terms),
        identity_residual: mean_and_se(&residuals),
        n_used: js.len(),
        n_excluded,
    })
}

/// Checks for a suboptimal control: positive payoff gap at `k` standard
/// errors and agreement of the two sides of the identity.
pub fn gap_report(name: &str, est: &GapEstimate, k: f64) -> VerificationReport {
    let mut r = VerificationReport::new();
    let payoff_gap = est.w0 - est.j.0;
    let mut positive = Check::at_least(
        format!("{name}_value_gap_positive"),
        payoff_gap,
        k * est.j.1,
        0.0,
    );
    positive.std_error = Some(est.j.1);
    r.push(positive.with_note("w(K0) - J_T exceeds k standard errors"));
    r.push(
        Check::stochastic(
            format!("{name}_fundamental_identity"),
            est.gap.0 + est.terminal.0,
            est.w0 - est.j.0,
            est.identity_residual.1,
            k,
            Relation::Within,
        )
        .with_note("paired per-path standard error"),
    );
    r.push(
        Check::at_least(
            format!("{name}_hamiltonian_gap_nonnegative"),
            est.gap.0,
            0.0,
            k * est.gap.1,
        )
        .with_note(format!("excluded fraction {:.4}", est.excluded_fraction())),
    );
    r
}

/// Time-consistency: `E[∫₀^t e^{−ρs} U(c*) ds + e^{−ρt} w(K*(t))] = w(K₀)`.
pub fn dpp_spot_check(problem: &Problem, cfg: &SimConfig, k: f64) -> Result<Check> {
    let est = estimate_j_optimal(
        problem,
        &SimConfig {
            n_modes: 1,
            ..cfg.clone()
        },
    );
    let est = est?;
    // estimate_j_optimal adds the exact tail e^{−ρt} U(c*(t))/q, which equals
    // e^{−ρt} w(K*(t)) because U(θ)/q = γ/(1−σ).
    let w0 = problem.w0()?.to_f64();
    Ok(Check::stochastic(
        "dpp_time_consistency",
        est.mean.to_f64(),
        w0,
        est.std_error,
        k,
        Relation::Within,
    )
    .with_note(format!(
        "one intermediate time t = {}; a sup over controls is not tested",
        cfg.horizon
    )))
}

/// `∫₀^T e^{2λ t} dt`
pub fn semigroup_weight(lambda: f64, horizon: f64) -> f64 {
    if lambda == 0.0 {
        horizon
    } else {
        (2.0 * lambda * horizon).exp_m1() / (2.0 * lambda)
    }
}

/// Partial sums over the first `m` modes:
/// `Σ_j ∫₀^T e^{2λ_j t} dt · ⟨K, e_j⟩² ‖α_j‖²_∞` and `Σ_j α_j(K)² ⟨K, e_j⟩²`.
pub fn hs_partial_sums(
    noise: &NoiseSpec,
    lambdas: &[f64],
    k_modes: &[f64],
    horizon: f64,
    m: usize,
) -> (f64, f64) {
    let sups = noise.sup_norms();
    let mut integrated = 0.0;
    let mut trace = 0.0;
    for j in 0..m {
        let k2 = k_modes[j] * k_modes[j];
        integrated += semigroup_weight(lambdas[j], horizon) * k2 * sups[j] * sups[j];
        trace += noise.alpha(j, k_modes[j]).powi(2) * k2;
    }
    (integrated, trace)
}

fn relative_change(full: f64, half: f64) -> f64 {
    if full == 0.0 {
        0.0
    } else {
        ((full - half) / full).abs()
    }
}

/// Summability of the truncated noise: both partial sums move by less than
/// 1% when the mode count is halved.
pub fn hs_wellposedness(
    noise: &NoiseSpec,
    es: &EigenSystem,
    k_modes: &[f64],
    horizon: f64,
) -> Result<VerificationReport> {
    let m = es.n_modes();
    if noise.n_modes() < m || k_modes.len() < m {
        return Err(Error::LengthMismatch {
            expected: m,
            got: noise.n_modes().min(k_modes.len()),
        });
    }
    let half = (m / 2).max(1);
    let (int_full, tr_full) = hs_partial_sums(noise, es.lambdas(), k_modes, horizon, m);
    let (int_half, tr_half) = hs_partial_sums(noise, es.lambdas(), k_modes, horizon, half);
    let mut r = VerificationReport::new();
    r.push(
        Check::at_most(
            "hs_time_integrated_change",
            relative_change(int_full, int_half),
            0.01,
            0.0,
        )
        .with_note(format!("M={m}: {int_full:.6e}, M={half}: {int_half:.6e}")),
    );
    r.push(
        Check::at_most(
            "hs_trace_change",
            relative_change(tr_full, tr_half),
            0.01,
            0.0,
        )
        .with_note(format!("M={m}: {tr_full:.6e}, M={half}: {tr_half:.6e}")),
    );
    let norm2: f64 = k_modes[..m].iter().map(|v| v * v).sum();
    let alpha2: f64 = noise.sup_norms()[..m].iter().map(|a| a * a).sum();
    r.push(Check::at_most(
        "hs_trace_bound",
        tr_full,
        norm2 * alpha2,
        1e-12 * norm2 * alpha2,
    ));
    Ok(r)
}

/// Result of probing `‖e^{tL}(B(k) − B(h))‖_HS / ‖k − h‖` on random pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzProbe {
    pub max_ratio: f64,
    /// Largest ratio divided by its pair's theoretical bound.
    pub max_ratio_over_bound: f64,
    pub trials_used: usize,
}

/// Random states have coefficients `z_j / (1 + j)`.
pub fn lipschitz_probe(
    noise: &NoiseSpec,
    es: &EigenSystem,
    t: f64,
    trials: usize,
    seed: u64,
) -> LipschitzProbe {
    let m = es.n_modes().min(noise.n_modes());
    let weights: Vec<f64> = es.lambdas()[..m]
        .iter()
        .map(|l| (2.0 * l * t).exp())
        .collect();
    let w_max = weights.iter().cloned().fold(0.0, f64::max);
    let a_inf = noise.sup_norms()[..m].iter().cloned().fold(0.0, f64::max);
    let lip = (0..m)
        .map(|j| noise.mode(j).lipschitz())
        .fold(0.0, f64::max);
    let mut max_ratio: f64 = 0.0;
    let mut max_over: f64 = 0.0;
    let mut used = 0;
    for trial in 0..trials {
        let mut zk = NormalStream::new(seed, Domain::Probe, trial as u64, 0);
        let mut zh = NormalStream::new(seed, Domain::Probe, trial as u64, 1);
        let k: Vec<f64> = (0..m)
            .map(|j| zk.next_normal() / (1.0 + j as f64))
            .collect();
        let h: Vec<f64> = (0..m)
            .map(|j| zh.next_normal() / (1.0 + j as f64))
            .collect();
        let diff2: f64 = k.iter().zip(&h).map(|(a, b)| (a - b).powi(2)).sum();
        if diff2 < 1e-28 {
            continue;
        }
        let num2: f64 = (0..m)
            .map(|j| {
                let d = noise.alpha(j, k[j]) * k[j] - noise.alpha(j, h[j]) * h[j];
                weights[j] * d * d
            })
            .sum();
        let ratio = (num2 / diff2).sqrt();
        let h_norm2: f64 = h.iter().map(|v| v * v).sum();
        let bound = if lip == 0.0 {
            (w_max * a_inf * a_inf).sqrt()
        } else {
            (2.0 * w_max * (a_inf * a_inf + lip * lip * h_norm2)).sqrt()
        };
        max_ratio = max_ratio.max(ratio);
        if bound > 0.0 {
            max_over = max_over.max(ratio / bound);
        }
        used += 1;
    }
    LipschitzProbe {
        max_ratio,
        max_ratio_over_bound: max_over,
        trials_used: used,
    }
}

/// Lipschitz constant bounded by theory and stable (within 10%) under
/// doubling of the trial count.
pub fn lipschitz_report(
    noise: &NoiseSpec,
    es: &EigenSystem,
    t: f64,
    trials: usize,
    seed: u64,
) -> VerificationReport {
    let base = lipschitz_probe(noise, es, t, trials, seed);
    let doubled = lipschitz_probe(noise, es, t, 2 * trials, seed);
    let change = relative_change(doubled.max_ratio, base.max_ratio);
    let mut r = VerificationReport::new();
    r.push(
        Check::at_most(
            "lipschitz_within_bound",
            doubled.max_ratio_over_bound,
            1.0,
            1e-12,
        )
        .with_note(format!("max ratio {:.6e}", doubled.max_ratio)),
    );
    r.push(
        Check::at_most("lipschitz_stable_under_doubling", change, 0.10, 0.0).with_note(format!(
            "{} trials: {:.6e}, {} trials: {:.6e}",
            base.trials_used, base.max_ratio, doubled.trials_used, doubled.max_ratio
        )),
    );
    r
}

struct NormObserver {
    record_every: usize,
    n_steps: usize,
    norms2: Vec<f64>,
}

impl PathObserver for NormObserver {
    type Output = (PathStatus, Vec<f64>);

    fn observe(&mut self, v: &StepView<'_>) {
        if v.step.is_multiple_of(self.record_every) || v.step == self.n_steps {
            self.norms2.push(v.modes.iter().map(|x| x * x).sum());
        }
    }

    fn finish(self, status: PathStatus) -> Self::Output {
        (status, self.norms2)
    }
}

/// `sup_t Ê|K(t)|^p / (1 + ‖K₀‖^p)` for the optimal closed loop, one value per power.
pub fn moment_ratios(
    problem: &Problem,
    k0_modes: &[f64],
    cfg: &SimConfig,
    powers: &[f64],
) -> Result<Vec<f64>> {
    let n_steps = cfg.n_steps()?;
    let paths = closed_loop_paths(
        k0_modes,
        &problem.es,
        &problem.pc,
        &problem.params,
        cfg,
        |_| NormObserver {
            record_every: cfg.record_every,
            n_steps,
            norms2: Vec::new(),
        },
    )?;
    let used: Vec<&Vec<f64>> = paths
        .iter()
        .filter(|(s, _)| s.is_admissible())
        .map(|(_, n)| n)
        .collect();
    if used.is_empty() {
        return Err(Error::EmptySample);
    }
    let n_stamps = used[0].len();
    let k0_norm = k0_modes.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(powers
        .iter()
        .map(|&p| {
            let sup = (0..n_stamps)
                .map(|i| used.iter().map(|n| n[i].powf(p / 2.0)).sum::<f64>() / used.len() as f64)
                .fold(0.0, f64::max);
            sup / (1.0 + k0_norm.powf(p))
        })
        .collect())
}

/// Fits `C_p` on the configured initial state and checks that
/// `n_perturbed` perturbed initial states stay below `factor · C_p`.
pub fn moment_envelope(
    problem: &Problem,
    cfg: &SimConfig,
    powers: &[f64],
    n_perturbed: usize,
    factor: f64,
) -> Result<VerificationReport> {
    let m = cfg.n_modes;
    let base = &problem.k0_modes[..m];
    let reference = moment_ratios(problem, base, cfg, powers)?;
    let scale = 0.1 * base.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut r = VerificationReport::new();
    for i in 0..n_perturbed {
        let mut z = NormalStream::new(cfg.seed, Domain::Perturbation, i as u64, 0);
        let mut k0: Vec<f64> = base
            .iter()
            .enumerate()
            .map(|(j, v)| v + scale * z.next_normal() / (1.0 + j as f64))
            .collect();
        k0[0] = k0[0].abs();
        let run_cfg = SimConfig {
            seed: cfg.seed.wrapping_add(1 + i as u64),
            ..cfg.clone()
        };
        let ratios = moment_ratios(problem, &k0, &run_cfg, powers)?;
        for ((p, c), got) in powers.iter().zip(&reference).zip(&ratios) {
            r.push(
                Check::at_most(
                    format!("moment_p{p}_perturbation_{i}"),
                    *got,
                    factor * c,
                    0.0,
                )
                .with_note(format!("reference C_p = {c:.6e}")),
            );
        }
    }
    Ok(r)
}

/// Scaling `K₀` by `a` scales every path by `a` and `Ĵ` by `a^{1−σ}`.
pub fn homogeneity_check(problem: &Problem, cfg: &SimConfig, a: f64) -> Result<VerificationReport> {
    let scaled = Problem {
        k0: problem.k0.scale(a),
        k0_modes: problem.k0_modes.iter().map(|v| a * v).collect(),
        ..problem.clone()
    };
    let m = cfg.n_modes;
    let run = |p: &Problem| {
        crate::simulate::simulate_closed_loop(&p.k0_modes[..m], &p.es, &p.pc, &p.params, cfg)
    };
    let base = run(problem)?;
    let big = run(&scaled)?;
    let mut path_err: f64 = 0.0;
    for (pa, pb) in base.paths.iter().zip(&big.paths) {
        for (x, y) in pa.modes.iter().zip(&pb.modes) {
            let denom = (a * x).abs().max(f64::MIN_POSITIVE);
            if x.is_finite() {
                path_err = path_err.max((y - a * x).abs() / denom.max(1e-300));
            }
        }
    }
    let s = problem.params.sigma;
    let j_base = estimate_j_optimal(problem, cfg)?;
    let j_big = estimate_j_optimal(&scaled, cfg)?;
    let factor = a.powf(1.0 - s);
    let mut j_err: f64 = 0.0;
    for (x, y) in j_base.per_path.iter().zip(&j_big.per_path) {
        j_err = j_err.max(((y - factor * x) / (factor * x)).abs());
    }
    let mean_ratio = j_big.mean.to_f64() / j_base.mean.to_f64();
    let mut r = VerificationReport::new();
    r.push(Check::at_most("homogeneity_paths", path_err, 1e-12, 0.0));
    r.push(Check::at_most("homogeneity_j_per_path", j_err, 1e-12, 0.0));
    r.push(Check::within(
        "homogeneity_j_mean",
        mean_ratio,
        factor,
        1e-12 * factor,
    ));
    Ok(r)
}

/// Knobs of [`run_suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct VerifySettings {
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Standard errors allowed in stochastic checks.
    pub k_se: f64,
    /// Scale of the suboptimal feedback `c = s G`.
    pub suboptimal_scale: f64,
    pub hjb_states: usize,
    pub lipschitz_trials: usize,
    pub lipschitz_time: f64,
    pub moment_horizon: f64,
    pub moment_paths: usize,
    pub moment_perturbations: usize,
    pub dpp_time: f64,
    pub homogeneity_paths: usize,
}

impl Default for VerifySettings {
    fn default() -> Self {
        Self {
            horizon: 80.0,
            dt: 0.01,
            n_paths: 10_000,
            seed: 20_240_601,
            k_se: 3.0,
            suboptimal_scale: 0.5,
            hjb_states: 10,
            lipschitz_trials: 200,
            lipschitz_time: 1.0,
            moment_horizon: 10.0,
            moment_paths: 2_000,
            moment_perturbations: 5,
            dpp_time: 10.0,
            homogeneity_paths: 200,
        }
    }
}

/// Random fields with `⟨K, e₀⟩` uniform in `[0.1, 10]`.
pub fn random_states(es: &EigenSystem, count: usize, seed: u64) -> Result<Vec<SpatialField>> {
    use rand::Rng;
    let m = es.n_modes();
    (0..count)
        .map(|i| {
            let mut s = NormalStream::new(seed, Domain::Probe, 1_000_000 + i as u64, 0);
            let x0 = s.rng().random_range(0.1..=10.0);
            let mut coeffs: Vec<f64> = (0..m).map(|j| s.next_normal() / (1.0 + j as f64)).collect();
            coeffs[0] = x0;
            es.reconstruct(&coeffs)
        })
        .collect()
}

/// Every deterministic and Monte Carlo check for one configured model.
pub fn run_suite(problem: &Problem, settings: &VerifySettings) -> Result<VerificationReport> {
    let mut r = check_assumptions(&problem.params, &problem.fields, &problem.es);
    let s = problem.params.sigma;
    let pc = &problem.pc;
    let k = settings.k_se;

    let gamma = compute_gamma(&problem.params, &problem.fields, &problem.es)?;
    r.push(Check::within(
        "gamma_recomputed",
        gamma,
        pc.gamma,
        1e-12 * pc.gamma,
    ));
    r.push(Check::at_most(
        "rate_identity",
        pc.rate_identity_residual(&problem.fields, &problem.es)?
            .abs(),
        1e-10,
        0.0,
    ));

    let mut states = vec![problem.k0.clone()];
    states.extend(random_states(
        &problem.es,
        settings.hjb_states,
        settings.seed,
    )?);
    let mut worst: f64 = 0.0;
    for st in &states {
        let w = value_function(st, pc, &problem.es)?.to_f64();
        worst = worst.max(hjb_residual(st, problem)?.abs() / (problem.params.rho * w).abs());
    }
    r.push(
        Check::at_most("hjb_residual_relative", worst, 1e-8, 0.0)
            .with_note(format!("{} states, max |residual| / |rho w|", states.len())),
    );

    let w0 = problem.w0()?;
    let analytic = analytic_j_optimal(&problem.k0, pc, &problem.es)?;
    r.push(Check::flag("analytic_j_equals_value", analytic == w0));

    // Pointwise optimality of the feedback: H_MAX(Dw) = H_CV(Dw; G(K₀)).
    let dw = problem
        .es
        .principal()
        .scale(pc.gamma * problem.x0().powf(-s));
    let c_star = hamiltonian_maximizer(&dw, &problem.fields.population, &problem.fields.weight, s)?;
    let hmax = hamiltonian_max(&dw, &problem.fields.population, &problem.fields.weight, s)?;
    let hcv = hamiltonian_cv(
        &dw,
        &c_star,
        &problem.fields.population,
        &problem.fields.weight,
        s,
    )?
    .to_f64();
    r.push(Check::within(
        "feedback_attains_hamiltonian_max",
        hcv,
        hmax,
        1e-10 * hmax.abs(),
    ));

    let sim = SimConfig {
        horizon: settings.horizon,
        dt: settings.dt,
        n_modes: 1,
        n_paths: settings.n_paths,
        seed: settings.seed,
        scheme: Scheme::ExactMode,
        record_every: 1,
    };
    let w0 = w0.to_f64();
    let j = estimate_j_optimal(problem, &sim)?;
    r.push(Check::stochastic(
        "j_optimal_monte_carlo",
        j.mean.to_f64(),
        w0,
        j.std_error,
        k,
        Relation::Within,
    ));
    r.push(Check::at_most(
        "j_optimal_relative_se",
        j.std_error / w0.abs(),
        0.01,
        0.0,
    ));

    let dpp_cfg = SimConfig {
        horizon: settings.dpp_time,
        ..sim.clone()
    };
    r.push(dpp_spot_check(problem, &dpp_cfg, k)?);

    if s < 1.0 {
        let noise = NoiseSpec::from_params(&problem.params, 1);
        let control = FeedbackControl::new(pc, 1, settings.suboptimal_scale)?;
        let em = SimConfig {
            scheme: Scheme::EulerMaruyama,
            ..sim.clone()
        };
        let est = fundamental_identity_gap(problem, &noise, &control, &em)?;
        r.extend(gap_report("suboptimal", &est, k));
    } else {
        r.note("fundamental identity not asserted for sigma > 1");
    }

    let homog_cfg = SimConfig {
        n_paths: settings.homogeneity_paths,
        n_modes: problem.es.n_modes().min(4),
        horizon: settings.dpp_time,
        ..sim.clone()
    };
    r.extend(homogeneity_check(problem, &homog_cfg, 2.0)?);

    let noise = NoiseSpec::from_params(&problem.params, problem.es.n_modes());
    r.extend(hs_wellposedness(
        &noise,
        &problem.es,
        &problem.k0_modes,
        settings.horizon,
    )?);
    r.extend(lipschitz_report(
        &noise,
        &problem.es,
        settings.lipschitz_time,
        settings.lipschitz_trials,
        settings.seed,
    ));

    let moment_cfg = SimConfig {
        horizon: settings.moment_horizon,
        n_paths: settings.moment_paths,
        n_modes: problem.es.n_modes().min(4),
        record_every: 10,
        ..sim
    };
    r.extend(moment_envelope(
        problem,
        &moment_cfg,
        &[2.0, 4.0],
        settings.moment_perturbations,
        1.5,
    )?);
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::economy::AlphaRest;
    use crate::fields::SpatialGrid;
    use crate::simulate::ModeVolatility;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn problem(sigma: f64, alpha0: f64, weight: impl Fn(f64) -> f64, n_modes: usize) -> Problem {
        let grid = SpatialGrid::new(64).unwrap();
        let fields = ModelFields {
            tech: SpatialField::constant(grid, 0.05).unwrap(),
            population: SpatialField::constant(grid, 1.0).unwrap(),
            weight: SpatialField::from_fn(grid, weight).unwrap(),
        };
        let params = ModelParams::new(0.1, sigma, alpha0, AlphaRest::Uniform).unwrap();
        let k0 = SpatialField::constant(grid, 1.0).unwrap();
        Problem::new(params, fields, k0, n_modes).unwrap()
    }

    fn b1() -> Problem {
        problem(0.5, 0.2, |_| 1.0, 8)
    }

    #[test]
    fn mean_se() {
        let (m, se) = mean_and_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_relative_eq!(m, 2.5);
        assert_relative_eq!(se, (5.0f64 / 3.0 / 4.0).sqrt());
        assert_eq!(mean_and_se(&[2.0]), (2.0, 0.0));
        assert!(mean_and_se(&[]).0.is_nan());
    }

    #[test]
    fn hjb_residual_vanishes() {
        let p = b1();
        let w = p.w0().unwrap().to_f64();
        let r = hjb_residual(&p.k0, &p).unwrap();
        assert!(r.abs() <= 1e-8 * (0.1 * w).abs(), "{r}");
        for st in random_states(&p.es, 10, 5).unwrap() {
            let w = value_function(&st, &p.pc, &p.es).unwrap().to_f64();
            assert!(hjb_residual(&st, &p).unwrap().abs() <= 1e-8 * (0.1 * w).abs());
        }
        let q = problem(2.5, 0.3, |x| 1.0 + 0.5 * x.cos(), 6);
        let w = q.w0().unwrap().to_f64();
        assert!(hjb_residual(&q.k0, &q).unwrap().abs() <= 1e-8 * (0.1 * w).abs());
    }

    #[test]
    fn hjb_residual_detects_wrong_gamma() {
        let p = b1();
        let r =
            hjb_residual_for_gamma(&p.k0, 1.1 * p.pc.gamma, &p.params, &p.fields, &p.es).unwrap();
        // The H_MAX term scales like γ^{−(1−σ)/σ} while the others scale like γ.
        let x = p.x0();
        let lin = 1.1 * p.pc.gamma * x.sqrt() * (0.1 / 0.5 - 0.05 + 0.5 * 0.5 * 0.04);
        let hmax = 1.1f64.powf(-1.0) * p.pc.gamma * x.sqrt() * 0.16;
        assert_relative_eq!(r, lin - hmax, max_relative = 1e-9);
        assert!(r > 0.0);
    }

    #[test]
    fn residual_depends_on_projection_only() {
        let p = b1();
        let other = p.k0.add(&p.es.mode(3).scale(0.7)).unwrap();
        let a = hjb_residual(&p.k0, &p).unwrap();
        let b = hjb_residual(&other, &p).unwrap();
        assert!((a - b).abs() < 1e-12 * p.w0().unwrap().to_f64());
        assert!(hjb_residual(&p.k0.scale(0.0), &p).is_err());
    }

    #[test]
    fn analytic_j() {
        let p = b1();
        let j = analytic_j_optimal(&p.k0, &p.pc, &p.es).unwrap().to_f64();
        assert_relative_eq!(j, 31.42, epsilon = 0.01);
        let q = problem(2.0, 0.2, |_| 1.0, 4);
        let jq = analytic_j_optimal(&q.k0, &q.pc, &q.es).unwrap().to_f64();
        assert!(jq < 0.0);
        assert_eq!(ExtendedReal::Finite(jq), q.w0().unwrap());
        let j2 = analytic_j_optimal(&p.k0.scale(2.0), &p.pc, &p.es)
            .unwrap()
            .to_f64();
        assert_relative_eq!(j2, 2f64.sqrt() * j, max_relative = 1e-14);
    }

    #[test]
    fn deterministic_optimal_j_matches_value() {
        let p = problem(0.5, 0.0, |_| 1.0, 4);
        let cfg = SimConfig {
            horizon: 20.0,
            dt: 0.01,
            n_modes: 1,
            n_paths: 1,
            seed: 1,
            scheme: Scheme::ExactMode,
            record_every: 1,
        };
        let j = estimate_j_optimal(&p, &cfg).unwrap();
        let w = p.w0().unwrap().to_f64();
        // Trapezoid error only: O(dt²).
        assert_relative_eq!(j.mean.to_f64(), w, max_relative = 1e-5);
    }

    #[test]
    fn zero_control_has_zero_value() {
        let p = b1();
        let cfg = SimConfig {
            horizon: 5.0,
            dt: 0.05,
            n_modes: 2,
            n_paths: 4,
            seed: 3,
            scheme: Scheme::EulerMaruyama,
            record_every: 1,
        };
        let noise = NoiseSpec::from_params(&p.params, 2);
        let zero = FeedbackControl::new(&p.pc, 2, 0.0).unwrap();
        let j = estimate_j_controlled(&p.k0_modes[..2], &p.es, &noise, &zero, &cfg, 0.1).unwrap();
        assert_eq!(j.mean, ExtendedReal::Finite(0.0));
        assert_eq!(j.std_error, 0.0);
    }

    #[test]
    fn optimal_control_has_zero_hamiltonian_gap() {
        let p = b1();
        let cfg = SimConfig {
            horizon: 5.0,
            dt: 0.01,
            n_modes: 1,
            n_paths: 50,
            seed: 3,
            scheme: Scheme::EulerMaruyama,
            record_every: 1,
        };
        let noise = NoiseSpec::from_params(&p.params, 1);
        let fb = FeedbackControl::optimal(&p.pc, 1).unwrap();
        let est = fundamental_identity_gap(&p, &noise, &fb, &cfg).unwrap();
        assert!(est.gap.0.abs() < 1e-9 * est.w0);
        assert!(est.identity_residual.0.abs() < 3.0 * est.identity_residual.1 + 1e-3);
    }

    #[test]
    fn gap_unsupported_for_large_sigma() {
        let q = problem(2.0, 0.2, |_| 1.0, 4);
        let cfg = SimConfig {
            horizon: 1.0,
            dt: 0.1,
            n_modes: 1,
            n_paths: 1,
            seed: 3,
            scheme: Scheme::EulerMaruyama,
            record_every: 1,
        };
        let noise = NoiseSpec::from_params(&q.params, 1);
        let fb = FeedbackControl::optimal(&q.pc, 1).unwrap();
        assert!(matches!(
            fundamental_identity_gap(&q, &noise, &fb, &cfg),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn semigroup_weights() {
        assert_eq!(semigroup_weight(0.0, 3.0), 3.0);
        assert_relative_eq!(semigroup_weight(-1.0, 1e9), 0.5);
        assert_relative_eq!(
            semigroup_weight(0.05, 10.0),
            (1f64.exp() - 1.0) / 0.1,
            max_relative = 1e-14
        );
    }

    #[test]
    fn hs_trace_for_principal_state() {
        let p = b1();
        let noise = NoiseSpec::from_params(&p.params, 8);
        let mut k = vec![0.0; 8];
        k[0] = 1.0;
        let (_, trace) = hs_partial_sums(&noise, p.es.lambdas(), &k, 10.0, 8);
        assert_relative_eq!(trace, 0.04, max_relative = 1e-14);
        let r = hs_wellposedness(&noise, &p.es, &p.k0_modes, 80.0).unwrap();
        assert!(r.all_passed(), "{}", r.to_table());
        let flat = vec![1.0; 8];
        let r = hs_wellposedness(&noise, &p.es, &flat, 80.0).unwrap();
        assert!(r.get("hs_trace_bound").unwrap().pass);
        assert!(!r.get("hs_trace_change").unwrap().pass);
    }

    #[test]
    fn lipschitz_constant_noise_bound() {
        let p = b1();
        let noise = NoiseSpec::from_params(&p.params, 8);
        let probe = lipschitz_probe(&noise, &p.es, 1.0, 200, 9);
        let bound =
            p.es.lambdas()
                .iter()
                .map(|l| (2.0 * l).exp() * 0.04)
                .sum::<f64>()
                .sqrt();
        assert!(probe.max_ratio <= bound);
        assert!(probe.max_ratio <= 0.2 * 0.05f64.exp() + 1e-15);
        assert!(lipschitz_report(&noise, &p.es, 1.0, 200, 9).all_passed());
    }

    #[test]
    fn lipschitz_state_dependent_bound() {
        let p = b1();
        let rest = vec![
            ModeVolatility::Saturating {
                base: 0.2,
                amplitude: 0.15
            };
            7
        ];
        let noise = NoiseSpec::new(0.2, rest).unwrap();
        let probe = lipschitz_probe(&noise, &p.es, 0.5, 300, 4);
        assert!(probe.max_ratio_over_bound <= 1.0);
        assert!(probe.max_ratio > 0.0);
    }

    #[test]
    fn homogeneity_exact() {
        let p = problem(0.5, 0.2, |x| 1.0 + 0.5 * x.cos(), 4);
        let cfg = SimConfig {
            horizon: 2.0,
            dt: 0.01,
            n_modes: 4,
            n_paths: 20,
            seed: 8,
            scheme: Scheme::ExactMode,
            record_every: 5,
        };
        let r = homogeneity_check(&p, &cfg, 2.0).unwrap();
        assert!(r.all_passed(), "{}", r.to_table());
    }

    #[test]
    fn suboptimal_feedback_loses_value() {
        let p = b1();
        let cfg = SimConfig {
            horizon: 40.0,
            dt: 0.02,
            n_modes: 1,
            n_paths: 2000,
            seed: 17,
            scheme: Scheme::EulerMaruyama,
            record_every: 1,
        };
        let noise = NoiseSpec::from_params(&p.params, 1);
        let half = FeedbackControl::new(&p.pc, 1, 0.5).unwrap();
        let est = fundamental_identity_gap(&p, &noise, &half, &cfg).unwrap();
        let r = gap_report("half", &est, 3.0);
        assert!(r.all_passed(), "{}", r.to_table());
        assert_eq!(est.n_excluded, 0);
    }

    #[test]
    fn dpp_holds_for_optimal_policy() {
        let p = b1();
        let cfg = SimConfig {
            horizon: 10.0,
            dt: 0.01,
            n_modes: 1,
            n_paths: 2000,
            seed: 23,
            scheme: Scheme::ExactMode,
            record_every: 1,
        };
        let c = dpp_spot_check(&p, &cfg, 3.0).unwrap();
        assert!(c.pass, "{c:?}");
        // U(θ)/q = γ/(1−σ) makes the tail equal e^{−ρt} w(K(t)).
        let u_theta = p.pc.theta_utility.to_f64();
        assert_relative_eq!(
            u_theta / p.pc.utility_decay,
            p.pc.gamma / 0.5,
            max_relative = 1e-9
        );
        let _ = PI;
    }
}
