//! Galerkin-truncated capital dynamics as a system of mode SDEs.
//!
//! With `K_n = ⟨K, e_n⟩` and `F_n = ⟨c N, e_n⟩`,
//!
//! ```text
//! dK_n = (λ_n K_n − F_n) dt + α_n(K) K_n dβ_n,   n < M.
//! ```
//!
//! Paths are generated independently (one normal stream per path and mode)
//! and may be consumed either as a stored [`Ensemble`] or streamed through a
//! [`PathObserver`].

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::economy::{utility, ModelParams, PolicyConstants};
use crate::error::{Error, Result};
use crate::fields::SpatialField;
use crate::rng::{Domain, NormalStream};
use crate::spectral::EigenSystem;
use crate::value::ExtendedReal;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Exact geometric Brownian motion for mode 0, integrating factor plus
    /// one-step trapezoid forcing for the others. Optimal closed loop only.
    ExactMode,
    EulerMaruyama,
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "exact_mode" | "exact" => Ok(Scheme::ExactMode),
            "euler_maruyama" | "em" => Ok(Scheme::EulerMaruyama),
            other => Err(Error::Parameter(format!(
                "unknown scheme `{other}` (expected exact_mode or euler_maruyama)"
            ))),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::ExactMode => "exact_mode",
            Scheme::EulerMaruyama => "euler_maruyama",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub horizon: f64,
    pub dt: f64,
    pub n_modes: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub scheme: Scheme,
    /// Store every `record_every`-th step (the final step is always stored).
    pub record_every: usize,
}

impl SimConfig {
    /// Number of steps; `horizon` must be an integer multiple of `dt`.
    pub fn n_steps(&self) -> Result<usize> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Parameter(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.horizon.is_finite() && self.horizon >= self.dt) {
            return Err(Error::Parameter(format!(
                "horizon {} must be at least dt = {}",
                self.horizon, self.dt
            )));
        }
        let steps = (self.horizon / self.dt).round();
        if (steps * self.dt - self.horizon).abs() > 1e-9 * self.horizon {
            return Err(Error::Parameter(format!(
                "horizon {} is not a multiple of dt = {}",
                self.horizon, self.dt
            )));
        }
        if self.n_modes == 0 || self.n_paths == 0 || self.record_every == 0 {
            return Err(Error::Parameter(
                "n_modes, n_paths and record_every must be positive".into(),
            ));
        }
        Ok(steps as usize)
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }

    fn is_recorded(&self, step: usize, n_steps: usize) -> bool {
        step.is_multiple_of(self.record_every) || step == n_steps
    }

    /// Time stamps stored in an [`Ensemble`].
    pub fn stamps(&self) -> Result<Vec<f64>> {
        let n = self.n_steps()?;
        Ok((0..=n)
            .filter(|&i| self.is_recorded(i, n))
            .map(|i| self.time(i))
            .collect())
    }
}

/// Volatility of one mode as a function of that mode's coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModeVolatility {
    Constant(f64),
    /// `base + amplitude · tanh(K_n)`: bounded and Lipschitz.
    Saturating {
        base: f64,
        amplitude: f64,
    },
}

impl ModeVolatility {
    pub fn at(&self, k: f64) -> f64 {
        match *self {
            ModeVolatility::Constant(a) => a,
            ModeVolatility::Saturating { base, amplitude } => base + amplitude * k.tanh(),
        }
    }

    /// `sup |α|`
    pub fn sup(&self) -> f64 {
        match *self {
            ModeVolatility::Constant(a) => a.abs(),
            ModeVolatility::Saturating { base, amplitude } => base.abs() + amplitude.abs(),
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match *self {
            ModeVolatility::Constant(_) => 0.0,
            ModeVolatility::Saturating { amplitude, .. } => amplitude.abs(),
        }
    }
}

/// Diagonal noise `B(K) e_n = α_n(K) ⟨K, e_n⟩ e_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    modes: Vec<ModeVolatility>,
}

impl NoiseSpec {
    /// `alpha0` drives mode 0; `rest` drives modes `1..`.
    pub fn new(alpha0: f64, rest: Vec<ModeVolatility>) -> Result<Self> {
        if !(alpha0.is_finite() && alpha0 >= 0.0) {
            return Err(Error::Parameter(format!(
                "alpha0 must be nonnegative, got {alpha0}"
            )));
        }
        for v in &rest {
            let ok = match *v {
                ModeVolatility::Constant(a) => a.is_finite(),
                ModeVolatility::Saturating { base, amplitude } => {
                    base.is_finite() && amplitude.is_finite()
                }
            };
            if !ok {
                return Err(Error::Parameter("non-finite volatility".into()));
            }
        }
        let mut modes = vec![ModeVolatility::Constant(alpha0)];
        modes.extend(rest);
        Ok(Self { modes })
    }

    pub fn from_params(params: &ModelParams, n_modes: usize) -> Self {
        Self {
            modes: (0..n_modes)
                .map(|n| ModeVolatility::Constant(params.alpha(n)))
                .collect(),
        }
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn alpha0(&self) -> f64 {
        self.modes[0].at(0.0)
    }

    pub fn mode(&self, n: usize) -> &ModeVolatility {
        &self.modes[n]
    }

    pub fn alpha(&self, n: usize, k_n: f64) -> f64 {
        self.modes[n].at(k_n)
    }

    pub fn sup_norms(&self) -> Vec<f64> {
        self.modes.iter().map(ModeVolatility::sup).collect()
    }

    pub fn constant_alphas(&self) -> Option<Vec<f64>> {
        self.modes
            .iter()
            .map(|v| match v {
                ModeVolatility::Constant(a) => Some(*a),
                ModeVolatility::Saturating { .. } => None,
            })
            .collect()
    }

    pub fn truncated(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.modes.len() {
            return Err(Error::LengthMismatch {
                expected: self.modes.len(),
                got: m,
            });
        }
        Ok(Self {
            modes: self.modes[..m].to_vec(),
        })
    }
}

/// Consumption evaluated at one instant: its mode forcings and its utility.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlEval {
    /// `⟨c N, e_n⟩`
    pub forcing: Vec<f64>,
    pub utility: ExtendedReal,
}

impl ControlEval {
    pub fn zeros(n_modes: usize) -> Self {
        Self {
            forcing: vec![0.0; n_modes],
            utility: ExtendedReal::Finite(0.0),
        }
    }
}

/// Consumption as a function of time and the current mode coefficients.
pub trait ControlSupplier: Sync {
    fn evaluate(&self, t: f64, modes: &[f64], out: &mut ControlEval) -> Result<()>;
}

fn utility_of_zero(sigma: f64) -> ExtendedReal {
    if sigma < 1.0 {
        ExtendedReal::Finite(0.0)
    } else {
        ExtendedReal::NegInfinity
    }
}

/// `c = scale · ⟨K, e₀⟩ θ`; `scale = 1` is the optimal feedback.
#[derive(Debug, Clone)]
pub struct FeedbackControl {
    pub scale: f64,
    forcing: Vec<f64>,
    theta_utility: ExtendedReal,
    sigma: f64,
}

impl FeedbackControl {
    pub fn new(pc: &PolicyConstants, n_modes: usize, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(Error::Parameter(format!(
                "feedback scale must be nonnegative, got {scale}"
            )));
        }
        if n_modes > pc.forcing.len() {
            return Err(Error::LengthMismatch {
                expected: pc.forcing.len(),
                got: n_modes,
            });
        }
        Ok(Self {
            scale,
            forcing: pc.forcing[..n_modes].to_vec(),
            theta_utility: pc.theta_utility,
            sigma: pc.sigma,
        })
    }

    pub fn optimal(pc: &PolicyConstants, n_modes: usize) -> Result<Self> {
        Self::new(pc, n_modes, 1.0)
    }
}

impl ControlSupplier for FeedbackControl {
    fn evaluate(&self, _t: f64, modes: &[f64], out: &mut ControlEval) -> Result<()> {
        let s = self.scale * modes[0];
        if s < 0.0 {
            return Err(Error::Domain(format!("⟨K, e0⟩ = {} < 0", modes[0])));
        }
        for (o, c) in out.forcing.iter_mut().zip(&self.forcing) {
            *o = s * c;
        }
        out.utility = if s > 0.0 {
            self.theta_utility.scale(s.powf(1.0 - self.sigma))
        } else {
            utility_of_zero(self.sigma)
        };
        Ok(())
    }
}

/// `c = a(t, K) · profile` for a fixed nonnegative spatial profile.
pub struct SeparableControl<F> {
    profile_forcing: Vec<f64>,
    profile_utility: ExtendedReal,
    sigma: f64,
    intensity: F,
}

impl<F> SeparableControl<F>
where
    F: Fn(f64, &[f64]) -> f64 + Sync,
{
    pub fn new(
        profile: &SpatialField,
        population: &SpatialField,
        weight: &SpatialField,
        es: &EigenSystem,
        sigma: f64,
        intensity: F,
    ) -> Result<Self> {
        if !profile.is_nonnegative() {
            return Err(Error::NegativeControl {
                time: 0.0,
                value: profile.min(),
            });
        }
        Ok(Self {
            profile_forcing: es.project(&profile.mul(population)?)?,
            profile_utility: utility(profile, weight, sigma)?,
            sigma,
            intensity,
        })
    }
}

impl<F> ControlSupplier for SeparableControl<F>
where
    F: Fn(f64, &[f64]) -> f64 + Sync,
{
    fn evaluate(&self, t: f64, modes: &[f64], out: &mut ControlEval) -> Result<()> {
        let a = (self.intensity)(t, modes);
        if !(a >= 0.0) {
            return Err(Error::NegativeControl { time: t, value: a });
        }
        for (o, p) in out.forcing.iter_mut().zip(&self.profile_forcing) {
            *o = a * p;
        }
        out.utility = if a > 0.0 {
            self.profile_utility.scale(a.powf(1.0 - self.sigma))
        } else {
            utility_of_zero(self.sigma)
        };
        Ok(())
    }
}

/// An arbitrary consumption field computed from the reconstructed state.
pub struct FieldControl<'a, F> {
    es: &'a EigenSystem,
    population: &'a SpatialField,
    weight: &'a SpatialField,
    sigma: f64,
    supplier: F,
}

impl<'a, F> FieldControl<'a, F>
where
    F: Fn(f64, &SpatialField) -> SpatialField + Sync,
{
    pub fn new(
        es: &'a EigenSystem,
        population: &'a SpatialField,
        weight: &'a SpatialField,
        sigma: f64,
        supplier: F,
    ) -> Self {
        Self {
            es,
            population,
            weight,
            sigma,
            supplier,
        }
    }
}

impl<F> ControlSupplier for FieldControl<'_, F>
where
    F: Fn(f64, &SpatialField) -> SpatialField + Sync,
{
    fn evaluate(&self, t: f64, modes: &[f64], out: &mut ControlEval) -> Result<()> {
        let grid = *self.es.grid();
        let mut k = vec![0.0; grid.n_points()];
        for (coef, e) in modes.iter().zip(self.es.modes()) {
            for (v, ev) in k.iter_mut().zip(e.values()) {
                *v += coef * ev;
            }
        }
        let c = (self.supplier)(t, &SpatialField::from_values(grid, k)?);
        if let Some(v) = c.values().iter().copied().find(|v| *v < 0.0) {
            return Err(Error::NegativeControl { time: t, value: v });
        }
        let cn = c.mul(self.population)?;
        for (o, e) in out.forcing.iter_mut().zip(self.es.modes()) {
            *o = cn.inner_product(e)?;
        }
        out.utility = utility(&c, self.weight, self.sigma)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathStatus {
    Admissible,
    /// A coefficient became non-finite; the path is frozen at its last state.
    Exploded {
        time: f64,
    },
    /// `⟨K, e₀⟩` went negative; the path is frozen at its last admissible state.
    Inadmissible {
        exit_time: f64,
    },
}

impl PathStatus {
    pub fn is_admissible(&self) -> bool {
        matches!(self, PathStatus::Admissible)
    }
}

/// State handed to a [`PathObserver`] at every time step, including step 0.
#[derive(Debug)]
pub struct StepView<'a> {
    pub step: usize,
    pub t: f64,
    pub modes: &'a [f64],
    /// Cumulative Brownian motion driving mode 0.
    pub beta0: f64,
    pub control: &'a ControlEval,
}

pub trait PathObserver {
    type Output: Send;

    fn observe(&mut self, view: &StepView<'_>);

    fn finish(self, status: PathStatus) -> Self::Output;
}

/// Exact mode-0 factor and forcing coefficients of the optimal closed loop.
#[derive(Debug, Clone)]
struct ExactClosedLoop {
    pc_g_tilde: f64,
    alpha0: f64,
    c: Vec<f64>,
    alphas: Vec<f64>,
}

struct Engine<'a> {
    lambdas: &'a [f64],
    noise: &'a NoiseSpec,
    control: &'a dyn ControlSupplier,
    cfg: &'a SimConfig,
    n_steps: usize,
    exact: Option<ExactClosedLoop>,
}

/// Mode-0 exponent `(g̃ − α₀²/2) t + α₀ β₀`.
fn gbm_exponent(g_tilde: f64, alpha0: f64, t: f64, beta0: f64) -> f64 {
    (g_tilde - 0.5 * alpha0 * alpha0) * t + alpha0 * beta0
}

/// `⟨K₀, e₀⟩ exp(g̃ t + α₀ β₀ − α₀² t / 2)`.
pub fn exact_mode0(t: f64, x0: f64, pc: &PolicyConstants, beta0: f64) -> f64 {
    x0 * gbm_exponent(pc.g_tilde, pc.alpha0, t, beta0).exp()
}

impl Engine<'_> {
    fn run_path<O: PathObserver>(&self, k0: &[f64], path: usize, mut obs: O) -> Result<O::Output> {
        let cfg = self.cfg;
        let m = k0.len();
        let dt = cfg.dt;
        let sqdt = dt.sqrt();
        let mut streams: Vec<NormalStream> = (0..m)
            .map(|n| NormalStream::new(cfg.seed, Domain::Simulation, path as u64, n as u64))
            .collect();
        let mut k = k0.to_vec();
        let mut next = vec![0.0; m];
        let mut dbeta = vec![0.0; m];
        let mut beta0 = 0.0;
        let mut eval = ControlEval::zeros(m);

        if k[0] < 0.0 {
            return Ok(obs.finish(PathStatus::Inadmissible { exit_time: 0.0 }));
        }
        self.control.evaluate(0.0, &k, &mut eval)?;
        obs.observe(&StepView {
            step: 0,
            t: 0.0,
            modes: &k,
            beta0,
            control: &eval,
        });

        for step in 1..=self.n_steps {
            for (d, s) in dbeta.iter_mut().zip(streams.iter_mut()) {
                *d = sqdt * s.next_normal();
            }
            let t = cfg.time(step);
            let beta0_next = beta0 + dbeta[0];
            match &self.exact {
                Some(ex) => {
                    let x_old = k[0];
                    let x_new = k0[0] * gbm_exponent(ex.pc_g_tilde, ex.alpha0, t, beta0_next).exp();
                    next[0] = x_new;
                    for n in 1..m {
                        let a = ex.alphas[n];
                        let phi = ((self.lambdas[n] - 0.5 * a * a) * dt + a * dbeta[n]).exp();
                        next[n] = phi * k[n] - 0.5 * dt * ex.c[n] * (phi * x_old + x_new);
                    }
                }
                None => {
                    for n in 0..m {
                        let a = self.noise.alpha(n, k[n]);
                        next[n] = k[n]
                            + (self.lambdas[n] * k[n] - eval.forcing[n]) * dt
                            + a * k[n] * dbeta[n];
                    }
                }
            }
            if next.iter().any(|v| !v.is_finite()) {
                return Ok(obs.finish(PathStatus::Exploded { time: t }));
            }
            if next[0] < 0.0 {
                return Ok(obs.finish(PathStatus::Inadmissible { exit_time: t }));
            }
            std::mem::swap(&mut k, &mut next);
            beta0 = beta0_next;
            self.control.evaluate(t, &k, &mut eval)?;
            obs.observe(&StepView {
                step,
                t,
                modes: &k,
                beta0,
                control: &eval,
            });
        }
        Ok(obs.finish(PathStatus::Admissible))
    }

    fn run_all<O, F>(&self, k0: &[f64], make: F) -> Result<Vec<O::Output>>
    where
        O: PathObserver,
        F: Fn(usize) -> O + Sync,
    {
        (0..self.cfg.n_paths)
            .into_par_iter()
            .map(|p| self.run_path(k0, p, make(p)))
            .collect()
    }
}

fn check_inputs(k0: &[f64], es: &EigenSystem, noise: &NoiseSpec, cfg: &SimConfig) -> Result<usize> {
    let n_steps = cfg.n_steps()?;
    if k0.len() != cfg.n_modes {
        return Err(Error::LengthMismatch {
            expected: cfg.n_modes,
            got: k0.len(),
        });
    }
    if cfg.n_modes > es.n_modes() || cfg.n_modes > noise.n_modes() {
        return Err(Error::Parameter(format!(
            "n_modes = {} exceeds the eigensystem ({}) or noise ({}) size",
            cfg.n_modes,
            es.n_modes(),
            noise.n_modes()
        )));
    }
    if let Some(i) = k0.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index: i });
    }
    Ok(n_steps)
}

/// Streams every path of the optimal closed loop through an observer.
pub fn closed_loop_paths<O, F>(
    k0: &[f64],
    es: &EigenSystem,
    pc: &PolicyConstants,
    params: &ModelParams,
    cfg: &SimConfig,
    make: F,
) -> Result<Vec<O::Output>>
where
    O: PathObserver,
    F: Fn(usize) -> O + Sync,
{
    let noise = NoiseSpec::from_params(params, cfg.n_modes);
    let n_steps = check_inputs(k0, es, &noise, cfg)?;
    let control = FeedbackControl::optimal(pc, cfg.n_modes)?;
    let exact = match cfg.scheme {
        Scheme::ExactMode => Some(ExactClosedLoop {
            pc_g_tilde: pc.g_tilde,
            alpha0: pc.alpha0,
            c: pc.forcing[..cfg.n_modes].to_vec(),
            alphas: params.alphas(cfg.n_modes),
        }),
        Scheme::EulerMaruyama => None,
    };
    let engine = Engine {
        lambdas: &es.lambdas()[..cfg.n_modes],
        noise: &noise,
        control: &control,
        cfg,
        n_steps,
        exact,
    };
    engine.run_all(k0, make)
}

/// Streams every path driven by an arbitrary control (Euler–Maruyama).
pub fn controlled_paths<O, F>(
    k0: &[f64],
    es: &EigenSystem,
    noise: &NoiseSpec,
    control: &dyn ControlSupplier,
    cfg: &SimConfig,
    make: F,
) -> Result<Vec<O::Output>>
where
    O: PathObserver,
    F: Fn(usize) -> O + Sync,
{
    let n_steps = check_inputs(k0, es, noise, cfg)?;
    if cfg.scheme == Scheme::ExactMode {
        return Err(Error::Unsupported(
            "exact_mode applies to the optimal closed loop only; use euler_maruyama".into(),
        ));
    }
    let engine = Engine {
        lambdas: &es.lambdas()[..cfg.n_modes],
        noise,
        control,
        cfg,
        n_steps,
        exact: None,
    };
    engine.run_all(k0, make)
}

/// One stored path: coefficients at each stamp (row-major, stamps × modes).
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub modes: Vec<f64>,
    pub beta0: Vec<f64>,
    pub status: PathStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub times: Vec<f64>,
    pub n_modes: usize,
    pub seed: u64,
    pub scheme: Scheme,
    pub dt: f64,
    pub paths: Vec<PathRecord>,
}

impl PathRecord {
    pub fn state(&self, stamp: usize, n_modes: usize) -> &[f64] {
        &self.modes[stamp * n_modes..(stamp + 1) * n_modes]
    }
}

impl Ensemble {
    pub fn n_stamps(&self) -> usize {
        self.times.len()
    }

    pub fn state(&self, path: usize, stamp: usize) -> &[f64] {
        self.paths[path].state(stamp, self.n_modes)
    }

    pub fn value(&self, path: usize, stamp: usize, mode: usize) -> f64 {
        self.paths[path].modes[stamp * self.n_modes + mode]
    }

    pub fn admissible(&self) -> impl Iterator<Item = &PathRecord> {
        self.paths.iter().filter(|p| p.status.is_admissible())
    }

    pub fn count_admissible(&self) -> usize {
        self.admissible().count()
    }

    /// Values of one mode at one stamp over admissible paths.
    pub fn marginal(&self, stamp: usize, mode: usize) -> Vec<f64> {
        self.admissible()
            .map(|p| p.modes[stamp * self.n_modes + mode])
            .collect()
    }

    /// Per-stamp `(mean, std)` of each mode over admissible paths.
    pub fn mode_statistics(&self) -> Vec<Vec<(f64, f64)>> {
        let n = self.count_admissible() as f64;
        (0..self.n_stamps())
            .map(|s| {
                (0..self.n_modes)
                    .map(|m| {
                        let v = self.marginal(s, m);
                        if v.is_empty() {
                            return (f64::NAN, f64::NAN);
                        }
                        let mean = v.iter().sum::<f64>() / n;
                        let var = if v.len() > 1 {
                            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
                        } else {
                            0.0
                        };
                        (mean, var.sqrt())
                    })
                    .collect()
            })
            .collect()
    }
}

/// Records stamps for an [`Ensemble`]; frozen paths are padded with their last state.
struct Recorder {
    record_every: usize,
    n_steps: usize,
    n_stamps: usize,
    modes: Vec<f64>,
    beta0: Vec<f64>,
}

impl PathObserver for Recorder {
    type Output = PathRecord;

    fn observe(&mut self, v: &StepView<'_>) {
        if v.step.is_multiple_of(self.record_every) || v.step == self.n_steps {
            self.modes.extend_from_slice(v.modes);
            self.beta0.push(v.beta0);
        }
    }

    fn finish(mut self, status: PathStatus) -> PathRecord {
        let m = if self.beta0.is_empty() {
            0
        } else {
            self.modes.len() / self.beta0.len()
        };
        while self.beta0.len() < self.n_stamps && m > 0 {
            let last = self.modes[self.modes.len() - m..].to_vec();
            self.modes.extend_from_slice(&last);
            self.beta0.push(*self.beta0.last().unwrap());
        }
        PathRecord {
            modes: self.modes,
            beta0: self.beta0,
            status,
        }
    }
}

fn assemble(
    cfg: &SimConfig,
    run: impl FnOnce(&(dyn Fn(usize) -> Recorder + Sync)) -> Result<Vec<PathRecord>>,
) -> Result<Ensemble> {
    let n_steps = cfg.n_steps()?;
    let times = cfg.stamps()?;
    let n_stamps = times.len();
    let make = |_p: usize| Recorder {
        record_every: cfg.record_every,
        n_steps,
        n_stamps,
        modes: Vec::with_capacity(n_stamps * cfg.n_modes),
        beta0: Vec::with_capacity(n_stamps),
    };
    let mut paths = run(&make)?;
    // A path rejected at t = 0 has nothing recorded.
    for p in &mut paths {
        if p.beta0.is_empty() {
            p.modes = vec![f64::NAN; n_stamps * cfg.n_modes];
            p.beta0 = vec![0.0; n_stamps];
        }
    }
    Ok(Ensemble {
        times,
        n_modes: cfg.n_modes,
        seed: cfg.seed,
        scheme: cfg.scheme,
        dt: cfg.dt,
        paths,
    })
}

pub fn simulate_closed_loop(
    k0: &[f64],
    es: &EigenSystem,
    pc: &PolicyConstants,
    params: &ModelParams,
    cfg: &SimConfig,
) -> Result<Ensemble> {
    assemble(cfg, |make| closed_loop_paths(k0, es, pc, params, cfg, make))
}

pub fn simulate_controlled(
    k0: &[f64],
    es: &EigenSystem,
    noise: &NoiseSpec,
    control: &dyn ControlSupplier,
    cfg: &SimConfig,
) -> Result<Ensemble> {
    assemble(cfg, |make| {
        controlled_paths(k0, es, noise, control, cfg, make)
    })
}

/// Multiplies every coefficient by `e^{−g t − α₀ β₀(t)}`.
pub fn detrend(ens: &Ensemble, pc: &PolicyConstants) -> Result<Ensemble> {
    let mut out = ens.clone();
    for (i, p) in out.paths.iter_mut().enumerate() {
        if p.beta0.len() != ens.times.len() {
            return Err(Error::Simulation(format!("path {i} has no β0 record")));
        }
        for (s, (&t, &b)) in ens.times.iter().zip(&p.beta0).enumerate() {
            let factor = (-pc.g * t - pc.alpha0 * b).exp();
            for v in &mut p.modes[s * ens.n_modes..(s + 1) * ens.n_modes] {
                *v *= factor;
            }
        }
    }
    Ok(out)
}
