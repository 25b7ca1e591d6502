//! Model parameters and the closed-form objects of the optimal policy.
//!
//! Everything here depends on the state only through `X = ⟨K, e₀⟩`:
//!
//! ```text
//! D  = ρ − λ₀(1−σ) + ½α₀²σ(1−σ)
//! I  = ∫ (N e₀)^{−(1−σ)/σ} f^{1/σ} dx
//! γ  = (σ I / D)^σ
//! w  = γ X^{1−σ} / (1−σ)
//! g  = (λ₀ − ρ)/σ − ½α₀²(2−σ),   g̃ = g + ½α₀²
//! θ  = (f / (γ N e₀))^{1/σ},      c*(t) = X(t) θ
//! ```

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fields::{SpatialField, POSITIVITY_FLOOR};
use crate::report::{Check, VerificationReport};
use crate::spectral::EigenSystem;
use crate::value::ExtendedReal;

/// Volatilities of modes `n ≥ 1`.
#[derive(Debug, Clone, PartialEq)]
pub enum AlphaRest {
    /// `α_n = α₀` for every mode.
    Uniform,
    Constant(f64),
    /// `α_1, α_2, …`; the last entry is reused past the end of the list.
    PerMode(Vec<f64>),
}

impl FromStr for AlphaRest {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = |why: String| Error::Parameter(format!("alpha_rest `{s}`: {why}"));
        let parse = |t: &str| -> Result<f64> {
            let v: f64 = t.trim().parse().map_err(|e| bad(format!("{e}")))?;
            if !v.is_finite() || v < 0.0 {
                return Err(bad("volatility must be finite and nonnegative".into()));
            }
            Ok(v)
        };
        if s == "uniform" || s.starts_with("uniform:") {
            return Ok(AlphaRest::Uniform);
        }
        match s.split_once(':') {
            Some(("const", v)) => Ok(AlphaRest::Constant(parse(v)?)),
            Some(("list", v)) => {
                let list = v.split(',').map(parse).collect::<Result<Vec<_>>>()?;
                if list.is_empty() {
                    return Err(bad("empty list".into()));
                }
                Ok(AlphaRest::PerMode(list))
            }
            _ => Err(bad(
                "expected `uniform`, `const:<α>` or `list:<α1>,<α2>,…`".into()
            )),
        }
    }
}

impl fmt::Display for AlphaRest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlphaRest::Uniform => f.write_str("uniform"),
            AlphaRest::Constant(a) => write!(f, "const:{a}"),
            AlphaRest::PerMode(v) => {
                let parts: Vec<String> = v.iter().map(|a| a.to_string()).collect();
                write!(f, "list:{}", parts.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub rho: f64,
    pub sigma: f64,
    pub alpha0: f64,
    pub alpha_rest: AlphaRest,
}

impl ModelParams {
    pub fn new(rho: f64, sigma: f64, alpha0: f64, alpha_rest: AlphaRest) -> Result<Self> {
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::Parameter(format!("rho must be positive, got {rho}")));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::Parameter(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        if sigma == 1.0 {
            return Err(Error::Parameter(
                "sigma = 1 (logarithmic utility) is not supported".into(),
            ));
        }
        if !(alpha0.is_finite() && alpha0 >= 0.0) {
            return Err(Error::Parameter(format!(
                "alpha0 must be finite and nonnegative, got {alpha0}"
            )));
        }
        Ok(Self {
            rho,
            sigma,
            alpha0,
            alpha_rest,
        })
    }

    /// Volatility of mode `n` (mode 0 is `alpha0`).
    pub fn alpha(&self, n: usize) -> f64 {
        if n == 0 {
            return self.alpha0;
        }
        match &self.alpha_rest {
            AlphaRest::Uniform => self.alpha0,
            AlphaRest::Constant(a) => *a,
            AlphaRest::PerMode(v) => v[(n - 1).min(v.len() - 1)],
        }
    }

    pub fn alphas(&self, n_modes: usize) -> Vec<f64> {
        (0..n_modes).map(|n| self.alpha(n)).collect()
    }

    pub fn is_uniform_noise(&self) -> bool {
        match &self.alpha_rest {
            AlphaRest::Uniform => true,
            AlphaRest::Constant(a) => *a == self.alpha0,
            AlphaRest::PerMode(v) => v.iter().all(|a| *a == self.alpha0),
        }
    }

    /// `ρ − λ₀(1−σ) + ½α₀²σ(1−σ)`; positive exactly when the finiteness
    /// assumption holds.
    pub fn discount_margin(&self, lambda0: f64) -> f64 {
        let s = self.sigma;
        self.rho - lambda0 * (1.0 - s) + 0.5 * self.alpha0.powi(2) * s * (1.0 - s)
    }

    /// Deterministic exponential rate `g` of the optimal path.
    pub fn growth_rate(&self, lambda0: f64) -> f64 {
        let s = self.sigma;
        let a2 = self.alpha0.powi(2);
        -(self.rho - lambda0 + 0.5 * s * (1.0 - s) * a2 + 0.5 * a2 * s) / s
    }
}

/// Technology `A`, population `N` and utility weight `f`.
#[derive(Debug, Clone)]
pub struct ModelFields {
    pub tech: SpatialField,
    pub population: SpatialField,
    pub weight: SpatialField,
}

pub fn check_assumptions(
    params: &ModelParams,
    fields: &ModelFields,
    es: &EigenSystem,
) -> VerificationReport {
    let mut r = VerificationReport::new();
    let s = params.sigma;
    let lambda0 = es.lambda(0);

    let bound = lambda0 * (1.0 - s) - 0.5 * s * (1.0 - s) * params.alpha0.powi(2);
    let mut finiteness = Check::at_least("rho_exceeds_growth_bound", params.rho, bound, 0.0);
    finiteness.pass = params.rho > bound;
    r.push(finiteness.with_note("rho > lambda0(1-sigma) - sigma(1-sigma)alpha0^2/2"));

    let mut n_floor = Check::at_least(
        "population_bounded_below",
        fields.population.min(),
        POSITIVITY_FLOOR,
        0.0,
    );
    n_floor.pass = fields.population.is_strictly_positive();
    r.push(n_floor);
    r.push(Check::at_least(
        "tech_nonnegative",
        fields.tech.min(),
        0.0,
        0.0,
    ));
    r.push(Check::at_least(
        "weight_nonnegative",
        fields.weight.min(),
        0.0,
        0.0,
    ));
    let mut f_mass = Check::at_least("weight_not_identically_zero", fields.weight.max(), 0.0, 0.0);
    f_mass.pass = fields.weight.max() > 0.0;
    r.push(f_mass);

    let e0 = es.principal();
    let mut perron = Check::at_least("principal_mode_positive", e0.min(), 0.0, 0.0);
    perron.pass = e0.min() > 0.0;
    r.push(perron);

    for (name, value) in integrability_diagnostics(params, fields, es) {
        r.push(
            Check::flag(name, value.is_some_and(f64::is_finite))
                .advisory()
                .with_note(value.map_or("undefined".into(), |v| format!("integral = {v:.6e}"))),
        );
    }

    let g = params.growth_rate(lambda0);
    let lambda1 = if es.n_modes() > 1 {
        es.lambda(1)
    } else {
        f64::NAN
    };
    let gap_ok = lambda1 < g;
    let uniform = params.is_uniform_noise();
    r.push(
        Check::at_most("lambda1_below_g", lambda1.max(f64::MIN), g, 0.0)
            .advisory()
            .with_note(if es.n_modes() > 1 {
                ""
            } else {
                "needs at least two modes"
            }),
    );
    if let Some(c) = r.checks.last_mut() {
        c.pass = gap_ok;
    }
    r.push(Check::flag("alpha_uniform", uniform).advisory());
    r.push(
        Check::flag("asymptotics_ready", gap_ok && uniform)
            .advisory()
            .with_note("required only by the long-time results"),
    );
    r
}

/// True when the report's long-time prerequisites hold.
pub fn asymptotics_ready(report: &VerificationReport) -> bool {
    report.get("asymptotics_ready").is_some_and(|c| c.pass)
}

/// The two integrability conditions implied by `N ≥ ε`.
fn integrability_diagnostics(
    params: &ModelParams,
    fields: &ModelFields,
    es: &EigenSystem,
) -> Vec<(&'static str, Option<f64>)> {
    let s = params.sigma;
    let ne0 = fields.population.mul(es.principal()).ok();
    let first = ne0.as_ref().and_then(|ne0| {
        let a = fields.weight.powf(1.0 / s).ok()?;
        let b = ne0.powf((s - 1.0) / s).ok()?;
        Some(a.mul(&b).ok()?.quadrature())
    });
    let second = ne0.as_ref().and_then(|ne0| {
        let ratio = fields.weight.div(ne0).ok()?;
        Some(ratio.powf(2.0 / s).ok()?.quadrature())
    });
    vec![
        ("integrability_weighted_utility", first),
        ("integrability_consumption_ratio", second),
    ]
}

/// `∫ (N e₀)^{−(1−σ)/σ} f^{1/σ} dx`
fn policy_integral(sigma: f64, fields: &ModelFields, es: &EigenSystem) -> Result<f64> {
    let ne0 = fields.population.mul(es.principal())?;
    if !ne0.is_strictly_positive() {
        return Err(Error::Domain(format!(
            "N·e0 must be strictly positive (min = {:e})",
            ne0.min()
        )));
    }
    if !fields.weight.is_nonnegative() {
        return Err(Error::Domain("utility weight f must be nonnegative".into()));
    }
    let integrand = ne0
        .powf(-(1.0 - sigma) / sigma)?
        .mul(&fields.weight.powf(1.0 / sigma)?)?;
    let integral = integrand.quadrature();
    if integral <= 0.0 {
        return Err(Error::Domain(
            "utility weight f vanishes identically".into(),
        ));
    }
    Ok(integral)
}

pub fn compute_gamma(params: &ModelParams, fields: &ModelFields, es: &EigenSystem) -> Result<f64> {
    let margin = params.discount_margin(es.lambda(0));
    if margin <= 0.0 {
        return Err(Error::Assumption(format!(
            "rho − λ0(1−σ) + α0²σ(1−σ)/2 = {margin} ≤ 0"
        )));
    }
    let s = params.sigma;
    let integral = policy_integral(s, fields, es)?;
    Ok((s / margin).powf(s) * integral.powf(s))
}

/// Constants of the optimal policy.
#[derive(Debug, Clone)]
pub struct PolicyConstants {
    pub gamma: f64,
    /// Deterministic rate of `⟨K*, e₀⟩`.
    pub g: f64,
    /// Drift of the geometric Brownian motion `⟨K*, e₀⟩`.
    pub g_tilde: f64,
    /// Feedback intensity `(f / (γ N e₀))^{1/σ}`.
    pub theta: SpatialField,
    /// `c_n = ⟨θ N, e_n⟩` for every retained mode.
    pub forcing: Vec<f64>,
    /// `D/σ`: exact decay rate of `e^{−ρt} E[U(c*(t))]`.
    pub utility_decay: f64,
    /// `U(θ)`, so that `U(c*) = X^{1−σ} U(θ)`.
    pub theta_utility: ExtendedReal,
    pub sigma: f64,
    pub rho: f64,
    pub alpha0: f64,
    pub lambda0: f64,
}

impl PolicyConstants {
    pub fn new(params: &ModelParams, fields: &ModelFields, es: &EigenSystem) -> Result<Self> {
        let gamma = compute_gamma(params, fields, es)?;
        let s = params.sigma;
        let lambda0 = es.lambda(0);
        let g = params.growth_rate(lambda0);
        let g_tilde = g + 0.5 * params.alpha0.powi(2);
        let gne0 = fields.population.mul(es.principal())?.scale(gamma);
        let theta = fields.weight.div(&gne0)?.powf(1.0 / s)?;
        let theta_n = theta.mul(&fields.population)?;
        let forcing = es.project(&theta_n)?;
        let theta_utility = utility(&theta, &fields.weight, s)?;
        Ok(Self {
            gamma,
            g,
            g_tilde,
            theta,
            forcing,
            utility_decay: params.discount_margin(lambda0) / s,
            theta_utility,
            sigma: s,
            rho: params.rho,
            alpha0: params.alpha0,
            lambda0,
        })
    }

    /// `λ₀ − γ^{−1/σ} ⟨f^{1/σ}, (N e₀)^{−(1−σ)/σ}⟩ − g̃`, re-evaluated by quadrature.
    pub fn rate_identity_residual(&self, fields: &ModelFields, es: &EigenSystem) -> Result<f64> {
        let integral = policy_integral(self.sigma, fields, es)?;
        let consumption_rate = self.gamma.powf(-1.0 / self.sigma) * integral;
        Ok(es.lambda(0) - consumption_rate - self.g_tilde)
    }

    /// `w` as a function of `X = ⟨K, e₀⟩`.
    pub fn value_at(&self, x: f64) -> Result<ExtendedReal> {
        value_of_projection(x, self.gamma, self.sigma)
    }

    /// `U(c*)` when `⟨K, e₀⟩ = x`.
    pub fn optimal_utility_at(&self, x: f64) -> ExtendedReal {
        if x > 0.0 {
            self.theta_utility.scale(x.powf(1.0 - self.sigma))
        } else if self.sigma < 1.0 {
            ExtendedReal::Finite(0.0)
        } else {
            ExtendedReal::NegInfinity
        }
    }
}

fn value_of_projection(x: f64, gamma: f64, sigma: f64) -> Result<ExtendedReal> {
    if x < 0.0 {
        return Err(Error::Domain(format!(
            "⟨K, e0⟩ = {x} < 0 is outside the domain"
        )));
    }
    if x == 0.0 {
        return Ok(if sigma < 1.0 {
            ExtendedReal::Finite(0.0)
        } else {
            ExtendedReal::NegInfinity
        });
    }
    Ok(ExtendedReal::Finite(
        gamma * x.powf(1.0 - sigma) / (1.0 - sigma),
    ))
}

/// `w(K) = γ ⟨K, e₀⟩^{1−σ} / (1−σ)`.
pub fn value_function(
    k: &SpatialField,
    pc: &PolicyConstants,
    es: &EigenSystem,
) -> Result<ExtendedReal> {
    value_of_projection(k.inner_product(es.principal())?, pc.gamma, pc.sigma)
}

/// `U(c) = ∫ c^{1−σ} f / (1−σ) dx`.
pub fn utility(c: &SpatialField, f: &SpatialField, sigma: f64) -> Result<ExtendedReal> {
    if let Some(i) = c.values().iter().position(|&v| v < 0.0) {
        return Err(Error::Domain(format!(
            "negative consumption {} at index {i}",
            c.values()[i]
        )));
    }
    if c.grid() != f.grid() {
        return Err(Error::GridMismatch {
            left: c.grid().n_points(),
            right: f.grid().n_points(),
        });
    }
    let p = 1.0 - sigma;
    let mut sum = 0.0;
    for (&cv, &fv) in c.values().iter().zip(f.values()) {
        if fv == 0.0 {
            continue;
        }
        if cv == 0.0 {
            if sigma > 1.0 {
                return Ok(ExtendedReal::NegInfinity);
            }
            continue;
        }
        sum += cv.powf(p) * fv;
    }
    Ok(ExtendedReal::Finite(c.grid().spacing() * sum / p))
}

/// `H_CV(p; c) = U(c) − ⟨c N, p⟩`.
pub fn hamiltonian_cv(
    p: &SpatialField,
    c: &SpatialField,
    population: &SpatialField,
    weight: &SpatialField,
    sigma: f64,
) -> Result<ExtendedReal> {
    let u = utility(c, weight, sigma)?;
    let cost = c.mul(population)?.inner_product(p)?;
    Ok(u.add(ExtendedReal::Finite(-cost)))
}

/// `H_MAX(p) = ∫ σ/(1−σ) (N p)^{−(1−σ)/σ} f^{1/σ} dx`, defined for `p > 0`.
pub fn hamiltonian_max(
    p: &SpatialField,
    population: &SpatialField,
    weight: &SpatialField,
    sigma: f64,
) -> Result<f64> {
    if p.min() <= 0.0 {
        return Err(Error::Domain(format!(
            "H_MAX needs a strictly positive costate (min = {:e})",
            p.min()
        )));
    }
    let np = population.mul(p)?;
    let integrand = np
        .powf(-(1.0 - sigma) / sigma)?
        .mul(&weight.powf(1.0 / sigma)?)?;
    Ok(sigma / (1.0 - sigma) * integrand.quadrature())
}

/// Pointwise maximizer of `H_CV(p; ·)`: `c† = (f / (N p))^{1/σ}`.
pub fn hamiltonian_maximizer(
    p: &SpatialField,
    population: &SpatialField,
    weight: &SpatialField,
    sigma: f64,
) -> Result<SpatialField> {
    if p.min() <= 0.0 {
        return Err(Error::Domain(
            "maximizer needs a strictly positive costate".into(),
        ));
    }
    weight.div(&population.mul(p)?)?.powf(1.0 / sigma)
}

/// Closed-loop optimal consumption `G(K) = ⟨K, e₀⟩ θ`.
pub fn feedback_consumption(
    k: &SpatialField,
    pc: &PolicyConstants,
    es: &EigenSystem,
) -> Result<SpatialField> {
    let x = k.inner_product(es.principal())?;
    if x < 0.0 {
        return Err(Error::Domain(format!(
            "⟨K, e0⟩ = {x} < 0 is outside the domain"
        )));
    }
    Ok(pc.theta.scale(x))
}

/// Open-loop optimal consumption `⟨K₀, e₀⟩ e^{g t + α₀ β₀(t)} θ`.
pub fn open_loop_control(t: f64, beta0: f64, x0: f64, pc: &PolicyConstants) -> SpatialField {
    pc.theta.scale(x0 * (pc.g * t + pc.alpha0 * beta0).exp())
}

/// Parameters, fields, eigensystem and policy of one configured model.
#[derive(Debug, Clone)]
pub struct Problem {
    pub params: ModelParams,
    pub fields: ModelFields,
    pub es: EigenSystem,
    pub pc: PolicyConstants,
    pub k0: SpatialField,
    /// `⟨K₀, e_n⟩` for every retained mode.
    pub k0_modes: Vec<f64>,
}

impl Problem {
    /// Fails with [`Error::Assumption`] when a required standing assumption is violated.
    pub fn new(
        params: ModelParams,
        fields: ModelFields,
        k0: SpatialField,
        n_modes: usize,
    ) -> Result<Self> {
        let es = EigenSystem::from_potential(&fields.tech, n_modes)?;
        let report = check_assumptions(&params, &fields, &es);
        if let Some(c) = report.failures().next() {
            return Err(Error::Assumption(format!(
                "{} (measured {}, bound {})",
                c.name, c.measured, c.oracle
            )));
        }
        let pc = PolicyConstants::new(&params, &fields, &es)?;
        let k0_modes = es.project(&k0)?;
        if k0_modes[0] < 0.0 {
            return Err(Error::Domain(format!("⟨K0, e0⟩ = {} < 0", k0_modes[0])));
        }
        Ok(Self {
            params,
            fields,
            es,
            pc,
            k0,
            k0_modes,
        })
    }

    /// `⟨K₀, e₀⟩`
    pub fn x0(&self) -> f64 {
        self.k0_modes[0]
    }

    /// `w(K₀)`
    pub fn w0(&self) -> Result<ExtendedReal> {
        self.pc.value_at(self.x0())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::SpatialGrid;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    struct Setup {
        params: ModelParams,
        fields: ModelFields,
        es: EigenSystem,
    }

    fn setup(rho: f64, sigma: f64, alpha0: f64, weight: impl Fn(f64) -> f64) -> Setup {
        let grid = SpatialGrid::new(128).unwrap();
        let fields = ModelFields {
            tech: SpatialField::constant(grid, 0.05).unwrap(),
            population: SpatialField::constant(grid, 1.0).unwrap(),
            weight: SpatialField::from_fn(grid, weight).unwrap(),
        };
        let es = EigenSystem::from_potential(&fields.tech, 8).unwrap();
        let params = ModelParams::new(rho, sigma, alpha0, AlphaRest::Uniform).unwrap();
        Setup { params, fields, es }
    }

    fn b1() -> Setup {
        setup(0.1, 0.5, 0.2, |_| 1.0)
    }

    /// γ for constant coefficients: e₀ ≡ (2π)^{−1/2}, N = f = 1, so the
    /// integrand is (2π)^{(1−σ)/(2σ)} and the integral is 2π times that.
    fn gamma_constant_oracle(rho: f64, sigma: f64, alpha0: f64, lambda0: f64) -> f64 {
        let d = rho - lambda0 * (1.0 - sigma) + 0.5 * alpha0 * alpha0 * sigma * (1.0 - sigma);
        let integral = 2.0 * PI * (2.0 * PI).powf((1.0 - sigma) / (2.0 * sigma));
        (sigma / d * integral).powf(sigma)
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::new(0.1, 1.0, 0.2, AlphaRest::Uniform).is_err());
        assert!(ModelParams::new(0.0, 0.5, 0.2, AlphaRest::Uniform).is_err());
        assert!(ModelParams::new(0.1, 0.5, -0.2, AlphaRest::Uniform).is_err());
        let p = ModelParams::new(0.1, 0.5, 0.2, "list:0.1,0.3".parse().unwrap()).unwrap();
        assert_eq!(p.alphas(4), vec![0.2, 0.1, 0.3, 0.3]);
        assert!(!p.is_uniform_noise());
        assert_eq!(
            "const:0.4".parse::<AlphaRest>().unwrap(),
            AlphaRest::Constant(0.4)
        );
        assert_eq!(
            "uniform:0.2".parse::<AlphaRest>().unwrap(),
            AlphaRest::Uniform
        );
        assert!("list:".parse::<AlphaRest>().is_err());
        assert!("gauss".parse::<AlphaRest>().is_err());
    }

    #[test]
    fn assumptions_benchmark_passes() {
        let s = b1();
        let r = check_assumptions(&s.params, &s.fields, &s.es);
        assert!(r.all_passed(), "{}", r.to_table());
        let a = r.get("rho_exceeds_growth_bound").unwrap();
        assert_relative_eq!(a.oracle, 0.02, epsilon = 1e-12);
        assert!(asymptotics_ready(&r));
        let g = s.params.growth_rate(s.es.lambda(0));
        assert_relative_eq!(g, -0.13, epsilon = 1e-12);
        assert!(s.es.lambda(1) < g);
    }

    #[test]
    fn assumptions_fail_for_small_discount() {
        let s = setup(0.01, 0.5, 0.0, |_| 1.0);
        let r = check_assumptions(&s.params, &s.fields, &s.es);
        let a = r.get("rho_exceeds_growth_bound").unwrap();
        assert_relative_eq!(a.oracle, 0.025, epsilon = 1e-12);
        assert!(!a.pass);
        assert!(!r.all_passed());
        assert!(compute_gamma(&s.params, &s.fields, &s.es).is_err());
    }

    #[test]
    fn non_uniform_noise_is_not_asymptotics_ready() {
        let mut s = b1();
        s.params.alpha_rest = AlphaRest::Constant(0.3);
        let r = check_assumptions(&s.params, &s.fields, &s.es);
        assert!(r.all_passed());
        assert!(!asymptotics_ready(&r));
    }

    #[test]
    fn gamma_benchmark() {
        let s = b1();
        let gamma = compute_gamma(&s.params, &s.fields, &s.es).unwrap();
        let oracle = gamma_constant_oracle(0.1, 0.5, 0.2, 0.05);
        assert_relative_eq!(gamma, oracle, max_relative = 1e-12);
        assert_relative_eq!(gamma, 9.9215, epsilon = 1e-4);
        assert_relative_eq!(
            oracle,
            (0.5 / 0.08 * (2.0 * PI).powf(1.5)).sqrt(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn noise_lowers_gamma() {
        let noisy = b1();
        let det = setup(0.1, 0.5, 0.0, |_| 1.0);
        let g = compute_gamma(&noisy.params, &noisy.fields, &noisy.es).unwrap();
        let gd = compute_gamma(&det.params, &det.fields, &det.es).unwrap();
        assert_relative_eq!(
            gd,
            (0.5 / 0.075 * (2.0 * PI).powf(1.5)).sqrt(),
            max_relative = 1e-12
        );
        assert!(gd > g);
        // w ≤ w_det at a fixed state.
        let x: f64 = 2.0;
        assert!(g * x.powf(0.5) / 0.5 <= gd * x.powf(0.5) / 0.5);
    }

    #[test]
    fn gamma_monotone_in_volatility() {
        let mut last = f64::INFINITY;
        for a in [0.0, 0.1, 0.2, 0.3, 0.5] {
            let s = setup(0.1, 0.5, a, |_| 1.0);
            let g = compute_gamma(&s.params, &s.fields, &s.es).unwrap();
            assert!(g < last);
            last = g;
        }
    }

    #[test]
    fn gamma_for_weight_proportional_to_principal_mode() {
        // f = N e₀ (N = 1): integrand (e₀)^{−(1−σ)/σ + 1/σ} = e₀, integral √(2π).
        let s = setup(0.1, 0.5, 0.2, |_| (2.0 * PI).powf(-0.5));
        let gamma = compute_gamma(&s.params, &s.fields, &s.es).unwrap();
        let oracle = (0.5 / 0.08 * (2.0 * PI).sqrt()).powf(0.5);
        assert_relative_eq!(gamma, oracle, max_relative = 1e-12);
    }

    #[test]
    fn policy_constants_benchmark() {
        let s = b1();
        let pc = PolicyConstants::new(&s.params, &s.fields, &s.es).unwrap();
        assert_relative_eq!(pc.g, -0.13, epsilon = 1e-12);
        assert_relative_eq!(pc.g_tilde, -0.11, epsilon = 1e-12);
        let e0 = (2.0 * PI).powf(-0.5);
        let theta_oracle = (1.0 / (gamma_constant_oracle(0.1, 0.5, 0.2, 0.05) * e0)).powi(2);
        assert_relative_eq!(pc.theta.values()[0], theta_oracle, max_relative = 1e-10);
        assert_relative_eq!(pc.theta.values()[0], 0.06383, epsilon = 1e-5);
        assert!(pc.rate_identity_residual(&s.fields, &s.es).unwrap().abs() < 1e-10);
        assert_relative_eq!(pc.forcing[0], 0.16, max_relative = 1e-10);
        assert!(pc.forcing[1..].iter().all(|c| c.abs() < 1e-12));
        assert_relative_eq!(pc.utility_decay, 0.16, max_relative = 1e-12);
    }

    #[test]
    fn rate_identity_for_various_configurations() {
        for (rho, sigma, alpha0) in [
            (0.1, 0.5, 0.2),
            (0.2, 2.0, 0.3),
            (0.08, 0.7, 0.0),
            (0.3, 3.0, 0.1),
        ] {
            let s = setup(rho, sigma, alpha0, |x| 1.0 + 0.5 * x.cos());
            let pc = PolicyConstants::new(&s.params, &s.fields, &s.es).unwrap();
            let r = pc.rate_identity_residual(&s.fields, &s.es).unwrap();
            assert!(r.abs() < 1e-10, "residual {r} at σ={sigma}");
            // c₀ = D/σ by construction.
            assert_relative_eq!(pc.forcing[0], pc.utility_decay, max_relative = 1e-9);
        }
    }

    #[test]
    fn value_function_cases() {
        let s = b1();
        let pc = PolicyConstants::new(&s.params, &s.fields, &s.es).unwrap();
        let one = SpatialField::constant(*s.es.grid(), 1.0).unwrap();
        let w = value_function(&one, &pc, &s.es).unwrap().finite().unwrap();
        assert_relative_eq!(
            w,
            pc.gamma * (2.0 * PI).sqrt().powf(0.5) / 0.5,
            max_relative = 1e-12
        );
        assert_relative_eq!(w, 31.42, epsilon = 0.01);

        let two = one.scale(2.0);
        let w2 = value_function(&two, &pc, &s.es).unwrap().finite().unwrap();
        assert_relative_eq!(w2, 2f64.powf(0.5) * w, max_relative = 1e-14);

        assert_eq!(pc.value_at(0.0).unwrap(), ExtendedReal::Finite(0.0));
        assert!(pc.value_at(-1.0).is_err());
        assert_eq!(
            value_of_projection(0.0, 1.0, 2.0).unwrap(),
            ExtendedReal::NegInfinity
        );
    }

    #[test]
    fn utility_cases() {
        let g = SpatialGrid::new(32).unwrap();
        let one = SpatialField::constant(g, 1.0).unwrap();
        let zero = SpatialField::constant(g, 0.0).unwrap();
        let four = SpatialField::constant(g, 4.0).unwrap();
        assert_relative_eq!(
            utility(&one, &one, 0.5).unwrap().finite().unwrap(),
            4.0 * PI,
            epsilon = 1e-12
        );
        assert_eq!(
            utility(&zero, &one, 0.5).unwrap(),
            ExtendedReal::Finite(0.0)
        );
        assert_relative_eq!(
            utility(&four, &one, 2.0).unwrap().finite().unwrap(),
            -PI / 2.0,
            epsilon = 1e-12
        );
        assert_eq!(
            utility(&zero, &one, 2.0).unwrap(),
            ExtendedReal::NegInfinity
        );
        assert!(utility(&one.scale(-1.0), &one, 0.5).is_err());
    }

    #[test]
    fn hamiltonians() {
        let g = SpatialGrid::new(64).unwrap();
        let one = SpatialField::constant(g, 1.0).unwrap();
        assert_relative_eq!(
            hamiltonian_max(&one, &one, &one, 0.5).unwrap(),
            2.0 * PI,
            epsilon = 1e-12
        );
        assert_eq!(
            hamiltonian_cv(
                &one,
                &SpatialField::constant(g, 0.0).unwrap(),
                &one,
                &one,
                0.5
            )
            .unwrap(),
            ExtendedReal::Finite(0.0)
        );
        assert!(hamiltonian_max(&one.scale(0.0), &one, &one, 0.5).is_err());

        let p = SpatialField::from_fn(g, |x| 1.0 + 0.3 * x.sin()).unwrap();
        let n = SpatialField::from_fn(g, |x| 2.0 + x.cos()).unwrap();
        let f = SpatialField::from_fn(g, |x| 1.0 + 0.5 * (2.0 * x).cos()).unwrap();
        for sigma in [0.5, 2.0] {
            let c = hamiltonian_maximizer(&p, &n, &f, sigma).unwrap();
            let at_max = hamiltonian_cv(&p, &c, &n, &f, sigma)
                .unwrap()
                .finite()
                .unwrap();
            let hmax = hamiltonian_max(&p, &n, &f, sigma).unwrap();
            assert_relative_eq!(at_max, hmax, max_relative = 1e-10);
        }
    }

    proptest! {
        #[test]
        fn current_value_below_maximum(
            scales in prop::collection::vec(0.01f64..5.0, 64),
            sigma in prop_oneof![0.2f64..0.9, 1.2f64..4.0],
        ) {
            let g = SpatialGrid::new(64).unwrap();
            let p = SpatialField::from_fn(g, |x| 1.0 + 0.3 * x.sin()).unwrap();
            let n = SpatialField::from_fn(g, |x| 2.0 + x.cos()).unwrap();
            let f = SpatialField::constant(g, 1.0).unwrap();
            let star = hamiltonian_maximizer(&p, &n, &f, sigma).unwrap();
            let c = SpatialField::from_values(
                g,
                star.values().iter().zip(&scales).map(|(a, b)| a * b).collect(),
            ).unwrap();
            let hcv = hamiltonian_cv(&p, &c, &n, &f, sigma).unwrap().finite().unwrap();
            let hmax = hamiltonian_max(&p, &n, &f, sigma).unwrap();
            prop_assert!(hcv <= hmax + 1e-10 * hmax.abs());
        }
    }

    #[test]
    fn feedback_and_open_loop() {
        let s = b1();
        let pc = PolicyConstants::new(&s.params, &s.fields, &s.es).unwrap();
        let one = SpatialField::constant(*s.es.grid(), 1.0).unwrap();
        let g0 = feedback_consumption(&one, &pc, &s.es).unwrap();
        assert_relative_eq!(
            g0.values()[5],
            0.16 * (2.0 * PI).powf(0.5) * (2.0 * PI).powf(-0.5) * 1.0,
            epsilon = 1e-3
        );
        assert_relative_eq!(
            g0.values()[5],
            (2.0 * PI).sqrt() * pc.theta.values()[5],
            max_relative = 1e-14
        );

        let x0 = (2.0 * PI).sqrt();
        let ol0 = open_loop_control(0.0, 0.0, x0, &pc);
        for (a, b) in ol0.values().iter().zip(g0.values()) {
            assert_relative_eq!(*a, *b, max_relative = 1e-15);
        }
        let ol10 = open_loop_control(10.0, 0.0, x0, &pc);
        assert_relative_eq!(
            ol10.values()[0],
            g0.values()[0] * (-1.3f64).exp(),
            max_relative = 1e-10
        );

        let zero_proj = SpatialField::from_fn(*s.es.grid(), f64::cos).unwrap();
        let gz = feedback_consumption(&zero_proj, &pc, &s.es).unwrap();
        assert!(gz.values().iter().all(|v| v.abs() < 1e-12));
        assert!(feedback_consumption(&one.scale(-1.0), &pc, &s.es).is_err());

        let g3 = feedback_consumption(&one.scale(3.0), &pc, &s.es).unwrap();
        assert_relative_eq!(g3.values()[0], 3.0 * g0.values()[0], max_relative = 1e-14);
    }

    #[test]
    fn deterministic_rate_reduction() {
        let p = ModelParams::new(0.1, 0.5, 0.0, AlphaRest::Uniform).unwrap();
        assert_relative_eq!(p.growth_rate(0.05), (0.05 - 0.1) / 0.5, epsilon = 1e-15);
    }
}
