//! Run configuration: `[section]` headers and `key = value` lines.
//!
//! `#` starts a comment. Every key is optional; defaults are listed in
//! [`RunConfig::default`]. Overrides of the form `section.key=value` are
//! applied after the file is read.

use std::collections::BTreeMap;

use crate::asymptotics::{
    detrended_convergence_check, extinction_curve, extinction_report, sup_exp_tail_check,
    ExtinctionRow, KsRow, TailRow,
};
use crate::economy::{AlphaRest, ModelFields, ModelParams, Problem};
use crate::error::{Error, Result};
use crate::fields::{FieldRecipe, SpatialGrid};
use crate::report::VerificationReport;
use crate::simulate::{Scheme, SimConfig};
use crate::verify::VerifySettings;

pub const BENCHMARK_B1: &str = include_str!("../benchmarks/b1.conf");
pub const BENCHMARK_B2: &str = include_str!("../benchmarks/b2.conf");

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSpecs {
    pub tech: FieldRecipe,
    pub population: FieldRecipe,
    pub weight: FieldRecipe,
    pub k0: FieldRecipe,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticsSettings {
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub modes: Vec<usize>,
    /// Bound on the expected limit-law truncation tail.
    pub tolerance: f64,
    /// `ε` as a fraction of `‖K₀‖`.
    pub epsilon_fraction: f64,
    pub extinction_horizon: f64,
    pub extinction_dt: f64,
    pub extinction_paths: usize,
    /// Spacing of the extinction curve stamps.
    pub extinction_every: f64,
    pub extinction_level: f64,
    pub tail_mu: f64,
    pub tail_s1: f64,
    pub tail_s2: f64,
    pub tail_x: Vec<f64>,
    pub tail_paths: usize,
    pub tail_horizon: f64,
    pub tail_dt: f64,
}

impl Default for AsymptoticsSettings {
    fn default() -> Self {
        Self {
            horizon: 80.0,
            dt: 0.01,
            n_paths: 2000,
            modes: vec![0, 1],
            tolerance: 1e-4,
            epsilon_fraction: 0.01,
            extinction_horizon: 100.0,
            extinction_dt: 0.05,
            extinction_paths: 10_000,
            extinction_every: 5.0,
            extinction_level: 0.05,
            tail_mu: 0.5,
            tail_s1: 0.2,
            tail_s2: 0.2,
            tail_x: vec![1.5, 2.0, 3.0],
            tail_paths: 100_000,
            tail_horizon: 200.0,
            tail_dt: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub n_points: usize,
    pub fields: FieldSpecs,
    pub model: ModelParams,
    pub simulate: SimConfig,
    pub verify: VerifySettings,
    pub asymptotics: AsymptoticsSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_points: 128,
            fields: FieldSpecs {
                tech: FieldRecipe::Constant(0.05),
                population: FieldRecipe::Constant(1.0),
                weight: FieldRecipe::Constant(1.0),
                k0: FieldRecipe::Constant(1.0),
            },
            model: ModelParams {
                rho: 0.1,
                sigma: 0.5,
                alpha0: 0.2,
                alpha_rest: AlphaRest::Uniform,
            },
            simulate: SimConfig {
                horizon: 80.0,
                dt: 0.01,
                n_modes: 16,
                n_paths: 10_000,
                seed: 20_240_601,
                scheme: Scheme::ExactMode,
                record_every: 100,
            },
            verify: VerifySettings::default(),
            asymptotics: AsymptoticsSettings::default(),
        }
    }
}

struct Entry {
    value: String,
    line: usize,
}

type Raw = BTreeMap<(String, String), Entry>;

fn config_error(line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        message: message.into(),
    }
}

fn read_raw(text: &str) -> Result<Raw> {
    let mut raw = Raw::new();
    let mut section: Option<String> = None;
    for (i, full) in text.lines().enumerate() {
        let line = i + 1;
        let content = full.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| config_error(line, format!("malformed section header `{content}`")))?
                .trim();
            if !SECTIONS.iter().any(|(s, _)| *s == name) {
                return Err(config_error(line, format!("unknown section `[{name}]`")));
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| {
            config_error(line, format!("expected `key = value`, got `{content}`"))
        })?;
        let sec = section
            .clone()
            .ok_or_else(|| config_error(line, "key outside of any section"))?;
        insert(&mut raw, &sec, key.trim(), value.trim(), line)?;
    }
    Ok(raw)
}

const SECTIONS: &[(&str, &[&str])] = &[
    ("grid", &["n_points"]),
    ("fields", &["A", "N", "f", "K0"]),
    ("model", &["rho", "sigma", "alpha0", "alpha_rest"]),
    (
        "simulate",
        &[
            "T",
            "dt",
            "n_modes",
            "n_paths",
            "seed",
            "scheme",
            "record_every",
        ],
    ),
    (
        "verify",
        &[
            "T",
            "dt",
            "n_paths",
            "k_se",
            "suboptimal_scale",
            "hjb_states",
            "lipschitz_trials",
            "lipschitz_time",
            "moment_T",
            "moment_paths",
            "moment_perturbations",
            "dpp_time",
            "homogeneity_paths",
        ],
    ),
    (
        "asymptotics",
        &[
            "T",
            "dt",
            "n_paths",
            "modes",
            "tolerance",
            "epsilon_fraction",
            "extinction_T",
            "extinction_dt",
            "extinction_paths",
            "extinction_every",
            "extinction_level",
            "tail_mu",
            "tail_s1",
            "tail_s2",
            "tail_x",
            "tail_paths",
            "tail_T",
            "tail_dt",
        ],
    ),
];

fn insert(raw: &mut Raw, section: &str, key: &str, value: &str, line: usize) -> Result<()> {
    let known = SECTIONS
        .iter()
        .find(|(s, _)| *s == section)
        .is_some_and(|(_, keys)| keys.contains(&key));
    if !known {
        return Err(config_error(
            line,
            format!("unknown key `{key}` in [{section}]"),
        ));
    }
    let k = (section.to_string(), key.to_string());
    if line > 0 {
        if let Some(prev) = raw.get(&k) {
            return Err(config_error(
                line,
                format!("duplicate key `{key}` (first set on line {})", prev.line),
            ));
        }
    }
    raw.insert(
        k,
        Entry {
            value: value.to_string(),
            line,
        },
    );
    Ok(())
}

/// Typed access to the raw entries with line-anchored errors.
struct Reader<'a> {
    raw: &'a Raw,
}

impl Reader<'_> {
    fn get<T>(&self, section: &str, key: &str, default: T) -> Result<T>
    where
        T: std::str::FromStr,
        T::Err: std::fmt::Display,
    {
        match self.raw.get(&(section.to_string(), key.to_string())) {
            None => Ok(default),
            Some(e) => e.value.parse::<T>().map_err(|err| {
                config_error(e.line, format!("[{section}] {key} = `{}`: {err}", e.value))
            }),
        }
    }

    fn list<T>(&self, section: &str, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T: std::str::FromStr,
        T::Err: std::fmt::Display,
    {
        match self.raw.get(&(section.to_string(), key.to_string())) {
            None => Ok(default),
            Some(e) => e
                .value
                .split(',')
                .map(|p| {
                    p.trim().parse::<T>().map_err(|err| {
                        config_error(e.line, format!("[{section}] {key}: `{}`: {err}", p.trim()))
                    })
                })
                .collect(),
        }
    }

    fn line(&self, section: &str, key: &str) -> usize {
        self.raw
            .get(&(section.to_string(), key.to_string()))
            .map_or(0, |e| e.line)
    }

    /// Re-anchors a validation error on the line of the first listed key that was set.
    fn anchor(&self, section: &str, keys: &[&str], err: Error) -> Error {
        let line = keys
            .iter()
            .map(|k| self.line(section, k))
            .find(|l| *l > 0)
            .unwrap_or(0);
        match err {
            Error::Config { .. } => err,
            other => config_error(line, other.to_string()),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_overrides(text, &[])
    }

    /// Parses `text`, then applies `section.key=value` overrides.
    pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut raw = read_raw(text)?;
        for o in overrides {
            let (path, value) = o.split_once('=').ok_or_else(|| {
                config_error(0, format!("override `{o}` is not section.key=value"))
            })?;
            let (section, key) = path.trim().split_once('.').ok_or_else(|| {
                config_error(0, format!("override `{o}` is not section.key=value"))
            })?;
            if !SECTIONS.iter().any(|(s, _)| *s == section) {
                return Err(config_error(
                    0,
                    format!("unknown section `{section}` in override `{o}`"),
                ));
            }
            insert(&mut raw, section, key, value.trim(), 0)?;
        }
        Self::from_raw(&raw)
    }

    pub fn benchmark_b1() -> Self {
        Self::parse(BENCHMARK_B1).expect("bundled benchmark parses")
    }

    pub fn benchmark_b2() -> Self {
        Self::parse(BENCHMARK_B2).expect("bundled benchmark parses")
    }

    fn from_raw(raw: &Raw) -> Result<Self> {
        let r = Reader { raw };
        let d = RunConfig::default();

        let n_points = r.get("grid", "n_points", d.n_points)?;
        SpatialGrid::new(n_points).map_err(|e| r.anchor("grid", &["n_points"], e))?;

        let fields = FieldSpecs {
            tech: r.get("fields", "A", d.fields.tech)?,
            population: r.get("fields", "N", d.fields.population)?,
            weight: r.get("fields", "f", d.fields.weight)?,
            k0: r.get("fields", "K0", d.fields.k0)?,
        };

        let model = ModelParams::new(
            r.get("model", "rho", d.model.rho)?,
            r.get("model", "sigma", d.model.sigma)?,
            r.get("model", "alpha0", d.model.alpha0)?,
            r.get("model", "alpha_rest", d.model.alpha_rest)?,
        )
        .map_err(|e| r.anchor("model", &["rho", "sigma", "alpha0", "alpha_rest"], e))?;

        let s = &d.simulate;
        let simulate = SimConfig {
            horizon: r.get("simulate", "T", s.horizon)?,
            dt: r.get("simulate", "dt", s.dt)?,
            n_modes: r.get("simulate", "n_modes", s.n_modes)?,
            n_paths: r.get("simulate", "n_paths", s.n_paths)?,
            seed: r.get("simulate", "seed", s.seed)?,
            scheme: r.get("simulate", "scheme", s.scheme)?,
            record_every: r.get("simulate", "record_every", s.record_every)?,
        };
        simulate.n_steps().map_err(|e| {
            r.anchor(
                "simulate",
                &["T", "dt", "n_modes", "n_paths", "record_every"],
                e,
            )
        })?;
        if simulate.n_modes > n_points {
            return Err(config_error(
                r.line("simulate", "n_modes"),
                format!(
                    "n_modes = {} exceeds n_points = {n_points}",
                    simulate.n_modes
                ),
            ));
        }

        let v = &d.verify;
        let verify = VerifySettings {
            horizon: r.get("verify", "T", v.horizon)?,
            dt: r.get("verify", "dt", v.dt)?,
            n_paths: r.get("verify", "n_paths", v.n_paths)?,
            seed: simulate.seed,
            k_se: r.get("verify", "k_se", v.k_se)?,
            suboptimal_scale: r.get("verify", "suboptimal_scale", v.suboptimal_scale)?,
            hjb_states: r.get("verify", "hjb_states", v.hjb_states)?,
            lipschitz_trials: r.get("verify", "lipschitz_trials", v.lipschitz_trials)?,
            lipschitz_time: r.get("verify", "lipschitz_time", v.lipschitz_time)?,
            moment_horizon: r.get("verify", "moment_T", v.moment_horizon)?,
            moment_paths: r.get("verify", "moment_paths", v.moment_paths)?,
            moment_perturbations: r.get(
                "verify",
                "moment_perturbations",
                v.moment_perturbations,
            )?,
            dpp_time: r.get("verify", "dpp_time", v.dpp_time)?,
            homogeneity_paths: r.get("verify", "homogeneity_paths", v.homogeneity_paths)?,
        };
        for (key, t) in [
            ("T", verify.horizon),
            ("moment_T", verify.moment_horizon),
            ("dpp_time", verify.dpp_time),
        ] {
            SimConfig {
                horizon: t,
                dt: verify.dt,
                ..simulate.clone()
            }
            .n_steps()
            .map_err(|e| r.anchor("verify", &[key, "dt"], e))?;
        }

        let a = &d.asymptotics;
        let asymptotics = AsymptoticsSettings {
            horizon: r.get("asymptotics", "T", a.horizon)?,
            dt: r.get("asymptotics", "dt", a.dt)?,
            n_paths: r.get("asymptotics", "n_paths", a.n_paths)?,
            modes: r.list("asymptotics", "modes", a.modes.clone())?,
            tolerance: r.get("asymptotics", "tolerance", a.tolerance)?,
            epsilon_fraction: r.get("asymptotics", "epsilon_fraction", a.epsilon_fraction)?,
            extinction_horizon: r.get("asymptotics", "extinction_T", a.extinction_horizon)?,
            extinction_dt: r.get("asymptotics", "extinction_dt", a.extinction_dt)?,
            extinction_paths: r.get("asymptotics", "extinction_paths", a.extinction_paths)?,
            extinction_every: r.get("asymptotics", "extinction_every", a.extinction_every)?,
            extinction_level: r.get("asymptotics", "extinction_level", a.extinction_level)?,
            tail_mu: r.get("asymptotics", "tail_mu", a.tail_mu)?,
            tail_s1: r.get("asymptotics", "tail_s1", a.tail_s1)?,
            tail_s2: r.get("asymptotics", "tail_s2", a.tail_s2)?,
            tail_x: r.list("asymptotics", "tail_x", a.tail_x.clone())?,
            tail_paths: r.get("asymptotics", "tail_paths", a.tail_paths)?,
            tail_horizon: r.get("asymptotics", "tail_T", a.tail_horizon)?,
            tail_dt: r.get("asymptotics", "tail_dt", a.tail_dt)?,
        };
        if let Some(&m) = asymptotics.modes.iter().find(|&&m| m >= simulate.n_modes) {
            return Err(config_error(
                r.line("asymptotics", "modes"),
                format!(
                    "mode {m} is not below simulate.n_modes = {}",
                    simulate.n_modes
                ),
            ));
        }
        for (keys, t, dt) in [
            (["T", "dt"], asymptotics.horizon, asymptotics.dt),
            (
                ["extinction_T", "extinction_dt"],
                asymptotics.extinction_horizon,
                asymptotics.extinction_dt,
            ),
        ] {
            SimConfig {
                horizon: t,
                dt,
                ..simulate.clone()
            }
            .n_steps()
            .map_err(|e| r.anchor("asymptotics", &keys, e))?;
        }

        Ok(Self {
            n_points,
            fields,
            model,
            simulate,
            verify,
            asymptotics,
        })
    }

    /// Replaces the master seed everywhere it is used.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.simulate.seed = seed;
        self.verify.seed = seed;
        self
    }

    pub fn grid(&self) -> Result<SpatialGrid> {
        SpatialGrid::new(self.n_points)
    }

    pub fn model_fields(&self) -> Result<ModelFields> {
        let grid = self.grid()?;
        Ok(ModelFields {
            tech: self.fields.tech.realize(grid)?,
            population: self.fields.population.realize(grid)?,
            weight: self.fields.weight.realize(grid)?,
        })
    }

    /// Builds the model; fails on violated standing assumptions.
    pub fn problem(&self) -> Result<Problem> {
        let k0 = self.fields.k0.realize(self.grid()?)?;
        Problem::new(
            self.model.clone(),
            self.model_fields()?,
            k0,
            self.simulate.n_modes,
        )
    }

    pub fn asymptotics_sim(&self) -> SimConfig {
        SimConfig {
            horizon: self.asymptotics.horizon,
            dt: self.asymptotics.dt,
            n_paths: self.asymptotics.n_paths,
            scheme: Scheme::ExactMode,
            ..self.simulate.clone()
        }
    }
}

/// Output of the `detrended` asymptotic run.
pub fn run_detrended(
    cfg: &RunConfig,
    problem: &Problem,
) -> Result<(VerificationReport, Vec<KsRow>)> {
    let a = &cfg.asymptotics;
    detrended_convergence_check(problem, &cfg.asymptotics_sim(), &a.modes, a.tolerance)
}

/// Output of the `extinction` asymptotic run.
pub fn run_extinction(
    cfg: &RunConfig,
    problem: &Problem,
) -> Result<(VerificationReport, Vec<ExtinctionRow>)> {
    let a = &cfg.asymptotics;
    let sim = SimConfig {
        horizon: a.extinction_horizon,
        dt: a.extinction_dt,
        n_paths: a.extinction_paths,
        scheme: Scheme::ExactMode,
        record_every: 1,
        ..cfg.simulate.clone()
    };
    if !(a.extinction_every > 0.0) {
        return Err(config_error(0, "extinction_every must be positive"));
    }
    let n = (a.extinction_horizon / a.extinction_every).floor() as usize;
    let times: Vec<f64> = (0..=n).map(|i| i as f64 * a.extinction_every).collect();
    let epsilon = a.epsilon_fraction * problem.k0.norm();
    let rows = extinction_curve(problem, &sim, epsilon, &times)?;
    Ok((
        extinction_report(problem, &rows, a.extinction_level, cfg.verify.k_se),
        rows,
    ))
}

/// Output of the `tailbound` asymptotic run.
pub fn run_tailbound(cfg: &RunConfig) -> Result<(VerificationReport, Vec<TailRow>)> {
    let a = &cfg.asymptotics;
    sup_exp_tail_check(
        a.tail_mu,
        a.tail_s1,
        a.tail_s2,
        &a.tail_x,
        a.tail_paths,
        a.tail_horizon,
        a.tail_dt,
        cfg.simulate.seed,
    )
}
