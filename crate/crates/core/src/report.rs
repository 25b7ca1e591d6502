//! Pass/fail records shared by the assumption, verification and asymptotic checks.

use std::fmt::Write as _;

/// How `measured` is compared with `oracle`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    /// `|measured − oracle| ≤ tolerance`
    Within,
    /// `measured ≤ oracle + tolerance`
    AtMost,
    /// `measured ≥ oracle − tolerance`
    AtLeast,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub oracle: f64,
    pub tolerance: f64,
    pub std_error: Option<f64>,
    pub relation: Relation,
    pub pass: bool,
    /// Advisory checks are reported but do not gate the overall verdict.
    pub required: bool,
    pub note: String,
}

impl Check {
    pub fn new(
        name: impl Into<String>,
        measured: f64,
        oracle: f64,
        tolerance: f64,
        relation: Relation,
    ) -> Self {
        let pass = match relation {
            Relation::Within => (measured - oracle).abs() <= tolerance,
            Relation::AtMost => measured <= oracle + tolerance,
            Relation::AtLeast => measured >= oracle - tolerance,
        };
        Self {
            name: name.into(),
            measured,
            oracle,
            tolerance,
            std_error: None,
            relation,
            pass,
            required: true,
            note: String::new(),
        }
    }

    pub fn within(name: impl Into<String>, measured: f64, oracle: f64, tolerance: f64) -> Self {
        Self::new(name, measured, oracle, tolerance, Relation::Within)
    }

    pub fn at_most(name: impl Into<String>, measured: f64, bound: f64, tolerance: f64) -> Self {
        Self::new(name, measured, bound, tolerance, Relation::AtMost)
    }

    pub fn at_least(name: impl Into<String>, measured: f64, bound: f64, tolerance: f64) -> Self {
        Self::new(name, measured, bound, tolerance, Relation::AtLeast)
    }

    /// Monte Carlo comparison at `k` standard errors.
    pub fn stochastic(
        name: impl Into<String>,
        measured: f64,
        oracle: f64,
        std_error: f64,
        k: f64,
        relation: Relation,
    ) -> Self {
        let mut c = Self::new(name, measured, oracle, k * std_error, relation);
        c.std_error = Some(std_error);
        c
    }

    /// A boolean condition recorded as measured 1/0 against oracle 1.
    pub fn flag(name: impl Into<String>, pass: bool) -> Self {
        Self::within(name, if pass { 1.0 } else { 0.0 }, 1.0, 0.0)
    }

    pub fn advisory(mut self) -> Self {
        self.required = false;
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerificationReport {
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
}

impl VerificationReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, check: Check) {
        self.checks.push(check);
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    pub fn extend(&mut self, other: VerificationReport) {
        self.checks.extend(other.checks);
        self.notes.extend(other.notes);
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().filter(|c| c.required).all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| c.required && !c.pass)
    }

    /// `check,measured,oracle,tol,SE,pass`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("check,measured,oracle,tol,SE,pass\n");
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                c.name,
                format_number(c.measured),
                format_number(c.oracle),
                format_number(c.tolerance),
                c.std_error.map_or_else(|| "0".to_string(), format_number),
                c.pass
            );
        }
        out
    }

    /// Human-readable table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let status = match (c.pass, c.required) {
                (true, _) => "PASS",
                (false, true) => "FAIL",
                (false, false) => "info",
            };
            let _ = write!(
                out,
                "{status:<5} {:<34} measured={:<14} oracle={:<14} tol={}",
                c.name,
                format_short(c.measured),
                format_short(c.oracle),
                format_short(c.tolerance)
            );
            if let Some(se) = c.std_error {
                let _ = write!(out, " se={}", format_short(se));
            }
            if !c.note.is_empty() {
                let _ = write!(out, "  ({})", c.note);
            }
            out.push('\n');
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        out
    }
}

/// CSV cell text: shortest round-trip decimal, or `-inf`.
pub fn format_number(v: f64) -> String {
    if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else if v.is_finite() {
        format!("{v}")
    } else {
        // Non-finite values other than −∞ never reach a report.
        debug_assert!(false, "non-finite report value {v}");
        "nan".to_string()
    }
}

fn format_short(v: f64) -> String {
    if v == f64::NEG_INFINITY {
        "-inf".into()
    } else if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e6) {
        format!("{v:.4e}")
    } else {
        format!("{v:.6}")
    }
}
