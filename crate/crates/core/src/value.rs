use std::fmt;

/// A real number or `−∞`.
///
/// Utility and value functions reach `−∞` on the boundary when σ > 1; that
/// case must stay distinguishable from a numerical NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtendedReal {
    Finite(f64),
    NegInfinity,
}

impl ExtendedReal {
    pub fn finite(self) -> Option<f64> {
        match self {
            ExtendedReal::Finite(v) => Some(v),
            ExtendedReal::NegInfinity => None,
        }
    }

    pub fn is_neg_infinity(self) -> bool {
        matches!(self, ExtendedReal::NegInfinity)
    }

    /// `−∞` maps to `f64::NEG_INFINITY`.
    pub fn to_f64(self) -> f64 {
        self.finite().unwrap_or(f64::NEG_INFINITY)
    }

    pub fn scale(self, a: f64) -> ExtendedReal {
        debug_assert!(a >= 0.0);
        match self {
            ExtendedReal::Finite(v) => ExtendedReal::Finite(a * v),
            ExtendedReal::NegInfinity if a == 0.0 => ExtendedReal::Finite(0.0),
            ExtendedReal::NegInfinity => ExtendedReal::NegInfinity,
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, other: ExtendedReal) -> ExtendedReal {
        match (self, other) {
            (ExtendedReal::Finite(a), ExtendedReal::Finite(b)) => ExtendedReal::Finite(a + b),
            _ => ExtendedReal::NegInfinity,
        }
    }
}

impl From<f64> for ExtendedReal {
    fn from(v: f64) -> Self {
        ExtendedReal::Finite(v)
    }
}

impl fmt::Display for ExtendedReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtendedReal::Finite(v) => write!(f, "{v}"),
            ExtendedReal::NegInfinity => f.write_str("-inf"),
        }
    }
}
