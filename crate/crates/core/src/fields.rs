//! Real-valued data on the periodic domain [0, 2π).
//!
//! Fields live on a uniform grid with spacing 2π/n. Integrals use the
//! periodic trapezoid rule, which is exact for trigonometric polynomials of
//! degree below n/2 and spectrally accurate for smooth periodic data.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Threshold used as "> 0" for fields that must be strictly positive.
pub const POSITIVITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialGrid {
    n_points: usize,
    spacing: f64,
}

impl SpatialGrid {
    pub fn new(n_points: usize) -> Result<Self> {
        if n_points < 8 {
            return Err(Error::InvalidGrid(format!(
                "n_points must be at least 8, got {n_points}"
            )));
        }
        if !n_points.is_multiple_of(2) {
            return Err(Error::InvalidGrid(format!(
                "n_points must be even, got {n_points}"
            )));
        }
        Ok(Self {
            n_points,
            spacing: 2.0 * PI / n_points as f64,
        })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn abscissa(&self, i: usize) -> f64 {
        (i % self.n_points) as f64 * self.spacing
    }

    pub fn abscissae(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.abscissa(i)).collect()
    }

    /// Index arithmetic modulo `n_points`.
    pub fn wrap(&self, i: isize) -> usize {
        i.rem_euclid(self.n_points as isize) as usize
    }

    fn ensure_same(&self, other: &SpatialGrid) -> Result<()> {
        if self.n_points != other.n_points {
            return Err(Error::GridMismatch {
                left: self.n_points,
                right: other.n_points,
            });
        }
        Ok(())
    }
}

/// Power / scale / offset recipe applied pointwise: `scale · v^exponent + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointwiseMap {
    pub exponent: f64,
    pub scale: f64,
    pub offset: f64,
}

impl PointwiseMap {
    pub fn power(exponent: f64) -> Self {
        Self {
            exponent,
            scale: 1.0,
            offset: 0.0,
        }
    }

    pub fn affine(scale: f64, offset: f64) -> Self {
        Self {
            exponent: 1.0,
            scale,
            offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialField {
    grid: SpatialGrid,
    values: Vec<f64>,
}

impl SpatialField {
    pub fn from_values(grid: SpatialGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_points() {
            return Err(Error::LengthMismatch {
                expected: grid.n_points(),
                got: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: SpatialGrid, value: f64) -> Result<Self> {
        Self::from_values(grid, vec![value; grid.n_points()])
    }

    pub fn from_fn(grid: SpatialGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_values(grid, grid.abscissae().into_iter().map(f).collect())
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.min() > POSITIVITY_FLOOR
    }

    pub fn is_nonnegative(&self) -> bool {
        self.min() >= 0.0
    }

    /// Periodic trapezoid rule: `spacing · Σ values`.
    pub fn quadrature(&self) -> f64 {
        self.grid.spacing * self.values.iter().sum::<f64>()
    }

    pub fn inner_product(&self, other: &SpatialField) -> Result<f64> {
        self.grid.ensure_same(&other.grid)?;
        let s: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum();
        Ok(self.grid.spacing * s)
    }

    /// L² norm under the discrete inner product.
    pub fn norm(&self) -> f64 {
        self.inner_product(self).unwrap_or(0.0).sqrt()
    }

    pub fn pointwise_map(&self, recipe: PointwiseMap) -> Result<SpatialField> {
        let p = recipe.exponent;
        let integral_power = p.fract() == 0.0;
        let mut out = Vec::with_capacity(self.values.len());
        for (i, &v) in self.values.iter().enumerate() {
            if v < 0.0 && !integral_power {
                return Err(Error::Domain(format!(
                    "negative base {v} at index {i} raised to fractional power {p}"
                )));
            }
            if v == 0.0 && p < 0.0 {
                return Err(Error::Domain(format!(
                    "zero base at index {i} raised to negative power {p}"
                )));
            }
            let r = recipe.scale * v.powf(p) + recipe.offset;
            if !r.is_finite() {
                return Err(Error::NonFinite { index: i });
            }
            out.push(r);
        }
        Ok(SpatialField {
            grid: self.grid,
            values: out,
        })
    }

    pub fn powf(&self, exponent: f64) -> Result<SpatialField> {
        self.pointwise_map(PointwiseMap::power(exponent))
    }

    pub fn scale(&self, a: f64) -> SpatialField {
        self.map_values(|v| a * v)
    }

    pub fn mul(&self, other: &SpatialField) -> Result<SpatialField> {
        self.zip_with(other, |a, b| Ok(a * b))
    }

    pub fn div(&self, other: &SpatialField) -> Result<SpatialField> {
        self.zip_with(other, |a, b| {
            if b == 0.0 {
                Err(Error::Domain("division by zero".into()))
            } else {
                Ok(a / b)
            }
        })
    }

    pub fn add(&self, other: &SpatialField) -> Result<SpatialField> {
        self.zip_with(other, |a, b| Ok(a + b))
    }

    fn map_values(&self, f: impl Fn(f64) -> f64) -> SpatialField {
        SpatialField {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_with(
        &self,
        other: &SpatialField,
        f: impl Fn(f64, f64) -> Result<f64>,
    ) -> Result<SpatialField> {
        self.grid.ensure_same(&other.grid)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect::<Result<Vec<_>>>()?;
        SpatialField::from_values(self.grid, values)
    }
}

/// How a field is given in a config file.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldRecipe {
    Constant(f64),
    /// `a + b·cos(m·x)`
    Cosine {
        a: f64,
        b: f64,
        m: u32,
    },
    /// `a + b·sin(m·x)`
    Sine {
        a: f64,
        b: f64,
        m: u32,
    },
    Samples(Vec<f64>),
}

impl FieldRecipe {
    pub fn realize(&self, grid: SpatialGrid) -> Result<SpatialField> {
        match self {
            FieldRecipe::Constant(c) => SpatialField::constant(grid, *c),
            FieldRecipe::Cosine { a, b, m } => {
                SpatialField::from_fn(grid, |x| a + b * (*m as f64 * x).cos())
            }
            FieldRecipe::Sine { a, b, m } => {
                SpatialField::from_fn(grid, |x| a + b * (*m as f64 * x).sin())
            }
            FieldRecipe::Samples(v) => SpatialField::from_values(grid, v.clone()),
        }
    }
}

impl FromStr for FieldRecipe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |reason: &str| Error::Recipe {
            recipe: s.to_string(),
            reason: reason.to_string(),
        };
        let (kind, rest) = s
            .trim()
            .split_once(':')
            .ok_or_else(|| bad("expected `kind:args`"))?;
        let numbers = |n: Option<usize>| -> Result<Vec<f64>> {
            let parsed = rest
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| bad(&e.to_string()))?;
            if let Some(n) = n {
                if parsed.len() != n {
                    return Err(bad(&format!("expected {n} numbers, got {}", parsed.len())));
                }
            }
            if parsed.iter().any(|v| !v.is_finite()) {
                return Err(bad("non-finite number"));
            }
            Ok(parsed)
        };
        let harmonic = |v: &[f64]| -> Result<u32> {
            if v[2] < 0.0 || v[2].fract() != 0.0 {
                return Err(bad("harmonic index must be a nonnegative integer"));
            }
            Ok(v[2] as u32)
        };
        match kind.trim() {
            "const" => Ok(FieldRecipe::Constant(numbers(Some(1))?[0])),
            "cos" => {
                let v = numbers(Some(3))?;
                Ok(FieldRecipe::Cosine {
                    a: v[0],
                    b: v[1],
                    m: harmonic(&v)?,
                })
            }
            "sin" => {
                let v = numbers(Some(3))?;
                Ok(FieldRecipe::Sine {
                    a: v[0],
                    b: v[1],
                    m: harmonic(&v)?,
                })
            }
            "samples" => Ok(FieldRecipe::Samples(numbers(None)?)),
            other => Err(bad(&format!("unknown field kind `{other}`"))),
        }
    }
}

impl fmt::Display for FieldRecipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldRecipe::Constant(c) => write!(f, "const:{c}"),
            FieldRecipe::Cosine { a, b, m } => write!(f, "cos:{a},{b},{m}"),
            FieldRecipe::Sine { a, b, m } => write!(f, "sin:{a},{b},{m}"),
            FieldRecipe::Samples(v) => {
                let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                write!(f, "samples:{}", parts.join(","))
            }
        }
    }
}
