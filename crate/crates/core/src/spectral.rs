//! Eigensystem of `k ↦ k'' + A·k` on the circle.
//!
//! The operator is discretized with the periodic second-difference stencil,
//! giving a real symmetric matrix. Its top eigenpairs are returned in
//! descending order, L²-normalized so that `quadrature(e_n²) = 1`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::fields::{SpatialField, SpatialGrid};

/// Relative width used to group numerically repeated eigenvalues.
const CLUSTER_TOLERANCE: f64 = 1e-8;
/// Minimum separation between λ₀ and λ₁.
const PRINCIPAL_GAP: f64 = 1e-8;

/// Second-difference periodic Laplacian plus `diag(A)`.
pub fn build_operator_matrix(potential: &SpatialField) -> DMatrix<f64> {
    let grid = potential.grid();
    let n = grid.n_points();
    let inv_h2 = 1.0 / (grid.spacing() * grid.spacing());
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let prev = grid.wrap(i as isize - 1);
        let next = grid.wrap(i as isize + 1);
        m[(i, i)] = -2.0 * inv_h2 + potential.values()[i];
        m[(i, prev)] += inv_h2;
        m[(i, next)] += inv_h2;
    }
    m
}

#[derive(Debug, Clone)]
pub struct EigenSystem {
    grid: SpatialGrid,
    lambdas: Vec<f64>,
    modes: Vec<SpatialField>,
}

impl EigenSystem {
    /// Assemble the operator for `potential` and keep the top `n_modes` pairs.
    pub fn from_potential(potential: &SpatialField, n_modes: usize) -> Result<Self> {
        eigendecompose(
            &build_operator_matrix(potential),
            *potential.grid(),
            n_modes,
        )
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn n_modes(&self) -> usize {
        self.lambdas.len()
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn lambda(&self, n: usize) -> f64 {
        self.lambdas[n]
    }

    pub fn modes(&self) -> &[SpatialField] {
        &self.modes
    }

    pub fn mode(&self, n: usize) -> &SpatialField {
        &self.modes[n]
    }

    /// The positive principal eigenfunction `e₀`.
    pub fn principal(&self) -> &SpatialField {
        &self.modes[0]
    }

    /// First `m` eigenpairs.
    pub fn truncated(&self, m: usize) -> Result<EigenSystem> {
        if m == 0 || m > self.n_modes() {
            return Err(Error::Eigen(format!(
                "cannot truncate {} modes to {m}",
                self.n_modes()
            )));
        }
        Ok(EigenSystem {
            grid: self.grid,
            lambdas: self.lambdas[..m].to_vec(),
            modes: self.modes[..m].to_vec(),
        })
    }

    /// Coefficients `⟨K, e_n⟩` for every retained mode.
    pub fn project(&self, field: &SpatialField) -> Result<Vec<f64>> {
        self.modes.iter().map(|e| field.inner_product(e)).collect()
    }

    pub fn reconstruct(&self, coeffs: &[f64]) -> Result<SpatialField> {
        if coeffs.len() != self.n_modes() {
            return Err(Error::LengthMismatch {
                expected: self.n_modes(),
                got: coeffs.len(),
            });
        }
        let mut values = vec![0.0; self.grid.n_points()];
        for (c, e) in coeffs.iter().zip(&self.modes) {
            for (v, ev) in values.iter_mut().zip(e.values()) {
                *v += c * ev;
            }
        }
        SpatialField::from_values(self.grid, values)
    }
}

/// Top-`n_modes` eigenpairs of a symmetric operator matrix on `grid`.
pub fn eigendecompose(
    matrix: &DMatrix<f64>,
    grid: SpatialGrid,
    n_modes: usize,
) -> Result<EigenSystem> {
    let n = grid.n_points();
    if matrix.nrows() != n || matrix.ncols() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: matrix.nrows(),
        });
    }
    if n_modes == 0 || n_modes > n {
        return Err(Error::Eigen(format!(
            "mode count must be in 1..={n}, got {n_modes}"
        )));
    }
    let scale = matrix.amax().max(1.0);
    let asym = (matrix - matrix.transpose()).amax();
    if asym > 1e-12 * scale {
        return Err(Error::Eigen(format!(
            "matrix not symmetric (max |M−Mᵀ| = {asym:e})"
        )));
    }

    let eig = SymmetricEigen::new(matrix.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    // Take one extra pair when available so a doublet straddling the cut is
    // canonicalized consistently with the untruncated system.
    let keep = (n_modes + 1).min(n);
    let lambdas: Vec<f64> = order[..keep].iter().map(|&i| eig.eigenvalues[i]).collect();
    let inv_sqrt_h = grid.spacing().powf(-0.5);
    let mut vectors: Vec<Vec<f64>> = order[..keep]
        .iter()
        .map(|&i| {
            eig.eigenvectors
                .column(i)
                .iter()
                .map(|v| v * inv_sqrt_h)
                .collect()
        })
        .collect();

    let mut start = 0;
    while start < keep {
        let mut end = start + 1;
        while end < keep
            && (lambdas[start] - lambdas[end]).abs()
                <= CLUSTER_TOLERANCE * lambdas[start].abs().max(1.0)
        {
            end += 1;
        }
        if end - start == 2 {
            canonicalize_pair(&mut vectors, start);
        }
        start = end;
    }

    let mut modes = Vec::with_capacity(n_modes);
    for v in vectors.into_iter().take(n_modes) {
        let mut field = SpatialField::from_values(grid, v)?;
        if sign_of(&field) < 0.0 {
            field = field.scale(-1.0);
        }
        modes.push(field);
    }
    if keep > 1 && lambdas[0] - lambdas[1] < PRINCIPAL_GAP {
        return Err(Error::Eigen(format!(
            "principal eigenvalue not simple (λ₀ − λ₁ = {:e})",
            lambdas[0] - lambdas[1]
        )));
    }
    if modes[0].min() <= 0.0 {
        return Err(Error::Eigen(format!(
            "principal eigenfunction changes sign (min = {:e}); refine the grid or smooth A",
            modes[0].min()
        )));
    }

    Ok(EigenSystem {
        grid,
        lambdas: lambdas[..n_modes].to_vec(),
        modes,
    })
}

/// Rotate a two-dimensional eigenspace so that the first vector peaks at the
/// first grid point where the pair is nonzero and the second vanishes there.
fn canonicalize_pair(vectors: &mut [Vec<f64>], first: usize) {
    let (head, tail) = vectors.split_at_mut(first + 1);
    let u = &mut head[first];
    let v = &mut tail[0];
    let peak = u
        .iter()
        .zip(v.iter())
        .map(|(a, b)| a.hypot(*b))
        .fold(0.0, f64::max);
    let Some(i) = u
        .iter()
        .zip(v.iter())
        .position(|(a, b)| a.hypot(*b) > 1e-8 * peak)
    else {
        return;
    };
    let r = u[i].hypot(v[i]);
    let (a, b) = (u[i] / r, v[i] / r);
    for (x, y) in u.iter_mut().zip(v.iter_mut()) {
        let (p, q) = (*x, *y);
        *x = a * p + b * q;
        *y = -b * p + a * q;
    }
}

/// Sign that makes `quadrature(e) > 0`, or the first significant value
/// positive when the integral vanishes.
fn sign_of(field: &SpatialField) -> f64 {
    let q = field.quadrature();
    if q.abs() > 1e-10 {
        return q.signum();
    }
    let peak = field.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    field
        .values()
        .iter()
        .find(|v| v.abs() > 1e-8 * peak)
        .map_or(1.0, |v| v.signum())
}
