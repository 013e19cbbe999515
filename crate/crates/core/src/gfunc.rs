//! Volatility-uncertainty sets and the sublinear G-function.
//!
//! The G-function of an m-dimensional G-Brownian motion is
//!
//! ```text
//! G(A) = 1/2 * sup_{γ ∈ Γ} tr(γ A)
//! ```
//!
//! where Γ is a compact convex set of positive semidefinite m×m matrices.
//! A linear functional over a compact convex set attains its supremum at an
//! extreme point, so Γ is represented either by product intervals on the
//! diagonal (zero cross-variation) or by an explicit list of vertices.
//! All bounds are variances σ², never standard deviations.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Result};

/// Relative tolerance used when checking matrix symmetry.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Eigenvalues above `-PSD_TOL * scale` count as nonnegative.
const PSD_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyKind {
    ScalarInterval,
    DiagonalIntervals,
    VertexSet,
}

/// The set Γ of admissible quadratic-variation rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "UncertaintyConfig", into = "UncertaintyConfig")]
pub struct UncertaintySet {
    kind: UncertaintyKind,
    sigma_sq_lo: Vec<f64>,
    sigma_sq_hi: Vec<f64>,
    vertices: Vec<DMatrix<f64>>,
}

impl UncertaintySet {
    /// One-dimensional noise with σ² ∈ [lo, hi].
    pub fn scalar(sigma_sq_lo: f64, sigma_sq_hi: f64) -> Result<Self> {
        check_interval(0, sigma_sq_lo, sigma_sq_hi)?;
        Ok(Self {
            kind: UncertaintyKind::ScalarInterval,
            sigma_sq_lo: vec![sigma_sq_lo],
            sigma_sq_hi: vec![sigma_sq_hi],
            vertices: Vec::new(),
        })
    }

    /// m independent components, component i with σᵢ² ∈ [lo[i], hi[i]] and
    /// zero cross-variation.
    pub fn diagonal(sigma_sq_lo: Vec<f64>, sigma_sq_hi: Vec<f64>) -> Result<Self> {
        if sigma_sq_lo.is_empty() {
            return Err(config("uncertainty set needs at least one component"));
        }
        if sigma_sq_lo.len() != sigma_sq_hi.len() {
            return Err(config(format!(
                "sigma_sq_lo has {} components but sigma_sq_hi has {}",
                sigma_sq_lo.len(),
                sigma_sq_hi.len()
            )));
        }
        for (i, (&lo, &hi)) in sigma_sq_lo.iter().zip(&sigma_sq_hi).enumerate() {
            check_interval(i, lo, hi)?;
        }
        Ok(Self {
            kind: UncertaintyKind::DiagonalIntervals,
            sigma_sq_lo,
            sigma_sq_hi,
            vertices: Vec::new(),
        })
    }

    /// Same interval for each of `m` components.
    pub fn iid(m: usize, sigma_sq_lo: f64, sigma_sq_hi: f64) -> Result<Self> {
        Self::diagonal(vec![sigma_sq_lo; m], vec![sigma_sq_hi; m])
    }

    /// Γ given as the convex hull of symmetric PSD vertex matrices.
    pub fn vertex_set(vertices: Vec<DMatrix<f64>>) -> Result<Self> {
        let Some(first) = vertices.first() else {
            return Err(config("vertex set must contain at least one matrix"));
        };
        let m = first.nrows();
        if m == 0 {
            return Err(config("vertex matrices must be at least 1x1"));
        }
        for (idx, v) in vertices.iter().enumerate() {
            if v.nrows() != m || v.ncols() != m {
                return Err(config(format!(
                    "vertex {idx} is {}x{}, expected {m}x{m}",
                    v.nrows(),
                    v.ncols()
                )));
            }
            if v.iter().any(|e| !e.is_finite()) {
                return Err(config(format!("vertex {idx} has non-finite entries")));
            }
            if !is_symmetric(v) {
                return Err(config(format!("vertex {idx} is not symmetric")));
            }
            let scale = v.amax().max(1.0);
            let min_eig = v.clone().symmetric_eigenvalues().min();
            if min_eig < -PSD_TOL * scale {
                return Err(config(format!(
                    "vertex {idx} is not positive semidefinite (min eigenvalue {min_eig})"
                )));
            }
        }
        Ok(Self {
            kind: UncertaintyKind::VertexSet,
            sigma_sq_lo: Vec::new(),
            sigma_sq_hi: Vec::new(),
            vertices,
        })
    }

    pub fn kind(&self) -> UncertaintyKind {
        self.kind
    }

    /// Noise dimension.
    pub fn m(&self) -> usize {
        match self.kind {
            UncertaintyKind::VertexSet => self.vertices[0].nrows(),
            _ => self.sigma_sq_lo.len(),
        }
    }

    /// Per-component lower variance bounds (empty for vertex sets).
    pub fn sigma_sq_lo(&self) -> &[f64] {
        &self.sigma_sq_lo
    }

    pub fn sigma_sq_hi(&self) -> &[f64] {
        &self.sigma_sq_hi
    }

    pub fn vertices(&self) -> &[DMatrix<f64>] {
        &self.vertices
    }

    /// True when Γ is a single point.
    pub fn is_degenerate(&self) -> bool {
        match self.kind {
            UncertaintyKind::VertexSet => self.vertices.iter().all(|v| *v == self.vertices[0]),
            _ => self
                .sigma_sq_lo
                .iter()
                .zip(&self.sigma_sq_hi)
                .all(|(lo, hi)| lo == hi),
        }
    }

    /// Per-component variance bounds as seen by the zero-cross-variation
    /// simulation scheme. For a vertex set these are the ranges of the vertex
    /// diagonals.
    pub fn component_bounds(&self) -> Vec<(f64, f64)> {
        match self.kind {
            UncertaintyKind::VertexSet => (0..self.m())
                .map(|i| {
                    self.vertices
                        .iter()
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                            (lo.min(v[(i, i)]), hi.max(v[(i, i)]))
                        })
                })
                .collect(),
            _ => self
                .sigma_sq_lo
                .iter()
                .copied()
                .zip(self.sigma_sq_hi.iter().copied())
                .collect(),
        }
    }
}

fn check_interval(i: usize, lo: f64, hi: f64) -> Result<()> {
    if !lo.is_finite() || !hi.is_finite() {
        return Err(config(format!(
            "component {i}: variance bounds must be finite"
        )));
    }
    if lo < 0.0 {
        return Err(config(format!(
            "component {i}: sigma_sq_lo = {lo} is negative"
        )));
    }
    if lo > hi {
        return Err(config(format!(
            "component {i}: sigma_sq_lo = {lo} exceeds sigma_sq_hi = {hi}"
        )));
    }
    Ok(())
}

pub(crate) fn is_symmetric(a: &DMatrix<f64>) -> bool {
    if a.nrows() != a.ncols() {
        return false;
    }
    let scale = a.amax().max(1.0);
    let n = a.nrows();
    (0..n).all(|i| (0..i).all(|j| (a[(i, j)] - a[(j, i)]).abs() <= SYMMETRY_TOL * scale))
}

#[inline]
fn g_component(r: f64, sigma_sq_lo: f64, sigma_sq_hi: f64) -> f64 {
    0.5 * (r.max(0.0) * sigma_sq_hi - (-r).max(0.0) * sigma_sq_lo)
}

/// `G(r) = ½(r⁺σ̄² − r⁻σ̲²)` for a scalar interval set.
pub fn g_scalar(r: f64, u: &UncertaintySet) -> Result<f64> {
    if u.kind != UncertaintyKind::ScalarInterval {
        return Err(config(format!(
            "g_scalar requires a scalar interval set, got {:?}",
            u.kind
        )));
    }
    Ok(g_component(r, u.sigma_sq_lo[0], u.sigma_sq_hi[0]))
}

/// `G(A) = ½ sup_{γ∈Γ} tr(γA)` for a symmetric m×m matrix.
///
/// Interval kinds carry zero cross-variation, so only the diagonal of `a`
/// contributes and the supremum splits into a sum of scalar G-functions.
pub fn g_matrix(a: &DMatrix<f64>, u: &UncertaintySet) -> Result<f64> {
    let m = u.m();
    if a.nrows() != m || a.ncols() != m {
        return Err(domain(format!(
            "expected a {m}x{m} matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if !is_symmetric(a) {
        return Err(domain("G-function argument is not symmetric"));
    }
    Ok(g_matrix_unchecked(a, u))
}

pub(crate) fn g_matrix_unchecked(a: &DMatrix<f64>, u: &UncertaintySet) -> f64 {
    match u.kind {
        UncertaintyKind::ScalarInterval | UncertaintyKind::DiagonalIntervals => (0..u.m())
            .map(|i| g_component(a[(i, i)], u.sigma_sq_lo[i], u.sigma_sq_hi[i]))
            .sum(),
        UncertaintyKind::VertexSet => {
            let best = u
                .vertices
                .iter()
                .map(|v| v.component_mul(a).sum())
                .fold(f64::NEG_INFINITY, f64::max);
            0.5 * best
        }
    }
}

/// `max_{γ∈Γ} (|γ|_F ∨ |γ|_2)`, the uniform bound on the quadratic-variation
/// rate. Both norms are convex so the maximum sits at an extreme point; for
/// interval sets every norm is monotone in the nonnegative diagonal entries,
/// so the all-upper-bound vertex wins and its Frobenius norm dominates.
pub fn gamma_bar(u: &UncertaintySet) -> f64 {
    match u.kind {
        UncertaintyKind::ScalarInterval => u.sigma_sq_hi[0],
        UncertaintyKind::DiagonalIntervals => {
            u.sigma_sq_hi.iter().map(|s| s * s).sum::<f64>().sqrt()
        }
        UncertaintyKind::VertexSet => u
            .vertices
            .iter()
            .map(|v| {
                let spectral = v.clone().symmetric_eigenvalues().amax();
                v.norm().max(spectral)
            })
            .fold(0.0, f64::max),
    }
}

/// G applied to the m×m matrix whose entries all equal `c`.
pub fn c_constant_matrix(c: f64, u: &UncertaintySet) -> f64 {
    let m = u.m();
    g_matrix_unchecked(&DMatrix::from_element(m, m, c), u)
}

/// On-disk form of an [`UncertaintySet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintyConfig {
    pub kind: ConfigKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sigma_sq_lo: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sigma_sq_hi: Vec<f64>,
    /// Each vertex as a list of rows.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vertices: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigKind {
    Scalar,
    Diagonal,
    Vertex,
}

impl TryFrom<UncertaintyConfig> for UncertaintySet {
    type Error = crate::Error;

    fn try_from(c: UncertaintyConfig) -> Result<Self> {
        match c.kind {
            ConfigKind::Scalar => {
                if !c.vertices.is_empty() {
                    return Err(config("scalar uncertainty does not take `vertices`"));
                }
                match (c.sigma_sq_lo.as_slice(), c.sigma_sq_hi.as_slice()) {
                    ([lo], [hi]) => Self::scalar(*lo, *hi),
                    _ => Err(config(
                        "scalar uncertainty needs exactly one sigma_sq_lo and one sigma_sq_hi",
                    )),
                }
            }
            ConfigKind::Diagonal => {
                if !c.vertices.is_empty() {
                    return Err(config("diagonal uncertainty does not take `vertices`"));
                }
                Self::diagonal(c.sigma_sq_lo, c.sigma_sq_hi)
            }
            ConfigKind::Vertex => {
                if !c.sigma_sq_lo.is_empty() || !c.sigma_sq_hi.is_empty() {
                    return Err(config("vertex uncertainty does not take sigma_sq bounds"));
                }
                let mut vertices = Vec::with_capacity(c.vertices.len());
                for (idx, rows) in c.vertices.iter().enumerate() {
                    let n = rows.len();
                    if rows.iter().any(|r| r.len() != n) {
                        return Err(config(format!("vertex {idx} is not square")));
                    }
                    vertices.push(DMatrix::from_fn(n, n, |i, j| rows[i][j]));
                }
                Self::vertex_set(vertices)
            }
        }
    }
}

impl From<UncertaintySet> for UncertaintyConfig {
    fn from(u: UncertaintySet) -> Self {
        let kind = match u.kind {
            UncertaintyKind::ScalarInterval => ConfigKind::Scalar,
            UncertaintyKind::DiagonalIntervals => ConfigKind::Diagonal,
            UncertaintyKind::VertexSet => ConfigKind::Vertex,
        };
        let vertices = u
            .vertices
            .iter()
            .map(|v| {
                (0..v.nrows())
                    .map(|i| v.row(i).iter().copied().collect())
                    .collect()
            })
            .collect();
        Self {
            kind,
            sigma_sq_lo: u.sigma_sq_lo,
            sigma_sq_hi: u.sigma_sq_hi,
            vertices,
        }
    }
}
