//! Linear dimension reduction with checked separation, and bias shifts that
//! keep a first layer nonnegative on a bounded domain.

use crate::dataset::{Dataset, Norm};
use crate::error::{invalid, Error, Result};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Default retry budget of [`jl_project`].
pub const DEFAULT_RETRIES: usize = 64;

/// Linear map with orthonormal rows (hence 1-Lipschitz in ℓ2).
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    matrix: DMatrix<f64>,
    /// `ε_{D′} / ε_D` measured on the dataset the projection was built for.
    pub achieved_separation_ratio: f64,
}

impl Projection {
    pub fn identity(d: usize) -> Projection {
        Projection { matrix: DMatrix::identity(d, d), achieved_separation_ratio: 1.0 }
    }
    /// Projection with the given (orthonormal) rows.
    pub fn from_rows(rows: &[Vec<f64>], achieved_separation_ratio: f64) -> Projection {
        let d = rows.first().map_or(0, |r| r.len());
        Projection { matrix: DMatrix::from_fn(rows.len(), d, |r, c| rows[r][c]), achieved_separation_ratio }
    }
    pub fn m(&self) -> usize {
        self.matrix.nrows()
    }
    pub fn d(&self) -> usize {
        self.matrix.ncols()
    }
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
    pub fn row(&self, i: usize) -> Vec<f64> {
        self.matrix.row(i).iter().copied().collect()
    }
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.m()).map(|i| self.matrix.row(i).iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }
    pub fn apply_all(&self, pts: &[Vec<f64>]) -> Vec<Vec<f64>> {
        pts.iter().map(|p| self.apply(p)).collect()
    }
    /// Largest deviation of `P Pᵀ` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let g = &self.matrix * self.matrix.transpose();
        let mut e: f64 = 0.0;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let want = if i == j { 1.0 } else { 0.0 };
                e = e.max((g[(i, j)] - want).abs());
            }
        }
        e
    }
}

/// ℓ2 separation of labeled points (half the closest differently-labeled distance).
pub fn point_separation(pts: &[Vec<f64>], labels: &[u32]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            if labels[i] != labels[j] {
                best = best.min(Norm::L2.dist(&pts[i], &pts[j]));
            }
        }
    }
    best / 2.0
}

/// Default acceptance ratio `(5/12)·√(m/d)`.
pub fn default_target_ratio(m: usize, d: usize) -> f64 {
    5.0 / 12.0 * (m as f64 / d as f64).sqrt()
}

fn random_frame(m: usize, d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, m, |_, _| StandardNormal.sample(rng));
    g.qr().q().transpose()
}

/// Random `m`-dimensional orthonormal frame whose image keeps at least
/// `target_ratio · ε_D` of the separation; the check is done directly on `D`.
pub fn jl_project(d: &Dataset, m: usize, target_ratio: Option<f64>, max_retries: usize, seed: u64) -> Result<Projection> {
    let dim = d.d();
    if m == 0 || m > dim {
        return invalid(format!("projection dimension must lie in 1..={dim}, got {m}"));
    }
    let target = target_ratio.unwrap_or_else(|| default_target_ratio(m, dim));
    if m == dim {
        return Ok(Projection::identity(dim));
    }
    let eps = point_separation(d.points(), d.labels());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    for _ in 0..max_retries.max(1) {
        let p = random_frame(m, dim, &mut rng);
        let proj = Projection { matrix: p, achieved_separation_ratio: 0.0 };
        let ratio = point_separation(&proj.apply_all(d.points()), d.labels()) / eps;
        if ratio >= target {
            tracing::debug!(m, ratio, target, "projection accepted");
            return Ok(Projection { achieved_separation_ratio: ratio, ..proj });
        }
        best = best.max(ratio);
    }
    tracing::debug!(m, best, target, "projection search exhausted");
    Err(Error::JlExhausted { retries: max_retries, best_ratio: best, target })
}

/// `min{d, max{⌈24α⁻²·ln N⌉, ⌈10·ln d⌉}}` with `α = 1/6`.
pub fn proj_log_dimension(n: usize, d: usize) -> usize {
    let alpha: f64 = 1.0 / 6.0;
    let a = (24.0 / (alpha * alpha) * (n as f64).ln()).ceil() as usize;
    let b = (10.0 * (d as f64).ln()).ceil() as usize;
    d.min(a.max(b)).max(1)
}

/// Smallest `m ≥ m_min` (up to `m_max`) for which [`jl_project`] certifies the
/// default ratio.
pub fn jl_smallest(d: &Dataset, m_min: usize, m_max: usize, max_retries: usize, seed: u64) -> Result<Projection> {
    let hi = m_max.min(d.d());
    let mut last = None;
    for m in m_min.max(1)..=hi {
        match jl_project(d, m, None, max_retries, seed ^ (m as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)) {
            Ok(p) => return Ok(p),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::Invalid(format!("empty dimension range {m_min}..={hi}"))))
}

/// Projection onto an `N`-dimensional subspace containing every data point;
/// all pairwise distances among data points are preserved.
pub fn natural_projection(d: &Dataset) -> Result<Projection> {
    let (n, dim) = (d.n(), d.d());
    if dim < n {
        return invalid(format!("natural projection needs d >= N, got d={dim}, N={n}"));
    }
    let x = DMatrix::from_fn(dim, n, |r, c| d.point(c)[r]);
    let q = x.qr().q();
    Ok(Projection { matrix: q.transpose(), achieved_separation_ratio: 1.0 })
}

/// Bias `b_j = ‖row_j‖₂·R + 1`, so `Wx + b ≥ 1` whenever `‖x‖₂ ≤ R`.
pub fn relu_safe_bias(rows: &[Vec<f64>], radius: f64) -> Vec<f64> {
    rows.iter().map(|r| Norm::L2.norm(r) * radius + 1.0).collect()
}

/// Spectral norm of a dense row list.
pub fn spectral_norm(rows: &[Vec<f64>]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let m = DMatrix::from_fn(rows.len(), rows[0].len(), |r, c| rows[r][c]);
    m.singular_values().iter().cloned().fold(0.0, f64::max)
}
