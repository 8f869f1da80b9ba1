//! Translating points away from the integer lattice, and the unit-ball
//! volume ratios that bound how much of a ball can fall near a hyperplane.

use crate::error::{invalid, Error, Result};
use statrs::function::gamma::ln_gamma;

/// Per-coordinate shift placing covered points away from integer hyperplanes.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTranslation {
    /// Exact gap midpoints.
    pub b: Vec<f64>,
    /// `b` truncated to `frac_bits` fractional bits.
    pub b_quantized: Vec<f64>,
    pub frac_bits: u32,
    /// Integer shift making every translated coordinate nonnegative.
    pub positivity_shift: Vec<i64>,
    /// Smallest `dist(x_ij − b_j, Z)` over covered points.
    pub margin_exact: f64,
    /// Smallest `dist(x_ij − b̄_j, Z)` over covered points.
    pub margin_quantized: f64,
}

impl GridTranslation {
    /// `x − b̄ + shift`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.b_quantized)
            .zip(&self.positivity_shift)
            .map(|((v, b), k)| v - b + *k as f64)
            .collect()
    }
    /// Constant added by [`apply`](Self::apply).
    pub fn offset(&self) -> Vec<f64> {
        self.b_quantized.iter().zip(&self.positivity_shift).map(|(b, k)| *k as f64 - b).collect()
    }
}

pub fn dist_to_integers(v: f64) -> f64 {
    let f = v - v.floor();
    f.min(1.0 - f)
}

/// Midpoint of the widest circular gap between the fractional parts; ties go to
/// the gap with the smallest left endpoint in `[0,1)`.
fn widest_gap_midpoint(vals: &[f64]) -> (f64, f64) {
    let mut f: Vec<f64> = vals.iter().map(|v| v - v.floor()).collect();
    f.sort_by(|a, b| a.total_cmp(b));
    let n = f.len();
    let mut best = (f[0] + 1.0 - f[n - 1], ((f[n - 1] - 1.0) + f[0]) / 2.0, f[n - 1]);
    let mut found_interior = false;
    for k in 0..n.saturating_sub(1) {
        let gap = f[k + 1] - f[k];
        let better = if found_interior { gap > best.0 + 1e-12 } else { gap >= best.0 - 1e-12 };
        if better {
            best = (gap, (f[k] + f[k + 1]) / 2.0, f[k]);
            found_interior = true;
        }
    }
    (best.0, best.1)
}

/// Fractional bits used for `b̄`: `⌈log₂(6N)⌉`.
pub fn quantization_bits(n: usize) -> u32 {
    (6.0 * n as f64).log2().ceil() as u32
}

/// Translation covering every point (margin parameter `N` = number of points).
pub fn grid_translate(points: &[Vec<f64>], margin_n: usize) -> Result<GridTranslation> {
    let all: Vec<usize> = (0..points.len()).collect();
    grid_translate_subset(points, &all, margin_n, 0.0)
}

/// Translation whose margins are guaranteed only for `cover`; the positivity
/// shift keeps every point (plus `pad` on each side) nonnegative.
pub fn grid_translate_subset(points: &[Vec<f64>], cover: &[usize], margin_n: usize, pad: f64) -> Result<GridTranslation> {
    if points.is_empty() || cover.is_empty() {
        return invalid("grid translation needs at least one covered point");
    }
    if margin_n < cover.len() {
        return invalid(format!("margin parameter {margin_n} below the {} covered points", cover.len()));
    }
    let d = points[0].len();
    let q = quantization_bits(margin_n);
    let scale = (q as f64).exp2();
    let (mut b, mut bq, mut shift) = (Vec::with_capacity(d), Vec::with_capacity(d), Vec::with_capacity(d));
    let (mut m_exact, mut m_quant) = (f64::INFINITY, f64::INFINITY);
    let n = margin_n as f64;
    for j in 0..d {
        let vals: Vec<f64> = cover.iter().map(|&i| points[i][j]).collect();
        let (gap, mid) = widest_gap_midpoint(&vals);
        if gap < 1.0 / n - 1e-12 {
            return Err(Error::Construction(format!("coordinate {j}: widest gap {gap} below 1/{margin_n}")));
        }
        let mq = (mid * scale).trunc() / scale;
        for &v in &vals {
            m_exact = m_exact.min(dist_to_integers(v - mid));
            m_quant = m_quant.min(dist_to_integers(v - mq));
        }
        let lowest = points.iter().map(|p| p[j] - mq - pad).fold(f64::INFINITY, f64::min);
        shift.push(if lowest >= 0.0 { 0 } else { (-lowest).ceil() as i64 });
        b.push(mid);
        bq.push(mq);
    }
    let tol = 1e-12;
    if m_exact < 1.0 / (2.0 * n) - tol || m_quant < 1.0 / (3.0 * n) - tol {
        return Err(Error::Construction(format!(
            "lattice margins {m_exact}, {m_quant} below 1/(2N), 1/(3N) for N={margin_n}"
        )));
    }
    Ok(GridTranslation {
        b,
        b_quantized: bq,
        frac_bits: q,
        positivity_shift: shift,
        margin_exact: m_exact,
        margin_quantized: m_quant,
    })
}

/// `V_d / V_{d−1}` for unit balls, via log-Gamma.
pub fn vd_ratio(d: usize) -> f64 {
    assert!(d >= 1, "dimension must be positive");
    let d = d as f64;
    (0.5 * std::f64::consts::PI.ln() + ln_gamma((d + 1.0) / 2.0) - ln_gamma(d / 2.0 + 1.0)).exp()
}

/// Smallest natural `t` with `1/t ≤ V_d·μ′·η / (2d·V_{d−1})`; returns `(t, 1/t)`.
pub fn error_budget_eta_prime(d: usize, mu_prime: f64, eta: f64) -> Result<(u64, f64)> {
    if d == 0 || !(mu_prime > 0.0) || !(eta > 0.0 && eta < 1.0) {
        return invalid(format!("need d >= 1, mu' > 0, eta in (0,1); got {d}, {mu_prime}, {eta}"));
    }
    let bound = vd_ratio(d) * mu_prime * eta / (2.0 * d as f64);
    let t = (1.0 / bound).ceil();
    if !t.is_finite() || t > 9.0e15 {
        return invalid(format!("error budget needs t = {t}, beyond exact integers"));
    }
    let mut t = t as u64;
    // guard against the ceiling landing one short after rounding
    while 1.0 / (t as f64) > bound {
        t += 1;
    }
    Ok((t, 1.0 / t as f64))
}

/// Upper bound `2·eta_len·V_{d−1}/V_d` on the fraction of a ball of radius `mu`
/// inside any slab of width `2·mu·eta_len`.
pub fn slab_fraction_bound(d: usize, mu: f64, eta_len: f64) -> Result<f64> {
    if d == 0 || !(mu > 0.0) || eta_len < 0.0 {
        return invalid("need d >= 1, mu > 0 and eta_len >= 0");
    }
    Ok(2.0 * eta_len / vd_ratio(d))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point() {
        let g = grid_translate(&[vec![0.5]], 1).unwrap();
        assert_eq!(g.b, vec![0.0]);
        assert_eq!(g.margin_exact, 0.5);
    }

    #[test]
    fn tie_prefers_first_gap() {
        let g = grid_translate(&[vec![0.1], vec![0.6]], 2).unwrap();
        assert!((g.b[0] - 0.35).abs() < 1e-15);
        assert!((g.margin_exact - 0.25).abs() < 1e-12);
    }

    #[test]
    fn shift_is_positive() {
        let pts = vec![vec![-3.3, 0.2], vec![1.7, -0.9]];
        let g = grid_translate(&pts, 2).unwrap();
        for p in &pts {
            assert!(g.apply(p).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn ratios() {
        assert!((vd_ratio(1) - 2.0).abs() < 1e-12);
        assert!((vd_ratio(2) - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!((vd_ratio(3) - 4.0 / 3.0).abs() < 1e-12);
        assert!((slab_fraction_bound(3, 1.0, 0.01).unwrap() - 0.015).abs() < 1e-12);
        assert!((slab_fraction_bound(1, 1.0, 0.2).unwrap() - 0.2).abs() < 1e-12);
        let (t, e) = error_budget_eta_prime(3, 0.5, 0.1).unwrap();
        assert!(e <= vd_ratio(3) * 0.5 * 0.1 / 6.0);
        assert!(1.0 / (t - 1) as f64 > vd_ratio(3) * 0.5 * 0.1 / 6.0);
    }
}
