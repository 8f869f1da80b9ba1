//! Monte-Carlo check of robust memorization: uniform samples from every
//! robustness ball, compared against the ball's label.

use crate::dataset::{BallSampler, Dataset, Norm};
use crate::error::{invalid, Result};
use crate::exec::{split_seed, Exec};
use crate::net_ir::{Network, Scratch};
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// When a sampled output counts as correct.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tolerance {
    Exact,
    Abs(f64),
}

impl Tolerance {
    fn accepts(self, got: f64, want: f64) -> bool {
        match self {
            Tolerance::Exact => got == want,
            Tolerance::Abs(t) => (got - want).abs() <= t,
        }
    }
}

/// Upper end of the Wilson score interval for `k` failures in `n` trials.
pub fn wilson_upper(k: usize, n: usize, z: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let (k, n) = (k as f64, n as f64);
    let p = k / n;
    let z2 = z * z;
    let centre = p + z2 / (2.0 * n);
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((centre + half) / (1.0 + z2 / n)).clamp(0.0, 1.0)
}

/// z for a two-sided 95% interval.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallStats {
    pub index: usize,
    pub label: u32,
    pub errors: usize,
    pub wilson_upper: f64,
    /// Largest |f(x) − y| seen on the ball.
    pub max_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationStats {
    pub balls: usize,
    pub samples_per_ball: usize,
    pub total_samples: usize,
    pub matches: usize,
    /// Largest per-ball Wilson 95% upper bound on the error rate.
    pub wilson_upper: f64,
    pub worst_ball: Option<usize>,
    pub per_ball: Vec<BallStats>,
    pub wall_time_s: f64,
}

impl VerificationStats {
    pub fn exact(&self) -> bool {
        self.matches == self.total_samples
    }
    pub fn errors(&self) -> usize {
        self.total_samples - self.matches
    }
}

/// Sampling plan for [`verify_robust`].
#[derive(Debug, Clone)]
pub struct SamplePlan {
    pub p: Norm,
    pub mu: f64,
    pub samples: usize,
    pub seed: u64,
    pub tolerance: Tolerance,
    /// Balls to check (all when `None`).
    pub balls: Option<Vec<usize>>,
}

/// Samples every selected ball `B_p(x_i, mu)` and counts outputs equal to `y_i`.
/// Ball `i` always uses the stream `split_seed(seed, i)`, so results do not
/// depend on the executor.
pub fn verify_robust(net: &Network, d: &Dataset, plan: &SamplePlan, exec: Exec) -> Result<VerificationStats> {
    if plan.samples == 0 {
        return invalid("need K >= 1 samples per ball");
    }
    if !(plan.mu > 0.0) {
        return invalid(format!("ball radius must be positive, got {}", plan.mu));
    }
    if net.input_dim() != d.d() || net.output_dim() != 1 {
        return invalid(format!(
            "network maps R^{} -> R^{}, dataset needs R^{} -> R",
            net.input_dim(),
            net.output_dim(),
            d.d()
        ));
    }
    let p = plan.p.validate()?;
    let idx: Vec<usize> = match &plan.balls {
        Some(b) => b.clone(),
        None => (0..d.n()).collect(),
    };
    if let Some(&i) = idx.iter().find(|&&i| i >= d.n()) {
        return invalid(format!("ball index {i} out of range"));
    }
    let start = Instant::now();
    let per_ball = exec.map(&idx, |&i| {
        let mut s = BallSampler::new(d.d(), p, split_seed(plan.seed, i as u64));
        let mut scratch = Scratch::default();
        let want = d.label(i) as f64;
        let mut errors = 0;
        let mut dev: f64 = 0.0;
        for _ in 0..plan.samples {
            let x = s.sample(d.point(i), plan.mu);
            let got = net.eval1(&x, &mut scratch);
            dev = dev.max((got - want).abs());
            if !plan.tolerance.accepts(got, want) {
                errors += 1;
            }
        }
        BallStats {
            index: i,
            label: d.label(i),
            errors,
            wilson_upper: wilson_upper(errors, plan.samples, Z95),
            max_deviation: dev,
        }
    });
    let total = idx.len() * plan.samples;
    let errors: usize = per_ball.iter().map(|b| b.errors).sum();
    let worst = per_ball.iter().filter(|b| b.errors > 0).max_by_key(|b| (b.errors, std::cmp::Reverse(b.index)));
    Ok(VerificationStats {
        balls: idx.len(),
        samples_per_ball: plan.samples,
        total_samples: total,
        matches: total - errors,
        wilson_upper: per_ball.iter().map(|b| b.wilson_upper).fold(0.0, f64::max),
        worst_ball: worst.map(|b| b.index),
        per_ball,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}
