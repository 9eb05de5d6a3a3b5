//! Empirical-distribution utilities shared by the simulators and the
//! verification suites: right-censored ECDFs, Kolmogorov–Smirnov distances
//! against a reference CDF, Laplace-functional estimates with standard
//! errors, a chi-square tail probability, and the deterministic per-replica
//! seed plan.
//!
//! Censoring convention: a censored observation contributes to the sample
//! size but not to the order statistics. The ECDF is therefore exact for
//! arguments below the censoring horizon and must not be evaluated above it.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("empty sample")]
    EmptySample,
    #[error("{n_censored} censored samples present; this estimator needs fully observed data")]
    CensoredSamples { n_censored: usize },
    #[error("evaluation point {t} is not below the censoring horizon {horizon}")]
    BeyondHorizon { t: f64, horizon: f64 },
    #[error("non-finite sample value")]
    NonFiniteSample,
}

// ── Seed plan ──────────────────────────────────────────────────────────

/// Derives one independent 256-bit RNG stream per replica from a single
/// master seed, so replicas can run in any order on any number of threads
/// and still produce identical draws.
///
/// Derivation: `SHA-256("stonewalk.seed.v1" || LE64(master) || LE64(replica))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedPlan {
    master: u64,
}

impl SeedPlan {
    pub fn new(master: u64) -> Self {
        SeedPlan { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// 256-bit stream key for one replica.
    pub fn stream_key(&self, replica: u64) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"stonewalk.seed.v1");
        h.update(self.master.to_le_bytes());
        h.update(replica.to_le_bytes());
        h.finalize().into()
    }

    /// RNG seeded with the replica's stream key.
    pub fn rng_for(&self, replica: u64) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.stream_key(replica))
    }
}

// ── Empirical distribution ─────────────────────────────────────────────

/// Sorted sample with an optional right-censoring horizon.
///
/// `n_total` counts both observed and censored replicas; censored replicas
/// are known only to exceed `horizon`.
#[derive(Debug, Clone)]
pub struct EmpiricalDistribution {
    values: Vec<f64>,
    n_total: usize,
    horizon: Option<f64>,
}

impl EmpiricalDistribution {
    /// Fully observed sample.
    pub fn from_values(mut values: Vec<f64>) -> Result<Self, StatsError> {
        if values.is_empty() {
            return Err(StatsError::EmptySample);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFiniteSample);
        }
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n_total = values.len();
        Ok(EmpiricalDistribution { values, n_total, horizon: None })
    }

    /// Sample in which `n_censored` additional replicas are right-censored
    /// at `horizon` (they exceeded it without being observed). Observed
    /// values above the horizon are also treated as censored, which makes
    /// `with_horizon(v, 0, h)` a pure restriction of a full sample.
    pub fn with_horizon(
        values: Vec<f64>,
        n_censored: usize,
        horizon: f64,
    ) -> Result<Self, StatsError> {
        if !horizon.is_finite() || horizon <= 0.0 {
            return Err(StatsError::NonFiniteSample);
        }
        let mut kept: Vec<f64> = Vec::with_capacity(values.len());
        let mut censored = n_censored;
        for v in values {
            if !v.is_finite() || v > horizon {
                censored += 1;
            } else {
                kept.push(v);
            }
        }
        let n_total = kept.len() + censored;
        if n_total == 0 {
            return Err(StatsError::EmptySample);
        }
        kept.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(EmpiricalDistribution { values: kept, n_total, horizon: Some(horizon) })
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn n_observed(&self) -> usize {
        self.values.len()
    }

    pub fn n_censored(&self) -> usize {
        self.n_total - self.values.len()
    }

    pub fn horizon(&self) -> Option<f64> {
        self.horizon
    }

    /// ECDF value `#(X <= t) / n_total`. Exact only below the horizon.
    pub fn evaluate(&self, t: f64) -> Result<f64, StatsError> {
        if let Some(h) = self.horizon {
            if t > h {
                return Err(StatsError::BeyondHorizon { t, horizon: h });
            }
        }
        let k = self.values.partition_point(|&v| v <= t);
        Ok(k as f64 / self.n_total as f64)
    }

    /// Kolmogorov–Smirnov distance against a reference CDF, taken over the
    /// observed sample points (both sides of each ECDF step) and, for a
    /// censored sample, at the horizon itself. For a censored sample this
    /// is the KS distance restricted to `[0, horizon]`.
    pub fn ks_distance<F: Fn(f64) -> f64>(&self, cdf: F) -> Result<f64, StatsError> {
        if self.values.is_empty() {
            // Degenerate: everything censored; only the horizon point remains.
            let h = self.horizon.ok_or(StatsError::EmptySample)?;
            return Ok(cdf(h));
        }
        let n = self.n_total as f64;
        let mut d: f64 = 0.0;
        for (i, &v) in self.values.iter().enumerate() {
            let f = cdf(v);
            d = d.max((f - i as f64 / n).abs());
            d = d.max(((i + 1) as f64 / n - f).abs());
        }
        if let Some(h) = self.horizon {
            let f_obs = self.values.len() as f64 / n;
            d = d.max((cdf(h) - f_obs).abs());
        }
        Ok(d)
    }
}

// ── Laplace functional ─────────────────────────────────────────────────

/// Plug-in estimate of `E exp(-lambda X)` with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n: usize,
}

/// Mean of `exp(-lambda x)` over a fully observed sample. Censored samples
/// are rejected: a censored transform value is not bounded below by
/// anything useful, so the plug-in estimator would be biased.
pub fn laplace_estimate(
    dist: &EmpiricalDistribution,
    lambda: f64,
) -> Result<LaplaceEstimate, StatsError> {
    if dist.n_censored() > 0 {
        return Err(StatsError::CensoredSamples { n_censored: dist.n_censored() });
    }
    let n = dist.values.len();
    if n == 0 {
        return Err(StatsError::EmptySample);
    }
    let transformed: Vec<f64> = dist.values.iter().map(|&v| (-lambda * v).exp()).collect();
    let mean = transformed.iter().sum::<f64>() / n as f64;
    let var = transformed.iter().map(|&y| (y - mean) * (y - mean)).sum::<f64>()
        / (n as f64 - 1.0).max(1.0);
    Ok(LaplaceEstimate { value: mean, std_error: (var / n as f64).sqrt(), n })
}

// ── Chi-square tail ────────────────────────────────────────────────────

/// Upper tail `P(X > x)` of a chi-square distribution with `k` degrees of
/// freedom, via the regularized incomplete gamma function `Q(k/2, x/2)`.
pub fn chi_square_sf(x: f64, k: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_q(0.5 * k as f64, 0.5 * x)
}

/// Pearson chi-square statistic and its tail probability for observed
/// counts against expected counts (expected need not sum to observed).
pub fn chi_square_test(observed: &[f64], expected: &[f64]) -> (f64, f64) {
    assert_eq!(observed.len(), expected.len());
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .filter(|(_, &e)| e > 0.0)
        .map(|(&o, &e)| (o - e) * (o - e) / e)
        .sum();
    let dof = expected.iter().filter(|&&e| e > 0.0).count().saturating_sub(1);
    (stat, chi_square_sf(stat, dof.max(1)))
}

/// Regularized upper incomplete gamma `Q(a, x) = Gamma(a,x)/Gamma(a)`,
/// by the standard series (x < a+1) / continued fraction (x >= a+1) split.
fn gamma_q(a: f64, x: f64) -> f64 {
    debug_assert!(a > 0.0 && x >= 0.0);
    if x == 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_cf(a, x)
    }
}

/// Series for the regularized lower incomplete gamma P(a, x).
fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut ap = a;
    for _ in 0..500 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * 1e-16 {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

/// Lentz continued fraction for Q(a, x), valid for x >= a + 1.
fn gamma_q_cf(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..500 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h * (-x + a * x.ln() - ln_gamma(a)).exp()
}

/// Lanczos approximation (g = 7, 9 coefficients), |rel err| < 1e-13 on x > 0.
fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}
