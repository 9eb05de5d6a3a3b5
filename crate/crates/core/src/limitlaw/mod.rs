//! Limit laws for pairwise coalescence times, via the survival function of
//! Brownian local time at the origin.
//!
//! The central object is `u(t, x) = E_x[exp(−λ·ℓ₀(t))]`: the probability that
//! an exponential clock, run on the local time `ℓ₀` a Brownian motion started
//! at `x` accumulates at the origin, has not rung by time `t`. Both
//! coalescence regimes this crate simulates converge to laws of that form —
//! [`theorem2_limit_survival`] covers the migration-limited colony regime
//! (start 1, clock rate `1/α`) and [`theorem3_limit_survival`] the
//! kernel-driven voter regime (start `x₀`, clock rate `2/σ`).
//!
//! Two independent numerical routes are kept deliberately separate so each
//! can certify the other: [`survival_quadrature`] integrates the closed-form
//! joint endpoint density [`eq2_joint_density`] over the endpoint, while
//! [`survival_pde`] solves the heat equation with the local-time (Robin)
//! boundary flux. [`maruyama_laplace`] and [`maruyama_exact`] supply the ring
//! model's Laplace transform and fixation probability, which play the same
//! cross-checking role against the ring simulator.

mod pde;
mod special;

pub use pde::{
    survival_pde, GridSolution, PdeError, PdeParams, FAR_FIELD_SIGMAS, REFERENCE_DT, REFERENCE_DX,
};
pub use special::{erf, erfc, erfc_classical, erfc_scaled, erfcx_classical};

use std::f64::consts::PI;
use thiserror::Error;

/// Absolute tolerance of the endpoint-density quadrature.
pub const QUADRATURE_TOL: f64 = 1e-8;
/// Integration cutoff in units of `√t` beyond `|x|`: Gaussian mass past 12
/// standard deviations is below 1e-30, invisible at the 1e-8 tolerance.
const TAIL_CUT_SDS: f64 = 12.0;
/// Bisection depth cap for the adaptive integrator (interval width shrinks by
/// 2^48 before this trips).
const MAX_DEPTH: u32 = 48;

#[derive(Debug, Error)]
pub enum LimitLawError {
    #[error("{name} must be finite, got {value}")]
    NonFinite { name: &'static str, value: f64 },
    #[error("the joint density needs t > 0, got t = {0}")]
    NonPositiveTime(f64),
    #[error("time must be nonnegative, got t = {0}")]
    NegativeTime(f64),
    #[error("local-time rate must be nonnegative, got lambda = {0}")]
    NegativeRate(f64),
    #[error("alpha must be positive, got {0}")]
    BadAlpha(f64),
    #[error("sigma must be positive, got {0}")]
    BadSigma(f64),
    #[error("starting point must be nonnegative, got x0 = {0}")]
    NegativeStart(f64),
    #[error("mutation and migration rates must lie strictly in (0, 1), got u = {u}, m = {m}")]
    BadFixationInput { u: f64, m: f64 },
    #[error(
        "adaptive quadrature stalled before reaching tolerance {requested:e} \
         (worst panel error estimate {achieved:e})"
    )]
    QuadratureStalled { requested: f64, achieved: f64 },
    #[error(transparent)]
    Pde(#[from] PdeError),
}

/// How the complementary-function factor in the reflection term of
/// [`eq2_joint_density`] is normalized.
///
/// The closed form for the joint law of the endpoint and the local time is
/// quoted in the literature with an "Erfc" whose normalization is ambiguous
/// (analyst's error-function complement vs. probabilist's normal tail). The
/// two readings differ by a factor-of-two in the coefficient *and* a `√2`
/// rescaling of the argument, so they are not interchangeable; only one
/// reproduces the known closed form `u(t, 0) = 2·e^{λ²t/2}·P(Z > λ√t)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ErfcConvention {
    /// Classical complementary error function `2/√π ∫ exp(−s²) ds` at the
    /// quoted argument — equivalently the standard-normal upper tail at a
    /// `√2`-rescaled argument. Reproduces the closed form and survives the
    /// quadrature/PDE/Monte-Carlo cross-checks; the default.
    #[default]
    ClassicalErfc,
    /// Diagnostic mode: the standard-normal upper tail at the quoted
    /// argument. Fails the cross-checks by a wide margin (`u(1, 0; 1)` comes
    /// out near 0.14 instead of 0.52); kept selectable so the comparison
    /// that locked the convention stays reproducible.
    NormalUpperTail,
}

fn density_unchecked(t: f64, x: f64, z: f64, lambda: f64, convention: ErfcConvention) -> f64 {
    let gauss = (-(z - x) * (z - x) / (2.0 * t)).exp() / (2.0 * PI * t).sqrt();
    if lambda == 0.0 {
        return gauss;
    }
    let w = z.abs() + x.abs();
    let reflect = match convention {
        ErfcConvention::ClassicalErfc => {
            // λ·e^{λw + λ²t/2}·P(Z > λ√t + w/√t), regrouped around the scaled
            // tail so no factor overflows: the prefactor collapses to
            // e^{−w²/2t}.
            let v = lambda * t.sqrt() + w / t.sqrt();
            lambda * (-w * w / (2.0 * t)).exp() * erfc_scaled(v)
        }
        ErfcConvention::NormalUpperTail => {
            // (λ/2)·e^{λw + λ²t/2}·P(Z > a) with a = λ√(t/2) + w/√(2t);
            // same regrouping, different residual exponent.
            let a = lambda * (0.5 * t).sqrt() + w / (2.0 * t).sqrt();
            0.5 * lambda
                * (lambda * w + 0.5 * lambda * lambda * t - 0.5 * a * a).exp()
                * erfc_scaled(a)
        }
    };
    gauss - reflect
}

/// Joint endpoint density `E_x(e^{−λℓ₀(t)}; W_t ∈ dz)/dz`: the heat kernel
/// minus a reflection term that charges the local time the path accrues at
/// the origin. Integrating over `z` yields `u(t, x)`.
pub fn eq2_joint_density(t: f64, x: f64, z: f64, lambda: f64) -> Result<f64, LimitLawError> {
    eq2_joint_density_with(t, x, z, lambda, ErfcConvention::default())
}

/// [`eq2_joint_density`] under an explicit [`ErfcConvention`].
pub fn eq2_joint_density_with(
    t: f64,
    x: f64,
    z: f64,
    lambda: f64,
    convention: ErfcConvention,
) -> Result<f64, LimitLawError> {
    for (name, value) in [("t", t), ("x", x), ("z", z), ("lambda", lambda)] {
        if !value.is_finite() {
            return Err(LimitLawError::NonFinite { name, value });
        }
    }
    if t <= 0.0 {
        return Err(LimitLawError::NonPositiveTime(t));
    }
    if lambda < 0.0 {
        return Err(LimitLawError::NegativeRate(lambda));
    }
    Ok(density_unchecked(t, x, z, lambda, convention))
}

/// `u(t, x)` by adaptive quadrature of the joint endpoint density.
///
/// The integral is split at `z = 0` (the density has a kink there from the
/// `|z|` dependence) and truncated at `|z| ≤ |x| + 12√t`; `t = 0` and
/// `λ = 0` short-circuit to exactly 1.
pub fn survival_quadrature(t: f64, x: f64, lambda: f64) -> Result<f64, LimitLawError> {
    survival_quadrature_with(t, x, lambda, ErfcConvention::default())
}

/// [`survival_quadrature`] under an explicit [`ErfcConvention`].
pub fn survival_quadrature_with(
    t: f64,
    x: f64,
    lambda: f64,
    convention: ErfcConvention,
) -> Result<f64, LimitLawError> {
    for (name, value) in [("t", t), ("x", x), ("lambda", lambda)] {
        if !value.is_finite() {
            return Err(LimitLawError::NonFinite { name, value });
        }
    }
    if t < 0.0 {
        return Err(LimitLawError::NegativeTime(t));
    }
    if lambda < 0.0 {
        return Err(LimitLawError::NegativeRate(lambda));
    }
    if t == 0.0 || lambda == 0.0 {
        return Ok(1.0);
    }
    // Panel edges at the density's own landmarks: the kink at z = 0 and the
    // Gaussian centers at z = ±|x| (when t ≪ x² the bulk of the mass sits in
    // a spike the integrator would otherwise never sample).
    let xa = x.abs();
    let cut = xa + TAIL_CUT_SDS * t.sqrt();
    let mut edges = vec![-cut, 0.0, cut];
    if xa > 0.0 {
        edges.insert(1, -xa);
        edges.insert(3, xa);
    }
    let f = |z: f64| density_unchecked(t, x, z, lambda, convention);
    // The Richardson acceptance test is a heuristic, not a bound; running the
    // panels well below the advertised tolerance keeps the guarantee honest
    // at trivial cost (the integrand is a handful of exp/erfc evaluations).
    let panel_tol = QUADRATURE_TOL / (64.0 * edges.len() as f64);
    let mut total = 0.0;
    for pair in edges.windows(2) {
        total += adaptive_simpson(&f, pair[0], pair[1], panel_tol)?;
    }
    Ok(total)
}

/// Survival function of the migration-limited coalescence limit: local-time
/// clock at rate `1/α` on a Brownian motion started at 1. Small `α`
/// degenerates to the hitting time of the origin; large `α` never coalesces.
pub fn theorem2_limit_survival(t: f64, alpha: f64) -> Result<f64, LimitLawError> {
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(LimitLawError::BadAlpha(alpha));
    }
    survival_quadrature(t, 1.0, 1.0 / alpha)
}

/// Survival function of the kernel-driven coalescence limit: local-time clock
/// at rate `2/σ` on a Brownian motion started at `x₀ ≥ 0`.
pub fn theorem3_limit_survival(t: f64, sigma: f64, x0: f64) -> Result<f64, LimitLawError> {
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(LimitLawError::BadSigma(sigma));
    }
    if !x0.is_finite() || x0 < 0.0 {
        return Err(LimitLawError::NegativeStart(x0));
    }
    survival_quadrature(t, x0, 2.0 / sigma)
}

/// Closed-form Laplace transform `(1 + 4α√λ)^{−1}` of the rescaled
/// coalescence time in the migration-limited regime started from colony
/// distance 0.
pub fn maruyama_laplace(alpha: f64, lambda: f64) -> f64 {
    1.0 / (1.0 + 4.0 * alpha * lambda.sqrt())
}

/// Output of [`maruyama_exact`]: the heterozygosity integral `I₀` and the
/// fixation probability `f₀` it determines.
#[derive(Clone, Copy, Debug)]
pub struct FixationEstimate {
    pub i0: f64,
    pub f0: f64,
}

/// Exact ring-model fixation probability.
///
/// Computes `I₀ = π^{−1}·∫₀^π A²/(1 − (1−u)²A²) dθ` with
/// `A(θ) = 1 − m(1 − cos θ)`, then `f₀ = (1−u)²/((1−u)² + 2·dip_size/I₀)`.
/// The integrand concentrates in a spike of half-width `≈ √(2u/m)` at
/// `θ = 0`; the integration mesh is graded geometrically from that scale so
/// the adaptive pass starts from panels the spike cannot hide between.
pub fn maruyama_exact(u: f64, m: f64, dip_size: u32) -> Result<FixationEstimate, LimitLawError> {
    if !(u > 0.0 && u < 1.0) || !(m > 0.0 && m < 1.0) {
        return Err(LimitLawError::BadFixationInput { u, m });
    }
    let keep = 1.0 - u;
    let integrand = |theta: f64| {
        let a = 1.0 - m * (1.0 - theta.cos());
        let a2 = a * a;
        a2 / (1.0 - keep * keep * a2)
    };
    // Leading-order size of the whole integral, used to scale the tolerance.
    let rough = 0.5 * PI / (2.0 * u * m).sqrt() + 1.0;
    let tol = 1e-8 * rough;
    let mut edges = vec![0.0];
    let mut edge = (2.0 * u / m).sqrt();
    while edge < PI {
        edges.push(edge);
        edge *= 10.0;
    }
    edges.push(PI);
    let mut total = 0.0;
    for pair in edges.windows(2) {
        total += adaptive_simpson(&integrand, pair[0], pair[1], tol)?;
    }
    let i0 = total / PI;
    let keep2 = keep * keep;
    let f0 = keep2 / (keep2 + 2.0 * f64::from(dip_size) / i0);
    Ok(FixationEstimate { i0, f0 })
}

/// Which route evaluates a [`LimitLawQuery`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SurvivalMethod {
    Quadrature,
    Pde,
}

/// A single `(t, x, λ)` evaluation request for `u(t, x)`.
#[derive(Clone, Copy, Debug)]
pub struct LimitLawQuery {
    pub t: f64,
    pub x: f64,
    pub lambda: f64,
    pub method: SurvivalMethod,
}

/// Evaluates a query on its requested route; the PDE route solves the
/// reference mesh sized to the query and interpolates.
pub fn evaluate_query(query: &LimitLawQuery) -> Result<f64, LimitLawError> {
    match query.method {
        SurvivalMethod::Quadrature => survival_quadrature(query.t, query.x, query.lambda),
        SurvivalMethod::Pde => {
            for (name, value) in [("t", query.t), ("x", query.x), ("lambda", query.lambda)] {
                if !value.is_finite() {
                    return Err(LimitLawError::NonFinite { name, value });
                }
            }
            if query.t < 0.0 {
                return Err(LimitLawError::NegativeTime(query.t));
            }
            if query.lambda < 0.0 {
                return Err(LimitLawError::NegativeRate(query.lambda));
            }
            if query.t == 0.0 || query.lambda == 0.0 {
                return Ok(1.0);
            }
            let params = PdeParams::reference(query.lambda, query.t, query.x.abs());
            let grid = survival_pde(&params, query.x.abs())?;
            Ok(grid.value_at(query.t, query.x)?)
        }
    }
}

/// Adaptive Simpson integration with Richardson acceptance: a panel is
/// accepted when halving it moves the estimate by less than `15·tol`.
fn adaptive_simpson(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<f64, LimitLawError> {
    let m = 0.5 * (a + b);
    let fa = f(a);
    let fm = f(m);
    let fb = f(b);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_panel(f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH)
        .map_err(|achieved| LimitLawError::QuadratureStalled { requested: tol, achieved })
}

#[allow(clippy::too_many_arguments)]
fn simpson_panel(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64, f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(delta.abs() / 15.0);
    }
    let l = simpson_panel(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?;
    let r = simpson_panel(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?;
    Ok(l + r)
}
