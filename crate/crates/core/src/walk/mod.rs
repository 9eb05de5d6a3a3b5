//! Deterministic lattice potential theory for dispersal kernels.
//!
//! Everything here is exact-arithmetic bookkeeping on top of a
//! [`DispersalKernel`]: n-step displacement laws by real-space convolution
//! doubling ([`step_distribution`]), a normal-comparison error audit
//! ([`lclt_error_audit`]), the recurrent potential kernel with a certified
//! truncation-tail bound ([`potential_kernel`]), interval Green's functions
//! by banded elimination ([`green_exact`]), and hitting probabilities with
//! their closed-form large-`N` counterparts ([`hitting_prob`],
//! [`hitting_prob_asymptotic`]).
//!
//! Tables are immutable once built and construction is single-threaded;
//! independent tables can be built concurrently by callers.

use std::f64::consts::{PI, TAU};
use std::io::{self, Write};
use std::ops::RangeInclusive;

use thiserror::Error;

use crate::dispersal::{DispersalKernel, Family};
use crate::limitlaw::erf;

/// Convolution outputs drop edge entries below this mass, accumulating them
/// into the distribution's tracked truncation total.
pub const TRUNCATION_EPS: f64 = 1e-16;

/// Memory guard: a convolution refuses to allocate a mass vector longer than
/// this (the support of `p_k` grows like `k * support_radius`).
pub const MAX_SUPPORT_LEN: usize = 1 << 22;

/// Largest step count accepted by the normal-comparison audit.
pub const LCLT_K_CAP: u64 = 4096;

/// A distribution's tracked truncation total may not exceed this; beyond it
/// the 1e-16 edge-trimming rule no longer deserves the name "exact".
const TRUNCATION_BUDGET_CAP: f64 = 1e-9;

/// Depth cap for the potential-kernel partial sums.
pub const POTENTIAL_DEPTH_CAP: u64 = 20_000;
const POTENTIAL_MIN_DEPTH: u64 = 64;
/// The envelope constant is audited over `k = 1..=64` before the series
/// depth is chosen, and re-checked at the final depth.
const POTENTIAL_AUDIT_DEPTH: u64 = 64;

/// Safety factor applied to the audited normal-comparison constant before it
/// is used to certify an omitted tail.
pub const ENVELOPE_SAFETY: f64 = 1.25;

/// Potential-kernel tables may extend at most this many multiples of the
/// kernel's per-step variance.
pub const X_MAX_VARIANCE_MULTIPLE: f64 = 32.0;

/// The dense interval solver refuses intervals with more sites than this.
pub const MAX_INTERVAL_SIZE: usize = 200_000;

#[derive(Debug, Error)]
pub enum WalkError {
    #[error("this operation leans on the normal-comparison machinery; the nearest-neighbor kernel is exempt from it")]
    ExemptKernel,
    #[error("step distribution at k = {k} would need {needed} mass entries (cap {cap})")]
    SupportTooLarge { k: u64, needed: usize, cap: usize },
    #[error("step counts must lie in [1, {cap}]; got {got}")]
    BadStepCount { got: u64, cap: u64 },
    #[error("step-count set is empty")]
    EmptyStepCounts,
    #[error("normal comparison index ell must be positive and finite; got {0}")]
    BadEll(f64),
    #[error("table half-width {x_max} outside [1, {cap:.1}] for this kernel")]
    BadXMax { x_max: i64, cap: f64 },
    #[error("tail tolerance must be positive and finite; got {0}")]
    BadEpsilon(f64),
    #[error("certified tail cannot reach {requested:e} within series depth {depth}; achievable bound is {achieved:e}")]
    TailBudget {
        requested: f64,
        achieved: f64,
        depth: u64,
    },
    #[error("tracked truncation total {budget:e} exceeds the allowed {cap:e}")]
    TruncationBudget { budget: f64, cap: f64 },
    #[error("interval half-width must be at least 1; got {0}")]
    BadInterval(i64),
    #[error("interval holds {size} sites; the dense solver is capped at {cap}")]
    IntervalTooLarge { size: usize, cap: usize },
    #[error("site {x} lies outside the interval [-{m_half}, {m_half}]")]
    OutsideInterval { x: i64, m_half: i64 },
    #[error("banded elimination hit a vanishing pivot at row {row}")]
    SolverBreakdown { row: usize },
    #[error("hitting probe {x} must be nonzero, inside the interval, and below 2 N^(5/6) in magnitude")]
    BadProbe { x: i64 },
    #[error("hitting probability at x = {x} is {value:.6e} but the certified cap is {bound:.6e}")]
    HittingBoundViolated { x: i64, value: f64, bound: f64 },
}

// ── n-step displacement laws ────────────────────────────────────────────

/// The law of the walk's displacement after `k` steps, stored as a dense
/// mass vector over `z = -radius ..= radius`.
///
/// Vectors are kept bitwise symmetric (`prob(z) == prob(-z)` exactly), and
/// edge entries below [`TRUNCATION_EPS`] are dropped with their mass added
/// to a tracked truncation total, so `total_mass() + truncated()` accounts
/// for 1 up to that audited budget.
#[derive(Debug, Clone)]
pub struct StepDistribution {
    k: u64,
    radius: i64,
    mass: Vec<f64>,
    truncated: f64,
}

impl StepDistribution {
    /// The zero-step law: a point mass at the origin.
    pub fn point_mass() -> Self {
        StepDistribution {
            k: 0,
            radius: 0,
            mass: vec![1.0],
            truncated: 0.0,
        }
    }

    /// The one-step law: the kernel's own mass vector, verbatim (no
    /// trimming, so `p_1` reproduces the kernel bit for bit).
    pub fn from_kernel(kernel: &DispersalKernel) -> Self {
        StepDistribution {
            k: 1,
            radius: kernel.support_radius(),
            mass: kernel.mass_slice().to_vec(),
            truncated: 0.0,
        }
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn radius(&self) -> i64 {
        self.radius
    }

    pub fn support(&self) -> RangeInclusive<i64> {
        -self.radius..=self.radius
    }

    /// Probability of displacement `z` (zero outside the stored support).
    pub fn prob(&self, z: i64) -> f64 {
        let idx = z + self.radius;
        if idx < 0 || idx >= self.mass.len() as i64 {
            0.0
        } else {
            self.mass[idx as usize]
        }
    }

    pub fn mass_slice(&self) -> &[f64] {
        &self.mass
    }

    /// Total probability dropped by edge trimming, accumulated through every
    /// convolution that produced this law.
    pub fn truncated(&self) -> f64 {
        self.truncated
    }

    /// Sum of the stored mass (compensated summation, so the
    /// mass-conservation audit is not polluted by accumulation error).
    pub fn total_mass(&self) -> f64 {
        let mut sum = 0.0;
        let mut comp = 0.0;
        for &m in &self.mass {
            let t = sum + m;
            comp += if sum.abs() >= m.abs() {
                (sum - t) + m
            } else {
                (m - t) + sum
            };
            sum = t;
        }
        sum + comp
    }

    /// Exact convolution of two laws, then the standard edge trim.
    ///
    /// The full product is computed with the shorter vector as the weight
    /// side (a fixed rule, so repeated builds are bit-for-bit reproducible),
    /// and the output is mirrored from its left half so symmetry survives
    /// floating-point summation order exactly.
    pub fn convolve(&self, other: &StepDistribution) -> Result<StepDistribution, WalkError> {
        let k = self.k + other.k;
        let needed = self.mass.len() + other.mass.len() - 1;
        if needed > MAX_SUPPORT_LEN {
            return Err(WalkError::SupportTooLarge {
                k,
                needed,
                cap: MAX_SUPPORT_LEN,
            });
        }
        let (weights, base) = if self.mass.len() <= other.mass.len() {
            (&self.mass, &other.mass)
        } else {
            (&other.mass, &self.mass)
        };
        let mut out = vec![0.0f64; needed];
        for (i, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (j, &b) in base.iter().enumerate() {
                out[i + j] += w * b;
            }
        }
        let len = out.len();
        for i in 0..len / 2 {
            out[len - 1 - i] = out[i];
        }

        let mut truncated = self.truncated + other.truncated;
        let mut lo = 0usize;
        let mut hi = out.len() - 1;
        while lo < hi && out[lo] < TRUNCATION_EPS {
            truncated += out[lo] + out[hi];
            lo += 1;
            hi -= 1;
        }
        let mass = out[lo..=hi].to_vec();
        Ok(StepDistribution {
            k,
            radius: (mass.len() as i64 - 1) / 2,
            mass,
            truncated,
        })
    }
}

/// Law of the walk after `k` steps, by binary convolution doubling
/// (`p_{2k} = p_k * p_k`), never by oscillatory inversion.
pub fn step_distribution(kernel: &DispersalKernel, k: u64) -> Result<StepDistribution, WalkError> {
    if k == 0 {
        return Ok(StepDistribution::point_mass());
    }
    let mut cur = StepDistribution::from_kernel(kernel);
    let mut acc: Option<StepDistribution> = None;
    let mut rest = k;
    loop {
        if rest & 1 == 1 {
            acc = Some(match acc {
                None => cur.clone(),
                Some(a) => a.convolve(&cur)?,
            });
        }
        rest >>= 1;
        if rest == 0 {
            return Ok(acc.expect("k > 0 has at least one set bit"));
        }
        cur = cur.convolve(&cur)?;
    }
}

// ── Normal comparison ───────────────────────────────────────────────────

/// Centered normal density with variance `ell * sigmaN^2` — the continuum
/// profile the `k`-step law is audited against at `ell = k N`.
pub fn rho(kernel: &DispersalKernel, ell: f64, x: f64) -> Result<f64, WalkError> {
    if !(ell > 0.0) || !ell.is_finite() {
        return Err(WalkError::BadEll(ell));
    }
    let v = kernel.sigma_n() * kernel.sigma_n() * ell;
    Ok((-(x * x) / (2.0 * v)).exp() / (TAU * v).sqrt())
}

/// One audited step count: `sqrt(N) * k^{3/2} * sup_x |p_k(x) - rho_{kN}(x)|`.
#[derive(Debug, Clone, Copy)]
pub struct AuditedStep {
    pub k: u64,
    pub normalized_sup_error: f64,
}

/// Output of [`lclt_error_audit`].
#[derive(Debug, Clone)]
pub struct LcltAudit {
    pub family: Family,
    pub n: u64,
    /// Normalized sup-errors, ascending in `k`.
    pub per_k: Vec<AuditedStep>,
    /// Largest normalized error over the audited set; a finite stand-in for
    /// the comparison constant whose existence the theory guarantees.
    pub c_star: f64,
    /// Largest tracked truncation total among the audited laws.
    pub truncation_budget: f64,
}

impl LcltAudit {
    /// JSON report (keys: family, n, perK, cStar, truncationBudget).
    pub fn to_json(&self) -> String {
        let per_k: Vec<serde_json::Value> = self
            .per_k
            .iter()
            .map(|e| {
                serde_json::json!({
                    "k": e.k,
                    "normalizedSupError": e.normalized_sup_error,
                })
            })
            .collect();
        serde_json::json!({
            "family": self.family.as_str(),
            "n": self.n,
            "perK": per_k,
            "cStar": self.c_star,
            "truncationBudget": self.truncation_budget,
        })
        .to_string()
    }
}

/// `sup_x |p(x) - rho_{kN}(x)|`, scanned over the stored support plus one
/// site beyond each edge (outside that, both profiles keep shrinking).
fn sup_normal_deviation(p: &StepDistribution, kernel: &DispersalKernel, k: u64) -> f64 {
    let v = kernel.variance() * k as f64;
    let norm = 1.0 / (TAU * v).sqrt();
    let mut sup = 0.0f64;
    for z in -(p.radius() + 1)..=(p.radius() + 1) {
        let zf = z as f64;
        let dev = (p.prob(z) - norm * (-(zf * zf) / (2.0 * v)).exp()).abs();
        sup = sup.max(dev);
    }
    sup
}

/// Audits how fast the `k`-step law approaches its normal profile:
/// `sqrt(N) * k^{3/2} * sup_x |p_k(x) - rho_{kN}(x)|` for each requested `k`.
///
/// The audit records the constants; it asserts nothing about their value.
/// A bounded sequence across `k` (and across an `N`-sweep) is what the
/// downstream tail certification relies on. The nearest-neighbor kernel is
/// exempt: its period-2 parity keeps the sup-error from decaying at all.
pub fn lclt_error_audit(kernel: &DispersalKernel, k_set: &[u64]) -> Result<LcltAudit, WalkError> {
    if kernel.family() == Family::NearestNeighbor {
        return Err(WalkError::ExemptKernel);
    }
    if k_set.is_empty() {
        return Err(WalkError::EmptyStepCounts);
    }
    for &k in k_set {
        if k == 0 || k > LCLT_K_CAP {
            return Err(WalkError::BadStepCount {
                got: k,
                cap: LCLT_K_CAP,
            });
        }
    }
    let mut wanted: Vec<u64> = k_set.to_vec();
    wanted.sort_unstable();
    wanted.dedup();

    let sqrt_n = (kernel.n() as f64).sqrt();
    let one = StepDistribution::from_kernel(kernel);
    let mut cur = one.clone();
    let mut per_k = Vec::with_capacity(wanted.len());
    let mut truncation_budget = 0.0f64;
    let mut next = wanted.iter().copied().peekable();
    let mut k = 1u64;
    while let Some(&want) = next.peek() {
        if k == want {
            let sup = sup_normal_deviation(&cur, kernel, k);
            per_k.push(AuditedStep {
                k,
                normalized_sup_error: sqrt_n * (k as f64).powf(1.5) * sup,
            });
            truncation_budget = truncation_budget.max(cur.truncated());
            next.next();
            if next.peek().is_none() {
                break;
            }
        }
        cur = cur.convolve(&one)?;
        k += 1;
    }
    if truncation_budget > TRUNCATION_BUDGET_CAP {
        return Err(WalkError::TruncationBudget {
            budget: truncation_budget,
            cap: TRUNCATION_BUDGET_CAP,
        });
    }
    let c_star = per_k
        .iter()
        .map(|e| e.normalized_sup_error)
        .fold(0.0f64, f64::max);
    Ok(LcltAudit {
        family: kernel.family(),
        n: kernel.n(),
        per_k,
        c_star,
        truncation_budget,
    })
}

// ── Recurrent potential kernel ──────────────────────────────────────────

/// Table of the recurrent potential kernel `a(x) = sum_k (p_k(x) - p_k(0))`
/// for `|x| <= x_max`, with a certified bound on everything the finite
/// construction left out.
///
/// The series is summed exactly to depth `series_depth`; beyond it the
/// partial sums are extended by the closed-form normal tail, and the
/// replacement error is certified by the audited comparison envelope
/// (`2 c_star / (sqrt(N) k^{3/2})` per omitted term). Symmetry is exact by
/// construction: only `x >= 0` is stored.
#[derive(Debug, Clone)]
pub struct PotentialKernelTable {
    family: Family,
    n: u64,
    x_max: i64,
    /// `a(|x|)`; index by magnitude.
    half: Vec<f64>,
    /// Number of exactly-summed series terms (`k = 0 ..= series_depth`).
    pub series_depth: u64,
    /// Certified bound on `|stored - exact|`, uniform over the table.
    pub tail_bound: f64,
    /// Envelope constant the certification used (audited max, with the
    /// [`ENVELOPE_SAFETY`] margin applied).
    pub c_star: f64,
    /// Accumulated truncation mass across all summed laws (already folded
    /// into `tail_bound`).
    pub truncation_budget: f64,
}

impl PotentialKernelTable {
    pub fn family(&self) -> Family {
        self.family
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn x_max(&self) -> i64 {
        self.x_max
    }

    /// `a(x)`, or `None` outside the tabulated range. `a(-x) == a(x)`
    /// exactly because only the magnitude is stored.
    pub fn value(&self, x: i64) -> Option<f64> {
        let m = x.unsigned_abs() as usize;
        self.half.get(m).copied()
    }

    /// CSV export over the full symmetric range: `x,value,certified_bound`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "x,value,certified_bound")?;
        for x in -self.x_max..=self.x_max {
            let v = self.half[x.unsigned_abs() as usize];
            writeln!(w, "{x},{v},{}", self.tail_bound)?;
        }
        Ok(())
    }
}

/// `sum_{k > depth} [rho_{kN}(x) - rho_{kN}(0)]`: summed term by term out to
/// `far`, then closed off with the exact integral of the continuum profile.
fn normal_tail_sum(variance: f64, depth: u64, far: u64, x: i64) -> f64 {
    if x == 0 {
        return 0.0;
    }
    let b = (x as f64) * (x as f64) / (2.0 * variance);
    let mut acc = 0.0;
    for k in depth + 1..=far {
        let kf = k as f64;
        acc += (-b / kf).exp_m1() / (TAU * variance * kf).sqrt();
    }
    acc + normal_tail_integral(variance, far as f64 + 0.5, x)
}

/// `int_A^inf [rho_{cs}(x) - rho_{cs}(0)] ds` in closed form; the
/// antiderivative pair is `sqrt(2b/(pi c)) (e^{-v^2}/v + sqrt(pi) erf v)`
/// with `v = sqrt(b/s)`, against `sqrt(2s/(pi c))` for the constant part.
fn normal_tail_integral(c: f64, a: f64, x: i64) -> f64 {
    if x == 0 {
        return 0.0;
    }
    let b = (x as f64) * (x as f64) / (2.0 * c);
    let u = b / a;
    (2.0 * a / (PI * c)).sqrt() * (-(-u).exp_m1()) - (x.unsigned_abs() as f64 / c) * erf(u.sqrt())
}

/// Series depth needed so the certified envelope tail drops below `epsilon`:
/// `4 c_env / (sqrt(N) sqrt(K)) < epsilon`.
fn required_depth(c_env: f64, sqrt_n: f64, epsilon: f64) -> Result<u64, WalkError> {
    let raw = (4.0 * c_env / (sqrt_n * epsilon)).powi(2);
    if !(raw < POTENTIAL_DEPTH_CAP as f64) {
        return Err(WalkError::TailBudget {
            requested: epsilon,
            achieved: 4.0 * c_env / (sqrt_n * (POTENTIAL_DEPTH_CAP as f64).sqrt()),
            depth: POTENTIAL_DEPTH_CAP,
        });
    }
    Ok((raw.floor() as u64 + 1).max(POTENTIAL_MIN_DEPTH))
}

/// Builds the potential-kernel table for `|x| <= x_max` with certified
/// accuracy `tail_bound < epsilon`.
///
/// Exact partial sums run to a depth `K` chosen from the audited comparison
/// constant; the remaining tail is evaluated through the normal profile and
/// certified by `sum_{k>K} 2 c_star / (sqrt(N) k^{3/2}) <= 4 c_star /
/// (sqrt(N) sqrt(K))`, plus a midpoint-rule guard for the integral closure
/// and the accumulated truncation mass. The audit is re-run at depth `K`
/// itself; if the normalized error there exceeds the envelope, the envelope
/// is enlarged and the series extended until the two are consistent.
pub fn potential_kernel(
    kernel: &DispersalKernel,
    x_max: i64,
    epsilon: f64,
) -> Result<PotentialKernelTable, WalkError> {
    if kernel.family() == Family::NearestNeighbor {
        return Err(WalkError::ExemptKernel);
    }
    let cap = X_MAX_VARIANCE_MULTIPLE * kernel.variance();
    if x_max < 1 || (x_max as f64) > cap {
        return Err(WalkError::BadXMax { x_max, cap });
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(WalkError::BadEpsilon(epsilon));
    }

    let audit_ks: Vec<u64> = (1..=POTENTIAL_AUDIT_DEPTH).collect();
    let audit = lclt_error_audit(kernel, &audit_ks)?;
    let sqrt_n = (kernel.n() as f64).sqrt();
    let mut c_env = ENVELOPE_SAFETY * audit.c_star;
    let mut depth = required_depth(c_env, sqrt_n, epsilon)?;

    // k = 0 term: p_0(x) - p_0(0) = -1 for x != 0.
    let mut half = vec![-1.0f64; x_max as usize + 1];
    half[0] = 0.0;

    let one = StepDistribution::from_kernel(kernel);
    let mut cur = one.clone();
    let mut truncation_budget = 0.0f64;
    let mut k = 1u64;
    loop {
        let p0 = cur.prob(0);
        for x in 1..=x_max {
            half[x as usize] += cur.prob(x) - p0;
        }
        truncation_budget += cur.truncated();
        if k == depth {
            // Trend re-check: the envelope constant came from k <= 64, so
            // verify it still covers the comparison error at the cut.
            let e = sqrt_n * (k as f64).powf(1.5) * sup_normal_deviation(&cur, kernel, k);
            if e <= c_env {
                break;
            }
            c_env = ENVELOPE_SAFETY * e;
            let need = required_depth(c_env, sqrt_n, epsilon)?;
            if need <= depth {
                break;
            }
            depth = need;
        }
        cur = cur.convolve(&one)?;
        k += 1;
    }
    // Per-law guard: any single p_k drifting this far from exactness would
    // poison the series. The summed-over-k total is folded into the
    // certified bound below instead of being capped here.
    if cur.truncated() > TRUNCATION_BUDGET_CAP {
        return Err(WalkError::TruncationBudget {
            budget: cur.truncated(),
            cap: TRUNCATION_BUDGET_CAP,
        });
    }

    let variance = kernel.variance();
    let b_max = (x_max as f64) * (x_max as f64) / (2.0 * variance);
    let far = (2 * depth)
        .max(depth + 16)
        .max((2.0 * b_max).ceil() as u64);
    for x in 1..=x_max {
        half[x as usize] += normal_tail_sum(variance, depth, far, x);
    }

    let envelope = 4.0 * c_env / (sqrt_n * (depth as f64).sqrt());
    let far_f = far as f64 + 0.5;
    let midpoint_guard =
        (b_max / far_f).min(1.0) / ((TAU * variance * far_f).sqrt() * far_f);
    let tail_bound = envelope + midpoint_guard + truncation_budget;
    if !(tail_bound < epsilon) {
        return Err(WalkError::TailBudget {
            requested: epsilon,
            achieved: tail_bound,
            depth,
        });
    }

    Ok(PotentialKernelTable {
        family: kernel.family(),
        n: kernel.n(),
        x_max,
        half,
        series_depth: depth,
        tail_bound,
        c_star: c_env,
        truncation_budget,
    })
}

// ── Interval Green's functions ──────────────────────────────────────────

/// An exit problem on the centered integer interval `[-m_half, m_half]`:
/// the walk runs until the first step with `|X_k| > m_half` (strict).
#[derive(Debug, Clone, Copy)]
pub struct IntervalProblem<'k> {
    kernel: &'k DispersalKernel,
    m_half: i64,
}

impl<'k> IntervalProblem<'k> {
    pub fn new(kernel: &'k DispersalKernel, m_half: i64) -> Result<Self, WalkError> {
        if m_half < 1 {
            return Err(WalkError::BadInterval(m_half));
        }
        Ok(IntervalProblem { kernel, m_half })
    }

    /// The standard interval for this kernel's `N`: half-width
    /// `ceil(2 N^(5/6))`.
    pub fn with_default_interval(kernel: &'k DispersalKernel) -> Self {
        let m_half = (2.0 * (kernel.n() as f64).powf(5.0 / 6.0)).ceil() as i64;
        IntervalProblem { kernel, m_half }
    }

    pub fn kernel(&self) -> &DispersalKernel {
        self.kernel
    }

    pub fn m_half(&self) -> i64 {
        self.m_half
    }

    /// Number of lattice sites in the interval.
    pub fn size(&self) -> usize {
        (2 * self.m_half + 1) as usize
    }

    pub fn contains(&self, x: i64) -> bool {
        x.abs() <= self.m_half
    }
}

/// One column `G(., y)` of an interval Green's function, with the residual
/// of the linear solve that produced it.
#[derive(Debug, Clone)]
pub struct GreenColumn {
    m_half: i64,
    pub y: i64,
    pub residual: f64,
    values: Vec<f64>,
}

impl GreenColumn {
    pub fn m_half(&self) -> i64 {
        self.m_half
    }

    /// `G(x, y)`, or `None` outside the interval.
    pub fn value(&self, x: i64) -> Option<f64> {
        if x.abs() > self.m_half {
            None
        } else {
            Some(self.values[(x + self.m_half) as usize])
        }
    }
}

/// Solves `(Id - P_I) g = delta_y` for the expected visit counts
/// `g(x) = G(x, y)` before exit, by banded LU without pivoting (the matrix
/// is an irreducibly diagonally dominant M-matrix, so elimination cannot
/// break down in exact arithmetic; the residual is reported regardless).
pub fn green_column(problem: &IntervalProblem, y: i64) -> Result<GreenColumn, WalkError> {
    let m = problem.m_half;
    if !problem.contains(y) {
        return Err(WalkError::OutsideInterval { x: y, m_half: m });
    }
    let size = problem.size();
    if size > MAX_INTERVAL_SIZE {
        return Err(WalkError::IntervalTooLarge {
            size,
            cap: MAX_INTERVAL_SIZE,
        });
    }
    let kernel = problem.kernel;
    let n = size;
    let r = kernel.support_radius().min(2 * m) as usize;
    let w = 2 * r + 1;

    // Band storage: entry (row i, col j) lives at band[i*w + (j - i + r)].
    let mut band = vec![0.0f64; n * w];
    for i in 0..n {
        for d in -(r as i64)..=(r as i64) {
            let j = i as i64 + d;
            if j < 0 || j >= n as i64 {
                continue;
            }
            let q = kernel.mass(d);
            band[i * w + (d + r as i64) as usize] = if d == 0 { 1.0 - q } else { -q };
        }
    }

    // Doolittle elimination; L factors overwrite the subdiagonal band.
    for j in 0..n {
        let pivot = band[j * w + r];
        if pivot.abs() < 1e-300 {
            return Err(WalkError::SolverBreakdown { row: j });
        }
        for i in (j + 1)..=(j + r).min(n - 1) {
            let sub = i * w + (j + r - i);
            let factor = band[sub] / pivot;
            if factor != 0.0 {
                for col in (j + 1)..=(j + r).min(n - 1) {
                    band[i * w + (col + r - i)] -= factor * band[j * w + (col + r - j)];
                }
            }
            band[sub] = factor;
        }
    }

    let mut g = vec![0.0f64; n];
    g[(y + m) as usize] = 1.0;
    for i in 0..n {
        let mut acc = g[i];
        for j in i.saturating_sub(r)..i {
            acc -= band[i * w + (j + r - i)] * g[j];
        }
        g[i] = acc;
    }
    for i in (0..n).rev() {
        let mut acc = g[i];
        for j in (i + 1)..=(i + r).min(n - 1) {
            acc -= band[i * w + (j + r - i)] * g[j];
        }
        g[i] = acc / band[i * w + r];
    }

    // Residual against the original operator, rebuilt from the kernel.
    let full_r = kernel.support_radius();
    let mut residual = 0.0f64;
    for i in 0..n {
        let x = i as i64 - m;
        let mut acc = g[i];
        for d in -full_r..=full_r {
            let t = x + d;
            if t.abs() <= m {
                acc -= kernel.mass(d) * g[(t + m) as usize];
            }
        }
        if x == y {
            acc -= 1.0;
        }
        residual = residual.max(acc.abs());
    }

    Ok(GreenColumn {
        m_half: m,
        y,
        residual,
        values: g,
    })
}

/// Expected visits to `y` from `x` before the walk leaves the interval.
pub fn green_exact(problem: &IntervalProblem, x: i64, y: i64) -> Result<f64, WalkError> {
    if !problem.contains(x) {
        return Err(WalkError::OutsideInterval {
            x,
            m_half: problem.m_half,
        });
    }
    let col = green_column(problem, y)?;
    Ok(col.value(x).expect("x checked against the interval"))
}

/// Closed-form large-`N` profile of the interval Green's function:
/// `delta(x,y) + (M - |x-y| - xy/M) / (sigmaN^2 N)` with `M = m_half`.
/// The bracket is grouped so it vanishes exactly at `x = +-M`.
pub fn green_asymptotic(problem: &IntervalProblem, x: i64, y: i64) -> f64 {
    let m = problem.m_half;
    let delta = if x == y { 1.0 } else { 0.0 };
    let linear = (m - (x - y).abs()) as f64;
    let curved = (x as f64) * (y as f64) / (m as f64);
    delta + (linear - curved) / problem.kernel.variance()
}

/// Probability the walk from `x` visits the origin before leaving the
/// interval: `G(x,0) / G(0,0)`.
pub fn hitting_prob(problem: &IntervalProblem, x: i64) -> Result<f64, WalkError> {
    if !problem.contains(x) {
        return Err(WalkError::OutsideInterval {
            x,
            m_half: problem.m_half,
        });
    }
    let col = green_column(problem, 0)?;
    let g00 = col.value(0).expect("origin is in the interval");
    Ok(col.value(x).expect("x checked against the interval") / g00)
}

/// Closed-form limit of the origin-hitting probability on the standard
/// interval: `1 / (sigmaN^2 N^(1/6))`.
pub fn hitting_prob_asymptotic(n: u64, sigma_n: f64) -> f64 {
    1.0 / (sigma_n * sigma_n * (n as f64).powf(1.0 / 6.0))
}

/// `count` log-spaced integers covering `[lo, hi]`, deduplicated.
pub fn log_spaced_probes(lo: i64, hi: i64, count: usize) -> Vec<i64> {
    assert!(lo >= 1 && hi >= lo && count >= 2, "degenerate probe range");
    let (llo, lhi) = ((lo as f64).ln(), (hi as f64).ln());
    let mut probes: Vec<i64> = (0..count)
        .map(|i| {
            let t = i as f64 / (count - 1) as f64;
            (llo + t * (lhi - llo)).exp().round() as i64
        })
        .collect();
    probes.sort_unstable();
    probes.dedup();
    probes
}

/// Gap between the exact and closed-form Green's columns at `y = 0`,
/// normalized by the expected decay scale `N^(-1/3) log N`.
#[derive(Debug, Clone)]
pub struct GreenComparison {
    /// `max_abs_diff / scale` — the fitted constant of the decay claim.
    pub c: f64,
    pub max_abs_diff: f64,
    /// `N^(-1/3) log N`.
    pub scale: f64,
    pub probes: Vec<i64>,
}

fn comparison_from_column(
    problem: &IntervalProblem,
    col: &GreenColumn,
) -> GreenComparison {
    let nf = problem.kernel.n() as f64;
    let probes = log_spaced_probes(1, problem.m_half, 32);
    let mut max_abs_diff = 0.0f64;
    for &p in &probes {
        for x in [p, -p] {
            let exact = col.value(x).expect("probe inside interval");
            let diff = (exact - green_asymptotic(problem, x, 0)).abs();
            max_abs_diff = max_abs_diff.max(diff);
        }
    }
    let scale = nf.powf(-1.0 / 3.0) * nf.ln();
    GreenComparison {
        c: max_abs_diff / scale,
        max_abs_diff,
        scale,
        probes,
    }
}

/// Fits the constant in the closed-form Green's comparison over 32
/// log-spaced probe sites (both signs), at `y = 0`.
pub fn green_comparison_constant(problem: &IntervalProblem) -> Result<GreenComparison, WalkError> {
    let col = green_column(problem, 0)?;
    Ok(comparison_from_column(problem, &col))
}

/// Outcome of [`hitting_prob_bound_check`]: every probe passed, with the
/// fitted constant, the cap it produced, and the closest call.
#[derive(Debug, Clone)]
pub struct HittingBoundReport {
    /// Constant fitted by the Green's comparison on this problem.
    pub c: f64,
    /// `2/(sigmaN^2 N^(1/6)) + c N^(-1/3) log N`.
    pub bound: f64,
    pub worst_x: i64,
    pub worst_value: f64,
}

/// Checks the uniform cap on origin-hitting probabilities,
/// `H(x) <= 2/(sigmaN^2 N^(1/6)) + c N^(-1/3) log N`, with `c` fitted from
/// the Green's comparison on the same problem. Reports the first violating
/// probe as an error.
pub fn hitting_prob_bound_check(
    problem: &IntervalProblem,
    x_set: &[i64],
) -> Result<HittingBoundReport, WalkError> {
    let nf = problem.kernel.n() as f64;
    let edge = 2.0 * nf.powf(5.0 / 6.0);
    for &x in x_set {
        if x == 0 || !problem.contains(x) || (x.abs() as f64) >= edge {
            return Err(WalkError::BadProbe { x });
        }
    }
    let col = green_column(problem, 0)?;
    let comparison = comparison_from_column(problem, &col);
    let sigma2 = problem.kernel.sigma_n() * problem.kernel.sigma_n();
    let bound = 2.0 / (sigma2 * nf.powf(1.0 / 6.0)) + comparison.c * comparison.scale;
    let g00 = col.value(0).expect("origin is in the interval");
    let mut worst_x = 0i64;
    let mut worst_value = f64::NEG_INFINITY;
    for &x in x_set {
        let h = col.value(x).expect("probe checked against interval") / g00;
        if h > bound {
            return Err(WalkError::HittingBoundViolated {
                x,
                value: h,
                bound,
            });
        }
        if h > worst_value {
            worst_value = h;
            worst_x = x;
        }
    }
    Ok(HittingBoundReport {
        c: comparison.c,
        bound,
        worst_x,
        worst_value,
    })
}
