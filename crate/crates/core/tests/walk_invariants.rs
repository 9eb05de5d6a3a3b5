//! Cross-checks between the deterministic potential-theory machinery and
//! independent routes: Monte Carlo walks for the Green's identity and exit
//! probabilities, and closed-form profiles for the large-`N` sweeps.

use stonewalk_core::dispersal::{build_kernel, DispersalKernel, Family};
use stonewalk_core::stats::SeedPlan;
use stonewalk_core::walk::{
    green_exact, hitting_prob, hitting_prob_asymptotic, hitting_prob_bound_check,
    log_spaced_probes, potential_kernel, IntervalProblem,
};

const REPLICAS: u64 = 100_000;
const MC_SIGMAS: f64 = 4.0;
/// Acceptance window for a deviation that should halve when `N` quadruples.
const HALVING_RATIO: (f64, f64) = (1.6, 2.6);

fn uniform(n: u64) -> DispersalKernel {
    build_kernel(Family::Uniform, n, 1.0).expect("uniform kernel builds")
}

/// Runs one walk from `x` to its interval exit and returns the exit site.
fn walk_to_exit(
    kernel: &DispersalKernel,
    m_half: i64,
    x: i64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> i64 {
    let mut pos = x;
    let mut steps = 0u32;
    while pos.abs() <= m_half {
        pos += kernel.sample(rng);
        steps += 1;
        assert!(steps < 1_000_000, "walk failed to exit");
    }
    pos
}

/// The visit-count identity: the expected drop of the potential kernel
/// between the start and the exit site reproduces the interval Green's
/// function. Checked against the banded solve within Monte Carlo error
/// plus the table's certified tail.
#[test]
fn potential_drop_across_exit_matches_green() {
    let kernel = uniform(100);
    let m_half = 16i64;
    let problem = IntervalProblem::new(&kernel, m_half).unwrap();
    let (x, y) = (5i64, -3i64);
    let table = potential_kernel(&kernel, 40, 5e-3).unwrap();
    let exact = green_exact(&problem, x, y).unwrap();

    let plan = SeedPlan::new(0x57414c4b_0001);
    let a_start = table.value(x - y).unwrap();
    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    for replica in 0..REPLICAS {
        let mut rng = plan.rng_for(replica);
        let exit = walk_to_exit(&kernel, m_half, x, &mut rng);
        let z = a_start - table.value(exit - y).unwrap();
        sum += z;
        sum_sq += z * z;
    }
    let r = REPLICAS as f64;
    let mean = sum / r;
    let var = (sum_sq - sum * sum / r) / (r - 1.0);
    let se = (var / r).sqrt();
    assert!(se < 0.01, "unexpectedly noisy estimator: se = {se}");

    let slack = MC_SIGMAS * se + 2.0 * table.tail_bound;
    assert!(
        (mean - exact).abs() <= slack,
        "identity gap {:.5} exceeds {:.5} (mc {mean:.5} vs solve {exact:.5})",
        (mean - exact).abs(),
        slack
    );
}

/// Exit side probabilities obey the optional-stopping bracket
/// `(M+x)/(2M+r) <= P_x(exit right) <= (M+x+r)/(2M+r)` with `r` the
/// kernel's largest jump.
#[test]
fn exit_side_frequency_sits_in_the_stopping_bracket() {
    let kernel = uniform(100);
    let m_half = 16i64;
    let x = 4i64;
    let r_jump = kernel.support_radius();
    let denom = (2 * m_half + r_jump) as f64;
    let lower = (m_half + x) as f64 / denom;
    let upper = (m_half + x + r_jump) as f64 / denom;

    let plan = SeedPlan::new(0x57414c4b_0002);
    let mut right = 0u64;
    for replica in 0..REPLICAS {
        let mut rng = plan.rng_for(replica);
        if walk_to_exit(&kernel, m_half, x, &mut rng) > m_half {
            right += 1;
        }
    }
    let r = REPLICAS as f64;
    let p_hat = right as f64 / r;
    let se = (p_hat * (1.0 - p_hat) / r).sqrt();
    assert!(
        p_hat + MC_SIGMAS * se >= lower && p_hat - MC_SIGMAS * se <= upper,
        "exit frequency {p_hat:.4} +- {se:.4} escapes [{lower:.4}, {upper:.4}]"
    );
    // Scale sanity: the midpoint estimate (M+x)/2M is 0.625 here.
    assert!(p_hat > 0.5 && p_hat < 0.75, "exit frequency {p_hat:.4}");
}

/// The potential kernel's gap to its straight-line profile
/// `-1 - |x|/(sigmaN^2 N)` halves (in the square-root sense) as `N`
/// quadruples across {100, 400, 1600}.
#[test]
fn straight_line_gap_decays_at_the_root_n_rate() {
    let mut devs = Vec::new();
    for n in [100u64, 400, 1600] {
        let kernel = uniform(n);
        let nf = n as f64;
        let x_max = (4.0 * nf.sqrt() * nf.ln()).ceil() as i64;
        let epsilon = 0.05 / nf.sqrt();
        let table = potential_kernel(&kernel, x_max, epsilon).unwrap();
        assert!(table.tail_bound < epsilon);
        let variance = kernel.variance();
        let lo = nf.sqrt().ceil() as i64;
        let mut dev = 0.0f64;
        for &p in &log_spaced_probes(lo, x_max, 32) {
            let line = -1.0 - (p as f64) / variance;
            dev = dev.max((table.value(p).unwrap() - line).abs());
        }
        devs.push(dev);
    }
    for pair in devs.windows(2) {
        let ratio = pair[0] / pair[1];
        assert!(
            ratio > HALVING_RATIO.0 && ratio < HALVING_RATIO.1,
            "gap ratio {ratio:.3} outside {HALVING_RATIO:?} (gaps {devs:?})"
        );
    }
}

/// The scaled origin-hitting probability `N^{1/6} H(x, 0)` at the interval
/// midpoint distance closes in on `1/sigmaN^2` monotonically over
/// {400, 1600, 6400}.
#[test]
fn hitting_probability_trend_toward_the_asymptote() {
    let mut errs = Vec::new();
    for n in [400u64, 1600, 6400] {
        let kernel = uniform(n);
        let problem = IntervalProblem::with_default_interval(&kernel);
        let x = (n as f64).powf(5.0 / 6.0).ceil() as i64;
        let h = hitting_prob(&problem, x).unwrap();
        let nf = n as f64;
        let scaled = nf.powf(1.0 / 6.0) * h;
        let target = 1.0 / (kernel.sigma_n() * kernel.sigma_n());
        errs.push((scaled - target).abs());

        // The closed-form route is the same quantity divided by N^{1/6}.
        let asym = hitting_prob_asymptotic(n, kernel.sigma_n());
        assert!((asym * kernel.sigma_n() * kernel.sigma_n() * nf.powf(1.0 / 6.0) - 1.0).abs() < 1e-12);
    }
    assert!(
        errs[0] > errs[1] && errs[1] > errs[2],
        "scaled hitting errors not monotone: {errs:?}"
    );
    // Frozen scale for the reference build: {1.893, 1.814, 1.693}.
    assert!(errs[0] > 1.5 && errs[0] < 2.3, "err(400) = {}", errs[0]);
    assert!(errs[2] > 1.4 && errs[2] < 2.0, "err(6400) = {}", errs[2]);
}

/// Every interior probe passes the certified hitting cap at N=400.
#[test]
fn hitting_cap_holds_across_the_full_interior_sweep() {
    let kernel = uniform(400);
    let problem = IntervalProblem::with_default_interval(&kernel);
    let edge = 2.0 * (400f64).powf(5.0 / 6.0);
    let mut probes = Vec::new();
    for x in 1..problem.m_half() {
        if (x as f64) < edge {
            probes.push(x);
            probes.push(-x);
        }
    }
    let report = hitting_prob_bound_check(&problem, &probes).unwrap();
    assert!(report.worst_value <= report.bound);
    assert!(report.worst_x.abs() == 1, "worst probe at {}", report.worst_x);
}

/// One kernel step applied to the potential table reproduces the table
/// (plus the unit dip at the origin) within the certified tail bound.
#[test]
fn potential_table_is_harmonic_off_the_origin() {
    let kernel = uniform(400);
    let table = potential_kernel(&kernel, 120, 2.5e-3).unwrap();
    let r = kernel.support_radius();
    for &x in &[0i64, 1, 7, 40, 99] {
        let mut smoothed = 0.0;
        for z in -r..=r {
            smoothed += kernel.mass(z) * table.value(x + z).unwrap();
        }
        let target = if x == 0 {
            table.value(0).unwrap() - 1.0
        } else {
            table.value(x).unwrap()
        };
        let defect = (smoothed - target).abs();
        assert!(
            defect <= 2.5 * table.tail_bound + 1e-9,
            "harmonic defect {defect:.3e} at x = {x} beyond certificate"
        );
        // Far tighter in practice (frozen scale: ~2.4e-7 on the reference
        // build); the loose cap above is the certified claim.
        assert!(defect < 1e-5, "harmonic defect {defect:.3e} at x = {x}");
    }
}
