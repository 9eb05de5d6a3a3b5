//! Cross-checks between the two independent evaluations of the local-time
//! survival function: closed-form density quadrature vs. the heat-equation
//! solve. Each route certifies the other; nothing here shares numerics with
//! either implementation beyond the density formula itself.

use stonewalk_core::limitlaw::{
    eq2_joint_density, survival_pde, survival_quadrature, PdeParams,
};

const AGREEMENT_BUDGET: f64 = 1e-4;
const ABSORBED_SURVIVAL: f64 = 0.6826894921370859; // P(|N(0,1)| < 1)
const MONOTONE_SLACK: f64 = 1e-9;

fn time_grid() -> Vec<f64> {
    (0..20).map(|i| 0.1 + 1.9 * i as f64 / 19.0).collect()
}

fn space_grid() -> Vec<f64> {
    (0..20).map(|i| 3.0 * i as f64 / 19.0).collect()
}

#[test]
fn routes_agree_and_are_monotone_on_the_reference_grid() {
    let lambdas = [0.25, 0.5, 1.0, 2.0, 5.0];
    let ts = time_grid();
    let xs = space_grid();
    // per lambda: 20x20 matrices of both routes, kept for the lambda-direction
    // monotonicity check
    let mut quad_sheets: Vec<Vec<f64>> = Vec::new();
    let mut pde_sheets: Vec<Vec<f64>> = Vec::new();

    for &lambda in &lambdas {
        let grid = survival_pde(&PdeParams::reference(lambda, 2.0, 3.0), 3.0).expect("solve");
        assert!(grid.max_residual < 1e-9, "solver residual {}", grid.max_residual);
        let mut quad_sheet = Vec::with_capacity(400);
        let mut pde_sheet = Vec::with_capacity(400);
        for &t in &ts {
            for &x in &xs {
                let q = survival_quadrature(t, x, lambda).expect("quadrature");
                let p = grid.value_at(t, x).expect("interpolation");
                assert!(
                    (q - p).abs() < AGREEMENT_BUDGET,
                    "routes disagree at (t = {t}, x = {x}, lambda = {lambda}): {q} vs {p}"
                );
                quad_sheet.push(q);
                pde_sheet.push(p);
            }
        }
        quad_sheets.push(quad_sheet);
        pde_sheets.push(pde_sheet);
    }

    for sheets in [&quad_sheets, &pde_sheets] {
        for (li, sheet) in sheets.iter().enumerate() {
            for ti in 0..20 {
                for xi in 0..20 {
                    let v = sheet[ti * 20 + xi];
                    assert!((-1e-8..=1.0 + 1e-8).contains(&v), "u outside [0,1]: {v}");
                    if ti > 0 {
                        assert!(
                            v <= sheet[(ti - 1) * 20 + xi] + MONOTONE_SLACK,
                            "u grew in t at ({ti}, {xi}, lambda {})",
                            lambdas[li]
                        );
                    }
                    if xi > 0 {
                        assert!(
                            v + MONOTONE_SLACK >= sheet[ti * 20 + xi - 1],
                            "u shrank in x at ({ti}, {xi}, lambda {})",
                            lambdas[li]
                        );
                    }
                    if li > 0 {
                        assert!(
                            v <= sheets[li - 1][ti * 20 + xi] + MONOTONE_SLACK,
                            "u grew in lambda at ({ti}, {xi}, lambda {})",
                            lambdas[li]
                        );
                    }
                }
            }
        }
    }
}

#[test]
fn boundary_flux_error_decays_at_first_order() {
    // The ghost-point discretization satisfies the flux condition
    // (u(t,dx) − u(t,0))/dx = lambda·u(t,0) up to an O(dx) defect coming from
    // the one-sided difference itself; halving dx should halve the defect.
    let lambda = 1.0;
    let mut defects = Vec::new();
    for k in 0..3 {
        let dx = 1.0 / (100.0 * f64::powi(2.0, k));
        let params = PdeParams { lambda, dx, dt: dx / 2.0, t_max: 1.0, x_max: 6.0 };
        let grid = survival_pde(&params, 0.0).expect("solve");
        let u0 = grid.node(grid.nt(), 0);
        let u1 = grid.node(grid.nt(), 1);
        defects.push(((u1 - u0) / dx - lambda * u0).abs());
    }
    for pair in defects.windows(2) {
        let ratio = pair[0] / pair[1];
        assert!(
            (1.4..=2.8).contains(&ratio),
            "defect ratio {ratio} outside the first-order band; defects {defects:?}"
        );
    }
}

#[test]
fn independently_integrated_density_matches_the_grid() {
    // Composite Simpson with a fixed fine mesh — deliberately not the
    // adaptive integrator the quadrature route uses.
    let (t, x, lambda) = (1.0_f64, 1.0_f64, 1.0_f64);
    let cut = x + 10.0 * t.sqrt();
    let simpson = |a: f64, b: f64, n: usize| {
        let h = (b - a) / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let l = a + i as f64 * h;
            let m = l + 0.5 * h;
            let r = l + h;
            let fl = eq2_joint_density(t, x, l, lambda).unwrap();
            let fm = eq2_joint_density(t, x, m, lambda).unwrap();
            let fr = eq2_joint_density(t, x, r, lambda).unwrap();
            acc += h / 6.0 * (fl + 4.0 * fm + fr);
        }
        acc
    };
    let integral = simpson(-cut, 0.0, 16384) + simpson(0.0, cut, 16384);
    let grid = survival_pde(&PdeParams::reference(lambda, t, x), x).expect("solve");
    let p = grid.value_at(t, x).expect("interpolation");
    assert!(
        (integral - p).abs() < AGREEMENT_BUDGET,
        "density integral {integral} vs grid {p}"
    );
}

#[test]
fn pde_reaches_the_absorbing_limit() {
    // lambda so large that any local time kills the path: u degenerates to
    // the probability of never touching the origin
    let grid = survival_pde(&PdeParams::reference(1e4, 1.0, 1.0), 1.0).expect("solve");
    let got = grid.value_at(1.0, 1.0).expect("interpolation");
    assert!(
        (got - ABSORBED_SURVIVAL).abs() < 5e-3,
        "absorbing limit missed: {got}"
    );
}
