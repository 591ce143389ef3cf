mod common;

use cns_core::flow::{
    check_div_identity, flow_difference_report, flow_estimate_report, integrate_flow, invert_flow, pullback,
    pushforward, twisted_deformation, twisted_divergence, FlowMap, VelocityTimeline,
};
use cns_core::harness::{analytic_flow, analytic_vector_field, jacobi_residual};
use cns_core::littlewood_paley::DyadicFilterBank;
use cns_core::spectral::{GridField, Rank, TorusGrid};
use cns_core::CnsError;
use common::{modes, trig_scalar, trig_vector};
use proptest::prelude::*;

fn grid(n: usize) -> TorusGrid {
    TorusGrid::new(2, n).unwrap()
}

fn steady(v: GridField, dt: f64, steps: usize) -> VelocityTimeline {
    VelocityTimeline::uniform(dt, vec![v; steps + 1]).unwrap()
}

#[test]
fn zero_velocity_gives_identity() {
    let g = grid(16);
    let x = integrate_flow(&steady(GridField::zeros(&g, Rank::Vector), 0.1, 5), 0.5).unwrap();
    let id = GridField::identity(&g);
    assert_eq!(x.displacement.max_abs(), 0.0);
    assert_eq!(x.dx.max_diff(&id).unwrap(), 0.0);
    assert_eq!(x.adjugate.max_diff(&id).unwrap(), 0.0);
    assert_eq!(x.inverse_gradient.max_diff(&id).unwrap(), 0.0);
    assert_eq!(x.jacobian.map(|j| j - 1.0).max_abs(), 0.0);
}

#[test]
fn constant_velocity_translates() {
    let g = grid(16);
    let c = [0.3, -0.2];
    let v = GridField::from_fn_vector(&g, |a, _| c[a]);
    let x = integrate_flow(&steady(v, 0.1, 4), 0.4).unwrap();
    let expect = GridField::from_fn_vector(&g, |a, _| 0.4 * c[a]);
    assert!(x.displacement.max_diff(&expect).unwrap() < 1e-15);
    assert!(x.jacobian.map(|j| j - 1.0).max_abs() < 1e-14);
    let inv = invert_flow(&x).unwrap();
    assert!(inv.displacement.max_diff(&expect.scale(-1.0)).unwrap() < 1e-10);
    // pullback of sin(x1) is sin(y1 + 0.4 c1)
    let f = GridField::from_fn_scalar(&g, |y| y[0].sin());
    let exact = GridField::from_fn_scalar(&g, |y| (y[0] + 0.4 * c[0]).sin());
    assert!(pullback(&f, &x).unwrap().max_diff(&exact).unwrap() < 1e-12);
}

#[test]
fn shear_flow_matches_closed_form() {
    let g = grid(32);
    let gamma = 0.4;
    let t = 0.5;
    let v = GridField::from_fn_vector(&g, |a, y| if a == 0 { gamma * y[1].sin() } else { 0.0 });
    let x = integrate_flow(&steady(v, 0.05, 10), t).unwrap();
    let dx = x.dx.physical().unwrap();
    let a = x.inverse_gradient.physical().unwrap();
    for k in 0..g.len() {
        let s = t * gamma * g.point(k)[1].cos();
        assert!((dx[1][k] - s).abs() < 1e-13);
        assert!((a[1][k] + s).abs() < 1e-13);
        assert!((x.jacobian.values(0)[k] - 1.0).abs() < 1e-13);
    }
}

#[test]
fn twisted_operators_reduce_with_identity() {
    let g = grid(32);
    let w = GridField::from_fn_vector(&g, |a, y| if a == 0 { (y[0] + y[1]).sin() } else { (2.0 * y[0]).cos() });
    let id = GridField::identity(&g);
    let d = w.deformation().unwrap();
    assert!(twisted_deformation(&w, &id).unwrap().max_diff(&d).unwrap() < 1e-12);
    assert!(twisted_divergence(&w, &id).unwrap().max_diff(&w.divergence().unwrap()).unwrap() < 1e-12);
    let zero = GridField::zeros(&g, Rank::Vector);
    assert_eq!(twisted_divergence(&zero, &id).unwrap().max_abs(), 0.0);
}

#[test]
fn diffeomorphism_loss_is_reported() {
    let g = grid(16);
    let d = GridField::from_fn_vector(&g, |a, y| if a == 0 { 2.0 * y[0].sin() } else { 0.0 });
    assert!(matches!(FlowMap::from_displacement(d, 1.0), Err(CnsError::DiffeomorphismLoss { .. })));
}

#[test]
fn identity_checks_trivial_cases() {
    let g = grid(32);
    let id = FlowMap::identity(&g);
    let h = analytic_vector_field(&g);
    assert!(check_div_identity(&h, &id).unwrap().max() <= 1e-12);
    let x = analytic_flow(&g).unwrap();
    let c = GridField::from_fn_vector(&g, |a, _| 1.0 + a as f64);
    let rep = check_div_identity(&c, &x).unwrap();
    assert!(rep.divergence < 1e-12 && rep.grad_div < 1e-12);
}

#[test]
fn identity_residuals_decrease_under_refinement() {
    let r: Vec<f64> = [16, 32, 64]
        .iter()
        .map(|&n| {
            let g = grid(n);
            check_div_identity(&analytic_vector_field(&g), &analytic_flow(&g).unwrap()).unwrap().max()
        })
        .collect();
    assert!(r[1] < r[0] && r[2] < r[1] / 10.0, "{r:?}");
    let scalar = |g: &TorusGrid| GridField::from_fn_scalar(g, |y| 1.0 / (1.6 - (y[0] - y[1]).cos()));
    let r32 = check_div_identity(&scalar(&grid(32)), &analytic_flow(&grid(32)).unwrap()).unwrap().max();
    let r64 = check_div_identity(&scalar(&grid(64)), &analytic_flow(&grid(64)).unwrap()).unwrap().max();
    assert!(r64 < r32 / 10.0, "{r32} -> {r64}");
}

#[test]
fn jacobi_residual_second_order() {
    let g = grid(32);
    let r: Vec<f64> = [0.04, 0.02, 0.01].iter().map(|&dt| jacobi_residual(&g, dt).unwrap()).collect();
    for w in r.windows(2) {
        assert!((w[0] / w[1]).log2() >= 1.9, "{r:?}");
    }
}

#[test]
fn jacobian_defect_quadratic_for_solenoidal_velocity() {
    let g = grid(32);
    let mut c = Vec::new();
    for eps in [1e-1, 1e-2, 1e-3] {
        // v = eps (d2 psi, -d1 psi), psi = sin y1 sin y2
        let v = GridField::from_fn_vector(&g, |a, y| {
            eps * if a == 0 { y[0].sin() * y[1].cos() } else { -y[0].cos() * y[1].sin() }
        });
        let x = integrate_flow(&steady(v, 0.1, 10), 1.0).unwrap();
        c.push(x.jacobian.map(|j| j - 1.0).max_abs() / (eps * eps));
    }
    assert!(c.iter().all(|&x| (x / c[2] - 1.0).abs() < 0.2), "{c:?}");
}

#[test]
fn flow_estimates_scale_with_velocity() {
    let g = grid(32);
    let bank = DyadicFilterBank::for_grid(&g).unwrap();
    let base = GridField::from_fn_vector(&g, |a, y| if a == 0 { y[1].sin() } else { (y[0] + y[1]).cos() });
    let zero = flow_estimate_report(&steady(GridField::zeros(&g, Rank::Vector), 0.1, 3), &bank, 2.0, 0.1).unwrap();
    assert!(zero.exact_zero);
    assert!(zero.ratios().iter().all(|r| r.1 == 0.0));
    let mut prev = None;
    for eps in [1e-2, 1e-3] {
        let rep = flow_estimate_report(&steady(base.scale(eps), 0.05, 4), &bank, 2.0, 0.1).unwrap();
        assert!(!rep.smallness_violated);
        let ratios: Vec<f64> = rep.ratios().iter().map(|r| r.1).collect();
        assert!(ratios.iter().all(|r| r.is_finite() && *r < 10.0));
        if let Some(p) = prev.replace(ratios.clone()) {
            let p: Vec<f64> = p;
            assert!(p.iter().zip(&ratios).all(|(a, b)| (a / b - 1.0).abs() < 0.1));
        }
    }
    let v1 = steady(base.scale(1e-2), 0.05, 4);
    let v2 = steady(base.scale(1.1e-2), 0.05, 4);
    let diff = flow_difference_report(&v1, &v2, &bank, 2.0).unwrap();
    assert!(diff.delta > 0.0 && diff.ratios().iter().all(|r| r.1.is_finite() && r.1 < 10.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn flow_algebra_on_random_small_flows(ms in modes(4, 4), amp in 0.01..0.1f64) {
        let g = grid(32);
        let x = FlowMap::from_displacement(trig_vector(&g, &ms).scale(amp), 1.0).unwrap();
        prop_assume!(x.min_jacobian() >= 0.5);
        let (a, b) = x.algebra_residuals();
        prop_assert!(a <= 1e-10 && b <= 1e-10);
    }

    #[test]
    fn pullback_pushforward_roundtrip(ms in modes(2, 3), fm in modes(4, 4), amp in 0.002..0.02f64) {
        let g = grid(64);
        let x = FlowMap::from_displacement(trig_vector(&g, &ms).scale(amp), 1.0).unwrap();
        let inv = invert_flow(&x).unwrap();
        prop_assert!(inv.max_residual <= 1e-10);
        let f = trig_scalar(&g, &fm);
        let scale = 1.0 + f.max_abs();
        let back = pullback(&pushforward(&f, &x).unwrap(), &x).unwrap();
        prop_assert!(back.max_diff(&f).unwrap() <= 1e-8 * scale);
        let fwd = pushforward(&pullback(&f, &x).unwrap(), &x).unwrap();
        prop_assert!(fwd.max_diff(&f).unwrap() <= 1e-8 * scale);
    }
}
