use cns_core::constitutive::{builtin_law, lagrangian_temperature, LawKind, LawParams, Which};
use cns_core::flow::pullback;
use cns_core::harness::analytic_flow;
use cns_core::littlewood_paley::DyadicFilterBank;
use cns_core::spectral::{GridField, TorusGrid};
use cns_core::CnsError;
use proptest::prelude::*;

fn law(kind: LawKind) -> cns_core::constitutive::ConstitutiveLaw {
    builtin_law(&LawParams { kind, ..Default::default() }).unwrap()
}

#[test]
fn reference_state_has_zero_barotropic_pressure() {
    for kind in [LawKind::Ideal, LawKind::Barotropic, LawKind::VanDerWaals] {
        assert_eq!(law(kind).pi0.value(1.0), 0.0, "{kind:?}");
    }
}

#[test]
fn closed_form_pressures() {
    let p = LawParams { r: 0.7, gamma: 1.4, alpha: 0.3, beta: 2.0, ..Default::default() };
    let ideal = builtin_law(&LawParams { kind: LawKind::Ideal, ..p }).unwrap();
    assert!((ideal.pressure(1.3, 2.0) - 0.7 * 1.3 * 2.0).abs() < 1e-15);
    let baro = builtin_law(&LawParams { kind: LawKind::Barotropic, ..p }).unwrap();
    assert!((baro.pressure(1.3, 5.0) - 0.7 * (1.3f64.powf(1.4) - 1.0)).abs() < 1e-15);
    let vdw = builtin_law(&LawParams { kind: LawKind::VanDerWaals, ..p }).unwrap();
    let exact = -0.3 * (1.3 * 1.3 - 1.0) + 2.0 * 2.0 * 1.3 / (1.4 - 1.3);
    assert!((vdw.pressure(1.3, 2.0) - exact).abs() < 1e-12);
}

#[test]
fn law_names_parse() {
    assert_eq!(LawKind::parse("vdw").unwrap(), LawKind::VanDerWaals);
    assert_eq!(LawKind::parse("van-der-waals").unwrap(), LawKind::VanDerWaals);
    assert_eq!(LawKind::parse("ideal").unwrap(), LawKind::Ideal);
    assert!(LawKind::parse("stiffened").is_err());
    assert!(builtin_law(&LawParams { mu: 0.0, ..Default::default() }).is_err());
    assert!(builtin_law(&LawParams { mu: 1.0, lambda: -2.5, ..Default::default() }).is_err());
    assert!(builtin_law(&LawParams { kind: LawKind::VanDerWaals, gamma: 0.9, ..Default::default() }).is_err());
}

#[test]
fn density_outside_range_is_rejected() {
    let g = TorusGrid::new(2, 16).unwrap();
    let vdw = law(LawKind::VanDerWaals);
    let rho = GridField::from_fn_scalar(&g, |y| 1.0 + 0.6 * y[0].sin());
    assert!(matches!(vdw.evaluate_raw(Which::Pi1, &rho), Err(CnsError::DensityOutOfRange { .. })));
    let vacuum = GridField::from_fn_scalar(&g, |y| y[0].sin());
    assert!(law(LawKind::Ideal).evaluate_raw(Which::Mu, &vacuum).is_err());
}

#[test]
fn lagrangian_pressure_matches_pulled_back_state() {
    let g = TorusGrid::new(2, 32).unwrap();
    let x = analytic_flow(&g).unwrap();
    let rho = GridField::from_fn_scalar(&g, |y| 1.0 + 0.1 * (y[0] - y[1]).cos());
    let theta = GridField::from_fn_scalar(&g, |y| 1.0 + 0.2 * y[1].sin());
    let u = GridField::from_fn_vector(&g, |c, y| 0.1 * ((c + 1) as f64 * y[0]).sin());
    let (rb, tb, ub) = (pullback(&rho, &x).unwrap(), pullback(&theta, &x).unwrap(), pullback(&u, &x).unwrap());
    let rho0 = rb.mul_scalar_field(&x.jacobian).unwrap();
    let u2 = GridField::scalar(
        &g,
        (0..g.len()).map(|k| ub.physical().unwrap().iter().map(|c| c[k] * c[k]).sum::<f64>()).collect(),
    )
    .unwrap();
    let kb = tb.add(&u2.scale(0.5)).unwrap().mul_scalar_field(&rho0).unwrap();
    assert!(lagrangian_temperature(&kb, &rho0, &ub).unwrap().max_diff(&tb).unwrap() < 1e-13);
    for kind in [LawKind::Ideal, LawKind::Barotropic, LawKind::VanDerWaals] {
        let l = law(kind);
        let lag = l.pressure_lagrangian(&rb, &kb, &rho0, &ub).unwrap();
        let eul = l.pressure_eulerian(&rb, &tb).unwrap();
        assert!(lag.max_diff(&eul).unwrap() < 1e-10, "{kind:?}");
    }
}

#[test]
fn ellipticity_constants_closed_form() {
    let g = TorusGrid::new(2, 32).unwrap();
    let rho0 = GridField::from_fn_scalar(&g, |y| 1.0 + 0.05 * y[0].sin() * y[1].cos());
    let max_rho = rho0.values(0).iter().copied().fold(0.0, f64::max);
    let base = LawParams { mu: 0.8, lambda: 0.0, k: 1.5, ..Default::default() };
    let c = builtin_law(&base).unwrap().ellipticity_constants(&rho0).unwrap();
    assert!((c.alpha - 0.8 / max_rho).abs() < 1e-15);
    assert!((c.beta - 1.5 / max_rho).abs() < 1e-15);
    let c2 = builtin_law(&LawParams { mu: 1.6, ..base }).unwrap().ellipticity_constants(&rho0).unwrap();
    assert!((c2.alpha - 2.0 * c.alpha).abs() < 1e-15);
}

#[test]
fn cutoff_admissibility_is_monotone() {
    let g = TorusGrid::new(2, 64).unwrap();
    let bank = DyadicFilterBank::for_grid(&g).unwrap();
    for amp in [0.05, 0.3, 0.6] {
        let rho0 = GridField::from_fn_scalar(&g, |y| 1.0 + amp * (y[0].sin() * y[1].cos() + 0.3 * (3.0 * y[0]).cos()));
        let l = builtin_law(&LawParams { lambda: 0.5, ..Default::default() }).unwrap();
        let (m, reps) = l.find_cutoff(&rho0, 1e-2, &bank, 2.0).unwrap();
        let flags: Vec<bool> = reps.iter().map(|r| r.admissible).collect();
        let first = flags.iter().position(|&a| a);
        if let Some(i) = first {
            assert!(flags[i..].iter().all(|&a| a), "amp {amp}: {flags:?}");
            assert_eq!(m, Some(reps[i].m));
        } else {
            assert_eq!(m, None);
        }
        let masses: Vec<f64> = reps.iter().map(|r| r.momentum_mass + r.energy_mass).collect();
        assert!(masses.windows(2).all(|w| w[1] <= w[0] + 1e-15), "{masses:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn coefficient_derivatives_match_differences(rho in 0.5..1.3f64) {
        let p = LawParams { kind: LawKind::VanDerWaals, gamma: 1.5, ..Default::default() };
        let l = builtin_law(&p).unwrap();
        for which in [Which::Pi0, Which::Pi1] {
            let c = l.coefficient(which);
            let h = 1e-5;
            let fd = (c.value(rho + h) - c.value(rho - h)) / (2.0 * h);
            prop_assert!((fd - c.derivative(rho)).abs() <= 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn ellipticity_scales_with_viscosity(mu in 0.1..5.0f64, factor in 1.0..4.0f64) {
        let g = TorusGrid::new(2, 16).unwrap();
        let rho0 = GridField::from_fn_scalar(&g, |y| 1.0 + 0.2 * y[1].cos());
        let a = builtin_law(&LawParams { mu, lambda: 0.0, ..Default::default() }).unwrap();
        let b = builtin_law(&LawParams { mu: factor * mu, lambda: 0.0, ..Default::default() }).unwrap();
        let (ca, cb) = (a.ellipticity_constants(&rho0).unwrap(), b.ellipticity_constants(&rho0).unwrap());
        prop_assert!((cb.alpha - factor * ca.alpha).abs() <= 1e-12 * cb.alpha);
        prop_assert_eq!(ca.beta, cb.beta);
    }
}
