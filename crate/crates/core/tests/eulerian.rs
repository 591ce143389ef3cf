use cns_core::constitutive::{builtin_law, LawKind, LawParams};
use cns_core::eulerian::{
    equivalence_experiment, eulerian_rhs, eulerian_rhs_temperature_form, integrate_eulerian, EquivalenceConfig,
    EulerianState,
};
use cns_core::harness::InitialData;
use cns_core::lagrangian::SolverConfig;
use cns_core::spectral::{GridField, Rank, TorusGrid};
use cns_core::CnsError;

fn smallwave_state(g: &TorusGrid, eps: f64) -> EulerianState {
    let (r, u, th) = InitialData::SmallWave { amplitude: eps, density_amplitude: 0.05 }.sample(g).unwrap();
    EulerianState::from_temperature(&r, &u, &th).unwrap()
}

#[test]
fn temperature_and_energy_forms_agree() {
    let g = TorusGrid::new(2, 32).unwrap();
    let s = smallwave_state(&g, 0.2);
    for kind in [LawKind::Ideal, LawKind::Barotropic, LawKind::VanDerWaals] {
        let law = builtin_law(&LawParams { kind, lambda: 0.4, ..Default::default() }).unwrap();
        let a = eulerian_rhs(&s, &law).unwrap();
        let b = eulerian_rhs_temperature_form(&s, &law).unwrap();
        let scale = 1.0 + a.e.max_abs();
        assert!(a.rho.max_diff(&b.rho).unwrap() <= 1e-8 * scale, "{kind:?}");
        assert!(a.m.max_diff(&b.m).unwrap() <= 1e-8 * scale, "{kind:?}");
        assert!(a.e.max_diff(&b.e).unwrap() <= 1e-8 * scale, "{kind:?}");
    }
}

#[test]
fn constant_state_is_stationary() {
    let g = TorusGrid::new(2, 16).unwrap();
    let s = EulerianState::from_temperature(
        &GridField::constant_scalar(&g, 1.2),
        &GridField::from_fn_vector(&g, |c, _| [0.3, -0.1][c]),
        &GridField::constant_scalar(&g, 0.8),
    )
    .unwrap();
    let law = builtin_law(&LawParams::default()).unwrap();
    let r = eulerian_rhs(&s, &law).unwrap();
    assert!(r.rho.max_abs() < 1e-14 && r.m.max_abs() < 1e-14 && r.e.max_abs() < 1e-14);
    let traj = integrate_eulerian(&s, &law, 0.05, 0.01).unwrap();
    let last = traj.states.last().unwrap();
    assert!(last.e.max_diff(&s.e).unwrap() < 1e-13);
    assert!(last.u.max_diff(&s.u).unwrap() < 1e-13);
}

#[test]
fn totals_are_conserved() {
    let g = TorusGrid::new(2, 32).unwrap();
    let law = builtin_law(&LawParams::default()).unwrap();
    let traj = integrate_eulerian(&smallwave_state(&g, 0.1), &law, 0.1, 0.005).unwrap();
    assert_eq!(traj.states.len(), 21);
    let totals = traj.totals().unwrap();
    let (m0, p0, e0) = &totals[0];
    for (m, p, e) in &totals[1..] {
        assert!((m - m0).abs() <= 1e-12 * m0);
        assert!(p.iter().zip(p0).all(|(a, b)| (a - b).abs() <= 1e-12 * m0));
        assert!((e - e0).abs() <= 1e-12 * e0);
    }
}

#[test]
fn heat_mode_follows_crank_nicolson_factor() {
    // rho = 1, u = 0, barotropic: E = theta obeys the heat equation with k = 1
    let g = TorusGrid::new(2, 32).unwrap();
    let law = builtin_law(&LawParams { kind: LawKind::Barotropic, ..Default::default() }).unwrap();
    let (r, u, th) = InitialData::HeatMode { mode: [1, 2, 0], amplitude: 0.1 }.sample(&g).unwrap();
    let s = EulerianState::from_temperature(&r, &u, &th).unwrap();
    let (dt, steps) = (0.005, 20);
    let traj = integrate_eulerian(&s, &law, dt * steps as f64, dt).unwrap();
    let z = 5.0 * dt;
    let amp = 0.1 * ((1.0 - z / 2.0) / (1.0 + z / 2.0)).powi(steps);
    let pert = th.map(|x| x - 1.0);
    let expect = pert.scale(amp / 0.1).map(|x| x + 1.0);
    let last = traj.states.last().unwrap();
    assert!(last.temperature().unwrap().max_diff(&expect).unwrap() < 1e-13);
    assert!(last.u.max_abs() < 1e-14);
    let exact = pert.scale((-5.0 * dt * steps as f64).exp()).map(|x| x + 1.0);
    assert!(last.temperature().unwrap().max_diff(&exact).unwrap() < 1e-5);
}

#[test]
fn vacuum_and_bad_steps_rejected() {
    let g = TorusGrid::new(2, 16).unwrap();
    let law = builtin_law(&LawParams::default()).unwrap();
    let s = smallwave_state(&g, 0.05);
    assert!(matches!(integrate_eulerian(&s, &law, 0.1, 0.0), Err(CnsError::InvalidParameter(_))));
    assert!(integrate_eulerian(&s, &law, 0.001, 0.01).is_err());
    let vac = EulerianState { rho: GridField::from_fn_scalar(&g, |y| y[0].cos()), ..s };
    assert!(integrate_eulerian(&vac, &law, 0.1, 0.01).is_err());
}

#[test]
fn equivalence_in_two_dimensions() {
    let g = TorusGrid::new(2, 32).unwrap();
    let law = builtin_law(&LawParams::default()).unwrap();
    let (r, u, th) = InitialData::SmallWave { amplitude: 0.05, density_amplitude: 0.05 }.sample(&g).unwrap();
    let cfg = EquivalenceConfig { solver: SolverConfig { horizon: 0.05, ..Default::default() }, output_every: 5 };
    let rep = equivalence_experiment(&r, &u, &th, &law, &cfg).unwrap();
    assert!(!rep.in_equivalence_range);
    assert!(rep.failures.is_empty(), "{:?}", rep.failures);
    let times: Vec<f64> = rep.rows.iter().filter(|r| r.field == "rho").map(|r| r.time).collect();
    assert_eq!(times.len(), 3);
    assert!(rep.rows.iter().all(|r| r.resolution == 32 && r.max_diff.is_finite()));
    assert!(rep.max_discrepancy() < 1e-3);
    assert!(rep.to_csv().starts_with("time,field,max_diff,besov_diff,resolution\n"));
    let zero = GridField::zeros(&g, Rank::Vector);
    let still = equivalence_experiment(&GridField::constant_scalar(&g, 1.0), &zero, &GridField::constant_scalar(&g, 1.0), &law, &cfg).unwrap();
    assert!(still.max_discrepancy() < 1e-13);
}
