use cns_core::estimates::{product_with_constant, verify_estimates, EstimateKind, EstimateParams, RatioReport};
use cns_core::spectral::TorusGrid;
use cns_core::CnsError;

fn run(kind: EstimateKind, n: usize, trials: usize, seed: u64) -> RatioReport {
    let g = TorusGrid::new(2, n).unwrap();
    verify_estimates(kind, &g, trials, seed, &EstimateParams::default_for(kind, 2)).unwrap()
}

#[test]
fn kind_names_roundtrip() {
    for k in EstimateKind::ALL {
        assert_eq!(EstimateKind::parse(k.name()).unwrap(), k);
    }
    assert!(EstimateKind::parse("commutator").is_err());
}

#[test]
fn same_seed_same_rows() {
    for kind in EstimateKind::ALL {
        let a = run(kind, 32, 5, 7);
        let b = run(kind, 32, 5, 7);
        assert_eq!(a.to_csv(), b.to_csv(), "{kind:?}");
        assert_ne!(a.to_csv(), run(kind, 32, 5, 8).to_csv(), "{kind:?}");
    }
}

#[test]
fn trial_streams_are_independent_of_count() {
    let short = run(EstimateKind::Product, 32, 3, 1);
    let long = run(EstimateKind::Product, 32, 6, 1);
    assert_eq!(short.rows[..], long.rows[..3]);
}

#[test]
fn out_of_range_indices_rejected() {
    let g = TorusGrid::new(2, 16).unwrap();
    let bad = [
        (EstimateKind::Product, EstimateParams { sigma: 1.5, nu: 0.0, s: 1.0, p: 2.0 }),
        (EstimateKind::Product, EstimateParams { sigma: -1.0, nu: 0.0, s: 1.0, p: 2.0 }),
        (EstimateKind::Comm1, EstimateParams { sigma: 0.0, nu: 1.5, s: 1.0, p: 2.0 }),
        (EstimateKind::Composition, EstimateParams { sigma: 0.0, nu: 0.0, s: 0.0, p: 2.0 }),
        (EstimateKind::Bernstein, EstimateParams { sigma: 0.0, nu: 0.0, s: 1.0, p: 0.5 }),
    ];
    for (kind, p) in bad {
        assert!(matches!(verify_estimates(kind, &g, 1, 0, &p), Err(CnsError::EstimateIndex { .. })), "{kind:?} {p:?}");
    }
}

#[test]
fn csv_layout() {
    let rep = run(EstimateKind::Comm2, 16, 2, 0);
    let csv = rep.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("kind,trial,resolution,lhs,rhs,ratio"));
    for (i, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 6);
        assert_eq!(cols[0], "commutator_comm2");
        assert_eq!(cols[1].parse::<usize>().unwrap(), i);
        assert_eq!(cols[2], "16");
        let (l, r, q): (f64, f64, f64) = (cols[3].parse().unwrap(), cols[4].parse().unwrap(), cols[5].parse().unwrap());
        assert!((l / r - q).abs() <= 1e-12 * q);
    }
}

#[test]
fn constants_stable_under_refinement() {
    for kind in [EstimateKind::Product, EstimateKind::Composition, EstimateKind::Comm1, EstimateKind::Comm2] {
        let (a, b) = (run(kind, 32, 20, 0), run(kind, 64, 20, 0));
        assert_eq!(a.degenerate(), 0);
        assert!((a.max_ratio() / b.max_ratio() - 1.0).abs() < 1e-2, "{kind:?}");
    }
}

#[test]
fn bernstein_ratios_within_annulus_bounds() {
    // block j lives on 2^{j-1} < |xi| < 2^{j+1}
    let rep = run(EstimateKind::Bernstein, 64, 10, 3);
    for r in rep.rows.iter().filter_map(|r| r.ratio) {
        assert!((0.5..=2.0).contains(&r), "{r}");
    }
}

#[test]
fn constant_factor_is_degenerate() {
    let rep = product_with_constant(&TorusGrid::new(2, 16).unwrap(), 2.0, 4, 0).unwrap();
    assert_eq!(rep.degenerate(), 4);
    assert!(rep.rows.iter().all(|r| r.lhs > 0.0 && r.rhs == 0.0));
    assert!(rep.to_csv().lines().nth(1).unwrap().ends_with(','));
}
