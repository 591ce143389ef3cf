mod common;

use cns_core::harness::{partition_defect, reconstruction_defect};
use cns_core::littlewood_paley::{bernstein_ratios, phi_hat, DyadicFilterBank};
use cns_core::spectral::{GridField, Rank, TorusGrid};
use common::{modes, trig_scalar, trig_vector};
use num_complex::Complex64;
use proptest::prelude::*;

#[test]
fn bank_band_matches_grid() {
    let b32 = DyadicFilterBank::for_grid(&TorusGrid::new(2, 32).unwrap()).unwrap();
    let b64 = DyadicFilterBank::for_grid(&TorusGrid::new(2, 64).unwrap()).unwrap();
    assert_eq!((b32.j_min(), b32.j_max()), (0, 3));
    assert_eq!((b64.j_min(), b64.j_max()), (0, 4));
    assert!(DyadicFilterBank::new(&TorusGrid::new(2, 32).unwrap(), 0, 4).is_err());
}

#[test]
fn zero_frequency_is_in_no_block() {
    let g = TorusGrid::new(2, 32).unwrap();
    let bank = DyadicFilterBank::for_grid(&g).unwrap();
    for j in bank.blocks() {
        assert_eq!(bank.block_weights(j).unwrap()[0], 0.0);
    }
    let c = GridField::constant_scalar(&g, 2.0);
    for m in -1..5 {
        assert!(bank.low_freq_cutoff(&c, m).unwrap().max_diff(&c).unwrap() < 1e-14);
    }
}

#[test]
fn dyadic_profile_at_powers_of_two() {
    // |xi| = 2^j exactly: phi(1) from block j, the neighbours contribute phi(2) = phi(1/2) = 0
    assert_eq!(phi_hat(2.0), 0.0);
    assert_eq!(phi_hat(0.5), 0.0);
    assert!((phi_hat(1.0) - 1.0).abs() < 1e-15);
}

#[test]
fn single_mode_block_support() {
    let g = TorusGrid::new(2, 64).unwrap();
    let bank = DyadicFilterBank::for_grid(&g).unwrap();
    // |xi| = 5 lies in blocks 2 and 3 only
    let mut c = vec![Complex64::default(); g.len()];
    c[g.flat_index(&[3, 4])] = Complex64::new(0.5, 0.0);
    c[g.flat_index(&[61, 60])] = Complex64::new(0.5, 0.0);
    let f = GridField::from_spectral(&g, Rank::Scalar, vec![c]).unwrap();
    for j in bank.blocks() {
        let b = bank.dyadic_block(&f, j).unwrap();
        let mass: f64 = b.coefficients()[0].iter().map(|c| c.norm()).sum();
        if j == 2 || j == 3 {
            assert!(mass > 1e-3);
        } else {
            assert_eq!(mass, 0.0);
        }
    }
    assert!(bank.low_freq_cutoff(&f, 0).unwrap().max_abs() < 1e-15);
}

#[test]
fn single_mode_besov_by_direct_summation() {
    let g = TorusGrid::new(2, 64).unwrap();
    let bank = DyadicFilterBank::for_grid(&g).unwrap();
    let f = GridField::from_fn_scalar(&g, |y| (3.0 * y[0] + 4.0 * y[1]).cos());
    let l2 = f.lp_norm(2.0).unwrap();
    let s = 0.7;
    let direct: f64 = (0..=4).map(|j| 2f64.powf(j as f64 * s) * phi_hat(5.0 / 2f64.powi(j)) * l2).sum();
    let got = bank.besov_value(&f, s, 2.0).unwrap();
    assert!((got - direct).abs() < 1e-12 * direct);
    // p != 2 uses grid quadrature of the block itself
    let got3 = bank.besov_value(&f, s, 3.0).unwrap();
    let l3 = f.lp_norm(3.0).unwrap();
    let direct3: f64 = (0..=4).map(|j| 2f64.powf(j as f64 * s) * phi_hat(5.0 / 2f64.powi(j)) * l3).sum();
    assert!((got3 - direct3).abs() < 1e-10 * direct3);
}

#[test]
fn near_orthogonality_is_exact() {
    let g = TorusGrid::new(2, 64).unwrap();
    let bank = DyadicFilterBank::for_grid(&g).unwrap();
    let f = GridField::from_fn_scalar(&g, |y| (1.0 / (1.5 - y[0].cos())) * (2.0 * y[1]).sin()).to_spectral();
    for j in bank.blocks() {
        for k in bank.blocks().filter(|k| (k - j).abs() >= 2) {
            let djk = bank.dyadic_block(&bank.dyadic_block(&f, j).unwrap(), k).unwrap();
            assert!(djk.coefficients()[0].iter().all(|c| c.norm() == 0.0));
        }
    }
}

#[test]
fn zero_trajectories_have_zero_ep_norm() {
    let g = TorusGrid::new(2, 16).unwrap();
    let bank = DyadicFilterBank::for_grid(&g).unwrap();
    let u = vec![GridField::zeros(&g, Rank::Vector); 4];
    let k = vec![GridField::zeros(&g, Rank::Scalar); 4];
    assert_eq!(bank.ep_norm(&u, &k, &[0.0, 0.1, 0.2, 0.3], 2.0).unwrap(), 0.0);
    assert!(bank.ep_norm(&u, &k, &[0.0, 0.1, 0.3, 0.4], 2.0).is_err());
    assert!(bank.ep_norm(&u, &k[..3], &[0.0, 0.1, 0.2, 0.3], 2.0).is_err());
}

#[test]
fn time_constant_velocity_ep_norm() {
    let g = TorusGrid::new(2, 32).unwrap();
    let bank = DyadicFilterBank::for_grid(&g).unwrap();
    let u0 = GridField::from_fn_vector(&g, |c, y| if c == 0 { (y[0] + y[1]).sin() } else { (2.0 * y[0]).cos() });
    let t: Vec<f64> = (0..11).map(|i| i as f64 * 0.05).collect();
    let parts = bank
        .ep_norm_parts(&vec![u0.clone(); 11], &vec![GridField::zeros(&g, Rank::Scalar); 11], &t, 2.0)
        .unwrap();
    let sup = bank.besov_value(&u0, 0.0, 2.0).unwrap();
    let hess = bank.hessian_besov_value(&u0, 0.0, 2.0).unwrap();
    assert!((parts.u_sup - sup).abs() < 1e-14 * sup);
    assert!(parts.u_dt.abs() < 1e-14);
    assert!((parts.u_hess - 0.5 * hess).abs() < 1e-12 * hess);
    assert_eq!(parts.k_sup + parts.k_dt + parts.k_hess, 0.0);
}

#[test]
fn heat_kernel_ep_norm_closed_form() {
    let g = TorusGrid::new(2, 32).unwrap();
    let bank = DyadicFilterBank::for_grid(&g).unwrap();
    let q = 5.0; // |xi|^2 for xi = (1, 2)
    let mode = |amp: f64| GridField::from_fn_vector(&g, |c, y| if c == 0 { amp * (y[0] + 2.0 * y[1]).cos() } else { 0.0 });
    let (dt, steps) = (1e-3, 200);
    let times: Vec<f64> = (0..=steps).map(|i| i as f64 * dt).collect();
    let u: Vec<GridField> = times.iter().map(|t| mode((-q * t).exp())).collect();
    let k = vec![GridField::zeros(&g, Rank::Scalar); times.len()];
    let b0 = bank.besov_value(&mode(1.0), 0.0, 2.0).unwrap();
    let tt = dt * steps as f64;
    // sup = b0, int |d_t u| = int |D^2 u| = b0 (1 - e^{-qT})
    let exact = b0 * (1.0 + 2.0 * (1.0 - (-q * tt).exp()));
    let got = bank.ep_norm(&u, &k, &times, 2.0).unwrap();
    assert!((got - exact).abs() < 1e-5 * exact, "{got} vs {exact}");
}

#[test]
fn bernstein_on_single_modes() {
    let g = TorusGrid::new(2, 64).unwrap();
    let bank = DyadicFilterBank::for_grid(&g).unwrap();
    for (k1, k2) in [(1.0, 0.0), (1.0, 1.0), (3.0, 4.0), (7.0, 2.0), (12.0, 9.0)] {
        let f = GridField::from_fn_scalar(&g, |y| (k1 * y[0] + k2 * y[1]).sin());
        let r = (k1 * k1 + k2 * k2).sqrt();
        for (j, ratio) in bernstein_ratios(&bank, &f, 2.0).unwrap() {
            if let Some(ratio) = ratio {
                let exact = r / 2f64.powi(j);
                assert!((ratio - exact).abs() < 1e-12 * exact, "block {j}: {ratio} vs {exact}");
                assert!(ratio > 0.5 && ratio < 2.0);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn partition_of_unity(dim in 2usize..=3, log_n in 4u32..=6) {
        let n = 1usize << log_n;
        prop_assume!(dim == 2 || n <= 32);
        let bank = DyadicFilterBank::for_grid(&TorusGrid::new(dim, n).unwrap()).unwrap();
        prop_assert!(partition_defect(&bank) <= 1e-12);
    }

    #[test]
    fn reconstruction(ms in modes(20, 8)) {
        let g = TorusGrid::new(2, 64).unwrap();
        let bank = DyadicFilterBank::for_grid(&g).unwrap();
        let f = trig_vector(&g, &ms);
        prop_assert!(reconstruction_defect(&bank, &f).unwrap() <= 1e-12);
    }

    #[test]
    fn low_cutoff_telescopes(ms in modes(12, 6), m in 0i32..=3) {
        let g = TorusGrid::new(2, 64).unwrap();
        let bank = DyadicFilterBank::for_grid(&g).unwrap();
        let f = trig_scalar(&g, &ms);
        let mut acc = bank.low_freq_cutoff(&f, m).unwrap().add(&bank.high_remainder(&f).unwrap()).unwrap();
        for j in (m + 1)..=bank.j_max() {
            acc = acc.add(&bank.dyadic_block(&f, j).unwrap()).unwrap();
        }
        prop_assert!(acc.max_diff(&f).unwrap() <= 1e-12);
    }

    #[test]
    fn besov_homogeneity(ms in modes(20, 6), c in -10.0..10.0f64, s in -1.0..1.0f64, p in 1.0..4.0f64) {
        let g = TorusGrid::new(2, 64).unwrap();
        let bank = DyadicFilterBank::for_grid(&g).unwrap();
        let f = trig_scalar(&g, &ms);
        let a = bank.besov_value(&f.scale(c), s, p).unwrap();
        let b = c.abs() * bank.besov_value(&f, s, p).unwrap();
        prop_assert!((a - b).abs() <= 1e-13 * b.max(1e-300));
    }

    #[test]
    fn besov_triangle_inequality(a in modes(20, 5), b in modes(20, 5), s in -1.0..1.0f64, p in 1.0..4.0f64) {
        let g = TorusGrid::new(2, 32).unwrap();
        let bank = DyadicFilterBank::for_grid(&g).unwrap();
        let (f, h) = (trig_scalar(&g, &a), trig_scalar(&g, &b));
        let sum = bank.besov_value(&f.add(&h).unwrap(), s, p).unwrap();
        let bound = bank.besov_value(&f, s, p).unwrap() + bank.besov_value(&h, s, p).unwrap();
        prop_assert!(sum <= bound * (1.0 + 1e-12) + 1e-14);
    }
}
