//! Randomized checks of the product, composition, commutator and Bernstein estimates.
//!
//! Each trial draws seeded band-limited fields and records the ratio of the two sides.
//! Only the empirical constant (the largest ratio) and its stability are of interest.
//! The test fields for the product, composition and commutator suites are fixed
//! trigonometric polynomials with `|k| <= 4`, so the same functions are sampled at every
//! resolution and all products stay resolved once `N >= 32`.

use std::fmt::Write as _;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CnsError, Result};
use crate::lagrangian::fmt_float;
use crate::littlewood_paley::DyadicFilterBank;
use crate::spectral::{GridField, Rank, TorusGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimateKind {
    Product,
    Composition,
    Comm1,
    Comm2,
    Bernstein,
}

impl EstimateKind {
    pub const ALL: [EstimateKind; 5] =
        [EstimateKind::Product, EstimateKind::Composition, EstimateKind::Comm1, EstimateKind::Comm2, EstimateKind::Bernstein];

    pub fn name(self) -> &'static str {
        match self {
            EstimateKind::Product => "product",
            EstimateKind::Composition => "composition",
            EstimateKind::Comm1 => "commutator_comm1",
            EstimateKind::Comm2 => "commutator_comm2",
            EstimateKind::Bernstein => "bernstein",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CnsError::Config(format!("unknown estimate kind {s:?}")))
    }

    fn stream(self) -> u64 {
        self as u64
    }
}

/// Indices of one suite. `s` is used by the composition suite only.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimateParams {
    pub sigma: f64,
    pub nu: f64,
    pub s: f64,
    pub p: f64,
}

impl EstimateParams {
    pub fn default_for(kind: EstimateKind, dim: usize) -> Self {
        let p = 2.0;
        let np = dim as f64 / p;
        match kind {
            EstimateKind::Product => EstimateParams { sigma: 0.5, nu: 0.0, s: np, p },
            EstimateKind::Comm1 | EstimateKind::Comm2 => EstimateParams { sigma: 0.0, nu: 0.5, s: np, p },
            EstimateKind::Composition | EstimateKind::Bernstein => EstimateParams { sigma: 0.0, nu: 0.0, s: np, p },
        }
    }

    fn check(&self, kind: EstimateKind, dim: usize) -> Result<()> {
        let bad = |reason: String| Err(CnsError::EstimateIndex { kind: kind.name(), reason });
        let p = self.p;
        if !(p >= 1.0) {
            return bad(format!("p = {p} < 1"));
        }
        let n = dim as f64;
        let np = n / p;
        let np_dual = if p == 1.0 { 0.0 } else { n * (p - 1.0) / p };
        let low = -np.min(np_dual);
        let (sigma, nu) = (self.sigma, self.nu);
        match kind {
            EstimateKind::Product => {
                if nu < 0.0 || !(sigma > low && sigma <= np - nu) {
                    return bad(format!("need nu >= 0 and {low} < sigma <= n/p - nu, got sigma={sigma}, nu={nu}"));
                }
            }
            EstimateKind::Comm1 => {
                if nu < 0.0 || nu > np || !(sigma > low - 1.0 && sigma <= np - nu) {
                    return bad(format!(
                        "need 0 <= nu <= n/p and {} < sigma <= n/p - nu, got sigma={sigma}, nu={nu}",
                        low - 1.0
                    ));
                }
            }
            EstimateKind::Comm2 => {
                if dim < 2 || nu < 0.0 || !(sigma > low - 1.0 && sigma <= np - nu) {
                    return bad(format!(
                        "need nu >= 0 and {} < sigma <= n/p - nu, got sigma={sigma}, nu={nu}",
                        low - 1.0
                    ));
                }
            }
            EstimateKind::Composition => {
                if !(self.s > 0.0) {
                    return bad(format!("need s > 0, got {}", self.s));
                }
            }
            EstimateKind::Bernstein => {}
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RatioRow {
    pub kind: EstimateKind,
    pub trial: usize,
    pub resolution: usize,
    pub lhs: f64,
    pub rhs: f64,
    /// `None` when the right side vanishes
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RatioReport {
    pub kind: EstimateKind,
    pub params: EstimateParams,
    pub rows: Vec<RatioRow>,
}

impl RatioReport {
    /// Empirical constant: the largest finite ratio.
    pub fn max_ratio(&self) -> f64 {
        self.rows.iter().filter_map(|r| r.ratio).fold(0.0, f64::max)
    }

    pub fn min_ratio(&self) -> f64 {
        self.rows.iter().filter_map(|r| r.ratio).fold(f64::INFINITY, f64::min)
    }

    /// Trials whose right side vanished (for instance a constant factor, which has zero
    /// homogeneous norm).
    pub fn degenerate(&self) -> usize {
        self.rows.iter().filter(|r| r.ratio.is_none()).count()
    }

    pub fn csv_header() -> &'static str {
        "kind,trial,resolution,lhs,rhs,ratio\n"
    }

    pub fn csv_rows(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.kind.name(),
                r.trial,
                r.resolution,
                fmt_float(r.lhs),
                fmt_float(r.rhs),
                r.ratio.map(fmt_float).unwrap_or_default()
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        format!("{}{}", Self::csv_header(), self.csv_rows())
    }
}

/// Mean-zero trigonometric polynomial with random coefficients on `0 < |k| <= radius`.
#[derive(Clone, Debug)]
pub struct RandomModes {
    modes: Vec<([f64; 3], f64, f64)>,
}

impl RandomModes {
    pub fn draw(rng: &mut ChaCha8Rng, dim: usize, radius: i64, amplitude: f64) -> Self {
        let r = radius;
        let mut modes = Vec::new();
        let range = |d: usize| if d < dim { -r..=r } else { 0..=0 };
        for k0 in range(0) {
            for k1 in range(1) {
                for k2 in range(2) {
                    let k2n = k0 * k0 + k1 * k1 + k2 * k2;
                    if k2n == 0 || k2n > r * r {
                        continue;
                    }
                    let w = amplitude / (1.0 + k2n as f64);
                    let a = w * rng.gen_range(-1.0..1.0);
                    let b = w * rng.gen_range(-1.0..1.0);
                    modes.push(([k0 as f64, k1 as f64, k2 as f64], a, b));
                }
            }
        }
        RandomModes { modes }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let z = |i: usize| x.get(i).copied().unwrap_or(0.0);
        self.modes
            .iter()
            .map(|(k, a, b)| {
                let ph = k[0] * z(0) + k[1] * z(1) + k[2] * z(2);
                a * ph.cos() + b * ph.sin()
            })
            .sum()
    }

    /// `sum |a| + |b|`, an upper bound for the sup norm that does not depend on the grid.
    pub fn sup_bound(&self) -> f64 {
        self.modes.iter().map(|(_, a, b)| a.abs() + b.abs()).sum()
    }

    pub fn sample(&self, grid: &TorusGrid) -> GridField {
        GridField::from_fn_scalar(grid, |x| self.value(x))
    }
}

/// Dense random field: independent coefficients on every dealiased mode.
pub fn dense_random_field(grid: &TorusGrid, rng: &mut ChaCha8Rng, rank: Rank) -> Result<GridField> {
    let mask = grid.dealias_mask();
    let comps = (0..rank.components(grid.dim()))
        .map(|_| {
            let coeffs: Vec<Complex64> = mask
                .iter()
                .map(|&keep| if keep { Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) } else { Complex64::default() })
                .collect();
            // real part of the synthesized field
            grid.inverse(&coeffs)
        })
        .collect();
    GridField::from_components(grid, rank, comps)
}

fn trial_rng(seed: u64, kind: EstimateKind, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(kind.stream() * 1_000_003 + trial as u64);
    rng
}

fn ratio(lhs: f64, rhs: f64) -> Option<f64> {
    if rhs > 0.0 {
        Some(lhs / rhs)
    } else {
        None
    }
}

/// Degree-0 multiplier `xi_1 xi_2 / |xi|^2` (zero at the origin).
pub fn riesz_product(f: &GridField) -> Result<GridField> {
    let grid = f.grid();
    let coeffs = f.coefficients();
    let out = coeffs
        .iter()
        .map(|c| {
            c.iter()
                .enumerate()
                .map(|(k, &v)| {
                    let xi = grid.wavevector(k);
                    let x2 = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
                    if x2 == 0.0 {
                        Complex64::default()
                    } else {
                        v * (xi[0] * xi[1] / x2)
                    }
                })
                .collect()
        })
        .collect();
    GridField::from_spectral(grid, f.rank(), out)?.inverse_transform()
}

/// Run `trials` seeded trials of one suite on `grid`.
pub fn verify_estimates(
    kind: EstimateKind,
    grid: &TorusGrid,
    trials: usize,
    seed: u64,
    params: &EstimateParams,
) -> Result<RatioReport> {
    params.check(kind, grid.dim())?;
    let bank = DyadicFilterBank::for_grid(grid)?;
    let n = grid.dim() as f64;
    let p = params.p;
    let np = n / p;
    let res = grid.points_per_axis();
    let mut rows = Vec::with_capacity(trials);
    for trial in 0..trials {
        let mut rng = trial_rng(seed, kind, trial);
        let mut push = |lhs: f64, rhs: f64| rows.push(RatioRow { kind, trial, resolution: res, lhs, rhs, ratio: ratio(lhs, rhs) });
        match kind {
            EstimateKind::Product => {
                let u = RandomModes::draw(&mut rng, grid.dim(), 4, 1.0).sample(grid);
                let v = RandomModes::draw(&mut rng, grid.dim(), 4, 1.0).sample(grid);
                let lhs = bank.besov_value(&u.mul_scalar_field(&v)?, params.sigma, p)?;
                let rhs = bank.besov_value(&u, np - params.nu, p)? * bank.besov_value(&v, params.sigma + params.nu, p)?;
                push(lhs, rhs);
            }
            EstimateKind::Composition => {
                let modes = RandomModes::draw(&mut rng, grid.dim(), 4, 1.0);
                let a = modes.sample(grid).scale(0.5 / modes.sup_bound());
                let fa = a.map(|x| x * x);
                push(bank.besov_value(&fa, params.s, p)?, bank.besov_value(&a, params.s, p)?);
            }
            EstimateKind::Comm1 => {
                let a = RandomModes::draw(&mut rng, grid.dim(), 4, 1.0).sample(grid);
                let w = RandomModes::draw(&mut rng, grid.dim(), 4, 1.0).sample(grid);
                let aw = a.mul_scalar_field(&w)?;
                let mut per_axis = vec![0.0; grid.dim()];
                for j in bank.blocks() {
                    let comm = a.mul_scalar_field(&bank.dyadic_block(&w, j)?)?.sub(&bank.dyadic_block(&aw, j)?)?;
                    let grad = comm.gradient()?.to_physical();
                    let weight = 2f64.powf(j as f64 * params.sigma);
                    for (axis, acc) in per_axis.iter_mut().enumerate() {
                        let comp = GridField::scalar(grid, grad.values(axis).to_vec())?;
                        *acc += weight * comp.lp_norm(p)?;
                    }
                }
                let lhs = per_axis.into_iter().fold(0.0, f64::max);
                let rhs = bank.besov_value(&a.gradient()?, np - params.nu, p)?
                    * bank.besov_value(&w, params.sigma + params.nu, p)?;
                push(lhs, rhs);
            }
            EstimateKind::Comm2 => {
                let q = RandomModes::draw(&mut rng, grid.dim(), 4, 1.0).sample(grid);
                let w = RandomModes::draw(&mut rng, grid.dim(), 4, 1.0).sample(grid);
                let comm = riesz_product(&q.mul_scalar_field(&w)?)?.sub(&q.mul_scalar_field(&riesz_product(&w)?)?)?;
                let lhs = bank.besov_value(&comm, params.sigma + 1.0, p)?;
                let rhs = bank.besov_value(&q.gradient()?, np - params.nu, p)?
                    * bank.besov_value(&w, params.sigma + params.nu, p)?;
                push(lhs, rhs);
            }
            EstimateKind::Bernstein => {
                let u = dense_random_field(grid, &mut rng, Rank::Scalar)?;
                let num = bank.block_lp_norms(&u.gradient()?, p)?;
                let den = bank.block_lp_norms(&u, p)?;
                for (j, (a, b)) in bank.blocks().zip(num.into_iter().zip(den)) {
                    push(a, 2f64.powi(j) * b);
                }
            }
        }
    }
    Ok(RatioReport { kind, params: *params, rows })
}

/// Product estimate with a constant first factor: its homogeneous norm vanishes, so every
/// trial is degenerate.
pub fn product_with_constant(grid: &TorusGrid, c: f64, trials: usize, seed: u64) -> Result<RatioReport> {
    let bank = DyadicFilterBank::for_grid(grid)?;
    let params = EstimateParams::default_for(EstimateKind::Product, grid.dim());
    let np = grid.dim() as f64 / params.p;
    let u = GridField::constant_scalar(grid, c);
    let mut rows = Vec::with_capacity(trials);
    for trial in 0..trials {
        let mut rng = trial_rng(seed, EstimateKind::Product, trial);
        let v = RandomModes::draw(&mut rng, grid.dim(), 4, 1.0).sample(grid);
        let lhs = bank.besov_value(&u.mul_scalar_field(&v)?, params.sigma, params.p)?;
        let rhs = bank.besov_value(&u, np - params.nu, params.p)? * bank.besov_value(&v, params.sigma, params.p)?;
        rows.push(RatioRow {
            kind: EstimateKind::Product,
            trial,
            resolution: grid.points_per_axis(),
            lhs,
            rhs,
            ratio: ratio(lhs, rhs),
        });
    }
    Ok(RatioReport { kind: EstimateKind::Product, params, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_constraints() {
        let g = TorusGrid::new(2, 16).unwrap();
        let bad = EstimateParams { sigma: 1.5, nu: 0.0, s: 1.0, p: 2.0 };
        assert!(matches!(
            verify_estimates(EstimateKind::Product, &g, 1, 0, &bad),
            Err(CnsError::EstimateIndex { .. })
        ));
        let bad = EstimateParams { sigma: -1.0, nu: 0.0, s: 1.0, p: 2.0 };
        assert!(verify_estimates(EstimateKind::Product, &g, 1, 0, &bad).is_err());
        // the commutator range extends one unit further down
        assert!(verify_estimates(EstimateKind::Comm1, &TorusGrid::new(2, 32).unwrap(), 1, 0, &bad).is_ok());
        let bad = EstimateParams { s: 0.0, ..EstimateParams::default_for(EstimateKind::Composition, 2) };
        assert!(verify_estimates(EstimateKind::Composition, &g, 1, 0, &bad).is_err());
    }

    #[test]
    fn single_mode_bernstein() {
        let g = TorusGrid::new(2, 64).unwrap();
        let bank = DyadicFilterBank::for_grid(&g).unwrap();
        let u = GridField::from_fn_scalar(&g, |x| (3.0 * x[0] + 4.0 * x[1]).cos());
        let num = bank.block_lp_norms(&u.gradient().unwrap(), 2.0).unwrap();
        let den = bank.block_lp_norms(&u, 2.0).unwrap();
        for (j, (a, b)) in bank.blocks().zip(num.into_iter().zip(den)) {
            // blocks outside the annulus of |xi| = 5 hold only round-off
            if b > 1e-10 {
                assert!((a / (2f64.powi(j) * b) - 5.0 / 2f64.powi(j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_factor_is_degenerate() {
        let g = TorusGrid::new(2, 32).unwrap();
        let r = product_with_constant(&g, 2.0, 3, 1).unwrap();
        assert_eq!(r.degenerate(), 3);
        assert!(r.rows.iter().all(|row| row.lhs > 0.0 && row.rhs == 0.0));
    }

    #[test]
    fn riesz_symbol_on_mode() {
        let g = TorusGrid::new(2, 16).unwrap();
        let f = GridField::from_fn_scalar(&g, |x| (x[0] + 2.0 * x[1]).sin());
        let want = f.scale(2.0 / 5.0);
        assert!(riesz_product(&f).unwrap().max_diff(&want).unwrap() < 1e-14);
    }
}
