//! Homogeneous Littlewood-Paley decomposition on the discrete frequency lattice.
//!
//! The radial profile is built from `h(t) = exp(-1/t)`:
//! `psi(r) = 1` for `r <= 1/2`, `0` for `r >= 1`, smooth in between, and
//! `phi_hat(r) = psi(r/2) - psi(r)` is supported in `(1/2, 2)`. Because the blocks are
//! differences of consecutive dilates of `psi`, every finite sum of blocks telescopes.

use num_complex::Complex64;

use crate::error::{CnsError, Result};
use crate::spectral::{lp_norm_components, GridField, Rank, TorusGrid};

/// `h(t)/(h(t)+h(1-t))`, the C-infinity step from 0 to 1 on `[0, 1]`.
pub fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / t).exp();
    let b = (-1.0 / (1.0 - t)).exp();
    a / (a + b)
}

/// Low-pass radial profile.
pub fn psi(r: f64) -> f64 {
    1.0 - smooth_step(2.0 * r - 1.0)
}

/// Annular radial profile `psi(r/2) - psi(r)`.
pub fn phi_hat(r: f64) -> f64 {
    psi(0.5 * r) - psi(r)
}

/// `Phi_hat(xi) = psi(|xi|/2)`, so that `Phi_hat + sum_{j>=1} phi_hat(2^-j xi) = 1`.
pub fn big_phi_hat(r: f64) -> f64 {
    psi(0.5 * r)
}

fn pow2(j: i32) -> f64 {
    2f64.powi(j)
}

/// Regularity/integrability pair of a `B^s_{p,1}` norm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BesovIndex {
    pub s: f64,
    pub p: f64,
}

impl BesovIndex {
    /// Checked constructor: `1 < p < inf` and `s <= n/p`.
    pub fn new(s: f64, p: f64, dim: usize) -> Result<Self> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(CnsError::BesovIndex { s, p, dim, reason: "p must lie in (1, inf)" });
        }
        if s > dim as f64 / p + 1e-12 {
            return Err(CnsError::BesovIndex { s, p, dim, reason: "s exceeds n/p" });
        }
        Ok(Self { s, p })
    }

    /// `(n/p + shift, p)`, e.g. shift -1 for velocities, -2 for energies.
    pub fn critical(dim: usize, p: f64, shift: f64) -> Result<Self> {
        Self::new(dim as f64 / p + shift, p, dim)
    }
}

/// Value of a truncated Besov sum together with the `L^p` mass it leaves out.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BesovNorm {
    pub value: f64,
    /// `L^p` norm of the low remainder (mean mode and anything below block `j_min`)
    pub low_mass: f64,
    /// `L^p` norm of the part not covered by blocks up to `j_max`
    pub high_mass: f64,
}

/// Discrete filter bank with blocks `j_min..=j_max`.
#[derive(Clone, Debug)]
pub struct DyadicFilterBank {
    grid: TorusGrid,
    j_min: i32,
    j_max: i32,
    radius: Vec<f64>,
    /// `|xi'|^2` with the odd-derivative Nyquist convention, used for Hessian norms
    radius_odd_sq: Vec<f64>,
    weights: Vec<Vec<f64>>,
    low: Vec<f64>,
    high: Vec<f64>,
}

impl DyadicFilterBank {
    pub fn new(grid: &TorusGrid, j_min: i32, j_max: i32) -> Result<Self> {
        let nyquist = grid.nyquist_radius();
        if j_min > 0 || j_max < 0 || j_min > j_max || pow2(j_max + 1) > nyquist {
            return Err(CnsError::BandExceedsNyquist { j_min, j_max, nyquist });
        }
        let radius = grid.wavenumber_norms();
        let mut radius_odd_sq = vec![0.0; grid.len()];
        for a in 0..grid.dim() {
            for (acc, z) in radius_odd_sq.iter_mut().zip(grid.derivative_symbols(a)) {
                *acc += z.im * z.im;
            }
        }
        let weights = (j_min..=j_max)
            .map(|j| radius.iter().map(|&r| phi_hat(r / pow2(j))).collect())
            .collect();
        let low = radius.iter().map(|&r| psi(r / pow2(j_min))).collect();
        let high = radius.iter().map(|&r| 1.0 - psi(r / pow2(j_max + 1))).collect();
        Ok(Self { grid: grid.clone(), j_min, j_max, radius, radius_odd_sq, weights, low, high })
    }

    /// Widest bank for the grid: `j_min` at the first lattice shell (capped at 0),
    /// `j_max` the largest block whose support stays inside the Nyquist radius.
    pub fn for_grid(grid: &TorusGrid) -> Result<Self> {
        let j_min = (grid.frequency_unit().log2().floor() as i32).min(0);
        let j_max = (grid.nyquist_radius().log2().floor() as i32) - 1;
        Self::new(grid, j_min, j_max)
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn j_min(&self) -> i32 {
        self.j_min
    }

    pub fn j_max(&self) -> i32 {
        self.j_max
    }

    pub fn blocks(&self) -> impl Iterator<Item = i32> {
        self.j_min..=self.j_max
    }

    /// Smallest and largest `|xi|` on which the blocks sum to one.
    pub fn resolved_band(&self) -> (f64, f64) {
        (pow2(self.j_min), pow2(self.j_max))
    }

    /// `phi_hat(2^-j xi)` on every spectral slot.
    pub fn block_weights(&self, j: i32) -> Result<&[f64]> {
        self.check_block(j)?;
        Ok(&self.weights[(j - self.j_min) as usize])
    }

    /// Sum of block weights per slot.
    pub fn weight_sum(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.grid.len()];
        for w in &self.weights {
            acc.iter_mut().zip(w).for_each(|(a, b)| *a += b);
        }
        acc
    }

    pub fn radius(&self) -> &[f64] {
        &self.radius
    }

    fn check_block(&self, j: i32) -> Result<()> {
        if j < self.j_min || j > self.j_max {
            return Err(CnsError::BlockOutOfRange { j, j_min: self.j_min, j_max: self.j_max });
        }
        Ok(())
    }

    fn check_grid(&self, f: &GridField) -> Result<()> {
        if *f.grid() != self.grid {
            return Err(CnsError::ShapeMismatch("field and filter bank live on different grids".into()));
        }
        Ok(())
    }

    fn multiply(&self, f: &GridField, weights: impl Fn(usize) -> f64) -> Result<GridField> {
        self.check_grid(f)?;
        let coeffs: Vec<Vec<Complex64>> =
            f.coefficients().into_iter().map(|c| c.iter().enumerate().map(|(k, z)| z * weights(k)).collect()).collect();
        let out = GridField::from_spectral(&self.grid, f.rank(), coeffs)?;
        Ok(match f.representation() {
            crate::spectral::Representation::Spectral => out,
            crate::spectral::Representation::Physical => out.inverse_transform()?,
        })
    }

    /// `Delta_j f`, in the representation of `f`.
    pub fn dyadic_block(&self, f: &GridField, j: i32) -> Result<GridField> {
        let w = self.block_weights(j)?;
        self.multiply(f, |k| w[k])
    }

    /// `S_m f`, multiplication by `Phi_hat(2^-m xi)`. Any integer `m` is accepted.
    pub fn low_freq_cutoff(&self, f: &GridField, m: i32) -> Result<GridField> {
        let scale = pow2(-m);
        self.multiply(f, |k| big_phi_hat(self.radius[k] * scale))
    }

    /// Part of `f` below the first block.
    pub fn low_remainder(&self, f: &GridField) -> Result<GridField> {
        self.multiply(f, |k| self.low[k])
    }

    /// Part of `f` above the last block.
    pub fn high_remainder(&self, f: &GridField) -> Result<GridField> {
        self.multiply(f, |k| self.high[k])
    }

    /// `L^2` norms of every block by Parseval, from per-slot `sum_c |c_k|^2`.
    fn block_l2_from_power(&self, power: &[f64]) -> Vec<f64> {
        let vol = self.grid.volume();
        self.weights
            .iter()
            .map(|w| (w.iter().zip(power).map(|(x, p)| x * x * p).sum::<f64>() * vol).sqrt())
            .collect()
    }

    fn remainder_l2(&self, weights: &[f64], power: &[f64]) -> f64 {
        (weights.iter().zip(power).map(|(x, p)| x * x * p).sum::<f64>() * self.grid.volume()).sqrt()
    }

    /// `L^p` norm of every block, indexed from `j_min`.
    pub fn block_lp_norms(&self, f: &GridField, p: f64) -> Result<Vec<f64>> {
        self.check_grid(f)?;
        if p.is_nan() || p < 1.0 {
            return Err(CnsError::InvalidParameter(format!("L^p exponent {p} < 1")));
        }
        let coeffs = f.coefficients();
        if p == 2.0 {
            return Ok(self.block_l2_from_power(&power(&coeffs)));
        }
        Ok(self.weights.iter().map(|w| self.weighted_lp(&coeffs, w, p)).collect())
    }

    fn weighted_lp(&self, coeffs: &[Vec<Complex64>], w: &[f64], p: f64) -> f64 {
        let comps: Vec<Vec<f64>> = coeffs
            .iter()
            .map(|c| {
                let filtered: Vec<Complex64> = c.iter().zip(w).map(|(z, x)| z * x).collect();
                self.grid.inverse(&filtered)
            })
            .collect();
        lp_norm_components(&comps, p, self.grid.cell_volume())
    }

    /// `sum_j 2^{js} ||Delta_j f||_p` with truncation diagnostics. `p = 2` uses Parseval.
    pub fn besov_norm(&self, f: &GridField, s: f64, p: f64) -> Result<BesovNorm> {
        self.check_grid(f)?;
        let coeffs = f.coefficients();
        let blocks = self.block_lp_norms(f, p)?;
        let value = self.weighted_sum(&blocks, s);
        let (low_mass, high_mass) = if p == 2.0 {
            let pw = power(&coeffs);
            (self.remainder_l2(&self.low, &pw), self.remainder_l2(&self.high, &pw))
        } else {
            (self.weighted_lp(&coeffs, &self.low, p), self.weighted_lp(&coeffs, &self.high, p))
        };
        Ok(BesovNorm { value, low_mass, high_mass })
    }

    pub fn besov(&self, f: &GridField, idx: BesovIndex) -> Result<BesovNorm> {
        self.besov_norm(f, idx.s, idx.p)
    }

    /// Besov value only.
    pub fn besov_value(&self, f: &GridField, s: f64, p: f64) -> Result<f64> {
        self.check_grid(f)?;
        let blocks = self.block_lp_norms(f, p)?;
        Ok(self.weighted_sum(&blocks, s))
    }

    fn weighted_sum(&self, blocks: &[f64], s: f64) -> f64 {
        self.blocks().zip(blocks).map(|(j, b)| pow2(j).powf(s) * b).sum()
    }

    /// Besov value of the Hessian (all second derivatives, Frobenius) of `f`.
    pub fn hessian_besov_value(&self, f: &GridField, s: f64, p: f64) -> Result<f64> {
        self.check_grid(f)?;
        let coeffs = f.coefficients();
        self.hessian_besov_from_coeffs(&coeffs, s, p)
    }

    fn hessian_besov_from_coeffs(&self, coeffs: &[Vec<Complex64>], s: f64, p: f64) -> Result<f64> {
        if p == 2.0 {
            let pw: Vec<f64> = power(coeffs).iter().zip(&self.radius_odd_sq).map(|(x, r)| x * r * r).collect();
            return Ok(self.weighted_sum(&self.block_l2_from_power(&pw), s));
        }
        let d = self.grid.dim();
        let symbols: Vec<Vec<Complex64>> = (0..d).map(|a| self.grid.derivative_symbols(a)).collect();
        let mut hess = Vec::with_capacity(coeffs.len() * d * d);
        for c in coeffs {
            for a in 0..d {
                for b in 0..d {
                    hess.push(c.iter().enumerate().map(|(k, z)| z * symbols[a][k] * symbols[b][k]).collect::<Vec<_>>());
                }
            }
        }
        let blocks: Vec<f64> = self.weights.iter().map(|w| self.weighted_lp(&hess, w, p)).collect();
        Ok(self.weighted_sum(&blocks, s))
    }

    /// Besov value computed from coefficients directly (`p = 2` only uses Parseval).
    fn besov_from_coeffs(&self, coeffs: &[Vec<Complex64>], s: f64, p: f64) -> f64 {
        let blocks: Vec<f64> = if p == 2.0 {
            self.block_l2_from_power(&power(coeffs))
        } else {
            self.weights.iter().map(|w| self.weighted_lp(coeffs, w, p)).collect()
        };
        self.weighted_sum(&blocks, s)
    }

    /// Discrete `E_p(T)` norm of a pair of trajectories sampled at uniformly spaced `times`.
    ///
    /// `sup_t |u|_{B^{n/p-1}} + int |d_t u|_{B^{n/p-1}} + int |D^2 u|_{B^{n/p-1}}` plus the
    /// same for `K` with index `n/p-2`. Time derivatives use second-order differences
    /// (one-sided at the ends), integrals the trapezoid rule.
    pub fn ep_norm(&self, u: &[GridField], k: &[GridField], times: &[f64], p: f64) -> Result<f64> {
        Ok(self.ep_norm_parts(u, k, times, p)?.total())
    }

    pub fn ep_norm_parts(&self, u: &[GridField], k: &[GridField], times: &[f64], p: f64) -> Result<EpNorm> {
        if u.len() != times.len() || k.len() != times.len() {
            return Err(CnsError::TimeGrid(format!(
                "{} velocity and {} energy samples for {} times",
                u.len(),
                k.len(),
                times.len()
            )));
        }
        let dt = uniform_step(times)?;
        let n = self.grid.dim() as f64;
        let su = n / p - 1.0;
        let sk = n / p - 2.0;
        let uc: Vec<Vec<Vec<Complex64>>> = u.iter().map(|f| f.coefficients()).collect();
        let kc: Vec<Vec<Vec<Complex64>>> = k.iter().map(|f| f.coefficients()).collect();
        let (u_sup, u_dt, u_hess) = self.trajectory_terms(&uc, dt, su, p)?;
        let (k_sup, k_dt, k_hess) = self.trajectory_terms(&kc, dt, sk, p)?;
        Ok(EpNorm { u_sup, u_dt, u_hess, k_sup, k_dt, k_hess })
    }

    fn trajectory_terms(&self, traj: &[Vec<Vec<Complex64>>], dt: f64, s: f64, p: f64) -> Result<(f64, f64, f64)> {
        let sup = traj.iter().map(|c| self.besov_from_coeffs(c, s, p)).fold(0.0, f64::max);
        if traj.len() < 2 {
            return Ok((sup, 0.0, 0.0));
        }
        let derivs: Vec<f64> = (0..traj.len())
            .map(|i| self.besov_from_coeffs(&time_derivative(traj, i, dt), s, p))
            .collect();
        let hess = traj
            .iter()
            .map(|c| self.hessian_besov_from_coeffs(c, s, p))
            .collect::<Result<Vec<f64>>>()?;
        Ok((sup, trapezoid(&derivs, dt), trapezoid(&hess, dt)))
    }
}

/// The six contributions to the discrete `E_p` norm.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpNorm {
    pub u_sup: f64,
    pub u_dt: f64,
    pub u_hess: f64,
    pub k_sup: f64,
    pub k_dt: f64,
    pub k_hess: f64,
}

impl EpNorm {
    pub fn total(&self) -> f64 {
        self.u_sup + self.u_dt + self.u_hess + self.k_sup + self.k_dt + self.k_hess
    }
}

pub(crate) fn power(coeffs: &[Vec<Complex64>]) -> Vec<f64> {
    let len = coeffs[0].len();
    let mut out = vec![0.0; len];
    for c in coeffs {
        out.iter_mut().zip(c).for_each(|(o, z)| *o += z.norm_sqr());
    }
    out
}

/// Step of a uniform time grid (0 for a single sample).
pub fn uniform_step(times: &[f64]) -> Result<f64> {
    if times.is_empty() {
        return Err(CnsError::TimeGrid("empty time grid".into()));
    }
    if times.len() == 1 {
        return Ok(0.0);
    }
    let dt = times[1] - times[0];
    if dt <= 0.0 {
        return Err(CnsError::TimeGrid("times must increase".into()));
    }
    for w in times.windows(2) {
        if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.max(1.0) {
            return Err(CnsError::TimeGrid("time grid is not uniform".into()));
        }
    }
    Ok(dt)
}

pub(crate) fn trapezoid(values: &[f64], dt: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    dt * (inner + 0.5 * (values[0] + values[values.len() - 1]))
}

/// Second-order finite difference of a coefficient trajectory at sample `i`.
fn time_derivative(traj: &[Vec<Vec<Complex64>>], i: usize, dt: f64) -> Vec<Vec<Complex64>> {
    let n = traj.len();
    let comb = |terms: &[(usize, f64)]| -> Vec<Vec<Complex64>> {
        (0..traj[0].len())
            .map(|c| {
                (0..traj[0][c].len())
                    .map(|k| terms.iter().map(|&(idx, w)| traj[idx][c][k] * w).sum::<Complex64>() / dt)
                    .collect()
            })
            .collect()
    };
    if n == 2 {
        return comb(&[(0, -1.0), (1, 1.0)]);
    }
    if i == 0 {
        comb(&[(0, -1.5), (1, 2.0), (2, -0.5)])
    } else if i == n - 1 {
        comb(&[(n - 1, 1.5), (n - 2, -2.0), (n - 3, 0.5)])
    } else {
        comb(&[(i + 1, 0.5), (i - 1, -0.5)])
    }
}

/// Bernstein ratio `||grad Delta_j u||_p / (2^j ||Delta_j u||_p)` for every block with
/// content above round-off (`1e-12` of the largest block); `None` for the others.
pub fn bernstein_ratios(bank: &DyadicFilterBank, u: &GridField, p: f64) -> Result<Vec<(i32, Option<f64>)>> {
    if u.rank() == Rank::Matrix {
        return Err(CnsError::ShapeMismatch("Bernstein check needs a scalar or vector field".into()));
    }
    let grad = u.gradient()?;
    let num = bank.block_lp_norms(&grad, p)?;
    let den = bank.block_lp_norms(u, p)?;
    let floor = 1e-12 * den.iter().copied().fold(0.0, f64::max);
    Ok(bank
        .blocks()
        .zip(num.iter().zip(&den))
        .map(|(j, (&a, &b))| (j, if b > floor { Some(a / (pow2(j) * b)) } else { None }))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::GridField;
    use std::f64::consts::PI;

    #[test]
    fn profile_shape() {
        assert_eq!(psi(0.0), 1.0);
        assert_eq!(psi(0.5), 1.0);
        assert_eq!(psi(1.0), 0.0);
        assert_eq!(psi(3.0), 0.0);
        assert!((psi(0.75) - 0.5).abs() < 1e-15);
        assert_eq!(phi_hat(0.5), 0.0);
        assert_eq!(phi_hat(2.0), 0.0);
        assert_eq!(phi_hat(1.0), 1.0);
        for i in 0..200 {
            let r = i as f64 * 0.01;
            assert!((0.0..=1.0).contains(&phi_hat(r)));
            assert!(psi(r) >= psi(r + 0.01));
        }
    }

    #[test]
    fn bank_range_checks() {
        let g = TorusGrid::new(2, 64).unwrap();
        assert!(DyadicFilterBank::new(&g, 0, 4).is_ok());
        assert!(DyadicFilterBank::new(&g, 0, 5).is_err());
        assert!(DyadicFilterBank::new(&g, 1, 4).is_err());
        let bank = DyadicFilterBank::for_grid(&g).unwrap();
        assert_eq!((bank.j_min(), bank.j_max()), (0, 4));
        assert!(bank.block_weights(5).is_err());
        let f = GridField::zeros(&g, Rank::Scalar);
        assert!(bank.dyadic_block(&f, -1).is_err());
    }

    #[test]
    fn zero_frequency_and_cutoffs() {
        let g = TorusGrid::new(2, 32).unwrap();
        let bank = DyadicFilterBank::for_grid(&g).unwrap();
        for j in bank.blocks() {
            assert_eq!(bank.block_weights(j).unwrap()[0], 0.0);
        }
        assert_eq!(big_phi_hat(0.0), 1.0);
        let c = GridField::constant_scalar(&g, 2.5);
        for m in -3..5 {
            let s = bank.low_freq_cutoff(&c, m).unwrap();
            assert!(s.max_diff(&c).unwrap() < 1e-14);
        }
        // |xi| = 2^{m+2} is outside the support of Phi_hat(2^-m .)
        let f = GridField::from_fn_scalar(&g, |x| (8.0 * x[0]).cos());
        assert!(bank.low_freq_cutoff(&f, 1).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn single_mode_block_norm() {
        let g = TorusGrid::new(2, 32).unwrap();
        let bank = DyadicFilterBank::for_grid(&g).unwrap();
        // |xi| = 3 lies in blocks 1 (weight phi_hat(1.5)) and 2 (weight phi_hat(0.75))
        let f = GridField::from_fn_scalar(&g, |x| (3.0 * x[1]).sin());
        let l2 = (2.0 * PI * PI).sqrt();
        let s = 0.5;
        let got = bank.besov_norm(&f, s, 2.0).unwrap();
        let want = 2f64.powf(s) * phi_hat(1.5) * l2 + 4f64.powf(s) * phi_hat(0.75) * l2;
        assert!((got.value - want).abs() < 1e-12 * want);
        assert!(got.low_mass < 1e-14 && got.high_mass < 1e-14);
        let phys = bank.block_lp_norms(&f, 2.000000001).unwrap();
        let spec = bank.block_lp_norms(&f, 2.0).unwrap();
        for (a, b) in phys.iter().zip(&spec) {
            assert!((a - b).abs() < 1e-6 * (1.0 + b));
        }
    }

    #[test]
    fn mean_shows_up_as_low_mass() {
        let g = TorusGrid::new(2, 16).unwrap();
        let bank = DyadicFilterBank::for_grid(&g).unwrap();
        let f = GridField::constant_scalar(&g, 1.0);
        let b = bank.besov_norm(&f, 0.0, 2.0).unwrap();
        assert_eq!(b.value, 0.0);
        assert!((b.low_mass - 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn time_grid_errors() {
        let g = TorusGrid::new(2, 16).unwrap();
        let bank = DyadicFilterBank::for_grid(&g).unwrap();
        let u = vec![GridField::zeros(&g, Rank::Vector); 3];
        let k = vec![GridField::zeros(&g, Rank::Scalar); 2];
        assert!(bank.ep_norm(&u, &k, &[0.0, 0.1, 0.2], 2.0).is_err());
        let k = vec![GridField::zeros(&g, Rank::Scalar); 3];
        assert!(bank.ep_norm(&u, &k, &[0.0, 0.1, 0.3], 2.0).is_err());
        assert_eq!(bank.ep_norm(&u, &k, &[0.0, 0.1, 0.2], 2.0).unwrap(), 0.0);
    }

    #[test]
    fn besov_index_checks() {
        assert!(BesovIndex::new(0.0, 2.0, 2).is_ok());
        assert!(BesovIndex::new(1.5, 2.0, 2).is_err());
        assert!(BesovIndex::new(0.0, 1.0, 2).is_err());
        let c = BesovIndex::critical(3, 2.0, -1.0).unwrap();
        assert!((c.s - 0.5).abs() < 1e-15);
    }
}
