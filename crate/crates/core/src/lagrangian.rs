//! Lagrangian-coordinate solver: the linear parabolic pair for `(u, K)`, the nonlinear
//! terms `I_1..I_8`, the fixed-point map and its Picard iteration, and reconstruction of
//! the density from the flow.
//!
//! The velocity equation is advanced for the momentum `m = rho0 u`, which keeps the
//! divergence structure intact so that `int rho0 u` is conserved to round-off.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::constitutive::{ConstitutiveLaw, EllipticityConstants, Which};
use crate::error::{CnsError, Result};
use crate::flow::{self, matmul, matvec, FlowMap, VelocityTimeline};
use crate::imex::{self, Principal, Symbols};
use crate::littlewood_paley::{DyadicFilterBank, EpNorm};
use crate::spectral::{GridField, Rank, TorusGrid};

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub dt: f64,
    pub horizon: f64,
    pub picard_tol: f64,
    pub max_picard: usize,
    /// threshold `c~` of the smallness monitor `int ||Dv||_{B^{n/p}}`
    pub smallness_c: f64,
    /// fixed cutoff index, or `None` to scan for the smallest admissible one
    pub cutoff_m: Option<i32>,
    pub eta: f64,
    pub p: f64,
    /// seed of the random test fields used for the multiplier-norm sample
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            dt: 0.005,
            horizon: 0.1,
            picard_tol: 1e-8,
            max_picard: 30,
            smallness_c: 0.1,
            cutoff_m: None,
            eta: 1e-2,
            p: 2.0,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.horizon >= self.dt - 1e-12) || !(self.picard_tol > 0.0) {
            return Err(CnsError::InvalidParameter(format!(
                "need dt > 0, T >= dt, picard_tol > 0 (dt={}, T={}, tol={})",
                self.dt, self.horizon, self.picard_tol
            )));
        }
        if !(self.p >= 1.0) {
            return Err(CnsError::InvalidParameter(format!("p={} < 1", self.p)));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        ((self.horizon / self.dt) + 1e-9).floor() as usize
    }
}

/// Initial data `(rho0, u0, K0)` of the Lagrangian system.
#[derive(Clone, Debug)]
pub struct LagrangianData {
    pub rho0: GridField,
    pub u0: GridField,
    pub k0: GridField,
}

impl LagrangianData {
    /// `K0 = rho0 (theta0 + |u0|^2 / 2)`.
    pub fn from_temperature(rho0: GridField, u0: GridField, theta0: &GridField) -> Result<Self> {
        let rho = rho0.to_physical();
        let u = u0.to_physical();
        let th = theta0.to_physical();
        let uc = u.physical()?;
        let k = (0..rho.grid().len())
            .map(|i| {
                let u2: f64 = uc.iter().map(|c| c[i] * c[i]).sum();
                rho.values(0)[i] * (th.values(0)[i] + 0.5 * u2)
            })
            .collect();
        let k0 = GridField::scalar(rho.grid(), k)?;
        Ok(LagrangianData { rho0: rho, u0: u, k0 })
    }

    pub fn grid(&self) -> &TorusGrid {
        self.rho0.grid()
    }

    fn check(&self) -> Result<()> {
        let g = self.grid();
        if self.u0.grid() != g || self.k0.grid() != g {
            return Err(CnsError::ShapeMismatch("initial data on different grids".into()));
        }
        if self.rho0.rank() != Rank::Scalar || self.u0.rank() != Rank::Vector || self.k0.rank() != Rank::Scalar {
            return Err(CnsError::ShapeMismatch("initial data must be (scalar, vector, scalar)".into()));
        }
        let min = self.rho0.to_physical().values(0).iter().copied().fold(f64::INFINITY, f64::min);
        if !(min > 0.0) {
            return Err(CnsError::Vacuum { time: 0.0, min_density: min });
        }
        Ok(())
    }
}

/// One sampled time of a Lagrangian solution.
#[derive(Clone, Debug)]
pub struct LagrangianState {
    pub rho0: GridField,
    pub a0: GridField,
    pub u_bar: GridField,
    pub k_bar: GridField,
    pub t: f64,
}

/// `(u, K)` sampled at `t_n = n dt`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub u: Vec<GridField>,
    pub k: Vec<GridField>,
}

impl Trajectory {
    pub fn zeros(grid: &TorusGrid, dt: f64, steps: usize) -> Self {
        Trajectory {
            times: (0..=steps).map(|n| n as f64 * dt).collect(),
            u: vec![GridField::zeros(grid, Rank::Vector); steps + 1],
            k: vec![GridField::zeros(grid, Rank::Scalar); steps + 1],
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dt(&self) -> f64 {
        if self.times.len() > 1 {
            self.times[1] - self.times[0]
        } else {
            0.0
        }
    }

    pub fn velocity_timeline(&self) -> Result<VelocityTimeline> {
        VelocityTimeline::new(self.times.clone(), self.u.clone())
    }

    pub fn state(&self, n: usize, rho0: &GridField) -> LagrangianState {
        LagrangianState {
            rho0: rho0.clone(),
            a0: rho0.map(|r| r - 1.0),
            u_bar: self.u[n].clone(),
            k_bar: self.k[n].clone(),
            t: self.times[n],
        }
    }

    /// Componentwise difference of two trajectories on the same time grid.
    pub fn difference(&self, other: &Trajectory) -> Result<Trajectory> {
        if self.len() != other.len() {
            return Err(CnsError::TimeGrid("trajectories differ in length".into()));
        }
        Ok(Trajectory {
            times: self.times.clone(),
            u: self.u.iter().zip(&other.u).map(|(a, b)| a.sub(b)).collect::<Result<_>>()?,
            k: self.k.iter().zip(&other.k).map(|(a, b)| a.sub(b)).collect::<Result<_>>()?,
        })
    }

    pub fn ep_norm(&self, bank: &DyadicFilterBank, p: f64) -> Result<f64> {
        bank.ep_norm(&self.u, &self.k, &self.times, p)
    }

    pub fn ep_parts(&self, bank: &DyadicFilterBank, p: f64) -> Result<EpNorm> {
        bank.ep_norm_parts(&self.u, &self.k, &self.times, p)
    }

    /// Write a checkpoint: one header line, then one snapshot per stored field.
    pub fn write_checkpoint(&self, path: &Path) -> Result<()> {
        let mut fields = Vec::new();
        for (n, t) in self.times.iter().enumerate() {
            fields.push((format!("u {t}"), self.u[n].clone()));
            fields.push((format!("K {t}"), self.k[n].clone()));
        }
        crate::snapshot::write_checkpoint(path, &fields)
    }
}

/// Coefficient fields frozen at the initial density.
#[derive(Clone, Debug)]
pub struct Medium {
    law: ConstitutiveLaw,
    rho0: GridField,
    inv_rho0: GridField,
    mu0: GridField,
    la0: GridField,
    k0: GridField,
    /// `pi1(rho0) / rho0`
    pi_c: GridField,
    symbols: Symbols,
    momentum_principal: Principal,
    energy_principal: Principal,
}

impl Medium {
    pub fn new(law: &ConstitutiveLaw, rho0: &GridField) -> Result<Self> {
        let rho0 = rho0.to_physical();
        let inv_rho0 = rho0.map(|r| 1.0 / r);
        let mu0 = law.evaluate_raw(Which::Mu, &rho0)?;
        let la0 = law.evaluate_raw(Which::Lambda, &rho0)?;
        let k0 = law.evaluate_raw(Which::K, &rho0)?;
        let pi1 = law.evaluate_raw(Which::Pi1, &rho0)?;
        let pi_c = pi1.mul_scalar_field(&inv_rho0)?;
        let max_of = |f: &GridField| -> f64 { f.values(0).iter().copied().fold(f64::NEG_INFINITY, f64::max) };
        let a_mu = mu0.mul_scalar_field(&inv_rho0)?;
        let a_nu = mu0.scale(2.0).add(&la0)?.mul_scalar_field(&inv_rho0)?;
        let c_k = k0.mul_scalar_field(&inv_rho0)?;
        let momentum_principal = Principal::Vector { mu: max_of(&a_mu), nu: max_of(&a_nu) };
        let energy_principal = Principal::Scalar { kappa: max_of(&c_k) };
        Ok(Medium {
            law: law.clone(),
            symbols: Symbols::new(rho0.grid()),
            rho0,
            inv_rho0,
            mu0,
            la0,
            k0,
            pi_c,
            momentum_principal,
            energy_principal,
        })
    }

    pub fn grid(&self) -> &TorusGrid {
        self.rho0.grid()
    }

    pub fn law(&self) -> &ConstitutiveLaw {
        &self.law
    }

    pub fn rho0(&self) -> &GridField {
        &self.rho0
    }

    pub fn principal_parts(&self) -> (Principal, Principal) {
        (self.momentum_principal, self.energy_principal)
    }

    /// `div(2 mu0 D(u) + lambda0 div u Id)`, dealiased.
    fn viscous_divergence(&self, u: &GridField) -> Result<GridField> {
        let du = u.filtered().gradient()?;
        let stress = stress_from_gradient(&du, &self.mu0, &self.la0)?;
        Ok(stress.divergence()?.filtered())
    }

    /// `div(k0 grad(K / rho0))`, dealiased.
    fn heat_divergence(&self, k: &GridField) -> Result<GridField> {
        let grad = k.mul_scalar_field(&self.inv_rho0)?.filtered().gradient()?;
        Ok(grad.mul_scalar_field(&self.k0)?.divergence()?.filtered())
    }

    /// `grad(pi1(rho0)/rho0 K)`, dealiased.
    fn pressure_gradient(&self, k: &GridField) -> Result<GridField> {
        k.mul_scalar_field(&self.pi_c)?.filtered().gradient()
    }

    fn momentum_remainder(&self, m: &GridField) -> Result<GridField> {
        let u = m.mul_scalar_field(&self.inv_rho0)?;
        self.viscous_divergence(&u)?.sub(&self.symbols.apply(self.momentum_principal, m))
    }

    fn energy_remainder(&self, k: &GridField) -> Result<GridField> {
        self.heat_divergence(k)?.sub(&self.symbols.apply(self.energy_principal, k))
    }
}

/// `2 mu D + lambda tr(D) Id` from a velocity gradient, pointwise.
fn stress_from_gradient(du: &GridField, mu: &GridField, la: &GridField) -> Result<GridField> {
    let grid = du.grid();
    let d = grid.dim();
    let g = du.to_physical();
    let gc = g.physical()?;
    let (mu, la) = (mu.to_physical(), la.to_physical());
    let (mv, lv) = (mu.values(0), la.values(0));
    let mut out = vec![vec![0.0; grid.len()]; d * d];
    for k in 0..grid.len() {
        let tr: f64 = (0..d).map(|i| gc[i * d + i][k]).sum();
        for i in 0..d {
            for j in 0..d {
                let sym = 0.5 * (gc[i * d + j][k] + gc[j * d + i][k]);
                out[i * d + j][k] = 2.0 * mv[k] * sym + if i == j { lv[k] * tr } else { 0.0 };
            }
        }
    }
    GridField::matrix(grid, out)
}

/// Spatial part of `L_{rho0}`: `-rho0^{-1} div(2 mu(rho0) D(u) + lambda(rho0) div u Id)`.
pub fn apply_l(u: &GridField, rho0: &GridField, law: &ConstitutiveLaw) -> Result<GridField> {
    let med = Medium::new(law, rho0)?;
    Ok(med.viscous_divergence(u)?.mul_scalar_field(&med.inv_rho0)?.scale(-1.0).filtered())
}

/// Spatial part of `H_{rho0}`: `-div(k(rho0) grad(K / rho0))`.
pub fn apply_h(k: &GridField, rho0: &GridField, law: &ConstitutiveLaw) -> Result<GridField> {
    let med = Medium::new(law, rho0)?;
    Ok(med.heat_divergence(k)?.scale(-1.0))
}

/// Solve the linear pair with momentum-form velocity sources `su` (so that
/// `d_t (rho0 u) = div(2 mu0 D u + lambda0 div u Id) - grad(pi_c K) + su`) and energy
/// sources `sk`. `K` is integrated first; its trajectory then enters the velocity
/// equation as a known source.
fn solve_linear_momentum_form(
    med: &Medium,
    u0: &GridField,
    k0: &GridField,
    su: &[GridField],
    sk: &[GridField],
    dt: f64,
    steps: usize,
) -> Result<Trajectory> {
    let k_traj = imex::integrate(&med.symbols, med.energy_principal, dt, steps, k0, sk, |k| med.energy_remainder(k))?;
    let sources = momentum_sources(med, &k_traj, su)?;
    let m0 = u0.mul_scalar_field(&med.rho0)?;
    let m_traj =
        imex::integrate(&med.symbols, med.momentum_principal, dt, steps, &m0, &sources, |m| med.momentum_remainder(m))?;
    let u = m_traj.iter().map(|m| m.mul_scalar_field(&med.inv_rho0)).collect::<Result<Vec<_>>>()?;
    Ok(Trajectory { times: (0..=steps).map(|n| n as f64 * dt).collect(), u, k: k_traj })
}

fn momentum_sources(med: &Medium, k_traj: &[GridField], su: &[GridField]) -> Result<Vec<GridField>> {
    k_traj
        .iter()
        .enumerate()
        .map(|(n, k)| {
            let pg = med.pressure_gradient(k)?.scale(-1.0);
            if su.is_empty() {
                Ok(pg)
            } else {
                pg.add(&su[n])
            }
        })
        .collect()
}

/// Linear system `d_t u + rho0^{-1}(-div(2 mu D u + lambda div u Id) + grad(pi K)) = f`,
/// `d_t K - div(k grad(K/rho0)) = g`, with `pi = pi1(rho0)/rho0`. Empty `f`/`g` mean zero.
pub fn solve_linear_lmk(
    u0: &GridField,
    k0: &GridField,
    f: &[GridField],
    g: &[GridField],
    rho0: &GridField,
    law: &ConstitutiveLaw,
    config: &SolverConfig,
) -> Result<Trajectory> {
    config.validate()?;
    let med = Medium::new(law, rho0)?;
    let su = f.iter().map(|x| x.mul_scalar_field(&med.rho0)).collect::<Result<Vec<_>>>()?;
    solve_linear_momentum_form(&med, u0, k0, &su, g, config.dt, config.steps())
}

/// The eight nonlinear terms at one time. `I_1..I_4` are matrices, `I_5..I_8` vectors.
#[derive(Clone, Debug)]
pub struct ITerms {
    pub i: Vec<GridField>,
}

impl ITerms {
    /// `div(I_1 + I_2 + I_3 + I_4)`, dealiased.
    pub fn momentum_source(&self) -> Result<GridField> {
        let s = self.i[0].add(&self.i[1])?.add(&self.i[2])?.add(&self.i[3])?;
        Ok(s.divergence()?.filtered())
    }

    /// `div(I_5 + I_6 + I_7 + I_8)`, dealiased.
    pub fn energy_source(&self) -> Result<GridField> {
        let s = self.i[4].add(&self.i[5])?.add(&self.i[6])?.add(&self.i[7])?;
        Ok(s.divergence()?.filtered())
    }
}

fn identity_times(grid: &TorusGrid, s: &GridField) -> Result<GridField> {
    GridField::identity(grid).mul_scalar_field(s)
}

/// Evaluate `I_1..I_8` for velocity `v`, energy `psi` and the flow `x` of `v`.
pub fn i_terms_at(med: &Medium, v: &GridField, psi: &GridField, x: &FlowMap) -> Result<ITerms> {
    let grid = med.grid();
    let law = &med.law;
    let rho_bar = med.rho0.mul_scalar_field(&x.jacobian.map(|j| 1.0 / j))?;
    let mu_b = law.evaluate_raw(Which::Mu, &rho_bar)?;
    let la_b = law.evaluate_raw(Which::Lambda, &rho_bar)?;
    let k_b = law.evaluate_raw(Which::K, &rho_bar)?;
    let pi0_b = law.evaluate_raw(Which::Pi0, &rho_bar)?;
    let pi1_b = law.evaluate_raw(Which::Pi1, &rho_bar)?;

    let a = &x.inverse_gradient;
    let adj = &x.adjugate;
    let vf = v.filtered();
    let dv = vf.gradient()?;
    let dva = matmul(&dv, a)?;
    let d = grid.dim();
    let sym_tr = |m: &GridField| -> Result<(GridField, GridField)> {
        let sym = m.add(&m.transpose()?)?.scale(0.5);
        let c = m.physical()?;
        let tr = (0..grid.len()).map(|k| (0..d).map(|i| c[i * d + i][k]).sum()).collect();
        Ok((sym, GridField::scalar(grid, tr)?))
    };
    let (d_a, div_a) = sym_tr(&dva)?;
    let (d_0, div_0) = sym_tr(&dv.to_physical())?;
    let id = GridField::identity(grid);

    let tau_a = d_a.mul_scalar_field(&mu_b)?.scale(2.0).add(&identity_times(grid, &div_a.mul_scalar_field(&la_b)?)?)?;
    let i1 = matmul(&adj.sub(&id)?, &tau_a)?;
    let i2 = d_a
        .mul_scalar_field(&mu_b.sub(&med.mu0)?)?
        .scale(2.0)
        .add(&identity_times(grid, &div_a.mul_scalar_field(&la_b.sub(&med.la0)?)?)?)?;
    let i3 = d_a
        .sub(&d_0)?
        .mul_scalar_field(&med.mu0)?
        .scale(2.0)
        .add(&identity_times(grid, &div_a.sub(&div_0)?.mul_scalar_field(&med.la0)?)?)?;

    let vp = vf.to_physical();
    let half_v2 = {
        let c = vp.physical()?;
        GridField::scalar(grid, (0..grid.len()).map(|k| 0.5 * c.iter().map(|x| x[k] * x[k]).sum::<f64>()).collect())?
    };
    let psi_over = psi.mul_scalar_field(&med.inv_rho0)?;
    let p_bar = pi0_b.add(&psi_over.sub(&half_v2)?.mul_scalar_field(&pi1_b)?)?;
    let i4 = identity_times(grid, &psi.mul_scalar_field(&med.pi_c)?)?.sub(&adj.mul_scalar_field(&p_bar)?)?;

    let adj_at = matmul(adj, &a.transpose()?)?;
    let k_adj_at = adj_at.mul_scalar_field(&k_b)?;
    let grad_psi = psi_over.filtered().gradient()?;
    let i5 = matvec(&k_adj_at.sub(&id.mul_scalar_field(&med.k0)?)?, &grad_psi)?;
    let i6 = matvec(&k_adj_at, &half_v2.filtered().gradient()?)?.scale(-1.0);
    let i7 = matvec(adj, &vp)?.mul_scalar_field(&p_bar)?.scale(-1.0);
    let i8 = matvec(adj, &matvec(&tau_a, &vp)?)?;
    Ok(ITerms { i: vec![i1, i2, i3, i4, i5, i6, i7, i8] })
}

/// `I_1..I_8` at sample `n` of a velocity/energy trajectory.
pub fn compute_i_terms(
    v: &VelocityTimeline,
    psi: &[GridField],
    rho0: &GridField,
    law: &ConstitutiveLaw,
    n: usize,
) -> Result<ITerms> {
    let med = Medium::new(law, rho0)?;
    let x = flow::FlowMap::from_displacement(v.displacements().swap_remove(n), v.times()[n])?;
    i_terms_at(&med, &v.fields()[n], &psi[n], &x)
}

/// Source trajectories `div(I_1..I_4)`, `div(I_5..I_8)` for `(v, psi)`.
fn phi_sources(med: &Medium, input: &Trajectory) -> Result<(Vec<GridField>, Vec<GridField>)> {
    let tl = input.velocity_timeline()?;
    let mut su = Vec::with_capacity(input.len());
    let mut sk = Vec::with_capacity(input.len());
    for (n, disp) in tl.displacements().into_iter().enumerate() {
        let x = FlowMap::from_displacement(disp, input.times[n])?;
        let terms = i_terms_at(med, &input.u[n], &input.k[n], &x)?;
        su.push(terms.momentum_source()?);
        sk.push(terms.energy_source()?);
    }
    Ok((su, sk))
}

/// The fixed-point map `(v, psi) -> (u, K)`.
pub fn apply_phi(
    input: &Trajectory,
    data: &LagrangianData,
    law: &ConstitutiveLaw,
) -> Result<Trajectory> {
    let med = Medium::new(law, &data.rho0)?;
    apply_phi_with(&med, input, data)
}

fn apply_phi_with(med: &Medium, input: &Trajectory, data: &LagrangianData) -> Result<Trajectory> {
    let (su, sk) = phi_sources(med, input)?;
    solve_linear_momentum_form(med, &data.u0, &data.k0, &su, &sk, input.dt(), input.len() - 1)
}

/// Density along the flow of a velocity trajectory.
#[derive(Clone, Debug)]
pub struct DensityTrajectory {
    pub rho_bar: Vec<GridField>,
    /// `a = rho_bar - 1 = (J^{-1} - 1)(1 + a0) + a0`
    pub a: Vec<GridField>,
    /// `max_t max_y |J rho_bar - rho0|`
    pub mass_residual: f64,
    pub min_density: f64,
}

/// `rho_bar(t) = rho0 / J(t)`, with the mass identity and vacuum checks.
pub fn reconstruct_density(u: &Trajectory, rho0: &GridField) -> Result<DensityTrajectory> {
    let tl = u.velocity_timeline()?;
    let rho0 = rho0.to_physical();
    let r0 = rho0.values(0);
    let mut rho_bar = Vec::with_capacity(u.len());
    let mut a = Vec::with_capacity(u.len());
    let mut mass_residual = 0.0f64;
    let mut min_density = f64::INFINITY;
    for (n, disp) in tl.displacements().into_iter().enumerate() {
        let x = FlowMap::from_displacement(disp, u.times[n])?;
        let jac = x.jacobian.values(0);
        let vals: Vec<f64> = r0.iter().zip(jac).map(|(r, j)| r / j).collect();
        for ((v, j), r) in vals.iter().zip(jac).zip(r0) {
            mass_residual = mass_residual.max((j * v - r).abs());
        }
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        if !(min > 0.0) {
            return Err(CnsError::Vacuum { time: u.times[n], min_density: min });
        }
        min_density = min_density.min(min);
        a.push(GridField::scalar(rho0.grid(), vals.iter().map(|v| v - 1.0).collect())?);
        rho_bar.push(GridField::scalar(rho0.grid(), vals)?);
    }
    Ok(DensityTrajectory { rho_bar, a, mass_residual, min_density })
}

/// Diagnostics of one Picard iterate.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// relative `E_p` norm of the difference to the previous iterate
    pub ep_diff: f64,
    /// `ep_diff / previous ep_diff`
    pub ratio: Option<f64>,
    pub smallness: f64,
    pub mass_drift: f64,
    pub momentum_drift: f64,
    pub energy_drift: f64,
}

/// Record of a Picard solve.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConvergenceReport {
    pub dt: f64,
    pub horizon: f64,
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
    /// horizons abandoned after a stagnating iteration
    pub abandoned_horizons: Vec<f64>,
    pub ellipticity: Option<EllipticityConstants>,
    pub cutoff_m: Option<i32>,
    pub cutoff_admissible: bool,
    /// sampled `sup ||rho0^{-1} f|| / ||f||` in `B^{n/p-1}`
    pub multiplier_sample: f64,
    pub smallness_threshold: f64,
    pub smallness_violated: bool,
    /// relative residual of the converged trajectory in the scheme, `L^1_T(B)` over `E_p`
    pub fixed_point_residual: Option<f64>,
}

impl ConvergenceReport {
    /// Contraction ratios `r_k` for `k >= 1`.
    pub fn ratios(&self) -> Vec<f64> {
        self.iterations.iter().filter_map(|r| r.ratio).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("iter,ep_diff,ratio,smallness,mass_drift,momentum_drift,energy_drift\n");
        for r in &self.iterations {
            let ratio = r.ratio.map(fmt_float).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.iter,
                fmt_float(r.ep_diff),
                ratio,
                fmt_float(r.smallness),
                fmt_float(r.mass_drift),
                fmt_float(r.momentum_drift),
                fmt_float(r.energy_drift)
            );
        }
        s
    }
}

/// Fixed-width scientific formatting used in every CSV report.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.12e}")
}

/// Output of a converged (or best-effort) Picard solve.
#[derive(Clone, Debug)]
pub struct LagrangianSolution {
    pub data: LagrangianData,
    pub trajectory: Trajectory,
    pub density: DensityTrajectory,
}

impl LagrangianSolution {
    /// Eulerian total energy along the flow, `J^{-1} K`.
    pub fn energy_density(&self, n: usize) -> Result<GridField> {
        let inv_j = self.density.rho_bar[n].mul_scalar_field(&self.data.rho0.map(|r| 1.0 / r))?;
        self.trajectory.k[n].mul_scalar_field(&inv_j)
    }

    /// Momentum `int rho0 u` at every stored time.
    pub fn momentum(&self) -> Vec<Vec<f64>> {
        self.trajectory.u.iter().map(|u| u.mul_scalar_field(&self.data.rho0).expect("shape").integral()).collect()
    }

    /// `int K` at every stored time.
    pub fn energy(&self) -> Vec<f64> {
        self.trajectory.k.iter().map(|k| k.integral()[0]).collect()
    }
}

struct Drifts {
    mass: f64,
    momentum: f64,
    energy: f64,
}

fn drifts(traj: &Trajectory, data: &LagrangianData) -> Result<Drifts> {
    let dens = reconstruct_density(traj, &data.rho0)?;
    let mom: Vec<Vec<f64>> =
        traj.u.iter().map(|u| u.mul_scalar_field(&data.rho0).map(|m| m.integral())).collect::<Result<_>>()?;
    let m0 = &mom[0];
    let mag0 = data.u0.mul_scalar_field(&data.rho0)?;
    let abs_mom = {
        let p = mag0.to_physical();
        let c = p.physical()?;
        let w = p.grid().cell_volume();
        (0..p.grid().len()).map(|k| c.iter().map(|x| x[k] * x[k]).sum::<f64>().sqrt()).sum::<f64>() * w
    };
    let mnorm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mom_scale = mnorm(m0).max(abs_mom);
    let momentum = mom
        .iter()
        .map(|m| {
            let diff: Vec<f64> = m.iter().zip(m0).map(|(a, b)| a - b).collect();
            if mom_scale > 0.0 {
                mnorm(&diff) / mom_scale
            } else {
                mnorm(&diff)
            }
        })
        .fold(0.0, f64::max);
    let e: Vec<f64> = traj.k.iter().map(|k| k.integral()[0]).collect();
    let e_scale = e[0].abs().max(data.k0.map(f64::abs).integral()[0]);
    let energy = e
        .iter()
        .map(|x| if e_scale > 0.0 { (x - e[0]).abs() / e_scale } else { (x - e[0]).abs() })
        .fold(0.0, f64::max);
    Ok(Drifts { mass: dens.mass_residual, momentum, energy })
}

/// Sampled operator norm of multiplication by `1/rho0` on `B^{n/p-1}`.
fn multiplier_sample(med: &Medium, bank: &DyadicFilterBank, p: f64, seed: u64) -> Result<f64> {
    let grid = med.grid();
    let s = grid.dim() as f64 / p - 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    for _ in 0..8 {
        let modes: Vec<([f64; 3], f64, f64)> = (0..6)
            .map(|_| {
                let mut k = [0.0; 3];
                for a in k.iter_mut().take(grid.dim()) {
                    *a = rng.gen_range(-6i32..=6) as f64;
                }
                (k, rng.gen_range(-1.0..1.0), rng.gen_range(0.0..std::f64::consts::TAU))
            })
            .collect();
        let f = GridField::from_fn_scalar(grid, |x| {
            modes.iter().map(|(k, amp, ph)| amp * (k[0] * x[0] + k[1] * x[1] + k[2] * x.get(2).unwrap_or(&0.0) + ph).cos()).sum()
        });
        let den = bank.besov_value(&f, s, p)?;
        if den > 0.0 {
            best = best.max(bank.besov_value(&f.mul_scalar_field(&med.inv_rho0)?, s, p)? / den);
        }
    }
    Ok(best)
}

fn relative(diff: f64, scale: f64) -> f64 {
    if diff == 0.0 {
        0.0
    } else if scale > 0.0 {
        diff / scale
    } else {
        f64::INFINITY
    }
}

/// Picard iteration `(v, psi)_{k+1} = Phi((v, psi)_k)` started from the free linear
/// solution. A stagnating iteration (`r_k >= 1`) halves the horizon and restarts.
pub fn picard_solve(
    data: &LagrangianData,
    law: &ConstitutiveLaw,
    config: &SolverConfig,
) -> Result<(LagrangianSolution, ConvergenceReport)> {
    config.validate()?;
    data.check()?;
    let med = Medium::new(law, &data.rho0)?;
    let bank = DyadicFilterBank::for_grid(data.grid())?;
    let p = config.p;
    let mut report = ConvergenceReport {
        dt: config.dt,
        smallness_threshold: config.smallness_c,
        ..Default::default()
    };
    report.ellipticity = Some(law.ellipticity_constants(&data.rho0)?);
    match config.cutoff_m {
        Some(m) => {
            let r = law.cutoff_admissible(&data.rho0, m, config.eta, &bank, p)?;
            report.cutoff_m = Some(m);
            report.cutoff_admissible = r.admissible;
        }
        None => {
            let (m, _) = law.find_cutoff(&data.rho0, config.eta, &bank, p)?;
            report.cutoff_m = m;
            report.cutoff_admissible = m.is_some();
        }
    }
    report.multiplier_sample = multiplier_sample(&med, &bank, p, config.seed)?;

    let mut steps = config.steps();
    loop {
        report.horizon = steps as f64 * config.dt;
        report.iterations.clear();
        report.smallness_violated = false;
        match picard_loop(&med, &bank, data, config, steps, &mut report)? {
            Some(traj) => {
                let density = reconstruct_density(&traj, &data.rho0)?;
                report.fixed_point_residual = Some(fixed_point_residual(&med, &bank, &traj, p)?);
                let sol = LagrangianSolution { data: data.clone(), trajectory: traj, density };
                return Ok((sol, report));
            }
            None => {
                report.abandoned_horizons.push(report.horizon);
                steps /= 2;
                if steps < 4 {
                    let horizon = steps as f64 * config.dt;
                    return Err(CnsError::NoConvergence { horizon, report: Box::new(report) });
                }
            }
        }
    }
}

/// Returns the last iterate, or `None` on stagnation.
fn picard_loop(
    med: &Medium,
    bank: &DyadicFilterBank,
    data: &LagrangianData,
    config: &SolverConfig,
    steps: usize,
    report: &mut ConvergenceReport,
) -> Result<Option<Trajectory>> {
    let p = config.p;
    let mut current = solve_linear_momentum_form(med, &data.u0, &data.k0, &[], &[], config.dt, steps)?;
    let mut prev_diff: Option<f64> = None;
    for iter in 1..=config.max_picard {
        let smallness = current.velocity_timeline()?.smallness(bank, p)?;
        if smallness > config.smallness_c {
            report.smallness_violated = true;
        }
        let next = apply_phi_with(med, &current, data)?;
        let diff = next.difference(&current)?.ep_norm(bank, p)?;
        let ep_diff = relative(diff, next.ep_norm(bank, p)?);
        let ratio = prev_diff.map(|pd| if pd > 0.0 { ep_diff / pd } else { 0.0 });
        let dr = drifts(&next, data)?;
        report.iterations.push(IterationRecord {
            iter,
            ep_diff,
            ratio,
            smallness,
            mass_drift: dr.mass,
            momentum_drift: dr.momentum,
            energy_drift: dr.energy,
        });
        current = next;
        if ep_diff <= config.picard_tol {
            report.converged = true;
            return Ok(Some(current));
        }
        if matches!(ratio, Some(r) if r >= 1.0) {
            return Ok(None);
        }
        prev_diff = Some(ep_diff);
    }
    report.converged = false;
    Ok(Some(current))
}

/// Residual of the discrete scheme with sources evaluated from the trajectory itself:
/// `L^1_T(B^{n/p-1})` of the velocity residual (divided by `rho0`) plus
/// `L^1_T(B^{n/p-2})` of the energy residual, relative to the `E_p` norm.
pub fn fixed_point_residual(med: &Medium, bank: &DyadicFilterBank, traj: &Trajectory, p: f64) -> Result<f64> {
    let dt = traj.dt();
    let (su, sk) = phi_sources(med, traj)?;
    let k_res = imex::step_residuals(&med.symbols, med.energy_principal, dt, &traj.k, &sk, |k| med.energy_remainder(k))?;
    let sources = momentum_sources(med, &traj.k, &su)?;
    let m_traj = traj.u.iter().map(|u| u.mul_scalar_field(&med.rho0)).collect::<Result<Vec<_>>>()?;
    let m_res =
        imex::step_residuals(&med.symbols, med.momentum_principal, dt, &m_traj, &sources, |m| med.momentum_remainder(m))?;
    let n = med.grid().dim() as f64;
    let mut total = 0.0;
    for r in &m_res {
        total += dt * bank.besov_value(&r.mul_scalar_field(&med.inv_rho0)?, n / p - 1.0, p)?;
    }
    for r in &k_res {
        total += dt * bank.besov_value(r, n / p - 2.0, p)?;
    }
    Ok(relative(total, traj.ep_norm(bank, p)?))
}

/// Convenience wrapper: the residual of an arbitrary trajectory for given data.
pub fn scheme_residual(
    traj: &Trajectory,
    data: &LagrangianData,
    law: &ConstitutiveLaw,
    p: f64,
) -> Result<f64> {
    let med = Medium::new(law, &data.rho0)?;
    let bank = DyadicFilterBank::for_grid(data.grid())?;
    fixed_point_residual(&med, &bank, traj, p)
}
