//! Eulerian reference solver for the total-energy form in the conserved variables
//! `(rho, m = rho u, E)`, the temperature-form right side used as a cross-check, and the
//! comparison against the pushed-forward Lagrangian solution.

use std::fmt::Write as _;

use crate::constitutive::{ConstitutiveLaw, Which};
use crate::error::{CnsError, Result};
use crate::flow::{invert_flow, matvec, pushforward_with, FlowMap};
use crate::imex::{self, Principal, Symbols};
use crate::lagrangian::{fmt_float, picard_solve, ConvergenceReport, LagrangianData, SolverConfig};
use crate::littlewood_paley::DyadicFilterBank;
use crate::spectral::{GridField, TorusGrid};

#[derive(Clone, Debug)]
pub struct EulerianState {
    pub rho: GridField,
    pub u: GridField,
    pub e: GridField,
    pub t: f64,
}

impl EulerianState {
    /// `E = rho (theta + |u|^2/2)`.
    pub fn from_temperature(rho: &GridField, u: &GridField, theta: &GridField) -> Result<Self> {
        let data = LagrangianData::from_temperature(rho.clone(), u.clone(), theta)?;
        Ok(EulerianState { rho: data.rho0, u: data.u0, e: data.k0, t: 0.0 })
    }

    pub fn momentum(&self) -> Result<GridField> {
        self.u.mul_scalar_field(&self.rho)
    }

    /// `theta = E/rho - |u|^2/2`, pointwise.
    pub fn temperature(&self) -> Result<GridField> {
        temperature(&self.rho, &self.u, &self.e)
    }
}

fn half_sq(u: &GridField) -> Result<GridField> {
    let p = u.to_physical();
    let c = p.physical()?;
    GridField::scalar(p.grid(), (0..p.grid().len()).map(|k| 0.5 * c.iter().map(|x| x[k] * x[k]).sum::<f64>()).collect())
}

fn dot(a: &GridField, b: &GridField) -> Result<GridField> {
    let (a, b) = (a.to_physical(), b.to_physical());
    let (ac, bc) = (a.physical()?, b.physical()?);
    GridField::scalar(a.grid(), (0..a.grid().len()).map(|k| ac.iter().zip(bc).map(|(x, y)| x[k] * y[k]).sum()).collect())
}

fn outer(a: &GridField, b: &GridField) -> Result<GridField> {
    let (a, b) = (a.to_physical(), b.to_physical());
    let (ac, bc) = (a.physical()?, b.physical()?);
    let d = a.grid().dim();
    let mut out = Vec::with_capacity(d * d);
    for x in ac {
        for y in bc {
            out.push(x.iter().zip(y).map(|(p, q)| p * q).collect());
        }
    }
    GridField::matrix(a.grid(), out)
}

fn temperature(rho: &GridField, u: &GridField, e: &GridField) -> Result<GridField> {
    let q = half_sq(u)?;
    let r = rho.to_physical();
    let e = e.to_physical();
    let vals = r.values(0).iter().zip(e.values(0)).zip(q.values(0)).map(|((r, e), q)| e / r - q).collect();
    GridField::scalar(rho.grid(), vals)
}

fn check_positive(rho: &GridField, t: f64) -> Result<()> {
    let min = rho.to_physical().values(0).iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(CnsError::Vacuum { time: t, min_density: min });
    }
    Ok(())
}

fn stress(u: &GridField, mu: &GridField, la: &GridField) -> Result<GridField> {
    let du = u.filtered().gradient()?;
    let d = u.grid().dim();
    let sym = du.add(&du.transpose()?)?.scale(0.5);
    let div = {
        let c = du.physical()?;
        GridField::scalar(u.grid(), (0..u.grid().len()).map(|k| (0..d).map(|i| c[i * d + i][k]).sum()).collect())?
    };
    sym.mul_scalar_field(mu)?.scale(2.0).add(&GridField::identity(u.grid()).mul_scalar_field(&div.mul_scalar_field(la)?)?)
}

/// Time derivatives `(d_t rho, d_t m, d_t E)`.
#[derive(Clone, Debug)]
pub struct EulerianRhs {
    pub rho: GridField,
    pub m: GridField,
    pub e: GridField,
}

/// Right side of the conserved system from `(rho, m, E)`.
fn rhs_conserved(rho: &GridField, m: &GridField, e: &GridField, law: &ConstitutiveLaw) -> Result<EulerianRhs> {
    let grid = rho.grid();
    check_positive(rho, f64::NAN)?;
    let inv_rho = rho.map(|r| 1.0 / r);
    let u = m.mul_scalar_field(&inv_rho)?;
    let mu = law.evaluate_raw(Which::Mu, rho)?;
    let la = law.evaluate_raw(Which::Lambda, rho)?;
    let k = law.evaluate_raw(Which::K, rho)?;
    let pi0 = law.evaluate_raw(Which::Pi0, rho)?;
    let pi1 = law.evaluate_raw(Which::Pi1, rho)?;
    let q = half_sq(&u)?;
    let e_over = e.mul_scalar_field(&inv_rho)?;
    let theta = e_over.sub(&q)?;
    let p = pi0.add(&theta.mul_scalar_field(&pi1)?)?;
    let tau = stress(&u, &mu, &la)?;

    let d_rho = m.divergence()?.filtered().scale(-1.0);

    let id = GridField::identity(grid);
    let mom_flux = tau.sub(&outer(m, &u)?)?.sub(&id.mul_scalar_field(&p)?)?;
    let d_m = mom_flux.divergence()?.filtered();

    // -uE + k grad(E/rho) + tau u - k grad(|u|^2/2) - u pi0 - u (E/rho - |u|^2/2) pi1
    let heat = e_over.filtered().gradient()?.sub(&q.filtered().gradient()?)?.mul_scalar_field(&k)?;
    let flux = heat
        .add(&matvec(&tau, &u)?)?
        .sub(&u.mul_scalar_field(e)?)?
        .sub(&u.mul_scalar_field(&pi0)?)?
        .sub(&u.mul_scalar_field(&theta.mul_scalar_field(&pi1)?)?)?;
    let d_e = flux.divergence()?.filtered();
    Ok(EulerianRhs { rho: d_rho, m: d_m, e: d_e })
}

/// Right side of the total-energy system at `state`.
pub fn eulerian_rhs(state: &EulerianState, law: &ConstitutiveLaw) -> Result<EulerianRhs> {
    check_positive(&state.rho, state.t)?;
    rhs_conserved(&state.rho, &state.momentum()?, &state.e, law)
}

/// The same time derivatives assembled from the temperature form
/// `rho(d_t theta + u.grad theta) + P div u = tau : Du + div(k grad theta)` and converted
/// through `E = rho(theta + |u|^2/2)`.
pub fn eulerian_rhs_temperature_form(state: &EulerianState, law: &ConstitutiveLaw) -> Result<EulerianRhs> {
    check_positive(&state.rho, state.t)?;
    let grid = state.rho.grid();
    let d = grid.dim();
    let rho = &state.rho;
    let u = &state.u;
    let theta = state.temperature()?;
    let mu = law.evaluate_raw(Which::Mu, rho)?;
    let la = law.evaluate_raw(Which::Lambda, rho)?;
    let k = law.evaluate_raw(Which::K, rho)?;
    let p = law.pressure_eulerian(rho, &theta)?;
    let tau = stress(u, &mu, &la)?;
    let du = u.filtered().gradient()?;
    let grad_theta = theta.filtered().gradient()?;
    let div_u = {
        let c = du.physical()?;
        GridField::scalar(grid, (0..grid.len()).map(|kk| (0..d).map(|i| c[i * d + i][kk]).sum()).collect())?
    };
    let m = state.momentum()?;
    let d_rho = m.divergence()?.filtered().scale(-1.0);

    // rho d_t u = -rho (Du) u + div tau - grad P
    let rho_dt_u = matvec(&du, u)?
        .mul_scalar_field(rho)?
        .scale(-1.0)
        .add(&tau.divergence()?.filtered())?
        .sub(&p.gradient()?)?;
    let d_m = rho_dt_u.add(&u.mul_scalar_field(&d_rho)?)?;

    let tau_du = {
        let (tc, dc) = (tau.physical()?, du.physical()?);
        GridField::scalar(grid, (0..grid.len()).map(|kk| tc.iter().zip(dc).map(|(a, b)| a[kk] * b[kk]).sum()).collect())?
    };
    let rho_dt_theta = dot(u, &grad_theta)?
        .mul_scalar_field(rho)?
        .scale(-1.0)
        .sub(&p.mul_scalar_field(&div_u)?)?
        .add(&tau_du)?
        .add(&grad_theta.mul_scalar_field(&k)?.divergence()?.filtered())?;
    let energy_density = theta.add(&half_sq(u)?)?;
    let d_e = energy_density.mul_scalar_field(&d_rho)?.add(&rho_dt_theta)?.add(&dot(u, &rho_dt_u)?)?;
    Ok(EulerianRhs { rho: d_rho, m: d_m.filtered(), e: d_e.filtered() })
}

#[derive(Clone, Debug)]
pub struct EulerianTrajectory {
    pub states: Vec<EulerianState>,
}

impl EulerianTrajectory {
    /// `(int rho, int m, int E)` at every stored time.
    pub fn totals(&self) -> Result<Vec<(f64, Vec<f64>, f64)>> {
        self.states
            .iter()
            .map(|s| Ok((s.rho.integral()[0], s.momentum()?.integral(), s.e.integral()[0])))
            .collect()
    }
}

/// Integrate the total-energy system with the IMEX scheme of the Lagrangian solver.
/// The implicit parts use the largest values of `mu/rho`, `(2mu+lambda)/rho`, `k/rho`
/// over the initial density; the density equation is fully explicit.
pub fn integrate_eulerian(
    initial: &EulerianState,
    law: &ConstitutiveLaw,
    horizon: f64,
    dt: f64,
) -> Result<EulerianTrajectory> {
    if !(dt > 0.0) || !(horizon >= dt - 1e-12) {
        return Err(CnsError::InvalidParameter(format!("need dt > 0 and T >= dt (dt={dt}, T={horizon})")));
    }
    let steps = ((horizon / dt) + 1e-9).floor() as usize;
    let grid = initial.rho.grid().clone();
    let rho0 = initial.rho.to_physical();
    check_positive(&rho0, 0.0)?;
    let mut mu_bar = 0.0f64;
    let mut nu_bar = 0.0f64;
    let mut k_bar = 0.0f64;
    for &r in rho0.values(0) {
        let mu = law.mu.value(r);
        mu_bar = mu_bar.max(mu / r);
        nu_bar = nu_bar.max((2.0 * mu + law.lambda.value(r)) / r);
        k_bar = k_bar.max(law.k.value(r) / r);
    }
    let principals = [
        Principal::Scalar { kappa: 0.0 },
        Principal::Vector { mu: mu_bar, nu: nu_bar },
        Principal::Scalar { kappa: k_bar },
    ];
    let symbols = Symbols::new(&grid);
    let y0 = vec![rho0.clone(), initial.momentum()?, initial.e.to_physical()];
    let explicit = |y: &[GridField]| -> Result<Vec<GridField>> {
        let r = rhs_conserved(&y[0], &y[1], &y[2], law)?;
        Ok(vec![
            r.rho,
            r.m.sub(&symbols.apply(principals[1], &y[1]))?,
            r.e.sub(&symbols.apply(principals[2], &y[2]))?,
        ])
    };
    let check = |t: f64, y: &[GridField]| check_positive(&y[0], t);
    let traj = imex::integrate_system(&symbols, &principals, dt, steps, &y0, explicit, check)?;
    let states = traj
        .into_iter()
        .enumerate()
        .map(|(n, y)| {
            let u = y[1].mul_scalar_field(&y[0].map(|r| 1.0 / r))?;
            Ok(EulerianState { rho: y[0].clone(), u, e: y[2].clone(), t: n as f64 * dt })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EulerianTrajectory { states })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub time: f64,
    pub field: &'static str,
    pub max_diff: f64,
    pub besov_diff: f64,
    pub resolution: usize,
}

#[derive(Clone, Debug)]
pub struct EquivalenceReport {
    pub rows: Vec<ComparisonRow>,
    pub lagrangian: Option<ConvergenceReport>,
    /// errors of either solver; a non-empty list means the rows are partial
    pub failures: Vec<String>,
    /// `int ||grad u||_{L^inf}` of the Eulerian run, monitored against `smallness_c`
    pub eulerian_smallness: f64,
    /// whether `(p, n)` lies in the range `1 < p < n, n >= 3` where the functional
    /// equivalence is established; comparisons run regardless
    pub in_equivalence_range: bool,
}

impl EquivalenceReport {
    pub fn max_discrepancy(&self) -> f64 {
        self.rows.iter().map(|r| r.max_diff).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,field,max_diff,besov_diff,resolution\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                fmt_float(r.time),
                r.field,
                fmt_float(r.max_diff),
                fmt_float(r.besov_diff),
                r.resolution
            );
        }
        s
    }
}

/// Output schedule and solver settings for [`equivalence_experiment`].
#[derive(Clone, Debug)]
pub struct EquivalenceConfig {
    pub solver: SolverConfig,
    /// compare every `output_every` steps (and at the final time)
    pub output_every: usize,
}

impl Default for EquivalenceConfig {
    fn default() -> Self {
        EquivalenceConfig { solver: SolverConfig::default(), output_every: 5 }
    }
}

/// Run both solvers from `(rho0, u0, theta0)` and compare the pushed-forward Lagrangian
/// solution `(rho_bar, u_bar, J^{-1} K_bar) o X^{-1}` with the Eulerian one.
pub fn equivalence_experiment(
    rho0: &GridField,
    u0: &GridField,
    theta0: &GridField,
    law: &ConstitutiveLaw,
    config: &EquivalenceConfig,
) -> Result<EquivalenceReport> {
    let grid = rho0.grid().clone();
    let p = config.solver.p;
    let n = grid.dim() as f64;
    let mut report = EquivalenceReport {
        rows: Vec::new(),
        lagrangian: None,
        failures: Vec::new(),
        eulerian_smallness: 0.0,
        in_equivalence_range: p > 1.0 && p < n && grid.dim() >= 3,
    };
    let data = LagrangianData::from_temperature(rho0.clone(), u0.clone(), theta0)?;
    let lag = match picard_solve(&data, law, &config.solver) {
        Ok((sol, rep)) => {
            report.lagrangian = Some(rep);
            Some(sol)
        }
        Err(e) => {
            report.failures.push(format!("lagrangian: {e}"));
            None
        }
    };
    let initial = EulerianState { rho: data.rho0.clone(), u: data.u0.clone(), e: data.k0.clone(), t: 0.0 };
    let horizon = lag.as_ref().map(|s| *s.trajectory.times.last().unwrap_or(&0.0)).unwrap_or(config.solver.horizon);
    let eul = match integrate_eulerian(&initial, law, horizon, config.solver.dt) {
        Ok(t) => Some(t),
        Err(e) => {
            report.failures.push(format!("eulerian: {e}"));
            None
        }
    };
    let (Some(lag), Some(eul)) = (lag, eul) else {
        return Ok(report);
    };
    let dt = config.solver.dt;
    let grad_norms: Vec<f64> =
        eul.states.iter().map(|s| s.u.filtered().gradient().map(|g| g.max_abs())).collect::<Result<_>>()?;
    report.eulerian_smallness = crate::littlewood_paley::trapezoid(&grad_norms, dt);

    let bank = DyadicFilterBank::for_grid(&grid)?;
    let tl = lag.trajectory.velocity_timeline()?;
    let disps = tl.displacements();
    let last = eul.states.len().min(lag.trajectory.len()) - 1;
    let every = config.output_every.max(1);
    let samples: Vec<usize> = (0..=last).filter(|i| i % every == 0 || *i == last).collect();
    for i in samples {
        let x = FlowMap::from_displacement(disps[i].clone(), lag.trajectory.times[i])?;
        let inv = invert_flow(&x)?;
        let rho_l = pushforward_with(&lag.density.rho_bar[i], &inv)?;
        let u_l = pushforward_with(&lag.trajectory.u[i], &inv)?;
        let e_l = pushforward_with(&lag.energy_density(i)?, &inv)?;
        let s = &eul.states[i];
        for (name, a, b, shift) in
            [("rho", &rho_l, &s.rho, 0.0), ("u", &u_l, &s.u, -1.0), ("E", &e_l, &s.e, -2.0)]
        {
            let diff = a.sub(b)?;
            report.rows.push(ComparisonRow {
                time: i as f64 * dt,
                field: name,
                max_diff: diff.max_abs(),
                besov_diff: bank.besov_value(&diff, n / p + shift, p)?,
                resolution: grid.points_per_axis(),
            });
        }
    }
    Ok(report)
}

/// Discrepancies of one experiment at `(N, dt)` and at `(2N, dt/2)`.
#[derive(Clone, Debug)]
pub struct RefinementReport {
    pub coarse: EquivalenceReport,
    pub fine: EquivalenceReport,
}

impl RefinementReport {
    /// `max discrepancy(coarse) / max discrepancy(fine)`.
    pub fn ratio(&self) -> f64 {
        self.coarse.max_discrepancy() / self.fine.max_discrepancy()
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.coarse.to_csv();
        s.push_str(self.fine.to_csv().split_once('\n').map(|x| x.1).unwrap_or(""));
        s
    }
}

/// Initial data `(rho0, u0, theta0)` on a given grid.
pub type DataRecipe<'a> = dyn Fn(&TorusGrid) -> Result<(GridField, GridField, GridField)> + 'a;

/// Run [`equivalence_experiment`] at `(dim, n, dt)` and `(dim, 2n, dt/2)`.
pub fn refinement_study(
    recipe: &DataRecipe<'_>,
    dim: usize,
    n: usize,
    law: &ConstitutiveLaw,
    config: &EquivalenceConfig,
) -> Result<RefinementReport> {
    let run = |n: usize, cfg: &EquivalenceConfig| -> Result<EquivalenceReport> {
        let grid = TorusGrid::new(dim, n)?;
        let (r, u, th) = recipe(&grid)?;
        equivalence_experiment(&r, &u, &th, law, cfg)
    };
    let coarse = run(n, config)?;
    let mut fine_cfg = config.clone();
    fine_cfg.solver.dt = config.solver.dt / 2.0;
    fine_cfg.output_every = config.output_every * 2;
    let fine = run(2 * n, &fine_cfg)?;
    Ok(RefinementReport { coarse, fine })
}
