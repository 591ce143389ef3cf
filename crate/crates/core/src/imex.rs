//! Second-order IMEX stepping: Crank-Nicolson on a constant-coefficient diffusion
//! operator diagonalised in Fourier space, Adams-Bashforth-2 on everything else.
//!
//! The first step uses an explicit-Euler predictor and a trapezoidal corrector for the
//! explicit part so the whole scheme stays second order without a starting value.

use num_complex::Complex64;

use crate::error::{CnsError, Result};
use crate::spectral::{GridField, Rank, TorusGrid};

/// Constant-coefficient principal part.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Principal {
    /// `kappa Lap`
    Scalar { kappa: f64 },
    /// `mu Lap m + (nu - mu) grad div m`: transverse rate `mu`, longitudinal rate `nu`
    Vector { mu: f64, nu: f64 },
}

/// Fourier data of the grid shared by all principal operators.
#[derive(Clone, Debug)]
pub struct Symbols {
    grid: TorusGrid,
    xi: Vec<[f64; 3]>,
    xi2: Vec<f64>,
    mask: Vec<bool>,
}

impl Symbols {
    pub fn new(grid: &TorusGrid) -> Self {
        let xi: Vec<[f64; 3]> = (0..grid.len()).map(|i| grid.wavevector(i)).collect();
        let xi2 = xi.iter().map(|x| x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).collect();
        Symbols { grid: grid.clone(), xi, xi2, mask: grid.dealias_mask() }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    /// Apply per-mode multipliers `(transverse, longitudinal)` to dealiased coefficients.
    fn map_modes(&self, f: &GridField, mult: impl Fn(f64) -> (f64, f64)) -> GridField {
        let coeffs = f.coefficients();
        let d = self.grid.dim();
        let len = self.grid.len();
        let mut out = vec![vec![Complex64::default(); len]; coeffs.len()];
        for k in 0..len {
            if !self.mask[k] {
                continue;
            }
            let (t, l) = mult(self.xi2[k]);
            if f.rank() == Rank::Vector && k != 0 && t != l {
                let xi = &self.xi[k];
                let dot: Complex64 = (0..d).map(|a| coeffs[a][k] * xi[a]).sum::<Complex64>() / self.xi2[k];
                for a in 0..d {
                    let long = dot * xi[a];
                    out[a][k] = (coeffs[a][k] - long) * t + long * l;
                }
            } else {
                for (o, c) in out.iter_mut().zip(&coeffs) {
                    o[k] = c[k] * t;
                }
            }
        }
        let spec = GridField::from_spectral(&self.grid, f.rank(), out).expect("shape");
        spec.inverse_transform().expect("spectral")
    }

    /// Principal operator applied to `f` (dealiased, physical).
    pub fn apply(&self, p: Principal, f: &GridField) -> GridField {
        let (mu, nu) = rates(p);
        self.map_modes(f, |x2| (-mu * x2, -nu * x2))
    }

    /// Dealias projection of a physical field.
    pub fn project(&self, f: &GridField) -> GridField {
        self.map_modes(f, |_| (1.0, 1.0))
    }

    /// `y = (1 - h/2 P)^{-1} [(1 + h/2 P) y_n + h e]`.
    pub fn crank_nicolson(&self, p: Principal, h: f64, y_n: &GridField, e: &GridField) -> Result<GridField> {
        let (mu, nu) = rates(p);
        let explicit = self.map_modes(y_n, |x2| {
            ((1.0 - 0.5 * h * mu * x2) / (1.0 + 0.5 * h * mu * x2), (1.0 - 0.5 * h * nu * x2) / (1.0 + 0.5 * h * nu * x2))
        });
        let forced = self.map_modes(e, |x2| (h / (1.0 + 0.5 * h * mu * x2), h / (1.0 + 0.5 * h * nu * x2)));
        explicit.add(&forced)
    }
}

fn rates(p: Principal) -> (f64, f64) {
    match p {
        Principal::Scalar { kappa } => (kappa, kappa),
        Principal::Vector { mu, nu } => (mu, nu),
    }
}

fn trapezoid_source(sources: &[GridField], n: usize, like: &GridField) -> Result<GridField> {
    if sources.is_empty() {
        return Ok(GridField::zeros(like.grid(), like.rank()));
    }
    Ok(sources[n].add(&sources[n + 1])?.scale(0.5))
}

/// Integrate `y' = P y + R(y) + S(t)` over `steps` steps of size `h`.
///
/// `remainder` returns `R(y)`; `sources` holds `S(t_n)` for `n = 0..=steps` (or is empty).
/// Fails with an instability error when the max norm grows more than tenfold in a step
/// beyond what the sources account for.
pub fn integrate(
    symbols: &Symbols,
    p: Principal,
    h: f64,
    steps: usize,
    y0: &GridField,
    sources: &[GridField],
    remainder: impl Fn(&GridField) -> Result<GridField>,
) -> Result<Vec<GridField>> {
    if !sources.is_empty() && sources.len() != steps + 1 {
        return Err(CnsError::TimeGrid(format!("{} source samples for {} steps", sources.len(), steps)));
    }
    let mut traj = Vec::with_capacity(steps + 1);
    traj.push(symbols.project(y0));
    let mut r_prev: Option<GridField> = None;
    for n in 0..steps {
        let y_n = &traj[n];
        let r_n = remainder(y_n)?;
        let s = trapezoid_source(sources, n, y_n)?;
        let next = match &r_prev {
            None => {
                let pred = symbols.crank_nicolson(p, h, y_n, &r_n.add(&s)?)?;
                let r_pred = remainder(&pred)?;
                let e = r_n.add(&r_pred)?.scale(0.5).add(&s)?;
                symbols.crank_nicolson(p, h, y_n, &e)?
            }
            Some(rp) => {
                let e = r_n.scale(1.5).sub(&rp.scale(0.5))?.add(&s)?;
                symbols.crank_nicolson(p, h, y_n, &e)?
            }
        };
        let before = y_n.max_abs() + h * s.max_abs();
        let after = next.max_abs();
        if !after.is_finite() || (after > 1e-12 && after > 10.0 * before) {
            return Err(CnsError::Instability {
                time: (n + 1) as f64 * h,
                growth: if before > 0.0 { after / before } else { f64::INFINITY },
            });
        }
        r_prev = Some(r_n);
        traj.push(next);
    }
    Ok(traj)
}

/// Coupled variant of [`integrate`]: `y_i' = P_i y_i + E_i(y)` for a tuple of fields.
///
/// `explicit` returns `E(y)`, the right side minus the principal parts. `check` runs on
/// every predicted and accepted state.
pub fn integrate_system(
    symbols: &Symbols,
    principals: &[Principal],
    h: f64,
    steps: usize,
    y0: &[GridField],
    explicit: impl Fn(&[GridField]) -> Result<Vec<GridField>>,
    check: impl Fn(f64, &[GridField]) -> Result<()>,
) -> Result<Vec<Vec<GridField>>> {
    if principals.len() != y0.len() {
        return Err(CnsError::ShapeMismatch(format!("{} principal parts for {} fields", principals.len(), y0.len())));
    }
    let cn = |y: &[GridField], e: &[GridField]| -> Result<Vec<GridField>> {
        y.iter().zip(e).zip(principals).map(|((yi, ei), &p)| symbols.crank_nicolson(p, h, yi, ei)).collect()
    };
    let combine = |a: &[GridField], wa: f64, b: &[GridField], wb: f64| -> Result<Vec<GridField>> {
        a.iter().zip(b).map(|(x, y)| x.scale(wa).add(&y.scale(wb))).collect()
    };
    let mut traj: Vec<Vec<GridField>> = Vec::with_capacity(steps + 1);
    traj.push(y0.iter().map(|y| symbols.project(y)).collect());
    check(0.0, &traj[0])?;
    let mut e_prev: Option<Vec<GridField>> = None;
    for n in 0..steps {
        let y_n = &traj[n];
        let e_n = explicit(y_n)?;
        let next = match &e_prev {
            None => {
                let pred = cn(y_n, &e_n)?;
                check((n + 1) as f64 * h, &pred)?;
                let e = combine(&e_n, 0.5, &explicit(&pred)?, 0.5)?;
                cn(y_n, &e)?
            }
            Some(ep) => cn(y_n, &combine(&e_n, 1.5, ep, -0.5)?)?,
        };
        let before: f64 = y_n.iter().map(|y| y.max_abs()).sum();
        let after: f64 = next.iter().map(|y| y.max_abs()).sum();
        if !after.is_finite() || (after > 1e-12 && after > 10.0 * before) {
            return Err(CnsError::Instability {
                time: (n + 1) as f64 * h,
                growth: if before > 0.0 { after / before } else { f64::INFINITY },
            });
        }
        check((n + 1) as f64 * h, &next)?;
        e_prev = Some(e_n);
        traj.push(next);
    }
    Ok(traj)
}

/// Per-step residuals of the scheme for a given trajectory, divided by `h`:
/// `(y_{n+1} - y_n)/h - P (y_{n+1} + y_n)/2 - E_n` with `E_n` formed exactly as in
/// [`integrate`].
pub fn step_residuals(
    symbols: &Symbols,
    p: Principal,
    h: f64,
    traj: &[GridField],
    sources: &[GridField],
    remainder: impl Fn(&GridField) -> Result<GridField>,
) -> Result<Vec<GridField>> {
    let mut out = Vec::with_capacity(traj.len().saturating_sub(1));
    let mut r_prev: Option<GridField> = None;
    for n in 0..traj.len().saturating_sub(1) {
        let (y_n, y_next) = (&traj[n], &traj[n + 1]);
        let r_n = remainder(y_n)?;
        let s = trapezoid_source(sources, n, y_n)?;
        let e = match &r_prev {
            None => {
                let pred = symbols.crank_nicolson(p, h, y_n, &r_n.add(&s)?)?;
                r_n.add(&remainder(&pred)?)?.scale(0.5).add(&s)?
            }
            Some(rp) => r_n.scale(1.5).sub(&rp.scale(0.5))?.add(&s)?,
        };
        let avg = y_n.add(y_next)?.scale(0.5);
        let res = y_next.sub(y_n)?.scale(1.0 / h).sub(&symbols.apply(p, &avg))?.sub(&symbols.project(&e))?;
        out.push(res);
        r_prev = Some(r_n);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heat_mode_decay() {
        let g = TorusGrid::new(2, 16).unwrap();
        let sym = Symbols::new(&g);
        let y0 = GridField::from_fn_scalar(&g, |x| (x[0] + 2.0 * x[1]).cos());
        let kappa = 0.7;
        let h = 1e-3;
        let traj = integrate(&sym, Principal::Scalar { kappa }, h, 100, &y0, &[], |y| {
            Ok(GridField::zeros(y.grid(), y.rank()))
        })
        .unwrap();
        let exact = y0.scale((-kappa * 5.0 * 0.1f64).exp());
        assert!(traj[100].max_diff(&exact).unwrap() < 1e-6);
    }

    #[test]
    fn vector_split_rates() {
        let g = TorusGrid::new(2, 16).unwrap();
        let sym = Symbols::new(&g);
        // longitudinal mode u = (cos x, 0), transverse mode u = (0, cos x)
        let long = GridField::from_fn_vector(&g, |c, x| if c == 0 { x[0].cos() } else { 0.0 });
        let trans = GridField::from_fn_vector(&g, |c, x| if c == 1 { x[0].cos() } else { 0.0 });
        let p = Principal::Vector { mu: 1.0, nu: 3.0 };
        assert!(sym.apply(p, &long).add(&long.scale(3.0)).unwrap().max_abs() < 1e-13);
        assert!(sym.apply(p, &trans).add(&trans).unwrap().max_abs() < 1e-13);
    }

    #[test]
    fn residuals_vanish_on_own_trajectory() {
        let g = TorusGrid::new(2, 16).unwrap();
        let sym = Symbols::new(&g);
        let y0 = GridField::from_fn_scalar(&g, |x| x[0].sin() + 0.3 * (2.0 * x[1]).cos());
        let w = GridField::from_fn_scalar(&g, |x| 0.2 * x[1].cos());
        let rem = |y: &GridField| Ok(y.mul_scalar_field(&w)?.filtered());
        let src: Vec<GridField> = (0..=6).map(|n| y0.scale(0.1 * n as f64)).collect();
        let p = Principal::Scalar { kappa: 0.5 };
        let traj = integrate(&sym, p, 0.01, 6, &y0, &src, rem).unwrap();
        let res = step_residuals(&sym, p, 0.01, &traj, &src, rem).unwrap();
        assert!(res.iter().all(|r| r.max_abs() < 1e-11));
    }
}
