//! Density-dependent coefficients and the pressure law `P = pi0(rho) + theta pi1(rho)`.

use std::fmt;

use crate::error::{CnsError, Result};
use crate::littlewood_paley::DyadicFilterBank;
use crate::spectral::{GridField, Rank};

/// Closed-form scalar function of the density, with its derivative.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Coefficient {
    Constant(f64),
    /// `a + b rho`
    Affine { a: f64, b: f64 },
    /// `c (rho^gamma - 1)`
    PowerShift { c: f64, gamma: f64 },
    /// `-alpha (rho^2 - 1)`
    QuadraticShift { alpha: f64 },
    /// `beta rho / (gamma - rho)`
    VdwPole { beta: f64, gamma: f64 },
}

impl Coefficient {
    pub fn value(&self, rho: f64) -> f64 {
        match *self {
            Coefficient::Constant(c) => c,
            Coefficient::Affine { a, b } => a + b * rho,
            Coefficient::PowerShift { c, gamma } => c * (rho.powf(gamma) - 1.0),
            Coefficient::QuadraticShift { alpha } => -alpha * (rho * rho - 1.0),
            Coefficient::VdwPole { beta, gamma } => beta * rho / (gamma - rho),
        }
    }

    pub fn derivative(&self, rho: f64) -> f64 {
        match *self {
            Coefficient::Constant(_) => 0.0,
            Coefficient::Affine { b, .. } => b,
            Coefficient::PowerShift { c, gamma } => c * gamma * rho.powf(gamma - 1.0),
            Coefficient::QuadraticShift { alpha } => -2.0 * alpha * rho,
            Coefficient::VdwPole { beta, gamma } => beta * gamma / ((gamma - rho) * (gamma - rho)),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(*self, Coefficient::Constant(c) if c == 0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LawKind {
    Ideal,
    Barotropic,
    VanDerWaals,
}

impl LawKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name.trim() {
            "ideal" => Ok(LawKind::Ideal),
            "barotropic" => Ok(LawKind::Barotropic),
            "van_der_waals" | "van-der-waals" | "vdw" => Ok(LawKind::VanDerWaals),
            other => Err(CnsError::Config(format!("unknown law `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LawKind::Ideal => "ideal",
            LawKind::Barotropic => "barotropic",
            LawKind::VanDerWaals => "van_der_waals",
        }
    }
}

impl fmt::Display for LawKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parameters of the builtin laws.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LawParams {
    pub kind: LawKind,
    pub r: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub mu: f64,
    pub lambda: f64,
    pub k: f64,
}

impl Default for LawParams {
    fn default() -> Self {
        LawParams { kind: LawKind::Ideal, r: 1.0, alpha: 1.0, beta: 1.0, gamma: 1.4, mu: 1.0, lambda: 0.0, k: 1.0 }
    }
}

/// Which coefficient function to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Which {
    Mu,
    Lambda,
    K,
    Pi0,
    Pi1,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstitutiveLaw {
    pub name: String,
    pub mu: Coefficient,
    pub lambda: Coefficient,
    pub k: Coefficient,
    pub pi0: Coefficient,
    pub pi1: Coefficient,
    /// open admissible density interval
    pub density_range: (f64, f64),
}

/// Build one of the three builtin laws.
pub fn builtin_law(params: &LawParams) -> Result<ConstitutiveLaw> {
    let LawParams { kind, r, alpha, beta, gamma, mu, lambda, k } = *params;
    if !(mu > 0.0) || !(lambda + 2.0 * mu > 0.0) || !(k > 0.0) {
        return Err(CnsError::InvalidParameter(format!(
            "need mu > 0, lambda + 2 mu > 0, k > 0 (mu={mu}, lambda={lambda}, k={k})"
        )));
    }
    let (pi0, pi1, hi) = match kind {
        LawKind::Ideal => (Coefficient::Constant(0.0), Coefficient::Affine { a: 0.0, b: r }, f64::INFINITY),
        LawKind::Barotropic => {
            (Coefficient::PowerShift { c: r, gamma }, Coefficient::Constant(0.0), f64::INFINITY)
        }
        LawKind::VanDerWaals => {
            if !(gamma > 1.0) {
                return Err(CnsError::InvalidParameter(format!(
                    "van der Waals pole gamma={gamma} must exceed the reference density 1"
                )));
            }
            (Coefficient::QuadraticShift { alpha }, Coefficient::VdwPole { beta, gamma }, gamma)
        }
    };
    Ok(ConstitutiveLaw {
        name: kind.name().to_string(),
        mu: Coefficient::Constant(mu),
        lambda: Coefficient::Constant(lambda),
        k: Coefficient::Constant(k),
        pi0,
        pi1,
        density_range: (0.0, hi),
    })
}

impl ConstitutiveLaw {
    pub fn coefficient(&self, which: Which) -> &Coefficient {
        match which {
            Which::Mu => &self.mu,
            Which::Lambda => &self.lambda,
            Which::K => &self.k,
            Which::Pi0 => &self.pi0,
            Which::Pi1 => &self.pi1,
        }
    }

    pub fn pressure(&self, rho: f64, theta: f64) -> f64 {
        self.pi0.value(rho) + theta * self.pi1.value(rho)
    }

    /// Error unless every value lies strictly inside the admissible interval.
    pub fn check_density(&self, rho: &[f64]) -> Result<()> {
        let (lo, hi) = self.density_range;
        if let Some(&bad) = rho.iter().find(|&&r| !(r > lo && r < hi)) {
            return Err(CnsError::DensityOutOfRange { law: self.name.clone(), value: bad, lo, hi });
        }
        Ok(())
    }

    fn scalar_values<'a>(&self, rho: &'a GridField) -> Result<std::borrow::Cow<'a, [f64]>> {
        if rho.rank() != Rank::Scalar {
            return Err(CnsError::ShapeMismatch("density must be a scalar field".into()));
        }
        let vals: std::borrow::Cow<'a, [f64]> = match rho.physical() {
            Ok(c) => std::borrow::Cow::Borrowed(&c[0][..]),
            Err(_) => std::borrow::Cow::Owned(rho.to_physical().values(0).to_vec()),
        };
        self.check_density(&vals)?;
        Ok(vals)
    }

    /// Pointwise values of a coefficient, without dealiasing.
    pub fn evaluate_raw(&self, which: Which, rho: &GridField) -> Result<GridField> {
        let vals = self.scalar_values(rho)?;
        let c = self.coefficient(which);
        GridField::scalar(rho.grid(), vals.iter().map(|&r| c.value(r)).collect())
    }

    /// Pointwise values of a coefficient, then dealiased.
    pub fn evaluate_coefficient(&self, which: Which, rho: &GridField) -> Result<GridField> {
        Ok(self.evaluate_raw(which, rho)?.filtered())
    }

    /// `pi0(rho) + theta pi1(rho)`, dealiased.
    pub fn pressure_eulerian(&self, rho: &GridField, theta: &GridField) -> Result<GridField> {
        let r = self.scalar_values(rho)?;
        let th = theta.to_physical();
        let vals = r.iter().zip(th.values(0)).map(|(&r, &t)| self.pressure(r, t)).collect();
        Ok(GridField::scalar(rho.grid(), vals)?.filtered())
    }

    /// `pi0(rho_bar) + (K_bar/rho0 - |u_bar|^2/2) pi1(rho_bar)`, dealiased.
    pub fn pressure_lagrangian(
        &self,
        rho_bar: &GridField,
        k_bar: &GridField,
        rho0: &GridField,
        u_bar: &GridField,
    ) -> Result<GridField> {
        let r0 = rho0.to_physical();
        let min0 = r0.values(0).iter().copied().fold(f64::INFINITY, f64::min);
        if !(min0 > 0.0) {
            return Err(CnsError::Vacuum { time: 0.0, min_density: min0 });
        }
        let theta = lagrangian_temperature(k_bar, rho0, u_bar)?;
        self.pressure_eulerian(rho_bar, &theta)
    }

    /// Grid infima `alpha = min(inf mu/rho0, inf (2mu+lambda)/rho0)`, `beta = inf k/rho0`.
    pub fn ellipticity_constants(&self, rho0: &GridField) -> Result<EllipticityConstants> {
        let r = self.scalar_values(rho0)?;
        let mut inf_mu = f64::INFINITY;
        let mut inf_nu = f64::INFINITY;
        let mut inf_k = f64::INFINITY;
        for &x in r.iter() {
            let mu = self.mu.value(x);
            inf_mu = inf_mu.min(mu / x);
            inf_nu = inf_nu.min((2.0 * mu + self.lambda.value(x)) / x);
            inf_k = inf_k.min(self.k.value(x) / x);
        }
        Ok(EllipticityConstants { alpha: inf_mu.min(inf_nu), beta: inf_k })
    }

    /// Check the frequency-cutoff conditions for a given `m`.
    pub fn cutoff_admissible(
        &self,
        rho0: &GridField,
        m: i32,
        eta: f64,
        bank: &DyadicFilterBank,
        p: f64,
    ) -> Result<CutoffReport> {
        let consts = self.ellipticity_constants(rho0)?;
        let parts = CutoffFields::new(self, rho0)?;
        let inf_of = |f: &GridField| -> Result<f64> {
            let s = bank.low_freq_cutoff(f, m)?.to_physical();
            Ok(s.values(0).iter().copied().fold(f64::INFINITY, f64::min))
        };
        let smoothed_mu = inf_of(&parts.a_mu)?;
        let smoothed_nu = inf_of(&parts.a_nu)?;
        let smoothed_k = inf_of(&parts.c_k)?;
        let s = rho0.grid().dim() as f64 / p - 1.0;
        let high = |fields: &[GridField]| -> Result<f64> {
            let mut acc = 0.0;
            for f in fields {
                let low = bank.low_freq_cutoff(f, m)?;
                acc += bank.besov_value(&f.sub(&low)?, s, p)?;
            }
            Ok(acc)
        };
        let momentum_mass = high(&parts.momentum)?;
        let energy_mass = high(&parts.energy)?;
        let admissible = smoothed_mu.min(smoothed_nu) >= consts.alpha / 2.0
            && smoothed_k >= consts.beta / 2.0
            && momentum_mass <= eta * consts.alpha
            && energy_mass <= eta * consts.beta;
        Ok(CutoffReport {
            m,
            constants: consts,
            smoothed_inf_mu: smoothed_mu,
            smoothed_inf_nu: smoothed_nu,
            smoothed_inf_k: smoothed_k,
            momentum_mass,
            energy_mass,
            admissible,
        })
    }

    /// Smallest `m` in `[j_min - 1, j_max + 1]` such that every larger `m` in that range is
    /// admissible, with the reports of the whole scan.
    pub fn find_cutoff(
        &self,
        rho0: &GridField,
        eta: f64,
        bank: &DyadicFilterBank,
        p: f64,
    ) -> Result<(Option<i32>, Vec<CutoffReport>)> {
        let reports = ((bank.j_min() - 1)..=(bank.j_max() + 1))
            .map(|m| self.cutoff_admissible(rho0, m, eta, bank, p))
            .collect::<Result<Vec<_>>>()?;
        let mut best = None;
        for r in reports.iter().rev() {
            if r.admissible {
                best = Some(r.m);
            } else {
                break;
            }
        }
        Ok((best, reports))
    }
}

/// `theta = K/rho0 - |u|^2/2`, pointwise.
pub fn lagrangian_temperature(k_bar: &GridField, rho0: &GridField, u_bar: &GridField) -> Result<GridField> {
    let k = k_bar.to_physical();
    let r0 = rho0.to_physical();
    let u = u_bar.to_physical();
    let uc = u.physical()?;
    let vals = (0..k.grid().len())
        .map(|i| {
            let u2: f64 = uc.iter().map(|c| c[i] * c[i]).sum();
            k.values(0)[i] / r0.values(0)[i] - 0.5 * u2
        })
        .collect();
    GridField::scalar(k.grid(), vals)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EllipticityConstants {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CutoffReport {
    pub m: i32,
    pub constants: EllipticityConstants,
    pub smoothed_inf_mu: f64,
    pub smoothed_inf_nu: f64,
    pub smoothed_inf_k: f64,
    /// `sum ||(Id - S_m) f||` over `a grad mu, b grad lambda, mu grad a, lambda grad b`
    pub momentum_mass: f64,
    /// same over `k grad c, c grad k`
    pub energy_mass: f64,
    pub admissible: bool,
}

/// Coefficient fields entering the cutoff conditions, with `a = b = c = 1/rho0`.
struct CutoffFields {
    a_mu: GridField,
    a_nu: GridField,
    c_k: GridField,
    momentum: Vec<GridField>,
    energy: Vec<GridField>,
}

impl CutoffFields {
    fn new(law: &ConstitutiveLaw, rho0: &GridField) -> Result<Self> {
        let r = rho0.to_physical();
        let grid = r.grid();
        let x = r.values(0);
        let grad = r.gradient()?;
        let along = |f: &dyn Fn(f64) -> f64| -> Result<GridField> {
            let w = GridField::scalar(grid, x.iter().map(|&v| f(v)).collect())?;
            grad.mul_scalar_field(&w)
        };
        let pointwise = |f: &dyn Fn(f64) -> f64| GridField::scalar(grid, x.iter().map(|&v| f(v)).collect());
        let (mu, la, k) = (law.mu, law.lambda, law.k);
        Ok(CutoffFields {
            a_mu: pointwise(&|v| mu.value(v) / v)?,
            a_nu: pointwise(&|v| (2.0 * mu.value(v) + la.value(v)) / v)?,
            c_k: pointwise(&|v| k.value(v) / v)?,
            momentum: vec![
                along(&|v| mu.derivative(v) / v)?,
                along(&|v| la.derivative(v) / v)?,
                along(&|v| -mu.value(v) / (v * v))?,
                along(&|v| -la.value(v) / (v * v))?,
            ],
            energy: vec![along(&|v| -k.value(v) / (v * v))?, along(&|v| k.derivative(v) / v)?],
        })
    }
}
