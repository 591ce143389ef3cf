//! Scenario files, the run/verify/report pipelines, and run manifests.
//!
//! Scenario files are flat `key = value` text; `#` starts a comment. Every output file of
//! a run is listed in `manifest.txt`, which lists itself as well.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::constitutive::{builtin_law, LawKind, LawParams};
use crate::error::{CnsError, Result};
use crate::estimates::{verify_estimates, EstimateKind, EstimateParams, RandomModes, RatioReport};
use crate::eulerian::{equivalence_experiment, integrate_eulerian, refinement_study, EquivalenceConfig, EulerianState};
use crate::flow::{check_div_identity, check_jacobi, FlowMap, VelocityTimeline};
use crate::lagrangian::{fmt_float, picard_solve, LagrangianData, SolverConfig};
use crate::littlewood_paley::DyadicFilterBank;
use crate::snapshot;
use crate::spectral::{GridField, Rank, TorusGrid};

/// Environment variable naming the directory that receives run outputs.
pub const OUTPUT_ROOT_VAR: &str = "CNSLAB_OUTPUT_ROOT";

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

/// Parsed `key = value` pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CnsError::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(CnsError::Config(format!("line {}: empty key", lineno + 1)));
            }
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(CnsError::Config(format!("line {}: duplicate key `{key}`", lineno + 1)));
            }
        }
        Ok(KeyValues { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| CnsError::Config(format!("bad value `{v}` for `{key}`"))),
        }
    }

    fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// Closed-form initial data.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialData {
    /// constant state `(rho, 0, theta)`
    Quiescent { rho: f64, theta: f64 },
    /// `rho = 1`, `u = 0`, `theta = 1 + amplitude cos(k . y)`
    HeatMode { mode: [i64; 3], amplitude: f64 },
    /// `rho = 1 + d sin y1 cos y2`, `u = eps (sin y2, cos y1, sin y1)`, `theta = 1 + eps cos(y1 + y2)`
    SmallWave { amplitude: f64, density_amplitude: f64 },
}

impl InitialData {
    pub fn name(&self) -> &'static str {
        match self {
            InitialData::Quiescent { .. } => "quiescent",
            InitialData::HeatMode { .. } => "heat-mode",
            InitialData::SmallWave { .. } => "smallwave",
        }
    }

    /// `(rho0, u0, theta0)` sampled on `grid`.
    pub fn sample(&self, grid: &TorusGrid) -> Result<(GridField, GridField, GridField)> {
        let d = grid.dim();
        Ok(match *self {
            InitialData::Quiescent { rho, theta } => (
                GridField::constant_scalar(grid, rho),
                GridField::zeros(grid, Rank::Vector),
                GridField::constant_scalar(grid, theta),
            ),
            InitialData::HeatMode { mode, amplitude } => (
                GridField::constant_scalar(grid, 1.0),
                GridField::zeros(grid, Rank::Vector),
                GridField::from_fn_scalar(grid, |y| {
                    let ph: f64 = (0..d).map(|a| mode[a] as f64 * y[a]).sum();
                    1.0 + amplitude * ph.cos()
                }),
            ),
            InitialData::SmallWave { amplitude: eps, density_amplitude: da } => (
                GridField::from_fn_scalar(grid, |y| 1.0 + da * y[0].sin() * y[1].cos()),
                GridField::from_fn_vector(grid, |c, y| {
                    eps * match c {
                        0 => y[1].sin(),
                        1 => y[0].cos(),
                        _ => y[0].sin(),
                    }
                }),
                GridField::from_fn_scalar(grid, |y| 1.0 + eps * (y[0] + y[1]).cos()),
            ),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Pipeline {
    Lagrangian,
    Eulerian,
    Equivalence,
    Estimates,
    Kinematics,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Lagrangian => "lagrangian",
            Pipeline::Eulerian => "eulerian",
            Pipeline::Equivalence => "equivalence",
            Pipeline::Estimates => "estimates",
            Pipeline::Kinematics => "kinematics",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [Pipeline::Lagrangian, Pipeline::Eulerian, Pipeline::Equivalence, Pipeline::Estimates, Pipeline::Kinematics]
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| CnsError::Config(format!("unknown pipeline `{s}`")))
    }
}

/// Pass/fail thresholds; all overridable from the scenario file.
#[derive(Clone, Debug, PartialEq)]
pub struct Tolerances {
    pub mass: f64,
    pub drift: f64,
    /// max-norm discrepancy allowed between the two solvers, or `None` for no check
    pub equivalence: Option<f64>,
    pub refinement_ratio: f64,
    pub residual_factor: f64,
    pub flow_algebra: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            mass: 1e-10,
            drift: 1e-8,
            equivalence: None,
            refinement_ratio: 4.0,
            residual_factor: 10.0,
            flow_algebra: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub dim: usize,
    pub resolution: usize,
    pub law: LawParams,
    pub initial: InitialData,
    pub solver: SolverConfig,
    pub output_every: usize,
    pub pipelines: Vec<Pipeline>,
    pub tolerances: Tolerances,
    pub estimate_trials: usize,
    /// run the equivalence experiment again at twice the resolution and half the step,
    /// starting from `refine_base` points per axis
    pub refine: bool,
    pub refine_base: usize,
}

const KNOWN_KEYS: &[&str] = &[
    "name",
    "dim",
    "resolution",
    "initial",
    "initial.rho",
    "initial.theta",
    "initial.mode",
    "initial.amplitude",
    "initial.density_amplitude",
    "law.name",
    "law.R",
    "law.alpha",
    "law.beta",
    "law.gamma",
    "law.mu",
    "law.lambda",
    "law.k",
    "dt",
    "T",
    "picard_tol",
    "max_picard",
    "smallness_c",
    "cutoff_m",
    "eta",
    "p",
    "seed",
    "output_every",
    "pipelines",
    "tol.mass",
    "tol.drift",
    "tol.equivalence",
    "tol.refinement_ratio",
    "tol.residual_factor",
    "tol.flow_algebra",
    "estimates.trials",
    "equivalence.refine",
    "equivalence.refine_base",
];

impl Scenario {
    pub fn builtin(name: &str) -> Result<Self> {
        let base = Scenario {
            name: name.to_string(),
            dim: 2,
            resolution: 32,
            law: LawParams::default(),
            initial: InitialData::Quiescent { rho: 1.0, theta: 1.0 },
            solver: SolverConfig { dt: 0.005, horizon: 0.1, ..Default::default() },
            output_every: 5,
            pipelines: vec![Pipeline::Lagrangian, Pipeline::Eulerian, Pipeline::Equivalence, Pipeline::Kinematics],
            tolerances: Tolerances::default(),
            estimate_trials: 100,
            refine: false,
            refine_base: 32,
        };
        match name {
            "quiescent" => Ok(Scenario { tolerances: Tolerances { equivalence: Some(1e-12), ..Default::default() }, ..base }),
            "heat-mode" => Ok(Scenario {
                law: LawParams { kind: LawKind::Barotropic, ..Default::default() },
                initial: InitialData::HeatMode { mode: [1, 2, 0], amplitude: 0.1 },
                tolerances: Tolerances { equivalence: Some(1e-6), ..Default::default() },
                ..base
            }),
            "smallwave" => Ok(Scenario {
                resolution: 64,
                initial: InitialData::SmallWave { amplitude: 0.05, density_amplitude: 0.05 },
                ..base
            }),
            other => Err(CnsError::Config(format!("no builtin scenario `{other}`"))),
        }
    }

    pub fn builtin_names() -> [&'static str; 3] {
        ["quiescent", "heat-mode", "smallwave"]
    }

    pub fn parse(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        if let Some(bad) = kv.keys().find(|k| !KNOWN_KEYS.contains(k)) {
            return Err(CnsError::Config(format!("unknown key `{bad}`")));
        }
        let initial_name = kv.get("initial").unwrap_or("quiescent");
        let mut sc = Scenario::builtin(initial_name)?;
        sc.name = kv.get("name").unwrap_or(initial_name).to_string();
        sc.dim = kv.parsed("dim", sc.dim)?;
        sc.resolution = kv.parsed("resolution", sc.resolution)?;
        sc.initial = match sc.initial {
            InitialData::Quiescent { rho, theta } => {
                InitialData::Quiescent { rho: kv.parsed("initial.rho", rho)?, theta: kv.parsed("initial.theta", theta)? }
            }
            InitialData::HeatMode { mode, amplitude } => {
                let mode = match kv.get("initial.mode") {
                    None => mode,
                    Some(s) => {
                        let v: Vec<i64> = s
                            .split_whitespace()
                            .map(|t| t.parse().map_err(|_| CnsError::Config(format!("bad mode `{s}`"))))
                            .collect::<Result<_>>()?;
                        if v.is_empty() || v.len() > 3 {
                            return Err(CnsError::Config(format!("mode needs 1 to 3 integers, got `{s}`")));
                        }
                        let mut m = [0; 3];
                        m[..v.len()].copy_from_slice(&v);
                        m
                    }
                };
                InitialData::HeatMode { mode, amplitude: kv.parsed("initial.amplitude", amplitude)? }
            }
            InitialData::SmallWave { amplitude, density_amplitude } => InitialData::SmallWave {
                amplitude: kv.parsed("initial.amplitude", amplitude)?,
                density_amplitude: kv.parsed("initial.density_amplitude", density_amplitude)?,
            },
        };
        if let Some(name) = kv.get("law.name") {
            sc.law.kind = LawKind::parse(name)?;
        }
        let l = sc.law;
        sc.law = LawParams {
            kind: l.kind,
            r: kv.parsed("law.R", l.r)?,
            alpha: kv.parsed("law.alpha", l.alpha)?,
            beta: kv.parsed("law.beta", l.beta)?,
            gamma: kv.parsed("law.gamma", l.gamma)?,
            mu: kv.parsed("law.mu", l.mu)?,
            lambda: kv.parsed("law.lambda", l.lambda)?,
            k: kv.parsed("law.k", l.k)?,
        };
        let s = sc.solver.clone();
        sc.solver = SolverConfig {
            dt: kv.parsed("dt", s.dt)?,
            horizon: kv.parsed("T", s.horizon)?,
            picard_tol: kv.parsed("picard_tol", s.picard_tol)?,
            max_picard: kv.parsed("max_picard", s.max_picard)?,
            smallness_c: kv.parsed("smallness_c", s.smallness_c)?,
            cutoff_m: match kv.get("cutoff_m") {
                None | Some("auto") => None,
                Some(v) => Some(v.parse().map_err(|_| CnsError::Config(format!("bad cutoff_m `{v}`")))?),
            },
            eta: kv.parsed("eta", s.eta)?,
            p: kv.parsed("p", s.p)?,
            seed: kv.parsed("seed", s.seed)?,
        };
        sc.output_every = kv.parsed("output_every", sc.output_every)?;
        if let Some(list) = kv.get("pipelines") {
            sc.pipelines = list
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(Pipeline::parse)
                .collect::<Result<_>>()?;
        }
        let t = sc.tolerances.clone();
        sc.tolerances = Tolerances {
            mass: kv.parsed("tol.mass", t.mass)?,
            drift: kv.parsed("tol.drift", t.drift)?,
            equivalence: match kv.get("tol.equivalence") {
                None => t.equivalence,
                Some("none") => None,
                Some(v) => Some(v.parse().map_err(|_| CnsError::Config(format!("bad tol.equivalence `{v}`")))?),
            },
            refinement_ratio: kv.parsed("tol.refinement_ratio", t.refinement_ratio)?,
            residual_factor: kv.parsed("tol.residual_factor", t.residual_factor)?,
            flow_algebra: kv.parsed("tol.flow_algebra", t.flow_algebra)?,
        };
        sc.estimate_trials = kv.parsed("estimates.trials", sc.estimate_trials)?;
        sc.refine = kv.parsed("equivalence.refine", sc.refine)?;
        sc.refine_base = kv.parsed("equivalence.refine_base", sc.refine_base)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        TorusGrid::new(self.dim, self.resolution)?;
        self.solver.validate()?;
        builtin_law(&self.law)?;
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(CnsError::Config(format!("scenario name `{}` is not a plain file name", self.name)));
        }
        if self.dim < 2 && matches!(self.initial, InitialData::SmallWave { .. }) {
            return Err(CnsError::Config("smallwave data needs dim >= 2".into()));
        }
        Ok(())
    }

    /// Canonical scenario text; parsing it returns the same scenario.
    pub fn to_config(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("name", self.name.clone());
        kv("initial", self.initial.name().to_string());
        match &self.initial {
            InitialData::Quiescent { rho, theta } => {
                kv("initial.rho", rho.to_string());
                kv("initial.theta", theta.to_string());
            }
            InitialData::HeatMode { mode, amplitude } => {
                kv("initial.mode", format!("{} {} {}", mode[0], mode[1], mode[2]));
                kv("initial.amplitude", amplitude.to_string());
            }
            InitialData::SmallWave { amplitude, density_amplitude } => {
                kv("initial.amplitude", amplitude.to_string());
                kv("initial.density_amplitude", density_amplitude.to_string());
            }
        }
        kv("dim", self.dim.to_string());
        kv("resolution", self.resolution.to_string());
        kv("law.name", self.law.kind.name().to_string());
        kv("law.R", self.law.r.to_string());
        kv("law.alpha", self.law.alpha.to_string());
        kv("law.beta", self.law.beta.to_string());
        kv("law.gamma", self.law.gamma.to_string());
        kv("law.mu", self.law.mu.to_string());
        kv("law.lambda", self.law.lambda.to_string());
        kv("law.k", self.law.k.to_string());
        kv("dt", self.solver.dt.to_string());
        kv("T", self.solver.horizon.to_string());
        kv("picard_tol", self.solver.picard_tol.to_string());
        kv("max_picard", self.solver.max_picard.to_string());
        kv("smallness_c", self.solver.smallness_c.to_string());
        kv("cutoff_m", self.solver.cutoff_m.map(|m| m.to_string()).unwrap_or_else(|| "auto".into()));
        kv("eta", self.solver.eta.to_string());
        kv("p", self.solver.p.to_string());
        kv("seed", self.solver.seed.to_string());
        kv("output_every", self.output_every.to_string());
        kv("pipelines", self.pipelines.iter().map(|p| p.name()).collect::<Vec<_>>().join(", "));
        kv("tol.mass", self.tolerances.mass.to_string());
        kv("tol.drift", self.tolerances.drift.to_string());
        kv("tol.equivalence", self.tolerances.equivalence.map(|x| x.to_string()).unwrap_or_else(|| "none".into()));
        kv("tol.refinement_ratio", self.tolerances.refinement_ratio.to_string());
        kv("tol.residual_factor", self.tolerances.residual_factor.to_string());
        kv("tol.flow_algebra", self.tolerances.flow_algebra.to_string());
        kv("estimates.trials", self.estimate_trials.to_string());
        kv("equivalence.refine", self.refine.to_string());
        kv("equivalence.refine_base", self.refine_base.to_string());
        s
    }

    pub fn grid(&self) -> Result<TorusGrid> {
        TorusGrid::new(self.dim, self.resolution)
    }
}

/// One named pass/fail check with its measured value.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub detail: String,
}

impl Check {
    fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Check { name: name.into(), passed: value <= limit, value, detail: format!("<= {limit:e}") }
    }

    fn at_least(name: &str, value: f64, limit: f64) -> Self {
        Check { name: name.into(), passed: value >= limit, value, detail: format!(">= {limit:e}") }
    }

    fn flag(name: &str, passed: bool, detail: String) -> Self {
        Check { name: name.into(), passed, value: if passed { 1.0 } else { 0.0 }, detail }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub scenario: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// file names relative to `output_dir`, each listed once, including the manifest
    pub files: Vec<String>,
    pub checks: Vec<Check>,
    pub errors: Vec<String>,
}

impl RunManifest {
    pub fn success(&self) -> bool {
        self.errors.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario = {}", self.scenario);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "output = {}", self.output_dir.display());
        for f in &self.files {
            let _ = writeln!(s, "file = {f}");
        }
        for c in &self.checks {
            let _ = writeln!(
                s,
                "check.{} = {} {} {}",
                c.name,
                if c.passed { "pass" } else { "fail" },
                fmt_float(c.value),
                c.detail
            );
        }
        for e in &self.errors {
            let _ = writeln!(s, "error = {e}");
        }
        let _ = writeln!(s, "status = {}", if self.success() { "pass" } else { "fail" });
        s
    }
}

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        fs::write(self.dir.join(name), contents)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn snapshot(&mut self, name: &str, f: &GridField) -> Result<()> {
        snapshot::save(&self.dir.join(name), f)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn checkpoint(&mut self, name: &str, fields: &[(String, GridField)]) -> Result<()> {
        snapshot::write_checkpoint(&self.dir.join(name), fields)?;
        self.files.push(name.to_string());
        Ok(())
    }
}

/// Run every pipeline of `scenario`, writing into `root/<scenario name>`. Errors of the
/// pipelines are recorded in the manifest; only I/O failures abort.
pub fn run(scenario: &Scenario, root: &Path) -> Result<RunManifest> {
    scenario.validate()?;
    let dir = root.join(&scenario.name);
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    let mut out = Outputs { dir: dir.clone(), files: Vec::new() };
    let mut checks = Vec::new();
    let mut errors = Vec::new();
    out.write("scenario.cfg", &scenario.to_config())?;
    let mut pipelines = scenario.pipelines.clone();
    pipelines.sort();
    pipelines.dedup();
    for p in pipelines {
        let result = match p {
            Pipeline::Lagrangian => run_lagrangian(scenario, &mut out),
            Pipeline::Eulerian => run_eulerian(scenario, &mut out),
            Pipeline::Equivalence => run_equivalence(scenario, &mut out),
            Pipeline::Estimates => run_estimates(scenario, &mut out),
            Pipeline::Kinematics => run_kinematics(scenario, &mut out),
        };
        match result {
            Ok(mut c) => checks.append(&mut c),
            Err(CnsError::Io(e)) => return Err(CnsError::Io(e)),
            Err(e) => errors.push(format!("{}: {e}", p.name())),
        }
    }
    out.files.push("manifest.txt".into());
    let manifest = RunManifest {
        scenario: scenario.name.clone(),
        seed: scenario.solver.seed,
        output_dir: dir.clone(),
        files: out.files,
        checks,
        errors,
    };
    fs::write(dir.join("manifest.txt"), manifest.to_text())?;
    Ok(manifest)
}

fn lagrangian_data(scenario: &Scenario) -> Result<LagrangianData> {
    let (rho, u, theta) = scenario.initial.sample(&scenario.grid()?)?;
    LagrangianData::from_temperature(rho, u, &theta)
}

fn run_lagrangian(sc: &Scenario, out: &mut Outputs) -> Result<Vec<Check>> {
    let law = builtin_law(&sc.law)?;
    let data = lagrangian_data(sc)?;
    let (sol, rep) = picard_solve(&data, &law, &sc.solver)?;
    out.write("convergence.csv", &rep.to_csv())?;
    let mut fields = Vec::new();
    for (n, t) in sol.trajectory.times.iter().enumerate() {
        if n % sc.output_every.max(1) == 0 || n + 1 == sol.trajectory.len() {
            fields.push((format!("rho {t}"), sol.density.rho_bar[n].clone()));
            fields.push((format!("u {t}"), sol.trajectory.u[n].clone()));
            fields.push((format!("K {t}"), sol.trajectory.k[n].clone()));
        }
    }
    out.checkpoint("lagrangian.chk", &fields)?;
    let last = sol.trajectory.len() - 1;
    out.snapshot("rho_final.snap", &sol.density.rho_bar[last])?;
    out.snapshot("u_final.snap", &sol.trajectory.u[last])?;
    out.snapshot("K_final.snap", &sol.trajectory.k[last])?;

    let final_rec = rep.iterations.last();
    let mut checks = vec![
        Check::flag("picard_converged", rep.converged, format!("{} iterations", rep.iterations.len())),
        Check::flag(
            "contraction",
            rep.ratios().iter().all(|&r| r < 1.0),
            format!("max r_k = {}", fmt_float(rep.ratios().iter().copied().fold(0.0, f64::max))),
        ),
        Check::at_most("mass_identity", sol.density.mass_residual, sc.tolerances.mass),
        Check::at_most("momentum_drift", final_rec.map_or(0.0, |r| r.momentum_drift), sc.tolerances.drift),
        Check::at_most("energy_drift", final_rec.map_or(0.0, |r| r.energy_drift), sc.tolerances.drift),
        Check::at_most(
            "fixed_point_residual",
            rep.fixed_point_residual.unwrap_or(f64::INFINITY),
            sc.tolerances.residual_factor * sc.solver.picard_tol,
        ),
    ];
    checks.push(Check {
        name: "smallness".into(),
        passed: true,
        value: final_rec.map_or(0.0, |r| r.smallness),
        detail: format!(
            "monitor only, threshold {:e}{}",
            sc.solver.smallness_c,
            if rep.smallness_violated { ", exceeded" } else { "" }
        ),
    });
    Ok(checks)
}

fn run_eulerian(sc: &Scenario, out: &mut Outputs) -> Result<Vec<Check>> {
    let law = builtin_law(&sc.law)?;
    let (rho, u, theta) = sc.initial.sample(&sc.grid()?)?;
    let init = EulerianState::from_temperature(&rho, &u, &theta)?;
    let traj = integrate_eulerian(&init, &law, sc.solver.horizon, sc.solver.dt)?;
    let totals = traj.totals()?;
    let mut csv = String::from("time,mass,momentum,energy\n");
    for (s, (m, p, e)) in traj.states.iter().zip(&totals) {
        let pn = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        let _ = writeln!(csv, "{},{},{},{}", fmt_float(s.t), fmt_float(*m), fmt_float(pn), fmt_float(*e));
    }
    out.write("eulerian_totals.csv", &csv)?;
    let last = traj.states.last().expect("at least the initial state");
    out.snapshot("eulerian_rho_final.snap", &last.rho)?;
    out.snapshot("eulerian_u_final.snap", &last.u)?;
    out.snapshot("eulerian_E_final.snap", &last.e)?;

    let (m0, p0, e0) = &totals[0];
    let abs_mom = init.momentum()?.map(f64::abs).integral().iter().sum::<f64>();
    let mut mass = 0.0f64;
    let mut mom = 0.0f64;
    let mut energy = 0.0f64;
    for (m, p, e) in &totals {
        mass = mass.max((m - m0).abs() / m0.abs());
        let dp = p.iter().zip(p0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        mom = mom.max(if abs_mom > 0.0 { dp / abs_mom } else { dp });
        energy = energy.max((e - e0).abs() / e0.abs().max(f64::MIN_POSITIVE));
    }
    Ok(vec![
        Check::at_most("eulerian_mass_drift", mass, sc.tolerances.drift),
        Check::at_most("eulerian_momentum_drift", mom, sc.tolerances.drift),
        Check::at_most("eulerian_energy_drift", energy, sc.tolerances.drift),
    ])
}

fn run_equivalence(sc: &Scenario, out: &mut Outputs) -> Result<Vec<Check>> {
    let law = builtin_law(&sc.law)?;
    let (rho, u, theta) = sc.initial.sample(&sc.grid()?)?;
    let cfg = EquivalenceConfig { solver: sc.solver.clone(), output_every: sc.output_every };
    let rep = equivalence_experiment(&rho, &u, &theta, &law, &cfg)?;
    out.write("equivalence.csv", &rep.to_csv())?;
    let mut checks = vec![Check::flag(
        "equivalence_completed",
        rep.failures.is_empty(),
        if rep.failures.is_empty() { "both solvers ran".into() } else { rep.failures.join("; ") },
    )];
    if let Some(tol) = sc.tolerances.equivalence {
        checks.push(Check::at_most("equivalence_discrepancy", rep.max_discrepancy(), tol));
    }
    if sc.refine {
        let initial = sc.initial.clone();
        let recipe = move |g: &TorusGrid| initial.sample(g);
        let study = refinement_study(&recipe, sc.dim, sc.refine_base, &law, &cfg)?;
        out.write("refinement.csv", &study.to_csv())?;
        checks.push(Check::at_least("refinement_ratio", study.ratio(), sc.tolerances.refinement_ratio));
    }
    Ok(checks)
}

fn run_estimates(sc: &Scenario, out: &mut Outputs) -> Result<Vec<Check>> {
    let grid = sc.grid()?;
    let mut csv = RatioReport::csv_header().to_string();
    let mut checks = Vec::new();
    for kind in EstimateKind::ALL {
        let params = EstimateParams { p: sc.solver.p, ..EstimateParams::default_for(kind, sc.dim) };
        let rep = verify_estimates(kind, &grid, sc.estimate_trials, sc.solver.seed, &params)?;
        csv.push_str(&rep.csv_rows());
        checks.push(Check::flag(
            &format!("estimate_{}", kind.name()),
            rep.max_ratio().is_finite(),
            format!("max ratio {}", fmt_float(rep.max_ratio())),
        ));
    }
    out.write("estimates.csv", &csv)?;
    Ok(checks)
}

fn run_kinematics(sc: &Scenario, out: &mut Outputs) -> Result<Vec<Check>> {
    let law = builtin_law(&sc.law)?;
    let data = lagrangian_data(sc)?;
    let (sol, _) = picard_solve(&data, &law, &sc.solver)?;
    let tl = sol.trajectory.velocity_timeline()?;
    let mut csv = String::from("time,min_jacobian,a_dx_residual,adj_residual\n");
    let mut worst = 0.0f64;
    for (n, d) in tl.displacements().into_iter().enumerate() {
        let x = FlowMap::from_displacement(d, tl.times()[n])?;
        let (a, b) = x.algebra_residuals();
        worst = worst.max(a).max(b);
        let _ = writeln!(csv, "{},{},{},{}", fmt_float(x.t), fmt_float(x.min_jacobian()), fmt_float(a), fmt_float(b));
    }
    out.write("kinematics.csv", &csv)?;
    Ok(vec![Check::at_most("flow_algebra", worst, sc.tolerances.flow_algebra)])
}

/// Plot-ready norms of a finished run: `time,field,besov,max` from the Lagrangian checkpoint.
pub fn report(run_dir: &Path) -> Result<String> {
    let sc = Scenario::load(&run_dir.join("scenario.cfg"))?;
    let chk = run_dir.join("lagrangian.chk");
    if !chk.exists() {
        return Err(CnsError::Config(format!("{} has no lagrangian.chk to report on", run_dir.display())));
    }
    let fields = snapshot::read_checkpoint(&chk)?;
    let p = sc.solver.p;
    let mut s = String::from("time,field,besov,max\n");
    for (label, f) in fields {
        let (name, t) = label
            .split_once(' ')
            .ok_or_else(|| CnsError::Format(format!("bad checkpoint label `{label}`")))?;
        let bank = DyadicFilterBank::for_grid(f.grid())?;
        let n = f.grid().dim() as f64;
        let shift = match name {
            "rho" => 0.0,
            "u" => -1.0,
            _ => -2.0,
        };
        let t: f64 = t.parse().map_err(|_| CnsError::Format(format!("bad time in label `{label}`")))?;
        let besov = bank.besov_value(&f, n / p + shift, p)?;
        let _ = writeln!(s, "{},{},{},{}", fmt_float(t), name, fmt_float(besov), fmt_float(f.max_abs()));
    }
    Ok(s)
}

/// One verification check at one resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteCheck {
    pub name: String,
    pub resolution: usize,
    pub value: f64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub checks: Vec<SuiteCheck>,
    pub estimates_csv: String,
}

impl SuiteReport {
    pub fn success(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("check,resolution,value,passed,detail\n");
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                c.name,
                c.resolution,
                fmt_float(c.value),
                if c.passed { "pass" } else { "fail" },
                c.detail
            );
        }
        s
    }
}

/// Largest `|sum_j phi_j(xi) - 1|` over lattice frequencies in the resolved band.
pub fn partition_defect(bank: &DyadicFilterBank) -> f64 {
    let (lo, hi) = bank.resolved_band();
    bank.weight_sum()
        .iter()
        .zip(bank.radius())
        .filter(|(_, &r)| r >= lo && r <= hi)
        .map(|(w, _)| (w - 1.0).abs())
        .fold(0.0, f64::max)
}

/// `max |f - low(f) - sum_j Delta_j f - high(f)|`.
pub fn reconstruction_defect(bank: &DyadicFilterBank, f: &GridField) -> Result<f64> {
    let mut acc = bank.low_remainder(f)?.add(&bank.high_remainder(f)?)?;
    for j in bank.blocks() {
        acc = acc.add(&bank.dyadic_block(f, j)?)?;
    }
    f.to_physical().max_diff(&acc.to_physical())
}

/// Analytic flow with `min J >= 0.5` used by the kinematics checks.
pub fn analytic_flow(grid: &TorusGrid) -> Result<FlowMap> {
    let disp = GridField::from_fn_vector(grid, |c, y| match c {
        0 => 0.2 * (y[1] + 0.3).sin(),
        1 => 0.15 * y[0].cos() + 0.1 * (y[0] + y[1]).sin(),
        _ => 0.1 * y[1].sin(),
    });
    let x = FlowMap::from_displacement(disp, 1.0)?;
    if x.min_jacobian() < 0.5 {
        return Err(CnsError::InvalidParameter(format!("test flow has min J = {}", x.min_jacobian())));
    }
    Ok(x)
}

/// Analytic but not band-limited Eulerian field (Fourier coefficients decay like `0.35^|k|`)
/// for the change-of-variables identities.
pub fn analytic_vector_field(grid: &TorusGrid) -> GridField {
    GridField::from_fn_vector(grid, |c, x| match c {
        0 => 1.0 / (1.6 - (x[0] + x[1]).cos()),
        1 => 1.0 / (1.6 - (x[0] - 2.0 * x[1]).sin()),
        _ => 1.0 / (1.6 - x[0].sin()),
    })
}

/// Manufactured Jacobi-formula residual at step `dt` on `[0, 0.2]`.
pub fn jacobi_residual(grid: &TorusGrid, dt: f64) -> Result<f64> {
    let steps = (0.2 / dt).round() as usize;
    let vel: Vec<GridField> = (0..=steps)
        .map(|n| {
            let t = n as f64 * dt;
            GridField::from_fn_vector(grid, |c, y| match c {
                0 => 0.3 * (1.0 + t) * y[1].sin(),
                1 => 0.2 * (y[0] + t).cos(),
                _ => 0.1 * y[0].sin(),
            })
        })
        .collect();
    let z: Vec<GridField> = (0..=steps)
        .map(|n| {
            let t = n as f64 * dt;
            GridField::from_fn_scalar(grid, |x| 1.0 + 0.5 * (x[0] + 2.0 * t).cos() * x[1].sin())
        })
        .collect();
    let tl = VelocityTimeline::uniform(dt, vel)?;
    Ok(check_jacobi(&z, &tl)?.residual)
}

/// Verification suite over several resolutions (`dim = 2`).
pub fn verify_all(resolutions: &[usize], trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut checks = Vec::new();
    let mut estimates_csv = RatioReport::csv_header().to_string();
    let push = |checks: &mut Vec<SuiteCheck>, name: &str, res: usize, value: f64, passed: bool, detail: String| {
        checks.push(SuiteCheck { name: name.into(), resolution: res, value, passed, detail });
    };
    let mut div_residuals = Vec::new();
    let mut constants: BTreeMap<&'static str, Vec<f64>> = BTreeMap::new();
    for &n in resolutions {
        let grid = TorusGrid::new(2, n)?;
        let bank = DyadicFilterBank::for_grid(&grid)?;
        let pu = partition_defect(&bank);
        push(&mut checks, "partition_of_unity", n, pu, pu <= 1e-12, "<= 1e-12".into());

        let mut rng_field = {
            use rand::SeedableRng;
            rand_chacha::ChaCha8Rng::seed_from_u64(seed)
        };
        let f = RandomModes::draw(&mut rng_field, 2, 6, 1.0).sample(&grid);
        let rec = reconstruction_defect(&bank, &f)?;
        push(&mut checks, "reconstruction", n, rec, rec <= 1e-12, "<= 1e-12".into());

        let bern = verify_estimates(
            EstimateKind::Bernstein,
            &grid,
            trials,
            seed,
            &EstimateParams::default_for(EstimateKind::Bernstein, 2),
        )?;
        estimates_csv.push_str(&bern.csv_rows());
        let (lo, hi) = (0.5 * (1.0 - 1e-9), 2.0 * (1.0 + 1e-9));
        let ok = bern.min_ratio() >= lo && bern.max_ratio() <= hi && bern.degenerate() == 0;
        push(
            &mut checks,
            "bernstein",
            n,
            bern.max_ratio(),
            ok,
            format!("ratios in [{}, {}]", fmt_float(bern.min_ratio()), fmt_float(bern.max_ratio())),
        );

        let x = analytic_flow(&grid)?;
        let (a, b) = x.algebra_residuals();
        push(&mut checks, "flow_algebra", n, a.max(b), a.max(b) <= 1e-10, "<= 1e-10".into());

        let div = check_div_identity(&analytic_vector_field(&grid), &x)?.max();
        div_residuals.push((n, div));
        push(&mut checks, "div_identity_residual", n, div, div.is_finite(), "recorded".into());

        for kind in [EstimateKind::Product, EstimateKind::Composition, EstimateKind::Comm1, EstimateKind::Comm2] {
            let rep = verify_estimates(kind, &grid, trials, seed, &EstimateParams::default_for(kind, 2))?;
            estimates_csv.push_str(&rep.csv_rows());
            let c = rep.max_ratio();
            constants.entry(kind.name()).or_default().push(c);
            push(&mut checks, &format!("estimate_{}", kind.name()), n, c, c.is_finite() && c > 0.0, "finite".into());
        }

        let init = {
            let (rho, u, theta) = InitialData::SmallWave { amplitude: 0.05, density_amplitude: 0.05 }.sample(&grid)?;
            EulerianState::from_temperature(&rho, &u, &theta)?
        };
        let law = builtin_law(&LawParams::default())?;
        let traj = integrate_eulerian(&init, &law, 0.05, 0.005)?;
        let totals = traj.totals()?;
        let m0 = totals[0].0;
        let mass = totals.iter().map(|t| (t.0 - m0).abs() / m0).fold(0.0, f64::max);
        push(&mut checks, "eulerian_mass_drift", n, mass, mass <= 1e-10, "<= 1e-10".into());
    }
    for w in div_residuals.windows(2) {
        let ((_, a), (n1, b)) = (w[0], w[1]);
        let dec = a / b;
        push(&mut checks, "div_identity_refinement", n1, dec, dec >= 10.0, ">= 10x decrease".into());
    }
    for (name, cs) in constants {
        if cs.len() > 1 {
            let hi = cs.iter().copied().fold(0.0, f64::max);
            let lo = cs.iter().copied().fold(f64::INFINITY, f64::min);
            let spread = hi / lo;
            let res = *resolutions.last().expect("nonempty");
            push(&mut checks, &format!("stability_{name}"), res, spread, spread <= 2.0, "max/min <= 2".into());
        }
    }
    if let Some(&n) = resolutions.first() {
        let grid = TorusGrid::new(2, n)?;
        let (r1, r2) = (jacobi_residual(&grid, 0.02)?, jacobi_residual(&grid, 0.01)?);
        let order = (r1 / r2).log2();
        push(&mut checks, "jacobi_order", n, order, order >= 1.9, ">= 1.9".into());
    }
    Ok(SuiteReport { checks, estimates_csv })
}

/// Write a verification report into `dir` with its own manifest.
pub fn write_suite(report: &SuiteReport, dir: &Path, seed: u64) -> Result<RunManifest> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("checks.csv"), report.to_csv())?;
    fs::write(dir.join("estimates.csv"), &report.estimates_csv)?;
    let manifest = RunManifest {
        scenario: "verify".into(),
        seed,
        output_dir: dir.to_path_buf(),
        files: vec!["checks.csv".into(), "estimates.csv".into(), "manifest.txt".into()],
        checks: report
            .checks
            .iter()
            .map(|c| Check {
                name: format!("{}.{}", c.name, c.resolution),
                passed: c.passed,
                value: c.value,
                detail: c.detail.clone(),
            })
            .collect(),
        errors: Vec::new(),
    };
    fs::write(dir.join("manifest.txt"), manifest.to_text())?;
    Ok(manifest)
}
