//! Flow maps `X(t, y) = y + int_0^t v(s, y) ds` of Lagrangian velocity fields, their
//! Jacobian algebra, twisted operators, composition with Eulerian fields, and checks of
//! the change-of-variables identities.

use crate::error::{CnsError, Result};
use crate::littlewood_paley::{trapezoid, DyadicFilterBank};
use crate::spectral::{GridField, Rank, TorusGrid, TrigPolynomial};

/// Smallest Jacobian tolerated before a flow is declared degenerate.
pub const MIN_JACOBIAN: f64 = 0.1;

/// Pointwise dense algebra on `dim x dim` matrices stored row-major in `[f64; 9]`.
pub mod mat {
    pub fn identity(d: usize) -> [f64; 9] {
        let mut m = [0.0; 9];
        for i in 0..d {
            m[i * d + i] = 1.0;
        }
        m
    }

    pub fn det(m: &[f64; 9], d: usize) -> f64 {
        match d {
            2 => m[0] * m[3] - m[1] * m[2],
            _ => {
                m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
                    + m[2] * (m[3] * m[7] - m[4] * m[6])
            }
        }
    }

    /// Transposed cofactor matrix, `adj(M) M = det(M) Id`.
    pub fn adjugate(m: &[f64; 9], d: usize) -> [f64; 9] {
        let mut a = [0.0; 9];
        match d {
            2 => {
                a[0] = m[3];
                a[1] = -m[1];
                a[2] = -m[2];
                a[3] = m[0];
            }
            _ => {
                a[0] = m[4] * m[8] - m[5] * m[7];
                a[1] = m[2] * m[7] - m[1] * m[8];
                a[2] = m[1] * m[5] - m[2] * m[4];
                a[3] = m[5] * m[6] - m[3] * m[8];
                a[4] = m[0] * m[8] - m[2] * m[6];
                a[5] = m[2] * m[3] - m[0] * m[5];
                a[6] = m[3] * m[7] - m[4] * m[6];
                a[7] = m[1] * m[6] - m[0] * m[7];
                a[8] = m[0] * m[4] - m[1] * m[3];
            }
        }
        a
    }

    pub fn mul(a: &[f64; 9], b: &[f64; 9], d: usize) -> [f64; 9] {
        let mut c = [0.0; 9];
        for i in 0..d {
            for j in 0..d {
                c[i * d + j] = (0..d).map(|k| a[i * d + k] * b[k * d + j]).sum();
            }
        }
        c
    }

    pub fn transpose(a: &[f64; 9], d: usize) -> [f64; 9] {
        let mut t = [0.0; 9];
        for i in 0..d {
            for j in 0..d {
                t[j * d + i] = a[i * d + j];
            }
        }
        t
    }

    pub fn mul_vec(a: &[f64; 9], v: &[f64], d: usize) -> [f64; 3] {
        let mut out = [0.0; 3];
        for i in 0..d {
            out[i] = (0..d).map(|k| a[i * d + k] * v[k]).sum();
        }
        out
    }

    pub fn max_abs_diff(a: &[f64; 9], b: &[f64; 9], d: usize) -> f64 {
        (0..d * d).map(|k| (a[k] - b[k]).abs()).fold(0.0, f64::max)
    }
}

/// Read the `dim x dim` matrix stored at node `idx` of matrix components.
pub(crate) fn matrix_at(comps: &[Vec<f64>], idx: usize, d: usize) -> [f64; 9] {
    let mut m = [0.0; 9];
    for (c, v) in comps.iter().enumerate().take(d * d) {
        m[c] = v[idx];
    }
    m
}

/// Build a physical matrix field from a per-node closure.
pub(crate) fn matrix_field(grid: &TorusGrid, f: impl Fn(usize) -> [f64; 9]) -> GridField {
    let d = grid.dim();
    let mut comps = vec![vec![0.0; grid.len()]; d * d];
    for idx in 0..grid.len() {
        let m = f(idx);
        for (c, v) in comps.iter_mut().enumerate() {
            v[idx] = m[c];
        }
    }
    GridField::matrix(grid, comps).expect("matrix shape")
}

/// Matrix-matrix product of two physical matrix fields, pointwise.
pub fn matmul(a: &GridField, b: &GridField) -> Result<GridField> {
    let grid = a.grid();
    let d = grid.dim();
    let (pa, pb) = (a.to_physical(), b.to_physical());
    let (ca, cb) = (pa.physical()?, pb.physical()?);
    Ok(matrix_field(grid, |i| mat::mul(&matrix_at(ca, i, d), &matrix_at(cb, i, d), d)))
}

/// Matrix field applied to a vector field, pointwise.
pub fn matvec(a: &GridField, v: &GridField) -> Result<GridField> {
    if a.rank() != Rank::Matrix || v.rank() != Rank::Vector {
        return Err(CnsError::ShapeMismatch("matvec needs a matrix and a vector field".into()));
    }
    let grid = a.grid();
    let d = grid.dim();
    let (pa, pv) = (a.to_physical(), v.to_physical());
    let (ca, cv) = (pa.physical()?, pv.physical()?);
    let mut out = vec![vec![0.0; grid.len()]; d];
    for i in 0..d {
        for k in 0..d {
            let m = &ca[i * d + k];
            let x = &cv[k];
            for (o, (p, q)) in out[i].iter_mut().zip(m.iter().zip(x)) {
                *o += p * q;
            }
        }
    }
    GridField::vector(grid, out)
}

/// Velocity samples `v(t_i)` on a uniform time grid.
#[derive(Clone, Debug)]
pub struct VelocityTimeline {
    times: Vec<f64>,
    fields: Vec<GridField>,
}

impl VelocityTimeline {
    pub fn new(times: Vec<f64>, fields: Vec<GridField>) -> Result<Self> {
        if times.is_empty() || times.len() != fields.len() {
            return Err(CnsError::TimeGrid(format!("{} times for {} fields", times.len(), fields.len())));
        }
        crate::littlewood_paley::uniform_step(&times)?;
        let grid = fields[0].grid().clone();
        if fields.iter().any(|f| f.rank() != Rank::Vector || *f.grid() != grid) {
            return Err(CnsError::ShapeMismatch("timeline needs vector fields on one grid".into()));
        }
        let fields = fields.into_iter().map(|f| f.to_physical()).collect();
        Ok(Self { times, fields })
    }

    /// Samples at `t_i = i * dt`.
    pub fn uniform(dt: f64, fields: Vec<GridField>) -> Result<Self> {
        let times = (0..fields.len()).map(|i| i as f64 * dt).collect();
        Self::new(times, fields)
    }

    pub fn grid(&self) -> &TorusGrid {
        self.fields[0].grid()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn fields(&self) -> &[GridField] {
        &self.fields
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

    /// Cumulative trapezoid displacements at every sample time.
    pub fn displacements(&self) -> Vec<GridField> {
        let grid = self.grid();
        let d = grid.dim();
        let mut acc = vec![vec![0.0; grid.len()]; d];
        let mut out = Vec::with_capacity(self.len());
        out.push(GridField::vector(grid, acc.clone()).expect("shape"));
        for i in 1..self.len() {
            let h = self.times[i] - self.times[i - 1];
            let (a, b) = (self.fields[i - 1].values_all(), self.fields[i].values_all());
            for c in 0..d {
                for k in 0..grid.len() {
                    acc[c][k] += 0.5 * h * (a[c][k] + b[c][k]);
                }
            }
            out.push(GridField::vector(grid, acc.clone()).expect("shape"));
        }
        out
    }

    /// `int_0^t v` by the trapezoid rule, linear in time inside the last interval.
    pub fn displacement_at(&self, t: f64) -> Result<GridField> {
        let t0 = self.times[0];
        let t1 = *self.times.last().expect("nonempty");
        if t < t0 - 1e-12 || t > t1 + 1e-12 {
            return Err(CnsError::TimeGrid(format!("t={t} outside [{t0}, {t1}]")));
        }
        let grid = self.grid();
        let d = grid.dim();
        let mut acc = vec![vec![0.0; grid.len()]; d];
        for i in 1..self.len() {
            let (ta, tb) = (self.times[i - 1], self.times[i]);
            if ta >= t {
                break;
            }
            let end = tb.min(t);
            let h = end - ta;
            let frac = (end - ta) / (tb - ta);
            let (a, b) = (self.fields[i - 1].values_all(), self.fields[i].values_all());
            for c in 0..d {
                for k in 0..grid.len() {
                    let vb = a[c][k] + frac * (b[c][k] - a[c][k]);
                    acc[c][k] += 0.5 * h * (a[c][k] + vb);
                }
            }
        }
        GridField::vector(grid, acc)
    }

    /// `int_0^T ||Dv||_{B^{n/p}_{p,1}} dt`, the smallness monitor of the flow estimates.
    pub fn smallness(&self, bank: &DyadicFilterBank, p: f64) -> Result<f64> {
        let s = self.grid().dim() as f64 / p;
        let vals = self
            .fields
            .iter()
            .map(|v| bank.besov_value(&v.gradient()?, s, p))
            .collect::<Result<Vec<f64>>>()?;
        Ok(trapezoid(&vals, self.dt()))
    }
}

trait ValuesAll {
    fn values_all(&self) -> &[Vec<f64>];
}

impl ValuesAll for GridField {
    fn values_all(&self) -> &[Vec<f64>] {
        self.physical().expect("physical field")
    }
}

/// Flow map and its first-order algebra at one time.
#[derive(Clone, Debug)]
pub struct FlowMap {
    pub t: f64,
    pub displacement: GridField,
    pub dx: GridField,
    pub jacobian: GridField,
    pub inverse_gradient: GridField,
    pub adjugate: GridField,
}

impl FlowMap {
    pub fn identity(grid: &TorusGrid) -> Self {
        FlowMap {
            t: 0.0,
            displacement: GridField::zeros(grid, Rank::Vector),
            dx: GridField::identity(grid),
            jacobian: GridField::constant_scalar(grid, 1.0),
            inverse_gradient: GridField::identity(grid),
            adjugate: GridField::identity(grid),
        }
    }

    /// Algebra of `X = y + displacement`; fails when `min J < MIN_JACOBIAN`.
    pub fn from_displacement(displacement: GridField, t: f64) -> Result<Self> {
        let fm = Self::from_displacement_unguarded(displacement, t)?;
        let min_j = fm.min_jacobian();
        if !(min_j >= MIN_JACOBIAN) {
            return Err(CnsError::DiffeomorphismLoss { time: t, min_jacobian: min_j });
        }
        Ok(fm)
    }

    /// Same algebra without the Jacobian guard (used to inspect degenerate flows).
    pub fn from_displacement_unguarded(displacement: GridField, t: f64) -> Result<Self> {
        if displacement.rank() != Rank::Vector {
            return Err(CnsError::ShapeMismatch("displacement must be a vector field".into()));
        }
        let displacement = displacement.to_physical();
        let grid = displacement.grid().clone();
        let d = grid.dim();
        let grad = displacement.gradient()?;
        let gc = grad.physical()?;
        let id = mat::identity(d);
        let mut dx = vec![vec![0.0; grid.len()]; d * d];
        let mut adj = vec![vec![0.0; grid.len()]; d * d];
        let mut inv = vec![vec![0.0; grid.len()]; d * d];
        let mut jac = vec![0.0; grid.len()];
        for idx in 0..grid.len() {
            let mut m = matrix_at(gc, idx, d);
            for c in 0..d * d {
                m[c] += id[c];
            }
            let a = mat::adjugate(&m, d);
            let j = mat::det(&m, d);
            jac[idx] = j;
            for c in 0..d * d {
                dx[c][idx] = m[c];
                adj[c][idx] = a[c];
                inv[c][idx] = a[c] / j;
            }
        }
        Ok(FlowMap {
            t,
            displacement,
            dx: GridField::matrix(&grid, dx)?,
            jacobian: GridField::scalar(&grid, jac)?,
            inverse_gradient: GridField::matrix(&grid, inv)?,
            adjugate: GridField::matrix(&grid, adj)?,
        })
    }

    pub fn grid(&self) -> &TorusGrid {
        self.displacement.grid()
    }

    pub fn min_jacobian(&self) -> f64 {
        self.jacobian.values(0).iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `(max |A DX - Id|, max |adj - J A|)` over the grid.
    pub fn algebra_residuals(&self) -> (f64, f64) {
        let d = self.grid().dim();
        let id = mat::identity(d);
        let (dx, a, adj) = (
            self.dx.physical().expect("physical"),
            self.inverse_gradient.physical().expect("physical"),
            self.adjugate.physical().expect("physical"),
        );
        let jac = self.jacobian.values(0);
        let mut r1 = 0.0f64;
        let mut r2 = 0.0f64;
        for idx in 0..self.grid().len() {
            let am = matrix_at(a, idx, d);
            let prod = mat::mul(&am, &matrix_at(dx, idx, d), d);
            r1 = r1.max(mat::max_abs_diff(&prod, &id, d));
            let mut ja = am;
            ja.iter_mut().for_each(|x| *x *= jac[idx]);
            r2 = r2.max(mat::max_abs_diff(&matrix_at(adj, idx, d), &ja, d));
        }
        (r1, r2)
    }

    /// Images `X(y)` of every grid node (not wrapped).
    pub fn image_points(&self) -> Vec<[f64; 3]> {
        let grid = self.grid();
        let d = grid.dim();
        let disp = self.displacement.physical().expect("physical");
        (0..grid.len())
            .map(|idx| {
                let mut x = grid.point(idx);
                for a in 0..d {
                    x[a] += disp[a][idx];
                }
                x
            })
            .collect()
    }
}

/// Flow map of a timeline at time `t`.
pub fn integrate_flow(v: &VelocityTimeline, t: f64) -> Result<FlowMap> {
    FlowMap::from_displacement(v.displacement_at(t)?, t)
}

/// Flow maps at every sample time, stopping at the first degenerate one.
pub fn integrate_flow_all(v: &VelocityTimeline) -> Result<Vec<FlowMap>> {
    v.displacements()
        .into_iter()
        .zip(v.times())
        .map(|(disp, &t)| FlowMap::from_displacement(disp, t))
        .collect()
}

/// `D_A(w) = (Dw A + tA grad w) / 2`, dealiased.
pub fn twisted_deformation(w: &GridField, a: &GridField) -> Result<GridField> {
    let dw = w.gradient()?;
    let dwa = matmul(&dw, a)?;
    Ok(dwa.add(&dwa.transpose()?)?.scale(0.5).filtered())
}

/// `div_A w = tr(Dw A)`, dealiased.
pub fn twisted_divergence(w: &GridField, a: &GridField) -> Result<GridField> {
    let d = w.grid().dim();
    let dwa = matmul(&w.gradient()?, a)?;
    let comps = dwa.physical()?;
    let tr = (0..w.grid().len()).map(|k| (0..d).map(|i| comps[i * d + i][k]).sum()).collect();
    Ok(GridField::scalar(w.grid(), tr)?.filtered())
}

/// Inverse of a flow map on the grid: `X^{-1}(x) = x + displacement(x)`.
#[derive(Clone, Debug)]
pub struct InverseFlow {
    pub displacement: GridField,
    pub max_residual: f64,
    pub max_iterations: usize,
    pub newton_nodes: usize,
}

impl InverseFlow {
    pub fn points(&self) -> Vec<[f64; 3]> {
        let grid = self.displacement.grid();
        let d = grid.dim();
        let disp = self.displacement.values_all();
        (0..grid.len())
            .map(|idx| {
                let mut x = grid.point(idx);
                for a in 0..d {
                    x[a] += disp[a][idx];
                }
                x
            })
            .collect()
    }
}

const INVERSE_TOL: f64 = 1e-10;
const INVERSE_MAX_ITER: usize = 100;

/// Solve `y + d(y) = x` for every grid node `x` by fixed-point iteration, switching to
/// Newton steps when the observed contraction factor reaches 0.9.
pub fn invert_flow(x: &FlowMap) -> Result<InverseFlow> {
    let grid = x.grid().clone();
    let d = grid.dim();
    let period = grid.period();
    if x.displacement.max_abs() >= 0.25 * period {
        return Err(CnsError::InverseMap { residual: f64::NAN, iterations: 0 });
    }
    let disp_poly = TrigPolynomial::new(&x.displacement);
    let grad = x.displacement.gradient()?;
    let grad_poly = TrigPolynomial::new(&grad);
    let wrap = |r: f64| r - period * (r / period).round();
    let mut out = vec![vec![0.0; grid.len()]; d];
    let mut worst = 0.0f64;
    let mut worst_iter = 0usize;
    let mut newton_nodes = 0usize;
    let mut dv = vec![0.0; d];
    let mut gv = vec![0.0; d * d];
    for idx in 0..grid.len() {
        let target = grid.point(idx);
        let mut y = target;
        let residual = |y: &[f64; 3], dv: &mut [f64]| -> ([f64; 3], f64) {
            disp_poly.evaluate_point(y, dv);
            let mut r = [0.0; 3];
            let mut m = 0.0f64;
            for a in 0..d {
                r[a] = wrap(y[a] + dv[a] - target[a]);
                m = m.max(r[a].abs());
            }
            (r, m)
        };
        let (mut r, mut rn) = residual(&y, &mut dv);
        let mut iters = 0;
        let mut newton = false;
        while rn > INVERSE_TOL && iters < INVERSE_MAX_ITER {
            iters += 1;
            if newton {
                grad_poly.evaluate_point(&y, &mut gv);
                let mut jm = mat::identity(d);
                for c in 0..d * d {
                    jm[c] += gv[c];
                }
                let det = mat::det(&jm, d);
                let adj = mat::adjugate(&jm, d);
                let step = mat::mul_vec(&adj, &r[..d], d);
                for a in 0..d {
                    y[a] -= step[a] / det;
                }
            } else {
                for a in 0..d {
                    y[a] -= r[a];
                }
            }
            let (nr, nrn) = residual(&y, &mut dv);
            if !newton && nrn >= 0.9 * rn {
                newton = true;
                newton_nodes += 1;
            }
            r = nr;
            rn = nrn;
        }
        if !(rn <= INVERSE_TOL) {
            return Err(CnsError::InverseMap { residual: rn, iterations: iters });
        }
        worst = worst.max(rn);
        worst_iter = worst_iter.max(iters);
        for a in 0..d {
            out[a][idx] = y[a] - target[a];
        }
    }
    Ok(InverseFlow {
        displacement: GridField::vector(&grid, out)?,
        max_residual: worst,
        max_iterations: worst_iter,
        newton_nodes,
    })
}

/// `f o X` sampled on the grid.
pub fn pullback(f: &GridField, x: &FlowMap) -> Result<GridField> {
    compose(f, &x.image_points())
}

/// `f o X^{-1}` sampled on the grid.
pub fn pushforward(f: &GridField, x: &FlowMap) -> Result<GridField> {
    let inv = invert_flow(x)?;
    pushforward_with(f, &inv)
}

pub fn pushforward_with(f: &GridField, inv: &InverseFlow) -> Result<GridField> {
    compose(f, &inv.points())
}

fn compose(f: &GridField, points: &[[f64; 3]]) -> Result<GridField> {
    let vals = f.evaluate_offgrid(points);
    GridField::from_components(f.grid(), f.rank(), vals)
}

/// Max-norm residuals of the change-of-variables identities for one Eulerian field.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DivIdentityReport {
    /// vector H: `(div_x H) o X` vs `J^{-1} div_y(adj H o X)`;
    /// scalar H: `(grad_x H) o X` vs `J^{-1} div_y(adj (H o X))`
    pub divergence: f64,
    /// scalar H: `(grad_x H) o X` vs `tA grad_y (H o X)`; vector H: same per component
    pub gradient: f64,
    /// `(Lap_x H) o X` vs `J^{-1} div_y(adj tA grad_y (H o X))`, componentwise
    pub laplacian: f64,
    /// vector H only: `(grad div_x H) o X` vs `J^{-1} div_y(adj div_A(H o X))`
    pub grad_div: f64,
}

impl DivIdentityReport {
    pub fn max(&self) -> f64 {
        self.divergence.max(self.gradient).max(self.laplacian).max(self.grad_div)
    }
}

fn scalar_component(f: &GridField, c: usize) -> GridField {
    GridField::scalar(f.grid(), f.to_physical().values(c).to_vec()).expect("shape")
}

/// `adj * s` for a scalar field `s`, as a matrix field.
fn scaled_matrix(m: &GridField, s: &GridField) -> Result<GridField> {
    m.mul_scalar_field(s)
}

/// `J^{-1} div_y(M)` for a matrix or vector field `M`.
fn piola_div(m: &GridField, jac: &GridField) -> Result<GridField> {
    let inv_j = jac.map(|j| 1.0 / j);
    m.divergence()?.to_physical().mul_scalar_field(&inv_j)
}

/// Evaluate both sides of the divergence/gradient change-of-variables identities.
/// The composed fields are differentiated without dealiasing.
pub fn check_div_identity(h: &GridField, x: &FlowMap) -> Result<DivIdentityReport> {
    let mut rep = DivIdentityReport::default();
    let a = &x.inverse_gradient;
    let at = a.transpose()?;
    match h.rank() {
        Rank::Scalar => {
            let grad_x = pullback(&h.gradient()?, x)?;
            let hbar = pullback(h, x)?;
            let rhs_div = piola_div(&scaled_matrix(&x.adjugate, &hbar)?, &x.jacobian)?;
            rep.divergence = grad_x.max_diff(&rhs_div)?;
            let rhs_grad = matvec(&at, &hbar.gradient()?)?;
            rep.gradient = grad_x.max_diff(&rhs_grad)?;
            rep.laplacian = laplacian_residual(h, x)?;
        }
        Rank::Vector => {
            let div_x = pullback(&h.divergence()?, x)?;
            let hbar = pullback(h, x)?;
            let rhs = piola_div(&matvec(&x.adjugate, &hbar)?, &x.jacobian)?;
            rep.divergence = div_x.max_diff(&rhs)?;
            let mut g = 0.0f64;
            let mut l = 0.0f64;
            for c in 0..h.grid().dim() {
                let hc = scalar_component(h, c);
                let lhs = pullback(&hc.gradient()?, x)?;
                let rhs = matvec(&at, &pullback(&hc, x)?.gradient()?)?;
                g = g.max(lhs.max_diff(&rhs)?);
                l = l.max(laplacian_residual(&hc, x)?);
            }
            rep.gradient = g;
            rep.laplacian = l;
            let gd_lhs = pullback(&h.divergence()?.gradient()?, x)?;
            let div_a = {
                let dwa = matmul(&hbar.gradient()?, a)?;
                let d = h.grid().dim();
                let comps = dwa.physical()?;
                let tr = (0..h.grid().len()).map(|k| (0..d).map(|i| comps[i * d + i][k]).sum()).collect();
                GridField::scalar(h.grid(), tr)?
            };
            let gd_rhs = piola_div(&scaled_matrix(&x.adjugate, &div_a)?, &x.jacobian)?;
            rep.grad_div = gd_lhs.max_diff(&gd_rhs)?;
        }
        Rank::Matrix => {
            return Err(CnsError::ShapeMismatch("identity check needs a scalar or vector field".into()));
        }
    }
    Ok(rep)
}

fn laplacian_residual(f: &GridField, x: &FlowMap) -> Result<f64> {
    let lap = f.gradient()?.divergence()?;
    let lhs = pullback(&lap, x)?;
    let fbar = pullback(f, x)?;
    let at = x.inverse_gradient.transpose()?;
    let flux = matvec(&x.adjugate, &matvec(&at, &fbar.gradient()?)?)?;
    let rhs = piola_div(&flux, &x.jacobian)?;
    lhs.max_diff(&rhs)
}

/// Residual of the Jacobi transport formula on a sampled trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobiReport {
    pub dt: f64,
    /// max over interior sample times and nodes of `|lhs - rhs|`
    pub residual: f64,
    /// max of `|lhs|`, for scale
    pub scale: f64,
}

/// Compare a centered difference of `J (z o X)` against `J (d_t z) o X + div_y(adj (z o X) v)`.
///
/// `z` is an Eulerian scalar trajectory sampled at the timeline's times, `v` the Lagrangian
/// velocity generating `X`. `d_t z` is taken by centered differences of the samples.
pub fn check_jacobi(z: &[GridField], v: &VelocityTimeline) -> Result<JacobiReport> {
    if z.len() != v.len() || z.len() < 3 {
        return Err(CnsError::TimeGrid(format!("{} z samples for {} velocity samples", z.len(), v.len())));
    }
    let dt = v.dt();
    let flows = integrate_flow_all(v)?;
    let weighted: Vec<GridField> = flows
        .iter()
        .zip(z)
        .map(|(x, zi)| pullback(zi, x)?.mul_scalar_field(&x.jacobian))
        .collect::<Result<_>>()?;
    let mut residual = 0.0f64;
    let mut scale = 0.0f64;
    for i in 1..z.len() - 1 {
        let lhs = weighted[i + 1].sub(&weighted[i - 1])?.scale(0.5 / dt);
        let dz = z[i + 1].sub(&z[i - 1])?.scale(0.5 / dt);
        let x = &flows[i];
        let zbar = pullback(&z[i], x)?;
        let flux = matvec(&x.adjugate, &v.fields()[i].mul_scalar_field(&zbar)?)?;
        let rhs = pullback(&dz, x)?.mul_scalar_field(&x.jacobian)?.add(&flux.divergence()?)?;
        residual = residual.max(lhs.max_diff(&rhs)?);
        scale = scale.max(lhs.max_abs());
    }
    Ok(JacobiReport { dt, residual, scale })
}

/// Flow-estimate ratios at the final time and the smallness monitor.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowEstimateReport {
    /// `int_0^T ||D v||_{B^{n/p}} dt`
    pub smallness: f64,
    pub smallness_threshold: f64,
    pub smallness_violated: bool,
    /// `true` when `D v` vanishes identically so every ratio is 0/0
    pub exact_zero: bool,
    /// `sup_t` numerators over the timeline
    pub id_minus_a: f64,
    pub adj_minus_id: f64,
    pub j_minus_one: f64,
    pub j_inv_minus_one: f64,
}

impl FlowEstimateReport {
    /// Numerators divided by the smallness monitor (0 in the exact-zero case).
    pub fn ratios(&self) -> [(&'static str, f64); 4] {
        let r = |x: f64| if self.exact_zero { 0.0 } else { x / self.smallness };
        [
            ("id_minus_a", r(self.id_minus_a)),
            ("adj_minus_id", r(self.adj_minus_id)),
            ("j_minus_one", r(self.j_minus_one)),
            ("j_inv_minus_one", r(self.j_inv_minus_one)),
        ]
    }
}

fn identity_gap(m: &GridField, sign: f64) -> Result<GridField> {
    GridField::identity(m.grid()).sub(&m.scale(sign))
}

/// Besov sizes `||Id - A||, ||adj - Id||, ||J^{+-1} - 1||` in `B^{n/p}` against
/// `int ||Dv||_{B^{n/p}}`.
pub fn flow_estimate_report(
    v: &VelocityTimeline,
    bank: &DyadicFilterBank,
    p: f64,
    c_tilde: f64,
) -> Result<FlowEstimateReport> {
    let s = v.grid().dim() as f64 / p;
    let smallness = v.smallness(bank, p)?;
    let mut rep = FlowEstimateReport {
        smallness,
        smallness_threshold: c_tilde,
        smallness_violated: smallness > c_tilde,
        exact_zero: smallness == 0.0,
        id_minus_a: 0.0,
        adj_minus_id: 0.0,
        j_minus_one: 0.0,
        j_inv_minus_one: 0.0,
    };
    for x in integrate_flow_all(v)? {
        rep.id_minus_a = rep.id_minus_a.max(bank.besov_value(&identity_gap(&x.inverse_gradient, 1.0)?, s, p)?);
        rep.adj_minus_id = rep.adj_minus_id.max(bank.besov_value(&identity_gap(&x.adjugate, 1.0)?, s, p)?);
        rep.j_minus_one = rep.j_minus_one.max(bank.besov_value(&x.jacobian.map(|j| j - 1.0), s, p)?);
        rep.j_inv_minus_one = rep.j_inv_minus_one.max(bank.besov_value(&x.jacobian.map(|j| 1.0 / j - 1.0), s, p)?);
    }
    Ok(rep)
}

/// Differences of flow quantities for two velocities against `int ||D(v2 - v1)||`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowDifferenceReport {
    pub delta: f64,
    pub a_diff: f64,
    pub adj_diff: f64,
    pub j_diff: f64,
}

impl FlowDifferenceReport {
    pub fn ratios(&self) -> [(&'static str, f64); 3] {
        let r = |x: f64| if self.delta == 0.0 { 0.0 } else { x / self.delta };
        [("a_diff", r(self.a_diff)), ("adj_diff", r(self.adj_diff)), ("j_diff", r(self.j_diff))]
    }
}

pub fn flow_difference_report(
    v1: &VelocityTimeline,
    v2: &VelocityTimeline,
    bank: &DyadicFilterBank,
    p: f64,
) -> Result<FlowDifferenceReport> {
    if v1.len() != v2.len() {
        return Err(CnsError::TimeGrid("timelines differ in length".into()));
    }
    let s = v1.grid().dim() as f64 / p;
    let dv: Vec<GridField> =
        v1.fields().iter().zip(v2.fields()).map(|(a, b)| b.sub(a)).collect::<Result<_>>()?;
    let delta = VelocityTimeline::new(v1.times().to_vec(), dv)?.smallness(bank, p)?;
    let mut rep = FlowDifferenceReport { delta, a_diff: 0.0, adj_diff: 0.0, j_diff: 0.0 };
    for (x1, x2) in integrate_flow_all(v1)?.iter().zip(integrate_flow_all(v2)?.iter()) {
        rep.a_diff = rep.a_diff.max(bank.besov_value(&x2.inverse_gradient.sub(&x1.inverse_gradient)?, s, p)?);
        rep.adj_diff = rep.adj_diff.max(bank.besov_value(&x2.adjugate.sub(&x1.adjugate)?, s, p)?);
        rep.j_diff = rep.j_diff.max(bank.besov_value(&x2.jacobian.sub(&x1.jacobian)?, s, p)?);
    }
    Ok(rep)
}
