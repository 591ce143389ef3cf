//! Periodic collocation grid, tensor fields, and the Fourier machinery built on them.
//!
//! Coefficients are normalized so that the zero mode of a constant field `c` is `c`:
//! `f(x) = sum_k c_k exp(i xi_k . x)` with `xi_k = (2 pi / L) k`. Grid values are stored
//! row-major with axis 0 varying slowest. Matrix components `(i, j)` live at `i * dim + j`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{CnsError, Result};

struct GridInner {
    dim: usize,
    n: usize,
    period: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// physical wavenumber per 1D index (Nyquist index carries -N/2)
    xi: Vec<f64>,
    /// same, with the Nyquist entry zeroed (odd-derivative convention)
    xi_odd: Vec<f64>,
    /// 2/3-rule mask per 1D index
    keep: Vec<bool>,
}

/// Isotropic uniform grid on the torus `[0, L)^dim`.
#[derive(Clone)]
pub struct TorusGrid {
    inner: Arc<GridInner>,
}

impl fmt::Debug for TorusGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TorusGrid")
            .field("dim", &self.inner.dim)
            .field("n", &self.inner.n)
            .field("period", &self.inner.period)
            .finish()
    }
}

impl PartialEq for TorusGrid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.inner.dim == other.inner.dim
                && self.inner.n == other.inner.n
                && self.inner.period == other.inner.period)
    }
}

impl TorusGrid {
    /// Grid on the standard torus of period `2 pi`.
    pub fn new(dim: usize, points_per_axis: usize) -> Result<Self> {
        Self::with_period(dim, points_per_axis, 2.0 * PI)
    }

    pub fn with_period(dim: usize, points_per_axis: usize, period: f64) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return Err(CnsError::InvalidGrid(format!("dimension {dim} not in {{2, 3}}")));
        }
        if points_per_axis < 16 || !points_per_axis.is_power_of_two() {
            return Err(CnsError::InvalidGrid(format!(
                "points per axis {points_per_axis} must be a power of two >= 16"
            )));
        }
        if !(period.is_finite() && period > 0.0) {
            return Err(CnsError::InvalidGrid(format!("period {period} must be positive")));
        }
        let n = points_per_axis;
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let scale = 2.0 * PI / period;
        let cutoff = (n / 3) as i64;
        let ints: Vec<i64> = (0..n).map(|i| signed_index(i, n)).collect();
        let xi = ints.iter().map(|&k| scale * k as f64).collect();
        let xi_odd = ints
            .iter()
            .map(|&k| if k == -(n as i64) / 2 { 0.0 } else { scale * k as f64 })
            .collect();
        let keep = ints.iter().map(|&k| k.abs() <= cutoff).collect();
        Ok(Self {
            inner: Arc::new(GridInner { dim, n, period, forward, inverse, xi, xi_odd, keep }),
        })
    }

    pub fn dim(&self) -> usize {
        self.inner.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.inner.n
    }

    pub fn period(&self) -> f64 {
        self.inner.period
    }

    /// Total number of grid nodes.
    pub fn len(&self) -> usize {
        self.inner.n.pow(self.inner.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        self.inner.period / self.inner.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.inner.dim as i32)
    }

    pub fn volume(&self) -> f64 {
        self.inner.period.powi(self.inner.dim as i32)
    }

    /// `2 pi / L`, the lattice spacing in frequency space.
    pub fn frequency_unit(&self) -> f64 {
        2.0 * PI / self.inner.period
    }

    /// Largest radius fully inside the frequency box, `(2 pi / L) N / 2`.
    pub fn nyquist_radius(&self) -> f64 {
        self.frequency_unit() * (self.inner.n / 2) as f64
    }

    /// Largest integer frequency component kept by the 2/3 rule.
    pub fn dealias_cutoff(&self) -> usize {
        self.inner.n / 3
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 3] {
        let n = self.inner.n;
        let mut out = [0usize; 3];
        let mut rem = idx;
        for a in (0..self.inner.dim).rev() {
            out[a] = rem % n;
            rem /= n;
        }
        out
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi[..self.inner.dim].iter().fold(0, |acc, &i| acc * self.inner.n + i)
    }

    /// Physical coordinates of node `idx` (unused axes are zero).
    pub fn point(&self, idx: usize) -> [f64; 3] {
        let m = self.multi_index(idx);
        let h = self.spacing();
        let mut x = [0.0; 3];
        for a in 0..self.inner.dim {
            x[a] = m[a] as f64 * h;
        }
        x
    }

    /// Signed integer frequency of node `idx` along every axis.
    pub fn int_wavevector(&self, idx: usize) -> [i64; 3] {
        let m = self.multi_index(idx);
        let mut k = [0i64; 3];
        for a in 0..self.inner.dim {
            k[a] = signed_index(m[a], self.inner.n);
        }
        k
    }

    /// Physical frequency vector of spectral slot `idx`.
    pub fn wavevector(&self, idx: usize) -> [f64; 3] {
        let m = self.multi_index(idx);
        let mut xi = [0.0; 3];
        for a in 0..self.inner.dim {
            xi[a] = self.inner.xi[m[a]];
        }
        xi
    }

    pub fn wavenumber_norm(&self, idx: usize) -> f64 {
        let xi = self.wavevector(idx);
        (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt()
    }

    /// `|xi|` for every spectral slot.
    pub fn wavenumber_norms(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.wavenumber_norm(i)).collect()
    }

    /// Multiplier `i xi_axis` with the Nyquist entry removed.
    pub(crate) fn derivative_symbols(&self, axis: usize) -> Vec<Complex64> {
        (0..self.len())
            .map(|idx| {
                let m = self.multi_index(idx);
                Complex64::new(0.0, self.inner.xi_odd[m[axis]])
            })
            .collect()
    }

    /// `true` where the 2/3 rule keeps the mode.
    pub fn dealias_mask(&self) -> Vec<bool> {
        (0..self.len())
            .map(|idx| {
                let m = self.multi_index(idx);
                (0..self.inner.dim).all(|a| self.inner.keep[m[a]])
            })
            .collect()
    }

    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..self.len()).map(|i| f(&self.point(i)[..self.inner.dim])).collect()
    }

    pub fn wrap(&self, x: f64) -> f64 {
        x.rem_euclid(self.inner.period)
    }

    /// Normalized forward transform of real samples.
    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut data, false);
        let norm = 1.0 / self.len() as f64;
        data.iter_mut().for_each(|c| *c *= norm);
        data
    }

    /// Inverse transform, keeping the real part.
    pub fn inverse(&self, coeffs: &[Complex64]) -> Vec<f64> {
        let mut data = coeffs.to_vec();
        self.transform(&mut data, true);
        data.into_iter().map(|c| c.re).collect()
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let n = self.inner.n;
        let dim = self.inner.dim;
        let fft = if inverse { &self.inner.inverse } else { &self.inner.forward };
        let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        let mut lines = Vec::new();
        for axis in 0..dim {
            let stride = n.pow((dim - 1 - axis) as u32);
            if stride == 1 {
                fft.process_with_scratch(data, &mut scratch);
                continue;
            }
            let block = stride * n;
            lines.resize(block, Complex64::default());
            for chunk in data.chunks_exact_mut(block) {
                for inner in 0..stride {
                    for k in 0..n {
                        lines[inner * n + k] = chunk[inner + k * stride];
                    }
                }
                fft.process_with_scratch(&mut lines, &mut scratch);
                for inner in 0..stride {
                    for k in 0..n {
                        chunk[inner + k * stride] = lines[inner * n + k];
                    }
                }
            }
        }
    }
}

fn signed_index(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Tensor rank of a field.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rank {
    Scalar,
    Vector,
    Matrix,
}

impl Rank {
    pub fn components(self, dim: usize) -> usize {
        match self {
            Rank::Scalar => 1,
            Rank::Vector => dim,
            Rank::Matrix => dim * dim,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Rank::Scalar => "scalar",
            Rank::Vector => "vector",
            Rank::Matrix => "matrix",
        }
    }

    fn raised(self) -> Option<Rank> {
        match self {
            Rank::Scalar => Some(Rank::Vector),
            Rank::Vector => Some(Rank::Matrix),
            Rank::Matrix => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Representation {
    Physical,
    Spectral,
}

impl Representation {
    pub fn name(self) -> &'static str {
        match self {
            Representation::Physical => "physical",
            Representation::Spectral => "spectral",
        }
    }
}

#[derive(Clone, Debug)]
enum FieldData {
    Physical(Vec<Vec<f64>>),
    Spectral(Vec<Vec<Complex64>>),
}

/// A scalar, vector or matrix field on a [`TorusGrid`], stored either as grid values or
/// as Fourier coefficients.
#[derive(Clone, Debug)]
pub struct GridField {
    grid: TorusGrid,
    rank: Rank,
    data: FieldData,
}

impl GridField {
    pub fn from_components(grid: &TorusGrid, rank: Rank, comps: Vec<Vec<f64>>) -> Result<Self> {
        check_components(grid, rank, comps.len(), comps.iter().map(Vec::len))?;
        Ok(Self { grid: grid.clone(), rank, data: FieldData::Physical(comps) })
    }

    pub fn from_spectral(grid: &TorusGrid, rank: Rank, comps: Vec<Vec<Complex64>>) -> Result<Self> {
        check_components(grid, rank, comps.len(), comps.iter().map(Vec::len))?;
        Ok(Self { grid: grid.clone(), rank, data: FieldData::Spectral(comps) })
    }

    pub fn scalar(grid: &TorusGrid, values: Vec<f64>) -> Result<Self> {
        Self::from_components(grid, Rank::Scalar, vec![values])
    }

    pub fn vector(grid: &TorusGrid, comps: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_components(grid, Rank::Vector, comps)
    }

    pub fn matrix(grid: &TorusGrid, comps: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_components(grid, Rank::Matrix, comps)
    }

    pub fn zeros(grid: &TorusGrid, rank: Rank) -> Self {
        let comps = vec![vec![0.0; grid.len()]; rank.components(grid.dim())];
        Self { grid: grid.clone(), rank, data: FieldData::Physical(comps) }
    }

    pub fn constant_scalar(grid: &TorusGrid, c: f64) -> Self {
        Self { grid: grid.clone(), rank: Rank::Scalar, data: FieldData::Physical(vec![vec![c; grid.len()]]) }
    }

    /// Identity matrix field.
    pub fn identity(grid: &TorusGrid) -> Self {
        let d = grid.dim();
        let comps = (0..d * d)
            .map(|c| vec![if c / d == c % d { 1.0 } else { 0.0 }; grid.len()])
            .collect();
        Self { grid: grid.clone(), rank: Rank::Matrix, data: FieldData::Physical(comps) }
    }

    pub fn from_fn_scalar(grid: &TorusGrid, f: impl Fn(&[f64]) -> f64) -> Self {
        Self { grid: grid.clone(), rank: Rank::Scalar, data: FieldData::Physical(vec![grid.sample(f)]) }
    }

    /// Vector field from one closure per component.
    pub fn from_fn_vector(grid: &TorusGrid, f: impl Fn(usize, &[f64]) -> f64) -> Self {
        let comps = (0..grid.dim()).map(|c| grid.sample(|x| f(c, x))).collect();
        Self { grid: grid.clone(), rank: Rank::Vector, data: FieldData::Physical(comps) }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn rank(&self) -> Rank {
        self.rank
    }

    pub fn representation(&self) -> Representation {
        match self.data {
            FieldData::Physical(_) => Representation::Physical,
            FieldData::Spectral(_) => Representation::Spectral,
        }
    }

    pub fn component_count(&self) -> usize {
        self.rank.components(self.grid.dim())
    }

    /// Grid values per component; errors on spectral fields.
    pub fn physical(&self) -> Result<&[Vec<f64>]> {
        match &self.data {
            FieldData::Physical(c) => Ok(c),
            FieldData::Spectral(_) => Err(CnsError::Representation { expected: "physical" }),
        }
    }

    pub fn spectral(&self) -> Result<&[Vec<Complex64>]> {
        match &self.data {
            FieldData::Spectral(c) => Ok(c),
            FieldData::Physical(_) => Err(CnsError::Representation { expected: "spectral" }),
        }
    }

    /// Grid values of component `c`. Panics on spectral fields.
    pub fn values(&self, c: usize) -> &[f64] {
        match &self.data {
            FieldData::Physical(v) => &v[c],
            FieldData::Spectral(_) => panic!("values() called on a spectral field"),
        }
    }

    pub fn into_components(self) -> Vec<Vec<f64>> {
        match self.data {
            FieldData::Physical(v) => v,
            FieldData::Spectral(s) => s.iter().map(|c| self.grid.inverse(c)).collect(),
        }
    }

    pub fn forward_transform(&self) -> Result<GridField> {
        let comps = self.physical()?;
        let spec = comps.iter().map(|c| self.grid.forward(c)).collect();
        Ok(Self { grid: self.grid.clone(), rank: self.rank, data: FieldData::Spectral(spec) })
    }

    pub fn inverse_transform(&self) -> Result<GridField> {
        let spec = self.spectral()?;
        let comps = spec.iter().map(|c| self.grid.inverse(c)).collect();
        Ok(Self { grid: self.grid.clone(), rank: self.rank, data: FieldData::Physical(comps) })
    }

    pub fn to_physical(&self) -> GridField {
        match self.data {
            FieldData::Physical(_) => self.clone(),
            FieldData::Spectral(_) => self.inverse_transform().expect("spectral field"),
        }
    }

    pub fn to_spectral(&self) -> GridField {
        match self.data {
            FieldData::Spectral(_) => self.clone(),
            FieldData::Physical(_) => self.forward_transform().expect("physical field"),
        }
    }

    /// Fourier coefficients per component, transforming if needed.
    pub fn coefficients(&self) -> Vec<Vec<Complex64>> {
        match &self.data {
            FieldData::Spectral(s) => s.clone(),
            FieldData::Physical(p) => p.iter().map(|c| self.grid.forward(c)).collect(),
        }
    }

    fn with_same_repr(&self, rank: Rank, spec: Vec<Vec<Complex64>>) -> GridField {
        let data = match self.data {
            FieldData::Spectral(_) => FieldData::Spectral(spec),
            FieldData::Physical(_) => FieldData::Physical(spec.iter().map(|c| self.grid.inverse(c)).collect()),
        };
        GridField { grid: self.grid.clone(), rank, data }
    }

    /// Spectral gradient raising the rank by one: scalar `f -> (d_j f)_j`, vector
    /// `u -> Du` with `(Du)_{ij} = d_j u^i`. The result keeps the input representation.
    pub fn gradient(&self) -> Result<GridField> {
        let rank = self
            .rank
            .raised()
            .ok_or_else(|| CnsError::ShapeMismatch("gradient of a matrix field".into()))?;
        let d = self.grid.dim();
        let coeffs = self.coefficients();
        let symbols: Vec<_> = (0..d).map(|a| self.grid.derivative_symbols(a)).collect();
        let mut out = Vec::with_capacity(coeffs.len() * d);
        for c in &coeffs {
            for sym in &symbols {
                out.push(c.iter().zip(sym).map(|(x, s)| x * s).collect());
            }
        }
        Ok(self.with_same_repr(rank, out))
    }

    /// `grad u = transpose(Du)` for vectors; plain gradient for scalars.
    pub fn nabla(&self) -> Result<GridField> {
        let g = self.gradient()?;
        match self.rank {
            Rank::Vector => g.transpose(),
            _ => Ok(g),
        }
    }

    /// Divergence lowering the rank: vector `sum_i d_i u^i`; matrix `(div F)^j = sum_i d_i F_{ij}`.
    pub fn divergence(&self) -> Result<GridField> {
        let d = self.grid.dim();
        let coeffs = self.coefficients();
        let len = self.grid.len();
        let symbols: Vec<_> = (0..d).map(|a| self.grid.derivative_symbols(a)).collect();
        let (rank, spec) = match self.rank {
            Rank::Scalar => return Err(CnsError::ShapeMismatch("divergence of a scalar field".into())),
            Rank::Vector => {
                let mut acc = vec![Complex64::default(); len];
                for (i, c) in coeffs.iter().enumerate() {
                    for (k, a) in acc.iter_mut().enumerate() {
                        *a += c[k] * symbols[i][k];
                    }
                }
                (Rank::Scalar, vec![acc])
            }
            Rank::Matrix => {
                let mut out = vec![vec![Complex64::default(); len]; d];
                for i in 0..d {
                    for j in 0..d {
                        let c = &coeffs[i * d + j];
                        for k in 0..len {
                            out[j][k] += c[k] * symbols[i][k];
                        }
                    }
                }
                (Rank::Vector, out)
            }
        };
        Ok(self.with_same_repr(rank, spec))
    }

    /// Deformation tensor `D(u) = (Du + grad u) / 2`.
    pub fn deformation(&self) -> Result<GridField> {
        if self.rank != Rank::Vector {
            return Err(CnsError::ShapeMismatch("deformation of a non-vector field".into()));
        }
        let du = self.gradient()?.to_physical();
        let d = self.grid.dim();
        let comps = du.physical()?;
        let out = (0..d * d)
            .map(|c| {
                let (i, j) = (c / d, c % d);
                comps[i * d + j].iter().zip(&comps[j * d + i]).map(|(a, b)| 0.5 * (a + b)).collect()
            })
            .collect();
        let res = GridField::matrix(&self.grid, out)?;
        Ok(match self.representation() {
            Representation::Physical => res,
            Representation::Spectral => res.to_spectral(),
        })
    }

    pub fn transpose(&self) -> Result<GridField> {
        if self.rank != Rank::Matrix {
            return Err(CnsError::ShapeMismatch("transpose of a non-matrix field".into()));
        }
        let d = self.grid.dim();
        let data = match &self.data {
            FieldData::Physical(c) => FieldData::Physical((0..d * d).map(|k| c[(k % d) * d + k / d].clone()).collect()),
            FieldData::Spectral(c) => FieldData::Spectral((0..d * d).map(|k| c[(k % d) * d + k / d].clone()).collect()),
        };
        Ok(GridField { grid: self.grid.clone(), rank: Rank::Matrix, data })
    }

    /// Two-thirds rule projection. Requires a spectral field.
    pub fn dealias(&self) -> Result<GridField> {
        let spec = self.spectral()?;
        let mask = self.grid.dealias_mask();
        let out = spec
            .iter()
            .map(|c| c.iter().zip(&mask).map(|(&x, &keep)| if keep { x } else { Complex64::default() }).collect())
            .collect();
        Ok(GridField { grid: self.grid.clone(), rank: self.rank, data: FieldData::Spectral(out) })
    }

    /// Dealias regardless of representation, returning the input representation.
    pub fn filtered(&self) -> GridField {
        let spec = self.to_spectral().dealias().expect("spectral");
        match self.representation() {
            Representation::Spectral => spec,
            Representation::Physical => spec.inverse_transform().expect("spectral"),
        }
    }

    /// Evaluate the band-limited trigonometric interpolant at arbitrary points.
    /// Returns one vector of values per component.
    pub fn evaluate_offgrid(&self, points: &[[f64; 3]]) -> Vec<Vec<f64>> {
        let poly = TrigPolynomial::new(self);
        poly.evaluate(points)
    }

    /// Grid-quadrature `L^p` norm of the pointwise Frobenius magnitude.
    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        if p.is_nan() || p < 1.0 {
            return Err(CnsError::InvalidParameter(format!("L^p exponent {p} < 1")));
        }
        let phys;
        let comps = match &self.data {
            FieldData::Physical(c) => c,
            FieldData::Spectral(_) => {
                phys = self.to_physical();
                phys.physical()?
            }
        };
        Ok(lp_norm_components(comps, p, self.grid.cell_volume()))
    }

    pub fn max_abs(&self) -> f64 {
        self.to_physical()
            .physical()
            .expect("physical")
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Grid integral of each component.
    pub fn integral(&self) -> Vec<f64> {
        let w = self.grid.cell_volume();
        match &self.data {
            FieldData::Physical(c) => c.iter().map(|v| neumaier_sum(v.iter().copied()) * w).collect(),
            FieldData::Spectral(s) => s.iter().map(|c| c[0].re * self.grid.volume()).collect(),
        }
    }

    fn zip_physical(&self, other: &GridField, f: impl Fn(f64, f64) -> f64) -> Result<GridField> {
        self.check_same(other)?;
        let a = self.to_physical();
        let b = other.to_physical();
        let comps = a
            .physical()?
            .iter()
            .zip(b.physical()?)
            .map(|(x, y)| x.iter().zip(y).map(|(&p, &q)| f(p, q)).collect())
            .collect();
        GridField::from_components(&self.grid, self.rank, comps)
    }

    fn check_same(&self, other: &GridField) -> Result<()> {
        if self.grid != other.grid || self.rank != other.rank {
            return Err(CnsError::ShapeMismatch(format!(
                "{} field on {:?} vs {} field on {:?}",
                self.rank.name(),
                self.grid,
                other.rank.name(),
                other.grid
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &GridField) -> Result<GridField> {
        self.zip_physical(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &GridField) -> Result<GridField> {
        self.zip_physical(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> GridField {
        let mut out = self.clone();
        match &mut out.data {
            FieldData::Physical(c) => c.iter_mut().flatten().for_each(|v| *v *= s),
            FieldData::Spectral(c) => c.iter_mut().flatten().for_each(|v| *v *= s),
        }
        out
    }

    /// Pointwise product with a scalar field (physical result, not filtered).
    pub fn mul_scalar_field(&self, s: &GridField) -> Result<GridField> {
        if s.rank != Rank::Scalar || s.grid != self.grid {
            return Err(CnsError::ShapeMismatch("multiplier must be a scalar field on the same grid".into()));
        }
        let a = self.to_physical();
        let sp = s.to_physical();
        let w = &sp.physical()?[0];
        let comps = a
            .physical()?
            .iter()
            .map(|c| c.iter().zip(w).map(|(x, y)| x * y).collect())
            .collect();
        GridField::from_components(&self.grid, self.rank, comps)
    }

    /// Apply `f` pointwise to every physical value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridField {
        let a = self.to_physical();
        let comps = a.physical().expect("physical").iter().map(|c| c.iter().map(|&v| f(v)).collect()).collect();
        GridField { grid: self.grid.clone(), rank: self.rank, data: FieldData::Physical(comps) }
    }

    /// Max-norm distance between two fields of the same shape.
    pub fn max_diff(&self, other: &GridField) -> Result<f64> {
        Ok(self.sub(other)?.max_abs())
    }
}

fn check_components(
    grid: &TorusGrid,
    rank: Rank,
    count: usize,
    mut lens: impl Iterator<Item = usize>,
) -> Result<()> {
    let want = rank.components(grid.dim());
    if count != want {
        return Err(CnsError::ShapeMismatch(format!(
            "{} field needs {want} components, got {count}",
            rank.name()
        )));
    }
    if let Some(bad) = lens.find(|&l| l != grid.len()) {
        return Err(CnsError::ShapeMismatch(format!("component of length {bad}, grid has {}", grid.len())));
    }
    Ok(())
}

pub(crate) fn lp_norm_components(comps: &[Vec<f64>], p: f64, cell_volume: f64) -> f64 {
    let len = comps.first().map_or(0, Vec::len);
    let mag = |k: usize| -> f64 {
        if comps.len() == 1 {
            comps[0][k].abs()
        } else {
            comps.iter().map(|c| c[k] * c[k]).sum::<f64>().sqrt()
        }
    };
    if p.is_infinite() {
        return (0..len).map(mag).fold(0.0, f64::max);
    }
    let peak = (0..len).map(mag).fold(0.0, f64::max);
    if peak == 0.0 {
        return 0.0;
    }
    // scale by the peak to avoid under/overflow for large p
    let sum = neumaier_sum((0..len).map(|k| (mag(k) / peak).powf(p)));
    peak * (sum * cell_volume).powf(1.0 / p)
}

/// Compensated summation.
pub(crate) fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Sparse list of nonzero Fourier modes, evaluated by direct summation.
pub struct TrigPolynomial {
    dim: usize,
    n: usize,
    unit: f64,
    components: usize,
    /// (integer wavevector, coefficient per component)
    modes: Vec<([i64; 3], Vec<Complex64>)>,
}

impl TrigPolynomial {
    pub fn new(field: &GridField) -> Self {
        Self::from_fields(&[field])
    }

    /// Several fields sharing one grid, evaluated component after component.
    pub fn from_fields(fields: &[&GridField]) -> Self {
        let grid = fields[0].grid().clone();
        let coeffs: Vec<Vec<Complex64>> = fields.iter().flat_map(|f| f.coefficients()).collect();
        let mut modes = Vec::new();
        for idx in 0..grid.len() {
            if coeffs.iter().any(|c| c[idx] != Complex64::default()) {
                modes.push((grid.int_wavevector(idx), coeffs.iter().map(|c| c[idx]).collect()));
            }
        }
        TrigPolynomial {
            dim: grid.dim(),
            n: grid.points_per_axis(),
            unit: grid.frequency_unit(),
            components: coeffs.len(),
            modes,
        }
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn evaluate_point(&self, x: &[f64; 3], out: &mut [f64]) {
        let half = (self.n / 2) as i64;
        let width = self.n + 1;
        let mut phases = vec![Complex64::default(); 3 * width];
        for a in 0..self.dim {
            let base = Complex64::from_polar(1.0, self.unit * x[a]);
            let row = &mut phases[a * width..(a + 1) * width];
            row[half as usize] = Complex64::new(1.0, 0.0);
            let mut cur = Complex64::new(1.0, 0.0);
            for k in 1..=half as usize {
                cur *= base;
                row[half as usize + k] = cur;
                if k <= half as usize {
                    row[half as usize - k] = cur.conj();
                }
            }
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        for (k, c) in &self.modes {
            let mut ph = phases[(k[0] + half) as usize];
            for a in 1..self.dim {
                ph *= phases[a * width + (k[a] + half) as usize];
            }
            for (o, coef) in out.iter_mut().zip(c) {
                *o += coef.re * ph.re - coef.im * ph.im;
            }
        }
    }

    pub fn evaluate(&self, points: &[[f64; 3]]) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; points.len()]; self.components];
        let mut buf = vec![0.0; self.components];
        for (p, x) in points.iter().enumerate() {
            self.evaluate_point(x, &mut buf);
            for c in 0..self.components {
                out[c][p] = buf[c];
            }
        }
        out
    }
}
