//! Method-of-lines integration of the algebra-valued evolution equations
//! on a periodic domain.
//!
//! Three equations share one right-hand-side driver, written with the time
//! derivative isolated (`f_t = rhs(f)`):
//!
//! ```text
//! cdkdv:   u_t = -u_xxx - 1/2 (u u_x + u_x u) - [v, u]
//! gardner: r_t = -r_xxx - 1/2 (r r_x + r_x r) + eps^2/12 ((r^2) r_x + r_x (r^2)) - [v, r]
//! mkdv:    r_t = -r_xxx + 1/12 ((r^2) r_x + r_x (r^2)) - [v, r]
//! ```
//!
//! Spatial derivatives are pseudospectral (each real component differentiated
//! independently, Nyquist mode zeroed), time stepping is classical RK4 with
//! the dispersive stability bound `dt * k_max^3 <= 2.8`, `k_max = pi N / L`.
//! Quadratic terms are formed in physical space; an optional 2/3-rule filter
//! suppresses aliasing when requested.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::algebra::{Algebra, AlgebraError, CdNumber};
use crate::transforms::{self, ConservedReport};

/// RK4 stability limit on the imaginary axis (2*sqrt(2), truncated).
pub const STABILITY_CONSTANT: f64 = 2.8;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error("grid size {0} must be a power of two >= 16")]
    BadGridSize(usize),
    #[error("grid length must be positive, got {0}")]
    BadGridLength(f64),
    #[error("time step {dt} violates the stability bound dt*k_max^3 <= {STABILITY_CONSTANT} (k_max = {kmax})")]
    UnstableTimeStep { dt: f64, kmax: f64 },
    #[error("invalid evolution parameter: {0}")]
    BadParameter(String),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("spatial derivative order must be 1, 2 or 3, got {0}")]
    BadDerivativeOrder(u32),
    #[error("solution blew up; last valid time {t_last_valid}")]
    BlowUp {
        t_last_valid: f64,
        record: Box<RunRecord>,
    },
    #[error("residual check needs at least 3 snapshots, got {0}")]
    InsufficientSnapshots(usize),
}

/// Periodic spatial grid on `[0, L)` with `N` points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    n: usize,
    length: f64,
}

impl Grid {
    pub fn new(n: usize, length: f64) -> Result<Self, SolverError> {
        if n < 16 || !n.is_power_of_two() {
            return Err(SolverError::BadGridSize(n));
        }
        if !(length > 0.0) || !length.is_finite() {
            return Err(SolverError::BadGridLength(length));
        }
        Ok(Self { n, length })
    }

    pub fn points(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn x(&self, ix: usize) -> f64 {
        ix as f64 * self.spacing()
    }

    /// Largest resolved wavenumber `pi N / L`.
    pub fn k_max(&self) -> f64 {
        std::f64::consts::PI * self.n as f64 / self.length
    }

    /// Signed wavenumber of FFT bin `m`, with the Nyquist bin zeroed so odd
    /// derivatives of real data stay real.
    fn wavenumber(&self, m: usize) -> f64 {
        let n = self.n;
        let scale = 2.0 * std::f64::consts::PI / self.length;
        if m < n / 2 {
            m as f64 * scale
        } else if m == n / 2 {
            0.0
        } else {
            (m as f64 - n as f64) * scale
        }
    }
}

/// Periodic sample of an algebra-valued function of x. Storage is
/// component-major: coefficient `c` of the sample at `ix` sits at
/// `data[c * N + ix]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    algebra: Arc<Algebra>,
    data: Vec<f64>,
}

impl Field {
    pub fn zero(grid: Grid, algebra: Arc<Algebra>) -> Self {
        let data = vec![0.0; grid.points() * algebra.dim()];
        Self {
            grid,
            algebra,
            data,
        }
    }

    /// Builds a field by evaluating `f(x)` at the grid points.
    pub fn from_fn(
        grid: Grid,
        algebra: Arc<Algebra>,
        mut f: impl FnMut(f64) -> CdNumber,
    ) -> Self {
        let mut field = Self::zero(grid, algebra);
        for ix in 0..grid.points() {
            let v = f(grid.x(ix));
            field.set_sample(ix, &v);
        }
        field
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn algebra(&self) -> &Arc<Algebra> {
        &self.algebra
    }

    pub fn dim(&self) -> usize {
        self.algebra.dim()
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let n = self.grid.points();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.grid.points();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn sample(&self, ix: usize) -> CdNumber {
        let n = self.grid.points();
        CdNumber::from_coeffs((0..self.dim()).map(|c| self.data[c * n + ix]).collect())
    }

    pub fn set_sample(&mut self, ix: usize, value: &CdNumber) {
        let n = self.grid.points();
        for (c, &v) in value.coeffs().iter().enumerate() {
            self.data[c * n + ix] = v;
        }
    }

    pub fn map_zip(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        debug_assert_eq!(self.grid, other.grid);
        Field {
            grid: self.grid,
            algebra: self.algebra.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &Field) -> Field {
        self.map_zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Field {
        self.map_zip(other, |a, b| a - b)
    }

    pub fn scaled(&self, s: f64) -> Field {
        Field {
            grid: self.grid,
            algebra: self.algebra.clone(),
            data: self.data.iter().map(|a| a * s).collect(),
        }
    }

    /// `self + s * other`, the RK4 workhorse.
    pub fn axpy(&self, s: f64, other: &Field) -> Field {
        self.map_zip(other, |a, b| a + s * b)
    }

    /// Adds the constant element to every sample.
    pub fn add_constant(&self, value: &CdNumber) -> Field {
        let mut out = self.clone();
        let n = self.grid.points();
        for (c, &v) in value.coeffs().iter().enumerate() {
            if v != 0.0 {
                for x in out.data[c * n..(c + 1) * n].iter_mut() {
                    *x += v;
                }
            }
        }
        out
    }

    /// Max over the grid of the pointwise Euclidean norm.
    pub fn max_norm(&self) -> f64 {
        let n = self.grid.points();
        let mut worst: f64 = 0.0;
        for ix in 0..n {
            let mut s = 0.0;
            for c in 0..self.dim() {
                let v = self.data[c * n + ix];
                s += v * v;
            }
            worst = worst.max(s);
        }
        worst.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Pointwise algebra product of two fields on the same grid.
    pub fn pointwise_mul(&self, other: &Field) -> Field {
        debug_assert_eq!(self.grid, other.grid);
        debug_assert_eq!(self.dim(), other.dim());
        let n = self.grid.points();
        let dim = self.dim();
        let mut out = Field::zero(self.grid, self.algebra.clone());
        for i in 0..dim {
            let ai = i * n;
            for j in 0..dim {
                let (s, k) = self.algebra.basis_product(i, j);
                let bj = j * n;
                let ok = k * n;
                if s > 0 {
                    for x in 0..n {
                        out.data[ok + x] += self.data[ai + x] * other.data[bj + x];
                    }
                } else {
                    for x in 0..n {
                        out.data[ok + x] -= self.data[ai + x] * other.data[bj + x];
                    }
                }
            }
        }
        out
    }

    /// Pointwise left multiplication by a constant element: `v f(x)`.
    pub fn mul_const_left(&self, v: &CdNumber) -> Field {
        debug_assert_eq!(self.dim(), v.dim());
        let n = self.grid.points();
        let dim = self.dim();
        let mut out = Field::zero(self.grid, self.algebra.clone());
        for j in 0..dim {
            let vj = v.coeffs()[j];
            if vj == 0.0 {
                continue;
            }
            for k in 0..dim {
                let (s, i) = self.algebra.basis_product(j, k);
                let fk = k * n;
                let oi = i * n;
                let c = f64::from(s) * vj;
                for x in 0..n {
                    out.data[oi + x] += c * self.data[fk + x];
                }
            }
        }
        out
    }

    /// `[v, f] = v f - f v` with a constant left argument.
    pub fn bracket_const(&self, v: &CdNumber) -> Field {
        debug_assert_eq!(self.dim(), v.dim());
        let n = self.grid.points();
        let dim = self.dim();
        let mut out = Field::zero(self.grid, self.algebra.clone());
        for j in 0..dim {
            let vj = v.coeffs()[j];
            if vj == 0.0 {
                continue;
            }
            for k in 0..dim {
                let (s1, i1) = self.algebra.basis_product(j, k);
                let (s2, i2) = self.algebra.basis_product(k, j);
                let fk = k * n;
                let o1 = i1 * n;
                let o2 = i2 * n;
                let c1 = f64::from(s1) * vj;
                let c2 = f64::from(s2) * vj;
                for x in 0..n {
                    let f = self.data[fk + x];
                    out.data[o1 + x] += c1 * f;
                    out.data[o2 + x] -= c2 * f;
                }
            }
        }
        out
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Applies `spectrum[m] *= factor(k_m)` to one real component and returns
/// the transformed samples.
fn spectral_apply(samples: &[f64], grid: &Grid, factor: impl Fn(f64) -> Complex<f64>) -> Vec<f64> {
    let n = grid.points();
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&v| Complex::new(v, 0.0)).collect();
    PLANNER.with(|p| {
        let mut planner = p.borrow_mut();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        fwd.process(&mut buf);
        for (m, c) in buf.iter_mut().enumerate() {
            *c *= factor(grid.wavenumber(m));
        }
        inv.process(&mut buf);
    });
    let norm = 1.0 / n as f64;
    buf.iter().map(|c| c.re * norm).collect()
}

/// Componentwise pseudospectral derivative of the given order (1, 2 or 3).
/// Exact for band-limited data below the Nyquist mode.
pub fn spatial_derivative(f: &Field, order: u32) -> Result<Field, SolverError> {
    if !(1..=3).contains(&order) {
        return Err(SolverError::BadDerivativeOrder(order));
    }
    Ok(spatial_derivative_unchecked(f, order))
}

pub(crate) fn spatial_derivative_unchecked(f: &Field, order: u32) -> Field {
    let grid = f.grid();
    let mut out = Field::zero(grid, f.algebra().clone());
    for c in 0..f.dim() {
        let d = spectral_apply(f.component(c), &grid, |k| match order {
            1 => Complex::new(0.0, k),
            2 => Complex::new(-k * k, 0.0),
            _ => Complex::new(0.0, -k * k * k),
        });
        out.component_mut(c).copy_from_slice(&d);
    }
    out
}

/// Translates one real component by `shift` via the spectral phase factor;
/// exact for resolved modes on the periodic domain.
pub(crate) fn spectral_shift(samples: &[f64], grid: &Grid, shift: f64) -> Vec<f64> {
    spectral_apply(samples, grid, |k| Complex::from_polar(1.0, -k * shift))
}

/// 2/3-rule low-pass: zeroes every mode with |k| above two thirds of the
/// resolved range.
pub fn dealias_filter(f: &Field) -> Field {
    let grid = f.grid();
    let n = grid.points();
    let cutoff = n / 3;
    let mut out = Field::zero(grid, f.algebra().clone());
    for c in 0..f.dim() {
        let d = spectral_apply(f.component(c), &grid, |k| {
            let m = (k * grid.length() / (2.0 * std::f64::consts::PI)).abs();
            if m > cutoff as f64 + 0.5 {
                Complex::new(0.0, 0.0)
            } else {
                Complex::new(1.0, 0.0)
            }
        });
        out.component_mut(c).copy_from_slice(&d);
    }
    out
}

/// Which evolution equation the spec drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Equation {
    CdKdv,
    Gardner,
    Mkdv,
}

impl std::fmt::Display for Equation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Equation::CdKdv => write!(f, "cdkdv"),
            Equation::Gardner => write!(f, "gardner"),
            Equation::Mkdv => write!(f, "mkdv"),
        }
    }
}

/// Fully specified evolution problem (equation, constant field, stepping).
#[derive(Debug, Clone)]
pub struct EvolutionSpec {
    pub equation: Equation,
    pub v: CdNumber,
    pub epsilon: f64,
    pub dt: f64,
    pub t_end: f64,
    pub record_every: usize,
    pub dealias: bool,
}

impl EvolutionSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        equation: Equation,
        v: CdNumber,
        epsilon: f64,
        dt: f64,
        t_end: f64,
        record_every: usize,
        dealias: bool,
        grid: &Grid,
    ) -> Result<Self, SolverError> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(SolverError::BadParameter(format!("dt must be positive, got {dt}")));
        }
        if !(t_end > 0.0) || !t_end.is_finite() {
            return Err(SolverError::BadParameter(format!(
                "t_end must be positive, got {t_end}"
            )));
        }
        if record_every == 0 {
            return Err(SolverError::BadParameter(
                "record_every must be at least 1".to_string(),
            ));
        }
        if !epsilon.is_finite() {
            return Err(SolverError::BadParameter("epsilon must be finite".to_string()));
        }
        let kmax = grid.k_max();
        if dt * kmax.powi(3) > STABILITY_CONSTANT {
            return Err(SolverError::UnstableTimeStep { dt, kmax });
        }
        Ok(Self {
            equation,
            v,
            epsilon,
            dt,
            t_end,
            record_every,
            dealias,
        })
    }

    /// Spec used only to evaluate right-hand sides on existing snapshots
    /// (residual verifiers); stepping parameters are placeholders and the
    /// stability bound is not consulted.
    pub fn for_analysis(equation: Equation, v: CdNumber, epsilon: f64, dealias: bool) -> Self {
        Self {
            equation,
            v,
            epsilon,
            dt: 1.0,
            t_end: 1.0,
            record_every: 1,
            dealias,
        }
    }
}

/// Semidiscrete right-hand side `f_t = rhs(f)`.
pub fn rhs(spec: &EvolutionSpec, f: &Field) -> Result<Field, SolverError> {
    if spec.v.dim() != f.dim() {
        return Err(AlgebraError::DimensionMismatch {
            expected: f.dim(),
            got: spec.v.dim(),
        }
        .into());
    }
    let fxxx = spatial_derivative_unchecked(f, 3);
    // quadratic terms are built from (possibly filtered) physical-space data
    let (a, ax);
    if spec.dealias {
        a = dealias_filter(f);
        ax = spatial_derivative_unchecked(&a, 1);
    } else {
        a = f.clone();
        ax = spatial_derivative_unchecked(f, 1);
    }
    let post = |g: Field| if spec.dealias { dealias_filter(&g) } else { g };

    let mut out = fxxx.scaled(-1.0);
    match spec.equation {
        Equation::CdKdv => {
            // 1/2 (u u_x + u_x u) = 1/2 (u^2)_x
            let quad = post(a.pointwise_mul(&ax).add(&ax.pointwise_mul(&a)));
            out = out.axpy(-0.5, &quad);
        }
        Equation::Gardner => {
            let quad = post(a.pointwise_mul(&ax).add(&ax.pointwise_mul(&a)));
            out = out.axpy(-0.5, &quad);
            let sq = a.pointwise_mul(&a);
            let cubic = post(sq.pointwise_mul(&ax).add(&ax.pointwise_mul(&sq)));
            out = out.axpy(spec.epsilon * spec.epsilon / 12.0, &cubic);
        }
        Equation::Mkdv => {
            let sq = a.pointwise_mul(&a);
            let cubic = post(sq.pointwise_mul(&ax).add(&ax.pointwise_mul(&sq)));
            out = out.axpy(1.0 / 12.0, &cubic);
        }
    }
    if !spec.v.imag_part().is_zero() {
        out = out.axpy(-1.0, &f.bracket_const(&spec.v));
    }
    Ok(out)
}

/// One classical RK4 step. Detects non-finite output and reports blow-up.
pub fn step_rk4(spec: &EvolutionSpec, f: &Field, dt: f64) -> Result<Field, SolverError> {
    let k1 = rhs(spec, f)?;
    let k2 = rhs(spec, &f.axpy(0.5 * dt, &k1))?;
    let k3 = rhs(spec, &f.axpy(0.5 * dt, &k2))?;
    let k4 = rhs(spec, &f.axpy(dt, &k3))?;
    let mut out = f.clone();
    for i in 0..out.data.len() {
        out.data[i] += dt / 6.0 * (k1.data[i] + 2.0 * k2.data[i] + 2.0 * k3.data[i] + k4.data[i]);
    }
    if !out.is_finite() || out.max_norm() > 1e12 {
        return Err(SolverError::BlowUp {
            t_last_valid: 0.0,
            record: Box::new(RunRecord::empty()),
        });
    }
    Ok(out)
}

/// A recorded trajectory with per-snapshot conserved quantities and
/// a-posteriori residual norms.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub times: Vec<f64>,
    pub snapshots: Vec<Field>,
    pub conserved: Vec<ConservedReport>,
    pub residual_norms: Vec<f64>,
}

impl RunRecord {
    fn empty() -> Self {
        Self {
            times: Vec::new(),
            snapshots: Vec::new(),
            conserved: Vec::new(),
            residual_norms: Vec::new(),
        }
    }

    fn push(&mut self, t: f64, f: &Field) {
        self.times.push(t);
        self.conserved.push(transforms::conserved(f));
        self.snapshots.push(f.clone());
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    /// Fills `residual_norms` from centered time differences between
    /// recorded snapshots. Endpoint entries copy their interior neighbor.
    fn finalize_residuals(&mut self, spec: &EvolutionSpec) {
        let m = self.snapshots.len();
        self.residual_norms = vec![0.0; m];
        if m < 3 {
            return;
        }
        for i in 1..m - 1 {
            self.residual_norms[i] =
                triple_residual(spec, &self.snapshots, &self.times, i).unwrap_or(f64::NAN);
        }
        self.residual_norms[0] = self.residual_norms[1];
        self.residual_norms[m - 1] = self.residual_norms[m - 2];
    }
}

fn triple_residual(
    spec: &EvolutionSpec,
    snaps: &[Field],
    times: &[f64],
    i: usize,
) -> Result<f64, SolverError> {
    let dt_left = times[i] - times[i - 1];
    let dt_right = times[i + 1] - times[i];
    if (dt_left - dt_right).abs() > 1e-9 * dt_left.abs().max(dt_right.abs()) {
        return Err(SolverError::BadParameter(
            "snapshots are not uniformly spaced".to_string(),
        ));
    }
    let centered = snaps[i + 1].sub(&snaps[i - 1]).scaled(1.0 / (dt_left + dt_right));
    let r = rhs(spec, &snaps[i])?;
    Ok(centered.sub(&r).max_norm())
}

/// Max-norm consistency check of a snapshot window: centered time
/// difference against the semidiscrete right-hand side.
pub fn residual_norm(
    spec: &EvolutionSpec,
    snaps: &[Field],
    times: &[f64],
) -> Result<f64, SolverError> {
    if snaps.len() < 3 || snaps.len() != times.len() {
        return Err(SolverError::InsufficientSnapshots(snaps.len()));
    }
    let mut worst: f64 = 0.0;
    for i in 1..snaps.len() - 1 {
        worst = worst.max(triple_residual(spec, snaps, times, i)?);
    }
    Ok(worst)
}

/// Integrates `initial` to `t_end`, recording every `record_every` steps
/// (plus the final state). On blow-up the partial record rides along with
/// the error.
pub fn simulate(spec: &EvolutionSpec, initial: &Field) -> Result<RunRecord, SolverError> {
    if !initial.is_finite() {
        return Err(SolverError::BadParameter(
            "initial data contains non-finite values".to_string(),
        ));
    }
    let steps = (spec.t_end / spec.dt).round().max(1.0) as usize;
    let mut record = RunRecord::empty();
    record.push(0.0, initial);
    let mut f = initial.clone();
    for step in 1..=steps {
        let t = step as f64 * spec.dt;
        match step_rk4(spec, &f, spec.dt) {
            Ok(next) => f = next,
            Err(SolverError::BlowUp { .. }) => {
                record.finalize_residuals(spec);
                return Err(SolverError::BlowUp {
                    t_last_valid: (step - 1) as f64 * spec.dt,
                    record: Box::new(record),
                });
            }
            Err(e) => return Err(e),
        }
        if step % spec.record_every == 0 || step == steps {
            record.push(t, &f);
        }
    }
    record.finalize_residuals(spec);
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid(n: usize, l: f64) -> Grid {
        Grid::new(n, l).unwrap()
    }

    fn oct() -> Arc<Algebra> {
        Algebra::shared(3).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(8, 10.0).is_err());
        assert!(Grid::new(48, 10.0).is_err());
        assert!(Grid::new(64, -1.0).is_err());
        assert!(Grid::new(64, 10.0).is_ok());
    }

    #[test]
    fn derivative_of_single_mode() {
        let g = grid(64, 10.0);
        let alg = oct();
        let k = 2.0 * PI / g.length();
        let f = Field::from_fn(g, alg.clone(), |x| {
            CdNumber::real_scalar(8, (k * x).sin())
        });
        let d = spatial_derivative(&f, 1).unwrap();
        let exact = Field::from_fn(g, alg, |x| CdNumber::real_scalar(8, k * (k * x).cos()));
        assert!(d.sub(&exact).max_norm() < 1e-10);
    }

    #[test]
    fn derivative_of_constant_is_zero() {
        let g = grid(32, 5.0);
        let f = Field::from_fn(g, oct(), |_| CdNumber::real_scalar(8, 1.75));
        for order in 1..=3 {
            assert!(spatial_derivative(&f, order).unwrap().max_norm() < 1e-12);
        }
    }

    #[test]
    fn derivative_order_validation() {
        let g = grid(32, 5.0);
        let f = Field::zero(g, oct());
        assert!(matches!(
            spatial_derivative(&f, 4),
            Err(SolverError::BadDerivativeOrder(4))
        ));
    }

    /// Dense 6th-order central finite differences with one Richardson step,
    /// the independent oracle for the third derivative.
    fn fd_third_derivative(samples: &[f64], h: f64) -> Vec<f64> {
        let n = samples.len();
        let stencil = |h: f64, scale: usize, out: &mut Vec<f64>| {
            // 6th-order centered coefficients for f''' on offsets -4..4
            let c = [
                (-4i64, -7.0 / 240.0),
                (-3, 3.0 / 10.0),
                (-2, -169.0 / 120.0),
                (-1, 61.0 / 30.0),
                (1, -61.0 / 30.0),
                (2, 169.0 / 120.0),
                (3, -3.0 / 10.0),
                (4, 7.0 / 240.0),
            ];
            for i in 0..n {
                let mut acc = 0.0;
                for (off, w) in c {
                    let idx =
                        ((i as i64 + off * scale as i64).rem_euclid(n as i64)) as usize;
                    acc += w * samples[idx];
                }
                out.push(acc / (h * h * h));
            }
        };
        let mut coarse = Vec::with_capacity(n);
        stencil(2.0 * h, 2, &mut coarse);
        let mut fine = Vec::with_capacity(n);
        stencil(h, 1, &mut fine);
        // Richardson at order 6: (64 fine - coarse) / 63
        fine.iter()
            .zip(&coarse)
            .map(|(f, c)| (64.0 * f - c) / 63.0)
            .collect()
    }

    #[test]
    fn third_derivative_matches_finite_differences() {
        // domain wide enough that the sech^2 tails periodize smoothly
        let g = grid(1024, 60.0);
        let alg = oct();
        let f = Field::from_fn(g, alg, |x| {
            let s = 1.0 / ((x - 30.0) / 2.0).cosh();
            let mut v = CdNumber::zero(8);
            v.coeffs_mut()[2] = s * s;
            v
        });
        let spectral = spatial_derivative(&f, 3).unwrap();
        let fd = fd_third_derivative(f.component(2), g.spacing());
        let scale = spectral.max_norm();
        let worst = spectral
            .component(2)
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(worst / scale < 1e-6, "relative error {}", worst / scale);
    }

    fn spec_for(
        equation: Equation,
        v: CdNumber,
        g: &Grid,
        dt: f64,
        t_end: f64,
        record_every: usize,
    ) -> EvolutionSpec {
        EvolutionSpec::new(equation, v, 0.5, dt, t_end, record_every, false, g).unwrap()
    }

    #[test]
    fn stability_bound_enforced() {
        let g = grid(256, 10.0);
        let err = EvolutionSpec::new(
            Equation::CdKdv,
            CdNumber::zero(8),
            0.0,
            1e-2,
            1.0,
            1,
            false,
            &g,
        );
        assert!(matches!(err, Err(SolverError::UnstableTimeStep { .. })));
    }

    #[test]
    fn real_data_keeps_rhs_real_and_scalar() {
        let g = grid(64, 20.0);
        let alg = oct();
        let mut v = CdNumber::zero(8);
        v.coeffs_mut()[1] = 0.7;
        v.coeffs_mut()[4] = -0.3;
        let f = Field::from_fn(g, alg.clone(), |x| {
            CdNumber::real_scalar(8, (2.0 * PI * x / 20.0).sin())
        });
        let spec = spec_for(Equation::CdKdv, v, &g, 1e-4, 1.0, 1);
        let r = rhs(&spec, &f).unwrap();
        for c in 1..8 {
            for &val in r.component(c) {
                assert_eq!(val, 0.0, "imaginary component {c} leaked");
            }
        }
        // scalar KdV rhs oracle: -u_xxx - u u_x
        let ux = spatial_derivative(&f, 1).unwrap();
        let uxxx = spatial_derivative(&f, 3).unwrap();
        for ix in 0..g.points() {
            let expected = -uxxx.component(0)[ix] - f.component(0)[ix] * ux.component(0)[ix];
            assert!((r.component(0)[ix] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_field_with_zero_v_is_steady() {
        let g = grid(32, 5.0);
        let f = Field::from_fn(g, oct(), |_| {
            CdNumber::from_coeffs(vec![0.3, -0.1, 0.0, 0.2, 0.0, 0.0, 0.05, 0.0])
        });
        let spec = spec_for(Equation::CdKdv, CdNumber::zero(8), &g, 1e-4, 1.0, 1);
        assert!(rhs(&spec, &f).unwrap().max_norm() < 1e-12);
    }

    #[test]
    fn bracket_term_lands_in_the_right_component() {
        // u = B_2(x) e_2 and v = e_1: [v,u] = B_2 (e_1 e_2 - e_2 e_1) = 2 B_2 e_3,
        // so the rhs e_3-component is -2 B_2 while e_2 keeps the dispersive part.
        let g = grid(64, 20.0);
        let alg = oct();
        let v = CdNumber::basis(8, 1);
        let b2 = |x: f64| (2.0 * PI * x / 20.0).cos();
        let f = Field::from_fn(g, alg, |x| {
            let mut u = CdNumber::zero(8);
            u.coeffs_mut()[2] = b2(x);
            u
        });
        let spec = spec_for(Equation::CdKdv, v, &g, 1e-4, 1.0, 1);
        let r = rhs(&spec, &f).unwrap();
        for ix in 0..g.points() {
            let expected = -2.0 * b2(g.x(ix));
            assert!((r.component(3)[ix] - expected).abs() < 1e-12);
        }
        // no other imaginary component besides e_2 (dispersion) and e_3 (rotation)
        for c in [1usize, 4, 5, 6, 7] {
            for &val in r.component(c) {
                assert!(val.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rk4_zero_dt_is_identity() {
        let g = grid(32, 5.0);
        let f = Field::from_fn(g, oct(), |x| CdNumber::real_scalar(8, x.sin()));
        let spec = spec_for(Equation::CdKdv, CdNumber::zero(8), &g, 1e-4, 1.0, 1);
        let stepped = step_rk4(&spec, &f, 0.0).unwrap();
        assert_eq!(stepped, f);
    }

    #[test]
    fn linear_dispersion_phase() {
        // tiny amplitude suppresses the quadratic term; a single mode under
        // u_t = -u_xxx rotates by exp(i k^3 t)
        let g = grid(64, 16.0);
        let alg = Algebra::shared(0).unwrap();
        let k = 2.0 * PI * 2.0 / g.length();
        let amp = 1e-6;
        let f = Field::from_fn(g, alg.clone(), |x| {
            CdNumber::real_scalar(1, amp * (k * x).sin())
        });
        let dt = 1e-3;
        let t_end = 0.1;
        let spec = spec_for(Equation::CdKdv, CdNumber::zero(1), &g, dt, t_end, 1000);
        let record = simulate(&spec, &f).unwrap();
        let last = record.snapshots.last().unwrap();
        let exact = Field::from_fn(g, alg, |x| {
            CdNumber::real_scalar(1, amp * (k * x + k.powi(3) * t_end).sin())
        });
        assert!(last.sub(&exact).max_norm() < amp * 1e-3);
    }

    #[test]
    fn rk4_order_check_on_soliton_data() {
        let g = grid(128, 40.0);
        let alg = Algebra::shared(0).unwrap();
        let f = Field::from_fn(g, alg, |x| {
            let s = 1.0 / ((x - 20.0) * 0.5).cosh();
            CdNumber::real_scalar(1, 3.0 * s * s)
        });
        let spec = spec_for(Equation::CdKdv, CdNumber::zero(1), &g, 1e-4, 1.0, 1);
        let dt = 2e-3;
        let full = step_rk4(&spec, &f, dt).unwrap();
        let half = step_rk4(&spec, &step_rk4(&spec, &f, dt / 2.0).unwrap(), dt / 2.0).unwrap();
        // reference via 8 micro-steps
        let mut reference = f.clone();
        for _ in 0..8 {
            reference = step_rk4(&spec, &reference, dt / 8.0).unwrap();
        }
        let e_full = full.sub(&reference).max_norm();
        let e_half = half.sub(&reference).max_norm();
        let ratio = e_full / e_half;
        assert!(
            (10.0..26.0).contains(&ratio),
            "expected ~16x error drop, got {ratio} ({e_full} / {e_half})"
        );
    }

    #[test]
    fn zero_initial_field_stays_zero() {
        let g = grid(32, 10.0);
        let f = Field::zero(g, oct());
        let spec = spec_for(Equation::CdKdv, CdNumber::zero(8), &g, 1e-3, 0.1, 10);
        let record = simulate(&spec, &f).unwrap();
        for snap in &record.snapshots {
            assert!(snap.max_norm() == 0.0);
        }
        for c in &record.conserved {
            assert_eq!((c.h1, c.h2, c.h3), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn unused_imaginary_components_stay_exactly_zero() {
        // data supported on span{e_0, e_2} with v = 0 never couples outward
        let g = grid(64, 20.0);
        let alg = oct();
        let f = Field::from_fn(g, alg, |x| {
            let mut u = CdNumber::zero(8);
            u.coeffs_mut()[0] = (2.0 * PI * x / 20.0).sin();
            u.coeffs_mut()[2] = 0.5 * (2.0 * PI * x / 20.0).cos();
            u
        });
        let spec = spec_for(Equation::CdKdv, CdNumber::zero(8), &g, 1e-3, 0.2, 50);
        let record = simulate(&spec, &f).unwrap();
        let last = record.snapshots.last().unwrap();
        for c in [1usize, 3, 4, 5, 6, 7] {
            for &val in last.component(c) {
                assert_eq!(val, 0.0);
            }
        }
    }

    #[test]
    fn residual_norm_zero_for_steady_state() {
        let g = grid(32, 10.0);
        let f = Field::from_fn(g, oct(), |_| CdNumber::real_scalar(8, 0.8));
        let spec = spec_for(Equation::CdKdv, CdNumber::zero(8), &g, 1e-3, 0.01, 1);
        let record = simulate(&spec, &f).unwrap();
        let r = residual_norm(&spec, &record.snapshots, &record.times).unwrap();
        assert!(r < 1e-12);
    }

    #[test]
    fn residual_norm_needs_three_snapshots() {
        let g = grid(32, 10.0);
        let f = Field::zero(g, oct());
        let spec = spec_for(Equation::CdKdv, CdNumber::zero(8), &g, 1e-3, 0.01, 1);
        assert!(matches!(
            residual_norm(&spec, &[f.clone(), f], &[0.0, 1e-3]),
            Err(SolverError::InsufficientSnapshots(2))
        ));
    }

    #[test]
    fn residual_halves_dt_quarter_error() {
        let g = grid(128, 40.0);
        let alg = Algebra::shared(0).unwrap();
        let f = Field::from_fn(g, alg, |x| {
            let s = 1.0 / ((x - 20.0) * 0.5).cosh();
            CdNumber::real_scalar(1, 3.0 * s * s)
        });
        let run = |dt: f64| {
            let spec = spec_for(Equation::CdKdv, CdNumber::zero(1), &g, dt, 60.0 * dt, 1);
            let record = simulate(&spec, &f).unwrap();
            residual_norm(&spec, &record.snapshots, &record.times).unwrap()
        };
        let coarse = run(4e-4);
        let fine = run(2e-4);
        let ratio = coarse / fine;
        assert!(
            (3.0..5.5).contains(&ratio),
            "expected ~4x residual drop, got {ratio}"
        );
    }

    #[test]
    fn blow_up_reports_last_valid_time() {
        let g = grid(64, 10.0);
        let alg = Algebra::shared(0).unwrap();
        // far beyond any reasonable amplitude: the quadratic term explodes
        let f = Field::from_fn(g, alg, |x| {
            CdNumber::real_scalar(1, 1e8 * (2.0 * PI * x / 10.0).sin())
        });
        let spec = spec_for(Equation::CdKdv, CdNumber::zero(1), &g, 1e-4, 1.0, 1);
        match simulate(&spec, &f) {
            Err(SolverError::BlowUp {
                t_last_valid,
                record,
            }) => {
                assert!(t_last_valid >= 0.0);
                assert!(!record.times.is_empty());
            }
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn mkdv_is_the_large_epsilon_limit() {
        // rescaling r = rhat / eps in the deformed equation and letting
        // eps grow kills the quadratic term and leaves the modified flow
        let g = grid(64, 20.0);
        let alg = oct();
        let mut v = CdNumber::zero(8);
        v.coeffs_mut()[3] = 0.4;
        let rhat = Field::from_fn(g, alg, |x| {
            let th = 2.0 * PI * x / 20.0;
            CdNumber::from_coeffs(vec![
                th.sin(),
                0.5 * th.cos(),
                0.0,
                0.3 * (2.0 * th).sin(),
                0.0,
                0.0,
                -0.2 * th.cos(),
                0.0,
            ])
        });
        let eps = 1e6;
        let gardner = EvolutionSpec::for_analysis(Equation::Gardner, v.clone(), eps, false);
        let mkdv = EvolutionSpec::for_analysis(Equation::Mkdv, v, 0.0, false);
        let scaled = rhs(&gardner, &rhat.scaled(1.0 / eps)).unwrap().scaled(eps);
        let direct = rhs(&mkdv, &rhat).unwrap();
        let diff = scaled.sub(&direct).max_norm();
        assert!(diff < 1e-5, "limit deviation {diff}");
    }

    #[test]
    fn mkdv_conserves_the_real_charge() {
        let g = grid(64, 20.0);
        let alg = oct();
        let r0 = Field::from_fn(g, alg, |x| {
            let th = 2.0 * PI * x / 20.0;
            let mut r = CdNumber::real_scalar(8, 0.8 * th.sin() + 0.3);
            r.coeffs_mut()[2] = 0.5 * th.cos();
            r.coeffs_mut()[5] = 0.2 * (2.0 * th).sin();
            r
        });
        let spec = spec_for(Equation::Mkdv, CdNumber::zero(8), &g, 1e-3, 0.3, 50);
        let record = simulate(&spec, &r0).unwrap();
        let h = g.spacing();
        let charge = |f: &Field| h * f.component(0).iter().sum::<f64>();
        let c0 = charge(&record.snapshots[0]);
        for snap in &record.snapshots {
            assert!((charge(snap) - c0).abs() < 1e-8);
        }
    }

    #[test]
    fn dealias_filter_is_inert_on_resolved_runs() {
        // smooth, well-resolved data: the 2/3 filter changes nothing
        // observable in a short run
        let g = grid(128, 40.0);
        let alg = Algebra::shared(1).unwrap();
        let f = Field::from_fn(g, alg, |x| {
            let s = 1.0 / ((x - 20.0) * 0.5).cosh();
            CdNumber::from_coeffs(vec![2.0 * s * s, 0.5 * s * s])
        });
        let plain = EvolutionSpec::new(
            Equation::CdKdv,
            CdNumber::zero(2),
            0.0,
            1e-3,
            0.1,
            100,
            false,
            &g,
        )
        .unwrap();
        let filtered = EvolutionSpec::new(
            Equation::CdKdv,
            CdNumber::zero(2),
            0.0,
            1e-3,
            0.1,
            100,
            true,
            &g,
        )
        .unwrap();
        let a = simulate(&plain, &f).unwrap();
        let b = simulate(&filtered, &f).unwrap();
        let diff = a
            .snapshots
            .last()
            .unwrap()
            .sub(b.snapshots.last().unwrap())
            .max_norm();
        // only the ~1e-9 spectral tail above the cutoff is touched
        assert!(diff < 1e-6, "dealiasing changed a resolved run by {diff}");
        // and the filter really removes the top third of the spectrum
        let spiky = Field::from_fn(g, Algebra::shared(1).unwrap(), |x| {
            CdNumber::from_coeffs(vec![(2.0 * PI * 60.0 * x / 40.0).sin(), 0.0])
        });
        assert!(dealias_filter(&spiky).max_norm() < 1e-12);
    }

    #[test]
    fn gardner_with_zero_epsilon_matches_cdkdv() {
        let g = grid(64, 20.0);
        let alg = oct();
        let mut v = CdNumber::zero(8);
        v.coeffs_mut()[1] = 1.0;
        let f = Field::from_fn(g, alg, |x| {
            let mut u = CdNumber::zero(8);
            u.coeffs_mut()[0] = (2.0 * PI * x / 20.0).sin();
            u.coeffs_mut()[1] = 0.3 * (4.0 * PI * x / 20.0).cos();
            u
        });
        let kdv = EvolutionSpec::new(Equation::CdKdv, v.clone(), 0.0, 1e-4, 1.0, 1, false, &g)
            .unwrap();
        let gardner =
            EvolutionSpec::new(Equation::Gardner, v, 0.0, 1e-4, 1.0, 1, false, &g).unwrap();
        let a = rhs(&kdv, &f).unwrap();
        let b = rhs(&gardner, &f).unwrap();
        assert!(a.sub(&b).max_norm() == 0.0);
    }
}
