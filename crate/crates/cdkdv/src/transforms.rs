//! Backlund and Gardner structure: residual verifiers for the coupled
//! potential equations, the Gardner map and its inversion series, the
//! conserved-quantity hierarchy, the Lax compatibility check and the
//! Galileo boost.
//!
//! Verifiers are deliberately independent of the integrator internals:
//! time derivatives come either from analytic closed forms (soliton module)
//! or from centered differences of stored snapshots.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::algebra::{Algebra, CdNumber};
use crate::solver::{
    spatial_derivative_unchecked, EvolutionSpec, Equation, Field, RunRecord, SolverError,
};

/// Inversion-series ceiling.
pub const MAX_SERIES_ORDER: usize = 8;

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("series order {0} exceeds the ceiling of {MAX_SERIES_ORDER}")]
    OrderTooLarge(usize),
    #[error("the Lax pair is only formulated through the octonions (level <= 3), got level {0}")]
    LaxLevel(u32),
    #[error("potential samples have mismatched lengths")]
    SampleMismatch,
    #[error(transparent)]
    Algebra(#[from] crate::algebra::AlgebraError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// The first three conserved quantities of the hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConservedReport {
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
}

/// Periodic quadrature: the plain Riemann sum is spectrally accurate here.
fn quad(grid_spacing: f64, values: impl Iterator<Item = f64>) -> f64 {
    grid_spacing * values.sum::<f64>()
}

/// `H1 = int Re(u)`, `H2 = int ((Re u)^2 - |Im u|^2)`,
/// `H3 = int ((Re u)^3/3 - (Re u_x)^2 + |Im u_x|^2 - Re(u) |Im u|^2)`.
pub fn conserved(u: &Field) -> ConservedReport {
    let h = u.grid().spacing();
    let n = u.grid().points();
    let ux = spatial_derivative_unchecked(u, 1);
    let dim = u.dim();
    let mut h1 = 0.0;
    let mut h2 = 0.0;
    let mut h3 = 0.0;
    for ix in 0..n {
        let re = u.component(0)[ix];
        let re_x = ux.component(0)[ix];
        let mut im_sq = 0.0;
        let mut imx_sq = 0.0;
        for c in 1..dim {
            im_sq += u.component(c)[ix] * u.component(c)[ix];
            imx_sq += ux.component(c)[ix] * ux.component(c)[ix];
        }
        h1 += re;
        h2 += re * re - im_sq;
        h3 += re * re * re / 3.0 - re_x * re_x + imx_sq - re * im_sq;
    }
    ConservedReport {
        h1: h * h1,
        h2: h * h2,
        h3: h * h3,
    }
}

/// `int Re(r) dx`; conserved along Gardner trajectories.
pub fn gardner_real_charge(r: &Field) -> f64 {
    quad(r.grid().spacing(), r.component(0).iter().copied())
}

/// Componentwise integral of the imaginary part; conserved when v = 0.
pub fn imag_charge(f: &Field) -> CdNumber {
    let h = f.grid().spacing();
    let mut out = vec![0.0; f.dim()];
    for (c, slot) in out.iter_mut().enumerate().skip(1) {
        *slot = quad(h, f.component(c).iter().copied());
    }
    CdNumber::from_coeffs(out)
}

fn gardner_map(r: &Field, rx: &Field, sq: &Field, epsilon: f64) -> Field {
    r.axpy(epsilon, rx).axpy(-epsilon * epsilon / 6.0, sq)
}

/// The Gardner map `u = r + eps r_x - eps^2/6 r^2` and its mirror
/// `u' = r - eps r_x - eps^2/6 r^2` (literally the same formula at -eps,
/// so the epsilon reflection symmetry holds bitwise).
pub fn gardner_forward(r: &Field, epsilon: f64) -> (Field, Field) {
    let rx = spatial_derivative_unchecked(r, 1);
    let sq = r.pointwise_mul(r);
    (
        gardner_map(r, &rx, &sq, epsilon),
        gardner_map(r, &rx, &sq, -epsilon),
    )
}

/// Coefficients of the formal inversion `r = sum_m r_m eps^m` of the
/// Gardner map, from the explicit recursion
/// `r_0 = u`, `r_m = -(r_{m-1})_x + 1/6 sum_{a+b=m-2} r_a r_b`.
pub fn gardner_inverse_coeffs(u: &Field, order: usize) -> Result<Vec<Field>, TransformError> {
    if order > MAX_SERIES_ORDER {
        return Err(TransformError::OrderTooLarge(order));
    }
    let mut coeffs: Vec<Field> = Vec::with_capacity(order + 1);
    coeffs.push(u.clone());
    for m in 1..=order {
        let mut next = spatial_derivative_unchecked(&coeffs[m - 1], 1).scaled(-1.0);
        if m >= 2 {
            let mut sq = Field::zero(u.grid(), u.algebra().clone());
            for a in 0..=(m - 2) {
                sq = sq.add(&coeffs[a].pointwise_mul(&coeffs[m - 2 - a]));
            }
            next = next.axpy(1.0 / 6.0, &sq);
        }
        coeffs.push(next);
    }
    Ok(coeffs)
}

/// Truncated inversion series evaluated at a concrete epsilon.
pub fn gardner_inverse_series(
    u: &Field,
    epsilon: f64,
    order: usize,
) -> Result<Field, TransformError> {
    let coeffs = gardner_inverse_coeffs(u, order)?;
    let mut acc = Field::zero(u.grid(), u.algebra().clone());
    for m in (0..=order).rev() {
        // Horner over the field coefficients
        acc = acc.scaled(epsilon).add(&coeffs[m]);
    }
    Ok(acc)
}

/// Raw conserved-quantity generator: `int Re(r_m) dx` per epsilon power,
/// emitted without simplification.
pub fn gardner_charges(u: &Field, order: usize) -> Result<Vec<f64>, TransformError> {
    Ok(gardner_inverse_coeffs(u, order)?
        .iter()
        .map(gardner_real_charge)
        .collect())
}

/// Point samples of a potential with every derivative the verifiers need.
#[derive(Debug, Clone)]
pub struct PotentialSamples {
    pub w: Vec<CdNumber>,
    pub w_x: Vec<CdNumber>,
    pub w_xx: Vec<CdNumber>,
    pub w_xxx: Vec<CdNumber>,
    pub w_t: Vec<CdNumber>,
}

impl PotentialSamples {
    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn zero(len: usize, dim: usize) -> Self {
        let z = vec![CdNumber::zero(dim); len];
        Self {
            w: z.clone(),
            w_x: z.clone(),
            w_xx: z.clone(),
            w_xxx: z.clone(),
            w_t: z,
        }
    }

    /// Spatial derivatives spectrally from the middle snapshot, time
    /// derivative by the centered difference of the outer two.
    pub fn from_snapshots(
        prev: &Field,
        mid: &Field,
        next: &Field,
        dt: f64,
    ) -> Result<Self, TransformError> {
        if prev.grid() != mid.grid() || next.grid() != mid.grid() {
            return Err(TransformError::Solver(SolverError::GridMismatch));
        }
        let n = mid.grid().points();
        let wx = spatial_derivative_unchecked(mid, 1);
        let wxx = spatial_derivative_unchecked(mid, 2);
        let wxxx = spatial_derivative_unchecked(mid, 3);
        let wt = next.sub(prev).scaled(1.0 / (2.0 * dt));
        Ok(Self {
            w: (0..n).map(|i| mid.sample(i)).collect(),
            w_x: (0..n).map(|i| wx.sample(i)).collect(),
            w_xx: (0..n).map(|i| wxx.sample(i)).collect(),
            w_xxx: (0..n).map(|i| wxxx.sample(i)).collect(),
            w_t: (0..n).map(|i| wt.sample(i)).collect(),
        })
    }
}

/// Two potentials tied by the first-order coupling parameter eta.
#[derive(Debug, Clone)]
pub struct BacklundPair {
    pub algebra: Arc<Algebra>,
    pub a: PotentialSamples,
    pub b: PotentialSamples,
    pub eta: f64,
}

impl BacklundPair {
    /// Smallest `|Re(w - w')|` over the samples; the difference-cancellation
    /// argument needs this bounded away from zero.
    pub fn min_real_gap(&self) -> f64 {
        self.a
            .w
            .iter()
            .zip(&self.b.w)
            .map(|(wa, wb)| (wa.real_part() - wb.real_part()).abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// Pointwise residual fields of the two coupled potential equations:
    ///
    /// ```text
    /// R7 = w_x + w'_x - eta + 1/12 (w - w')^2
    /// R8 = w_t + w'_t - 1/12 [(w - w')^2]_xx + 1/2 w_x^2 + 1/2 w'_x^2 + [v, w + w']
    /// ```
    pub fn residual_fields(
        &self,
        v: &CdNumber,
    ) -> Result<(Vec<CdNumber>, Vec<CdNumber>), TransformError> {
        if self.a.len() != self.b.len() {
            return Err(TransformError::SampleMismatch);
        }
        let alg = &self.algebra;
        let dim = alg.dim();
        let eta = CdNumber::real_scalar(dim, self.eta);
        let mut r7 = Vec::with_capacity(self.a.len());
        let mut r8 = Vec::with_capacity(self.a.len());
        for i in 0..self.a.len() {
            let d = self.a.w[i].sub(&self.b.w[i]);
            let d_x = self.a.w_x[i].sub(&self.b.w_x[i]);
            let d_xx = self.a.w_xx[i].sub(&self.b.w_xx[i]);
            let d_sq = alg.multiply(&d, &d)?;
            r7.push(
                self.a.w_x[i]
                    .add(&self.b.w_x[i])
                    .sub(&eta)
                    .add(&d_sq.scaled(1.0 / 12.0)),
            );
            // (D^2)_xx = D_xx D + 2 D_x D_x + D D_xx
            let dsq_xx = alg
                .multiply(&d_xx, &d)?
                .add(&alg.multiply(&d_x, &d_x)?.scaled(2.0))
                .add(&alg.multiply(&d, &d_xx)?);
            let wx_sq = alg.multiply(&self.a.w_x[i], &self.a.w_x[i])?;
            let wpx_sq = alg.multiply(&self.b.w_x[i], &self.b.w_x[i])?;
            let sum_w = self.a.w[i].add(&self.b.w[i]);
            let bracket = alg.commutator(v, &sum_w)?;
            r8.push(
                self.a.w_t[i]
                    .add(&self.b.w_t[i])
                    .sub(&dsq_xx.scaled(1.0 / 12.0))
                    .add(&wx_sq.scaled(0.5))
                    .add(&wpx_sq.scaled(0.5))
                    .add(&bracket),
            );
        }
        Ok((r7, r8))
    }

    /// Max-norms of the two residual fields.
    pub fn residuals(&self, v: &CdNumber) -> Result<(f64, f64), TransformError> {
        let (r7, r8) = self.residual_fields(v)?;
        let max = |v: &[CdNumber]| v.iter().map(CdNumber::norm).fold(0.0, f64::max);
        Ok((max(&r7), max(&r8)))
    }
}

/// Pairs the analytic soliton potential `w1` with the zero potential under
/// its own coupling parameter `eta = 3 lambda^2`.
pub fn backlund_pair_from_soliton(
    spec: &crate::solitons::SolitonSpec,
    xs: &[f64],
    t: f64,
) -> Result<BacklundPair, crate::solitons::SolitonError> {
    let samples = spec.potential_samples(xs, t)?;
    Ok(BacklundPair {
        algebra: spec.algebra().clone(),
        b: PotentialSamples::zero(xs.len(), spec.algebra().dim()),
        a: samples,
        eta: spec.eta(),
    })
}

/// `Q(w) = w_t + w_xxx + 1/2 (w_x)^2 + [v, w]`, the potential form of the
/// evolution equation, evaluated pointwise.
pub fn q_functional(
    alg: &Algebra,
    p: &PotentialSamples,
    v: &CdNumber,
) -> Result<Vec<CdNumber>, TransformError> {
    let mut out = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let wx_sq = alg.multiply(&p.w_x[i], &p.w_x[i])?;
        let bracket = alg.commutator(v, &p.w[i])?;
        out.push(
            p.w_t[i]
                .add(&p.w_xxx[i])
                .add(&wx_sq.scaled(0.5))
                .add(&bracket),
        );
    }
    Ok(out)
}

/// `L psi = -psi_xx - 1/6 u psi` with left-multiplying coefficients.
fn apply_l(u: &Field, psi: &Field) -> Field {
    let psi_xx = spatial_derivative_unchecked(psi, 2);
    psi_xx.scaled(-1.0).axpy(-1.0 / 6.0, &u.pointwise_mul(psi))
}

/// `P psi = 4 psi_xxx + u psi_x + 1/2 u_x psi + 6 v psi` with
/// left-multiplying coefficients.
fn apply_p(u: &Field, ux: &Field, v: &CdNumber, psi: &Field) -> Field {
    let psi_x = spatial_derivative_unchecked(psi, 1);
    let psi_xxx = spatial_derivative_unchecked(psi, 3);
    let mut out = psi_xxx.scaled(4.0);
    out = out.add(&u.pointwise_mul(&psi_x));
    out = out.axpy(0.5, &ux.pointwise_mul(psi));
    if !v.is_zero() {
        out = out.axpy(6.0, &psi.mul_const_left(v));
    }
    out
}

/// Compatibility residual `max | (d/dt L) psi - (L(P psi) - P(L psi)) |`
/// with the time derivative from a centered snapshot difference.
/// The operator pair is only formulated through the octonions.
pub fn lax_residual(
    u_prev: &Field,
    u_mid: &Field,
    u_next: &Field,
    dt: f64,
    v: &CdNumber,
    psi: &Field,
) -> Result<f64, TransformError> {
    let level = u_mid.algebra().level();
    if level > 3 {
        return Err(TransformError::LaxLevel(level));
    }
    if u_prev.grid() != u_mid.grid() || u_next.grid() != u_mid.grid() || psi.grid() != u_mid.grid()
    {
        return Err(TransformError::Solver(SolverError::GridMismatch));
    }
    let u_t = u_next.sub(u_prev).scaled(1.0 / (2.0 * dt));
    // L_t psi = -1/6 u_t psi
    let lt_psi = u_t.pointwise_mul(psi).scaled(-1.0 / 6.0);
    let ux = spatial_derivative_unchecked(u_mid, 1);
    let p_psi = apply_p(u_mid, &ux, v, psi);
    let l_psi = apply_l(u_mid, psi);
    let commutator = apply_l(u_mid, &p_psi).sub(&apply_p(u_mid, &ux, v, &l_psi));
    Ok(lt_psi.sub(&commutator).max_norm())
}

/// Galileo boost of a snapshot taken at time `t`: translate by `c t`
/// (spectral phase shift, exact for resolved modes) and lift by `c`.
/// The external field rides along unchanged.
pub fn galileo_boost(u: &Field, v: &CdNumber, c: f64, t: f64) -> (Field, CdNumber) {
    let shift = c * t;
    let lift = CdNumber::real_scalar(u.dim(), c);
    if shift == 0.0 {
        return (u.add_constant(&lift), v.clone());
    }
    let grid = u.grid();
    let mut shifted = Field::zero(grid, u.algebra().clone());
    for comp in 0..u.dim() {
        let moved = crate::solver::spectral_shift(u.component(comp), &grid, shift);
        shifted.component_mut(comp).copy_from_slice(&moved);
    }
    (shifted.add_constant(&lift), v.clone())
}

/// Maps every snapshot of a Gardner trajectory through the Gardner
/// transformation and measures the worst evolution residual of the mapped
/// trajectory under the cdkdv equation (centered time differences).
pub fn gardner_consistency(
    record: &RunRecord,
    epsilon: f64,
    v: &CdNumber,
    dealias: bool,
) -> Result<f64, TransformError> {
    if record.snapshots.len() < 3 {
        return Err(TransformError::Solver(SolverError::InsufficientSnapshots(
            record.snapshots.len(),
        )));
    }
    let mapped: Vec<Field> = record
        .snapshots
        .iter()
        .map(|r| gardner_forward(r, epsilon).0)
        .collect();
    let spec = EvolutionSpec::for_analysis(Equation::CdKdv, v.clone(), 0.0, dealias);
    Ok(crate::solver::residual_norm(&spec, &mapped, &record.times)?)
}
