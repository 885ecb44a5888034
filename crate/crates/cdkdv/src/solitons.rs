//! Closed-form one- and two-soliton solutions with analytic derivatives.
//!
//! The single soliton is built from the wave `f = exp(-lambda x + lambda^3 t)`
//! and a constant algebra element `alpha` off the closed negative real ray:
//!
//! ```text
//! w1 = 6 lambda (alpha + f)^-1 (alpha - f),    u1 = w1_x = 12 lambda^2 alpha f (alpha + f)^-2
//! ```
//!
//! The two-soliton comes from the nonlinear superposition of two such
//! potentials, `w = 12 (eta_a - eta_b) (w_a - w_b)^-1` with both
//! constituents in the same orientation as `w1` and `eta = 3 lambda^2`.
//! (Deriving the superposition from the first-order coupling relation fixes
//! the orientation: flipping the constituents to `(alpha + f)^-1 (f - alpha)`
//! negates the superposed potential, which then fails the evolution
//! equation, as direct evaluation confirms.)
//!
//! Derivatives are exact: every expression is evaluated in truncated Taylor
//! jets (x-orders through 4 plus one t-order), with inversion done through
//! the pointwise identity `F^-1 = conj(F) / |F|^2`, which holds in every
//! Cayley-Dickson algebra and sidesteps ordering ambiguity. The symmetrized
//! derivative rule `(F^-1)_x = -1/2 (F_x F^-2 + F^-2 F_x)` is kept alongside
//! for cross-checking: it agrees with the exact derivative whenever the
//! imaginary parts involved are parallel (one commutative plane), and
//! measurably disagrees otherwise.

use std::sync::Arc;

use thiserror::Error;

use crate::algebra::{Algebra, CdNumber};
use crate::solver::{Field, Grid};
use crate::transforms::PotentialSamples;

#[derive(Debug, Error, PartialEq)]
pub enum SolitonError {
    #[error("lambda must be positive and finite, got {0}")]
    BadLambda(f64),
    #[error("alpha must avoid the closed negative real ray")]
    AlphaOnNegativeRealRay,
    #[error("alpha has dimension {got}, the algebra needs {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("two-soliton parameters need distinct lambdas")]
    EqualLambdas,
    #[error("evaluation hit a pole near x = {x}, t = {t}")]
    Pole { x: f64, t: f64 },
    #[error("the two potentials coincide at x = {x}, t = {t}")]
    CoincidencePole { x: f64, t: f64 },
}

/// x-derivative orders carried by a jet (0..=4 usable, one slot of slack).
const JET_X: usize = 6;
/// t-derivative orders carried by a jet (value and first derivative).
const JET_T: usize = 2;

const BINOM: [[f64; JET_X]; JET_X] = {
    let mut b = [[0.0; JET_X]; JET_X];
    let mut i = 0;
    while i < JET_X {
        b[i][0] = 1.0;
        let mut j = 1;
        while j <= i {
            b[i][j] = b[i - 1][j - 1] + if j < i { b[i - 1][j] } else { 0.0 };
            j += 1;
        }
        i += 1;
    }
    b
};

/// Truncated Taylor jet of an algebra-valued function of (x, t):
/// entry (i, j) holds the mixed derivative d^i/dx^i d^j/dt^j.
#[derive(Debug, Clone)]
pub(crate) struct CdJet {
    alg: Arc<Algebra>,
    valid_x: usize,
    d: Vec<CdNumber>,
}

impl CdJet {
    fn idx(i: usize, j: usize) -> usize {
        i * JET_T + j
    }

    pub fn entry(&self, i: usize, j: usize) -> &CdNumber {
        debug_assert!(i < self.valid_x && j < JET_T);
        &self.d[Self::idx(i, j)]
    }

    pub fn value(&self) -> &CdNumber {
        self.entry(0, 0)
    }

    fn zero_like(alg: &Arc<Algebra>, valid_x: usize) -> Self {
        Self {
            alg: alg.clone(),
            valid_x,
            d: vec![CdNumber::zero(alg.dim()); JET_X * JET_T],
        }
    }

    pub fn constant(alg: &Arc<Algebra>, value: CdNumber) -> Self {
        let mut jet = Self::zero_like(alg, JET_X);
        jet.d[Self::idx(0, 0)] = value;
        jet
    }

    /// Jet of the wave `f = exp(-lambda x + lambda^3 t)` (real scalar).
    pub fn wave(alg: &Arc<Algebra>, lambda: f64, x: f64, t: f64) -> Self {
        let f = (-lambda * x + lambda.powi(3) * t).exp();
        let mut jet = Self::zero_like(alg, JET_X);
        for i in 0..JET_X {
            for j in 0..JET_T {
                let factor = (-lambda).powi(i as i32) * lambda.powi(3 * j as i32);
                jet.d[Self::idx(i, j)] = CdNumber::real_scalar(alg.dim(), factor * f);
            }
        }
        jet
    }

    pub fn add(&self, other: &CdJet) -> CdJet {
        let valid = self.valid_x.min(other.valid_x);
        let mut out = Self::zero_like(&self.alg, valid);
        for k in 0..JET_X * JET_T {
            out.d[k] = self.d[k].add(&other.d[k]);
        }
        out
    }

    pub fn sub(&self, other: &CdJet) -> CdJet {
        let valid = self.valid_x.min(other.valid_x);
        let mut out = Self::zero_like(&self.alg, valid);
        for k in 0..JET_X * JET_T {
            out.d[k] = self.d[k].sub(&other.d[k]);
        }
        out
    }

    pub fn scaled(&self, s: f64) -> CdJet {
        let mut out = self.clone();
        for v in &mut out.d {
            *v = v.scaled(s);
        }
        out
    }

    pub fn conjugate(&self) -> CdJet {
        let mut out = self.clone();
        for v in &mut out.d {
            *v = v.conjugate();
        }
        out
    }

    /// Leibniz product; the left/right order of the factors is preserved
    /// entrywise, so nothing commutes that should not.
    pub fn mul(&self, other: &CdJet) -> CdJet {
        let valid = self.valid_x.min(other.valid_x);
        let mut out = Self::zero_like(&self.alg, valid);
        for i in 0..valid {
            for j in 0..JET_T {
                let mut acc = CdNumber::zero(self.alg.dim());
                for p in 0..=i {
                    // the t-binomial C(j, q) is 1 for every order we carry
                    for q in 0..=j {
                        let term = self
                            .alg
                            .multiply(&self.d[Self::idx(p, q)], &other.d[Self::idx(i - p, j - q)])
                            .expect("jet dims agree");
                        acc = acc.add(&term.scaled(BINOM[i][p]));
                    }
                }
                out.d[Self::idx(i, j)] = acc;
            }
        }
        out
    }

    /// Scalar-jet division: every derivative order of `self / n` solved
    /// triangularly from the Leibniz expansion of `self = q * n`.
    fn div_scalar(&self, n: &ScalarJet) -> CdJet {
        let mut out = Self::zero_like(&self.alg, self.valid_x.min(n.valid_x));
        let n00 = n.d[Self::idx(0, 0)];
        for i in 0..out.valid_x {
            for j in 0..JET_T {
                let mut acc = self.d[Self::idx(i, j)].clone();
                for p in 0..=i {
                    for q in 0..=j {
                        if p == i && q == j {
                            continue;
                        }
                        let w = BINOM[i][p];
                        let term = out.d[Self::idx(p, q)]
                            .scaled(w * n.d[Self::idx(i - p, j - q)]);
                        acc = acc.sub(&term);
                    }
                }
                out.d[Self::idx(i, j)] = acc.scaled(1.0 / n00);
            }
        }
        out
    }

    /// Real square-norm jet, taken from the scalar part of `F conj(F)`.
    fn norm_sq_jet(&self) -> ScalarJet {
        let prod = self.mul(&self.conjugate());
        let mut out = ScalarJet {
            valid_x: prod.valid_x,
            d: [0.0; JET_X * JET_T],
        };
        for k in 0..JET_X * JET_T {
            out.d[k] = prod.d[k].real_part();
        }
        out
    }

    /// Jet of the pointwise inverse via `F^-1 = conj(F) / |F|^2`.
    pub fn inverse(&self) -> CdJet {
        self.conjugate().div_scalar(&self.norm_sq_jet())
    }

    /// Reindexes so the value becomes the x-derivative: loses one valid
    /// x-order.
    pub fn x_shift(&self) -> CdJet {
        let mut out = Self::zero_like(&self.alg, self.valid_x.saturating_sub(1));
        for i in 0..out.valid_x {
            for j in 0..JET_T {
                out.d[Self::idx(i, j)] = self.d[Self::idx(i + 1, j)].clone();
            }
        }
        out
    }
}

/// Scalar (real-valued) jet used for the norm denominator.
struct ScalarJet {
    valid_x: usize,
    d: [f64; JET_X * JET_T],
}

/// Derivative bundle of a solution at one sample point.
#[derive(Debug, Clone)]
pub struct SolutionJet {
    pub u: CdNumber,
    pub u_x: CdNumber,
    pub u_xx: CdNumber,
    pub u_xxx: CdNumber,
    pub u_t: CdNumber,
}

impl SolutionJet {
    /// Extracts u = w_x and its derivatives from a potential jet.
    fn from_potential(w: &CdJet) -> Self {
        Self {
            u: w.entry(1, 0).clone(),
            u_x: w.entry(2, 0).clone(),
            u_xx: w.entry(3, 0).clone(),
            u_xxx: w.entry(4, 0).clone(),
            u_t: w.entry(1, 1).clone(),
        }
    }

    /// Extracts the bundle from a jet that already represents u itself.
    fn from_solution(u: &CdJet) -> Self {
        Self {
            u: u.entry(0, 0).clone(),
            u_x: u.entry(1, 0).clone(),
            u_xx: u.entry(2, 0).clone(),
            u_xxx: u.entry(3, 0).clone(),
            u_t: u.entry(0, 1).clone(),
        }
    }
}

fn validate_lambda(lambda: f64) -> Result<(), SolitonError> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(SolitonError::BadLambda(lambda));
    }
    Ok(())
}

/// One-soliton parameters: speed `lambda^2`, amplitude scale `3 lambda^2`,
/// Backlund parameter `eta = 3 lambda^2`.
#[derive(Debug, Clone)]
pub struct SolitonSpec {
    algebra: Arc<Algebra>,
    lambda: f64,
    alpha: CdNumber,
}

impl SolitonSpec {
    pub fn new(algebra: Arc<Algebra>, lambda: f64, alpha: CdNumber) -> Result<Self, SolitonError> {
        validate_lambda(lambda)?;
        if alpha.dim() != algebra.dim() {
            return Err(SolitonError::DimensionMismatch {
                expected: algebra.dim(),
                got: alpha.dim(),
            });
        }
        if alpha.imag_norm_sq() == 0.0 && alpha.real_part() <= 0.0 {
            return Err(SolitonError::AlphaOnNegativeRealRay);
        }
        Ok(Self {
            algebra,
            lambda,
            alpha,
        })
    }

    /// The aligned-imaginary-part family: `alpha = alpha_0 + gamma Im(v)`,
    /// for which the rotation term `[v, u]` vanishes identically.
    pub fn aligned_with(
        algebra: Arc<Algebra>,
        lambda: f64,
        alpha0: f64,
        gamma: f64,
        v: &CdNumber,
    ) -> Result<Self, SolitonError> {
        let mut alpha = v.imag_part().scaled(gamma);
        alpha.coeffs_mut()[0] = alpha0;
        Self::new(algebra, lambda, alpha)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn alpha(&self) -> &CdNumber {
        &self.alpha
    }

    pub fn algebra(&self) -> &Arc<Algebra> {
        &self.algebra
    }

    pub fn eta(&self) -> f64 {
        3.0 * self.lambda * self.lambda
    }

    /// Rescales `|alpha|` so the hump peaks at `x0` when t = 0 (scaling
    /// alpha by a positive real only translates the profile).
    pub fn with_peak_at(mut self, x0: f64) -> Self {
        let target = (-self.lambda * x0).exp();
        let scale = target / self.alpha.norm();
        self.alpha = self.alpha.scaled(scale);
        self
    }

    fn denominator_jet(&self, x: f64, t: f64) -> Result<CdJet, SolitonError> {
        let f = CdJet::wave(&self.algebra, self.lambda, x, t);
        let alpha = CdJet::constant(&self.algebra, self.alpha.clone());
        let den = alpha.add(&f);
        let scale = self.alpha.norm_sq() + f.value().norm_sq();
        if den.value().norm_sq() < 1e-24 * scale {
            return Err(SolitonError::Pole { x, t });
        }
        Ok(den)
    }

    /// Jet of the regular potential `w1 = 6 lambda (alpha + f)^-1 (alpha - f)`.
    pub(crate) fn potential_jet(&self, x: f64, t: f64) -> Result<CdJet, SolitonError> {
        let f = CdJet::wave(&self.algebra, self.lambda, x, t);
        let alpha = CdJet::constant(&self.algebra, self.alpha.clone());
        let den = self.denominator_jet(x, t)?;
        Ok(den
            .inverse()
            .mul(&alpha.sub(&f))
            .scaled(6.0 * self.lambda))
    }

    /// Jet of the mirrored potential `w2` (alpha -> -alpha).
    pub(crate) fn mirrored_potential_jet(&self, x: f64, t: f64) -> Result<CdJet, SolitonError> {
        let f = CdJet::wave(&self.algebra, self.lambda, x, t);
        let alpha = CdJet::constant(&self.algebra, self.alpha.neg());
        let den = alpha.add(&f);
        let scale = self.alpha.norm_sq() + f.value().norm_sq();
        if den.value().norm_sq() < 1e-24 * scale {
            return Err(SolitonError::Pole { x, t });
        }
        Ok(den
            .inverse()
            .mul(&alpha.sub(&f))
            .scaled(6.0 * self.lambda))
    }

    /// Full derivative bundle of `u = w1_x` at a sample point.
    pub fn solution_jet(&self, x: f64, t: f64) -> Result<SolutionJet, SolitonError> {
        Ok(SolutionJet::from_potential(&self.potential_jet(x, t)?))
    }

    /// Value of the soliton profile.
    pub fn u(&self, x: f64, t: f64) -> Result<CdNumber, SolitonError> {
        Ok(self.solution_jet(x, t)?.u)
    }

    /// The closed form `12 lambda^2 (alpha f) (alpha + f)^-2`, evaluated
    /// with plain algebra operations (no jets); used to cross-check the
    /// derivative engine.
    pub fn u_closed_form(&self, x: f64, t: f64) -> Result<CdNumber, SolitonError> {
        let alg = &self.algebra;
        let fval = (-self.lambda * x + self.lambda.powi(3) * t).exp();
        let alpha_plus_f = {
            let mut a = self.alpha.clone();
            a.coeffs_mut()[0] += fval;
            a
        };
        if alpha_plus_f.norm_sq() < 1e-24 * (self.alpha.norm_sq() + fval * fval) {
            return Err(SolitonError::Pole { x, t });
        }
        let den_sq = alg.multiply(&alpha_plus_f, &alpha_plus_f).expect("dims");
        let inv = alg.inverse(&den_sq).expect("nonzero");
        let num = self.alpha.scaled(12.0 * self.lambda * self.lambda * fval);
        Ok(alg.multiply(&num, &inv).expect("dims"))
    }

    /// Samples the analytic potential and its derivatives along `xs`.
    pub fn potential_samples(&self, xs: &[f64], t: f64) -> Result<PotentialSamples, SolitonError> {
        self.sample_jets(xs, t, Self::potential_jet)
    }

    /// Same for the mirrored potential `w2`.
    pub fn mirrored_potential_samples(
        &self,
        xs: &[f64],
        t: f64,
    ) -> Result<PotentialSamples, SolitonError> {
        self.sample_jets(xs, t, Self::mirrored_potential_jet)
    }

    fn sample_jets(
        &self,
        xs: &[f64],
        t: f64,
        jet: impl Fn(&Self, f64, f64) -> Result<CdJet, SolitonError>,
    ) -> Result<PotentialSamples, SolitonError> {
        let mut out = PotentialSamples::zero(xs.len(), self.algebra.dim());
        for (i, &x) in xs.iter().enumerate() {
            let w = jet(self, x, t)?;
            out.w[i] = w.entry(0, 0).clone();
            out.w_x[i] = w.entry(1, 0).clone();
            out.w_xx[i] = w.entry(2, 0).clone();
            out.w_xxx[i] = w.entry(3, 0).clone();
            out.w_t[i] = w.entry(0, 1).clone();
        }
        Ok(out)
    }
}

/// Superposed pair; `eta` values are fixed at `3 lambda^2` each.
#[derive(Debug, Clone)]
pub struct TwoSolitonSpec {
    algebra: Arc<Algebra>,
    lambda_a: f64,
    alpha: CdNumber,
    lambda_b: f64,
    beta: CdNumber,
}

impl TwoSolitonSpec {
    pub fn new(
        algebra: Arc<Algebra>,
        lambda_a: f64,
        alpha: CdNumber,
        lambda_b: f64,
        beta: CdNumber,
    ) -> Result<Self, SolitonError> {
        validate_lambda(lambda_a)?;
        validate_lambda(lambda_b)?;
        if lambda_a == lambda_b {
            return Err(SolitonError::EqualLambdas);
        }
        for p in [&alpha, &beta] {
            if p.dim() != algebra.dim() {
                return Err(SolitonError::DimensionMismatch {
                    expected: algebra.dim(),
                    got: p.dim(),
                });
            }
            if p.norm_sq() == 0.0 {
                return Err(SolitonError::AlphaOnNegativeRealRay);
            }
        }
        Ok(Self {
            algebra,
            lambda_a,
            alpha,
            lambda_b,
            beta,
        })
    }

    /// The six-parameter family compatible with a nonzero external field:
    /// both imaginary parts parallel to `Im(v)`, so `[v, u] = 0`.
    #[allow(clippy::too_many_arguments)]
    pub fn eq2_mode(
        algebra: Arc<Algebra>,
        lambda_a: f64,
        alpha0: f64,
        gamma1: f64,
        lambda_b: f64,
        beta0: f64,
        gamma2: f64,
        v: &CdNumber,
    ) -> Result<Self, SolitonError> {
        let dir = v.imag_part();
        let mut alpha = dir.scaled(gamma1);
        alpha.coeffs_mut()[0] = alpha0;
        let mut beta = dir.scaled(gamma2);
        beta.coeffs_mut()[0] = beta0;
        Self::new(algebra, lambda_a, alpha, lambda_b, beta)
    }

    pub fn algebra(&self) -> &Arc<Algebra> {
        &self.algebra
    }

    pub fn first(&self) -> (f64, &CdNumber) {
        (self.lambda_a, &self.alpha)
    }

    pub fn second(&self) -> (f64, &CdNumber) {
        (self.lambda_b, &self.beta)
    }

    pub fn delta_eta(&self) -> f64 {
        3.0 * (self.lambda_a * self.lambda_a - self.lambda_b * self.lambda_b)
    }

    /// Translates both constituents so their t = 0 peaks sit at the given
    /// positions.
    pub fn with_peaks_at(mut self, xa: f64, xb: f64) -> Self {
        let ta = (-self.lambda_a * xa).exp() / self.alpha.norm();
        let tb = (-self.lambda_b * xb).exp() / self.beta.norm();
        self.alpha = self.alpha.scaled(ta);
        self.beta = self.beta.scaled(tb);
        self
    }

    fn difference_jet(&self, x: f64, t: f64) -> Result<CdJet, SolitonError> {
        let sa = SolitonSpec {
            algebra: self.algebra.clone(),
            lambda: self.lambda_a,
            alpha: self.alpha.clone(),
        };
        let sb = SolitonSpec {
            algebra: self.algebra.clone(),
            lambda: self.lambda_b,
            alpha: self.beta.clone(),
        };
        let wa = sa.potential_jet(x, t)?;
        let wb = sb.potential_jet(x, t)?;
        let diff = wa.sub(&wb);
        let scale = 1.0 + wa.value().norm_sq() + wb.value().norm_sq();
        if diff.value().norm_sq() < 1e-24 * scale {
            return Err(SolitonError::CoincidencePole { x, t });
        }
        Ok(diff)
    }

    /// Jet of the superposed potential `w = 12 (eta_a - eta_b) F^-1`,
    /// `F = w_a - w_b`, inverted through `conj(F) / |F|^2`.
    pub(crate) fn potential_jet(&self, x: f64, t: f64) -> Result<CdJet, SolitonError> {
        Ok(self
            .difference_jet(x, t)?
            .inverse()
            .scaled(12.0 * self.delta_eta()))
    }

    /// Derivative bundle of `u = w_x` (exact differentiation of the
    /// inverse).
    pub fn solution_jet(&self, x: f64, t: f64) -> Result<SolutionJet, SolitonError> {
        Ok(SolutionJet::from_potential(&self.potential_jet(x, t)?))
    }

    /// Derivative bundle obtained from the printed symmetrized rule
    /// `u = -6 (eta_a - eta_b) (F_x F^-2 + F^-2 F_x)`; agrees with
    /// [`Self::solution_jet`] when the imaginary parts are parallel.
    pub fn solution_jet_symmetrized(&self, x: f64, t: f64) -> Result<SolutionJet, SolitonError> {
        let f = self.difference_jet(x, t)?;
        let fx = f.x_shift();
        let f2inv = f.mul(&f).inverse();
        let u = fx
            .mul(&f2inv)
            .add(&f2inv.mul(&fx))
            .scaled(-6.0 * self.delta_eta());
        Ok(SolutionJet::from_solution(&u))
    }

    /// Value of the superposed profile.
    ///
    /// Evaluation exactly on a pole of one constituent potential (the
    /// singular branch used with negative real parameters puts one on each
    /// crest) is rejected with [`SolitonError::Pole`] carrying the point;
    /// the superposition itself is regular there, so samplers should nudge
    /// such points rather than treat the error as fatal.
    pub fn u(&self, x: f64, t: f64) -> Result<CdNumber, SolitonError> {
        Ok(self.solution_jet(x, t)?.u)
    }
}

/// Residual of the stationary profile equation `u_xx + 1/2 u^2 - lambda^2 u`
/// over the samples, max-norm.
pub fn ode24_residual(
    spec: &SolitonSpec,
    samples: &[(f64, f64)],
) -> Result<f64, SolitonError> {
    let alg = spec.algebra().clone();
    let l2 = spec.lambda() * spec.lambda();
    let mut worst: f64 = 0.0;
    for &(x, t) in samples {
        let j = spec.solution_jet(x, t)?;
        let sq = alg.multiply(&j.u, &j.u).expect("dims");
        let res = j.u_xx.add(&sq.scaled(0.5)).sub(&j.u.scaled(l2));
        worst = worst.max(res.norm());
    }
    Ok(worst)
}

/// Max-norm evolution residual `u_t + u_xxx + 1/2 (u u_x + u_x u) [+ [v,u]]`
/// over precomputed derivative bundles.
pub fn evolution_residual(
    alg: &Algebra,
    jets: &[SolutionJet],
    v: Option<&CdNumber>,
) -> f64 {
    let mut worst: f64 = 0.0;
    for j in jets {
        let uux = alg.multiply(&j.u, &j.u_x).expect("dims");
        let uxu = alg.multiply(&j.u_x, &j.u).expect("dims");
        let mut res = j.u_t.add(&j.u_xxx).add(&uux.add(&uxu).scaled(0.5));
        if let Some(v) = v {
            res = res.add(&alg.commutator(v, &j.u).expect("dims"));
        }
        worst = worst.max(res.norm());
    }
    worst
}

/// Evolution residual of a one-soliton over sample points (v omitted:
/// the plain equation; v given: the full rotated equation).
pub fn kdv25_residual_one(
    spec: &SolitonSpec,
    samples: &[(f64, f64)],
    v: Option<&CdNumber>,
) -> Result<f64, SolitonError> {
    let jets = samples
        .iter()
        .map(|&(x, t)| spec.solution_jet(x, t))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(evolution_residual(spec.algebra(), &jets, v))
}

/// Evolution residual of a two-soliton over sample points.
pub fn kdv25_residual_two(
    spec: &TwoSolitonSpec,
    samples: &[(f64, f64)],
    v: Option<&CdNumber>,
) -> Result<f64, SolitonError> {
    let jets = samples
        .iter()
        .map(|&(x, t)| spec.solution_jet(x, t))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(evolution_residual(spec.algebra(), &jets, v))
}

/// Samples a soliton (or superposition) at t = 0 onto a solver grid.
/// Returns the field and the boundary magnitude; callers should warn when
/// the latter exceeds their decay budget (1e-12 for certification runs).
pub fn make_initial_field(
    u_of_x: impl Fn(f64) -> Result<CdNumber, SolitonError>,
    grid: Grid,
    algebra: Arc<Algebra>,
) -> Result<(Field, f64), SolitonError> {
    let n = grid.points();
    let mut field = Field::zero(grid, algebra);
    for ix in 0..n {
        let v = u_of_x(grid.x(ix))?;
        field.set_sample(ix, &v);
    }
    let boundary = field.sample(0).norm().max(field.sample(n - 1).norm());
    Ok((field, boundary))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oct() -> Arc<Algebra> {
        Algebra::shared(3).unwrap()
    }

    fn real_alpha(a: f64) -> CdNumber {
        CdNumber::real_scalar(8, a)
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        let alg = oct();
        assert_eq!(
            SolitonSpec::new(alg.clone(), -1.0, real_alpha(1.0)).unwrap_err(),
            SolitonError::BadLambda(-1.0)
        );
        assert_eq!(
            SolitonSpec::new(alg.clone(), 1.0, real_alpha(-2.0)).unwrap_err(),
            SolitonError::AlphaOnNegativeRealRay
        );
        assert_eq!(
            SolitonSpec::new(alg.clone(), 1.0, CdNumber::zero(8)).unwrap_err(),
            SolitonError::AlphaOnNegativeRealRay
        );
        assert_eq!(
            SolitonSpec::new(alg.clone(), 1.0, CdNumber::zero(4)).unwrap_err(),
            SolitonError::DimensionMismatch {
                expected: 8,
                got: 4
            }
        );
        assert!(matches!(
            TwoSolitonSpec::new(alg, 1.0, real_alpha(1.0), 1.0, real_alpha(2.0)),
            Err(SolitonError::EqualLambdas)
        ));
    }

    #[test]
    fn amplitude_at_the_crest() {
        // alpha = 1, lambda = 1, x = t = 0: u = 12 * 1 * 1 / (1+1)^2 = 3
        let spec = SolitonSpec::new(oct(), 1.0, real_alpha(1.0)).unwrap();
        let u = spec.u(0.0, 0.0).unwrap();
        assert!((u.real_part() - 3.0).abs() < 1e-14);
        assert!(u.imag_norm_sq() < 1e-28);
    }

    #[test]
    fn real_soliton_travels_at_lambda_squared() {
        let spec = SolitonSpec::new(oct(), 1.3, real_alpha(1.0)).unwrap();
        let l2 = 1.3 * 1.3;
        for &(x, t) in &[(0.5, 0.4), (-2.0, 1.0), (3.0, 2.5)] {
            let moving = spec.u(x, t).unwrap();
            let still = spec.u(x - l2 * t, 0.0).unwrap();
            assert!(moving.max_abs_diff(&still) < 1e-12);
        }
    }

    #[test]
    fn decay_far_from_the_crest() {
        let spec = SolitonSpec::new(oct(), 1.0, real_alpha(1.0)).unwrap();
        assert!(spec.u(40.0, 0.0).unwrap().norm() < 1e-15);
    }

    #[test]
    fn jet_derivative_matches_closed_form() {
        let mut alpha = real_alpha(0.8);
        alpha.coeffs_mut()[1] = 0.5;
        alpha.coeffs_mut()[5] = -0.3;
        let spec = SolitonSpec::new(oct(), 1.1, alpha).unwrap();
        for &(x, t) in &[(0.0, 0.0), (1.0, 0.3), (-2.5, 1.7), (4.0, -0.2)] {
            let via_jet = spec.u(x, t).unwrap();
            let closed = spec.u_closed_form(x, t).unwrap();
            assert!(via_jet.max_abs_diff(&closed) < 1e-12);
        }
    }

    /// Independent oracle: alpha and f generate a commutative plane, so the
    /// whole profile can be computed in complex arithmetic and mapped back.
    #[test]
    fn complex_plane_oracle_agrees() {
        let mut alpha = real_alpha(0.7);
        alpha.coeffs_mut()[2] = 0.4;
        let spec = SolitonSpec::new(oct(), 0.9, alpha.clone()).unwrap();
        let a0 = 0.7;
        let aim = 0.4;
        let lambda = 0.9f64;
        for &(x, t) in &[(0.0, 0.0), (1.5, 0.25), (-1.0, 0.8)] {
            let f = (-lambda * x + lambda.powi(3) * t).exp();
            // u = 12 l^2 z f / (z + f)^2 in the plane z = a0 + i aim
            let z = num_complexish(a0, aim);
            let den = num_complexish(a0 + f, aim);
            let den2 = cmul(den, den);
            let num = cscale(cmul(z, den_conj_inv(den2)), 12.0 * lambda * lambda * f);
            let u = spec.u(x, t).unwrap();
            assert!((u.real_part() - num.0).abs() < 1e-12);
            assert!((u.coeffs()[2] - num.1).abs() < 1e-12);
        }
    }

    fn num_complexish(re: f64, im: f64) -> (f64, f64) {
        (re, im)
    }
    fn cmul(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
        (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
    }
    fn cscale(a: (f64, f64), s: f64) -> (f64, f64) {
        (a.0 * s, a.1 * s)
    }
    fn den_conj_inv(a: (f64, f64)) -> (f64, f64) {
        let n = a.0 * a.0 + a.1 * a.1;
        (a.0 / n, -a.1 / n)
    }

    #[test]
    fn stationary_ode_residual_real_alpha() {
        let spec = SolitonSpec::new(oct(), 1.0, real_alpha(1.0)).unwrap();
        let samples: Vec<(f64, f64)> = (0..100)
            .map(|i| (-10.0 + 20.0 * i as f64 / 99.0, 0.0))
            .collect();
        let r = ode24_residual(&spec, &samples).unwrap();
        assert!(r < 1e-10, "residual {r}");
    }

    #[test]
    fn stationary_ode_residual_octonion_alpha() {
        let mut alpha = real_alpha(1.0);
        alpha.coeffs_mut()[1] = 1.0;
        let spec = SolitonSpec::new(oct(), 1.0, alpha).unwrap();
        let samples: Vec<(f64, f64)> = (0..100)
            .map(|i| (-10.0 + 20.0 * i as f64 / 99.0, 0.0))
            .collect();
        let r = ode24_residual(&spec, &samples).unwrap();
        assert!(r < 1e-9, "residual {r}");
    }

    #[test]
    fn scaling_breaks_the_stationary_ode() {
        // doubling u turns the residual into exactly u^2 pointwise
        let spec = SolitonSpec::new(oct(), 1.0, real_alpha(1.0)).unwrap();
        let alg = spec.algebra().clone();
        let x = 0.3;
        let j = spec.solution_jet(x, 0.0).unwrap();
        let doubled_res = {
            let u2 = j.u.scaled(2.0);
            let sq = alg.multiply(&u2, &u2).unwrap();
            j.u_xx.scaled(2.0).add(&sq.scaled(0.5)).sub(&u2)
        };
        let expected = alg.multiply(&j.u, &j.u).unwrap();
        assert!(doubled_res.max_abs_diff(&expected) < 1e-10);
    }

    #[test]
    fn evolution_residual_one_soliton_octonion() {
        let mut alpha = real_alpha(1.0);
        alpha.coeffs_mut()[3] = 0.6;
        alpha.coeffs_mut()[6] = -0.2;
        let spec = SolitonSpec::new(oct(), 1.0, alpha).unwrap();
        let mut samples = Vec::new();
        for i in 0..20 {
            for j in 0..10 {
                samples.push((-8.0 + 16.0 * i as f64 / 19.0, -1.0 + 2.0 * j as f64 / 9.0));
            }
        }
        let r = kdv25_residual_one(&spec, &samples, None).unwrap();
        assert!(r < 1e-8, "residual {r}");
    }

    #[test]
    fn rotation_term_vanishes_for_aligned_alpha() {
        let v = CdNumber::basis(8, 1);
        let mut alpha = real_alpha(2.0);
        alpha.coeffs_mut()[1] = 3.0;
        let spec = SolitonSpec::new(oct(), 1.0, alpha).unwrap();
        let samples: Vec<(f64, f64)> = (0..50).map(|i| (-5.0 + 0.2 * i as f64, 0.1)).collect();
        let plain = kdv25_residual_one(&spec, &samples, None).unwrap();
        let rotated = kdv25_residual_one(&spec, &samples, Some(&v)).unwrap();
        assert_eq!(plain, rotated, "commutator must vanish identically");
    }

    /// The symmetrized inverse-derivative rule is exact on one commutative
    /// plane and measurably wrong off it; the conj/|.|^2 route is exact in
    /// both regimes.
    #[test]
    fn symmetrized_rule_agrees_only_when_aligned() {
        let alg = oct();
        let samples: Vec<(f64, f64)> = (0..40)
            .map(|i| (-6.0 + 12.0 * i as f64 / 39.0, 0.2))
            .collect();

        let v = CdNumber::basis(8, 1);
        let aligned =
            TwoSolitonSpec::eq2_mode(alg.clone(), 0.8, 1.0, 0.7, 1.2, 0.8, -0.5, &v).unwrap();
        let mut aligned_gap: f64 = 0.0;
        for &(x, t) in &samples {
            let a = aligned.solution_jet(x, t).unwrap();
            let b = aligned.solution_jet_symmetrized(x, t).unwrap();
            aligned_gap = aligned_gap.max(a.u.max_abs_diff(&b.u));
        }
        assert!(aligned_gap < 1e-12, "aligned routes differ by {aligned_gap}");

        let mut alpha = real_alpha(1.0);
        alpha.coeffs_mut()[1] = 0.7;
        let mut beta = real_alpha(0.8);
        beta.coeffs_mut()[2] = 0.5;
        let generic = TwoSolitonSpec::new(alg.clone(), 0.8, alpha, 1.2, beta).unwrap();
        let mut generic_gap: f64 = 0.0;
        let mut jets_exact = Vec::new();
        let mut jets_symmetrized = Vec::new();
        for &(x, t) in &samples {
            let a = generic.solution_jet(x, t).unwrap();
            let b = generic.solution_jet_symmetrized(x, t).unwrap();
            generic_gap = generic_gap.max(a.u.max_abs_diff(&b.u));
            jets_exact.push(a);
            jets_symmetrized.push(b);
        }
        assert!(generic_gap > 1e-2, "routes should differ generically");
        // only the exact route stays on the evolution equation
        let r_exact = evolution_residual(&alg, &jets_exact, None);
        let r_symmetrized = evolution_residual(&alg, &jets_symmetrized, None);
        assert!(r_exact < 1e-9, "exact route residual {r_exact}");
        assert!(
            r_symmetrized > 1e-2,
            "symmetrized route unexpectedly solves the equation: {r_symmetrized}"
        );
    }

    #[test]
    fn two_soliton_swap_symmetry() {
        let mut alpha = real_alpha(1.0);
        alpha.coeffs_mut()[1] = 0.5;
        let mut beta = real_alpha(0.6);
        beta.coeffs_mut()[1] = -0.8;
        let a = TwoSolitonSpec::new(oct(), 0.8, alpha.clone(), 1.2, beta.clone()).unwrap();
        let b = TwoSolitonSpec::new(oct(), 1.2, beta, 0.8, alpha).unwrap();
        for &(x, t) in &[(0.0, 0.0), (2.0, 0.5), (-3.0, 1.0)] {
            let ua = a.u(x, t).unwrap();
            let ub = b.u(x, t).unwrap();
            assert!(ua.max_abs_diff(&ub) < 1e-13);
        }
    }

    /// The aligned-imaginary family exposes exactly six real parameters,
    /// each of which moves the solution; the rotation term vanishes on all
    /// of them.
    #[test]
    fn six_parameter_family() {
        let alg = oct();
        let v = CdNumber::basis(8, 1);
        let base = [0.7f64, 1.1, 1.0, 0.5, 0.8, -0.4]; // la, lb, a0, g1, b0, g2
        let build = |p: &[f64; 6]| {
            TwoSolitonSpec::eq2_mode(alg.clone(), p[0], p[2], p[3], p[1], p[4], p[5], &v)
                .unwrap()
        };
        let reference = build(&base);
        let probe_points = [(0.4, 0.1), (-1.3, 0.2), (2.2, -0.3)];
        for k in 0..6 {
            let mut bumped = base;
            bumped[k] += 0.05;
            let variant = build(&bumped);
            let moved = probe_points.iter().any(|&(x, t)| {
                reference
                    .u(x, t)
                    .unwrap()
                    .max_abs_diff(&variant.u(x, t).unwrap())
                    > 1e-6
            });
            assert!(moved, "parameter {k} did not move the solution");
        }
        // the rotation term vanishes identically on the family
        let samples: Vec<(f64, f64)> = (0..30).map(|i| (-3.0 + 0.2 * i as f64, 0.15)).collect();
        let plain = kdv25_residual_two(&reference, &samples, None).unwrap();
        let rotated = kdv25_residual_two(&reference, &samples, Some(&v)).unwrap();
        assert_eq!(plain, rotated);
    }

    #[test]
    fn initial_field_decays_at_the_boundary() {
        let grid = Grid::new(256, 80.0).unwrap();
        let alg = oct();
        let spec = SolitonSpec::new(alg.clone(), 1.0, real_alpha(1.0))
            .unwrap()
            .with_peak_at(40.0);
        let (field, boundary) =
            make_initial_field(|x| spec.u(x, 0.0), grid, alg).unwrap();
        assert!(boundary < 1e-12, "boundary magnitude {boundary}");
        // peak near the middle
        let mid = field.sample(128).norm();
        assert!((mid - 3.0).abs() < 0.1, "peak {mid}");
    }

    #[test]
    fn vanishing_amplitude_limit() {
        let grid = Grid::new(64, 40.0).unwrap();
        let alg = oct();
        let spec = SolitonSpec::new(alg.clone(), 1e-3, real_alpha(1.0))
            .unwrap()
            .with_peak_at(20.0);
        let (field, _) = make_initial_field(|x| spec.u(x, 0.0), grid, alg).unwrap();
        assert!(field.max_norm() < 1e-4);
    }
}
