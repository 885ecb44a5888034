//! Cayley-Dickson algebras of arbitrary level with exact basis tables.
//!
//! Level n produces the 2^n-dimensional real algebra in the doubling tower
//! reals, complexes, quaternions, octonions, sedenions, ... with the product
//! on pairs given by `(p,q)(r,s) = (pr - s*q, sp + qr*)` and conjugation
//! `(p,q)* = (p*, -q)`. Basis products are precomputed into sign/index
//! tables (`e_i e_j = sign[i][j] * e_{index[i][j]}`), so element products are
//! plain bilinear expansions and basis-level property audits run on exact
//! integer arithmetic.

use serde::Serialize;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Highest supported level; tables are dense, 2^8 = 256 is the ceiling.
pub const MAX_LEVEL: u32 = 8;

#[derive(Debug, Error, PartialEq)]
pub enum AlgebraError {
    #[error("Cayley-Dickson level {0} exceeds the supported ceiling of {MAX_LEVEL}")]
    LevelTooLarge(u32),
    #[error("dimension mismatch: expected {expected} coefficients, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("the zero element has no inverse")]
    ZeroInverse,
    #[error("invalid basis relabeling: {0}")]
    InvalidRelabeling(String),
}

/// Product of two basis elements at the given level, computed from the
/// doubling formula. Returns `(sign, index)` with sign in {-1, +1}.
fn basis_product_rec(level: u32, i: usize, j: usize) -> (i8, usize) {
    if level == 0 {
        return (1, 0);
    }
    let h = 1usize << (level - 1);
    // conjugation sign of a basis element: e_0* = e_0, e_k* = -e_k otherwise
    let conj = |k: usize| -> i8 {
        if k == 0 {
            1
        } else {
            -1
        }
    };
    match (i < h, j < h) {
        // (p,0)(r,0) = (pr, 0)
        (true, true) => basis_product_rec(level - 1, i, j),
        // (p,0)(0,s) = (0, sp)
        (true, false) => {
            let (s, k) = basis_product_rec(level - 1, j - h, i);
            (s, k + h)
        }
        // (0,q)(r,0) = (0, qr*)
        (false, true) => {
            let (s, k) = basis_product_rec(level - 1, i - h, j);
            (s * conj(j), k + h)
        }
        // (0,q)(0,s) = (-s*q, 0)
        (false, false) => {
            let (s, k) = basis_product_rec(level - 1, j - h, i - h);
            (-(s * conj(j - h)), k)
        }
    }
}

/// A Cayley-Dickson algebra described by its precomputed basis tables.
///
/// Immutable after construction; share freely (e.g. behind an [`Arc`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Algebra {
    level: u32,
    dim: usize,
    sign: Vec<i8>,
    index: Vec<usize>,
}

impl Algebra {
    /// Builds the level-`n` algebra tables by the doubling recursion.
    pub fn new(level: u32) -> Result<Self, AlgebraError> {
        if level > MAX_LEVEL {
            return Err(AlgebraError::LevelTooLarge(level));
        }
        let dim = 1usize << level;
        let mut sign = vec![0i8; dim * dim];
        let mut index = vec![0usize; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                let (s, k) = basis_product_rec(level, i, j);
                // the doubling recursion always lands on the XOR index
                debug_assert_eq!(k, i ^ j);
                sign[i * dim + j] = s;
                index[i * dim + j] = k;
            }
        }
        Ok(Self {
            level,
            dim,
            sign,
            index,
        })
    }

    /// Convenience shared handle.
    pub fn shared(level: u32) -> Result<Arc<Self>, AlgebraError> {
        Ok(Arc::new(Self::new(level)?))
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `e_i e_j = sign * e_index`.
    #[inline]
    pub fn basis_product(&self, i: usize, j: usize) -> (i8, usize) {
        (self.sign[i * self.dim + j], self.index[i * self.dim + j])
    }

    #[inline]
    pub fn sign(&self, i: usize, j: usize) -> i8 {
        self.sign[i * self.dim + j]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        self.index[i * self.dim + j]
    }

    fn check_dim(&self, x: &CdNumber) -> Result<(), AlgebraError> {
        if x.dim() != self.dim {
            return Err(AlgebraError::DimensionMismatch {
                expected: self.dim,
                got: x.dim(),
            });
        }
        Ok(())
    }

    /// Bilinear product expansion over the basis tables.
    pub fn multiply(&self, x: &CdNumber, y: &CdNumber) -> Result<CdNumber, AlgebraError> {
        self.check_dim(x)?;
        self.check_dim(y)?;
        let mut out = vec![0.0; self.dim];
        self.mul_slices(&x.coeffs, &y.coeffs, &mut out);
        Ok(CdNumber { coeffs: out })
    }

    /// Product kernel on raw coefficient slices (`out` is overwritten).
    pub fn mul_slices(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for i in 0..self.dim {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            let row = i * self.dim;
            for j in 0..self.dim {
                let yj = y[j];
                if yj == 0.0 {
                    continue;
                }
                out[self.index[row + j]] += f64::from(self.sign[row + j]) * xi * yj;
            }
        }
    }

    /// Exact product of integer coefficient vectors, used by audits.
    pub fn int_multiply(&self, x: &[i64], y: &[i64]) -> Vec<i64> {
        let mut out = vec![0i64; self.dim];
        for i in 0..self.dim {
            if x[i] == 0 {
                continue;
            }
            let row = i * self.dim;
            for j in 0..self.dim {
                if y[j] == 0 {
                    continue;
                }
                out[self.index[row + j]] += i64::from(self.sign[row + j]) * x[i] * y[j];
            }
        }
        out
    }

    /// `x^-1 = x* / |x|^2`; two-sided inverse at every level (levels with
    /// zero divisors still have one, it just does not give cancellation).
    pub fn inverse(&self, x: &CdNumber) -> Result<CdNumber, AlgebraError> {
        self.check_dim(x)?;
        let n = x.norm_sq();
        if n == 0.0 {
            return Err(AlgebraError::ZeroInverse);
        }
        Ok(x.conjugate().scaled(1.0 / n))
    }

    /// `[x, y] = xy - yx`.
    pub fn commutator(&self, x: &CdNumber, y: &CdNumber) -> Result<CdNumber, AlgebraError> {
        let xy = self.multiply(x, y)?;
        let yx = self.multiply(y, x)?;
        Ok(xy.sub(&yx))
    }

    /// `[x, y, z] = (xy)z - x(yz)`.
    pub fn associator(
        &self,
        x: &CdNumber,
        y: &CdNumber,
        z: &CdNumber,
    ) -> Result<CdNumber, AlgebraError> {
        let lhs = self.multiply(&self.multiply(x, y)?, z)?;
        let rhs = self.multiply(x, &self.multiply(y, z)?)?;
        Ok(lhs.sub(&rhs))
    }

    /// Left-associated power `x^k` (power associativity makes the
    /// association order immaterial up to the audited tolerance).
    pub fn power(&self, x: &CdNumber, k: u32) -> Result<CdNumber, AlgebraError> {
        self.check_dim(x)?;
        if k == 0 {
            return Ok(CdNumber::basis(self.dim, 0));
        }
        let mut acc = x.clone();
        for _ in 1..k {
            acc = self.multiply(&acc, x)?;
        }
        Ok(acc)
    }

    /// Tables for the same algebra after relabeling `E_i = e_{perm[i]}`.
    /// `perm` must be a permutation of `0..dim` fixing 0.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Algebra, AlgebraError> {
        if perm.len() != self.dim {
            return Err(AlgebraError::InvalidRelabeling(format!(
                "permutation length {} does not match dimension {}",
                perm.len(),
                self.dim
            )));
        }
        let mut inv = vec![usize::MAX; self.dim];
        for (i, &p) in perm.iter().enumerate() {
            if p >= self.dim || inv[p] != usize::MAX {
                return Err(AlgebraError::InvalidRelabeling(
                    "not a permutation".to_string(),
                ));
            }
            inv[p] = i;
        }
        if perm[0] != 0 {
            return Err(AlgebraError::InvalidRelabeling(
                "the unit e_0 must stay fixed".to_string(),
            ));
        }
        let mut sign = vec![0i8; self.dim * self.dim];
        let mut index = vec![0usize; self.dim * self.dim];
        for i in 0..self.dim {
            for j in 0..self.dim {
                sign[i * self.dim + j] = self.sign(perm[i], perm[j]);
                index[i * self.dim + j] = inv[self.index(perm[i], perm[j])];
            }
        }
        Ok(Algebra {
            level: self.level,
            dim: self.dim,
            sign,
            index,
        })
    }
}

/// An element of a Cayley-Dickson algebra: the real coefficient of `e_k`
/// sits at position `k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct CdNumber {
    coeffs: Vec<f64>,
}

impl CdNumber {
    pub fn zero(dim: usize) -> Self {
        Self {
            coeffs: vec![0.0; dim],
        }
    }

    pub fn basis(dim: usize, k: usize) -> Self {
        let mut coeffs = vec![0.0; dim];
        coeffs[k] = 1.0;
        Self { coeffs }
    }

    pub fn from_coeffs(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn real_scalar(dim: usize, value: f64) -> Self {
        let mut coeffs = vec![0.0; dim];
        coeffs[0] = value;
        Self { coeffs }
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn real_part(&self) -> f64 {
        self.coeffs[0]
    }

    /// Copy with the real coefficient zeroed.
    pub fn imag_part(&self) -> CdNumber {
        let mut out = self.clone();
        out.coeffs[0] = 0.0;
        out
    }

    /// Conjugation negates every imaginary coefficient.
    pub fn conjugate(&self) -> CdNumber {
        let mut out = self.clone();
        for c in &mut out.coeffs[1..] {
            *c = -*c;
        }
        out
    }

    /// Euclidean square norm; equals the real part of `x x*`.
    pub fn norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Square norm of the imaginary part only.
    pub fn imag_norm_sq(&self) -> f64 {
        self.coeffs[1..].iter().map(|c| c * c).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    pub fn add(&self, other: &CdNumber) -> CdNumber {
        debug_assert_eq!(self.dim(), other.dim());
        CdNumber {
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &CdNumber) -> CdNumber {
        debug_assert_eq!(self.dim(), other.dim());
        CdNumber {
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> CdNumber {
        CdNumber {
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    pub fn neg(&self) -> CdNumber {
        self.scaled(-1.0)
    }

    /// Max-norm distance, handy for tolerance checks.
    pub fn max_abs_diff(&self, other: &CdNumber) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for CdNumber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.coeffs.iter().map(|c| format!("{c}")).collect();
        write!(f, "[{}]", parts.join(", "))
    }
}

/// Commutator structure constants `[e_i, e_j] = sum_k C_ijk e_k`,
/// stored sparsely over imaginary indices. With the tables as built the
/// nonzero values are exactly +/-2.
#[derive(Debug, Clone)]
pub struct StructureConstants {
    dim: usize,
    entries: std::collections::BTreeMap<(usize, usize, usize), f64>,
}

impl StructureConstants {
    pub fn from_algebra(alg: &Algebra) -> Self {
        let mut entries = std::collections::BTreeMap::new();
        for i in 1..alg.dim() {
            for j in 1..alg.dim() {
                if i == j {
                    continue;
                }
                let (s, k) = alg.basis_product(i, j);
                // e_i e_j = -e_j e_i for distinct imaginary indices, so the
                // commutator doubles the product
                entries.insert((i, j, k), 2.0 * f64::from(s));
            }
        }
        Self {
            dim: alg.dim(),
            entries,
        }
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        *self.entries.get(&(i, j, k)).unwrap_or(&0.0)
    }

    pub fn entries(&self) -> &std::collections::BTreeMap<(usize, usize, usize), f64> {
        &self.entries
    }

    /// Exact total-antisymmetry check by exhausting all imaginary triples.
    pub fn is_totally_antisymmetric(&self) -> bool {
        for i in 1..self.dim {
            for j in 1..self.dim {
                for k in 1..self.dim {
                    let c = self.get(i, j, k);
                    if c != -self.get(j, i, k)
                        || c != -self.get(i, k, j)
                        || c != self.get(j, k, i)
                    {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// Properties audited at basis level (or by exact small-support search).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgebraProperty {
    Commutative,
    Associative,
    Alternative,
    NormMultiplicative,
    PowerAssociative,
}

impl std::str::FromStr for AlgebraProperty {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "commutative" => Ok(Self::Commutative),
            "associative" => Ok(Self::Associative),
            "alternative" => Ok(Self::Alternative),
            "norm_multiplicative" => Ok(Self::NormMultiplicative),
            "power_associative" => Ok(Self::PowerAssociative),
            other => Err(format!(
                "unknown property '{other}' (expected one of: commutative, associative, \
                 alternative, norm_multiplicative, power_associative)"
            )),
        }
    }
}

/// A concrete witness that a property fails.
#[derive(Debug, Clone, Serialize)]
pub struct Counterexample {
    /// The elements plugged into the failed law, in argument order.
    pub elements: Vec<CdNumber>,
    /// Human-readable statement of what was compared.
    pub law: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct PropertyReport {
    pub property: AlgebraProperty,
    pub holds: bool,
    pub counterexample: Option<Counterexample>,
}

/// Candidate elements for the exact searches: single basis elements and
/// two-term sums `e_a + e_b` over imaginary indices.
fn small_support_elements(dim: usize) -> Vec<Vec<i64>> {
    let mut out = Vec::new();
    for a in 1..dim {
        let mut v = vec![0i64; dim];
        v[a] = 1;
        out.push(v);
    }
    for a in 1..dim {
        for b in (a + 1)..dim {
            let mut v = vec![0i64; dim];
            v[a] = 1;
            v[b] = 1;
            out.push(v);
        }
    }
    out
}

fn int_to_cd(v: &[i64]) -> CdNumber {
    CdNumber::from_coeffs(v.iter().map(|&c| c as f64).collect())
}

fn int_norm_sq(v: &[i64]) -> i64 {
    v.iter().map(|c| c * c).sum()
}

/// Deterministic audit of an algebraic law.
///
/// Commutativity/associativity are brute-forced over basis elements;
/// alternativity and norm multiplicativity additionally search two-term
/// sums `e_a + e_b` with exact integer arithmetic (the first violations
/// past the octonions live on such sums, not on single basis elements).
/// Power associativity is sampled with a fixed-seed RNG.
pub fn audit_property(alg: &Algebra, property: AlgebraProperty) -> PropertyReport {
    let dim = alg.dim();
    let fail = |elements: Vec<CdNumber>, law: String| PropertyReport {
        property,
        holds: false,
        counterexample: Some(Counterexample { elements, law }),
    };
    match property {
        AlgebraProperty::Commutative => {
            for i in 0..dim {
                for j in 0..dim {
                    let (s1, k1) = alg.basis_product(i, j);
                    let (s2, k2) = alg.basis_product(j, i);
                    if (s1, k1) != (s2, k2) {
                        return fail(
                            vec![CdNumber::basis(dim, i), CdNumber::basis(dim, j)],
                            format!("e_{i} e_{j} != e_{j} e_{i}"),
                        );
                    }
                }
            }
        }
        AlgebraProperty::Associative => {
            for i in 0..dim {
                for j in 0..dim {
                    for k in 0..dim {
                        let (s_ij, ij) = alg.basis_product(i, j);
                        let (s1, k1) = alg.basis_product(ij, k);
                        let (s_jk, jk) = alg.basis_product(j, k);
                        let (s2, k2) = alg.basis_product(i, jk);
                        if (s_ij * s1, k1) != (s_jk * s2, k2) {
                            return fail(
                                vec![
                                    CdNumber::basis(dim, i),
                                    CdNumber::basis(dim, j),
                                    CdNumber::basis(dim, k),
                                ],
                                format!("(e_{i} e_{j}) e_{k} != e_{i} (e_{j} e_{k})"),
                            );
                        }
                    }
                }
            }
        }
        AlgebraProperty::Alternative => {
            let candidates = small_support_elements(dim);
            for x in &candidates {
                let xx = alg.int_multiply(x, x);
                for y in &candidates {
                    let xy = alg.int_multiply(x, y);
                    let left = alg.int_multiply(&xx, y);
                    let right = alg.int_multiply(x, &xy);
                    if left != right {
                        return fail(
                            vec![int_to_cd(x), int_to_cd(y)],
                            "(xx)y != x(xy)".to_string(),
                        );
                    }
                    let yy = alg.int_multiply(y, y);
                    let left = alg.int_multiply(&xy, y);
                    let right = alg.int_multiply(x, &yy);
                    if left != right {
                        return fail(
                            vec![int_to_cd(x), int_to_cd(y)],
                            "(xy)y != x(yy)".to_string(),
                        );
                    }
                }
            }
        }
        AlgebraProperty::NormMultiplicative => {
            let candidates = small_support_elements(dim);
            for x in &candidates {
                let nx = int_norm_sq(x);
                for y in &candidates {
                    let ny = int_norm_sq(y);
                    let xy = alg.int_multiply(x, y);
                    if int_norm_sq(&xy) != nx * ny {
                        return fail(
                            vec![int_to_cd(x), int_to_cd(y)],
                            "|xy|^2 != |x|^2 |y|^2".to_string(),
                        );
                    }
                }
            }
        }
        AlgebraProperty::PowerAssociative => {
            return audit_power_associative(alg, 0);
        }
    }
    PropertyReport {
        property,
        holds: true,
        counterexample: None,
    }
}

/// Sampled power-associativity audit: 200 random elements, exponents with
/// a + b <= 6, tolerance 1e-10 relative to |x|^(a+b).
pub fn audit_power_associative(alg: &Algebra, seed: u64) -> PropertyReport {
    let dim = alg.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..200 {
        let x = CdNumber::from_coeffs((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect());
        let norm = x.norm();
        for a in 1u32..=5 {
            for b in 1u32..=(6 - a) {
                let xa = alg.power(&x, a).expect("dims match");
                let xb = alg.power(&x, b).expect("dims match");
                let prod = alg.multiply(&xa, &xb).expect("dims match");
                let direct = alg.power(&x, a + b).expect("dims match");
                let err = prod.sub(&direct).norm();
                if err > 1e-10 * norm.powi((a + b) as i32) {
                    return PropertyReport {
                        property: AlgebraProperty::PowerAssociative,
                        holds: false,
                        counterexample: Some(Counterexample {
                            elements: vec![x],
                            law: format!("x^{a} x^{b} != x^{}", a + b),
                        }),
                    };
                }
            }
        }
    }
    PropertyReport {
        property: AlgebraProperty::PowerAssociative,
        holds: true,
        counterexample: None,
    }
}

/// Exact search for zero-divisor pairs of the shape
/// `(e_i + e_j)(e_k + e_l) = 0` over imaginary basis indices.
///
/// Empty through the octonions, non-empty from the sedenions on.
pub fn find_zero_divisors(alg: &Algebra) -> Vec<(CdNumber, CdNumber)> {
    let dim = alg.dim();
    let mut out = Vec::new();
    for i in 1..dim {
        for j in (i + 1)..dim {
            for k in 1..dim {
                for l in (k + 1)..dim {
                    // (e_i + e_j)(e_k + e_l) expands to four signed basis
                    // terms; it vanishes iff they cancel in pairs.
                    let (s_ik, ik) = alg.basis_product(i, k);
                    let (s_il, il) = alg.basis_product(i, l);
                    let (s_jk, jk) = alg.basis_product(j, k);
                    let (s_jl, jl) = alg.basis_product(j, l);
                    let cancels = (ik == jl && s_ik == -s_jl && il == jk && s_il == -s_jk)
                        || (ik == il && s_ik == -s_il && jk == jl && s_jk == -s_jl)
                        || (ik == jk && s_ik == -s_jk && il == jl && s_il == -s_jl);
                    if cancels {
                        let mut x = vec![0.0; dim];
                        x[i] = 1.0;
                        x[j] = 1.0;
                        let mut y = vec![0.0; dim];
                        y[k] = 1.0;
                        y[l] = 1.0;
                        out.push((CdNumber::from_coeffs(x), CdNumber::from_coeffs(y)));
                    }
                }
            }
        }
    }
    out
}
