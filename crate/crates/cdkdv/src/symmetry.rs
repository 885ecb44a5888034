//! The derivation algebra of the octonions (the Lie algebra of the
//! automorphism group G2), built from the two-generator maps
//!
//! ```text
//! D_{a,b}(x) = [[a,b], x] - 3 [a,b,x]
//!            = 1/2 ([[a,x],b] + [a,[b,x]] + [[a,b],x])
//! ```
//!
//! Fourteen of these maps, two per Fano line, span the 14-dimensional
//! algebra; the third map on each line is linearly dependent through the
//! per-line sum identity. Exponentials give concrete automorphisms, and
//! null spaces of the stacked action on a fixed element give stabilizer
//! dimensions (8 = dim SU(3) for any imaginary direction).

use std::sync::Arc;

use nalgebra::{DMatrix, SMatrix, SVector};
use thiserror::Error;

use crate::algebra::{Algebra, CdNumber};
use crate::solitons::SolutionJet;

pub type Matrix8 = SMatrix<f64, 8, 8>;

#[derive(Debug, Error, PartialEq)]
pub enum SymmetryError {
    #[error("derivations are built on the octonions (level 3), got level {0}")]
    WrongLevel(u32),
    #[error("element has dimension {got}, expected 8")]
    BadDimension { got: usize },
}

/// A derivation of the octonions: the generating pair and the 8x8 matrix
/// of its action on coefficients.
#[derive(Debug, Clone)]
pub struct Derivation {
    pub a: CdNumber,
    pub b: CdNumber,
    pub matrix: Matrix8,
}

fn require_octonions(alg: &Algebra) -> Result<(), SymmetryError> {
    if alg.level() != 3 {
        return Err(SymmetryError::WrongLevel(alg.level()));
    }
    Ok(())
}

fn require_dim8(x: &CdNumber) -> Result<(), SymmetryError> {
    if x.dim() != 8 {
        return Err(SymmetryError::BadDimension { got: x.dim() });
    }
    Ok(())
}

/// Applies an 8x8 coefficient matrix to an element.
pub fn apply_matrix(m: &Matrix8, x: &CdNumber) -> CdNumber {
    let v = SVector::<f64, 8>::from_iterator(x.coeffs().iter().copied());
    let out = m * v;
    CdNumber::from_coeffs(out.iter().copied().collect())
}

fn d_of(alg: &Algebra, a: &CdNumber, b: &CdNumber, x: &CdNumber) -> CdNumber {
    let comm_ab = alg.commutator(a, b).expect("dims agree");
    let term1 = alg.commutator(&comm_ab, x).expect("dims agree");
    let assoc = alg.associator(a, b, x).expect("dims agree");
    term1.sub(&assoc.scaled(3.0))
}

fn d_of_half_sum(alg: &Algebra, a: &CdNumber, b: &CdNumber, x: &CdNumber) -> CdNumber {
    let t1 = alg
        .commutator(&alg.commutator(a, x).expect("dims"), b)
        .expect("dims");
    let t2 = alg
        .commutator(a, &alg.commutator(b, x).expect("dims"))
        .expect("dims");
    let t3 = alg
        .commutator(&alg.commutator(a, b).expect("dims"), x)
        .expect("dims");
    t1.add(&t2).add(&t3).scaled(0.5)
}

fn matrix_of(f: impl Fn(&CdNumber) -> CdNumber) -> Matrix8 {
    let mut m = Matrix8::zeros();
    for k in 0..8 {
        let col = f(&CdNumber::basis(8, k));
        for r in 0..8 {
            m[(r, k)] = col.coeffs()[r];
        }
    }
    m
}

/// Builds `D_{a,b}` from the commutator-minus-associator form.
pub fn derivation(
    alg: &Arc<Algebra>,
    a: &CdNumber,
    b: &CdNumber,
) -> Result<Derivation, SymmetryError> {
    require_octonions(alg)?;
    require_dim8(a)?;
    require_dim8(b)?;
    let matrix = matrix_of(|x| d_of(alg, a, b, x));
    Ok(Derivation {
        a: a.clone(),
        b: b.clone(),
        matrix,
    })
}

/// The half-sum form of the same map; agrees with [`derivation`] to
/// round-off on every argument.
pub fn derivation_half_sum_matrix(
    alg: &Arc<Algebra>,
    a: &CdNumber,
    b: &CdNumber,
) -> Result<Matrix8, SymmetryError> {
    require_octonions(alg)?;
    require_dim8(a)?;
    require_dim8(b)?;
    Ok(matrix_of(|x| d_of_half_sum(alg, a, b, x)))
}

/// One Fano line through `e_p`: the three ordered pairs `(i, j)` with
/// `e_i e_j = +e_p`.
pub fn fano_lines(alg: &Algebra) -> Result<Vec<Vec<(usize, usize)>>, SymmetryError> {
    require_octonions(alg)?;
    let mut lines = Vec::with_capacity(7);
    for p in 1..8 {
        let mut pairs = Vec::new();
        for i in 1..8 {
            for j in 1..8 {
                if i == j {
                    continue;
                }
                let (s, k) = alg.basis_product(i, j);
                if k == p && s == 1 {
                    pairs.push((i, j));
                }
            }
        }
        pairs.sort_unstable();
        lines.push(pairs);
    }
    Ok(lines)
}

/// Fourteen basis derivations: per Fano line, the two maps generated by
/// the lexicographically smallest positively oriented pairs (the third is
/// dependent through the line-sum identity).
#[derive(Debug, Clone)]
pub struct G2Basis {
    pub derivations: Vec<Derivation>,
    pub pairs: Vec<(usize, usize)>,
}

pub fn g2_basis(alg: &Arc<Algebra>) -> Result<G2Basis, SymmetryError> {
    let lines = fano_lines(alg)?;
    let mut derivations = Vec::with_capacity(14);
    let mut pairs = Vec::with_capacity(14);
    for line in &lines {
        for &(i, j) in line.iter().take(2) {
            let d = derivation(alg, &CdNumber::basis(8, i), &CdNumber::basis(8, j))?;
            derivations.push(d);
            pairs.push((i, j));
        }
    }
    Ok(G2Basis { derivations, pairs })
}

impl G2Basis {
    /// Rank of the stacked 14x64 coefficient matrix.
    pub fn span_dimension(&self) -> usize {
        let rows = self.derivations.len();
        let mut m = DMatrix::<f64>::zeros(rows, 64);
        for (r, d) in self.derivations.iter().enumerate() {
            for i in 0..8 {
                for j in 0..8 {
                    m[(r, i * 8 + j)] = d.matrix[(i, j)];
                }
            }
        }
        m.rank(1e-9)
    }

    /// Dimension of the subalgebra annihilating `v`: the null space of the
    /// 8x14 matrix whose columns are `D_k(v)`.
    pub fn stabilizer_dimension(&self, v: &CdNumber) -> Result<usize, SymmetryError> {
        Ok(self.stabilizer(v)?.0)
    }

    /// Stabilizer dimension together with an orthonormal basis of the null
    /// space, expressed in coordinates over this derivation basis.
    pub fn stabilizer(&self, v: &CdNumber) -> Result<(usize, Vec<Vec<f64>>), SymmetryError> {
        require_dim8(v)?;
        let cols = self.derivations.len();
        let mut m = DMatrix::<f64>::zeros(8, cols);
        for (c, d) in self.derivations.iter().enumerate() {
            let dv = apply_matrix(&d.matrix, v);
            for r in 0..8 {
                m[(r, c)] = dv.coeffs()[r];
            }
        }
        // null space from the symmetric eigenproblem of m^T m
        let gram = m.transpose() * &m;
        let eig = gram.symmetric_eigen();
        let scale = eig.eigenvalues.iter().cloned().fold(1.0f64, f64::max);
        let mut basis = Vec::new();
        for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
            // eigenvalues are squared singular values; 1e-12 relative sits
            // well above eigensolver noise and far below any true direction
            if lambda < 1e-12 * scale.max(1.0) {
                basis.push(eig.eigenvectors.column(k).iter().copied().collect());
            }
        }
        Ok((basis.len(), basis))
    }

    /// Least-squares coordinates of an 8x8 matrix in this basis and the
    /// projection residual (Frobenius); small residual certifies closure.
    pub fn project(&self, m: &Matrix8) -> (Vec<f64>, f64) {
        let cols = self.derivations.len();
        let mut basis = DMatrix::<f64>::zeros(64, cols);
        for (c, d) in self.derivations.iter().enumerate() {
            for i in 0..8 {
                for j in 0..8 {
                    basis[(i * 8 + j, c)] = d.matrix[(i, j)];
                }
            }
        }
        let target = DMatrix::<f64>::from_iterator(64, 1, (0..64).map(|k| m[(k / 8, k % 8)]));
        let svd = basis.clone().svd(true, true);
        let coeffs = svd.solve(&target, 1e-12).expect("svd solve");
        let residual = (&basis * &coeffs - &target).norm();
        (coeffs.iter().copied().collect(), residual)
    }
}

/// Matrix exponential by scaling-and-squaring with a 1e-13 series cutoff.
pub fn exponentiate(d: &Derivation, s: f64) -> Matrix8 {
    matrix_exp(&(d.matrix * s))
}

pub fn matrix_exp(m: &Matrix8) -> Matrix8 {
    let norm = m.norm();
    let k = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = m / 2f64.powi(k);
    let mut term = Matrix8::identity();
    let mut sum = Matrix8::identity();
    for j in 1..80 {
        term = (term * scaled) / j as f64;
        sum += term;
        if term.norm() < 1e-13 {
            break;
        }
    }
    for _ in 0..k {
        sum = sum * sum;
    }
    sum
}

/// Residuals of the generalized Jacobi identity under its two possible
/// readings of `D_{a,b}(D_{c,d})`:
/// composition (`D1 D2 = D_{D1 c, d} + D_{c, D1 d} + D2 D1`) and
/// commutator (`[D1, D2] = D_{D1 c, d} + D_{c, D1 d} + [D2, D1]`).
/// The composition reading is the identity that holds.
pub fn jacobi_residuals(
    alg: &Arc<Algebra>,
    ab: (&CdNumber, &CdNumber),
    cd: (&CdNumber, &CdNumber),
) -> Result<(f64, f64), SymmetryError> {
    let d1 = derivation(alg, ab.0, ab.1)?;
    let d2 = derivation(alg, cd.0, cd.1)?;
    let d1c = apply_matrix(&d1.matrix, cd.0);
    let d1d = apply_matrix(&d1.matrix, cd.1);
    let d_d1c_d = derivation(alg, &d1c, cd.1)?;
    let d_c_d1d = derivation(alg, cd.0, &d1d)?;
    let action = d_d1c_d.matrix + d_c_d1d.matrix;
    let composition = (d1.matrix * d2.matrix - (action + d2.matrix * d1.matrix)).norm();
    let comm = d1.matrix * d2.matrix - d2.matrix * d1.matrix;
    let commutator_reading = (comm - (action + d2.matrix * d1.matrix - d1.matrix * d2.matrix))
        .norm();
    Ok((composition, commutator_reading))
}

/// Evolution residual of a perturbed certified solution `u + mu D(u)`:
/// O(mu^2) when the derivation preserves v, O(mu) when it does not.
pub fn invariance_residual(
    alg: &Algebra,
    jets: &[SolutionJet],
    v: &CdNumber,
    d: &Matrix8,
    mu: f64,
) -> f64 {
    let perturb = |x: &CdNumber| x.add(&apply_matrix(d, x).scaled(mu));
    let perturbed: Vec<SolutionJet> = jets
        .iter()
        .map(|j| SolutionJet {
            u: perturb(&j.u),
            u_x: perturb(&j.u_x),
            u_xx: perturb(&j.u_xx),
            u_xxx: perturb(&j.u_xxx),
            u_t: perturb(&j.u_t),
        })
        .collect();
    crate::solitons::evolution_residual(alg, &perturbed, Some(v))
}

/// Log-log slope of the residual between two perturbation sizes.
pub fn invariance_slope(
    alg: &Algebra,
    jets: &[SolutionJet],
    v: &CdNumber,
    d: &Matrix8,
    mu1: f64,
    mu2: f64,
) -> f64 {
    let r1 = invariance_residual(alg, jets, v, d, mu1);
    let r2 = invariance_residual(alg, jets, v, d, mu2);
    (r1 / r2).ln() / (mu1 / mu2).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn oct() -> Arc<Algebra> {
        Algebra::shared(3).unwrap()
    }

    fn random_octonion(rng: &mut ChaCha8Rng) -> CdNumber {
        CdNumber::from_coeffs((0..8).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn wrong_level_rejected() {
        let quat = Algebra::shared(2).unwrap();
        let x = CdNumber::basis(4, 1);
        assert_eq!(
            derivation(&quat, &x, &x).unwrap_err(),
            SymmetryError::WrongLevel(2)
        );
    }

    #[test]
    fn d_of_equal_arguments_is_zero() {
        let alg = oct();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_octonion(&mut rng);
        let d = derivation(&alg, &a, &a).unwrap();
        assert!(d.matrix.norm() < 1e-12);
    }

    #[test]
    fn derivations_annihilate_the_unit() {
        let alg = oct();
        let d = derivation(&alg, &CdNumber::basis(8, 1), &CdNumber::basis(8, 2)).unwrap();
        let e0 = CdNumber::basis(8, 0);
        assert!(apply_matrix(&d.matrix, &e0).norm() < 1e-14);
    }

    #[test]
    fn both_printed_forms_agree() {
        let alg = oct();
        for i in 1..8 {
            for j in 1..8 {
                let a = CdNumber::basis(8, i);
                let b = CdNumber::basis(8, j);
                let d1 = derivation(&alg, &a, &b).unwrap().matrix;
                let d2 = derivation_half_sum_matrix(&alg, &a, &b).unwrap();
                assert!((d1 - d2).norm() < 1e-12, "pair ({i},{j})");
            }
        }
    }

    #[test]
    fn leibniz_rule() {
        let alg = oct();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = random_octonion(&mut rng);
        let b = random_octonion(&mut rng);
        let d = derivation(&alg, &a, &b).unwrap();
        for _ in 0..20 {
            let x = random_octonion(&mut rng);
            let y = random_octonion(&mut rng);
            let lhs = apply_matrix(&d.matrix, &alg.multiply(&x, &y).unwrap());
            let rhs = alg
                .multiply(&apply_matrix(&d.matrix, &x), &y)
                .unwrap()
                .add(&alg.multiply(&x, &apply_matrix(&d.matrix, &y)).unwrap());
            assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        }
    }

    #[test]
    fn matrix_is_skew_on_the_imaginary_block() {
        let alg = oct();
        let d = derivation(&alg, &CdNumber::basis(8, 1), &CdNumber::basis(8, 4)).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let skew = d.matrix[(i, j)] + d.matrix[(j, i)];
                assert!(skew.abs() < 1e-12, "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn each_fano_line_has_three_positive_pairs() {
        let alg = oct();
        let lines = fano_lines(&alg).unwrap();
        assert_eq!(lines.len(), 7);
        for (p, line) in lines.iter().enumerate() {
            assert_eq!(line.len(), 3, "line through e_{}", p + 1);
        }
    }

    #[test]
    fn line_sum_identity() {
        let alg = oct();
        for (p, line) in fano_lines(&alg).unwrap().iter().enumerate() {
            let mut sum = Matrix8::zeros();
            for &(i, j) in line {
                sum += derivation(&alg, &CdNumber::basis(8, i), &CdNumber::basis(8, j))
                    .unwrap()
                    .matrix;
            }
            assert!(sum.norm() < 1e-12, "line through e_{}", p + 1);
        }
    }

    #[test]
    fn basis_spans_fourteen_dimensions() {
        let basis = g2_basis(&oct()).unwrap();
        assert_eq!(basis.derivations.len(), 14);
        assert_eq!(basis.span_dimension(), 14);
    }

    #[test]
    fn basis_is_closed_under_commutator() {
        let basis = g2_basis(&oct()).unwrap();
        for i in 0..14 {
            for j in (i + 1)..14 {
                let comm = basis.derivations[i].matrix * basis.derivations[j].matrix
                    - basis.derivations[j].matrix * basis.derivations[i].matrix;
                let (_, residual) = basis.project(&comm);
                assert!(residual < 1e-10, "pair ({i},{j}): residual {residual}");
            }
        }
    }

    #[test]
    fn generalized_jacobi_composition_reading_holds() {
        let alg = oct();
        let basis = g2_basis(&alg).unwrap();
        let mut worst_composition: f64 = 0.0;
        let mut worst_commutator: f64 = 0.0;
        for (i, j) in [(0usize, 3usize), (1, 7), (4, 11), (2, 13), (5, 9)] {
            let d1 = &basis.derivations[i];
            let d2 = &basis.derivations[j];
            let (comp, comm) =
                jacobi_residuals(&alg, (&d1.a, &d1.b), (&d2.a, &d2.b)).unwrap();
            worst_composition = worst_composition.max(comp);
            worst_commutator = worst_commutator.max(comm);
        }
        assert!(worst_composition < 1e-10, "composition reading fails: {worst_composition}");
        // the commutator reading is NOT an identity; document the gap
        assert!(worst_commutator > 1e-3, "commutator reading unexpectedly holds");
    }

    #[test]
    fn exponential_at_zero_is_identity() {
        let alg = oct();
        let d = derivation(&alg, &CdNumber::basis(8, 1), &CdNumber::basis(8, 2)).unwrap();
        let m = exponentiate(&d, 0.0);
        assert!((m - Matrix8::identity()).norm() < 1e-15);
    }

    #[test]
    fn exponentials_are_automorphisms() {
        let alg = oct();
        let d = derivation(&alg, &CdNumber::basis(8, 2), &CdNumber::basis(8, 5)).unwrap();
        let phi = exponentiate(&d, 0.37);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let x = random_octonion(&mut rng);
            let y = random_octonion(&mut rng);
            let lhs = apply_matrix(&phi, &alg.multiply(&x, &y).unwrap());
            let rhs = alg
                .multiply(&apply_matrix(&phi, &x), &apply_matrix(&phi, &y))
                .unwrap();
            worst = worst.max(lhs.max_abs_diff(&rhs));
        }
        assert!(worst < 1e-8, "multiplicativity deviation {worst}");
    }

    #[test]
    fn exponentials_preserve_norm_and_unit() {
        let alg = oct();
        let d = derivation(&alg, &CdNumber::basis(8, 3), &CdNumber::basis(8, 6)).unwrap();
        let phi = exponentiate(&d, 1.2);
        let e0 = CdNumber::basis(8, 0);
        assert!(apply_matrix(&phi, &e0).max_abs_diff(&e0) < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..20 {
            let x = random_octonion(&mut rng);
            let y = apply_matrix(&phi, &x);
            assert!((y.norm() - x.norm()).abs() < 1e-10);
        }
    }

    #[test]
    fn stabilizer_of_imaginary_units_is_su3() {
        let basis = g2_basis(&oct()).unwrap();
        for k in 1..8 {
            let dim = basis.stabilizer_dimension(&CdNumber::basis(8, k)).unwrap();
            assert_eq!(dim, 8, "stabilizer of e_{k}");
        }
    }

    #[test]
    fn real_elements_are_stabilized_by_everything() {
        let basis = g2_basis(&oct()).unwrap();
        let dim = basis.stabilizer_dimension(&CdNumber::basis(8, 0)).unwrap();
        assert_eq!(dim, 14);
    }

    #[test]
    fn generic_imaginary_element_also_has_su3_stabilizer() {
        let basis = g2_basis(&oct()).unwrap();
        let mut v = CdNumber::zero(8);
        v.coeffs_mut()[2] = 0.6;
        v.coeffs_mut()[5] = -1.1;
        v.coeffs_mut()[7] = 0.3;
        assert_eq!(basis.stabilizer_dimension(&v).unwrap(), 8);
    }
}
