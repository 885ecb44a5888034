//! Cayley-Dickson valued KdV laboratory.
//!
//! The crate builds the Cayley-Dickson algebra tower exactly, integrates the
//! algebra-valued KdV / Gardner / modified-KdV equations pseudospectrally on
//! a periodic domain, verifies the Backlund and Gardner transformation
//! structure numerically, evaluates closed-form one- and two-soliton
//! octonion solutions with analytic derivatives, and exposes the G2
//! derivation algebra of the octonions together with its SU(3) stabilizers.

pub mod algebra;
pub mod config;
pub mod io;
pub mod solitons;
pub mod solver;
pub mod symmetry;
pub mod transforms;

pub use algebra::{Algebra, AlgebraError, CdNumber};
pub use solver::{Equation, EvolutionSpec, Field, Grid, RunRecord, SolverError};
pub use transforms::{ConservedReport, TransformError};
