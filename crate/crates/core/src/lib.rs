//! Numerical laboratory for local Hardy-amalgam spaces `H_loc^(q,p)`.
//!
//! Functions are sampled on a cell-centered grid over a periodized window and
//! every structural quantity of the theory — amalgam quasi-norms, maximal
//! functions, atoms, Calderón–Zygmund decompositions, Campanato-type dual norms
//! and pseudo-differential operators — is computed on those samples so that
//! the inequalities relating them can be checked numerically.

pub mod error;
pub mod amalgam;
pub mod atoms;
pub mod czdecomp;
pub mod dual;
pub mod grid;
pub mod harness;
pub mod io;
pub mod maximal;
pub mod psido;
pub mod poly;

pub use error::{Error, Result};
