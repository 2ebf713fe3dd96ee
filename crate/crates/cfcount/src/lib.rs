//! Continued-fraction Markov dynamics, thermodynamic-formalism dimension
//! computation, congruence-twisted transfer-operator spectra, renewal-equation
//! counting, SL₂(ℤ/qℤ) random-walk experiments and Zaremba denominator
//! enumeration.
//!
//! The crate is organised around the chain
//! alphabet → Markov system → transfer operator → dimension/Gibbs data →
//! counting, with the congruence modules (finite groups, twisted operators,
//! random walks) layered on top of the same branch system.

pub mod cf_dynamics;
pub mod congruence;
pub mod counting;
pub mod mat2z;
pub mod mixing;
pub mod thermo;
pub mod twisted;
pub mod zaremba;

pub use cf_dynamics::{Alphabet, CylinderId, MarkovSystem};
pub use congruence::FiniteGroup;
pub use mat2z::Mat2;
pub use thermo::{GibbsData, SpectralModel};

// numeric types (Complex64, rationals) shared with downstream crates
pub use num;
