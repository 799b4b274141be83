//! Numerical toolkit for cohomological equations over constant-coefficient
//! `R` and `R^2` actions on tori and on the Heisenberg nilmanifold.

pub mod algebra;
pub mod diophantine;
mod fft;
pub mod torus;
pub mod nilrep;
pub mod cohomology;
pub mod rigidity;
