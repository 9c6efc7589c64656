//! Triple-product p-adic L-values at weights (2,1,1) by p-adic iterated
//! integrals and overconvergent ordinary projection.

pub mod arith;
pub mod gr;
pub mod matrix;
pub mod ntt;
pub mod overconv;
pub mod padic;
pub mod qseries;
pub mod spaces;
pub mod triple;
pub mod zmod;

pub use padic::{PadicContext, PadicElement, PadicError};
