//! Construction of the concrete modular forms entering the pipeline:
//! Dirichlet characters, Eisenstein series, elliptic-curve q-expansions,
//! theta series, weight-one form ingestion and p-stabilization.

pub mod bernoulli;
pub mod chars;
pub mod curves;
pub mod eisenstein;
pub mod stabilize;
pub mod theta;
pub mod weight1;
