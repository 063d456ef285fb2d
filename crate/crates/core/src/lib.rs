//! Numerical and combinatorial toolkit for scalar curvature along
//! volume-preserving geodesics of the L2 metric on the space of Riemannian
//! metrics, evaluated on periodic desk-scale grids.
//!
//! The library has three legs:
//!
//! * pointwise and combinatorial linear algebra on traceless symmetric
//!   matrices ([`symcore`], [`strata`]): spectra, eigenvalue multiplicities,
//!   the face lattice of Sym_0(n)/SO(n), normal forms, and numerical
//!   Whitney-condition checks;
//! * discrete differential geometry on the flat-coordinate torus
//!   ([`field`], [`cluster`], [`curvature`]): finite differences, frames,
//!   structure functions, geodesic metrics g_t = g_0 exp(tH), and scalar
//!   curvature through three independent routes (orthonormal-frame
//!   Christoffel formula, diagonal closed form, coordinate oracle);
//! * asymptotic verification and genericity ([`asymptotics`],
//!   [`genericity`]): exponential decay fits, growth-bound audits,
//!   singular-locus detection and numerical transversality.
//!
//! The [`scenario`] module provides a parseable scenario format and the
//! [`verify`] module packages the named verification suites used by the
//! command-line front end.

pub mod asymptotics;
pub mod cluster;
pub mod curvature;
pub mod error;
pub mod field;
pub mod genericity;
pub mod scenario;
pub mod strata;
pub mod symcore;
pub mod verify;

pub use error::{Error, Result};
