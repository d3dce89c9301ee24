//! Layer-potential solvers for Laplace, Lamé and biharmonic boundary value
//! problems on Lipschitz boundaries, together with numerical probes of the
//! harmonic-analysis machinery behind them.
//!
//! All numerical types are generic over [`Real`] (`f32` or `f64`); the
//! `f64` aliases at the crate root are what most callers want.

pub mod bvp;
pub mod diagnostics;
pub mod error;
pub mod geometry;
pub mod kernels;
pub mod linalg;
pub mod potentials;
pub mod scalar;
pub mod solver;

pub use error::{Error, Result};
pub use scalar::Real;

/// `f64` instances of the main types.
pub mod f64 {
    pub type BoundaryMesh = crate::geometry::BoundaryMesh<f64>;
    pub type KernelSpec = crate::kernels::KernelSpec<f64>;
    pub type DensityField = crate::potentials::DensityField<f64>;
    pub type BoundaryOperator = crate::potentials::BoundaryOperator<f64>;
    pub type DirichletPair = crate::potentials::DirichletPair<f64>;
    pub type SubspaceSpec = crate::solver::SubspaceSpec<f64>;
    pub type SolveReport = crate::solver::SolveReport<f64>;
    pub type ProblemSpec<'a> = crate::bvp::ProblemSpec<'a, f64>;
    pub type Solution<'a> = crate::bvp::Solution<'a, f64>;
    pub type Weight = crate::diagnostics::Weight<f64>;
    pub type NtmfField = crate::diagnostics::NtmfField<f64>;
    pub type SurfaceCubeTree = crate::geometry::SurfaceCubeTree<f64>;
}

pub use f64::{BoundaryMesh as Mesh64, KernelSpec as KernelSpec64, Solution as Solution64, Weight as Weight64};
