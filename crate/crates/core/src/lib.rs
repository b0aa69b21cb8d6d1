//! Piecewise-constant Dirichlet boundary control of the Poisson equation.
//!
//! The boundary of a tetrahedral domain is split into `M` regions, each held
//! at a constant Dirichlet value. The regions are recovered from a target
//! state by a multi-material level-set method driven by closed-form
//! topological derivatives computed from a single adjoint solve.

pub mod control;
pub mod experiment;
pub mod fem;
pub mod levelset;
pub mod mesh;
pub mod msh;
pub mod partition;
pub mod topo;
pub mod vtk;

pub use control::{ControlProblem, ControlValues};
pub use fem::{NodalField, SolverOptions, Source};
pub use levelset::{optimize, LevelSetField, OptimState, OptimizerConfig};
pub use mesh::{generate_ellipsoid_mesh, FaceGeometry, Mesh};
pub use partition::BoundaryPartition;
pub use topo::SectorGeometry;
