//! Crossed-grid triangulation of the unit square and P1 finite elements for
//! the Neumann and Dirichlet conductivity problems.

mod fem;
mod mesh;
pub mod sparse;

pub use fem::{
    assemble_stiffness, boundary_inner_product, boundary_integral, boundary_load, energy,
    solve_dirichlet, solve_neumann, BoundaryFunction, BoundaryRole, ConductivityField,
    DirichletSolver, NeumannSolver, PotentialField, NEUMANN_MEAN_TOL, SOLVE_TOL,
};
pub use mesh::{arclength_of, BoundaryEdge, CrossedMesh, Point, Segment};

/// Builds the crossed grid with `n` cells per side.
pub fn build_crossed_grid(n: usize) -> crate::Result<CrossedMesh> {
    CrossedMesh::new(n)
}
