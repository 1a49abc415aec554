//! Tensor field backends: exact jets at a point and periodic grids.

mod grid;
mod jet;

pub use grid::{grid_partial, seed_torus_grid, seed_torus_grid_with, GridState, Perturbation, Stencil, TorusSeed};
pub use jet::{
    jet_partial, random_ah_jet, random_kaehler_jet, ConstraintResiduals, Field, JetRecipe, JetRng,
    StructureJet,
};
#[cfg(test)]
pub(crate) use jet::permutations;
