pub mod data_pipeline;
pub mod descent;
pub mod functionals;
pub mod grid;
pub mod pde_solver;
pub mod sobolev;
