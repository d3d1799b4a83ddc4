//! Synthetic intraventricular flow: ellipsoidal ventricles, voxelization and
//! a projection solver for laminar incompressible flow.

mod geometry;
mod population;
mod solver;

use thiserror::Error;

pub use geometry::{
    compute_rdf, radial_distance, voxelize, CellClass, Disk, FlowDomain, GridSpec, VentricleGeometry,
    INLET_RADIUS_FRACTION, OUTLET_RADIUS_FRACTION,
};
pub use population::{
    generate_population, inlet_speeds, plan_population, simulate, PopulationConfig, PopulationPlan, RunOutput, RunSpec,
};
pub use solver::{simulate_domain, FlowSnapshot, FlowSolver, SnapshotPolicy, SolverConfig, StepReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("geometry exceeds the grid: {0}")]
    OutOfBounds(String),
    #[error("{disk} radius spans only {voxels:.2} voxels; at least 2 are needed")]
    Unresolved { disk: &'static str, voxels: f64 },
    #[error("no {0} voxels after voxelization")]
    EmptyBoundary(&'static str),
    #[error("mask is empty")]
    EmptyMask,
    #[error("invalid solver config: {0}")]
    InvalidConfig(String),
}
