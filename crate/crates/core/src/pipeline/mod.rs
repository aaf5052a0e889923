//! Phantoms, experiment configuration and the end-to-end reconstruction
//! drivers used by the command-line tool.

pub mod config;
pub mod initial_guess;
pub mod output;
pub mod phantom;
pub mod run;
pub mod simultaneous;

pub use config::{ExperimentConfig, NtdMesh, SigmaUpdate};
pub use initial_guess::{extract_initial_guess, read_shapes, write_shapes, InitialGuess};
pub use phantom::{Phantom, PHANTOM_NAMES};
pub use run::{combined_reconstruct, f1_score, CombinedOutcome, Meshes, ShapeMetrics};
pub use simultaneous::{
    parameter_residual, simultaneous_reconstruct, ParameterResidual, SimultaneousOutcome,
};
