//! Configuration, seeded ensembles, on-disk artifacts and the verification
//! suite behind the command-line tool.

pub mod config;
pub mod run;
pub mod verify;

pub use config::{emit_config, parse_config, InitKind, RunConfig};
pub use run::{run_ensemble, run_single, EnsembleOutcome, EnsembleSpec, Experiment, InitialData, SolverChoice};
pub use verify::{run_verify, Suite, VerifyOptions, VerifyOutcome, VerifyRow};
