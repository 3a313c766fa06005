//! Randomly generated QCQP instances over a box, a certified reference
//! solver and the experiment runner that produces per-iteration tables.

pub mod experiment;
pub mod instance;
pub mod reference;

pub use experiment::{
    csv_string, format_sci, run_experiment, run_regime, table_rows, theory_constants, write_csv,
    ExperimentConfig, Regime, RegimeResult, TableRow,
};
pub use instance::{
    generate_instance, inner_termination, qcqp_as_program, transform_equalities_to_inequalities,
    Convexity, InstanceMeta, QcqpData, QcqpInstance, CONDITION_TARGET,
};
pub use reference::{reference_solve, Reference};
